"""Model and MCMC configuration.

``ModelOptions`` is what a user writes in a run config; it is resolved
against the fPCA eigenvalues into a fully explicit ``ModelConfig`` (one
``DimensionPrior`` per eigendimension), which is what manifests record.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import ValidationError

logger = logging.getLogger(__name__)

GAMMA_PRECISION = "gamma_precision"
UNIFORM_SIGMA = "uniform_sigma"
SCALE_PRIORS = (GAMMA_PRECISION, UNIFORM_SIGMA)

MODE_PCL = "pcl"
MODE_STANDARD = "standard_bfpca"
MODES = (MODE_PCL, MODE_STANDARD)

RELABEL_RULES = ("by_mean", "by_weight")

DEFAULT_J = 20
DEFAULT_Q_FIRST = 10.0
DEFAULT_Q_REST = 5.0
DEFAULT_NOISE_PRIOR = 1e-3
# vague Gamma(shape, rate) precision prior of the one-cluster model
DEFAULT_STANDARD_PRECISION = 1e-3

DESK_SCALE = {"burn_in": 5000, "iterations": 10000, "thinning": 5, "chains": 2}
FULL_SCALE = {"burn_in": 100000, "iterations": 100000, "thinning": 5, "chains": 3}


def _positive(name: str, value: Any) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(number) or number <= 0:
        raise ValidationError(f"{name} must be positive and finite, got {value!r}")
    return number


def _positive_int(name: str, value: Any) -> int:
    if isinstance(value, bool):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    try:
        number = int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be an integer, got {value!r}") from None
    if number != value and not (isinstance(value, str) and str(number) == value.strip()):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if number <= 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")
    return number


def _reject_unknown(section: str, data: Dict[str, Any], allowed: Iterable[str]) -> None:
    if not isinstance(data, dict):
        raise ValidationError(f"{section} must be an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown {section} keys: {unknown}")


@dataclass(frozen=True)
class DimensionPrior:
    """Hyperparameters of one eigendimension's mixture.

    ``beta`` is the rate of the Gamma(z, beta) precision prior and is used
    with ``gamma_precision``; ``upper`` bounds the Uniform(0, upper]
    prior on the cluster SD and is used with ``uniform_sigma``.
    """

    r: float
    Q: float
    scale_prior: str = GAMMA_PRECISION
    beta: Optional[float] = None
    upper: Optional[float] = None
    v: float = 0.0
    z: float = 1.0

    def __post_init__(self):
        _positive("r", self.r)
        _positive("Q", self.Q)
        _positive("z", self.z)
        if self.scale_prior not in SCALE_PRIORS:
            raise ValidationError(f"scale_prior must be one of {SCALE_PRIORS}, got {self.scale_prior!r}")
        if self.scale_prior == GAMMA_PRECISION:
            _positive("beta", self.beta)
        else:
            _positive("upper", self.upper)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DimensionPrior":
        _reject_unknown("dimension prior", data, ("r", "Q", "scale_prior", "beta", "upper", "v", "z"))
        return cls(**data)


@dataclass(frozen=True)
class ModelConfig:
    J: int
    dim_priors: Tuple[DimensionPrior, ...]
    a_prime: float = DEFAULT_NOISE_PRIOR
    b_prime: float = DEFAULT_NOISE_PRIOR
    mode: str = MODE_PCL
    relabel: str = "by_mean"
    fixed_tau: Optional[float] = None
    fixed_precision: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "dim_priors", tuple(self.dim_priors))
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.relabel not in RELABEL_RULES:
            raise ValidationError(f"relabel must be one of {RELABEL_RULES}, got {self.relabel!r}")
        J = _positive_int("J", self.J)
        if self.mode == MODE_PCL and J < 2:
            raise ValidationError("J must be at least 2 in pcl mode")
        if not self.dim_priors:
            raise ValidationError("at least one dimension prior is required")
        _positive("a_prime", self.a_prime)
        _positive("b_prime", self.b_prime)
        if self.fixed_tau is not None:
            _positive("fixed_tau", self.fixed_tau)
        if self.fixed_precision is not None:
            _positive("fixed_precision", self.fixed_precision)

    @property
    def K(self) -> int:
        return len(self.dim_priors)

    @property
    def standard(self) -> bool:
        return self.mode == MODE_STANDARD

    @property
    def effective_J(self) -> int:
        """Clusters the sampler actually carries (1 for the standard model)."""
        return 1 if self.standard else int(self.J)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "J": int(self.J),
            "K": self.K,
            "dim_priors": [p.to_dict() for p in self.dim_priors],
            "a_prime": float(self.a_prime),
            "b_prime": float(self.b_prime),
            "mode": self.mode,
            "relabel": self.relabel,
            "fixed_tau": self.fixed_tau,
            "fixed_precision": self.fixed_precision,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        _reject_unknown(
            "model",
            data,
            ("J", "K", "dim_priors", "a_prime", "b_prime", "mode", "relabel", "fixed_tau", "fixed_precision"),
        )
        payload = dict(data)
        declared_k = payload.pop("K", None)
        priors = tuple(DimensionPrior.from_dict(p) for p in payload.pop("dim_priors", []))
        config = cls(dim_priors=priors, **payload)
        if declared_k is not None and int(declared_k) != config.K:
            raise ValidationError(f"model K={declared_k} but {config.K} dimension priors given")
        return config


@dataclass(frozen=True)
class McmcConfig:
    burn_in: int = DESK_SCALE["burn_in"]
    iterations: int = DESK_SCALE["iterations"]
    thinning: int = DESK_SCALE["thinning"]
    chains: int = DESK_SCALE["chains"]
    seed: int = 0

    def __post_init__(self):
        _positive_int("burn_in", self.burn_in)
        _positive_int("iterations", self.iterations)
        _positive_int("thinning", self.thinning)
        _positive_int("chains", self.chains)
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ValidationError(f"seed must be an integer, got {self.seed!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a non-negative 64-bit integer")
        if self.iterations % self.thinning:
            raise ValidationError(
                f"iterations ({self.iterations}) must be divisible by thinning ({self.thinning})"
            )

    @property
    def snapshots(self) -> int:
        return self.iterations // self.thinning

    @classmethod
    def preset(cls, full_scale: bool = False, seed: int = 0) -> "McmcConfig":
        return cls(seed=seed, **(FULL_SCALE if full_scale else DESK_SCALE))

    def to_dict(self) -> Dict[str, Any]:
        return {k: int(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "McmcConfig":
        _reject_unknown("mcmc", data, ("burn_in", "iterations", "thinning", "chains", "seed"))
        return cls(**data)


@dataclass(frozen=True)
class ModelOptions:
    """User-facing model settings, resolved against eigenvalues by ``resolve``.

    ``scale_priors`` is ``mixed`` (gamma precision for the first
    eigendimension, uniform SD for the rest), ``gamma`` or ``uniform``.
    ``spread`` multiplies the eigenvalue inside beta and upper**2.
    """

    J: int = DEFAULT_J
    mode: str = MODE_PCL
    relabel: str = "by_mean"
    scale_priors: str = "mixed"
    spread: float = 1.0
    Q: Optional[Tuple[float, ...]] = None
    r: Optional[Tuple[float, ...]] = None
    a_prime: float = DEFAULT_NOISE_PRIOR
    b_prime: float = DEFAULT_NOISE_PRIOR
    fixed_tau: Optional[float] = None
    fixed_precision: Optional[float] = None

    KEYS = (
        "J", "mode", "relabel", "scale_priors", "spread", "Q", "r",
        "a_prime", "b_prime", "fixed_tau", "fixed_precision",
    )

    def __post_init__(self):
        if self.scale_priors not in ("mixed", "gamma", "uniform"):
            raise ValidationError(f"scale_priors must be mixed, gamma or uniform, got {self.scale_priors!r}")
        _positive("spread", self.spread)
        for name in ("Q", "r"):
            value = getattr(self, name)
            if value is not None:
                if isinstance(value, (int, float)):
                    value = (value,)
                object.__setattr__(self, name, tuple(_positive(name, v) for v in value))

    def with_mode(self, mode: str) -> "ModelOptions":
        data = self.to_dict()
        data["mode"] = mode
        return ModelOptions.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        out = {key: getattr(self, key) for key in self.KEYS}
        for key in ("Q", "r"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ModelOptions":
        data = dict(data or {})
        _reject_unknown("model", data, cls.KEYS)
        return cls(**data)

    def resolve(self, eigenvalues: Sequence[float]) -> ModelConfig:
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        if eigenvalues.size == 0 or np.any(eigenvalues <= 0):
            raise ValidationError("eigenvalues must be positive to derive default priors")
        priors: List[DimensionPrior] = []
        for k, lam in enumerate(eigenvalues):
            family = {
                "gamma": GAMMA_PRECISION,
                "uniform": UNIFORM_SIGMA,
                "mixed": GAMMA_PRECISION if k == 0 else UNIFORM_SIGMA,
            }[self.scale_priors]
            q = _pick(self.Q, k, DEFAULT_Q_FIRST if k == 0 else DEFAULT_Q_REST)
            r = _pick(self.r, k, 1.0 / lam)
            scaled = self.spread * float(lam)
            if self.mode == MODE_STANDARD:
                priors.append(
                    DimensionPrior(
                        r=r,
                        Q=q,
                        scale_prior=GAMMA_PRECISION,
                        beta=DEFAULT_STANDARD_PRECISION,
                        z=DEFAULT_STANDARD_PRECISION,
                    )
                )
                continue
            priors.append(
                DimensionPrior(
                    r=r,
                    Q=q,
                    scale_prior=family,
                    beta=scaled if family == GAMMA_PRECISION else None,
                    upper=math.sqrt(scaled) if family == UNIFORM_SIGMA else None,
                )
            )
        config = ModelConfig(
            J=self.J,
            dim_priors=tuple(priors),
            a_prime=self.a_prime,
            b_prime=self.b_prime,
            mode=self.mode,
            relabel=self.relabel,
            fixed_tau=self.fixed_tau,
            fixed_precision=self.fixed_precision,
        )
        logger.debug("Resolved model config: %s", config.to_dict())
        return config


def _pick(values: Optional[Tuple[float, ...]], k: int, default: float) -> float:
    """Per-dimension override; the last entry repeats for higher dimensions."""
    if not values:
        return float(default)
    return float(values[min(k, len(values) - 1)])


def default_model(eigenvalues: Sequence[float], **overrides: Any) -> ModelConfig:
    return ModelOptions.from_dict(overrides).resolve(eigenvalues)
