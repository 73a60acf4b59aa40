"""
Blocked Gibbs updates for the clustered fPC-score hierarchy.

Every ``sample_*`` function updates an ``McmcState`` in place and takes
an optional dimension index ``k``; without it the update runs over every
eigendimension. Labels in ``c`` are 1-based (1..J).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import stats

from errors import DimensionError, NumericalError
from fda_core import CenteredDataset
from fpca import FpcaBasis
from model_config import GAMMA_PRECISION, ModelConfig

logger = logging.getLogger(__name__)

STICK_CEILING = 1.0 - 1e-12
SLICE_MAX_STEP_OUT = 100
SLICE_MAX_SHRINK = 200
SLICE_LOG_WIDTH = 1.0
LOG_SIGMA_FLOOR = -300.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class McmcState:
    """One point of the Markov chain."""

    xi: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    p_raw: np.ndarray
    p: np.ndarray
    alpha: np.ndarray
    tau: float

    @property
    def n(self) -> int:
        return int(self.xi.shape[0])

    @property
    def K(self) -> int:
        return int(self.xi.shape[1])

    @property
    def J(self) -> int:
        return int(self.mu.shape[0])

    def copy(self) -> "McmcState":
        return McmcState(
            xi=self.xi.copy(),
            c=self.c.copy(),
            mu=self.mu.copy(),
            s=self.s.copy(),
            p_raw=self.p_raw.copy(),
            p=self.p.copy(),
            alpha=self.alpha.copy(),
            tau=float(self.tau),
        )

    def first_invalid(self) -> Optional[str]:
        """Name of the first block that is non-finite or out of range."""
        for f in fields(self):
            value = np.asarray(getattr(self, f.name))
            if not np.all(np.isfinite(value)):
                return f.name
        if not self.tau > 0:
            return "tau"
        if np.any(self.s <= 0):
            return "s"
        if np.any(self.c < 1) or np.any(self.c > self.J):
            return "c"
        if np.any(self.alpha <= 0):
            return "alpha"
        return None


@dataclass(frozen=True)
class GibbsContext:
    """Data-side quantities that stay fixed over a run."""

    Y: np.ndarray
    phi: np.ndarray
    gram: np.ndarray
    y_phi: np.ndarray

    @property
    def n(self) -> int:
        return int(self.Y.shape[0])

    @property
    def T(self) -> int:
        return int(self.Y.shape[1])

    @classmethod
    def build(cls, centered: CenteredDataset, basis: FpcaBasis) -> "GibbsContext":
        if centered.T != basis.T:
            raise DimensionError(f"centred data has T={centered.T}, basis has T={basis.T}")
        Y = np.asarray(centered.values, dtype=float)
        phi = np.asarray(basis.eigenfunctions, dtype=float)
        return cls(Y=Y, phi=phi, gram=phi @ phi.T, y_phi=Y @ phi.T)

    def ssr(self, xi: np.ndarray) -> float:
        resid = self.Y - xi @ self.phi
        return float(np.sum(resid * resid))


def _dims(state: McmcState, k: Optional[int]) -> Iterable[int]:
    return range(state.K) if k is None else (k,)


def stick_weights(p_raw: np.ndarray) -> np.ndarray:
    """p_j = p'_j * prod_{l<j} (1 - p'_l), column-wise for 2-D input."""
    p_raw = np.asarray(p_raw, dtype=float)
    remaining = np.cumprod(1.0 - p_raw, axis=0)
    head = np.ones_like(p_raw[:1])
    before = np.concatenate([head, remaining[:-1]], axis=0)
    return p_raw * before


def sticks_from_weights(p: np.ndarray) -> np.ndarray:
    """Inverse of ``stick_weights`` with the last stick pinned at 1."""
    p = np.asarray(p, dtype=float)
    used = np.concatenate([np.zeros_like(p[:1]), np.cumsum(p, axis=0)[:-1]], axis=0)
    remaining = 1.0 - used
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(remaining > 1e-300, p / remaining, 1.0)
    raw = np.clip(raw, 0.0, 1.0)
    raw[-1] = 1.0
    return raw


def _draw_scale_prior(prior, rng: np.random.Generator, size: int) -> np.ndarray:
    if prior.scale_prior == GAMMA_PRECISION:
        # shape 1e-3 (vague standard prior) underflows to 0 regularly
        return np.maximum(rng.gamma(prior.z, 1.0 / prior.beta, size=size), np.finfo(float).tiny)
    sigma = prior.upper * (1.0 - rng.random(size))
    return 1.0 / sigma**2


def tau_conditional(ssr: float, n_obs: int, a_prime: float, b_prime: float) -> Tuple[float, float]:
    """(shape, rate) of the noise-precision full conditional."""
    return n_obs / 2.0 + a_prime, ssr / 2.0 + b_prime


def init_state(
    basis: FpcaBasis,
    config: ModelConfig,
    rng: np.random.Generator,
    centered: Optional[CenteredDataset] = None,
) -> McmcState:
    """
    Starting point of a chain.

    Scores start at the empirical fPCA scores and labels are uniform over
    1..J; cluster parameters, sticks and concentrations come from their
    priors. When ``centered`` is given, tau starts from its full
    conditional at the empirical scores; otherwise from its prior.
    """
    if config.K != basis.K:
        raise DimensionError(f"model has K={config.K} dimension priors, basis has K={basis.K}")
    n, K = basis.scores.shape
    J = config.effective_J

    xi = np.array(basis.scores, dtype=float, copy=True)
    c = rng.integers(1, J + 1, size=(n, K)).astype(np.int64)
    mu = np.zeros((J, K))
    s = np.empty((J, K))
    alpha = np.empty(K)
    p_raw = np.ones((J, K))
    for k, prior in enumerate(config.dim_priors):
        if not config.standard:
            mu[:, k] = prior.v + rng.standard_normal(J) / math.sqrt(prior.r)
        s[:, k] = _draw_scale_prior(prior, rng, J)
        alpha[k] = prior.Q * (1.0 - rng.random())
        if not config.standard:
            p_raw[:-1, k] = np.minimum(rng.beta(1.0, alpha[k], size=J - 1), STICK_CEILING)
    if config.standard:
        # a vague prior draw can pin every score at zero; start from the conditional
        for k, prior in enumerate(config.dim_priors):
            if prior.scale_prior == GAMMA_PRECISION:
                ss = float(np.sum(xi[:, k] ** 2))
                s[0, k] = rng.gamma(n / 2.0 + prior.z, 1.0 / (ss / 2.0 + prior.beta))
    if config.fixed_precision is not None:
        s[:] = config.fixed_precision

    if config.fixed_tau is not None:
        tau = float(config.fixed_tau)
    elif centered is not None:
        ctx = GibbsContext.build(centered, basis)
        shape, rate = tau_conditional(ctx.ssr(xi), ctx.n * ctx.T, config.a_prime, config.b_prime)
        tau = float(rng.gamma(shape, 1.0 / rate))
    else:
        tau = max(float(rng.gamma(config.a_prime, 1.0 / config.b_prime)), np.finfo(float).tiny)

    return McmcState(
        xi=xi, c=c, mu=mu, s=s, p_raw=p_raw, p=stick_weights(p_raw), alpha=alpha, tau=tau
    )


def xi_conditional(proj, tau, s, mu, norm2=1.0):
    """Mean and variance of a score given its cluster and the other components."""
    precision = tau * norm2 + s
    return (tau * proj + s * mu) / precision, 1.0 / precision


def sample_xi(state: McmcState, ctx: GibbsContext, rng: np.random.Generator, k: Optional[int] = None) -> None:
    for d in _dims(state, k):
        j = state.c[:, d] - 1
        s_i = state.s[j, d]
        mu_i = state.mu[j, d]
        others = state.xi @ ctx.gram[:, d] - state.xi[:, d] * ctx.gram[d, d]
        proj = ctx.y_phi[:, d] - others
        mean, var = xi_conditional(proj, state.tau, s_i, mu_i, ctx.gram[d, d])
        state.xi[:, d] = mean + np.sqrt(var) * rng.standard_normal(state.n)


def sample_tau(state: McmcState, ctx: GibbsContext, config: ModelConfig, rng: np.random.Generator) -> None:
    if config.fixed_tau is not None:
        state.tau = float(config.fixed_tau)
        return
    shape, rate = tau_conditional(ctx.ssr(state.xi), ctx.n * ctx.T, config.a_prime, config.b_prime)
    state.tau = float(rng.gamma(shape, 1.0 / rate))


def cluster_counts(c_k: np.ndarray, J: int) -> np.ndarray:
    return np.bincount(c_k - 1, minlength=J)


def mu_conditional(n_j, sum_xi, s, r, v=0.0):
    """Mean and variance of a cluster mean; n_j = 0 gives the prior."""
    precision = n_j * s + r
    return (s * sum_xi + v * r) / precision, 1.0 / precision


def sample_mu(state: McmcState, config: ModelConfig, rng: np.random.Generator, k: Optional[int] = None) -> None:
    if config.standard:
        return
    J = state.J
    for d in _dims(state, k):
        prior = config.dim_priors[d]
        labels = state.c[:, d] - 1
        counts = np.bincount(labels, minlength=J)
        sums = np.bincount(labels, weights=state.xi[:, d], minlength=J)
        mean, var = mu_conditional(counts, sums, state.s[:, d], prior.r, prior.v)
        state.mu[:, d] = mean + np.sqrt(var) * rng.standard_normal(J)


def _log_sigma_density(log_sigma: float, count: int, ss: float, log_upper: float) -> float:
    """Log-density of log(sigma) (Jacobian included) on (LOG_SIGMA_FLOOR, log_upper]."""
    if not LOG_SIGMA_FLOOR < log_sigma <= log_upper:
        return -math.inf
    spread = 0.0 if ss == 0.0 else 0.5 * ss * math.exp(min(-2.0 * log_sigma, 700.0))
    return (1 - count) * log_sigma - spread


def slice_sigma(
    current: float,
    count: int,
    ss: float,
    upper: float,
    rng: np.random.Generator,
    width: float = SLICE_LOG_WIDTH,
) -> float:
    """
    One slice-sampling move for a cluster SD with density
    sigma**-count * exp(-ss / (2 sigma**2)) on (0, upper].

    The slice is taken on log(sigma), so a singleton cluster whose SD has
    shrunk far below ``upper`` can return to the bulk in one move.
    """
    log_upper = math.log(upper)
    x0 = min(max(math.log(max(float(current), np.finfo(float).tiny)), LOG_SIGMA_FLOOR + 1.0), log_upper)
    log_y = _log_sigma_density(x0, count, ss, log_upper) - rng.exponential()

    left = x0 - width * rng.random()
    right = left + width
    steps = 0
    while _log_sigma_density(left, count, ss, log_upper) > log_y and steps < SLICE_MAX_STEP_OUT:
        left -= width
        steps += 1
    steps = 0
    while right < log_upper and _log_sigma_density(right, count, ss, log_upper) > log_y and steps < SLICE_MAX_STEP_OUT:
        right += width
        steps += 1
    left, right = max(left, LOG_SIGMA_FLOOR), min(right, log_upper)

    for _ in range(SLICE_MAX_SHRINK):
        x1 = left + (right - left) * rng.random()
        if _log_sigma_density(x1, count, ss, log_upper) > log_y:
            return math.exp(x1)
        if x1 < x0:
            left = x1
        else:
            right = x1
    raise NumericalError(
        f"slice sampler for a cluster SD did not converge after {SLICE_MAX_SHRINK} shrinks",
        parameter="s",
    )


def sample_scale(state: McmcState, config: ModelConfig, rng: np.random.Generator, k: Optional[int] = None) -> None:
    if config.fixed_precision is not None:
        state.s[:] = config.fixed_precision
        return
    J = state.J
    for d in _dims(state, k):
        prior = config.dim_priors[d]
        labels = state.c[:, d] - 1
        dev = state.xi[:, d] - state.mu[labels, d]
        counts = np.bincount(labels, minlength=J)
        ss = np.bincount(labels, weights=dev * dev, minlength=J)
        if prior.scale_prior == GAMMA_PRECISION:
            shape = counts / 2.0 + prior.z
            rate = ss / 2.0 + prior.beta
            state.s[:, d] = rng.gamma(shape, 1.0 / rate)
            continue
        for j in range(J):
            if counts[j] == 0:
                sigma = prior.upper * (1.0 - rng.random())
            else:
                sigma = slice_sigma(1.0 / math.sqrt(state.s[j, d]), int(counts[j]), float(ss[j]), prior.upper, rng)
            state.s[j, d] = 1.0 / (sigma * sigma)


def label_log_weights(xi_k: np.ndarray, mu_k: np.ndarray, s_k: np.ndarray, p_k: np.ndarray) -> np.ndarray:
    """n x J unnormalised log-probabilities of each label."""
    with np.errstate(divide="ignore"):
        log_p = np.log(p_k)
    diff = xi_k[:, None] - mu_k[None, :]
    return log_p[None, :] + 0.5 * np.log(s_k)[None, :] - 0.5 * s_k[None, :] * diff * diff


def categorical_from_logits(log_w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """0-based draws, one per row, by inversion after max-subtraction."""
    top = np.max(log_w, axis=1)
    if not np.all(np.isfinite(top)):
        row = int(np.argmax(~np.isfinite(top)))
        raise NumericalError(f"all label log-weights are -inf for curve {row + 1}", parameter="c")
    probs = np.exp(log_w - top[:, None])
    cum = np.cumsum(probs, axis=1)
    u = rng.random(log_w.shape[0]) * cum[:, -1]
    draws = np.sum(cum <= u[:, None], axis=1)
    return np.minimum(draws, log_w.shape[1] - 1)


def sample_c(state: McmcState, config: ModelConfig, rng: np.random.Generator, k: Optional[int] = None) -> None:
    if config.standard:
        return
    for d in _dims(state, k):
        log_w = label_log_weights(state.xi[:, d], state.mu[:, d], state.s[:, d], state.p[:, d])
        state.c[:, d] = categorical_from_logits(log_w, rng) + 1


def sample_sticks(state: McmcState, config: ModelConfig, rng: np.random.Generator, k: Optional[int] = None) -> None:
    if config.standard:
        return
    J = state.J
    for d in _dims(state, k):
        counts = cluster_counts(state.c[:, d], J)
        tail = counts.sum() - np.cumsum(counts)
        a = counts[:-1] + 1.0
        b = state.alpha[d] + tail[:-1]
        raw = np.minimum(rng.beta(a, b), STICK_CEILING)
        state.p_raw[:-1, d] = raw
        state.p_raw[-1, d] = 1.0
        state.p[:, d] = stick_weights(state.p_raw[:, d])


def alpha_log_density(alpha, J: int, rate: float):
    """Unnormalised log-density alpha**J * exp(-alpha * rate)."""
    alpha = np.asarray(alpha, dtype=float)
    return J * np.log(alpha) - alpha * rate


def truncated_gamma(
    shape: float,
    rate: float,
    upper: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
):
    """Gamma(shape, rate) restricted to (0, upper], by inverse CDF.

    A zero or non-finite rate gives Uniform(0, upper].
    """
    u = 1.0 - rng.random(size)
    if not rate > 0 or not math.isfinite(rate):
        return upper * u
    dist = stats.gamma(shape, scale=1.0 / rate)
    top = float(dist.cdf(upper))
    # deep left tail: density is ~ alpha**(shape - 1) on (0, upper]
    fallback = upper * u ** (1.0 / shape)
    if top <= 0.0:
        return fallback
    draw = dist.ppf(u * top)
    ok = (draw > 0.0) & (draw <= upper)
    out = np.where(ok, draw, fallback)
    return float(out) if size is None else out


def sample_alpha(state: McmcState, config: ModelConfig, rng: np.random.Generator, k: Optional[int] = None) -> None:
    if config.standard:
        return
    J = int(config.J)
    for d in _dims(state, k):
        rate = float(-np.sum(np.log1p(-state.p_raw[:-1, d])))
        state.alpha[d] = truncated_gamma(J + 1.0, rate, config.dim_priors[d].Q, rng)


def relabel(snapshot: McmcState, rule: str = "by_mean") -> McmcState:
    """
    Copy of ``snapshot`` with clusters of every dimension reordered.

    Occupied clusters come first, ascending by mean (``by_mean``) or by
    weight (``by_weight``); empty clusters follow in their current order.
    """
    out = snapshot.copy()
    J = out.J
    if J == 1:
        return out
    for d in range(out.K):
        counts = cluster_counts(out.c[:, d], J)
        key = out.mu[:, d] if rule == "by_mean" else out.p[:, d]
        occupied = np.flatnonzero(counts > 0)
        empty = np.flatnonzero(counts == 0)
        order = np.concatenate([occupied[np.argsort(key[occupied], kind="stable")], empty])
        if np.array_equal(order, np.arange(J)):
            continue
        inverse = np.empty(J, dtype=np.int64)
        inverse[order] = np.arange(J)
        out.mu[:, d] = out.mu[order, d]
        out.s[:, d] = out.s[order, d]
        out.p[:, d] = out.p[order, d]
        out.p_raw[:, d] = sticks_from_weights(out.p[:, d])
        out.c[:, d] = inverse[out.c[:, d] - 1] + 1
    return out


def log_likelihood(state: McmcState, ctx: GibbsContext) -> float:
    """Gaussian log-likelihood of the centred curves given scores and tau."""
    n_obs = ctx.n * ctx.T
    return 0.5 * n_obs * (math.log(state.tau) - LOG_2PI) - 0.5 * state.tau * ctx.ssr(state.xi)


def sweep(state: McmcState, ctx: GibbsContext, config: ModelConfig, rng: np.random.Generator) -> None:
    """One full sweep: scores, noise precision, then each dimension's mixture."""
    sample_xi(state, ctx, rng)
    sample_tau(state, ctx, config, rng)
    for k in range(state.K):
        sample_mu(state, config, rng, k)
        sample_scale(state, config, rng, k)
        sample_c(state, config, rng, k)
        sample_sticks(state, config, rng, k)
        sample_alpha(state, config, rng, k)
