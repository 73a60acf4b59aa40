#!/usr/bin/env python3
"""
MCMC driver

Runs independent Gibbs chains on a worker pool, keeps relabeled, thinned
snapshots and persists them as a draws directory (``manifest.json`` plus
one ``.npy`` file per parameter block per chain).
"""

from __future__ import annotations

import hashlib
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from errors import DimensionError, NumericalError, ValidationError
from fda_core import CenteredDataset
from fpca import FpcaBasis
from gibbs import GibbsContext, McmcState, init_state, log_likelihood, relabel, sweep
from model_config import McmcConfig, ModelConfig
from settings import TRACE_LEVEL, canonical_json, clamp_threads, git_blob_hash, read_json, write_json

logger = logging.getLogger(__name__)

DRAWS_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
PARAMETERS = ("xi", "c", "mu", "s", "p_raw", "p", "alpha", "tau", "loglik")
STATE_BLOCKS = ("xi", "c", "mu", "s", "p_raw", "p", "alpha", "tau")


@dataclass
class PosteriorDraws:
    """Stored snapshots of every chain, one array per parameter block.

    ``chains[i][name]`` has the snapshot index as its leading axis.
    """

    chains: List[Dict[str, np.ndarray]]
    model: ModelConfig
    mcmc: McmcConfig
    wall_clock_seconds: float = 0.0
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.chains:
            raise ValidationError("posterior draws need at least one chain")
        sizes = {int(chain["tau"].shape[0]) for chain in self.chains}
        if len(sizes) != 1:
            raise ValidationError(f"chains hold different snapshot counts: {sorted(sizes)}")

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def n_snapshots(self) -> int:
        return int(self.chains[0]["tau"].shape[0])

    @property
    def n(self) -> int:
        return int(self.chains[0]["xi"].shape[1])

    @property
    def K(self) -> int:
        return int(self.chains[0]["xi"].shape[2])

    @property
    def J(self) -> int:
        return int(self.chains[0]["mu"].shape[1])

    def stacked(self, name: str) -> np.ndarray:
        """(chains, snapshots, ...) array of one parameter block."""
        if name not in PARAMETERS:
            raise ValidationError(f"unknown parameter block {name!r}")
        return np.stack([chain[name] for chain in self.chains])

    def pooled(self, name: str) -> np.ndarray:
        """Snapshots of all chains concatenated along the first axis."""
        return np.concatenate([chain[name] for chain in self.chains], axis=0)

    def labels(self, k: int) -> np.ndarray:
        """(total snapshots, n) label matrix for dimension ``k``."""
        if not 0 <= k < self.K:
            raise DimensionError(f"dimension {k + 1} outside 1..{self.K}")
        return self.pooled("c")[:, :, k]

    def state(self, chain: int, index: int) -> McmcState:
        blocks = {name: self.chains[chain][name][index] for name in STATE_BLOCKS}
        blocks["tau"] = float(blocks["tau"])
        return McmcState(**{k: (np.array(v) if k != "tau" else v) for k, v in blocks.items()})

    def content_hash(self) -> str:
        """SHA-256 over every stored array; independent of wall-clock."""
        digest = hashlib.sha256()
        for index, chain in enumerate(self.chains):
            for name in PARAMETERS:
                arr = np.ascontiguousarray(chain[name])
                digest.update(f"{index}:{name}:{arr.dtype.str}:{arr.shape}".encode("utf-8"))
                digest.update(arr.tobytes())
        return digest.hexdigest()

    def config_hash(self) -> str:
        return git_blob_hash(canonical_json({"model": self.model.to_dict(), "mcmc": self.mcmc.to_dict()}))

    def manifest(self) -> Dict[str, Any]:
        return {
            "schema_version": DRAWS_SCHEMA_VERSION,
            "model": self.model.to_dict(),
            "mcmc": self.mcmc.to_dict(),
            "seed": int(self.mcmc.seed),
            "dims": {"n": self.n, "K": self.K, "J": self.J},
            "thinning": int(self.mcmc.thinning),
            "snapshots_per_chain": [int(chain["tau"].shape[0]) for chain in self.chains],
            "parameters": list(PARAMETERS),
            "config_hash": self.config_hash(),
            "content_hash": self.content_hash(),
            "wall_clock_seconds": round(float(self.wall_clock_seconds), 3),
            **self.extra,
        }

    def save(self, directory: str | os.PathLike) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for index, chain in enumerate(self.chains):
            for name in PARAMETERS:
                np.save(directory / f"chain{index}_{name}.npy", chain[name], allow_pickle=False)
        write_json(directory / MANIFEST_NAME, self.manifest())
        logger.info("Saved %s chains x %s snapshots to %s", self.n_chains, self.n_snapshots, directory)
        return directory

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "PosteriorDraws":
        directory = Path(directory)
        manifest_path = directory / MANIFEST_NAME
        if not manifest_path.exists():
            raise FileNotFoundError(f"no draws manifest in {directory}")
        manifest = read_json(manifest_path)
        version = int(manifest.get("schema_version", 0))
        if version != DRAWS_SCHEMA_VERSION:
            raise ValidationError(f"unsupported draws schema version {version}")
        chains = []
        for index in range(len(manifest["snapshots_per_chain"])):
            chain = {}
            for name in PARAMETERS:
                path = directory / f"chain{index}_{name}.npy"
                if not path.exists():
                    raise FileNotFoundError(f"missing draws file {path}")
                chain[name] = np.load(path, allow_pickle=False)
            chains.append(chain)
        known = {
            "schema_version", "model", "mcmc", "seed", "dims", "thinning", "snapshots_per_chain",
            "parameters", "config_hash", "content_hash", "wall_clock_seconds",
        }
        draws = cls(
            chains=chains,
            model=ModelConfig.from_dict(manifest["model"]),
            mcmc=McmcConfig.from_dict(manifest["mcmc"]),
            wall_clock_seconds=float(manifest.get("wall_clock_seconds", 0.0)),
            extra={k: v for k, v in manifest.items() if k not in known},
        )
        stored = manifest.get("content_hash")
        if stored and stored != draws.content_hash():
            logger.warning("Draws in %s do not match their manifest hash", directory)
        return draws


def _empty_chain(state: McmcState, count: int) -> Dict[str, np.ndarray]:
    return {
        "xi": np.empty((count,) + state.xi.shape),
        "c": np.empty((count,) + state.c.shape, dtype=np.int32),
        "mu": np.empty((count,) + state.mu.shape),
        "s": np.empty((count,) + state.s.shape),
        "p_raw": np.empty((count,) + state.p_raw.shape),
        "p": np.empty((count,) + state.p.shape),
        "alpha": np.empty((count,) + state.alpha.shape),
        "tau": np.empty(count),
        "loglik": np.empty(count),
    }


def run_chain(
    chain_index: int,
    rng: np.random.Generator,
    ctx: GibbsContext,
    centered: CenteredDataset,
    basis: FpcaBasis,
    model: ModelConfig,
    mcmc: McmcConfig,
    progress: Optional[Callable[[int, int, int], None]] = None,
) -> Dict[str, np.ndarray]:
    """Run one chain and return its stored snapshots."""
    state = init_state(basis, model, rng, centered)
    total = mcmc.burn_in + mcmc.iterations
    out = _empty_chain(state, mcmc.snapshots)
    tick = max(1, total // 10)
    stored = 0
    logger.info("Chain %s: %s sweeps (%s burn-in)", chain_index, total, mcmc.burn_in)

    for it in range(1, total + 1):
        try:
            sweep(state, ctx, model, rng)
        except NumericalError as exc:
            if exc.sweep is not None:
                raise
            raise NumericalError(f"chain {chain_index}: {exc.message}", sweep=it, parameter=exc.parameter) from exc
        bad = state.first_invalid()
        if bad:
            raise NumericalError(f"chain {chain_index}: non-finite or invalid state", sweep=it, parameter=bad)

        if logger.isEnabledFor(TRACE_LEVEL):
            occupied = [int(np.unique(state.c[:, k]).size) for k in range(state.K)]
            logger.log(TRACE_LEVEL, "chain %s sweep %s tau=%.6g J+=%s", chain_index, it, state.tau, occupied)
        if it > mcmc.burn_in and (it - mcmc.burn_in) % mcmc.thinning == 0:
            snap = relabel(state, model.relabel)
            for name in STATE_BLOCKS:
                out[name][stored] = getattr(snap, name)
            out["loglik"][stored] = log_likelihood(snap, ctx)
            stored += 1
        if it % tick == 0:
            logger.debug("Chain %s: %s/%s sweeps", chain_index, it, total)
            if progress:
                progress(chain_index, it, total)
    return out


def run(
    centered: CenteredDataset,
    basis: FpcaBasis,
    model: ModelConfig,
    mcmc: McmcConfig,
    threads: Optional[int] = None,
    progress: Optional[Callable[[int, int, int], None]] = None,
) -> PosteriorDraws:
    """
    Sample the posterior with ``mcmc.chains`` independent chains.

    Args:
        centered: centred smoothed curves the basis was computed from
        basis: fixed fPCA basis
        model: resolved model configuration
        mcmc: sweep counts and master seed
        threads: worker-pool size; PCLFPCA_THREADS when None
        progress: optional callback(chain, sweep, total)

    Returns:
        PosteriorDraws with chains in index order.
    """
    if centered.n != basis.scores.shape[0]:
        raise DimensionError(f"basis holds scores for {basis.scores.shape[0]} curves, data has {centered.n}")
    ctx = GibbsContext.build(centered, basis)
    streams = np.random.SeedSequence(int(mcmc.seed)).spawn(mcmc.chains)
    workers = min(mcmc.chains, clamp_threads(threads))
    chains: List[Optional[Dict[str, np.ndarray]]] = [None] * mcmc.chains
    started = time.perf_counter()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(
                run_chain, idx, np.random.default_rng(stream), ctx, centered, basis, model, mcmc, progress
            ): idx
            for idx, stream in enumerate(streams)
        }
        for future in as_completed(futures):
            idx = futures[future]
            chains[idx] = future.result()
            logger.info("Chain %s finished", idx)

    elapsed = time.perf_counter() - started
    logger.info("Sampling finished in %.1fs (%s chains, %s workers)", elapsed, mcmc.chains, workers)
    return PosteriorDraws(chains=[c for c in chains if c is not None], model=model, mcmc=mcmc, wall_clock_seconds=elapsed)
