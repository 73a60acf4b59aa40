#!/usr/bin/env python3
"""
PCl-fPCA toolkit command-line entry point.

Clustered Bayesian functional PCA: smooth and decompose curve ensembles,
sample the posterior of per-dimension score mixtures and report clustering
diagnostics, reconstructions and accuracy metrics. The read-only results
API lives in webapp.py.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import diagnostics
import metrics
import run_store
from errors import PclFpcaError, ValidationError, exit_code_for
from fda_core import FunctionalDataset, center, load_dataset, save_dataset
from fpca import BSplineBasis, FpcaBasis, RetainRule, decompose, smooth
from model_config import MODE_PCL, MODE_STANDARD, McmcConfig, ModelOptions
from reconstruction import ReconstructionSummary, cluster_mean_curves, frequentist_reconstruction, reconstruct
from sampler import PosteriorDraws, run
from settings import (
    canonical_json,
    clamp_threads,
    configure_logging,
    git_blob_hash,
    read_json,
    resolve_output,
    write_json,
)
from simulation import DgpSpec, SimulatedDataset, generate, replicate_dir, replicate_seed, write_replicates

logger = logging.getLogger("pcl_fpca")

BASELINES = ("standard_bfpca", "frequentist_fpca")
STANDARD_DIR = "baseline-standard_bfpca"
CONFIG_NAME = "config.json"


@dataclass(frozen=True)
class RunConfig:
    """Everything ``fit`` needs; recorded verbatim (with its hash) in the run directory."""

    input: Optional[str] = None
    simulate: Optional[DgpSpec] = None
    input_format: Dict[str, Optional[bool]] = field(default_factory=lambda: {"header": None, "labels": None})
    smoothing: Dict[str, Any] = field(default_factory=lambda: {"n_basis": None, "order": 4})
    retain: RetainRule = RetainRule()
    model: ModelOptions = ModelOptions()
    mcmc: McmcConfig = McmcConfig()
    output: Optional[str] = None
    baselines: Tuple[str, ...] = ()

    KEYS = ("input", "input_format", "simulate", "smoothing", "retain", "model", "mcmc", "output", "baselines")

    def __post_init__(self):
        if (self.input is None) == (self.simulate is None):
            raise ValidationError("exactly one of input or simulate must be given")
        unknown = set(self.smoothing) - {"n_basis", "order"}
        if unknown:
            raise ValidationError(f"unknown smoothing keys: {sorted(unknown)}")
        for key, value in self.input_format.items():
            if key not in ("header", "labels"):
                raise ValidationError(f"unknown input_format key: {key!r}")
            if value is not None and not isinstance(value, bool):
                raise ValidationError(f"input_format.{key} must be true, false or null, got {value!r}")
        bad = [b for b in self.baselines if b not in BASELINES]
        if bad:
            raise ValidationError(f"unknown baselines {bad}; choose from {BASELINES}")
        object.__setattr__(self, "baselines", tuple(self.baselines))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input": self.input,
            "input_format": dict(self.input_format),
            "simulate": self.simulate.to_dict() if self.simulate else None,
            "smoothing": dict(self.smoothing),
            "retain": self.retain.to_dict(),
            "model": self.model.to_dict(),
            "mcmc": self.mcmc.to_dict(),
            "output": self.output,
            "baselines": list(self.baselines),
        }

    def content_hash(self) -> str:
        return git_blob_hash(canonical_json(self.to_dict()))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValidationError("run config must be a JSON object")
        unknown = sorted(set(data) - set(cls.KEYS))
        if unknown:
            raise ValidationError(f"unknown run config keys: {unknown}")
        smoothing = {"n_basis": None, "order": 4}
        smoothing.update(data.get("smoothing") or {})
        input_format = {"header": None, "labels": None}
        input_format.update(data.get("input_format") or {})
        return cls(
            input=data.get("input"),
            input_format=input_format,
            simulate=DgpSpec.from_dict(data["simulate"]) if data.get("simulate") else None,
            smoothing=smoothing,
            retain=RetainRule.from_dict(data["retain"]) if data.get("retain") else RetainRule(),
            model=ModelOptions.from_dict(data.get("model")),
            mcmc=McmcConfig.from_dict(data["mcmc"]) if data.get("mcmc") else McmcConfig(),
            output=data.get("output"),
            baselines=tuple(data.get("baselines") or ()),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            return cls.from_dict(read_json(path))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# Pipeline steps (shared by the commands and the study harness)
# ---------------------------------------------------------------------------


def _dataset_for(config: RunConfig, out_dir: Path) -> FunctionalDataset:
    if config.input is not None:
        return load_dataset(config.input, **config.input_format)
    simulated = generate(config.simulate)
    simulated.save(out_dir / "data")
    return simulated.observed


def fit_run(
    config: RunConfig,
    out_dir: Path,
    threads: Optional[int] = None,
    dataset: Optional[FunctionalDataset] = None,
) -> Dict[str, Any]:
    """Smooth, decompose, sample and persist one run (plus requested baselines)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = dataset if dataset is not None else _dataset_for(config, out_dir)
    spline = BSplineBasis.build(dataset.grid, n_basis=config.smoothing.get("n_basis"), order=int(config.smoothing.get("order", 4)))
    smoothed = smooth(dataset, spline)
    centred = center(smoothed)
    basis = decompose(
        centred,
        config.retain,
        provenance={"n_basis": spline.n_basis, "order": spline.order, "n": dataset.n, "T": dataset.T},
    )
    basis.save(out_dir / "basis.json")
    save_dataset(smoothed, out_dir / "smoothed.csv")
    config_hash = config.content_hash()
    write_json(out_dir / CONFIG_NAME, {"config": config.to_dict(), "config_hash": config_hash})

    summary: Dict[str, Any] = {"K": basis.K, "config_hash": config_hash, "runs": {}}
    modes = [config.model.mode]
    if "standard_bfpca" in config.baselines and config.model.mode != MODE_STANDARD:
        modes.append(MODE_STANDARD)
    for mode in modes:
        model = config.model.with_mode(mode).resolve(basis.eigenvalues)
        target = out_dir if mode == config.model.mode else out_dir / STANDARD_DIR
        draws = run(centred, basis, model, config.mcmc, threads=threads)
        draws.extra.update({"basis": os.path.relpath(out_dir / "basis.json", target / "draws"), "run_config_hash": config_hash})
        draws.save(target / "draws")
        if target != out_dir:
            basis.save(target / "basis.json")
        summary["runs"][mode] = {"path": str(target), "content_hash": draws.content_hash()}
        logger.info("Fitted %s model (J=%s, K=%s) into %s", mode, model.J, model.K, target)
    return summary


def load_run(run_dir: Path) -> Tuple[FpcaBasis, PosteriorDraws]:
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    basis_path = run_dir / "basis.json"
    if not basis_path.exists():
        raise FileNotFoundError(f"no basis.json in {run_dir}")
    return FpcaBasis.load(basis_path), PosteriorDraws.load(run_dir / "draws")


def diagnose_run(
    run_dir: Path,
    prior_sims: int,
    seed: int,
    Q: Optional[Sequence[float]] = None,
    alpha: Optional[float] = None,
) -> Tuple[list, diagnostics.ChainDiagnostics]:
    _, draws = load_run(run_dir)
    clustering = diagnostics.explore(draws, prior_sims=prior_sims, seed=seed, Q=Q, alpha=alpha)
    chains = diagnostics.chain_diagnostics(draws)
    extra = {"prior_sims": prior_sims, "seed": seed, "Q": list(Q) if Q else None, "alpha": alpha}
    diagnostics.save_diagnostics(run_dir / "diagnostics", clustering, chains, extra=extra)
    return clustering, chains


def reconstruct_run(run_dir: Path, level: float) -> ReconstructionSummary:
    basis, draws = load_run(run_dir)
    summary = reconstruct(draws, basis, level)
    target = run_dir / "reconstruction"
    summary.save(target)
    for k in range(draws.K):
        means = cluster_mean_curves(summary.posterior_mean, diagnostics.map_partition(draws, k))
        labels = sorted(means)
        frame = pd.DataFrame(np.vstack([means[j] for j in labels]))
        frame.insert(0, "cluster", labels)
        frame.to_csv(target / f"cluster_means_k{k + 1}.csv", index=False, float_format="%.17g")
    write_json(
        target / "summary.json",
        {"level": level, "n": summary.posterior_mean.shape[0], "K": draws.K, "chains_used": list(summary.chains_used)},
    )
    return summary


def _reconstruction(run_dir: Path, level: float) -> ReconstructionSummary:
    try:
        return ReconstructionSummary.load(run_dir / "reconstruction", level)
    except FileNotFoundError:
        return reconstruct_run(run_dir, level)


def evaluate_run(
    run_dir: Path,
    truth_dir: Path,
    baseline: Optional[str] = None,
    level: float = 0.95,
) -> metrics.MetricReport:
    """
    Score a run against a simulated truth.

    ``baseline`` is ``std`` (the standard model fitted alongside the run),
    ``fpca`` (empirical scores on the same basis) or a path to another run.
    """
    basis, draws = load_run(run_dir)
    truth = SimulatedDataset.load(truth_dir)
    estimate = _reconstruction(run_dir, level).posterior_mean

    maps, ppms, baseline_ppms = {}, {}, {}
    for k in range(draws.K):
        maps[k + 1] = diagnostics.map_partition(draws, k)
        ppms[k + 1] = diagnostics.pairwise_probability_matrix(draws, k)

    baseline_estimate, baseline_name = None, None
    if baseline in ("std", "standard_bfpca"):
        std_dir = run_dir / STANDARD_DIR
        _, std_draws = load_run(std_dir)
        baseline_estimate = _reconstruction(std_dir, level).posterior_mean
        baseline_name = "standard_bfpca"
        for k in range(std_draws.K):
            baseline_ppms[k + 1] = diagnostics.pairwise_probability_matrix(std_draws, k)
    elif baseline in ("fpca", "frequentist_fpca"):
        baseline_estimate = frequentist_reconstruction(basis)
        baseline_name = "frequentist_fpca"
    elif baseline:
        other = Path(baseline)
        baseline_estimate = _reconstruction(other, level).posterior_mean
        baseline_name = str(other)

    report = metrics.evaluate(
        estimate,
        truth.truth,
        map_partitions=maps,
        true_partitions={k: v for k, v in truth.true_partitions.items() if k <= draws.K},
        ppms=ppms,
        baseline_ppms=baseline_ppms or None,
        baseline_estimate=baseline_estimate,
        baseline=baseline_name,
    )
    report.save(run_dir / "metrics", truth.observed.curve_labels())
    return report


# ---------------------------------------------------------------------------
# Study harness
# ---------------------------------------------------------------------------


def _study_replicate(
    index: int, spec: DgpSpec, base: RunConfig, root: Path, level: float
) -> Dict[str, Any]:
    rep_dir = replicate_dir(root, index)
    data = generate(spec, replicate_seed(spec.seed, index))
    data.extra["replicate"] = index + 1
    data.save(rep_dir / "data")
    mcmc = McmcConfig(**{**base.mcmc.to_dict(), "seed": int(replicate_seed(base.mcmc.seed, index).generate_state(1)[0])})
    config = RunConfig(
        simulate=spec,
        smoothing=base.smoothing,
        retain=base.retain,
        model=base.model,
        mcmc=mcmc,
        baselines=("standard_bfpca",),
    )
    fit_run(config, rep_dir, threads=1, dataset=data.observed)
    reconstruct_run(rep_dir / STANDARD_DIR, level)
    report = evaluate_run(rep_dir, rep_dir / "data", baseline="std", level=level)
    row: Dict[str, Any] = {
        "replicate": index + 1,
        "imse_median": float(np.median(report.imse)),
        "baseline_imse_median": float(np.median(report.baseline_imse)),
        "improvement_median": report.improvement["median"],
        "fraction_improved": report.improvement["fraction_improved"],
        "correlation_l2": report.correlation_l2,
    }
    for k, value in report.ari.items():
        row[f"ari_k{k}"] = value
    for k, value in report.cii.items():
        row[f"cii_k{k}"] = value
    return row


def _median_iqr(values: pd.Series) -> Dict[str, Optional[float]]:
    values = values.dropna()
    if values.empty:
        return {"median": None, "q25": None, "q75": None}
    q25, q50, q75 = np.quantile(values.to_numpy(dtype=float), [0.25, 0.5, 0.75])
    return {"median": float(q50), "q25": float(q25), "q75": float(q75)}


def run_study(spec: DgpSpec, base: RunConfig, replicates: int, out_dir: Path, threads: Optional[int], level: float = 0.95) -> Dict[str, Any]:
    """Fit the clustered and standard models to replicate datasets and summarise."""
    if replicates < 1:
        raise ValidationError(f"replicates must be positive, got {replicates}")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: List[Optional[Dict[str, Any]]] = [None] * replicates
    workers = min(replicates, clamp_threads(threads))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_study_replicate, idx, spec, base, out_dir, level): idx for idx in range(replicates)}
        for future in as_completed(futures):
            idx = futures[future]
            rows[idx] = future.result()
            logger.info("Replicate %s/%s done", idx + 1, replicates)

    frame = pd.DataFrame([r for r in rows if r is not None])
    frame.to_csv(out_dir / "study_replicates.csv", index=False, float_format="%.17g")
    table = {}
    for column in frame.columns:
        if column.startswith(("ari_k", "cii_k")):
            table[column] = _median_iqr(frame[column])
    summary = {
        "spec": spec.to_dict(),
        "replicates": replicates,
        "clustering": table,
        "imse": {
            "pcl_median": _median_iqr(frame["imse_median"]),
            "standard_median": _median_iqr(frame["baseline_imse_median"]),
            "improvement_median": _median_iqr(frame["improvement_median"]),
            "fraction_improved": _median_iqr(frame["fraction_improved"]),
        },
    }
    write_json(out_dir / "study_summary.json", summary)
    (out_dir / "study_report.txt").write_text(render_study(summary), encoding="utf-8")
    return summary


def _cell(entry: Dict[str, Optional[float]]) -> str:
    if entry["median"] is None:
        return "-"
    return f"{entry['median']:.3f} [{entry['q25']:.3f}, {entry['q75']:.3f}]"


def render_study(summary: Dict[str, Any]) -> str:
    spec = summary["spec"]
    lines = [f"{spec['kind'].upper()} STN={spec['stn']:g}  replicates={summary['replicates']}", "=" * 60]
    lines.append(f"{'dim':>4} {'ARI median [IQR]':>28} {'CII median [IQR]':>28}")
    dims = sorted({int(key[5:]) for key in summary["clustering"]})
    for k in dims:
        ari = summary["clustering"].get(f"ari_k{k}", {"median": None})
        cii = summary["clustering"].get(f"cii_k{k}", {"median": None})
        lines.append(f"{k:>4} {_cell(ari):>28} {_cell(cii):>28}")
    imse = summary["imse"]
    lines.append("")
    lines.append(f"IMSE improvement vs standard model: {_cell(imse['improvement_median'])} %")
    lines.append(f"Curves improved (fraction): {_cell(imse['fraction_improved'])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------


def _mcmc_from_args(args, base: Optional[McmcConfig] = None, seed_attr: str = "seed") -> McmcConfig:
    base = base or McmcConfig.preset(full_scale=getattr(args, "full_scale", False))
    data = base.to_dict()
    if getattr(args, "full_scale", False):
        data.update(McmcConfig.preset(full_scale=True).to_dict())
        data["seed"] = base.seed
    for key, attr in (
        ("burn_in", "burn_in"), ("iterations", "iterations"), ("thinning", "thinning"),
        ("chains", "chains"), ("seed", seed_attr),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            data[key] = value
    return McmcConfig.from_dict(data)


def _retain_from_args(args, base: RetainRule) -> RetainRule:
    if getattr(args, "retain_k", None):
        return RetainRule.fixed(args.retain_k)
    if getattr(args, "min_share", None) is not None:
        return RetainRule.threshold_and_min_share(args.retain_fraction or 0.85, args.min_share)
    if getattr(args, "retain_fraction", None) is not None:
        return RetainRule.threshold(args.retain_fraction)
    return base


def _model_from_args(args, base: ModelOptions) -> ModelOptions:
    data = base.to_dict()
    for key in ("J", "mode", "relabel", "scale_priors", "spread"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "Q", None):
        data["Q"] = list(args.Q)
    return ModelOptions.from_dict(data)


def _spec_from_args(args) -> DgpSpec:
    data: Dict[str, Any] = {}
    if getattr(args, "spec", None):
        try:
            data = read_json(Path(args.spec))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.spec} is not valid JSON: {exc}") from exc
    for key, attr in (("kind", "dgp"), ("stn", "stn"), ("seed", "seed"), ("n", "n"), ("T", "T")):
        value = getattr(args, attr, None)
        if value is not None:
            data[key] = value
    return DgpSpec.from_dict(data)


def cmd_simulate(args) -> Dict[str, Any]:
    spec = _spec_from_args(args)
    out = resolve_output(args.out)
    if args.replicates and args.replicates > 1:
        paths = write_replicates(spec, args.replicates, out, threads=args.threads)
        print(f"Wrote {len(paths)} replicate datasets under {out}")
        return {"output": str(out), "replicates": len(paths)}
    data = generate(spec)
    data.save(out)
    print(f"Simulated {spec.kind}: n={spec.n} T={spec.T} STN={spec.stn:g} (empirical {data.empirical_stn:.3f}) -> {out}")
    return {"output": str(out), "noise_sd": data.noise_sd}


def _config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else None
    if base is None and not args.input:
        raise ValidationError("fit needs --config or --input")
    data = base.to_dict() if base else RunConfig(input=args.input).to_dict()
    if args.input:
        data["input"], data["simulate"] = args.input, None
    if args.out:
        data["output"] = args.out
    for key in ("header", "labels"):
        value = getattr(args, key, None)
        if value is not None:
            data["input_format"][key] = value
    config = RunConfig.from_dict(data)
    baselines = set(config.baselines)
    if args.baseline_standard:
        baselines.add("standard_bfpca")
    smoothing = dict(config.smoothing)
    if args.n_basis:
        smoothing["n_basis"] = args.n_basis
    return RunConfig(
        input=config.input,
        input_format=config.input_format,
        simulate=config.simulate,
        smoothing=smoothing,
        retain=_retain_from_args(args, config.retain),
        model=_model_from_args(args, config.model),
        mcmc=_mcmc_from_args(args, config.mcmc if base else None),
        output=config.output,
        baselines=tuple(sorted(baselines)),
    )


def cmd_fit(args) -> Dict[str, Any]:
    config = _config_from_args(args)
    if not config.output:
        raise ValidationError("fit needs an output directory (--out or config output)")
    if config.input and not Path(config.input).exists():
        raise FileNotFoundError(f"input dataset not found: {config.input}")
    out = resolve_output(config.output)
    summary = fit_run(config, out, threads=args.threads)
    print(f"Fit complete: K={summary['K']} config hash {summary['config_hash'][:12]} -> {out}")
    for mode, info in summary["runs"].items():
        print(f"   {mode:<16} draws hash {info['content_hash'][:16]}")
    return {"output": str(out), **summary}


def cmd_diagnose(args) -> Dict[str, Any]:
    run_dir = resolve_output(args.run)
    clustering, chains = diagnose_run(run_dir, args.prior_sims, args.seed, Q=args.Q, alpha=args.alpha)
    print(diagnostics.render_report(clustering, chains), end="")
    return {"output": str(run_dir / "diagnostics"), **chains.summary()}


def cmd_reconstruct(args) -> Dict[str, Any]:
    run_dir = resolve_output(args.run)
    summary = reconstruct_run(run_dir, args.level)
    print(f"Reconstructed {summary.posterior_mean.shape[0]} curves at level {args.level:g} -> {run_dir / 'reconstruction'}")
    return {"output": str(run_dir / "reconstruction")}


def cmd_evaluate(args) -> Dict[str, Any]:
    run_dir = resolve_output(args.run)
    report = evaluate_run(run_dir, resolve_output(args.truth), args.baseline, args.level)
    data = report.to_dict()
    print(f"IMSE median: {data['imse']['median']:.6g}   mean: {data['imse']['mean']:.6g}")
    if data["correlation"]["l2"] is not None:
        print(f"Correlation error L2: {data['correlation']['l2']:.6g}   RMS: {data['correlation']['rms']:.6g}")
    for k, value in data["ari"].items():
        cii = data["cii"].get(k)
        ari_text = "-" if value is None else format(value, ".4f")
        print(f"   dim {k}: ARI {ari_text}   CII {'-' if cii is None else format(cii, '.4f')}")
    if report.improvement:
        imp = report.improvement
        print(
            f"Improvement vs {report.baseline}: median {imp['median']:.1f}% "
            f"IQR {imp['iqr']:.1f}  improved {100 * imp['fraction_improved']:.0f}% of curves"
        )
    return {"output": str(run_dir / "metrics")}


def cmd_study(args) -> Dict[str, Any]:
    spec = _spec_from_args(args)
    base_config = RunConfig.load(args.config) if args.config else RunConfig(simulate=spec)
    base = RunConfig(
        simulate=spec,
        smoothing=base_config.smoothing,
        retain=_retain_from_args(args, RetainRule.fixed(spec.K) if not args.config else base_config.retain),
        model=_model_from_args(args, base_config.model),
        mcmc=_mcmc_from_args(args, base_config.mcmc if args.config else None, seed_attr="mcmc_seed"),
    )
    out = resolve_output(args.out)
    summary = run_study(spec, base, args.replicates, out, args.threads, args.level)
    print(render_study(summary), end="")
    return {"output": str(out)}


def cmd_serve(args) -> Dict[str, Any]:
    from webapp import serve_results

    serve_results(args.port, args.host)
    return {}


def _add_mcmc_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--burn-in", dest="burn_in", type=int, help="Burn-in sweeps")
    p.add_argument("--iterations", type=int, help="Post burn-in sweeps")
    p.add_argument("--thinning", type=int, help="Keep every n-th sweep")
    p.add_argument("--chains", type=int, help="Independent chains")
    p.add_argument("--paper-scale", "--full-scale", dest="full_scale", action="store_true",
                   help="100k burn-in, 100k iterations, 3 chains")
    p.add_argument("--J", type=int, help="Stick-breaking truncation level")
    p.add_argument("--mode", choices=(MODE_PCL, MODE_STANDARD), help="Clustered or standard model")
    p.add_argument("--relabel", choices=("by_mean", "by_weight"), help="Label-switching rule")
    p.add_argument("--scale-priors", dest="scale_priors", choices=("mixed", "gamma", "uniform"))
    p.add_argument("--spread", type=float, help="Multiplier on eigenvalues inside the scale priors")
    p.add_argument("--Q", type=float, nargs="+", help="Upper bounds of the concentration priors per dimension")
    p.add_argument("--retain-k", dest="retain_k", type=int, help="Keep exactly K eigendimensions")
    p.add_argument("--retain-fraction", dest="retain_fraction", type=float, help="Cumulative variance to explain")
    p.add_argument("--min-share", dest="min_share", type=float, help="Minimum variance share per dimension")
    p.add_argument("--n-basis", dest="n_basis", type=int, help="Number of B-spline functions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Clustered Bayesian functional PCA (PCl-fPCA)",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python pcl_fpca.py simulate --dgp 1 --stn 1 --seed 7 --out runs/d1
  python pcl_fpca.py fit --input runs/d1/observed.csv --out runs/fit1 --seed 3 --baseline-standard
  python pcl_fpca.py diagnose runs/fit1
  python pcl_fpca.py evaluate runs/fit1 --truth runs/d1 --baseline std
  python pcl_fpca.py study --dgp 1 --stn 6 --replicates 20 --out runs/study
  python pcl_fpca.py serve --port 5005
        """,
    )
    parser.add_argument("--threads", type=int, default=None, help="Worker pool size (PCLFPCA_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Generate DGP1-3 datasets")
    p.add_argument("--spec", help="JSON simulation spec")
    p.add_argument("--dgp", type=int, choices=(1, 2, 3))
    p.add_argument("--stn", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="Smooth, decompose and sample")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--input", help="CSV of curves (rows) by time points (columns)")
    p.add_argument("--header", action=argparse.BooleanOptionalAction, default=None,
                   help="First row holds time stamps (detected when omitted)")
    p.add_argument("--labels", action=argparse.BooleanOptionalAction, default=None,
                   help="First column holds curve identifiers (detected when omitted)")
    p.add_argument("--out", help="Run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--baseline-standard", dest="baseline_standard", action="store_true",
                   help="Also fit the standard Bayesian fPCA model on the same basis")
    _add_mcmc_flags(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("diagnose", help="Clustering exploration and convergence checks")
    p.add_argument("run")
    p.add_argument("--prior-sims", dest="prior_sims", type=int, default=diagnostics.DEFAULT_PRIOR_SIMS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--Q", type=float, nargs="+", help="Concentration bounds for the Bayes factor prior, per dimension")
    p.add_argument("--alpha", type=float, help="Fixed concentration for the Bayes factor prior")
    p.set_defaults(handler=cmd_diagnose)

    p = sub.add_parser("reconstruct", help="Posterior curves with credible bands")
    p.add_argument("run")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="Score a run against simulated truth")
    p.add_argument("run")
    p.add_argument("--truth", required=True, help="Simulated dataset directory")
    p.add_argument("--baseline", help="std, fpca or another run directory")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("study", help="Replicated simulation study")
    p.add_argument("--config", help="JSON run config supplying model/mcmc settings")
    p.add_argument("--spec", help="JSON simulation spec")
    p.add_argument("--dgp", type=int, choices=(1, 2, 3))
    p.add_argument("--stn", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=int, help="Seed of the simulated datasets")
    p.add_argument("--mcmc-seed", dest="mcmc_seed", type=int, help="Seed of the sampler chains")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True)
    _add_mcmc_flags(p)
    p.set_defaults(handler=cmd_study)

    p = sub.add_parser("serve", help="Read-only JSON API over the output root")
    p.add_argument("--port", type=int, default=int(os.getenv("WEB_PORT", "5005")))
    p.add_argument("--host", default="0.0.0.0")
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        args.handler(args)
        return 0

    params = {k: v for k, v in vars(args).items() if k != "handler"}
    record = run_store.start(args.command, params, getattr(args, "out", None) or getattr(args, "run", None))
    started = time.perf_counter()
    logger.info("%s started", args.command)
    try:
        result = args.handler(args)
    except (PclFpcaError, FileNotFoundError, NotADirectoryError) as exc:
        code = exit_code_for(exc)
        logger.error("%s failed: %s", args.command, exc)
        run_store.update(record["run_id"], state="failed", message=str(exc), exit_code=code)
        print(f"Error: {exc}", file=sys.stderr)
        return code
    elapsed = time.perf_counter() - started
    logger.info("%s finished in %.1fs", args.command, elapsed)
    run_store.update(record["run_id"], state="completed", message="ok", exit_code=0, result=result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
