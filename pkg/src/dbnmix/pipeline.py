"""End-to-end empirical-Bayes run: split, structure solves, dual, chains, mixture, evaluation.

Seed streams
------------
Every random stage draws from ``derive_seed(seed, stage, ...)``, which hashes the
base seed with the stage key through :class:`numpy.random.SeedSequence`:

* ``(0,)`` train/validation split
* ``(1,)`` base of the subsample seeds (subsample ``m`` uses base + m)
* ``(2, m)`` MALA chain of model ``m``
* ``(3,)`` evaluation draws

Model jobs share nothing mutable and are collected by model index, so results do
not depend on the worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from dbnmix.data_io import SubsampleSpec, load_dataset, train_val_split
from dbnmix.dual import DualConfig, solve_dual
from dbnmix.errors import ParseError
from dbnmix.lsem import TrajectoryDataset, build_support_map, extract_params, loss
from dbnmix.mixture import (
    MixtureEnsemble,
    ModelRecord,
    bayes_factor_matrix,
    histogram,
    mixture_weights,
    point_estimate_losses,
    sample_evaluation,
)
from dbnmix.sampler import GibbsTarget, SamplerConfig, run_mala, suggest_step_size
from dbnmix.structure import IpConfig, IpSolution, default_penalty, fit_weights_given_support, iter_initial_solutions

logger = logging.getLogger(__name__)

# fields that do not influence results and are left out of the emitted report
_UNRECORDED = ("out_dir", "threads")


@dataclass
class PipelineConfig:
    data: str | None = None
    lag_order: int = 1
    models: int = 3
    subsample_size: int | None = None
    lambda_w: float | None = None
    lambda_a: float | None = None
    beta: float = -100.0
    epsilon: float = 0.1
    lambda_min: float | None = None
    step_size: float | None = None
    burn_in: int = 1000
    samples: int = 2000
    target_accept: float = 0.574
    eval_draws: int = 1000
    val_fraction: float = 0.3
    temperature: float = 1.0
    loss_sign: int = -1
    parzen_bandwidth: float | None = None
    time_limit: float = 0.0
    n_bins: int = 30
    seed: int = 0
    threads: int = 1
    out_dir: str = "run"

    def __post_init__(self):
        if self.models < 1:
            raise ValueError("models must be >= 1")
        if self.lag_order < 0:
            raise ValueError("lag_order must be >= 0")
        if self.subsample_size is not None and self.subsample_size < 1:
            raise ValueError("subsample_size must be >= 1")
        for name in ("lambda_w", "lambda_a"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.beta < 0:
            raise ValueError("beta must be < 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.lambda_min is not None and not self.lambda_min > 0:
            raise ValueError("lambda_min must be > 0")
        if self.samples < 1 or self.burn_in < 0 or self.eval_draws < 1:
            raise ValueError("samples and eval_draws must be >= 1, burn_in >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.loss_sign not in (-1, 1):
            raise ValueError("loss_sign must be +1 or -1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @classmethod
    def from_json(cls, path, **overrides) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, model: int | None, cause: Exception):
        where = f"model {model}, " if model is not None else ""
        super().__init__(f"{where}stage '{stage}': {cause}")
        self.stage = stage
        self.model = model


@dataclass
class RunReport:
    out_dir: Path
    artifacts: dict[str, str]
    summary: dict = field(default_factory=dict)


def derive_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def coordinate_names(smap) -> list[str]:
    return [f"W[{c.j},{c.i}]" if c.lag == 0 else f"A{c.lag}[{c.j},{c.i}]" for c in smap.entries]


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _model_job(m: int, sol: IpSolution, train: TrajectoryDataset, cfg: PipelineConfig):
    stage = "dual"
    try:
        ref = loss(train, sol.params)
        if cfg.lambda_min is None:
            dcfg = DualConfig.with_default_floor(cfg.epsilon, cfg.beta, ref)
        else:
            dcfg = DualConfig(cfg.epsilon, cfg.beta, cfg.lambda_min, ref)
        dual = solve_dual(dcfg)
        stage = "sample"
        smap = build_support_map(sol.mask)
        reachable = boundary_reachable(train, sol.mask, dual, cfg.loss_sign)
        if reachable:
            logger.warning("model %d: the density singularity lies inside the parameter space; consider a more negative beta", m)
        theta0 = extract_params(sol.params, smap)
        target = GibbsTarget(train, smap, dual, theta0, cfg.loss_sign, cfg.parzen_bandwidth)
        h0 = cfg.step_size if cfg.step_size is not None else suggest_step_size(target)
        scfg = SamplerConfig(
            step_size=h0,
            burn_in=cfg.burn_in,
            n_samples=cfg.samples,
            target_accept=cfg.target_accept,
            seed=derive_seed(cfg.seed, 2, m),
            loss_sign=cfg.loss_sign,
            parzen_bandwidth=cfg.parzen_bandwidth,
        )
        chain = run_mala(train, smap, dual, theta0, scfg, target=target)
    except Exception as exc:
        raise PipelineError(stage, m, exc) from exc
    return ModelRecord(sol.mask, sol.params, dual, chain), dcfg, reachable


def boundary_reachable(train: TrajectoryDataset, mask, dual, loss_sign: int) -> bool:
    """Whether some weights on ``mask`` reach the edge of the low-loss posterior domain.

    With ``loss_sign = -1`` the density is finite only for ``E_N > mu - |beta| lam``;
    when the least-squares loss on the support falls below that level the
    density has a non-integrable pole inside the space and chains stick to it.
    """
    if loss_sign != -1:
        return False
    _, best = fit_weights_given_support(train, mask)
    return bool(best <= dual.mu - abs(dual.beta) * dual.lam)


def run_pipeline(cfg: PipelineConfig, data: TrajectoryDataset | None = None) -> RunReport:
    """Run every stage and write the artifacts under ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if data is None:
            if cfg.data is None:
                raise ValueError("no dataset given")
            data = load_dataset(cfg.data, cfg.lag_order)
        train, val = train_val_split(data, cfg.val_fraction, derive_seed(cfg.seed, 0))
    except Exception as exc:
        raise PipelineError("load", None, exc) from exc

    s = cfg.subsample_size or max(1, math.ceil(train.n_traj / 2))
    s = min(s, train.n_traj)
    try:
        lam_default = None
        if cfg.lambda_w is None or cfg.lambda_a is None:
            lam_default = default_penalty(train, n_eff=s * (train.horizon - train.lag_order))
        lam_w = cfg.lambda_w if cfg.lambda_w is not None else lam_default
        lam_a = cfg.lambda_a if cfg.lambda_a is not None else lam_default
        ipcfg = IpConfig(lam_w, lam_a, time_limit=cfg.time_limit)
    except Exception as exc:
        raise PipelineError("structure", None, exc) from exc

    artifacts: dict[str, str] = {}
    solutions: list[IpSolution] = []
    solver = iter_initial_solutions(train, cfg.models, SubsampleSpec(s, derive_seed(cfg.seed, 1)), ipcfg)
    while True:
        try:
            item = next(solver, None)
        except Exception as exc:
            raise PipelineError("structure", len(solutions) + 1, exc) from exc
        if item is None:
            break
        m, sol = item
        solutions.append(sol)
        rel = f"structures/model_{m}.json"
        _write_json(out / rel, sol.to_dict())
        artifacts[f"structure_{m}"] = rel

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [pool.submit(_model_job, m, sol, train, cfg) for m, sol in enumerate(solutions, start=1)]
        results = [f.result() for f in futures]
    records = [r[0] for r in results]

    for m, (rec, dcfg, reachable) in enumerate(results, start=1):
        smap = build_support_map(rec.mask)
        rel = f"dual/model_{m}.json"
        _write_json(
            out / rel,
            {**rec.dual.to_dict(), "reference_loss": dcfg.reference_loss, "lambda_min": dcfg.lambda_min},
        )
        artifacts[f"dual_{m}"] = rel
        rel = f"chains/model_{m}.csv"
        _write_csv(
            out / rel,
            ["sample"] + coordinate_names(smap),
            [[q] + [repr(float(v)) for v in row] for q, row in enumerate(rec.chain.samples)],
        )
        artifacts[f"chain_{m}"] = rel
        rel_side = f"chains/model_{m}.json"
        _write_json(
            out / rel_side,
            {
                "acceptance_rate": rec.chain.acceptance_rate,
                "mean_loss": rec.chain.mean_loss,
                "step_size": rec.chain.step_size,
                "domain_boundary_reachable": reachable,
                "n_samples": int(len(rec.chain.samples)),
                "coordinates": coordinate_names(smap),
            },
        )
        artifacts[f"chain_meta_{m}"] = rel_side

    try:
        mean_losses = [rec.chain.mean_loss for rec in records]
        weights = mixture_weights(mean_losses, cfg.temperature)
        ensemble = MixtureEnsemble(records, weights)
        draws, drawn_models = sample_evaluation(ensemble, val, cfg.eval_draws, derive_seed(cfg.seed, 3))
        point_losses = point_estimate_losses(ensemble, val)
        hist = histogram(draws, cfg.n_bins)
    except Exception as exc:
        raise PipelineError("mixture", None, exc) from exc

    _write_json(
        out / "weights.json",
        {
            "weights": weights.tolist(),
            "mean_losses": mean_losses,
            "temperature": cfg.temperature,
            "bayes_factors": bayes_factor_matrix(weights),
        },
    )
    artifacts["weights"] = "weights.json"
    rows = [["draw", int(m) + 1, repr(float(v))] for v, m in zip(draws, drawn_models)]
    rows += [["point", m, repr(float(v))] for m, v in enumerate(point_losses, start=1)]
    _write_csv(out / "eval_losses.csv", ["kind", "model", "loss"], rows)
    artifacts["eval_losses"] = "eval_losses.csv"
    _write_csv(out / "histogram.csv", ["bin_left", "bin_right", "count"], [[repr(a), repr(b), c] for a, b, c in hist])
    artifacts["histogram"] = "histogram.csv"

    recorded = {k: v for k, v in asdict(cfg).items() if k not in _UNRECORDED}
    summary = {
        "config": recorded,
        "resolved": {
            "subsample_size": s,
            "lambda_w": lam_w,
            "lambda_a": lam_a,
            "n_train": train.n_traj,
            "n_val": val.n_traj,
        },
        "point_estimates": [
            {
                "model": m,
                "structure": repr(rec.mask),
                "n_params": build_support_map(rec.mask).size,
                "train_loss": float(loss(train, rec.point_params)),
                "ip_objective": sol.objective,
                "proven_optimal": sol.proven_optimal,
                "validation_loss": float(point_losses[m - 1]),
            }
            for m, (rec, sol) in enumerate(zip(records, solutions), start=1)
        ],
        "chain_samples": [
            {
                "model": m,
                "acceptance_rate": rec.chain.acceptance_rate,
                "mean_loss": rec.chain.mean_loss,
                "mu": rec.dual.mu,
                "lambda": rec.dual.lam,
                "domain_boundary_reachable": r[2],
            }
            for m, (rec, r) in enumerate(zip(records, results), start=1)
        ],
        "weights": weights.tolist(),
        "eval": draw_statistics(draws),
        "artifacts": dict(sorted(artifacts.items())),
    }
    _write_json(out / "report.json", summary)
    artifacts["report"] = "report.json"
    return RunReport(out, artifacts, summary)


def draw_statistics(values) -> dict:
    values = np.asarray(values, dtype=float)
    p5, p50, p95 = np.percentile(values, [5, 50, 95])
    return {
        "count": int(values.size),
        "mean": float(values.mean()),
        "median": float(p50),
        "p05": float(p5),
        "p95": float(p95),
    }


def _read_csv(path: Path) -> list[list[str]]:
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            return list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def load_run(run_dir) -> dict:
    """Read and validate every artifact of a finished run."""
    run_dir = Path(run_dir)
    report = _read_json(run_dir / "report.json")
    weights_doc = _read_json(run_dir / "weights.json")
    try:
        weights = [float(w) for w in weights_doc["weights"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{run_dir / 'weights.json'}: {exc}") from exc
    chains = []
    for m in range(1, len(weights) + 1):
        path = run_dir / f"chains/model_{m}.csv"
        rows = _read_csv(path)
        if not rows:
            raise ParseError(f"{path}: empty chain file")
        width = len(rows[0])
        if rows[0][:1] != ["sample"] or len(rows) < 2 or any(len(row) != width for row in rows[1:]):
            raise ParseError(f"{path}: malformed chain file")
        try:
            if [int(row[0]) for row in rows[1:]] != list(range(len(rows) - 1)):
                raise ValueError("sample index column is not 0, 1, 2, ...")
            samples = np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=float)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        chains.append(samples.reshape(len(rows) - 1, width - 1))
    path = run_dir / "eval_losses.csv"
    rows = _read_csv(path)
    draws, points = [], []
    try:
        if rows[0] != ["kind", "model", "loss"]:
            raise ValueError("unexpected header")
        for row in rows[1:]:
            kind, _, value = row
            (draws if kind == "draw" else points).append(float(value))
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    path = run_dir / "histogram.csv"
    rows = _read_csv(path)
    try:
        hist = [(float(a), float(b), int(c)) for a, b, c in rows[1:]]
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return {
        "report": report,
        "weights": weights,
        "bayes_factors": weights_doc.get("bayes_factors"),
        "chains": chains,
        "draws": draws,
        "point_losses": points,
        "histogram": hist,
    }


def format_report(run: dict) -> str:
    lines = ["mixture weights:"]
    for m, w in enumerate(run["weights"], start=1):
        lines.append(f"  model {m}: {w:.6g}")
    lines.append("bayes factors (row / column):")
    for m, row in enumerate(run["bayes_factors"] or [], start=1):
        cells = ["   -   " if v is None else f"{v:.4g}" for v in row]
        lines.append(f"  model {m}: " + " ".join(cells))
    lines.append("point-estimate validation losses:")
    for m, v in enumerate(run["point_losses"], start=1):
        lines.append(f"  model {m}: {v:.6g}")
    stats = draw_statistics(run["draws"])
    lines.append(
        "mixture draws: n={count} mean={mean:.6g} median={median:.6g} p05={p05:.6g} p95={p95:.6g}".format(**stats)
    )
    return "\n".join(lines)
