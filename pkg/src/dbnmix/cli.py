"""Command line: ``generate`` synthetic data, ``fit`` the mixture, ``report`` a finished run."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from dbnmix.data_io import save_dataset
from dbnmix.errors import ParseError
from dbnmix.lsem import ParamSet, StructureMask, random_dag_params, simulate
from dbnmix.pipeline import PipelineConfig, PipelineError, format_report, load_run, run_pipeline


def _structure_from_file(path: Path) -> tuple[StructureMask, ParamSet]:
    """Structure file: ``{"w": d x d, "a": p x d x d}``; nonzero entries define the edges."""
    doc = json.loads(path.read_text(encoding="utf-8"))
    w = np.array(doc["w"], dtype=float)
    a = np.array(doc.get("a", []), dtype=float)
    if a.size == 0:
        a = np.zeros((0,) + w.shape)
    mask = StructureMask((w != 0).astype(int), (a != 0).astype(int))
    return mask, ParamSet(w, a)


def cmd_generate(args) -> int:
    if args.structure:
        mask, params = _structure_from_file(Path(args.structure))
    else:
        rng = np.random.default_rng(args.seed)
        mask, params = random_dag_params(args.dim, args.lag_order, args.intra_edges, args.inter_edges, rng)
    data = simulate(mask, params, args.sigma, args.n_traj, args.horizon, warmup=args.warmup, seed=args.seed)
    out = save_dataset(data, args.out)
    truth = Path(args.truth) if args.truth else out.with_name(out.stem + "_truth.json")
    truth.parent.mkdir(parents=True, exist_ok=True)
    truth.write_text(
        json.dumps(
            {
                "dim": mask.dim,
                "lag_order": mask.lag_order,
                "sigma": args.sigma,
                "warmup": args.warmup,
                "seed": args.seed,
                "e_w": mask.e_w.tolist(),
                "e_a": mask.e_a.tolist(),
                "w": params.w.tolist(),
                "a": params.a.tolist(),
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"wrote {out} and {truth}")
    return 0


def cmd_fit(args) -> int:
    overrides = {f.name: getattr(args, f.name) for f in fields(PipelineConfig) if getattr(args, f.name, None) is not None}
    if args.config:
        cfg = PipelineConfig.from_json(args.config, **overrides)
    else:
        cfg = PipelineConfig(**overrides)
    report = run_pipeline(cfg)
    print(f"run written to {report.out_dir}")
    print(format_report(load_run(report.out_dir)))
    return 0


def cmd_report(args) -> int:
    print(format_report(load_run(args.run_dir)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbnmix", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset from a random or given structure")
    g.add_argument("--out", required=True, help="dataset path (.csv or .json)")
    g.add_argument("--truth", help="ground-truth JSON path (default: <out>_truth.json)")
    g.add_argument("--structure", help="JSON file with 'w' and 'a' coefficient arrays")
    g.add_argument("--dim", type=int, default=5)
    g.add_argument("--lag-order", type=int, default=1)
    g.add_argument("--intra-edges", type=int, default=3)
    g.add_argument("--inter-edges", type=int, default=3)
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--n-traj", type=int, default=50)
    g.add_argument("--horizon", type=int, default=10)
    g.add_argument("--warmup", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="run the full pipeline on a dataset")
    f.add_argument("--config", help="JSON config with PipelineConfig keys; flags override it")
    f.add_argument("--data")
    f.add_argument("--lag-order", type=int)
    f.add_argument("--models", type=int)
    f.add_argument("--subsample-size", type=int)
    f.add_argument("--lambda-w", type=float)
    f.add_argument("--lambda-a", type=float)
    f.add_argument("--beta", type=float)
    f.add_argument("--epsilon", type=float)
    f.add_argument("--lambda-min", type=float)
    f.add_argument("--step-size", type=float)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--samples", type=int)
    f.add_argument("--target-accept", type=float)
    f.add_argument("--eval-draws", type=int)
    f.add_argument("--val-fraction", type=float)
    f.add_argument("--temperature", type=float)
    f.add_argument("--loss-sign", type=int, choices=(-1, 1))
    f.add_argument("--parzen-bandwidth", type=float)
    f.add_argument("--time-limit", type=float)
    f.add_argument("--n-bins", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--threads", type=int)
    f.add_argument("--out-dir")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="summarize a finished run directory")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PipelineError, ParseError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
