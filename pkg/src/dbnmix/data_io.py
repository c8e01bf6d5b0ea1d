"""Dataset persistence, uniform trajectory subsampling and train/validation splits.

CSV layout: header ``traj,t,x1,...,xd``; one row per (trajectory, time step),
sorted by ``(traj, t)``; every trajectory has the same number of steps. The JSON
layout mirrors the dataset fields::

    {"n_traj": N, "horizon": T, "dim": d, "lag_order": p, "values": [[[...]]]}
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dbnmix.errors import BoundsError, DimensionError, ParseError
from dbnmix.lsem import TrajectoryDataset


@dataclass(frozen=True)
class SubsampleSpec:
    subsample_size: int
    seed: int = 0


def load_dataset(path, lag_order: int = 1) -> TrajectoryDataset:
    """Read a dataset from ``.csv`` (default) or ``.json``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return _load_json(path, lag_order)
    return _load_csv(path, lag_order)


def save_dataset(data: TrajectoryDataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(dataset_to_dict(data)) + "\n", encoding="utf-8")
        return path
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["traj", "t"] + [f"x{k + 1}" for k in range(data.dim)])
        for n in range(data.n_traj):
            for t in range(data.horizon):
                writer.writerow([n, t] + [repr(float(v)) for v in data.values[n, t]])
    return path


def dataset_to_dict(data: TrajectoryDataset) -> dict:
    return {
        "n_traj": data.n_traj,
        "horizon": data.horizon,
        "dim": data.dim,
        "lag_order": data.lag_order,
        "values": data.values.tolist(),
    }


def dataset_from_dict(doc: dict, lag_order: int | None = None) -> TrajectoryDataset:
    try:
        values = np.array(doc["values"], dtype=float)
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"invalid dataset document: {exc}") from exc
    for key, axis in (("n_traj", 0), ("horizon", 1), ("dim", 2)):
        if key in doc and (values.ndim != 3 or values.shape[axis] != doc[key]):
            raise ParseError(f"field {key}={doc[key]} disagrees with values shape {values.shape}")
    p = doc.get("lag_order", 1) if lag_order is None else lag_order
    try:
        return TrajectoryDataset(values, p)
    except (DimensionError, ValueError) as exc:
        raise ParseError(str(exc)) from exc


def _load_json(path: Path, lag_order: int) -> TrajectoryDataset:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return dataset_from_dict(doc, lag_order)


def _load_csv(path: Path, lag_order: int) -> TrajectoryDataset:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[:2] != ["traj", "t"]:
            raise ParseError(f"{path}: header must start with 'traj,t,x1,...', got {header}")
        dim = len(header) - 2
        trajs: list[list[list[float]]] = []
        last_id = None
        last_t = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != dim + 2:
                raise ParseError(f"{path}: row {lineno} has {len(row)} columns, expected {dim + 2}")
            try:
                traj_id = int(row[0])
                t = int(row[1])
                obs = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}: row {lineno}: non-numeric cell ({exc})") from None
            if not all(math.isfinite(v) for v in obs):
                raise ParseError(f"{path}: row {lineno}: non-finite value")
            if traj_id != last_id:
                if last_id is not None and traj_id < last_id:
                    raise ParseError(f"{path}: row {lineno}: rows not sorted by traj")
                trajs.append([])
                last_id = traj_id
            elif t <= last_t:
                raise ParseError(f"{path}: row {lineno}: rows not sorted by t within traj {traj_id}")
            last_t = t
            trajs[-1].append(obs)
    if not trajs:
        raise ParseError(f"{path}: no data rows")
    lengths = {len(tr) for tr in trajs}
    if len(lengths) != 1:
        raise ParseError(f"{path}: trajectories have unequal lengths {sorted(lengths)}")
    horizon = lengths.pop()
    if horizon <= lag_order:
        raise ParseError(f"{path}: horizon T={horizon} must exceed lag order p={lag_order}")
    return TrajectoryDataset(np.array(trajs), lag_order)


def subsample_indices(n_traj: int, spec: SubsampleSpec) -> np.ndarray:
    """Sorted indices of ``S`` distinct trajectories drawn uniformly without replacement."""
    s = spec.subsample_size
    if not 1 <= s <= n_traj:
        raise BoundsError(f"subsample size S={s} must satisfy 1 <= S <= N={n_traj}")
    rng = np.random.default_rng(spec.seed)
    return np.sort(rng.choice(n_traj, size=s, replace=False))


def subsample(data: TrajectoryDataset, spec: SubsampleSpec) -> TrajectoryDataset:
    return data.select(subsample_indices(data.n_traj, spec))


def split_indices(n_traj: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < val_fraction < 1.0:
        raise BoundsError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    if n_traj < 2:
        raise BoundsError(f"need at least 2 trajectories to split, got {n_traj}")
    n_val = min(max(math.floor(val_fraction * n_traj + 0.5), 1), n_traj - 1)
    perm = np.random.default_rng(seed).permutation(n_traj)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_val_split(
    data: TrajectoryDataset, val_fraction: float = 0.3, seed: int = 0
) -> tuple[TrajectoryDataset, TrajectoryDataset]:
    """Partition whole trajectories into (train, validation)."""
    train_idx, val_idx = split_indices(data.n_traj, val_fraction, seed)
    return data.select(train_idx), data.select(val_idx)
