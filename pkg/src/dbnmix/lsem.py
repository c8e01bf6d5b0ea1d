"""Linear structural equation model for a lagged dynamic Bayesian network.

Conventions
-----------
Observations are row vectors. A trajectory slice ``X[n, t]`` obeys

    X_t = X_t W + X_{t-1} A_1 + ... + X_{t-p} A_p + Z_t

so ``W[j, i] != 0`` is the intra-slice edge ``j -> i`` and ``A[l-1, j, i]`` the
edge from variable ``j`` at lag ``l`` into variable ``i``. Internally the
coefficients are stacked into a single ``((p + 1) d, d)`` matrix
``B = [W; A_1; ...; A_p]`` against the design ``[X_t, X_{t-1}, ..., X_{t-p}]``.
The loss only counts time steps ``t >= p`` (0-based) so that every lag exists.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from dbnmix.errors import DimensionError, StructureError, SupportError


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """``N`` trajectories of ``T`` slices of a ``d``-dimensional process.

    ``values`` has shape ``(N, T, d)``; ``lag_order`` is the number of lag
    matrices models fitted on this dataset use.
    """

    values: np.ndarray
    lag_order: int = 1

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if values.ndim != 3:
            raise DimensionError(f"values must be 3-d (N, T, d), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains non-finite entries")
        n, t, d = values.shape
        p = int(self.lag_order)
        if p < 0:
            raise DimensionError(f"lag_order must be >= 0, got {p}")
        if n < 1 or d < 1:
            raise DimensionError(f"need N >= 1 and d >= 1, got N={n}, d={d}")
        if t < p + 1:
            raise DimensionError(f"horizon T={t} must be at least lag_order + 1 = {p + 1}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lag_order", p)

    @property
    def n_traj(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def n_rows(self) -> int:
        """Number of (trajectory, time) pairs entering the loss."""
        return self.n_traj * (self.horizon - self.lag_order)

    def select(self, indices) -> "TrajectoryDataset":
        """Dataset restricted to the given trajectory indices."""
        return TrajectoryDataset(self.values[np.asarray(indices, dtype=int)], self.lag_order)

    @cached_property
    def design(self) -> tuple[np.ndarray, np.ndarray]:
        """Targets ``Y`` of shape ``(rows, d)`` and stacked design ``D`` of shape ``(rows, (p+1) d)``."""
        p, t = self.lag_order, self.horizon
        blocks = [self.values[:, p - l : t - l, :] for l in range(p + 1)]
        y = blocks[0].reshape(-1, self.dim)
        design = np.concatenate(blocks, axis=2).reshape(-1, (p + 1) * self.dim)
        return y, design

    @cached_property
    def gram(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(D^T D, D^T Y, diag(Y^T Y))``."""
        y, design = self.design
        return design.T @ design, design.T @ y, np.einsum("ri,ri->i", y, y)


@dataclass(frozen=True, eq=False)
class StructureMask:
    """Binary intra-slice adjacency ``e_w`` (d x d) and lag adjacency ``e_a`` (p x d x d)."""

    e_w: np.ndarray
    e_a: np.ndarray

    def __post_init__(self):
        e_w = np.asarray(self.e_w)
        e_a = np.asarray(self.e_a)
        if e_w.ndim != 2 or e_w.shape[0] != e_w.shape[1]:
            raise DimensionError(f"e_w must be square, got shape {e_w.shape}")
        d = e_w.shape[0]
        if e_a.size == 0:
            e_a = e_a.reshape(-1, d, d) if e_a.ndim == 3 else np.zeros((0, d, d))
        if e_a.ndim != 3 or e_a.shape[1:] != (d, d):
            raise DimensionError(f"e_a must have shape (p, {d}, {d}), got {e_a.shape}")
        for name, arr in (("e_w", e_w), ("e_a", e_a)):
            if not np.all((arr == 0) | (arr == 1)):
                raise StructureError(f"{name} entries must be 0 or 1")
        e_w = e_w.astype(np.int8)
        e_a = e_a.astype(np.int8)
        if not is_dag(e_w):
            raise StructureError("intra-slice graph e_w contains a directed cycle")
        e_w.setflags(write=False)
        e_a.setflags(write=False)
        object.__setattr__(self, "e_w", e_w)
        object.__setattr__(self, "e_a", e_a)

    @classmethod
    def empty(cls, dim: int, lag_order: int) -> "StructureMask":
        return cls(np.zeros((dim, dim)), np.zeros((lag_order, dim, dim)))

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, dim: int) -> "StructureMask":
        stacked = np.asarray(stacked)
        p = stacked.shape[0] // dim - 1
        return cls(stacked[:dim], stacked[dim:].reshape(p, dim, dim))

    @property
    def dim(self) -> int:
        return self.e_w.shape[0]

    @property
    def lag_order(self) -> int:
        return self.e_a.shape[0]

    @property
    def n_intra(self) -> int:
        return int(self.e_w.sum())

    @property
    def n_inter(self) -> int:
        return int(self.e_a.sum())

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.e_w, self.e_a.reshape(-1, self.dim)], axis=0)

    def key(self) -> tuple[int, ...]:
        """Flattened ``(e_w row-major, e_a by (l, j, i))``; tuple order is the tie-break order."""
        return tuple(int(v) for v in self.stacked().ravel())

    def __eq__(self, other):
        if not isinstance(other, StructureMask):
            return NotImplemented
        return self.e_w.shape == other.e_w.shape and self.e_a.shape == other.e_a.shape and self.key() == other.key()

    def __hash__(self):
        return hash((self.dim, self.lag_order, self.key()))

    def __repr__(self):
        w = [(int(j), int(i)) for j, i in zip(*np.nonzero(self.e_w))]
        a = [(int(l) + 1, int(j), int(i)) for l, j, i in zip(*np.nonzero(self.e_a))]
        return f"StructureMask(d={self.dim}, p={self.lag_order}, w_edges={w}, a_edges={a})"


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Real coefficient matrices ``w`` (d x d) and ``a`` (p x d x d)."""

    w: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        a = np.array(self.a, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"w must be square, got shape {w.shape}")
        d = w.shape[0]
        if a.size == 0:
            a = a.reshape(-1, d, d) if a.ndim == 3 else np.zeros((0, d, d))
        if a.ndim != 3 or a.shape[1:] != (d, d):
            raise DimensionError(f"a must have shape (p, {d}, {d}), got {a.shape}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)

    @classmethod
    def zeros(cls, dim: int, lag_order: int) -> "ParamSet":
        return cls(np.zeros((dim, dim)), np.zeros((lag_order, dim, dim)))

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, dim: int) -> "ParamSet":
        p = stacked.shape[0] // dim - 1
        return cls(stacked[:dim], stacked[dim:].reshape(p, dim, dim))

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    @property
    def lag_order(self) -> int:
        return self.a.shape[0]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.w, self.a.reshape(-1, self.dim)], axis=0)

    def supported_on(self, mask: StructureMask) -> bool:
        return not np.any((self.stacked() != 0) & (mask.stacked() == 0))


class Coord(NamedTuple):
    """One free coefficient: ``lag == 0`` is ``W[j, i]``, ``lag >= 1`` is ``A[lag-1, j, i]``."""

    lag: int
    j: int
    i: int

    @property
    def slot(self) -> str:
        return "intra" if self.lag == 0 else "inter"


@dataclass(frozen=True, eq=False)
class SupportMap:
    """Bijection between ``R^s`` and the coefficients allowed by a structure.

    Entries are ordered intra-slice first (row-major in ``(j, i)``), then lag
    entries by ``(l, j, i)``; this is row-major order of the stacked matrix.
    """

    entries: tuple[Coord, ...]
    dim: int
    lag_order: int

    @property
    def size(self) -> int:
        return len(self.entries)

    @cached_property
    def rows(self) -> np.ndarray:
        return np.array([c.lag * self.dim + c.j for c in self.entries], dtype=int)

    @cached_property
    def cols(self) -> np.ndarray:
        return np.array([c.i for c in self.entries], dtype=int)


def is_dag(e_w) -> bool:
    """True iff the graph with edge ``j -> i`` for each ``e_w[j, i] != 0`` has no directed cycle."""
    adj = np.asarray(e_w) != 0
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise DimensionError(f"adjacency must be square, got shape {adj.shape}")
    return topological_order(adj) is not None


def topological_order(adj: np.ndarray) -> list[int] | None:
    """Kahn's algorithm; ``None`` when the graph is cyclic (self-loops included)."""
    adj = np.asarray(adj) != 0
    indeg = adj.sum(axis=0).astype(int)
    ready = [v for v in range(adj.shape[0]) if indeg[v] == 0]
    order = []
    while ready:
        u = ready.pop(0)
        order.append(u)
        for v in np.flatnonzero(adj[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(int(v))
    return order if len(order) == adj.shape[0] else None


def build_support_map(mask: StructureMask) -> SupportMap:
    rows, cols = np.nonzero(mask.stacked())
    d = mask.dim
    entries = tuple(Coord(int(r) // d, int(r) % d, int(c)) for r, c in zip(rows, cols))
    return SupportMap(entries, d, mask.lag_order)


def embed_params(theta, smap: SupportMap) -> ParamSet:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != smap.size:
        raise DimensionError(f"theta has length {theta.size}, support map has {smap.size} entries")
    stacked = np.zeros(((smap.lag_order + 1) * smap.dim, smap.dim))
    stacked[smap.rows, smap.cols] = theta
    return ParamSet.from_stacked(stacked, smap.dim)


def extract_params(params: ParamSet, smap: SupportMap) -> np.ndarray:
    stacked = params.stacked()
    if stacked.shape != ((smap.lag_order + 1) * smap.dim, smap.dim):
        raise DimensionError("parameter set and support map disagree in d or p")
    outside = stacked.copy()
    outside[smap.rows, smap.cols] = 0.0
    if np.any(outside != 0):
        r, c = np.argwhere(outside != 0)[0]
        raise SupportError(f"nonzero coefficient at stacked position ({r}, {c}) outside the support")
    return stacked[smap.rows, smap.cols].copy()


def _check_dims(data: TrajectoryDataset, dim: int, lag_order: int):
    if data.dim != dim or data.lag_order != lag_order:
        raise DimensionError(
            f"dataset has d={data.dim}, p={data.lag_order}; parameters have d={dim}, p={lag_order}"
        )


def residuals(data: TrajectoryDataset, params: ParamSet) -> np.ndarray:
    """Structural residuals at every counted step, shape ``(rows, d)``."""
    _check_dims(data, params.dim, params.lag_order)
    y, design = data.design
    return y - design @ params.stacked()


def loss(data: TrajectoryDataset, params: ParamSet) -> float:
    """Sum of squared structural residuals over trajectories, steps ``t >= p`` and variables."""
    r = residuals(data, params)
    return float(np.einsum("ri,ri->", r, r))


def loss_gradient(data: TrajectoryDataset, smap: SupportMap, theta) -> np.ndarray:
    """Gradient of ``loss(data, embed_params(theta, smap))`` in ``theta``."""
    params = embed_params(theta, smap)
    if smap.size == 0:
        _check_dims(data, params.dim, params.lag_order)
        return np.zeros(0)
    r = residuals(data, params)
    _, design = data.design
    # d/dB ||Y - D B||^2 = -2 D^T R, restricted to the free entries
    dr = design[:, smap.rows]
    return -2.0 * np.einsum("rk,rk->k", dr, r[:, smap.cols])


def simulate(
    mask: StructureMask,
    params: ParamSet,
    sigma: float,
    n_traj: int,
    horizon: int,
    warmup: int = 10,
    seed: int | None = None,
    init: np.ndarray | None = None,
    init_scale: float = 1.0,
) -> TrajectoryDataset:
    """Draw trajectories from ``X_t = (sum_l X_{t-l} A_l + Z_t)(I - W)^{-1}``.

    The first ``p`` slices are ``init`` if given (shape ``(n_traj, p, d)``),
    otherwise iid ``N(0, init_scale^2)``; the first ``warmup`` slices of the
    full sequence are discarded. Initial slices do not scale with ``sigma`` so
    that ``sigma = 0`` still yields informative deterministic dynamics.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if not params.supported_on(mask):
        raise SupportError("params have nonzero entries outside the mask")
    d, p = mask.dim, mask.lag_order
    if params.dim != d or params.lag_order != p:
        raise DimensionError("mask and params disagree in d or p")
    if horizon < p + 1:
        raise DimensionError(f"horizon must be at least p + 1 = {p + 1}")
    i_minus_w = np.eye(d) - params.w
    # a DAG adjacency is nilpotent, so I - W is unit-triangular up to permutation
    assert abs(np.linalg.det(i_minus_w)) > 1e-12, "I - W is singular"
    rng = np.random.default_rng(seed)
    total = warmup + horizon
    x = np.zeros((n_traj, total, d))
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (n_traj, p, d):
            raise DimensionError(f"init must have shape {(n_traj, p, d)}, got {init.shape}")
        x[:, :p, :] = init
    else:
        x[:, :p, :] = init_scale * rng.standard_normal((n_traj, p, d))
    for t in range(p, total):
        rhs = sigma * rng.standard_normal((n_traj, d))
        for l in range(1, p + 1):
            rhs += x[:, t - l, :] @ params.a[l - 1]
        x[:, t, :] = np.linalg.solve(i_minus_w.T, rhs.T).T
    return TrajectoryDataset(x[:, warmup:, :], p)


def random_dag_params(
    dim: int,
    lag_order: int,
    n_intra: int,
    n_inter: int,
    rng: np.random.Generator,
    low: float = 0.3,
    high: float = 0.8,
    max_radius: float = 0.95,
) -> tuple[StructureMask, ParamSet]:
    """Random acyclic structure with the given edge counts and stable lag dynamics."""
    order = rng.permutation(dim)
    pos = np.empty(dim, dtype=int)
    pos[order] = np.arange(dim)
    intra = [(j, i) for j in range(dim) for i in range(dim) if pos[j] < pos[i]]
    inter = [(l, j, i) for l in range(lag_order) for j in range(dim) for i in range(dim)]
    if n_intra > len(intra) or n_inter > len(inter):
        raise ValueError("requested more edges than the structure admits")
    e_w = np.zeros((dim, dim), dtype=np.int8)
    e_a = np.zeros((lag_order, dim, dim), dtype=np.int8)
    w = np.zeros((dim, dim))
    a = np.zeros((lag_order, dim, dim))

    def draw():
        return rng.choice([-1.0, 1.0]) * rng.uniform(low, high)

    for k in rng.choice(len(intra), n_intra, replace=False):
        j, i = intra[k]
        e_w[j, i] = 1
        w[j, i] = draw()
    for k in rng.choice(len(inter), n_inter, replace=False):
        l, j, i = inter[k]
        e_a[l, j, i] = 1
        a[l, j, i] = draw()
    if lag_order:
        # shrink lag coefficients until the companion form is stable
        inv = np.linalg.inv(np.eye(dim) - w)
        while True:
            comp = np.zeros((lag_order * dim, lag_order * dim))
            for l in range(lag_order):
                comp[l * dim : (l + 1) * dim, :dim] = a[l] @ inv
            if lag_order > 1:
                comp[: (lag_order - 1) * dim, dim:] = np.eye((lag_order - 1) * dim)
            if np.max(np.abs(np.linalg.eigvals(comp))) < max_radius:
                break
            a *= 0.9
    return StructureMask(e_w, e_a), ParamSet(w, a)
