"""Exact L0-penalized, DAG-constrained least squares structure learning.

The objective is

    loss(data, (W, A)) + lambda_w * #intra edges + lambda_a * #lag edges

over acyclic intra-slice graphs and arbitrary lag graphs. Without the
acyclicity constraint and the structure exclusions the problem separates by
target variable, so every branch-and-bound node is bounded by the sum of exact
per-column optima that respect the node's fixed edge indicators. Per-column
optima come from a table of all candidate regressor subsets for that column.
Nodes whose combined optimum contains a cycle are branched on the cycle edge
with the largest fitted coefficient (include first); the include branch
immediately excludes every edge that would close a cycle. Exclusions act as
no-good cuts: a node whose optimum is an excluded structure is branched on.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from dbnmix.data_io import SubsampleSpec, subsample
from dbnmix.errors import BoundsError, NoSolutionError
from dbnmix.lsem import ParamSet, StructureMask, TrajectoryDataset, loss

logger = logging.getLogger(__name__)

# per-column regressor count above which subset tables become too large
MAX_COLUMN_CANDIDATES = 16
# oracle refuses to enumerate more masks than this
ORACLE_MAX_MASKS = 1 << 20


@dataclass
class IpConfig:
    lambda_w: float
    lambda_a: float
    exclusions: list[StructureMask] = field(default_factory=list)
    time_limit: float = 0.0

    def __post_init__(self):
        if self.lambda_w < 0 or self.lambda_a < 0:
            raise ValueError("penalties must be nonnegative")
        if self.time_limit < 0:
            raise ValueError("time_limit must be >= 0")


@dataclass
class IpSolution:
    mask: StructureMask
    params: ParamSet
    objective: float
    proven_optimal: bool
    loss: float = float("nan")
    nodes: int = 0

    def to_dict(self) -> dict:
        d = self.mask.dim
        return {
            "dim": d,
            "lag_order": self.mask.lag_order,
            "intra_parents": {str(i): [int(j) for j in np.flatnonzero(self.mask.e_w[:, i])] for i in range(d)},
            "lag_parents": [
                {str(i): [int(j) for j in np.flatnonzero(self.mask.e_a[l, :, i])] for i in range(d)}
                for l in range(self.mask.lag_order)
            ],
            "w": self.params.w.tolist(),
            "a": self.params.a.tolist(),
            "loss": self.loss,
            "objective": self.objective,
            "proven_optimal": self.proven_optimal,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IpSolution":
        d, p = doc["dim"], doc["lag_order"]
        e_w = np.zeros((d, d), dtype=np.int8)
        e_a = np.zeros((p, d, d), dtype=np.int8)
        for i, parents in doc["intra_parents"].items():
            e_w[parents, int(i)] = 1
        for l, lag in enumerate(doc["lag_parents"]):
            for i, parents in lag.items():
                e_a[l, parents, int(i)] = 1
        params = ParamSet(np.array(doc["w"], dtype=float), np.array(doc["a"], dtype=float).reshape(p, d, d))
        return cls(StructureMask(e_w, e_a), params, float(doc["objective"]), bool(doc["proven_optimal"]), float(doc["loss"]))


def penalty(mask: StructureMask, cfg: IpConfig) -> float:
    return cfg.lambda_w * mask.n_intra + cfg.lambda_a * mask.n_inter


def _column_fit(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    if x.shape[1] == 0:
        return np.zeros(0)
    try:
        coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    except np.linalg.LinAlgError:
        # retry on a jittered normal system
        g = x.T @ x
        g += 1e-10 * max(np.trace(g) / len(g), 1.0) * np.eye(len(g))
        coef = np.linalg.solve(g, x.T @ y)
    return coef


def fit_weights_given_support(data: TrajectoryDataset, mask: StructureMask) -> tuple[ParamSet, float]:
    """Least squares coefficients restricted to ``mask``, column by column.

    Rank-deficient designs get the minimum-norm solution.
    """
    y, design = data.design
    allowed = mask.stacked().astype(bool)
    stacked = np.zeros(allowed.shape)
    for i in range(data.dim):
        rows = np.flatnonzero(allowed[:, i])
        stacked[rows, i] = _column_fit(y[:, i], design[:, rows])
    params = ParamSet.from_stacked(stacked, data.dim)
    return params, loss(data, params)


def default_penalty(data: TrajectoryDataset, n_eff: int | None = None) -> float:
    """``sigma2_hat * ln(n_eff)`` with ``sigma2_hat`` from the saturated fit.

    The saturated fit regresses each variable on every other same-slice
    variable and every lagged variable. ``n_eff`` defaults to the number of
    rows entering the loss.
    """
    y, design = data.design
    d = data.dim
    rss = 0.0
    n_par = 0
    for i in range(d):
        rows = [r for r in range(design.shape[1]) if r != i]
        coef = _column_fit(y[:, i], design[:, rows])
        rss += float(np.sum((y[:, i] - design[:, rows] @ coef) ** 2))
        n_par += len(rows)
    dof = max(data.n_rows * d - n_par, 1)
    n_eff = data.n_rows if n_eff is None else n_eff
    return rss / dof * math.log(max(n_eff, 2))


class _ColumnTable:
    """Objective of every regressor subset for one target column.

    Bit ``b`` of a subset code selects stacked row ``cand[b]``; candidates are
    in ascending stacked-row order, which is also the global tie-break order.
    Subset losses are residuals in the triangular factor ``R`` of the full
    design (``D = Q R``); the target is itself a design column, so
    ``loss(S) = min ||R[:, i] - R[:, S] b||^2`` up to the rounding-level
    remainder ``base``.
    """

    def __init__(self, i: int, dim: int, lag_order: int, r_factor, base, lambda_w, lambda_a):
        self.i = i
        self.cand = np.array([r for r in range((lag_order + 1) * dim) if r != i], dtype=int)
        k = len(self.cand)
        if k > MAX_COLUMN_CANDIDATES:
            raise BoundsError(
                f"column {i} has {k} candidate parents; exact solver supports at most {MAX_COLUMN_CANDIDATES}"
            )
        self.k = k
        n_sub = 1 << k
        codes = np.arange(n_sub, dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(k)) & 1).astype(bool)
        self.codes = codes
        n_intra = bits[:, self.cand < dim].sum(axis=1)
        n_inter = bits[:, self.cand >= dim].sum(axis=1)
        # bit-reversed code: integer order equals lexicographic order of the column's indicators
        self.lex = np.zeros(n_sub, dtype=np.int64)
        for b in range(k):
            self.lex |= ((codes >> b) & 1) << (k - 1 - b)
        self.coef = np.zeros((n_sub, k))
        z = r_factor[:, i]
        rc = r_factor[:, self.cand]
        losses = np.full(n_sub, float(z @ z) + base)
        sizes = bits.sum(axis=1)
        for s in range(1, k + 1):
            sel = np.flatnonzero(sizes == s)
            idx = np.array([np.flatnonzero(bits[code]) for code in sel])
            rs = np.transpose(rc[:, idx], (1, 0, 2))  # (n_sel, K, s)
            beta = np.einsum("qsk,k->qs", np.linalg.pinv(rs), z)
            res = z[None, :] - np.einsum("qks,qs->qk", rs, beta)
            losses[sel] = np.einsum("qk,qk->q", res, res) + base
            self.coef[np.repeat(sel, s), idx.ravel()] = beta.ravel()
        self.loss = losses
        self.score = losses + lambda_w * n_intra + lambda_a * n_inter

    def best(self, forced: int, banned: int, tol: float) -> int:
        ok = ((self.codes & forced) == forced) & ((self.codes & banned) == 0)
        idx = np.flatnonzero(ok)
        scores = self.score[idx]
        m = scores.min()
        tied = idx[scores <= m + tol]
        return int(tied[np.argmin(self.lex[tied])])


def _tol(value: float) -> float:
    return 1e-12 * (1.0 + abs(value))


def _find_cycle(adj: np.ndarray) -> list[tuple[int, int]] | None:
    """Edges of one directed cycle, or ``None``."""
    d = adj.shape[0]
    color = [0] * d
    parent = [-1] * d
    for root in range(d):
        if color[root]:
            continue
        stack = [(root, iter(np.flatnonzero(adj[root])))]
        color[root] = 1
        while stack:
            u, it = stack[-1]
            v = next(it, None)
            if v is None:
                color[u] = 2
                stack.pop()
                continue
            v = int(v)
            if color[v] == 0:
                color[v] = 1
                parent[v] = u
                stack.append((v, iter(np.flatnonzero(adj[v]))))
            elif color[v] == 1:
                cycle = [(u, v)]
                x = u
                while x != v:
                    cycle.append((parent[x], x))
                    x = parent[x]
                return cycle[::-1]
    return None


def _reaches(adj: np.ndarray, src: int, dst: int) -> bool:
    seen = {src}
    stack = [src]
    while stack:
        u = stack.pop()
        if u == dst:
            return True
        for v in np.flatnonzero(adj[u]):
            if int(v) not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return False


class _BranchAndBound:
    def __init__(self, data: TrajectoryDataset, cfg: IpConfig):
        self.data = data
        self.cfg = cfg
        self.d = data.dim
        self.p = data.lag_order
        y, design = data.design
        q, r = np.linalg.qr(design)
        base = np.sum((y - q @ (q.T @ y)) ** 2, axis=0)
        self.tables = [
            _ColumnTable(i, self.d, self.p, r, float(base[i]), cfg.lambda_w, cfg.lambda_a) for i in range(self.d)
        ]
        # bit position of intra edge j -> i inside column i's table
        self.intra_bit = np.full((self.d, self.d), -1, dtype=int)
        for i, tab in enumerate(self.tables):
            for b, r in enumerate(tab.cand):
                if r < self.d:
                    self.intra_bit[r, i] = b
        for m in cfg.exclusions:
            if m.dim != self.d or m.lag_order != self.p:
                raise BoundsError("excluded mask has the wrong dimensions")
        self.excluded = {m.key() for m in cfg.exclusions}
        self.best_obj = math.inf
        self.best_key = None
        self.best_codes = None
        self.nodes = 0

    def _mask_of(self, codes) -> np.ndarray:
        stacked = np.zeros(((self.p + 1) * self.d, self.d), dtype=np.int8)
        for i, (tab, code) in enumerate(zip(self.tables, codes)):
            for b in range(tab.k):
                if code >> b & 1:
                    stacked[tab.cand[b], i] = 1
        return stacked

    def _included_graph(self, forced) -> np.ndarray:
        adj = np.zeros((self.d, self.d), dtype=bool)
        for i, f in enumerate(forced):
            for j in range(self.d):
                b = self.intra_bit[j, i]
                if b >= 0 and f >> b & 1:
                    adj[j, i] = True
        return adj

    def _include(self, forced, banned, j, i):
        forced = list(forced)
        banned = list(banned)
        forced[i] |= 1 << self.intra_bit[j, i]
        adj = self._included_graph(forced)
        # ban every undecided intra edge u -> v that would close a cycle (v reaches u)
        for v in range(self.d):
            for u in range(self.d):
                b = self.intra_bit[u, v]
                if b < 0 or (forced[v] | banned[v]) >> b & 1:
                    continue
                if _reaches(adj, v, u):
                    banned[v] |= 1 << b
        return tuple(forced), tuple(banned)

    def _undecided(self, forced, banned, i, b) -> bool:
        return not ((forced[i] | banned[i]) >> b & 1)

    def solve(self) -> tuple[list[int] | None, bool]:
        start = time.monotonic()
        root = (tuple([0] * self.d), tuple([0] * self.d))
        stack = [root]
        timed_out = False
        while stack:
            if self.cfg.time_limit and time.monotonic() - start > self.cfg.time_limit:
                timed_out = True
                break
            forced, banned = stack.pop()
            self.nodes += 1
            codes = []
            bound = 0.0
            for i, tab in enumerate(self.tables):
                code = tab.best(forced[i], banned[i], _tol(tab.score.min()))
                codes.append(code)
                bound += tab.score[code]
            if bound > self.best_obj + _tol(self.best_obj):
                continue
            stacked = self._mask_of(codes)
            cycle = _find_cycle(stacked[: self.d].astype(bool))
            if cycle is None:
                key = tuple(int(v) for v in stacked.ravel())
                if key not in self.excluded:
                    if self.best_key is None or bound < self.best_obj - _tol(self.best_obj) or (
                        bound <= self.best_obj + _tol(self.best_obj) and key < self.best_key
                    ):
                        self.best_obj, self.best_key, self.best_codes = bound, key, codes
                    continue
                child = self._branch_excluded(forced, banned, codes)
                if child is None:
                    continue
                stack.extend(child)
                continue
            # branch on the undecided cycle edge with the largest fitted coefficient
            best_edge, best_mag = None, -1.0
            for j, i in cycle:
                b = self.intra_bit[j, i]
                if self._undecided(forced, banned, i, b):
                    mag = abs(self.tables[i].coef[codes[i], b])
                    if mag > best_mag:
                        best_edge, best_mag = (j, i), mag
            assert best_edge is not None, "cycle made only of included edges"
            j, i = best_edge
            b = self.intra_bit[j, i]
            exc = (forced, tuple(bn | (1 << b) if k == i else bn for k, bn in enumerate(banned)))
            stack.append(exc)
            stack.append(self._include(forced, banned, j, i))
        return self.best_codes, not timed_out

    def _branch_excluded(self, forced, banned, codes):
        """Children of a node whose optimum is an excluded structure (include branch popped first)."""
        pick, pick_mag = None, -1.0
        for i, tab in enumerate(self.tables):
            for b in range(tab.k):
                if codes[i] >> b & 1 and self._undecided(forced, banned, i, b):
                    mag = abs(tab.coef[codes[i], b])
                    if mag > pick_mag:
                        pick, pick_mag = (i, b), mag
        if pick is None:
            for i, tab in enumerate(self.tables):
                for b in range(tab.k):
                    if self._undecided(forced, banned, i, b):
                        pick = (i, b)
                        break
                if pick is not None:
                    break
        if pick is None:
            return None
        i, b = pick
        exc = (forced, tuple(bn | (1 << b) if k == i else bn for k, bn in enumerate(banned)))
        r = self.tables[i].cand[b]
        if r < self.d:
            inc = self._include(forced, banned, int(r), i)
        else:
            inc = (tuple(f | (1 << b) if k == i else f for k, f in enumerate(forced)), banned)
        return [exc, inc]


def _finalize(data: TrajectoryDataset, mask: StructureMask, cfg: IpConfig, proven: bool, nodes: int = 0) -> IpSolution:
    params, fit_loss = fit_weights_given_support(data, mask)
    return IpSolution(mask, params, fit_loss + penalty(mask, cfg), proven, fit_loss, nodes)


def solve_ip(data: TrajectoryDataset, cfg: IpConfig) -> IpSolution:
    """Global minimizer of the penalized structure problem by branch-and-bound.

    ``proven_optimal`` is false only when ``cfg.time_limit`` stopped the search,
    in which case the best incumbent found so far is returned.
    """
    bnb = _BranchAndBound(data, cfg)
    codes, complete = bnb.solve()
    if codes is None:
        if complete:
            raise NoSolutionError("every admissible structure is excluded")
        raise NoSolutionError(f"time limit {cfg.time_limit}s reached before any feasible structure")
    mask = StructureMask.from_stacked(bnb._mask_of(codes), data.dim)
    logger.debug("branch-and-bound finished: %d nodes, objective %.6g", bnb.nodes, bnb.best_obj)
    return _finalize(data, mask, cfg, complete, bnb.nodes)


def enumerate_dags(dim: int):
    """Every acyclic ``dim x dim`` adjacency matrix (as int8 arrays)."""
    pairs = [(j, i) for j in range(dim) for i in range(dim) if j != i]
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        adj = np.zeros((dim, dim), dtype=np.int8)
        for (j, i), b in zip(pairs, bits):
            adj[j, i] = b
        if _find_cycle(adj.astype(bool)) is None:
            yield adj


def enumerate_oracle(data: TrajectoryDataset, cfg: IpConfig) -> IpSolution:
    """Brute-force optimum over all acyclic intra graphs and all lag graphs.

    Column fits are memoized by (column, parent set); every full structure is
    still scored individually. Ties go to the lexicographically smallest mask.
    """
    d, p = data.dim, data.lag_order
    if d > 4 or p > 2:
        raise BoundsError(f"enumeration oracle is limited to d <= 4 and p <= 2, got d={d}, p={p}")
    dags = list(enumerate_dags(d))
    n_masks = len(dags) * 2 ** (d * d * p)
    if n_masks > ORACLE_MAX_MASKS:
        raise BoundsError(f"enumeration oracle would visit {n_masks} structures (limit {ORACLE_MAX_MASKS})")
    y, design = data.design
    excluded = {m.key() for m in cfg.exclusions}
    cache: dict[tuple[int, tuple[int, ...]], float] = {}

    def column_loss(i, rows):
        key = (i, rows)
        if key not in cache:
            x = design[:, list(rows)]
            r = y[:, i] - x @ _column_fit(y[:, i], x)
            cache[key] = float(r @ r)
        return cache[key]

    best_obj, best_key = math.inf, None
    for e_w in dags:
        for bits in itertools.product((0, 1), repeat=d * d * p):
            stacked = np.concatenate([e_w, np.array(bits, dtype=np.int8).reshape(p * d, d)], axis=0)
            key = tuple(int(v) for v in stacked.ravel())
            if key in excluded:
                continue
            obj = cfg.lambda_w * int(e_w.sum()) + cfg.lambda_a * sum(bits)
            for i in range(d):
                obj += column_loss(i, tuple(int(r) for r in np.flatnonzero(stacked[:, i])))
            if best_key is None or obj < best_obj - _tol(best_obj) or (
                obj <= best_obj + _tol(best_obj) and key < best_key
            ):
                best_obj, best_key = obj, key
    if best_key is None:
        raise NoSolutionError("every admissible structure is excluded")
    stacked = np.array(best_key, dtype=np.int8).reshape((p + 1) * d, d)
    return _finalize(data, StructureMask.from_stacked(stacked, d), cfg, True)


def iter_initial_solutions(data: TrajectoryDataset, n_models: int, spec: SubsampleSpec, cfg: IpConfig):
    """Yield ``(m, solution)`` for ``m = 1..n_models``; see :func:`initial_solutions`."""
    if n_models < 1:
        raise BoundsError(f"need at least one model, got {n_models}")
    masks: list[StructureMask] = []
    for m in range(1, n_models + 1):
        sub = subsample(data, SubsampleSpec(spec.subsample_size, spec.seed + m))
        sol = solve_ip(sub, replace(cfg, exclusions=list(cfg.exclusions) + masks))
        logger.info("model %d: %r objective=%.6g", m, sol.mask, sol.objective)
        masks.append(sol.mask)
        yield m, sol


def initial_solutions(
    data: TrajectoryDataset, n_models: int, spec: SubsampleSpec, cfg: IpConfig
) -> list[IpSolution]:
    """Solve on ``n_models`` subsamples, excluding every earlier structure from later solves.

    Subsample ``m`` (1-based) uses seed ``spec.seed + m``.
    """
    return [sol for _, sol in iter_initial_solutions(data, n_models, spec, cfg)]
