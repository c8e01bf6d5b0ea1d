"""Two-variable convex dual of the Renyi-ball CGVI problem.

With a point-mass prior at the point estimate, the expected loss collapses to a
scalar ``E`` and the dual objective is

    f(mu, lam) = mu + eps * lam + lam * ((1 + (E - mu) / (lam * beta)) ** beta - 1)

for ``beta < 0``. The power term is the perspective of the isoelastic
disutility ``v(x) = (1 + x / beta) ** beta - 1`` evaluated at ``E - mu``; it is
finite only where the base is positive, i.e. ``mu > E - |beta| * lam``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from dbnmix.errors import DomainError

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_EPS = 2.0**-52


@dataclass(frozen=True)
class DualConfig:
    epsilon: float
    beta: float
    lambda_min: float
    reference_loss: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.beta < 0:
            raise ValueError(f"beta must be < 0, got {self.beta}")
        if not self.lambda_min > 0:
            raise ValueError(f"lambda_min must be > 0, got {self.lambda_min}")

    @classmethod
    def with_default_floor(cls, epsilon: float, beta: float, reference_loss: float, rel: float = 1e-3, floor: float = 1e-8):
        """``lambda_min = max(rel * |E|, floor)``."""
        return cls(epsilon, beta, max(rel * abs(reference_loss), floor), reference_loss)


@dataclass(frozen=True)
class DualSolution:
    mu: float
    lam: float
    objective: float
    converged: bool
    beta: float
    epsilon: float

    def to_dict(self) -> dict:
        return asdict(self)


def dual_base(mu: float, lam: float, cfg: DualConfig) -> float:
    return 1.0 + (cfg.reference_loss - mu) / (lam * cfg.beta)


def dual_objective(mu: float, lam: float, cfg: DualConfig) -> float:
    """Dual objective; ``math.inf`` where the isoelastic base is not positive."""
    if not lam > 0:
        raise DomainError(f"lambda must be > 0, got {lam}")
    base = dual_base(mu, lam, cfg)
    if not base > 0:
        return math.inf
    try:
        power = base**cfg.beta
    except OverflowError:
        return math.inf
    return mu + cfg.epsilon * lam + lam * (power - 1.0)


def _golden_section(f, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 500) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[lo, hi]``; endpoints are compared too."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    candidates = [(fc, c), (fd, d), (f(lo), lo), (f(hi), hi)]
    fx, x = min(candidates)
    return x, fx


def _best_mu(lam: float, cfg: DualConfig) -> float:
    # d f / d mu = 1 - base ** (beta - 1) vanishes at base = 1
    return cfg.reference_loss


def solve_dual(
    cfg: DualConfig,
    init_mu: float | None = None,
    init_lambda: float | None = None,
    lambda_max: float | None = None,
    max_rounds: int = 50,
) -> DualSolution:
    """Minimize the dual over ``lam >= lambda_min`` and feasible ``mu``.

    Golden-section search over ``log(lam)`` with ``mu`` profiled out at its
    stationary point, followed by alternating 1-D refinements in ``mu`` (over
    its feasible half-line) and ``lam`` until the objective stops decreasing.
    ``init_mu``/``init_lambda`` seed the comparison point and widen the bracket.
    """
    lam_lo = cfg.lambda_min
    lam_hi = lambda_max or max(1e3 * lam_lo, 10.0 * abs(cfg.reference_loss), 1.0)
    if init_lambda is not None and init_lambda > lam_hi:
        lam_hi = 2.0 * init_lambda

    def profile(log_lam):
        lam = math.exp(log_lam)
        return dual_objective(_best_mu(lam, cfg), lam, cfg)

    log_lam, best = _golden_section(profile, math.log(lam_lo), math.log(lam_hi))
    lam = max(math.exp(log_lam), lam_lo)
    mu = _best_mu(lam, cfg)
    best = dual_objective(mu, lam, cfg)
    if init_mu is not None and init_lambda is not None and init_lambda >= lam_lo:
        f0 = dual_objective(init_mu, init_lambda, cfg)
        if f0 < best - 4.0 * _EPS * (1.0 + abs(best)):
            mu, lam, best = init_mu, init_lambda, f0

    def improves(value):
        # ignore round-off sized gains so a flat direction does not drift the incumbent;
        # the power term carries absolute error of order eps * lam
        return value < best - 16.0 * _EPS * (1.0 + abs(best) + lam)

    converged = False
    for _ in range(max_rounds):
        prev = best
        # mu lives on (E - |beta| lam, inf); search a bracket around the incumbent
        width = abs(cfg.beta) * lam
        lo = cfg.reference_loss - width * (1.0 - 1e-12)
        hi = max(mu, cfg.reference_loss) + width
        mu_new, f_mu = _golden_section(lambda m: dual_objective(m, lam, cfg), lo, hi)
        if improves(f_mu):
            mu, best = mu_new, f_mu
        log_new, f_lam = _golden_section(
            lambda ll: dual_objective(mu, math.exp(ll), cfg), math.log(lam_lo), math.log(max(lam_hi, lam))
        )
        lam_new = max(math.exp(log_new), lam_lo)
        f_lam = dual_objective(mu, lam_new, cfg)
        if improves(f_lam):
            lam, best = lam_new, f_lam
        if prev - best < 1e-12 * (1.0 + abs(best)):
            converged = True
            break
    assert dual_base(mu, lam, cfg) > 0
    return DualSolution(mu, lam, best, converged, cfg.beta, cfg.epsilon)
