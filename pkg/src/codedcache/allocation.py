"""Cache allocations: popularity-based (PCA) and numerically optimized (OCA)."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cache import CacheDistribution, validate
from .errors import DomainError
from .rates import DEFAULT_TIE_INDEX, RateEvaluator, _stats

OBJECTIVES = ("MAN", "PCC")
FD_STEP = 1e-5
STEP_TOL = 1e-7
MAX_ITER = 500
ARMIJO = 1e-4
# stop when the last STALL_WINDOW iterations improved the objective by less than this
STALL_TOL = 1e-9
STALL_WINDOW = 10


@dataclass
class AllocationResult:
    Q: CacheDistribution
    achieved_rate: float
    method: str  # "OCA" | "PCA"
    solver_trace: dict = field(default_factory=dict)


def objective_rate(model, Q, objective: str, tie_index: str = DEFAULT_TIE_INDEX) -> float:
    if objective not in OBJECTIVES:
        raise DomainError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    ev = RateEvaluator(model, Q, tie_index=tie_index)
    if objective == "MAN":
        return ev.rate_man()
    return ev.breakdown().rate_pcc


def _check_M(stats, M):
    if not 0 <= M <= stats.N:
        raise DomainError(f"M must lie in [0, N={stats.N}], got {M}")


def pca_count_range(N: int, B: int, M: float) -> range:
    lo = max(1, math.ceil(M * B - 1e-12))
    return range(lo, N * B + 1)


def pca_distribution(model, M: float, c: int) -> CacheDistribution:
    """Cache the c most popular chunks (by p_i p_ij) at the common fraction MB/c."""
    stats = _stats(model)
    _check_M(stats, M)
    N, B = stats.N, stats.B
    if c not in pca_count_range(N, B, M):
        raise DomainError(f"c must lie in [ceil(MB), NB] = [{math.ceil(M * B - 1e-12)}, {N * B}], got {c}")
    pop = np.asarray(stats.chunk_popularity, dtype=float).reshape(-1)
    # stable sort on -pop keeps row-major (file, chunk) order among ties
    order = np.argsort(-pop, kind="stable")[:c]
    q = np.zeros(N * B)
    q[order] = M * B / c
    if c == N * B and M == N:
        q[:] = 1.0
    return CacheDistribution(q.reshape(N, B), M, meta={"method": "PCA", "c": c})


def _lex_key(rate, q):
    return (rate, tuple(np.asarray(q).reshape(-1)))


def optimize_pca(model, M: float, objective: str = "PCC", tie_index: str = DEFAULT_TIE_INDEX) -> AllocationResult:
    stats = _stats(model)
    _check_M(stats, M)
    best = None
    rates = {}
    for c in pca_count_range(stats.N, stats.B, M):
        Q = pca_distribution(stats, M, c)
        r = objective_rate(stats, Q, objective, tie_index)
        rates[c] = r
        if best is None or _lex_key(r, Q.q) < _lex_key(best[0], best[1].q):
            best = (r, Q, c)
    r, Q, c = best
    return AllocationResult(Q, r, "PCA", {"c": c, "sweep": rates, "evaluations": len(rates)})


def project_capped_simplex(x: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {y in [0,1]^n : sum y = total}."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if not 0 <= total <= n:
        raise DomainError(f"total {total} outside [0, {n}]")
    if total == 0:
        return np.zeros_like(x)
    if total == n:
        return np.ones_like(x)
    lo, hi = float(x.min()) - 1.0, float(x.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(x - mid, 0.0, 1.0).sum() > total:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16 * max(1.0, abs(mid)):
            break
    y = np.clip(x - 0.5 * (lo + hi), 0.0, 1.0)
    # spread the tiny residual over free coordinates so the sum is exact to rounding
    free = (y > 0) & (y < 1)
    if free.any():
        y[free] += (total - y.sum()) / free.sum()
        y = np.clip(y, 0.0, 1.0)
    return y


def _numgrad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] = min(1.0, x[i] + h)
        xm[i] = max(0.0, x[i] - h)
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
    return g


def projected_descent(f, x0: np.ndarray, total: float, max_iter: int = MAX_ITER,
                      stall_tol: float = STALL_TOL) -> tuple[np.ndarray, float, dict]:
    """Projected gradient descent with Armijo backtracking on the capped simplex."""
    x = project_capped_simplex(x0, total)
    fx = f(x)
    history = [fx]
    t = 1.0
    it = 0
    step_norm = math.inf
    for it in range(1, max_iter + 1):
        g = _numgrad(f, x)
        accepted = False
        for _ in range(40):
            y = project_capped_simplex(x - t * g, total)
            d = y - x
            step_norm = float(np.linalg.norm(d))
            if step_norm < STEP_TOL:
                break
            fy = f(y)
            if fy <= fx + ARMIJO * float(g @ d):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        x, fx = y, fy
        history.append(fx)
        t = min(t * 2.0, 1e6)
        if len(history) > STALL_WINDOW and history[-STALL_WINDOW - 1] - fx < stall_tol:
            break
    return x, fx, {"iterations": it, "step_norm": step_norm}


def _oca_job(args):
    stats, M, objective, tie_index, x0, max_iter = args
    N, B = stats.N, stats.B

    def f(flat):
        return objective_rate(stats, CacheDistribution(flat.reshape(N, B), M), objective, tie_index)

    x, fx, info = projected_descent(f, x0, M * B, max_iter)
    return x, fx, info


def optimize_oca(model, M: float, objective: str = "PCC", restarts: int = 0, seed: int = 0, *,
                 max_iter: int = MAX_ITER, pca_starts: int | None = None, extra_starts=(),
                 tie_index: str = DEFAULT_TIE_INDEX, workers: int = 1) -> AllocationResult:
    """Multi-start projected descent; the best PCA point is always a start.

    ``pca_starts`` limits warm starts to that many best PCA counts (None: all).
    """
    stats = _stats(model)
    _check_M(stats, M)
    N, B = stats.N, stats.B
    total = M * B
    pca = optimize_pca(stats, M, objective, tie_index)
    if M == 0 or M == N:
        return AllocationResult(pca.Q, pca.achieved_rate, "OCA", {"starts": 0, "iterations": 0, "step_norm": 0.0})

    cs = sorted(pca.solver_trace["sweep"], key=lambda c: (pca.solver_trace["sweep"][c], c))
    if pca_starts is not None:
        cs = cs[:max(1, pca_starts)]
    starts = [pca_distribution(stats, M, c).q.reshape(-1) for c in cs]
    starts.append(np.full(N * B, total / (N * B)))
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        starts.append(project_capped_simplex(rng.random(N * B) * 2 * total / (N * B), total))
    for s in extra_starts:
        starts.append(project_capped_simplex(np.asarray(s, dtype=float).reshape(-1), total))

    jobs = [(stats, M, objective, tie_index, s, max_iter) for s in starts]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_oca_job, jobs))
    else:
        results = [_oca_job(j) for j in jobs]

    # candidates: local-search end points plus the PCA optimum itself
    cands = [(pca.achieved_rate, pca.Q.q.reshape(-1))] + [(fx, x) for x, fx, _ in results]
    rate, x = min(cands, key=lambda c: _lex_key(*c))
    Q = CacheDistribution(x.reshape(N, B), M, meta={"method": "OCA"})
    rate = objective_rate(stats, Q, objective, tie_index)
    assert validate(Q), validate(Q)
    trace = {
        "starts": len(starts),
        "restarts": restarts,
        "iterations": sum(r[2]["iterations"] for r in results),
        "step_norm": [r[2]["step_norm"] for r in results],
        "pca_rate": pca.achieved_rate,
    }
    return AllocationResult(Q, rate, "OCA", trace)
