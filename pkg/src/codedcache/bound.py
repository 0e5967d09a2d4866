"""Genie-aided cut-set lower bound on the average delivery rate.

For a user composition k the bound maximizes, over n_j in [N], v_j in
(0, k_j n_j r_{n_j j}] and zt_j in (0, f(n_j, v_j)],

    prod_j f'_j(k_j, n_j, v_j) * prod_j f''_j(n_j, v_j, zt_j)
        * max_{z_j <= ceil(min(zt_j, v_j))} sum_j z_j (1 - MB / min_j floor(n_j / z_j)).

Search strategy. The inner term only depends on (n, z), and every factor of
the product only on its own coordinate. For an integer z_j the feasible
(v_j, zt_j) are those with min(zt_j, v_j) > z_j - 1, and f'' decreases in
zt_j, so the best zt_j sits just above max(z_j - 1, 0). That leaves

    F_j(k_j, n_j, z_j) = sup_{v_j} f'_j(v_j) f''_j(v_j, (z_j - 1)^+)

as a one-dimensional search per coordinate (log-spaced grid near the lower
end, one refinement pass), after which (n, z) are enumerated. Negative
cut-set values are dominated by the feasible choice zt_j = f(n_j, v_j), which
makes the product vanish, so each composition contributes at least 0.
Every evaluated point is feasible, hence the result is a valid lower bound.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .catalog import ChunkStats
from .errors import DomainError
from .rates import _stats, iid_compositions

# offset keeping zt_j and v_j strictly above z_j - 1 (open interval endpoints)
EDGE = 1e-9
BASE_POINTS = 32
EXHAUSTIVE_N_LIMIT = 4096


def expected_distinct(n: int, v: float) -> float:
    """Expected number of distinct items among v uniform draws from n."""
    if n < 1 or v <= 0:
        raise DomainError("need n >= 1 and v > 0")
    if n == 1:
        return 1.0
    return n * (1.0 - (1.0 - 1.0 / n) ** v)


def _f(n, v):
    v = np.asarray(v, dtype=float)
    if n == 1:
        return np.ones_like(v)
    return n * -np.expm1(v * math.log1p(-1.0 / n))


def concentration_factors(k: int, n: int, r: float, v: float, ztilde: float) -> tuple[float, float]:
    """Lower bounds on Pr(V >= v) and Pr(Z >= ztilde) from self-bounding concentration.

    ``r`` is the n-th largest normalized popularity at this chunk position.
    """
    mean_v = k * n * r
    if not 0 < v <= mean_v:
        raise DomainError(f"need 0 < v <= k*n*r = {mean_v}, got {v}")
    fv = expected_distinct(n, v)
    if not 0 < ztilde <= fv:
        raise DomainError(f"need 0 < ztilde <= f(n, v) = {fv}, got {ztilde}")
    f1 = 1.0 - math.exp(-((mean_v - v) ** 2) / (2.0 * mean_v))
    f2 = 1.0 - math.exp(-((fv - ztilde) ** 2) / (2.0 * fv))
    return f1, f2


def cutset_term(z_vec, n_vec, M: float, B: int) -> float:
    z = [int(x) for x in z_vec]
    n = [int(x) for x in n_vec]
    if len(z) != len(n) or not z:
        raise DomainError("z_vec and n_vec must be nonempty and of equal length")
    if any(zj < 1 or zj > nj for zj, nj in zip(z, n)):
        raise DomainError(f"need 1 <= z_j <= n_j, got z={z}, n={n}")
    d = min(nj // zj for zj, nj in zip(z, n))
    return sum(z) * (1.0 - M * B / d)


@dataclass(frozen=True)
class BoundSearchSpace:
    """One point (n, v, zt, z) of the maximization domain; ``check`` raises if infeasible."""

    n_vec: tuple
    v_vec: tuple
    ztilde_vec: tuple
    z_vec: tuple

    def check(self, k_vec, r: np.ndarray) -> None:
        N = r.shape[0]
        for j, (k, n, v, zt, z) in enumerate(zip(k_vec, self.n_vec, self.v_vec, self.ztilde_vec, self.z_vec)):
            if not 1 <= n <= N:
                raise DomainError(f"n_{j + 1}={n} outside [1, {N}]")
            if not 0 < v <= k * n * r[n - 1, j]:
                raise DomainError(f"v_{j + 1}={v} outside (0, k n r]")
            if not 0 < zt <= expected_distinct(n, v):
                raise DomainError(f"ztilde_{j + 1}={zt} outside (0, f(n, v)]")
            if not 1 <= z <= math.ceil(min(zt, v)):
                raise DomainError(f"z_{j + 1}={z} outside [1, ceil(min(zt, v))]")

    def value(self, k_vec, r: np.ndarray, M: float) -> float:
        """Objective at this point (all coordinates taken as active)."""
        self.check(k_vec, r)
        prod = 1.0
        for j, (k, n, v, zt) in enumerate(zip(k_vec, self.n_vec, self.v_vec, self.ztilde_vec)):
            f1, f2 = concentration_factors(k, n, float(r[n - 1, j]), v, zt)
            prod *= f1 * f2
        return prod * cutset_term(self.z_vec, self.n_vec, M, len(k_vec))


@dataclass(frozen=True)
class BoundGrid:
    """Resolution of the per-coordinate v search.

    Grids are nested (each doubling contains the coarser points) and every
    coarser level, refinement included, is also evaluated, so the bound is
    non-decreasing in ``points``.
    """

    points: int = BASE_POINTS
    refine: bool = True
    u_min: float = 1e-7

    def levels(self) -> list[int]:
        out, p = [], BASE_POINTS
        while p <= self.points:
            out.append(p)
            p *= 2
        if not out or out[-1] != self.points:
            out.append(self.points)
        return out


def _unit_grid(points: int, u_min: float) -> np.ndarray:
    # u in [u_min, 1], log-spaced; (points - 1) intervals so doubling nests
    return u_min ** (1.0 - np.arange(points) / (points - 1))


def _product_curve(mean_v: float, n: int, z: int, v: np.ndarray) -> np.ndarray:
    zt = max(z - 1, 0) + EDGE
    fv = _f(n, v)
    ok = (v > 0) & (v <= mean_v) & (fv >= zt) & (v > z - 1)
    f1 = -np.expm1(-((mean_v - v) ** 2) / (2.0 * mean_v))
    with np.errstate(divide="ignore", invalid="ignore"):
        f2 = -np.expm1(-((fv - zt) ** 2) / (2.0 * fv))
    return np.where(ok, f1 * f2, -np.inf)


def coordinate_factor(k: int, n: int, r: float, z: int, grid: BoundGrid = BoundGrid()) -> float:
    """sup over feasible (v, zt) with ceil(min(zt, v)) >= z of f'(v) f''(v, zt); 0 if infeasible."""
    mean_v = k * n * r
    lo = max(z - 1, 0) + EDGE
    if mean_v <= lo:
        return 0.0
    best = -np.inf
    for pts in grid.levels():
        u = _unit_grid(pts, grid.u_min)
        v = lo + (mean_v - lo) * u
        vals = _product_curve(mean_v, n, z, v)
        i = int(np.argmax(vals))
        best = max(best, float(vals[i]))
        if grid.refine and np.isfinite(vals[i]):
            a = v[i - 1] if i > 0 else lo
            b = v[i + 1] if i + 1 < len(v) else mean_v
            vr = np.linspace(a, b, pts)
            best = max(best, float(_product_curve(mean_v, n, z, vr).max()))
    return max(best, 0.0)


def sorted_popularity(stats: ChunkStats) -> np.ndarray:
    """r[n-1, j]: n-th largest normalized popularity at position j."""
    return -np.sort(-np.asarray(stats.tilde_p), axis=0)


class LowerBound:
    """Evaluates the bound for one model at any set of cache sizes."""

    def __init__(self, model, grid: BoundGrid | None = None, compositions=None):
        self.stats = _stats(model)
        self.grid = grid or BoundGrid()
        self.compositions = list(compositions) if compositions is not None else iid_compositions(self.stats)
        N, B = self.stats.N, self.stats.B
        self.r = sorted_popularity(self.stats)
        kmax = max((max(k) for k, _ in self.compositions), default=0)
        # F[j, k, n, z]
        self.F = np.zeros((B, kmax + 1, N + 1, N + 1))
        for j in range(B):
            for n in range(1, N + 1):
                r = float(self.r[n - 1, j])
                if r <= 0:
                    continue
                for k in range(1, kmax + 1):
                    for z in range(1, n + 1):
                        self.F[j, k, n, z] = coordinate_factor(k, n, r, z, self.grid)
        self._pairs: dict = {}

    def _pair_table(self, d: int):
        """All (n, z) with z_j <= n_j over d coordinates: arrays n, z, sum z, min floor(n/z)."""
        t = self._pairs.get(d)
        if t is None:
            N = self.stats.N
            rows = []
            for n in itertools.product(range(1, N + 1), repeat=d):
                for z in itertools.product(*[range(1, x + 1) for x in n]):
                    rows.append(n + z)
            a = np.array(rows, dtype=np.intp).reshape(-1, 2 * d)
            n_arr, z_arr = a[:, :d], a[:, d:]
            t = (n_arr, z_arr, z_arr.sum(axis=1).astype(float), (n_arr // z_arr).min(axis=1).astype(float))
            self._pairs[d] = t
        return t

    def composition_value(self, k_vec, M_values) -> np.ndarray:
        M_values = np.atleast_1d(np.asarray(M_values, dtype=float))
        active = [j for j, k in enumerate(k_vec) if k > 0]
        if not active:
            return np.zeros_like(M_values)
        B, N = self.stats.B, self.stats.N
        d = len(active)
        if N ** d <= EXHAUSTIVE_N_LIMIT:
            n_arr, z_arr, zsum, dmin = self._pair_table(d)
            fac = np.ones(len(n_arr))
            for c, j in enumerate(active):
                fac = fac * self.F[j, k_vec[j], n_arr[:, c], z_arr[:, c]]
            out = np.empty_like(M_values)
            for m, M in enumerate(M_values):
                out[m] = max(0.0, float((zsum * (1.0 - M * B / dmin) * fac).max()))
            return out
        return np.array([self._greedy(k_vec, active, M) for M in M_values])

    def _greedy(self, k_vec, active, M) -> float:
        """Coordinate ascent over n (z enumerated) for large N^B."""
        N, B = self.stats.N, self.stats.B
        n = [N] * len(active)
        best = self._best_z(k_vec, active, n, M)
        improved = True
        while improved:
            improved = False
            for c in range(len(active)):
                for cand in range(1, N + 1):
                    if cand == n[c]:
                        continue
                    trial = n[:c] + [cand] + n[c + 1:]
                    val = self._best_z(k_vec, active, trial, M)
                    if val > best:
                        best, n, improved = val, trial, True
        return max(best, 0.0)

    def _best_z(self, k_vec, active, n, M) -> float:
        B = self.stats.B
        z = np.array(list(itertools.product(*[range(1, x + 1) for x in n])), dtype=np.intp)
        fac = np.ones(len(z))
        for c, j in enumerate(active):
            fac = fac * self.F[j, k_vec[j], n[c], z[:, c]]
        dmin = (np.array(n)[None, :] // z).min(axis=1)
        return float((z.sum(axis=1) * (1.0 - M * B / dmin) * fac).max())

    def __call__(self, M_values) -> np.ndarray:
        M_values = np.atleast_1d(np.asarray(M_values, dtype=float))
        total = np.zeros_like(M_values)
        for k_vec, w in self.compositions:
            total = total + w * self.composition_value(tuple(k_vec), M_values)
        return np.maximum(total, 0.0)


def lower_bound(model, M: float, grid: BoundGrid | None = None) -> float:
    stats = _stats(model)
    if not 0 <= M <= stats.N:
        raise DomainError(f"M must lie in [0, N], got {M}")
    return float(LowerBound(stats, grid)(M)[0])
