"""Closed-form average delivery rates (RAN, MAN, PCC) and per-slot rates.

All rates are normalized by the chunk size F/B and taken in the large-F limit.

The MAN and PCC averages are sums over user compositions k = (K_1..K_B) and
sub-compositions l <= k. For fixed K = sum(k) the per-l quantity

    m(K, l) = sum_c rho'_c(K, l) * g_c(K, sum(l) - 1)

does not depend on how K splits into k, so it is memoized per (K, l) and
contracted against binomial weights for each composition.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cache import CacheDistribution, exclusive_fractions
from .catalog import ChunkStats, PopularityModel
from .errors import DomainError

TIE_INDICES = ("sum_l_minus_1", "sum_l")
DEFAULT_TIE_INDEX = "sum_l_minus_1"
SCHEMES = ("RAN", "MAN", "PCC")


def _stats(model) -> ChunkStats:
    if isinstance(model, ChunkStats):
        return model
    if isinstance(model, PopularityModel):
        return model.stats
    raise TypeError(f"expected PopularityModel or ChunkStats, got {type(model).__name__}")


def _qmat(Q) -> np.ndarray:
    return Q.q if isinstance(Q, CacheDistribution) else np.asarray(Q, dtype=float)


@dataclass(frozen=True)
class CompositionIndex:
    k_vec: tuple
    l_vec: tuple

    def __post_init__(self):
        k, l = tuple(int(x) for x in self.k_vec), tuple(int(x) for x in self.l_vec)
        if len(k) != len(l):
            raise DomainError("k_vec and l_vec must have equal length")
        if any(x < 0 for x in k) or any(y < 0 or y > x for x, y in zip(k, l)):
            raise DomainError(f"need 0 <= l <= k componentwise, got k={k}, l={l}")
        object.__setattr__(self, "k_vec", k)
        object.__setattr__(self, "l_vec", l)

    @property
    def K(self) -> int:
        return sum(self.k_vec)

    @property
    def z(self) -> int:
        return sum(self.l_vec)


@dataclass(frozen=True)
class RateBreakdown:
    rate_ran: float
    rate_man: float
    rate_pcc: float
    delta_phi1: float
    delta_phi2: float


def iid_compositions(stats: ChunkStats) -> list[tuple[tuple, float]]:
    """Support of (K_1..K_B) with product probabilities, in lexicographic order."""
    supports = []
    for j in range(stats.B):
        row = stats.active_count_pmf[j]
        supports.append([(k, float(row[k])) for k in range(len(row)) if row[k] > 0])
    out = []
    for combo in itertools.product(*supports):
        w = 1.0
        for _, pk in combo:
            w *= pk
        out.append((tuple(k for k, _ in combo), w))
    return out


def hit_probability(p: np.ndarray, k: int) -> np.ndarray:
    """1 - (1 - p)^k written as p * sum_{t<k} (1-p)^t, which is exact for k <= 1."""
    p = np.asarray(p, dtype=float)
    acc = np.zeros_like(p)
    term = np.ones_like(p)
    for _ in range(k):
        acc = acc + term
        term = term * (1.0 - p)
    return p * acc


def _binom_row(k: int) -> list[float]:
    return [float(math.comb(k, l)) for l in range(k + 1)]


def _contract(arr: np.ndarray, k_vec: Sequence[int]) -> float:
    """sum over l <= k of prod_h C(k_h, l_h) * arr[l]; fixed summation order."""
    for k in k_vec:
        c = _binom_row(k)
        acc = c[0] * arr[0]
        for l in range(1, k + 1):
            acc = acc + c[l] * arr[l]
        arr = acc
    return float(arr)


class _OrderTable:
    """Sorted-g sums for a fixed total user count K and subset size z."""

    def __init__(self, q: np.ndarray, tilde: np.ndarray, K: int, z: int, tie_index: str, emax: int):
        N, B = q.shape
        g = exclusive_fractions(q, K, z - 1)
        tie_exp = z if tie_index == "sum_l" else z - 1
        g_tie = g if tie_exp == z - 1 else exclusive_fractions(q, K, min(tie_exp, K))
        gf = g.reshape(-1)
        le = (g[None, :, :] <= gf[:, None, None]) * tilde[None, :, :]
        lt = (g[None, :, :] < gf[:, None, None]) * tilde[None, :, :]
        le = le.sum(axis=1)  # (NB, B)
        lt = lt.sum(axis=1)
        tf = g_tie.reshape(-1)
        cnt = (tf[None, :] == tf[:, None]).sum(axis=1)
        self.g = gf
        self.weight = gf / cnt
        self.le = le
        self.lt = lt
        self.pow_le = self._powers(le, emax)
        self.pow_lt = self._powers(lt, emax)

    @staticmethod
    def _powers(base: np.ndarray, emax: int) -> np.ndarray:
        NB, B = base.shape
        out = np.ones((NB, B, emax + 1))
        if emax:
            out[:, :, 1:] = np.cumprod(np.repeat(base[:, :, None], emax, axis=2), axis=2)
        return out

    def rho_rows(self, L: np.ndarray) -> np.ndarray:
        """rho_c(l) for every chunk c and every row l of L; shape (len(L), NB)."""
        NB, B = self.le.shape
        out = np.empty((len(L), NB))
        for c in range(NB):
            pa = self.pow_le[c, 0][L[:, 0]]
            pb = self.pow_lt[c, 0][L[:, 0]]
            for h in range(1, B):
                pa = pa * self.pow_le[c, h][L[:, h]]
                pb = pb * self.pow_lt[c, h][L[:, h]]
            out[:, c] = pa - pb
        return out

    def m_rows(self, L: np.ndarray) -> np.ndarray:
        NB, B = self.le.shape
        live = np.flatnonzero(self.weight != 0.0)
        acc = np.zeros(len(L))
        if not len(live):
            return acc
        pa = self.pow_le[live, 0][:, L[:, 0]]
        pb = self.pow_lt[live, 0][:, L[:, 0]]
        for h in range(1, B):
            pa = pa * self.pow_le[live, h][:, L[:, h]]
            pb = pb * self.pow_lt[live, h][:, L[:, h]]
        for r, c in enumerate(live):
            acc = acc + self.weight[c] * (pa[r] - pb[r])
        return acc


class RateEvaluator:
    """Closed-form rate engine for one (model, Q) pair.

    ``compositions`` defaults to the i.i.d.-arrival product distribution of
    (K_1..K_B); any other list of ``(k_vec, weight)`` pairs may be supplied.
    """

    def __init__(self, model, Q, *, tie_index: str = DEFAULT_TIE_INDEX, memoize: bool = True,
                 compositions: Iterable[tuple[tuple, float]] | None = None):
        if tie_index not in TIE_INDICES:
            raise DomainError(f"tie_index must be one of {TIE_INDICES}")
        self.stats = _stats(model)
        self.q = np.array(_qmat(Q), dtype=float)
        if self.q.shape != self.stats.tilde_p.shape:
            raise DomainError(f"Q shape {self.q.shape} does not match model {self.stats.tilde_p.shape}")
        self.tilde = np.asarray(self.stats.tilde_p, dtype=float)
        self.tie_index = tie_index
        self.memoize = memoize
        self.compositions = list(compositions) if compositions is not None else iid_compositions(self.stats)
        B = self.stats.B
        self._kmax = [max((k[h] for k, _ in self.compositions), default=0) for h in range(B)]
        self._tables: dict = {}
        self._m_by_K: dict = {}
        self._per_k: dict = {}

    # -- rho / m tables -------------------------------------------------
    def order_table(self, K: int, z: int, emax: int | None = None) -> _OrderTable:
        emax = max(self._kmax) if emax is None else emax
        if not self.memoize:
            return _OrderTable(self.q, self.tilde, K, z, self.tie_index, emax)
        key = (K, z)
        t = self._tables.get(key)
        if t is None or t.pow_le.shape[2] - 1 < emax:
            t = _OrderTable(self.q, self.tilde, K, z, self.tie_index, emax)
            self._tables[key] = t
        return t

    def _m_box(self, K: int, dims: Sequence[int]) -> np.ndarray:
        """m(K, l) for all l in the box prod_h [0:dims_h]; zero where sum(l) == 0."""
        shape = tuple(d + 1 for d in dims)
        m = np.zeros(shape)
        L = np.indices(shape, dtype=np.intp).reshape(len(shape), -1).T
        zs = L.sum(axis=1)
        flat = m.reshape(-1)
        emax = max(dims) if dims else 0
        for z in range(1, min(K, int(zs.max(initial=0))) + 1):
            rows = np.flatnonzero(zs == z)
            if len(rows):
                flat[rows] = self.order_table(K, z, emax).m_rows(L[rows])
        return m

    def m_table(self, K: int, k_vec: Sequence[int]) -> np.ndarray:
        if not self.memoize or any(k > km for k, km in zip(k_vec, self._kmax)):
            # outside the memoized box (e.g. counts beyond the arrival support)
            return self._m_box(K, k_vec)
        m = self._m_by_K.get(K)
        if m is None:
            dims = [min(km, K) for km in self._kmax]
            m = self._m_box(K, dims)
            self._m_by_K[K] = m
        return m[tuple(slice(0, k + 1) for k in k_vec)]

    # -- per-composition quantities ---------------------------------------
    def composition_terms(self, k_vec: tuple) -> dict:
        """MAN rate and the PART 1/PART 2 cost pieces conditioned on k_vec."""
        if self.memoize and k_vec in self._per_k:
            return self._per_k[k_vec]
        K = sum(k_vec)
        if K == 0:
            out = dict(man=0.0, phibar1=0.0, phi1=0.0, phibar2=0.0, phi2=0.0)
        else:
            m = self.m_table(K, k_vec)
            man = _contract(m, k_vec)
            phibar2 = 0.0
            B = len(k_vec)
            for j in range(B):
                if k_vec[j] >= 2:
                    idx = [0] * B
                    idx[j] = 2
                    phibar2 += math.comb(k_vec[j], 2) * float(m[tuple(idx)])
            for j1 in range(B):
                for j2 in range(j1 + 1, B):
                    if k_vec[j1] and k_vec[j2]:
                        idx = [0] * B
                        idx[j1] = idx[j2] = 1
                        phibar2 += k_vec[j1] * k_vec[j2] * float(m[tuple(idx)])
            g0 = exclusive_fractions(self.q, K, 0)
            g1 = exclusive_fractions(self.q, K, 1)
            kv = np.asarray(k_vec, dtype=float)
            hit = np.column_stack([hit_probability(self.tilde[:, j], k) for j, k in enumerate(k_vec)])
            phibar1 = float((kv[None, :] * self.tilde * g0).sum())
            phi1 = float((hit * g0).sum())
            phi2 = float((K - 1) * (hit * g1).sum())
            out = dict(man=man, phibar1=phibar1, phi1=phi1, phibar2=phibar2, phi2=phi2)
        if self.memoize:
            self._per_k[k_vec] = out
        return out

    def uses_pairwise_chain(self, k_vec: tuple) -> bool:
        """True if PART 2.2 is the cheaper PART 2 in expectation given k_vec."""
        t = self.composition_terms(tuple(k_vec))
        return t["phibar2"] > t["phi2"]

    # -- averages -----------------------------------------------------------
    def rate_ran(self) -> float:
        s = self.stats
        total = 0.0
        for j in range(s.B):
            pmf = s.active_count_pmf[j]
            hit = np.zeros(s.N)
            for k, pk in enumerate(pmf):
                if pk > 0:
                    hit = hit + pk * hit_probability(self.tilde[:, j], k)
            total += float((hit * (1.0 - self.q[:, j])).sum())
        return total

    def breakdown(self) -> RateBreakdown:
        man = dphi1 = dphi2 = 0.0
        for k_vec, w in self.compositions:
            t = self.composition_terms(tuple(k_vec))
            man += w * t["man"]
            dphi1 += w * (t["phibar1"] - t["phi1"])
            dphi2 += w * max(t["phibar2"] - t["phi2"], 0.0)
        return RateBreakdown(self.rate_ran(), man, man - dphi1 - dphi2, dphi1, dphi2)

    def rate_man(self) -> float:
        man = 0.0
        for k_vec, w in self.compositions:
            man += w * self.composition_terms(tuple(k_vec))["man"]
        return man


# -- public closed-form API ---------------------------------------------------

def rho(i: int, j: int, idx: CompositionIndex, Q, stats) -> float:
    """Probability that chunk (i, j) attains the largest exclusive-subfile size
    among the demands of an l-subset, with sizes taken at (sum k, sum l - 1)."""
    if idx.z < 1:
        raise DomainError("rho is undefined for an empty subset (sum(l) == 0)")
    stats = _stats(stats)
    q = _qmat(Q)
    t = _OrderTable(q, np.asarray(stats.tilde_p), idx.K, idx.z, DEFAULT_TIE_INDEX, max(idx.l_vec))
    L = np.array([idx.l_vec], dtype=np.intp)
    return float(t.rho_rows(L)[0, i * q.shape[1] + j])


def rho_prime(i: int, j: int, idx: CompositionIndex, Q, stats, tie_index: str = DEFAULT_TIE_INDEX) -> float:
    """rho divided by the number of chunks whose subfile size ties with (i, j)."""
    if tie_index not in TIE_INDICES:
        raise DomainError(f"tie_index must be one of {TIE_INDICES}")
    if idx.z < 1:
        raise DomainError("rho' is undefined for an empty subset (sum(l) == 0)")
    q = _qmat(Q)
    r = rho(i, j, idx, q, stats)
    e = idx.z if tie_index == "sum_l" else idx.z - 1
    g = exclusive_fractions(q, idx.K, min(e, idx.K))
    return r / int((g == g[i, j]).sum())


def rate_ran(model, Q) -> float:
    return RateEvaluator(model, Q).rate_ran()


def rate_man(model, Q, *, tie_index: str = DEFAULT_TIE_INDEX, memoize: bool = True) -> float:
    return RateEvaluator(model, Q, tie_index=tie_index, memoize=memoize).rate_man()


def delta_phi1(model, Q) -> float:
    return RateEvaluator(model, Q).breakdown().delta_phi1


def delta_phi2(model, Q, *, tie_index: str = DEFAULT_TIE_INDEX) -> float:
    return RateEvaluator(model, Q, tie_index=tie_index).breakdown().delta_phi2


def rate_pcc(model, Q, *, tie_index: str = DEFAULT_TIE_INDEX, memoize: bool = True) -> RateBreakdown:
    return RateEvaluator(model, Q, tie_index=tie_index, memoize=memoize).breakdown()


def rate_uncoded(model, Q) -> float:
    """Identical-content uncoded caching sends (1 - q_ij) per requested chunk, same as RAN."""
    return rate_ran(model, Q)


# -- per-slot rates -------------------------------------------------------------

@dataclass(frozen=True)
class SlotDemand:
    """Files requested in one slot, grouped by chunk position.

    ``files[j]`` lists the files of the users requesting their (j+1)-th chunk;
    users are indexed position by position in that order.
    """

    files: tuple
    user_ids: tuple | None = None

    def __post_init__(self):
        files = tuple(tuple(int(f) for f in pos) for pos in self.files)
        object.__setattr__(self, "files", files)
        if self.user_ids is not None:
            ids = tuple(int(u) for u in self.user_ids)
            if len(ids) != self.K:
                raise DomainError("user_ids length must equal the number of users")
            object.__setattr__(self, "user_ids", ids)

    @classmethod
    def from_chunks(cls, chunks: Sequence[tuple[int, int]], B: int) -> "SlotDemand":
        """Build from (file, position) pairs; users are regrouped by position."""
        per = [[] for _ in range(B)]
        for i, j in chunks:
            per[j].append(i)
        return cls(tuple(tuple(p) for p in per))

    @property
    def B(self) -> int:
        return len(self.files)

    @property
    def counts(self) -> tuple:
        return tuple(len(p) for p in self.files)

    @property
    def K(self) -> int:
        return sum(self.counts)

    @property
    def chunks(self) -> list[tuple[int, int]]:
        return [(i, j) for j, pos in enumerate(self.files) for i in pos]

    @property
    def distinct_chunks(self) -> list[tuple[int, int]]:
        return list(dict.fromkeys(self.chunks))

    def key(self) -> tuple:
        return tuple(tuple(sorted(p)) for p in self.files)


def _subset_max_sum(values: Sequence[float], z: int) -> float:
    """sum over all z-subsets of `values` of the subset maximum, by sorted counting."""
    counts: dict[float, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    total = 0.0
    below = 0
    for v in sorted(counts):
        upto = below + counts[v]
        n = math.comb(upto, z) - math.comb(below, z)
        if n and v:
            total += v * n
        below = upto
    return total


def man_subset_term(demand: SlotDemand, q: np.ndarray, z: int) -> float:
    """MAN cost of all z-user subsets: sum_P max_{k in P} g_{d_k}(K, z-1)."""
    K = demand.K
    vals = [q[i, j] ** (z - 1) * (1.0 - q[i, j]) ** (K - z + 1) for i, j in demand.chunks]
    return _subset_max_sum(vals, z)


def pcc_parts(demand: SlotDemand, Q) -> dict:
    """Costs of every PCC part for a realized demand (PART 2.1 and 2.2 both listed)."""
    q = _qmat(Q)
    K = demand.K
    distinct = demand.distinct_chunks
    part1 = sum(q[i, j] ** 0 * (1.0 - q[i, j]) ** K for i, j in distinct)
    part21 = man_subset_term(demand, q, 2) if K >= 2 else 0.0
    part22 = sum((K - 1) * q[i, j] * (1.0 - q[i, j]) ** (K - 1) for i, j in distinct) if K >= 2 else 0.0
    part3 = sum(man_subset_term(demand, q, z) for z in range(3, K + 1))
    return dict(part1=part1, part21=part21, part22=part22, part3=part3)


def slot_rate(scheme: str, demand: SlotDemand, Q, *, part2: str = "realized",
              evaluator: RateEvaluator | None = None) -> float:
    """Delivery rate of one slot for a realized demand.

    ``part2`` selects how PCC picks between PART 2.1 and PART 2.2:
    ``"realized"`` takes the cheaper one for this demand; ``"composition"``
    takes the one cheaper in expectation given the per-position user counts
    (the rule behind the closed-form PCC average; needs ``evaluator``).
    """
    scheme = scheme.upper()
    q = _qmat(Q)
    K = demand.K
    if K == 0:
        return 0.0
    if scheme in ("RAN", "UNCODED"):
        return float(sum(1.0 - q[i, j] for i, j in demand.distinct_chunks))
    if scheme == "MAN":
        return float(sum(man_subset_term(demand, q, z) for z in range(1, K + 1)))
    if scheme == "PCC":
        parts = pcc_parts(demand, q)
        if part2 == "realized":
            p2 = min(parts["part21"], parts["part22"])
        elif part2 == "composition":
            if evaluator is None:
                raise DomainError("part2='composition' needs a RateEvaluator")
            p2 = parts["part22"] if evaluator.uses_pairwise_chain(demand.counts) else parts["part21"]
        else:
            raise DomainError(f"unknown part2 rule {part2!r}")
        return float(parts["part1"] + p2 + parts["part3"])
    raise DomainError(f"unknown scheme {scheme!r}")
