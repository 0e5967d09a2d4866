"""Content library, popularity/retention model and demand-process probabilities.

Indices are 0-based internally: file ``i`` in ``range(N)``, chunk position
``j`` in ``range(B)``. CSV/CLI surfaces convert to 1-based labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, DegenerateChunkError

PROB_TOL = 1e-12


@dataclass(frozen=True)
class LibraryConfig:
    num_files: int
    num_chunks: int
    file_size_bits: int = 0

    def __post_init__(self):
        if self.num_files < 1:
            raise ConfigError("num_files must be >= 1")
        if self.num_chunks < 1:
            raise ConfigError("num_chunks must be >= 1")
        if self.file_size_bits < 0:
            raise ConfigError("file_size_bits must be nonnegative")
        if self.file_size_bits and self.file_size_bits % self.num_chunks:
            raise ConfigError("file_size_bits must be divisible by num_chunks")

    @property
    def chunk_bits(self) -> int:
        return self.file_size_bits // self.num_chunks


def rank_power_popularity(N: int, alpha: float) -> np.ndarray:
    """Reversed-rank power law: p_i = (N + 1 - i)^alpha / sum_f f^alpha, i = 1..N.

    For N = 5 this is exactly (6 - i)^alpha / sum f^alpha.
    """
    if N < 1:
        raise ConfigError("N must be >= 1")
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    ranks = np.arange(N, 0, -1, dtype=float)
    w = ranks ** alpha
    return w / (np.arange(1, N + 1, dtype=float) ** alpha).sum()


def standard_zipf(N: int, alpha: float) -> np.ndarray:
    if N < 1:
        raise ConfigError("N must be >= 1")
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    w = np.arange(1, N + 1, dtype=float) ** (-alpha)
    return w / w.sum()


def zipf_retention(B: int, beta: float) -> np.ndarray:
    """Retention row (1, 2^-beta, ..., B^-beta). ``beta=inf`` gives (1, 0, ..., 0)."""
    if B < 1:
        raise ConfigError("B must be >= 1")
    if beta < 0:
        raise ConfigError("beta must be >= 0")
    j = np.arange(1, B + 1, dtype=float)
    if math.isinf(beta):
        row = np.zeros(B)
        row[0] = 1.0
        return row
    return j ** (-beta)


def _binom_pmf_row(a: int, p: float) -> np.ndarray:
    """Binomial(a, p) pmf over k = 0..a with the 0^0 = 1 convention."""
    k = np.arange(a + 1)
    if p == 0.0:
        out = np.zeros(a + 1)
        out[0] = 1.0
        return out
    if p == 1.0:
        out = np.zeros(a + 1)
        out[a] = 1.0
        return out
    if a > 60:
        logc = np.array([math.lgamma(a + 1) - math.lgamma(x + 1) - math.lgamma(a - x + 1) for x in k])
        return np.exp(logc + k * math.log(p) + (a - k) * math.log1p(-p))
    c = np.array([math.comb(a, int(x)) for x in k], dtype=float)
    return c * p ** k * (1.0 - p) ** (a - k)


def active_count_pmf(arrival_pmf: np.ndarray, watch_prob: float) -> np.ndarray:
    """Pr{K_j = k} for k = 0..A_max: arrivals thinned by the watch probability."""
    A = len(arrival_pmf) - 1
    out = np.zeros(A + 1)
    for a, pa in enumerate(arrival_pmf):
        if pa > 0:
            out[: a + 1] += pa * _binom_pmf_row(a, watch_prob)
    return out


@dataclass(frozen=True)
class ChunkStats:
    chunk_popularity: np.ndarray  # (N, B) p_i p_ij
    slot_watch_prob: np.ndarray  # (B,) p^j
    tilde_p: np.ndarray  # (N, B) normalized popularity
    active_count_pmf: np.ndarray  # (B, A_max + 1)

    @property
    def N(self) -> int:
        return self.tilde_p.shape[0]

    @property
    def B(self) -> int:
        return self.tilde_p.shape[1]

    @property
    def a_max(self) -> int:
        return self.active_count_pmf.shape[1] - 1


@dataclass(frozen=True, eq=False)
class PopularityModel:
    file_popularity: np.ndarray
    retention: np.ndarray
    arrival_pmf: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p = np.asarray(self.file_popularity, dtype=float)
        P = np.atleast_2d(np.asarray(self.retention, dtype=float))
        pa = np.asarray(self.arrival_pmf, dtype=float)
        object.__setattr__(self, "file_popularity", p)
        object.__setattr__(self, "retention", P)
        object.__setattr__(self, "arrival_pmf", pa)
        for arr in (p, P, pa):
            arr.setflags(write=False)

        if p.ndim != 1 or len(p) < 1:
            raise ConfigError("file_popularity must be a nonempty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ConfigError(f"file_popularity must be a pmf (sum={p.sum()!r})")
        if P.shape[0] != len(p):
            raise ConfigError(f"retention has {P.shape[0]} rows, expected {len(p)}")
        if np.any(P < 0) or np.any(P > 1):
            raise ConfigError("retention entries must lie in [0, 1]")
        if np.any(P[:, 0] != 1.0):
            raise ConfigError("retention of the first chunk must be 1 for every file")
        if np.any(np.diff(P, axis=1) > 0):
            raise ConfigError("retention rows must be non-increasing in the chunk index")
        if pa.ndim != 1 or len(pa) < 1:
            raise ConfigError("arrival_pmf must be a nonempty vector")
        if np.any(pa < 0) or abs(pa.sum() - 1.0) > PROB_TOL:
            raise ConfigError(f"arrival_pmf must sum to 1 (sum={pa.sum()!r})")
        watch = p @ P
        if np.any(watch <= 0):
            bad = [int(j) + 1 for j in np.flatnonzero(watch <= 0)]
            raise DegenerateChunkError(f"no user ever reaches chunk position(s) {bad}")

    @property
    def N(self) -> int:
        return len(self.file_popularity)

    @property
    def B(self) -> int:
        return self.retention.shape[1]

    @property
    def a_max(self) -> int:
        return len(self.arrival_pmf) - 1

    @cached_property
    def stats(self) -> ChunkStats:
        return chunk_stats(self)


def chunk_stats(model: PopularityModel) -> ChunkStats:
    p, P = model.file_popularity, model.retention
    pop = p[:, None] * P
    watch = pop.sum(axis=0)
    if np.any(watch <= 0):
        raise DegenerateChunkError("a chunk position has zero watch probability")
    tilde = pop / watch
    pmf = np.vstack([active_count_pmf(model.arrival_pmf, float(w)) for w in watch])
    for arr in (pop, watch, tilde, pmf):
        arr.setflags(write=False)
    return ChunkStats(pop, watch, tilde, pmf)


def deterministic_arrivals(a: int) -> np.ndarray:
    if a < 0:
        raise ConfigError("arrival count must be >= 0")
    pmf = np.zeros(a + 1)
    pmf[a] = 1.0
    return pmf


def build_model(N, B, alpha, beta, popularity_mode="rank_power", arrivals=None, betas=None) -> PopularityModel:
    """Model from the experiment parameters.

    ``arrivals`` is either ``{"deterministic": a}`` or ``{"pmf": [...]}``;
    ``betas`` optionally overrides ``beta`` per file.
    """
    if popularity_mode == "rank_power":
        p = rank_power_popularity(N, alpha)
    elif popularity_mode == "zipf":
        p = standard_zipf(N, alpha)
    else:
        raise ConfigError(f"unknown popularity_mode {popularity_mode!r}")
    if betas is None:
        betas = [beta] * N
    if len(betas) != N:
        raise ConfigError(f"betas has {len(betas)} entries, expected {N}")
    P = np.vstack([zipf_retention(B, b) for b in betas])
    arrivals = arrivals or {"deterministic": 1}
    if "deterministic" in arrivals:
        pa = deterministic_arrivals(int(arrivals["deterministic"]))
    elif "pmf" in arrivals:
        pa = np.asarray(arrivals["pmf"], dtype=float)
    else:
        raise ConfigError("arrivals must contain 'deterministic' or 'pmf'")
    meta = dict(N=N, B=B, alpha=alpha, beta=beta, popularity_mode=popularity_mode)
    return PopularityModel(p, P, pa, meta=meta)
