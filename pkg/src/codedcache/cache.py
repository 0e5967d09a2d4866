"""Decentralized cache content distribution Q and exclusive-subfile sizes."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

CAPACITY_TOL = 1e-9


def exclusive_fraction(q: float, l: int, l_prime: int) -> float:
    """Normalized size of the bits of a chunk cached by exactly ``l_prime`` of ``l`` users.

    Returns q^l' (1-q)^(l-l') with 0^0 = 1, and 0 for the empty-subset
    convention ``l_prime == -1``.
    """
    if l < 0 or l_prime > l or l_prime < -1:
        raise DomainError(f"need -1 <= l_prime <= l, got l={l}, l_prime={l_prime}")
    if l_prime == -1:
        return 0.0
    return float(q) ** l_prime * (1.0 - float(q)) ** (l - l_prime)


def exclusive_fractions(q: np.ndarray, l: int, l_prime: int) -> np.ndarray:
    """Vectorized :func:`exclusive_fraction` over an array of caching fractions."""
    if l_prime == -1:
        return np.zeros_like(q, dtype=float)
    if l < 0 or l_prime > l or l_prime < -1:
        raise DomainError(f"need -1 <= l_prime <= l, got l={l}, l_prime={l_prime}")
    return q ** l_prime * (1.0 - q) ** (l - l_prime)


@dataclass(frozen=True)
class Violation:
    kind: str  # "range" | "capacity" | "shape"
    detail: str
    entries: tuple = ()


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


@dataclass(frozen=True, eq=False)
class CacheDistribution:
    """Per-chunk caching fractions q (N x B) for cache capacity M (in files).

    Construction does not enforce the constraints; call :func:`validate`.
    """

    q: np.ndarray
    M: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2:
            raise ConfigError("q must be an N x B matrix")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "M", float(self.M))

    @property
    def N(self) -> int:
        return self.q.shape[0]

    @property
    def B(self) -> int:
        return self.q.shape[1]

    def key(self) -> bytes:
        return self.q.tobytes()

    @classmethod
    def uniform(cls, N: int, B: int, M: float) -> "CacheDistribution":
        return cls(np.full((N, B), M / N), M)

    @classmethod
    def zeros(cls, N: int, B: int) -> "CacheDistribution":
        return cls(np.zeros((N, B)), 0.0)

    @classmethod
    def ones(cls, N: int, B: int) -> "CacheDistribution":
        return cls(np.ones((N, B)), float(N))

    @classmethod
    def from_flat(cls, flat, N: int, B: int, M: float) -> "CacheDistribution":
        return cls(np.asarray(flat, dtype=float).reshape(N, B), M)


def validate(Q: CacheDistribution, tol: float = CAPACITY_TOL) -> ValidationReport:
    out = []
    q = Q.q
    bad = np.argwhere((q < 0) | (q > 1) | ~np.isfinite(q))
    if len(bad):
        ents = tuple((int(i) + 1, int(j) + 1, float(q[i, j])) for i, j in bad)
        out.append(Violation("range", f"{len(bad)} entries outside [0, 1]", ents))
    target = Q.M * Q.B
    total = float(q.sum())
    if not abs(total - target) <= tol:
        out.append(Violation("capacity", f"sum q = {total!r}, expected M*B = {target!r}"))
    return ValidationReport(tuple(out))


def equal_q_groups(Q: CacheDistribution) -> list[list[tuple[int, int]]]:
    """Partition chunks (i, j) into groups of exactly equal q, ordered by first occurrence."""
    groups: dict[float, list] = {}
    N, B = Q.q.shape
    for i in range(N):
        for j in range(B):
            groups.setdefault(float(Q.q[i, j]), []).append((i, j))
    return list(groups.values())


def to_csv(Q: CacheDistribution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["file_index", "chunk_index", "q"])
    for i in range(Q.N):
        for j in range(Q.B):
            w.writerow([i + 1, j + 1, repr(float(Q.q[i, j]))])
    return buf.getvalue()


def from_csv(text: str, M: float | None = None) -> CacheDistribution:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ConfigError("empty Q csv")
    try:
        entries = [(int(r["file_index"]), int(r["chunk_index"]), float(r["q"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad Q csv row: {exc}") from None
    N = max(e[0] for e in entries)
    B = max(e[1] for e in entries)
    q = np.full((N, B), math.nan)
    for i, j, v in entries:
        q[i - 1, j - 1] = v
    if np.isnan(q).any():
        raise ConfigError("Q csv does not cover every (file, chunk) pair")
    if M is None:
        M = float(q.sum()) / B
    return CacheDistribution(q, M)
