"""Bit-level execution of the RAN, MAN and PCC delivery algorithms.

Every active user caches an exact-size random subset of round(q F/B) bits
of each chunk. For each requested chunk the bits are labelled with the set
of active users caching them (a bitmask), which defines the exclusive
subfiles W_{c,S}. Messages XOR real content bits with zero padding, and each
user decodes by peeling: a message with a single unknown component reveals
it. Decoding is checked against the true content for every user.

RAN sends random linear combinations; with an MDS code a requester decodes
once it receives as many combinations as it has uncached bits, which is
checked by counting.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..cache import exclusive_fraction
from ..errors import DecodeError, DomainError
from ..rates import SlotDemand
from .process import TAG_CACHE, TAG_CONTENT, substream

MAX_USERS = 20
BRUTE_FORCE_MAX = 12


def _requests(demand) -> list[tuple[int, int]]:
    if isinstance(demand, SlotDemand):
        return demand.chunks
    return [(int(i), int(j)) for i, j in demand]


def _users(sessions, K: int) -> list[int]:
    if sessions is None:
        return list(range(K))
    ids = [getattr(s, "user_id", s) for s in sessions]
    if len(ids) != K:
        raise DomainError("sessions must list one user per requester")
    return [int(u) for u in ids]


# -- symbolic plan ----------------------------------------------------------------

def _man_packets(req, sizes):
    K = len(req)
    for z in sizes:
        for P in itertools.combinations(range(K), z):
            yield tuple((req[k], frozenset(P) - {k}) for k in P)


def delivery_plan(demand, scheme: str) -> dict[str, list[tuple]]:
    """Packets of each algorithm part as tuples of (chunk, user set) components.

    Users are 0-based in request order; chunks are (file, position) 0-based.
    PCC lists both PART 2 alternatives.
    """
    req = _requests(demand)
    K = len(req)
    distinct = list(dict.fromkeys(req))
    scheme = scheme.upper()
    if scheme == "MAN":
        return {f"z={z}": list(_man_packets(req, [z])) for z in range(1, K + 1)}
    if scheme == "PCC":
        chain = [((c, frozenset({k})), (c, frozenset({k + 1}))) for c in distinct for k in range(K - 1)]
        return {
            "part1": [((c, frozenset()),) for c in distinct],
            "part21": list(_man_packets(req, [2])),
            "part22": chain,
            "part3": list(_man_packets(req, range(3, K + 1))),
        }
    if scheme in ("RAN", "UNCODED"):
        return {"coded": [((c, None),) for c in distinct]}
    raise DomainError(f"unknown scheme {scheme!r}")


def format_packet(packet) -> str:
    """Human-readable label, 1-based, e.g. 'W21,{2} + W11,{1}'."""
    parts = []
    for (i, j), S in packet:
        label = f"W{i + 1}{j + 1}"
        if S is not None:
            label += ",{" + ",".join(str(u + 1) for u in sorted(S)) + "}"
        parts.append(label)
    return " + ".join(parts)


# -- bit-level execution ------------------------------------------------------------

@dataclass
class _Chunk:
    content: np.ndarray  # uint8 bits
    mask: np.ndarray  # uint32 user-set label per bit
    order: np.ndarray  # bit indices sorted by label (stable)
    start: np.ndarray  # subfile S occupies order[start[S]:start[S+1]]

    def positions(self, S: int) -> np.ndarray:
        return self.order[self.start[S]: self.start[S + 1]]

    def size(self, S: int) -> int:
        return int(self.start[S + 1] - self.start[S])

    def subfile(self, S: int) -> np.ndarray:
        return self.content[self.positions(S)]


@dataclass
class BitLevelResult:
    bits: int
    chunk_bits: int
    part_bits: dict = field(default_factory=dict)
    messages: int = 0
    chosen_part2: str | None = None

    @property
    def normalized(self) -> float:
        return self.bits / self.chunk_bits


def _build_chunk(c, users, q, Fc, seed) -> _Chunk:
    i, j = c
    B = q.shape[1]
    content = substream(seed, TAG_CONTENT, i * B + j).integers(0, 2, Fc, dtype=np.uint8)
    size = int(round(q[i, j] * Fc))
    mask = np.zeros(Fc, dtype=np.uint32)
    for k, u in enumerate(users):
        if size == Fc:
            idx = np.arange(Fc)
        elif size == 0:
            continue
        else:
            idx = substream(seed, TAG_CACHE, u, i * B + j).choice(Fc, size, replace=False)
        mask[idx] |= np.uint32(1 << k)
    K = len(users)
    order = np.argsort(mask, kind="stable")
    counts = np.bincount(mask, minlength=1 << K)
    start = np.concatenate([[0], np.cumsum(counts)])
    return _Chunk(content, mask, order, start)


def _bits(S) -> int:
    return sum(1 << k for k in S)


def _xor(arrays: Sequence[np.ndarray]) -> np.ndarray:
    n = max((len(a) for a in arrays), default=0)
    out = np.zeros(n, dtype=np.uint8)
    for a in arrays:
        out[: len(a)] ^= a
    return out


def _encode(packets, chunks):
    msgs = []
    for packet in packets:
        comps = [(c, _bits(S)) for c, S in packet]
        payload = _xor([chunks[c].subfile(S) for c, S in comps])
        msgs.append((comps, payload))
    return msgs


def _decode_user(k, req, chunks, msgs):
    """Peel the messages for user k and check its reconstructed chunk."""
    known = {}
    for c, ch in chunks.items():
        for S in range(len(ch.start) - 1):
            if S >> k & 1:
                known[(c, S)] = ch.subfile(S)
    pending = list(msgs)
    progress = True
    while progress and pending:
        progress = False
        rest = []
        for comps, payload in pending:
            unknown = [x for x in comps if x not in known]
            if len(unknown) == 1:
                c, S = unknown[0]
                others = [known[x] for x in comps if x != unknown[0]]
                val = _xor([payload] + others)[: chunks[c].size(S)]
                known[(c, S)] = val
                progress = True
            elif unknown:
                rest.append((comps, payload))
        pending = rest
    c = req[k]
    ch = chunks[c]
    out = np.zeros_like(ch.content)
    for S in range(len(ch.start) - 1):
        if ch.size(S) == 0:
            continue
        val = known.get((c, S))
        if val is None or len(val) != ch.size(S):
            raise DecodeError(f"user {k + 1} cannot recover subfile S={S:b} of chunk {c}")
        out[ch.positions(S)] = val
    if not np.array_equal(out, ch.content):
        raise DecodeError(f"user {k + 1} reconstructed a wrong chunk {c}")


def bitlevel_slot_delivery(demand, sessions, Q, scheme: str, F: int, *, seed: int = 0, B: int | None = None,
                           verify: bool = True, part2: str = "realized", evaluator=None) -> BitLevelResult:
    """Execute one slot of the delivery algorithm on real bits.

    ``F`` is the file size in bits, so each chunk has F/B bits. ``sessions``
    gives the persistent user ids (cache substreams) in request order.
    """
    q = np.asarray(getattr(Q, "q", Q), dtype=float)
    B = q.shape[1] if B is None else B
    if F % B:
        raise DomainError("F must be divisible by B")
    Fc = F // B
    req = _requests(demand)
    K = len(req)
    if K > MAX_USERS:
        raise DomainError(f"bit-level execution supports K <= {MAX_USERS}, got {K}")
    if K == 0:
        return BitLevelResult(0, Fc)
    users = _users(sessions, K)
    scheme = scheme.upper()
    distinct = list(dict.fromkeys(req))
    chunks = {c: _build_chunk(c, users, q, Fc, seed) for c in distinct}

    if scheme in ("RAN", "UNCODED"):
        total = 0
        for c in distinct:
            ch = chunks[c]
            need = [int(np.count_nonzero((ch.mask >> k) & 1 == 0)) for k in range(K) if req[k] == c]
            sent = max(need)
            if verify and any(n > sent for n in need):
                raise DecodeError(f"RAN under-delivers chunk {c}")
            total += sent
        return BitLevelResult(total, Fc, {"coded": total}, len(distinct))

    plan = delivery_plan(req, scheme)
    if scheme == "MAN":
        msgs = []
        part_bits = {}
        for name, packets in plan.items():
            m = _encode(packets, chunks)
            part_bits[name] = sum(len(p) for _, p in m)
            msgs += m
        chosen = None
    else:
        enc = {name: _encode(packets, chunks) for name, packets in plan.items()}
        part_bits = {name: sum(len(p) for _, p in m) for name, m in enc.items()}
        if part2 == "realized":
            chosen = "part22" if part_bits["part22"] < part_bits["part21"] else "part21"
        elif part2 == "composition":
            if evaluator is None:
                raise DomainError("part2='composition' needs a RateEvaluator")
            counts = demand.counts if isinstance(demand, SlotDemand) else SlotDemand.from_chunks(req, B).counts
            chosen = "part22" if evaluator.uses_pairwise_chain(counts) else "part21"
        elif part2 in ("part21", "part22"):
            chosen = part2
        else:
            raise DomainError(f"unknown part2 rule {part2!r}")
        msgs = enc["part1"] + enc[chosen] + enc["part3"]
    total = sum(len(p) for _, p in msgs)
    if verify:
        for k in range(K):
            _decode_user(k, req, chunks, msgs)
    return BitLevelResult(total, Fc, part_bits, len(msgs), chosen)


def brute_force_man_slot(demand, Q) -> float:
    """sum over nonempty user subsets P of max_{k in P} g_{d_k}(K, |P| - 1), by enumeration."""
    q = np.asarray(getattr(Q, "q", Q), dtype=float)
    req = _requests(demand)
    K = len(req)
    if K > BRUTE_FORCE_MAX:
        raise DomainError(f"brute force limited to K <= {BRUTE_FORCE_MAX}, got {K}")
    total = 0.0
    for z in range(1, K + 1):
        for P in itertools.combinations(range(K), z):
            total += max(exclusive_fraction(q[req[k]], K, z - 1) for k in P)
    return total
