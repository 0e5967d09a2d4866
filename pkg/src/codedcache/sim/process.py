"""Monte Carlo simulation of the slotted demand process.

Random draws come from a counter-based generator (Philox). Every slot and
purpose gets its own substream, keyed by the seed and addressed through the
high counter words, so any slot can be replayed on its own and replications
never share draws.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..catalog import PopularityModel
from ..errors import ConfigError
from ..rates import SCHEMES, RateEvaluator, SlotDemand, slot_rate

TAG_RETENTION = 1
TAG_ARRIVAL = 2
TAG_CACHE = 3
TAG_CONTENT = 4
N_BATCHES = 20
MASK64 = (1 << 64) - 1


def substream(seed: int, tag: int, a: int = 0, b: int = 0, replication: int = 0) -> np.random.Generator:
    """Independent generator for (seed, replication, tag, a, b).

    Draws advance the lowest counter word only, so the upper three words
    address disjoint streams.
    """
    key = (int(seed) & MASK64) | (int(replication) << 64)
    bg = np.random.Philox(key=key, counter=[0, tag, a & MASK64, b & MASK64])
    return np.random.Generator(bg)


@dataclass
class UserSession:
    user_id: int
    file: int  # 0-based
    next_chunk: int  # 0-based position requested in the coming slot
    arrival_slot: int


@dataclass
class SimState:
    slot: int = 0
    sessions: list = field(default_factory=list)  # users served in the previous slot
    next_uid: int = 0


@dataclass(frozen=True)
class SimConfig:
    num_slots: int
    burn_in: int
    seed: int = 0
    mode: str = "analytic-slot-rate"  # or "bit-level"
    arrival_schedule: tuple | None = None  # None: i.i.d. P_A; else counts cycled by slot
    F: int | None = None  # file size in bits, bit-level mode only
    pcc_part2: str = "composition"
    replication: int = 0

    def validate(self, model: PopularityModel) -> None:
        if self.burn_in < model.B:
            raise ConfigError(f"burn_in must be >= B={model.B}, got {self.burn_in}")
        if self.num_slots < N_BATCHES:
            raise ConfigError(f"num_slots must be >= {N_BATCHES}")
        if self.mode not in ("analytic-slot-rate", "bit-level"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "bit-level":
            if not self.F or self.F % model.B:
                raise ConfigError("bit-level mode needs F divisible by B")
        if self.arrival_schedule is not None:
            if not len(self.arrival_schedule) or any(int(a) < 0 for a in self.arrival_schedule):
                raise ConfigError("arrival_schedule must be a nonempty list of counts >= 0")


def sync_schedule(a: int, period: int = 3) -> tuple:
    """period * a users every period slots (same mean load as a per slot)."""
    return (period * a,) + (0,) * (period - 1)


def _draw_index(u: np.ndarray, cdf: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def step(state: SimState, model: PopularityModel, seed: int = 0, schedule=None,
         replication: int = 0) -> tuple[SimState, SlotDemand]:
    """Advance one slot: retention decisions, new arrivals, and the slot's demand.

    Users served at position j continue to j+1 with probability
    p_{i,j+1} / p_{ij}; new users pick a file from p and request chunk 1.
    """
    P = model.retention
    B = model.B
    t = state.slot
    survivors = []
    if state.sessions:
        u = substream(seed, TAG_RETENTION, t, replication=replication).random(len(state.sessions))
        for s, x in zip(state.sessions, u):
            j = s.next_chunk
            if j + 1 < B and x < P[s.file, j + 1] / P[s.file, j]:
                survivors.append(UserSession(s.user_id, s.file, j + 1, s.arrival_slot))
    rng = substream(seed, TAG_ARRIVAL, t, replication=replication)
    if schedule is None:
        a = int(_draw_index(rng.random(), np.cumsum(model.arrival_pmf)))
    else:
        a = int(schedule[t % len(schedule)])
    files = _draw_index(rng.random(a), np.cumsum(model.file_popularity)) if a else []
    new = [UserSession(state.next_uid + k, int(f), 0, t) for k, f in enumerate(files)]
    sessions = new + survivors
    sessions.sort(key=lambda s: (s.next_chunk, s.user_id))
    per = [[] for _ in range(B)]
    for s in sessions:
        per[s.next_chunk].append(s.file)
    demand = SlotDemand(tuple(tuple(p) for p in per), tuple(s.user_id for s in sessions))
    return SimState(t + 1, sessions, state.next_uid + a), demand


@dataclass
class SimResult:
    rates: dict  # scheme -> per-slot rates (post burn-in)
    counts: np.ndarray  # (slots, B) per-position user counts
    seed: int
    first_slot: int

    def summary(self, scheme: str) -> tuple[float, float]:
        return batch_means(self.rates[scheme])


def batch_means(x: np.ndarray, n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Mean of x and its standard error from equal contiguous batches."""
    x = np.asarray(x, dtype=float)
    if len(x) < n_batches:
        raise ConfigError(f"need at least {n_batches} samples")
    size = len(x) // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(x.mean()), float(means.std(ddof=1) / np.sqrt(n_batches))


def simulate(model: PopularityModel, Q, cfg: SimConfig, schemes=SCHEMES) -> SimResult:
    cfg.validate(model)
    schemes = tuple(s.upper() for s in schemes)
    q = np.asarray(getattr(Q, "q", Q), dtype=float)
    evaluator = RateEvaluator(model, q) if "PCC" in schemes and cfg.pcc_part2 == "composition" else None
    memo: dict = {}
    rates = {s: np.empty(cfg.num_slots) for s in schemes}
    counts = np.empty((cfg.num_slots, model.B), dtype=np.int64)
    state = SimState()
    bitlevel = None
    if cfg.mode == "bit-level":
        from .bitlevel import bitlevel_slot_delivery as bitlevel
    for t in range(cfg.burn_in + cfg.num_slots):
        state, demand = step(state, model, cfg.seed, cfg.arrival_schedule, cfg.replication)
        if t < cfg.burn_in:
            continue
        r = t - cfg.burn_in
        counts[r] = demand.counts
        if bitlevel is not None:
            for s in schemes:
                rates[s][r] = bitlevel(demand, demand.user_ids, q, s, cfg.F, seed=cfg.seed,
                                       part2=cfg.pcc_part2, evaluator=evaluator).normalized
            continue
        key = demand.key()
        vals = memo.get(key)
        if vals is None:
            vals = {s: slot_rate(s, demand, q, part2=cfg.pcc_part2, evaluator=evaluator) for s in schemes}
            memo[key] = vals
        for s in schemes:
            rates[s][r] = vals[s]
    return SimResult(rates, counts, cfg.seed, cfg.burn_in)


def simulate_average_rate(model: PopularityModel, Q, scheme: str, cfg: SimConfig) -> tuple[float, float]:
    """(mean, standard error) of the per-slot rate after burn-in."""
    return simulate(model, Q, cfg, (scheme,)).summary(scheme.upper())


def _replication_job(args):
    model, Q, cfg, schemes = args
    res = simulate(model, Q, cfg, schemes)
    return {s: res.summary(s) for s in res.rates}


def simulate_replications(model, Q, cfg: SimConfig, replications: int, schemes=SCHEMES,
                          workers: int = 1) -> list[dict]:
    """Independent replications (distinct Philox keys); order and values do not depend on workers."""
    cfgs = [SimConfig(**{**cfg.__dict__, "replication": r}) for r in range(replications)]
    jobs = [(model, Q, c, schemes) for c in cfgs]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_replication_job, jobs))
    return [_replication_job(j) for j in jobs]


def trace_csv(res: SimResult) -> str:
    B = res.counts.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot"] + [f"K_{j + 1}" for j in range(B)] + ["rate_ran", "rate_man", "rate_pcc"])
    n = len(res.counts)
    cols = [res.rates.get(s) for s in ("RAN", "MAN", "PCC")]
    for r in range(n):
        w.writerow([res.first_slot + r] + [int(k) for k in res.counts[r]]
                   + ["" if c is None else repr(float(c[r])) for c in cols])
    return buf.getvalue()


def summary_csv(res: SimResult, schemes=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "mean", "std_error", "slots", "seed"])
    for s in schemes or res.rates:
        mean, se = res.summary(s)
        w.writerow([s, repr(mean), repr(se), len(res.rates[s]), res.seed])
    return buf.getvalue()
