"""JSON experiment configuration with line/field diagnostics."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .catalog import PopularityModel, build_model
from .errors import ConfigError
from .rates import TIE_INDICES

ALL_SCHEMES = ("RAN", "MAN", "PCC", "LB", "UNCODED")
ALLOCATIONS = ("PCA", "OCA")


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Reader:
    """Typed access into the parsed JSON that reports the offending field and line."""

    def __init__(self, text: str, data: dict):
        self.text = text
        self.data = data

    def fail(self, path: str, msg: str):
        line = _line_of(self.text, path.split(".")[-1])
        where = f"line {line}, " if line else ""
        raise ConfigError(f"config error ({where}field '{path}'): {msg}")

    def get(self, path: str, default=..., kind=None):
        node = self.data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is ...:
                    self.fail(path, "missing required field")
                return default
            node = node[part]
        if kind is not None and node is not None:
            ok = isinstance(node, kind) and not (kind in (int, float, (int, float)) and isinstance(node, bool))
            if not ok:
                self.fail(path, f"expected {getattr(kind, '__name__', kind)}, got {type(node).__name__}")
        return node


@dataclass
class SimSettings:
    enabled: bool = False
    num_slots: int = 20000
    burn_in: int = 0  # 0 means B
    mode: str = "analytic-slot-rate"
    F: int | None = None
    sync_period: int = 3
    trace: str | None = None


@dataclass
class ExperimentConfig:
    model_spec: dict
    M_grid: list
    schemes: list = field(default_factory=lambda: ["RAN", "MAN", "PCC"])
    allocations: list = field(default_factory=lambda: ["PCA"])
    ran_objective: str = "PCC"
    sim: SimSettings = field(default_factory=SimSettings)
    oca: dict = field(default_factory=dict)
    bound_points: int = 32
    tie_index: str = "sum_l_minus_1"
    pcc_part2: str = "composition"
    seed: int = 0
    out: str | None = None
    mode: str = "async"
    Q_csv: str | None = None
    objective: str = "PCC"
    chunk_report: dict = field(default_factory=dict)

    _model: PopularityModel | None = field(default=None, repr=False)

    @property
    def model(self) -> PopularityModel:
        if self._model is None:
            self._model = build_model(**self.model_spec)
        return self._model

    def schedule(self):
        """Arrival schedule for the simulator: None (i.i.d.) or the periodic sync pattern."""
        if self.mode == "async":
            return None
        pa = self.model.arrival_pmf
        if np.count_nonzero(pa) != 1:
            raise ConfigError("sync mode needs deterministic arrivals (a single-point P_A)")
        a = int(np.flatnonzero(pa)[0])
        p = self.sim.sync_period
        return (p * a,) + (0,) * (p - 1)


def _grid(r: _Reader, N: int) -> list:
    g = r.get("M_grid", None)
    if g is None:
        M = r.get("M", None, (int, float))
        if M is None:
            r.fail("M_grid", "need 'M_grid' or 'M'")
        g = [M]
    if isinstance(g, dict):
        try:
            g = list(np.linspace(float(g["start"]), float(g["stop"]), int(g["num"])))
        except (KeyError, TypeError, ValueError) as exc:
            r.fail("M_grid", f"expected {{start, stop, num}} ({exc})")
    if not isinstance(g, list) or not g or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in g):
        r.fail("M_grid", "expected a nonempty list of numbers")
    g = [float(x) for x in g]
    bad = [x for x in g if not 0 <= x <= N]
    if bad:
        r.fail("M_grid", f"values {bad} outside [0, N={N}]")
    return g


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    r = _Reader(text, data)
    r.get("model", kind=dict)
    spec = dict(
        N=r.get("model.N", kind=int),
        B=r.get("model.B", kind=int),
        alpha=float(r.get("model.alpha", 1.0, (int, float))),
        beta=float(r.get("model.beta", 1.0, (int, float))),
        popularity_mode=r.get("model.popularity_mode", "rank_power", str),
        arrivals=r.get("model.arrivals", {"deterministic": 1}, dict),
        betas=r.get("model.betas", None, list),
    )
    for key in ("N", "B"):
        if spec[key] < 1:
            r.fail(f"model.{key}", "must be >= 1")
    cfg = ExperimentConfig(model_spec=spec, M_grid=_grid(r, spec["N"]))
    schemes = [s.upper() for s in r.get("schemes", cfg.schemes, list)]
    if not set(schemes) <= set(ALL_SCHEMES):
        r.fail("schemes", f"unknown schemes {sorted(set(schemes) - set(ALL_SCHEMES))}")
    cfg.schemes = schemes
    allocs = [a.upper() for a in r.get("allocations", cfg.allocations, list)]
    if not set(allocs) <= set(ALLOCATIONS):
        r.fail("allocations", f"unknown allocations {sorted(set(allocs) - set(ALLOCATIONS))}")
    cfg.allocations = allocs
    cfg.ran_objective = r.get("ran_objective", "PCC", str).upper()
    cfg.objective = r.get("objective", "PCC", str).upper()
    for key in ("ran_objective", "objective"):
        if getattr(cfg, key) not in ("MAN", "PCC"):
            r.fail(key, "must be MAN or PCC")
    cfg.tie_index = r.get("rho_prime_index", cfg.tie_index, str)
    if cfg.tie_index not in TIE_INDICES:
        r.fail("rho_prime_index", f"must be one of {TIE_INDICES}")
    cfg.pcc_part2 = r.get("pcc_part2", cfg.pcc_part2, str)
    if cfg.pcc_part2 not in ("composition", "realized"):
        r.fail("pcc_part2", "must be 'composition' or 'realized'")
    cfg.seed = r.get("seed", 0, int)
    cfg.mode = r.get("mode", "async", str)
    if cfg.mode not in ("sync", "async"):
        r.fail("mode", "must be 'sync' or 'async'")
    cfg.out = r.get("out", None, str)
    cfg.Q_csv = r.get("Q_csv", None, str)
    cfg.bound_points = r.get("bound.points", 32, int)
    if cfg.bound_points < 2:
        r.fail("bound.points", "must be >= 2")
    cfg.oca = dict(
        restarts=r.get("oca.restarts", 0, int),
        max_iter=r.get("oca.max_iter", 500, int),
        pca_starts=r.get("oca.pca_starts", None, int),
    )
    s = SimSettings(
        enabled=r.get("simulation.enabled", False, bool),
        num_slots=r.get("simulation.num_slots", 20000, int),
        burn_in=r.get("simulation.burn_in", 0, int),
        mode=r.get("simulation.mode", "analytic-slot-rate", str),
        F=r.get("simulation.F", None, int),
        sync_period=r.get("simulation.sync_period", 3, int),
        trace=r.get("simulation.trace", None, str),
    )
    if s.num_slots < 20:
        r.fail("simulation.num_slots", "must be >= 20")
    if s.mode not in ("analytic-slot-rate", "bit-level"):
        r.fail("simulation.mode", "must be 'analytic-slot-rate' or 'bit-level'")
    if s.mode == "bit-level" and (not s.F or s.F % spec["B"]):
        r.fail("simulation.F", "bit-level mode needs F divisible by B")
    if s.sync_period < 1:
        r.fail("simulation.sync_period", "must be >= 1")
    cfg.sim = s
    cfg.chunk_report = r.get("chunk_report", {}, dict)
    try:
        cfg.model
    except (ConfigError, ValueError) as exc:
        r.fail("model", str(exc))
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
