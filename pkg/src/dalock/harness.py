"""Experiment orchestration: configuration, seeded runs, metrics and CSV output.

Every user ``u`` of a run draws from streams seeded by ``(seed, u)``, so the
same population faces every policy in a matrix (paired comparisons) and the
output does not depend on how users are split across worker processes.
"""

from __future__ import annotations

import itertools
import math
import random
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import attacker, corpus, oracle as oracles, usersim
from .errors import ConfigError
from .sketch import CountSketch, build_sketch
from .throttle import AccountState, KStrikes, Policy

CSV_HEADER = "hour,cracked_fraction,lockout_fraction"
MECHANISMS = ("dalock", "kstrikes")
ORACLES = ("exact", "sketch", "model", "min-model")
# Field names below shadow these modules inside the class body.
_PLAINTEXT = corpus.PLAINTEXT


def _parse_number(text: str) -> float:
    """A float, ``inf``, or a power written ``2^-7`` / ``2**-9.375``."""
    t = text.strip().lower()
    if t in ("inf", "infinity", "none"):
        return math.inf
    m = re.fullmatch(r"([0-9.]+)\s*(?:\^|\*\*)\s*(-?[0-9.]+)", t)
    try:
        return float(m.group(1)) ** float(m.group(2)) if m else float(t)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def parse_threshold(text: str) -> float:
    """Parse a positive threshold such as ``inf``, ``2^-7`` or ``0.0078125``."""
    value = _parse_number(text)
    if not value > 0:
        raise ConfigError(f"threshold must be positive, got {text!r}")
    return value


def _parse_int(text: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None
    if value != int(value):
        raise ConfigError(f"expected an integer, got {text!r}")
    return int(value)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: str | None = None
    corpus_format: str = _PLAINTEXT
    donor: str | None = None
    zipf_n: int = 100_000
    zipf_s: float = 1.0
    zipf_accounts: int = 1_000_000
    users: int = 10_000
    horizon: int = usersim.HORIZON_HOURS
    K: int = 10
    psi: float = 2.0**-7
    mechanism: str = "dalock"
    oracle: str = "exact"
    sketch_d: int = 5
    sketch_w: int = 1_000_000
    sketch_seed: int = 0
    epsilon: float = math.inf
    subsample: float = 1.0
    banlist: int = 0
    model_paths: tuple[str, ...] = ()
    model_floor: float = 0.0
    attacker: str = "fmppf"
    dictionary_size: int | None = None
    seed: int = 0
    workers: int = 1
    mistake_rate: float = 0.075
    verify_replay: bool = False
    out: str | None = None
    name: str | None = None

    def validate(self) -> ExperimentConfig:
        if self.users < 1:
            raise ConfigError(f"users must be >= 1, got {self.users}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        if self.oracle not in ORACLES:
            raise ConfigError(f"oracle must be one of {ORACLES}, got {self.oracle!r}")
        if self.attacker not in attacker.HEURISTICS:
            raise ConfigError(f"attacker must be one of {attacker.HEURISTICS}, got {self.attacker!r}")
        if self.corpus_format not in corpus.FORMATS:
            raise ConfigError(f"corpus_format must be one of {corpus.FORMATS}")
        if not 0 < self.subsample <= 1:
            raise ConfigError(f"subsample must lie in (0, 1], got {self.subsample}")
        if self.banlist < 0:
            raise ConfigError("banlist must be >= 0")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive (use inf for no privacy)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.mistake_rate < 1:
            raise ConfigError("mistake_rate must lie in [0, 1)")
        if self.dictionary_size is not None and self.dictionary_size < 1:
            raise ConfigError("dictionary_size must be >= 1")
        for path in (self.corpus, self.donor, *self.model_paths):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"file not found: {path}")
        if self.oracle in ("model", "min-model") and not self.model_paths:
            raise ConfigError(f"oracle {self.oracle!r} needs model_paths")
        if self.corpus is None and (self.zipf_n < 1 or self.zipf_s <= 0 or self.zipf_accounts < self.zipf_n):
            raise ConfigError("invalid Zipf parameters")
        return self

    @property
    def policy(self):
        if self.mechanism == "kstrikes":
            return KStrikes(self.K)
        return Policy(self.K, self.psi)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.mechanism == "kstrikes" or math.isinf(self.psi):
            return f"{self.K}-strikes"
        return f"dalock-K{self.K}-psi{self.psi:.6g}-{self.oracle}"


def _field_types() -> dict[str, str]:
    return {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(key: str, text: str):
    # Annotations are strings here (postponed evaluation).
    kind = _field_types()[key]
    text = text.strip()
    if key == "psi":
        return parse_threshold(text)
    if key == "model_paths":
        return tuple(p.strip() for p in text.split(",") if p.strip())
    if kind.endswith("| None") and text.lower() in ("", "none"):
        return None
    if kind.startswith("str"):
        return text
    if kind.startswith("int"):
        return _parse_int(text)
    if kind == "bool":
        return _parse_bool(text)
    return _parse_number(text)


def parse_assignments(pairs: Iterable[str]) -> dict:
    out = {}
    names = _field_types()
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in names:
            raise ConfigError(f"unknown configuration key {key!r}")
        out[key] = _convert(key, value)
    return out


def read_config_file(path: str | Path) -> tuple[dict, list[str]]:
    """Key/value settings of a flat config file and any ``cell =`` lines."""
    settings: list[str] = []
    cells: list[str] = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "cell":
            cells.append(value)
        else:
            settings.append(f"{key}={value}")
    try:
        return parse_assignments(settings), cells
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        values, _ = read_config_file(path)
    values.update(overrides or {})
    return ExperimentConfig(**values).validate()


def matrix_cells(path: str | Path | None, overrides: dict | None = None) -> list[ExperimentConfig]:
    """Cells of a matrix config: ``cell = key=value key=value ...`` lines over shared settings."""
    base, cells = read_config_file(path) if path is not None else ({}, [])
    base.update(overrides or {})
    out = []
    for line in cells:
        cell = dict(base)
        cell.update(parse_assignments(line.split()))
        out.append(ExperimentConfig(**cell).validate())
    return out


@dataclass
class MetricsSeries:
    """Cumulative fractions for hours ``1..horizon``."""

    cracked: np.ndarray
    lockout: np.ndarray

    def __post_init__(self) -> None:
        self.cracked = np.asarray(self.cracked, dtype=np.float64)
        self.lockout = np.asarray(self.lockout, dtype=np.float64)
        if self.cracked.shape != self.lockout.shape:
            raise ValueError("series lengths differ")

    @property
    def horizon(self) -> int:
        return int(self.cracked.shape[0])

    def final(self) -> tuple[float, float]:
        return float(self.cracked[-1]), float(self.lockout[-1])

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for h, (c, l) in enumerate(zip(self.cracked.tolist(), self.lockout.tolist()), start=1):
            lines.append(f"{h},{c:.6f},{l:.6f}")
        return "\n".join(lines) + "\n"


def series_from_hours(hours: np.ndarray, n_users: int, horizon: int) -> np.ndarray:
    """Fraction of users with an event at or before each hour ``1..horizon``."""
    hours = np.asarray(hours, dtype=np.int64)
    hours = np.maximum(hours[(hours >= 0) & (hours <= horizon)], 1)
    counts = np.bincount(hours, minlength=horizon + 1)[1:]
    return np.cumsum(counts) / n_users


def emit_csv(series: MetricsSeries, path: str | Path) -> None:
    Path(path).write_text(series.to_csv(), encoding="utf-8", newline="\n")


def read_csv(path: str | Path) -> MetricsSeries:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing header {CSV_HEADER!r}")
    rows = np.array([[float(x) for x in line.split(",")] for line in lines[1:]]).reshape(-1, 3)
    return MetricsSeries(rows[:, 1], rows[:, 2])


# -- world construction ---------------------------------------------------------

@dataclass
class World:
    """Everything shared by the users of one run."""

    config: ExperimentConfig
    dist: corpus.Distribution
    oracle: object
    policy: object
    model: usersim.TypoModel
    solver: attacker.KnapsackSolver | None = field(default=None, repr=False)


@lru_cache(maxsize=4)
def _base_corpus(path: str | None, fmt: str, donor: str | None, n: int, s: float, accounts: int) -> corpus.PasswordCorpus:
    if path is None:
        return corpus.synthesize_zipf(n, s, accounts)
    loaded = corpus.load_corpus(path, fmt)
    if donor is not None:
        loaded = corpus.map_strings(loaded, corpus.load_corpus(donor, corpus.PLAINTEXT))
    return loaded


def _corpus_key(cfg: ExperimentConfig) -> tuple:
    return (cfg.corpus, cfg.corpus_format, cfg.donor, cfg.zipf_n, cfg.zipf_s, cfg.zipf_accounts)


@lru_cache(maxsize=4)
def _distribution(key: tuple, banlist: int) -> tuple[corpus.PasswordCorpus, corpus.Distribution]:
    base = _base_corpus(*key)
    dist = corpus.apply_banlist(corpus.empirical_distribution(base), banlist)
    banned = base.without_top(banlist) if banlist else base
    return banned, dist


@lru_cache(maxsize=8)
def _oracle(key: tuple, banlist: int, kind: str, d: int, w: int, sketch_seed: int, epsilon: float,
            rate: float, model_paths: tuple[str, ...], floor: float):
    banned, dist = _distribution(key, banlist)
    if kind == "exact":
        return oracles.oracle_exact(dist)
    if kind == "sketch":
        ss = np.random.SeedSequence(sketch_seed, spawn_key=(0xC0FFEE,))
        sub_rng, noise_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        trained = corpus.subsample(banned, rate, sub_rng)
        return oracles.oracle_from_sketch(build_sketch(trained, d, w, sketch_seed, epsilon, noise_rng))
    tables = [oracles.load_guess_table(p) for p in model_paths]
    table = oracles.min_combine(tables) if kind == "min-model" else tables[0]
    return oracles.oracle_from_model(table, floor)


@lru_cache(maxsize=8)
def _solver(key: tuple, oracle_key: tuple, heuristic: str, dictionary_size: int | None) -> attacker.KnapsackSolver:
    _, dist = _distribution(*key)
    return attacker.make_solver(dist, _oracle(*oracle_key), heuristic, dictionary_size)


def _oracle_key(cfg: ExperimentConfig) -> tuple:
    return (_corpus_key(cfg), cfg.banlist, cfg.oracle, cfg.sketch_d, cfg.sketch_w, cfg.sketch_seed,
            cfg.epsilon, cfg.subsample, cfg.model_paths, cfg.model_floor)


def build_world(cfg: ExperimentConfig, with_attacker: bool = False) -> World:
    _, dist = _distribution(_corpus_key(cfg), cfg.banlist)
    oracle = _oracle(*_oracle_key(cfg))
    model = usersim.TypoModel(mistake_rate=cfg.mistake_rate)
    world = World(cfg, dist, oracle, cfg.policy, model)
    if with_attacker:
        world.solver = _solver((_corpus_key(cfg), cfg.banlist), _oracle_key(cfg), cfg.attacker, cfg.dictionary_size)
    return world


# -- simulation -------------------------------------------------------------------

@dataclass
class UserEvents:
    """Per-user event hours, ``-1`` when the event never happens."""

    lock: np.ndarray
    cracked: np.ndarray
    attacked_lock: np.ndarray


def _simulate_range(cfg: ExperimentConfig, start: int, stop: int, attack: bool) -> UserEvents:
    world = build_world(cfg, with_attacker=attack)
    n = stop - start
    lock = np.full(n, -1, dtype=np.int64)
    cracked = np.full(n, -1, dtype=np.int64)
    attacked_lock = np.full(n, -1, dtype=np.int64)
    policy, oracle = world.policy, world.oracle
    for i, u in enumerate(range(start, stop)):
        trace = usersim.simulate_user(u, world.dist, policy, oracle, world.model, cfg.seed, cfg.horizon)
        if trace.lock_time is not None:
            lock[i] = trace.lock_time
        if not attack:
            continue
        curve = attacker.budget_curve(trace, oracle, policy, cfg.horizon)
        plan = attacker.plan_attack(trace, world.dist, oracle, policy, cfg.horizon, world.solver, curve=curve)
        outcome = attacker.execute_plan(plan, trace, curve, policy, oracle, cfg.verify_replay)
        if outcome.cracked_hour is not None:
            cracked[i] = outcome.cracked_hour
        elif outcome.lock_hour is not None:
            attacked_lock[i] = outcome.lock_hour
    return UserEvents(lock, cracked, attacked_lock)


def _chunks(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n))
    bounds = [n * k // parts for k in range(parts + 1)]
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def simulate(cfg: ExperimentConfig, attack: bool) -> UserEvents:
    """Run every user, in parallel when ``cfg.workers > 1``; output is order-independent."""
    cfg.validate()
    chunks = _chunks(cfg.users, cfg.workers)
    if cfg.workers == 1 or len(chunks) == 1:
        results = [_simulate_range(cfg, a, b, attack) for a, b in chunks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_simulate_range, cfg, a, b, attack) for a, b in chunks]
            results = [f.result() for f in futures]
    return UserEvents(*(np.concatenate([getattr(r, name) for r in results])
                        for name in ("lock", "cracked", "attacked_lock")))


def run_usability(cfg: ExperimentConfig) -> MetricsSeries:
    """Attacker-free run: fraction of accounts locked by their own users."""
    events = simulate(cfg, attack=False)
    lockout = series_from_hours(events.lock, cfg.users, cfg.horizon)
    return MetricsSeries(np.zeros(cfg.horizon), lockout)


def run_security(cfg: ExperimentConfig) -> MetricsSeries:
    """Attacked run: cracked fraction, plus lockouts of accounts never cracked."""
    events = simulate(cfg, attack=True)
    cracked = series_from_hours(events.cracked, cfg.users, cfg.horizon)
    lockout = series_from_hours(events.attacked_lock, cfg.users, cfg.horizon)
    return MetricsSeries(cracked, lockout)


def run_cell(cfg: ExperimentConfig) -> MetricsSeries:
    """Cracked fraction from the attacked run, lockout from the same users unattacked."""
    events = simulate(cfg, attack=True)
    return MetricsSeries(series_from_hours(events.cracked, cfg.users, cfg.horizon),
                         series_from_hours(events.lock, cfg.users, cfg.horizon))


SUMMARY_HEADER = "cell,mechanism,K,psi,oracle,cracked_fraction,lockout_fraction"


def run_matrix(cells: Sequence[ExperimentConfig], out_dir: str | Path | None = None) -> tuple[dict[str, MetricsSeries], str]:
    """Run each cell on the shared user seeds; write ``<cell>.csv`` and ``summary.csv``."""
    results: dict[str, MetricsSeries] = {}
    rows = [SUMMARY_HEADER]
    for cfg in cells:
        name = cfg.label
        if name in results:
            raise ConfigError(f"duplicate matrix cell name {name!r}")
        series = run_cell(cfg)
        results[name] = series
        cracked, lockout = series.final() if series.horizon else (0.0, 0.0)
        psi = "inf" if cfg.mechanism == "kstrikes" else f"{cfg.psi:.9g}"
        rows.append(f"{name},{cfg.mechanism},{cfg.K},{psi},{cfg.oracle},{cracked:.6f},{lockout:.6f}")
    summary = "\n".join(rows) + "\n"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, series in results.items():
            emit_csv(series, out / f"{_safe_name(name)}.csv")
        (out / "summary.csv").write_text(summary, encoding="utf-8", newline="\n")
    return results, summary


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._=-]+", "_", name)


# -- invariant suite --------------------------------------------------------------

def validate(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Fast invariant checks; each entry is ``(name, passed, detail)``."""
    checks: list[tuple[str, bool, str]] = []

    class _Fixed:
        def __init__(self, table):
            self.table = table

        def estimate_popularity(self, pw):
            return self.table.get(pw, 0.0)

    state = AccountState()
    fixed = _Fixed({"a": 0.03, "b": 0.017, "c": 0.008})
    policy = Policy(10, 1.0)
    for pw in "abc":
        state, _ = policy.login(state, pw, "secret", fixed)
    checks.append(("hit-count accumulation", abs(state.psi_u - 0.055) <= 1e-12, f"psi={state.psi_u!r}"))

    ok = True
    for K in (1, 2, 3):
        dalock, baseline = Policy(K), KStrikes(K)
        for length in range(9):
            for trace in itertools.product("xyz", repeat=length):
                s1 = s2 = AccountState()
                for pw in trace:
                    s1, o1 = dalock.login(s1, pw, "x", fixed)
                    s2, o2 = baseline.login(s2, pw, "x", fixed)
                    ok &= o1 is o2
    checks.append(("K-strikes equivalence", ok, "traces up to length 8"))

    rng = random.Random(seed)
    ok = True
    for _ in range(50):
        xs = [rng.randint(1, 20) for _ in range(rng.randint(1, 8))]
        T = rng.randint(1, sum(xs))
        inst = attacker.reduction_from_subset_sum(xs, T)
        best = attacker.brute_force_pk(inst).value
        ok &= (best == Fraction(1, 2) + inst.capacity) == attacker.subset_sum_exists(xs, T)
    checks.append(("subset-sum reduction", ok, "50 random instances"))

    ok = True
    for _ in range(100):
        n = rng.randint(1, 10)
        cands = [attacker.Candidate(f"p{i}", rng.random() / n, rng.random() / n) for i in range(n)]
        inst = attacker.PKInstance(cands, rng.random() * 0.5, rng.randint(0, n))
        best = attacker.brute_force_pk(inst).value
        for heuristic in (attacker.fmppf, attacker.dab):
            S = heuristic(cands, inst.capacity, inst.M)
            ok &= inst.value(S, inst.best_holdout(S)) <= best + 1e-12
    checks.append(("heuristics bounded by optimum", ok, "100 random instances"))

    sk = CountSketch(5, 64, seed)
    for _ in range(7):
        sk.add("only")
    checks.append(("sketch single-item exactness", sk.estimate("only") == 7, f"estimate={sk.estimate('only')}"))
    return checks
