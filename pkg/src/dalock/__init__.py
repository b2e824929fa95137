"""Distribution-aware password throttling (DALock) simulator."""

from __future__ import annotations

from .corpus import (
    Distribution,
    PasswordCorpus,
    apply_banlist,
    empirical_distribution,
    load_corpus,
    map_strings,
    sample_password,
    save_corpus,
    subsample,
    synthesize_zipf,
)
from .errors import (
    ConfigError,
    CorpusError,
    DALockError,
    GuessTableError,
    InvariantViolation,
    KnapsackError,
    SketchError,
)
from .oracle import (
    GuessTable,
    estimate_popularity,
    load_guess_table,
    min_combine,
    oracle_exact,
    oracle_from_model,
    oracle_from_sketch,
)
from .sketch import CountSketch, build_sketch
from .throttle import AccountState, KStrikes, LoginOutcome, Policy, is_locked, k_strikes, login, register

__version__ = "0.1.0"

__all__ = [
    "AccountState",
    "ConfigError",
    "CorpusError",
    "CountSketch",
    "DALockError",
    "Distribution",
    "GuessTable",
    "GuessTableError",
    "InvariantViolation",
    "KStrikes",
    "KnapsackError",
    "LoginOutcome",
    "PasswordCorpus",
    "Policy",
    "SketchError",
    "apply_banlist",
    "build_sketch",
    "empirical_distribution",
    "estimate_popularity",
    "is_locked",
    "k_strikes",
    "load_corpus",
    "load_guess_table",
    "login",
    "map_strings",
    "min_combine",
    "oracle_exact",
    "oracle_from_model",
    "oracle_from_sketch",
    "register",
    "sample_password",
    "save_corpus",
    "subsample",
    "synthesize_zipf",
]
