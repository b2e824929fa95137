"""Per-account throttling state machines.

DALock tracks two counters per account: ``k_u``, the number of consecutive
failed attempts, and ``psi_u``, the summed estimated popularity of every
wrong password ever submitted. An account is locked once ``k_u >= K`` or
``psi_u >= Psi``. Classical K-strikes is the special case ``Psi = inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable


class LoginOutcome(Enum):
    LOCKED = "locked"
    GRANTED = "granted"
    DENIED = "denied"


@dataclass(frozen=True, slots=True)
class AccountState:
    k_u: int = 0
    psi_u: float = 0.0

    def to_dict(self) -> dict:
        return {"k_u": self.k_u, "psi_u": self.psi_u}

    @classmethod
    def from_dict(cls, data: dict) -> AccountState:
        return cls(int(data["k_u"]), float(data["psi_u"]))


@dataclass(frozen=True, slots=True)
class Policy:
    """Lock when ``k_u >= K`` or ``psi_u >= Psi``."""

    K: int
    Psi: float = math.inf

    def __post_init__(self) -> None:
        if not isinstance(self.K, int) or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")
        if not self.Psi > 0:
            raise ValueError(f"Psi must be positive or infinite, got {self.Psi!r}")

    @property
    def is_k_strikes(self) -> bool:
        return math.isinf(self.Psi)

    @property
    def label(self) -> str:
        if self.is_k_strikes:
            return f"{self.K}-strikes"
        return f"dalock(K={self.K},Psi={self.Psi:.6g})"

    def is_locked(self, state: AccountState) -> bool:
        return state.psi_u >= self.Psi or state.k_u >= self.K

    def login(self, state: AccountState, submitted: str, true_pw: str, oracle) -> tuple[AccountState, LoginOutcome]:
        if state.psi_u >= self.Psi or state.k_u >= self.K:
            return state, LoginOutcome.LOCKED
        if submitted == true_pw:
            return AccountState(0, state.psi_u), LoginOutcome.GRANTED
        psi = state.psi_u + oracle.estimate_popularity(submitted)
        return AccountState(state.k_u + 1, psi), LoginOutcome.DENIED


def k_strikes(K: int) -> Policy:
    return Policy(K, math.inf)


def register(true_pw: str | None = None, initial_psi: Callable[[str], float] | None = None) -> AccountState:
    """Fresh account state. ``initial_psi`` optionally seeds the hit count."""
    if initial_psi is None or true_pw is None:
        return AccountState()
    psi = float(initial_psi(true_pw))
    if psi < 0:
        raise ValueError("initial hit count must be nonnegative")
    return AccountState(0, psi)


def is_locked(state: AccountState, policy) -> bool:
    return policy.is_locked(state)


def login(state: AccountState, submitted: str, true_pw: str, oracle, policy) -> tuple[AccountState, LoginOutcome]:
    return policy.login(state, submitted, true_pw, oracle)


class KStrikes:
    """Standalone consecutive-failure counter, the classical baseline.

    Independent of :class:`Policy` so the ``Psi = inf`` case can be checked
    against it. It never consults the oracle.
    """

    __slots__ = ("K",)

    Psi = math.inf

    def __init__(self, K: int) -> None:
        if K < 1:
            raise ValueError(f"K must be positive, got {K}")
        self.K = K

    def __repr__(self) -> str:
        return f"KStrikes(K={self.K})"

    @property
    def is_k_strikes(self) -> bool:
        return True

    @property
    def label(self) -> str:
        return f"{self.K}-strikes"

    def is_locked(self, state: AccountState) -> bool:
        return state.k_u >= self.K

    def login(self, state: AccountState, submitted: str, true_pw: str, oracle=None) -> tuple[AccountState, LoginOutcome]:
        if state.k_u >= self.K:
            return state, LoginOutcome.LOCKED
        if submitted == true_pw:
            return AccountState(0, state.psi_u), LoginOutcome.GRANTED
        return AccountState(state.k_u + 1, state.psi_u), LoginOutcome.DENIED
