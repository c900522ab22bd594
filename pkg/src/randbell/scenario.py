"""Bell scenario description: parties, local dimension, settings per party."""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_STRATEGY_CAP = 10**7


class CapExceededError(ValueError):
    """Raised when a scenario needs more deterministic strategies than allowed."""

    def __init__(self, required: int, cap: int, what: str = "deterministic strategies"):
        self.required = required
        self.cap = cap
        super().__init__(f"scenario needs {required} {what}, cap is {cap}")


@dataclass(frozen=True)
class Scenario:
    num_parties: int
    local_dim: int
    settings: tuple[int, ...]
    cap: int = DEFAULT_STRATEGY_CAP

    def __post_init__(self):
        object.__setattr__(self, "settings", tuple(int(m) for m in self.settings))
        if self.num_parties < 1:
            raise ValueError("need at least one party")
        if self.local_dim < 2:
            raise ValueError("local dimension must be >= 2")
        if len(self.settings) != self.num_parties:
            raise ValueError(
                f"{len(self.settings)} settings counts given for {self.num_parties} parties"
            )
        if any(m < 1 for m in self.settings):
            raise ValueError("every party needs at least one setting")
        if self.num_strategies > self.cap:
            raise CapExceededError(self.num_strategies, self.cap)

    @classmethod
    def from_string(cls, spec: str, local_dim: int = 2, cap: int = DEFAULT_STRATEGY_CAP) -> Scenario:
        """Parse ``"3x2x2"`` into a three-party scenario."""
        parts = spec.lower().split("x")
        try:
            settings = tuple(int(p) for p in parts)
        except ValueError:
            raise ValueError(f"bad settings string {spec!r}; expected e.g. 2x2x2") from None
        if any(p < 1 for p in settings):
            raise ValueError(f"bad settings string {spec!r}; counts must be positive")
        return cls(len(settings), local_dim, settings, cap)

    @property
    def label(self) -> str:
        return "x".join(str(m) for m in self.settings)

    @property
    def num_strategies(self) -> int:
        return self.local_dim ** sum(self.settings)

    @property
    def num_setting_tuples(self) -> int:
        return math.prod(self.settings)

    @property
    def num_marginal_rows(self) -> int:
        return self.num_setting_tuples * self.local_dim**self.num_parties

    @property
    def table_shape(self) -> tuple[int, ...]:
        return self.settings + (self.local_dim,) * self.num_parties
