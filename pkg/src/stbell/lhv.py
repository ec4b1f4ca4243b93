"""Local hidden-variable baselines.

A deterministic strategy fixes Alice's two values ``a, c`` and Bob's four
evolved values ``b1, b2, d1, d2`` (the index is the Hamiltonian Bob used
before measuring).  Stochastic models are mixtures of strategies.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple

from .errors import ConfigError

POSTSELECTED = "postselected"
NO_POSTSELECTION = "no-postselection"


class LhvStrategy(NamedTuple):
    a: int
    c: int
    b1: int
    b2: int
    d1: int
    d2: int

    def validate(self) -> LhvStrategy:
        for name, v in zip(self._fields, self):
            if v not in (1, -1):
                raise ConfigError(f"strategy value {name}={v!r} is not +1/-1")
        return self


ALL_STRATEGIES = tuple(LhvStrategy(*v) for v in itertools.product((1, -1), repeat=6))
TRIVIAL_STRATEGY = LhvStrategy(1, 1, 1, 1, 1, -1)


def ic_no_postselection(s: LhvStrategy) -> Fraction:
    """``(a + c) bm + (c - a) dm`` with Bob's values averaged over the two evolutions."""
    s = LhvStrategy(*s).validate()
    bm = Fraction(s.b1 + s.b2, 2)
    dm = Fraction(s.d1 + s.d2, 2)
    return (s.a + s.c) * bm + (s.c - s.a) * dm


def ic_postselected(s: LhvStrategy) -> int:
    """``a b1 + c b2 + c d1 - a d2``."""
    s = LhvStrategy(*s).validate()
    return s.a * s.b1 + s.c * s.b2 + s.c * s.d1 - s.a * s.d2


_POINT_FUNCTIONS = {POSTSELECTED: ic_postselected, NO_POSTSELECTION: ic_no_postselection}


@dataclass(frozen=True)
class LhvPreparation:
    """Charlie's preparation: a probability distribution over strategies."""

    distribution: tuple[tuple[LhvStrategy, float], ...]

    def __post_init__(self):
        dist = tuple((LhvStrategy(*s).validate(), p) for s, p in self.distribution)
        if any(p < 0 for _, p in dist):
            raise ConfigError("preparation has a negative probability")
        total = sum(p for _, p in dist)
        if abs(total - 1) > 1e-12:
            raise ConfigError(f"preparation probabilities sum to {total}, expected 1")
        object.__setattr__(self, "distribution", dist)

    @classmethod
    def point(cls, s: LhvStrategy) -> LhvPreparation:
        return cls(((s, Fraction(1)),))

    @classmethod
    def uniform(cls, strategies: Iterable[LhvStrategy]) -> LhvPreparation:
        strategies = list(strategies)
        w = Fraction(1, len(strategies))
        return cls(tuple((s, w) for s in strategies))

    @classmethod
    def symmetric(cls, b1: int = 1, b2: int = 1, d1: int = 1, d2: int = -1) -> LhvPreparation:
        """``a`` and ``c`` independent and unbiased; Bob's four values fixed."""
        return cls.uniform(LhvStrategy(a, c, b1, b2, d1, d2) for a in (1, -1) for c in (1, -1))


def lhv_expectation(prep: LhvPreparation, which: str):
    """Probability-weighted mean of the chosen point function (exact for Fraction weights)."""
    try:
        fn = _POINT_FUNCTIONS[which]
    except KeyError:
        raise ConfigError(f"which must be {POSTSELECTED!r} or {NO_POSTSELECTION!r}, got {which!r}") from None
    return sum(p * fn(s) for s, p in prep.distribution)


def _number(x):
    x = Fraction(x)
    return int(x) if x.denominator == 1 else float(x)


def lhv_exhaustive_report() -> dict:
    """Enumerate all 64 deterministic strategies."""
    no_ps = [ic_no_postselection(s) for s in ALL_STRATEGIES]
    ps = [ic_postselected(s) for s in ALL_STRATEGIES]

    def hist(values):
        return {str(_number(k)): v for k, v in sorted(Counter(values).items())}

    return {
        "n_strategies": len(ALL_STRATEGIES),
        "no_postselection": {
            "max": _number(max(no_ps)),
            "min": _number(min(no_ps)),
            "max_abs": _number(max(abs(v) for v in no_ps)),
            "histogram": hist(no_ps),
        },
        "postselected": {
            "max": _number(max(ps)),
            "min": _number(min(ps)),
            "spectrum": sorted(set(ps)),
            "histogram": hist(ps),
        },
        "symmetric_preparation_postselected": _number(lhv_expectation(LhvPreparation.symmetric(), POSTSELECTED)),
        "trivial_strategy_postselected": _number(lhv_expectation(LhvPreparation.point(TRIVIAL_STRATEGY), POSTSELECTED)),
    }
