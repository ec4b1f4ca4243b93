"""Monte Carlo rounds, subensemble partitioning and CHSH estimates.

Rounds are generated in bulk by the batched kernel (``stbell.kernel``) and
kept column-wise in a :class:`RoundLog`.  :func:`simulate_round` is the
slow reference path that walks one round through the exact kernel in
``stbell.quantum``; given the same ``RngSpec`` it reproduces the batched
rounds outcome for outcome.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import kernel, observables as obs, quantum as q
from . import rng as rng_mod
from .errors import ConfigError, InsufficientDataError, KernelError
from .observables import ContextChoice, SubensembleLabel
from .rng import RngSpec

SPATIAL = "spatial"
SPACETIME = "spacetime"
EXPERIMENT_MODES = (SPATIAL, SPACETIME)

# integer codes used by the kernel and the columnar log
UNITARY_CODES = (None, "+y", "-y")
LABELS = tuple(SubensembleLabel)
NO_LABEL = -1

CHUNK_ROUNDS = 1 << 15


def _label_table():
    table = np.full((2, 3, 2), NO_LABEL, dtype=np.int8)
    for i, label in enumerate(LABELS):
        ctx = label.ctx
        table[obs.ALICE_OBS.index(ctx.alice_obs), UNITARY_CODES.index(ctx.bob_unitary), obs.BOB_OBS.index(ctx.bob_obs)] = i
    return table


LABEL_CODE = _label_table()


def _kernel_operators():
    alice_proj = np.empty((2, 2, 4, 4), dtype=complex)
    for i, name in enumerate(obs.ALICE_OBS):
        pair = obs.observable(name).projectors
        alice_proj[i, 0], alice_proj[i, 1] = pair.plus, pair.minus
    bob_proj = np.stack([obs.observable(name).projectors.plus for name in obs.BOB_OBS])
    unitaries = np.stack([obs.bob_unitary(u).matrix for u in UNITARY_CODES])
    return alice_proj, bob_proj, unitaries


ALICE_PROJ, BOB_PROJ, BOB_UNITARIES = _kernel_operators()


# --------------------------------------------------------------------------
# state suppliers


class FixedSource:
    """Every round starts from the same state."""

    def __init__(self, rho: Union[q.PureState, q.DensityOp, None] = None):
        self.rho = obs.singlet_density() if rho is None else q.as_density(rho)

    def states(self) -> list[q.DensityOp]:
        return [self.rho]

    def select(self, uniforms: np.ndarray) -> np.ndarray:
        return np.zeros(len(uniforms), dtype=np.intc)


def _coerce_source(source):
    if source is None:
        return FixedSource()
    if isinstance(source, (q.PureState, q.DensityOp)):
        return FixedSource(source)
    if not (hasattr(source, "states") and hasattr(source, "select")):
        raise ConfigError("state source must provide states() and select(uniforms)")
    return source


# --------------------------------------------------------------------------
# round records


@dataclass(frozen=True)
class RoundRecord:
    j: int
    t_alice: int
    t_bob: int
    ctx: ContextChoice
    alice_outcome: int
    bob_outcome: int
    label: Optional[SubensembleLabel]


@dataclass(frozen=True, eq=False)
class RoundLog:
    """Column-wise round storage; ``label`` is -1 for spatial rounds, else 0..7 for E1..E8."""

    index: np.ndarray
    alice_obs: np.ndarray
    bob_unitary: np.ndarray
    bob_obs: np.ndarray
    alice_outcome: np.ndarray
    bob_outcome: np.ndarray
    label: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "label", LABEL_CODE[self.alice_obs, self.bob_unitary, self.bob_obs])

    def __len__(self):
        return len(self.index)

    @property
    def t_alice(self) -> np.ndarray:
        return 2 * self.index

    @property
    def t_bob(self) -> np.ndarray:
        return 2 * self.index + 1

    def subset(self, mask) -> RoundLog:
        return RoundLog(
            self.index[mask], self.alice_obs[mask], self.bob_unitary[mask],
            self.bob_obs[mask], self.alice_outcome[mask], self.bob_outcome[mask],
        )

    def record(self, i: int) -> RoundRecord:
        code = int(self.label[i])
        j = int(self.index[i])
        return RoundRecord(
            j=j,
            t_alice=2 * j,
            t_bob=2 * j + 1,
            ctx=ContextChoice(
                obs.ALICE_OBS[self.alice_obs[i]], UNITARY_CODES[self.bob_unitary[i]], obs.BOB_OBS[self.bob_obs[i]]
            ),
            alice_outcome=int(self.alice_outcome[i]),
            bob_outcome=int(self.bob_outcome[i]),
            label=None if code == NO_LABEL else LABELS[code],
        )

    def records(self) -> Iterable[RoundRecord]:
        return (self.record(i) for i in range(len(self)))

    def __iter__(self):
        return iter(self.records())

    @classmethod
    def from_records(cls, records: Iterable[RoundRecord]) -> RoundLog:
        rows = list(records)
        for r in rows:
            if r.t_bob <= r.t_alice:
                raise ConfigError(f"round {r.j}: Bob's tick must follow Alice's")
        return cls(
            np.array([r.j for r in rows], dtype=np.int64),
            np.array([obs.ALICE_OBS.index(r.ctx.alice_obs) for r in rows], dtype=np.int8),
            np.array([UNITARY_CODES.index(r.ctx.bob_unitary) for r in rows], dtype=np.int8),
            np.array([obs.BOB_OBS.index(r.ctx.bob_obs) for r in rows], dtype=np.int8),
            np.array([r.alice_outcome for r in rows], dtype=np.int8),
            np.array([r.bob_outcome for r in rows], dtype=np.int8),
        )

    @classmethod
    def concat(cls, logs: Sequence[RoundLog]) -> RoundLog:
        if not logs:
            return cls.empty()
        return cls(*(np.concatenate([getattr(log, name) for log in logs]) for name in _COLUMNS))

    @classmethod
    def empty(cls) -> RoundLog:
        z8 = np.zeros(0, dtype=np.int8)
        return cls(np.zeros(0, dtype=np.int64), z8, z8, z8, z8, z8)


_COLUMNS = ("index", "alice_obs", "bob_unitary", "bob_obs", "alice_outcome", "bob_outcome")


def _as_log(rounds) -> RoundLog:
    return rounds if isinstance(rounds, RoundLog) else RoundLog.from_records(rounds)


# --------------------------------------------------------------------------
# simulation


def _choices(u: np.ndarray, mode: str, forced: Optional[ContextChoice]):
    n = len(u)
    if forced is not None:
        forced = ContextChoice(*forced).validate()
        if (forced.bob_unitary is None) != (mode == SPATIAL):
            raise ConfigError(f"forced context {forced} does not fit {mode} mode")
        return (
            np.full(n, obs.ALICE_OBS.index(forced.alice_obs), dtype=np.int8),
            np.full(n, UNITARY_CODES.index(forced.bob_unitary), dtype=np.int8),
            np.full(n, obs.BOB_OBS.index(forced.bob_obs), dtype=np.int8),
        )
    alice = (u[:, rng_mod.ALICE_CHOICE] >= 0.5).astype(np.int8)
    if mode == SPATIAL:
        unitary = np.zeros(n, dtype=np.int8)
    else:
        unitary = np.where(u[:, rng_mod.BOB_UNITARY] < 0.5, 1, 2).astype(np.int8)
    bob = (u[:, rng_mod.BOB_CHOICE] >= 0.5).astype(np.int8)
    return alice, unitary, bob


def _simulate_chunk(start, count, spec, mode, source, state_stack, forced, kern):
    u = rng_mod.round_uniforms(spec, start, count)
    alice, unitary, bob = _choices(u, mode, forced)
    state_idx = np.ascontiguousarray(source.select(u), dtype=np.intc)
    a, b, status = kern(
        state_stack, state_idx, alice, unitary, bob,
        np.ascontiguousarray(u[:, rng_mod.ALICE_OUTCOME]), np.ascontiguousarray(u[:, rng_mod.BOB_OUTCOME]),
        ALICE_PROJ, BOB_PROJ, BOB_UNITARIES,
    )
    if status:
        raise KernelError(f"round {start + status - 1}: collapse onto a zero-probability branch")
    return RoundLog(np.arange(start, start + count, dtype=np.int64), alice, unitary, bob, a, b)


def simulate(
    n_rounds: int,
    rng: RngSpec,
    mode: str = SPACETIME,
    source=None,
    *,
    start: int = 0,
    forced: Optional[ContextChoice] = None,
    workers: int = 1,
    backend: Optional[str] = None,
) -> RoundLog:
    """Simulate rounds ``start .. start+n_rounds-1`` with the batched kernel.

    Output is identical for every ``workers`` value: each round's randomness
    depends only on ``(rng.seed, rng.stream_id, round index)``.
    """
    if mode not in EXPERIMENT_MODES:
        raise ConfigError(f"mode must be one of {EXPERIMENT_MODES}, got {mode!r}")
    if n_rounds < 0:
        raise ConfigError("n_rounds must be non-negative")
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    source = _coerce_source(source)
    state_stack = np.ascontiguousarray(np.stack([s.matrix for s in source.states()]), dtype=complex)
    if state_stack.shape[1:] != (4, 4):
        raise KernelError("state source must supply two-qubit states")
    kern = kernel.get_backend(backend)
    bounds = [(lo, min(n_rounds, lo + CHUNK_ROUNDS) - lo) for lo in range(0, n_rounds, CHUNK_ROUNDS)]

    def work(bound):
        return _simulate_chunk(start + bound[0], bound[1], rng, mode, source, state_stack, forced, kern)

    if workers == 1 or len(bounds) <= 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, bounds))
    return RoundLog.concat(parts)


def simulate_round(
    j: int,
    rng: RngSpec,
    mode: str = SPACETIME,
    rho_source=None,
    forced: Optional[ContextChoice] = None,
) -> RoundRecord:
    """One round through the exact kernel: Alice measures and collapses, Bob
    (in space-time mode) rotates his qubit, then Bob measures."""
    if mode not in EXPERIMENT_MODES:
        raise ConfigError(f"mode must be one of {EXPERIMENT_MODES}, got {mode!r}")
    source = _coerce_source(rho_source)
    u = rng_mod.round_uniforms(rng, j, 1)
    states = source.states()
    rho = states[int(source.select(u)[0])]
    alice, unitary, bob = (int(c[0]) for c in _choices(u, mode, forced))
    u = u[0]
    ctx = ContextChoice(obs.ALICE_OBS[alice], UNITARY_CODES[unitary], obs.BOB_OBS[bob])

    a, state, _ = q.measure(rho, obs.observable(ctx.alice_obs).projectors, u[rng_mod.ALICE_OUTCOME])
    if ctx.bob_unitary is not None:
        state = q.apply_unitary(obs.bob_unitary(ctx.bob_unitary), state)
    b, _, _ = q.measure(state, obs.observable(ctx.bob_obs).projectors, u[rng_mod.BOB_OUTCOME])
    return RoundRecord(j, 2 * j, 2 * j + 1, ctx, a, b, obs.classify(ctx))


# --------------------------------------------------------------------------
# statistics


def classify(ctx: ContextChoice) -> Optional[SubensembleLabel]:
    return obs.classify(ctx)


def partition(rounds) -> dict[SubensembleLabel, RoundLog]:
    """Split space-time rounds into E1..E8 (spatial rounds belong to none)."""
    log = _as_log(rounds)
    return {label: log.subset(log.label == i) for i, label in enumerate(LABELS)}


def bucket_counts(rounds) -> dict[str, int]:
    log = _as_log(rounds)
    counts = np.bincount(log.label[log.label >= 0], minlength=len(LABELS))
    return {label.name: int(c) for label, c in zip(LABELS, counts)}


@dataclass(frozen=True)
class TermEstimate:
    label: str
    sign: int
    expectation: float
    count: int
    std_error: float


@dataclass(frozen=True)
class ChshEstimate:
    value: float
    terms: tuple[TermEstimate, ...]
    std_error: float
    mode: str

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "value": self.value,
            "std_error": self.std_error,
            "terms": [
                {"label": t.label, "sign": t.sign, "expectation": t.expectation, "count": t.count, "std_error": t.std_error}
                for t in self.terms
            ],
        }


def _term_mask(log: RoundLog, key) -> np.ndarray:
    if isinstance(key, SubensembleLabel):
        return log.label == LABELS.index(key)
    return (
        (log.bob_unitary == 0)
        & (log.alice_obs == obs.ALICE_OBS.index(key.alice_obs))
        & (log.bob_obs == obs.BOB_OBS.index(key.bob_obs))
    )


def _term_name(key) -> str:
    return key.name if isinstance(key, SubensembleLabel) else key.alice_obs + key.bob_obs


def chsh_statistic(rounds, mode: str) -> ChshEstimate:
    """``<t1> + <t2> + <t3> - <t4>`` from per-term sample means.

    Terms come from disjoint rounds, so their standard errors add in
    quadrature.
    """
    terms_spec = obs.chsh_terms(mode)
    log = _as_log(rounds)
    terms, missing = [], []
    for key, sign in terms_spec:
        mask = _term_mask(log, key)
        n = int(mask.sum())
        if n == 0:
            missing.append(_term_name(key))
            continue
        prod = log.alice_outcome[mask].astype(np.int64) * log.bob_outcome[mask]
        mean = int(prod.sum()) / n
        terms.append(TermEstimate(_term_name(key), sign, mean, n, math.sqrt(max(0.0, 1.0 - mean * mean) / n)))
    if missing:
        raise InsufficientDataError(f"no rounds for {', '.join(missing)} in {mode} CHSH estimate", missing)
    value = sum(t.sign * t.expectation for t in terms)
    err = math.sqrt(sum(t.std_error ** 2 for t in terms))
    return ChshEstimate(value, tuple(terms), err, mode)


# --------------------------------------------------------------------------
# export

CSV_COLUMNS = ("j", "t_alice", "t_bob", "alice_obs", "bob_unitary", "bob_obs", "alice_outcome", "bob_outcome", "label")


def write_csv(rounds, fh) -> None:
    """Write a round log as CSV to an open text file."""
    log = _as_log(rounds)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    alice = np.array(obs.ALICE_OBS)[log.alice_obs]
    unitary = np.array(["none", "+y", "-y"])[log.bob_unitary]
    bob = np.array(obs.BOB_OBS)[log.bob_obs]
    names = np.array([label.name for label in LABELS] + [""])[log.label]
    writer.writerows(
        zip(
            log.index.tolist(), log.t_alice.tolist(), log.t_bob.tolist(), alice.tolist(), unitary.tolist(),
            bob.tolist(), log.alice_outcome.tolist(), log.bob_outcome.tolist(), names.tolist(),
        )
    )


def read_csv(fh) -> RoundLog:
    records = []
    for row in csv.DictReader(fh):
        unitary = None if row["bob_unitary"] == "none" else row["bob_unitary"]
        ctx = ContextChoice(row["alice_obs"], unitary, row["bob_obs"])
        records.append(
            RoundRecord(
                int(row["j"]), int(row["t_alice"]), int(row["t_bob"]), ctx,
                int(row["alice_outcome"]), int(row["bob_outcome"]), obs.classify(ctx),
            )
        )
    return RoundLog.from_records(records)


def to_csv_string(rounds) -> str:
    buf = io.StringIO()
    write_csv(rounds, buf)
    return buf.getvalue()
