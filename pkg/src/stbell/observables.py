"""The fixed objects of the space-time CHSH experiment.

Alice measures ``A = sz (x) 1`` or ``C = sx (x) 1``; Bob optionally rotates
his qubit with ``U+y`` or ``U-y`` and then measures
``B = -1 (x) (sz + sx)/sqrt2`` or ``D = 1 (x) (sz - sx)/sqrt2``.  The eight
(Alice observable, Bob unitary, Bob observable) triples are the subensembles
E1..E8; E1..E4 are the correctly evolved ones.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import quantum as q

THETA_1 = np.pi - np.pi / 4
THETA_2 = np.pi / 4

ALICE_OBS = ("A", "C")
BOB_OBS = ("B", "D")
UNITARIES = ("+y", "-y")


class ContextChoice(NamedTuple):
    """One round's choices; ``bob_unitary`` is None in the spatial experiment."""

    alice_obs: str
    bob_unitary: Optional[str]
    bob_obs: str

    def validate(self) -> ContextChoice:
        if self.alice_obs not in ALICE_OBS:
            raise q.KernelError(f"Alice observable must be A or C, got {self.alice_obs!r}")
        if self.bob_obs not in BOB_OBS:
            raise q.KernelError(f"Bob observable must be B or D, got {self.bob_obs!r}")
        if self.bob_unitary is not None and self.bob_unitary not in UNITARIES:
            raise q.KernelError(f"Bob unitary must be +y, -y or None, got {self.bob_unitary!r}")
        return self

    def __str__(self):
        u = "none" if self.bob_unitary is None else "U" + self.bob_unitary
        return f"({self.alice_obs}, {u}, {self.bob_obs})"


class SubensembleLabel(enum.Enum):
    E1 = ContextChoice("A", "+y", "B")
    E2 = ContextChoice("A", "-y", "D")
    E3 = ContextChoice("C", "-y", "B")
    E4 = ContextChoice("C", "+y", "D")
    E5 = ContextChoice("A", "-y", "B")
    E6 = ContextChoice("A", "+y", "D")
    E7 = ContextChoice("C", "+y", "B")
    E8 = ContextChoice("C", "-y", "D")

    @property
    def ctx(self) -> ContextChoice:
        return self.value

    @property
    def correct_context(self) -> bool:
        return self.name in ("E1", "E2", "E3", "E4")

    @property
    def kind(self) -> str:
        return "correct-context" if self.correct_context else "wrong-context"

    @property
    def perfect_sign(self) -> int:
        """+1 if outcomes must agree, -1 if they must disagree (E1..E4 only)."""
        if not self.correct_context:
            raise q.KernelError(f"{self.name} carries no perfect-correlation identity")
        return -1 if self is SubensembleLabel.E2 else 1


_BY_CTX = {label.value: label for label in SubensembleLabel}

CORRECT_LABELS = (SubensembleLabel.E1, SubensembleLabel.E2, SubensembleLabel.E3, SubensembleLabel.E4)
WRONG_LABELS = (SubensembleLabel.E5, SubensembleLabel.E6, SubensembleLabel.E7, SubensembleLabel.E8)


def classify(ctx: ContextChoice) -> Optional[SubensembleLabel]:
    """Subensemble of a space-time context; None for a spatial (no-unitary) round."""
    ctx = ContextChoice(*ctx).validate()
    if ctx.bob_unitary is None:
        return None
    return _BY_CTX[ctx]


@dataclass(frozen=True, eq=False)
class ObservableSpec:
    label: str
    projectors: q.ProjectorPair
    side: int

    eigenvalue_map = {"plus": 1, "minus": -1}

    def operator(self) -> np.ndarray:
        return self.projectors.operator()


def ket0() -> q.PureState:
    return q.PureState([1, 0])


def ket1() -> q.PureState:
    return q.PureState([0, 1])


def ket_plus() -> q.PureState:
    return q.PureState(np.array([1, 1]) / np.sqrt(2))


def ket_minus() -> q.PureState:
    return q.PureState(np.array([1, -1]) / np.sqrt(2))


def make_singlet() -> q.PureState:
    """``(|01> - |10>)/sqrt2``."""
    return q.PureState(np.array([0, 1, -1, 0]) / np.sqrt(2))


def singlet_density() -> q.DensityOp:
    return make_singlet().to_density()


def eigenket(obs: str, sign: int) -> q.PureState:
    """Bob's eigenkets, with the explicit ``e^{i pi}`` phases kept."""
    phase = np.exp(1j * np.pi)
    kets = {
        ("B", 1): (np.cos(THETA_1 / 2), phase * np.sin(THETA_1 / 2)),
        ("B", -1): (np.cos(THETA_2 / 2), np.sin(THETA_2 / 2)),
        ("D", 1): (np.cos(THETA_2 / 2), phase * np.sin(THETA_2 / 2)),
        ("D", -1): (np.cos(THETA_1 / 2), np.sin(THETA_1 / 2)),
    }
    try:
        return q.PureState(np.array(kets[obs, sign], dtype=complex))
    except KeyError:
        raise q.KernelError(f"no eigenket for observable {obs!r} with sign {sign!r}") from None


def make_unitary(which: str) -> q.UnitaryOp:
    """``exp(-/+ i (pi/8) sy)``: a 45 degree rotation about y, counter-clockwise for ``+y``."""
    if which not in UNITARIES:
        raise q.KernelError(f"unitary must be '+y' or '-y', got {which!r}")
    half = np.pi / 8
    s = np.sin(half) if which == "+y" else -np.sin(half)
    # exp(-i a sy) = cos a 1 - i sin a sy
    return q.UnitaryOp(np.cos(half) * q.I2 - 1j * s * q.SIGMA_Y)


def local_projectors(label: str) -> q.ProjectorPair:
    """Single-qubit projector pair for one of A, C, B, D."""
    if label == "A":
        return q.ProjectorPair.from_ket(ket0())
    if label == "C":
        return q.ProjectorPair.from_ket(ket_plus())
    if label in BOB_OBS:
        plus, minus = eigenket(label, 1), eigenket(label, -1)
        return q.ProjectorPair(
            np.outer(plus.amplitudes, plus.amplitudes.conj()),
            np.outer(minus.amplitudes, minus.amplitudes.conj()),
        )
    raise q.KernelError(f"unknown observable {label!r}")


def observable(label: str) -> ObservableSpec:
    side = 1 if label in ALICE_OBS else 2
    return ObservableSpec(label, local_projectors(label).embed(side), side)


def observable_matrix(label: str) -> np.ndarray:
    """The operator exactly as written down for each observable (used by checks)."""
    r2 = np.sqrt(2)
    return {
        "A": np.kron(q.SIGMA_Z, q.I2),
        "C": np.kron(q.SIGMA_X, q.I2),
        "B": -np.kron(q.I2, (q.SIGMA_Z + q.SIGMA_X) / r2),
        "D": np.kron(q.I2, (q.SIGMA_Z - q.SIGMA_X) / r2),
    }[label]


def bob_unitary(which: Optional[str]) -> q.UnitaryOp:
    """``1 (x) U`` acting on the pair; the identity when ``which`` is None."""
    if which is None:
        return q.UnitaryOp(np.eye(4))
    return q.embed_unitary(make_unitary(which), 2)


def born_joint_probability(ctx: ContextChoice, a: int, b: int, rho: Optional[q.DensityOp] = None) -> float:
    """``Tr(P_b U P_a rho P_a U^dag)`` for Alice outcome ``a`` and Bob outcome ``b``."""
    ctx = ContextChoice(*ctx).validate()
    rho = singlet_density() if rho is None else q.as_density(rho)
    pa = observable(ctx.alice_obs).projectors.projector(a)
    pb = observable(ctx.bob_obs).projectors.projector(b)
    u = bob_unitary(ctx.bob_unitary).matrix
    evolved = u @ pa @ rho.matrix @ pa @ u.conj().T
    return float(min(1.0, max(0.0, np.trace(pb @ evolved).real)))


def joint_table(ctx: ContextChoice, rho: Optional[q.DensityOp] = None) -> dict[tuple[int, int], float]:
    return {(a, b): born_joint_probability(ctx, a, b, rho) for a in (1, -1) for b in (1, -1)}


def analytic_expectation(ctx: ContextChoice, rho: Optional[q.DensityOp] = None) -> float:
    """``sum_ab p(a, b) a b``."""
    return sum(p * a * b for (a, b), p in joint_table(ctx, rho).items())


# (context, sign) for each of the four CHSH terms, in the order +, +, +, -
SPATIAL_TERMS = (
    (ContextChoice("A", None, "B"), 1),
    (ContextChoice("C", None, "B"), 1),
    (ContextChoice("C", None, "D"), 1),
    (ContextChoice("A", None, "D"), -1),
)
CORRECT_TERMS = (
    (SubensembleLabel.E1, 1),
    (SubensembleLabel.E3, 1),
    (SubensembleLabel.E4, 1),
    (SubensembleLabel.E2, -1),
)
WRONG_TERMS = (
    (SubensembleLabel.E5, 1),
    (SubensembleLabel.E7, 1),
    (SubensembleLabel.E8, 1),
    (SubensembleLabel.E6, -1),
)

MODES = ("spatial", "spacetime-correct", "spacetime-wrong")


def chsh_terms(mode: str):
    try:
        return {"spatial": SPATIAL_TERMS, "spacetime-correct": CORRECT_TERMS, "spacetime-wrong": WRONG_TERMS}[mode]
    except KeyError:
        raise q.ConfigError(f"unknown CHSH mode {mode!r}; expected one of {MODES}") from None


def analytic_chsh(mode: str, rho: Optional[q.DensityOp] = None) -> float:
    total = 0.0
    for key, sign in chsh_terms(mode):
        ctx = key.ctx if isinstance(key, SubensembleLabel) else key
        total += sign * analytic_expectation(ctx, rho)
    return total
