"""Exact one- and two-qubit kernel.

States, unitaries and projector pairs are thin immutable wrappers around
complex numpy arrays of dimension 2 or 4.  Constructors check the physical
invariants, so anything that exists is valid; the operations below only
re-check their inputs when ``CHECK_INVARIANTS`` is on (the default, and the
setting used by the test-suite).

Two-qubit basis order is ``|00>, |01>, |10>, |11>`` with qubit 1 belonging
to Alice and qubit 2 to Bob.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, KernelError

ATOL = 1e-12
CHAIN_ATOL = 1e-9
PSD_ATOL = 1e-10
ZERO_BRANCH = 1e-14

CHECK_INVARIANTS = os.environ.get("STBELL_TRUST_CONSTRUCTORS", "") in ("", "0")

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _frozen(arr, ndim):
    out = np.array(arr, dtype=complex, copy=True)
    if out.ndim != ndim or out.shape[0] not in (2, 4) or (ndim == 2 and out.shape[0] != out.shape[1]):
        raise KernelError(f"expected a dimension 2 or 4 {'vector' if ndim == 1 else 'matrix'}, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise KernelError("non-finite amplitude")
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes, 1)
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > ATOL:
            raise KernelError(f"state not normalized: <psi|psi> = {norm!r}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def to_density(self) -> DensityOp:
        return DensityOp(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True, eq=False)
class DensityOp:
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix, 2)
        if not np.allclose(m, m.conj().T, rtol=0, atol=ATOL):
            raise KernelError("density operator is not Hermitian")
        tr = np.trace(m)
        if abs(tr - 1.0) > ATOL:
            raise KernelError(f"density operator trace is {tr!r}, expected 1")
        lowest = float(np.linalg.eigvalsh(m)[0])
        if lowest < -PSD_ATOL:
            raise KernelError(f"density operator has negative eigenvalue {lowest!r}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def maximally_mixed(cls, dim: int = 4) -> DensityOp:
        return cls(np.eye(dim, dtype=complex) / dim)


@dataclass(frozen=True, eq=False)
class UnitaryOp:
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix, 2)
        if not np.allclose(m.conj().T @ m, np.eye(m.shape[0]), rtol=0, atol=ATOL):
            raise KernelError("operator is not unitary")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def dagger(self) -> UnitaryOp:
        return UnitaryOp(self.matrix.conj().T)


@dataclass(frozen=True, eq=False)
class ProjectorPair:
    """Orthogonal projectors onto the +1 and -1 eigenspaces of a dichotomic observable."""

    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        p, m = _frozen(self.plus, 2), _frozen(self.minus, 2)
        if p.shape != m.shape:
            raise KernelError("projector pair has mismatched dimensions")
        eye = np.eye(p.shape[0])
        for name, proj in (("plus", p), ("minus", m)):
            if not np.allclose(proj @ proj, proj, rtol=0, atol=ATOL):
                raise KernelError(f"{name} projector is not idempotent")
            if not np.allclose(proj, proj.conj().T, rtol=0, atol=ATOL):
                raise KernelError(f"{name} projector is not Hermitian")
        if not np.allclose(p + m, eye, rtol=0, atol=ATOL):
            raise KernelError("projector pair is not complete")
        if not np.allclose(p @ m, 0, rtol=0, atol=ATOL):
            raise KernelError("projector pair is not orthogonal")
        object.__setattr__(self, "plus", p)
        object.__setattr__(self, "minus", m)

    @property
    def dim(self) -> int:
        return self.plus.shape[0]

    @classmethod
    def from_ket(cls, ket: PureState) -> ProjectorPair:
        """Pair whose +1 projector is ``|ket><ket|``."""
        p = np.outer(ket.amplitudes, ket.amplitudes.conj())
        return cls(p, np.eye(ket.dim) - p)

    def operator(self) -> np.ndarray:
        """The observable ``(+1) P+ + (-1) P-``."""
        return self.plus - self.minus

    def projector(self, outcome: int) -> np.ndarray:
        if outcome == 1:
            return self.plus
        if outcome == -1:
            return self.minus
        raise KernelError(f"outcome must be +1 or -1, got {outcome!r}")

    def embed(self, side: int) -> ProjectorPair:
        """Lift a single-qubit pair onto qubit ``side`` (1 or 2) of the pair."""
        if self.dim != 2:
            raise KernelError("only single-qubit projectors can be embedded")
        return ProjectorPair(embed(self.plus, side), embed(self.minus, side))


State = Union[PureState, DensityOp]


def embed(op: np.ndarray, side: int) -> np.ndarray:
    """``op (x) 1`` for side 1, ``1 (x) op`` for side 2."""
    op = np.asarray(op, dtype=complex)
    if op.shape != (2, 2):
        raise KernelError(f"expected a 2x2 operator, got shape {op.shape}")
    if side == 1:
        return np.kron(op, I2)
    if side == 2:
        return np.kron(I2, op)
    raise KernelError(f"side must be 1 or 2, got {side!r}")


def embed_unitary(u: UnitaryOp, side: int) -> UnitaryOp:
    return UnitaryOp(embed(u.matrix, side))


def tensor(a: PureState, b: PureState) -> PureState:
    if a.dim != 2 or b.dim != 2:
        raise KernelError(f"tensor expects two qubit states, got dims {a.dim} and {b.dim}")
    return PureState(np.kron(a.amplitudes, b.amplitudes))


def apply_unitary(u: UnitaryOp | np.ndarray, s: State) -> State:
    if not isinstance(u, UnitaryOp):
        u = UnitaryOp(u)
    if u.dim != s.dim:
        raise KernelError(f"unitary of dim {u.dim} applied to state of dim {s.dim}")
    if isinstance(s, PureState):
        return PureState(u.matrix @ s.amplitudes)
    return DensityOp(u.matrix @ s.matrix @ u.matrix.conj().T)


def prob_plus(s: State, p: ProjectorPair) -> float:
    """Born probability of the +1 outcome.

    Values within ``ZERO_BRANCH`` of 0 or 1 are snapped, so perfectly
    correlated outcomes stay perfectly correlated under sampling.
    """
    if isinstance(s, PureState):
        val = float(np.vdot(s.amplitudes, p.plus @ s.amplitudes).real)
    else:
        val = float(np.trace(p.plus @ s.matrix).real)
    if val > 1.0 - ZERO_BRANCH:
        return 1.0
    if val < ZERO_BRANCH:
        return 0.0
    return val


def collapse(s: State, p: ProjectorPair, outcome: int) -> State:
    """Post-measurement state for ``outcome``; refuses zero-probability branches."""
    pp = prob_plus(s, p)
    branch = pp if outcome == 1 else 1.0 - pp
    proj = p.projector(outcome)
    if branch < ZERO_BRANCH:
        raise KernelError(f"collapse onto zero-probability branch {outcome:+d} (p = {branch!r})")
    if isinstance(s, PureState):
        v = proj @ s.amplitudes
        return PureState(v / np.linalg.norm(v))
    m = proj @ s.matrix @ proj
    m = m / np.trace(m).real
    return DensityOp((m + m.conj().T) / 2)


def measure(s: State, p: ProjectorPair, rng_draw: float) -> tuple[int, State, float]:
    """Projective measurement with collapse.

    ``rng_draw`` is a uniform sample in [0, 1); the outcome is +1 iff it
    falls below the +1 probability.
    """
    if CHECK_INVARIANTS:
        if not isinstance(s, (PureState, DensityOp)) or not isinstance(p, ProjectorPair):
            raise KernelError("measure expects a PureState/DensityOp and a ProjectorPair")
        if not 0.0 <= rng_draw < 1.0:
            raise KernelError(f"rng_draw must lie in [0, 1), got {rng_draw!r}")
    if s.dim != p.dim:
        raise KernelError(f"projector of dim {p.dim} applied to state of dim {s.dim}")
    pp = prob_plus(s, p)
    outcome = 1 if rng_draw < pp else -1
    return outcome, collapse(s, p, outcome), pp


def fidelity(a: PureState, b: PureState) -> float:
    """Phase-insensitive overlap ``|<a|b>|``."""
    if a.dim != b.dim:
        raise KernelError(f"fidelity between dims {a.dim} and {b.dim}")
    return float(min(1.0, abs(np.vdot(a.amplitudes, b.amplitudes))))


def depolarize(rho: DensityOp, p: float) -> DensityOp:
    """Werner-style mixing ``(1-p) rho + p 1/d``."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"depolarizing probability must be in [0, 1], got {p!r}")
    if p == 0.0:
        return rho
    d = rho.dim
    return DensityOp((1.0 - p) * rho.matrix + p * np.eye(d) / d)


def as_density(s: State) -> DensityOp:
    return s.to_density() if isinstance(s, PureState) else s


def partial_trace(rho: DensityOp, keep: int) -> DensityOp:
    """Reduced single-qubit state of qubit ``keep`` (1 = Alice, 2 = Bob)."""
    if rho.dim != 4:
        raise KernelError("partial trace needs a two-qubit state")
    t = rho.matrix.reshape(2, 2, 2, 2)
    if keep == 1:
        return DensityOp(np.einsum("ijkj->ik", t))
    if keep == 2:
        return DensityOp(np.einsum("ijil->jl", t))
    raise KernelError(f"keep must be 1 or 2, got {keep!r}")


def product_state(rho_a: DensityOp, rho_b: DensityOp) -> DensityOp:
    if rho_a.dim != 2 or rho_b.dim != 2:
        raise KernelError("product_state expects two single-qubit states")
    return DensityOp(np.kron(rho_a.matrix, rho_b.matrix))
