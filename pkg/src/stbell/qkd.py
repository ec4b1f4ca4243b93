"""ST key distribution on top of the space-time CHSH experiment.

Alice and Bob share singlets through a tamperable quantum channel and talk
over an authenticated classical channel.  After the rounds are measured
they announce their choices (never outcomes), sort rounds into E1..E8, and
test for eavesdropping in two steps:

1. reveal every E5..E8 outcome and require the wrong-context CHSH value to
   be compatible with 0;
2. reveal a random slice of E1..E4 and count rounds that break the perfect
   (anti)correlation ``a=b``, ``a=-d``, ``c=b``, ``c=d``.

The unrevealed E1..E4 rounds become the key; Bob inverts his E2 bits.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import engine, observables as obs, quantum as q
from . import rng as rng_mod
from .engine import ChshEstimate, RoundLog, RoundRecord
from .errors import ConfigError, InsufficientDataError, ProtocolError
from .observables import CORRECT_LABELS, SubensembleLabel
from .rng import RngSpec

EVE_KINDS = ("none", "intercept-resend-z", "intercept-resend-random", "break-entanglement")
EVE_ALIASES = {
    "none": "none",
    "intercept-z": "intercept-resend-z",
    "intercept-random": "intercept-resend-random",
    "break": "break-entanglement",
}

DEFAULT_EPSILON = 0.05
DEFAULT_TAU2 = 0.05
TAU1_FLOOR = 0.2
TAU1_SIGMAS = 5.0
DEFAULT_BB84_X = 0.95

_LABEL_INDEX = {label: i for i, label in enumerate(engine.LABELS)}
_CORRECT_CODES = np.array([_LABEL_INDEX[label] for label in CORRECT_LABELS])
_E2 = _LABEL_INDEX[SubensembleLabel.E2]
# +1 where outcomes must agree, -1 where they must differ, indexed by label code
_PERFECT_SIGN = np.array([label.perfect_sign if label.correct_context else 0 for label in engine.LABELS], dtype=np.int8)


# --------------------------------------------------------------------------
# quantum channel


@dataclass(frozen=True)
class EveModel:
    kind: str = "none"
    attack_fraction: float = 1.0

    def __post_init__(self):
        kind = EVE_ALIASES.get(self.kind, self.kind)
        if kind not in EVE_KINDS:
            raise ConfigError(f"unknown eavesdropper {self.kind!r}; expected one of {EVE_KINDS}")
        if not 0.0 <= self.attack_fraction <= 1.0:
            raise ConfigError(f"attack fraction must be in [0, 1], got {self.attack_fraction!r}")
        object.__setattr__(self, "kind", kind)


def _dephase_bob(rho: q.DensityOp, basis: str) -> q.DensityOp:
    """Eve measures Bob's qubit in ``basis`` and forwards what she saw."""
    pair = obs.local_projectors("A" if basis == "z" else "C").embed(2)
    m = sum(p @ rho.matrix @ p for p in (pair.plus, pair.minus))
    return q.DensityOp(m)


def _attacked(rho: q.DensityOp, kind: str, basis: str = "z") -> q.DensityOp:
    if kind == "intercept-resend-z":
        return _dephase_bob(rho, "z")
    if kind == "intercept-resend-random":
        return _dephase_bob(rho, basis)
    if kind == "break-entanglement":
        return q.product_state(q.partial_trace(rho, 1), q.partial_trace(rho, 2))
    return rho


def quantum_channel(rho, eve: EveModel, noise_p: float = 0.0, rng: Optional[np.random.Generator] = None) -> q.DensityOp:
    """State of one pair after Eve (with probability ``attack_fraction``) and depolarizing noise.

    Intercept-resend is returned averaged over Eve's outcome.  ``rng`` is
    only consulted when the attack is not deterministic.
    """
    rho = q.as_density(rho)
    if eve.kind != "none" and eve.attack_fraction > 0:
        need_rng = eve.attack_fraction < 1 or eve.kind == "intercept-resend-random"
        if need_rng and rng is None:
            raise ConfigError(f"{eve.kind} at fraction {eve.attack_fraction} needs an rng")
        hit = True if eve.attack_fraction >= 1 else rng.random() < eve.attack_fraction
        if hit:
            basis = "z"
            if eve.kind == "intercept-resend-random":
                basis = "z" if rng.random() < 0.5 else "x"
            rho = _attacked(rho, eve.kind, basis)
    return q.depolarize(rho, noise_p)


class ChannelSource:
    """Per-round state supplier for the engine, driven by the round's Eve draws."""

    def __init__(self, eve: EveModel, noise_p: float = 0.0, rho: Optional[q.DensityOp] = None):
        self.eve = eve
        self.noise_p = noise_p
        base = obs.singlet_density() if rho is None else q.as_density(rho)
        # index 0 untouched, 1 attacked (z basis), 2 attacked (x basis)
        self._states = [q.depolarize(base, noise_p)]
        if eve.kind != "none":
            self._states.append(q.depolarize(_attacked(base, eve.kind, "z"), noise_p))
            self._states.append(q.depolarize(_attacked(base, eve.kind, "x"), noise_p))

    def states(self) -> list[q.DensityOp]:
        return self._states

    def select(self, uniforms: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(uniforms), dtype=np.intc)
        if self.eve.kind == "none":
            return idx
        hit = uniforms[:, rng_mod.EVE_ATTACK] < self.eve.attack_fraction
        if self.eve.kind == "intercept-resend-random":
            x_basis = uniforms[:, rng_mod.EVE_BASIS] >= 0.5
            idx[hit] = np.where(x_basis[hit], 2, 1)
        else:
            idx[hit] = 1
        return idx


# --------------------------------------------------------------------------
# classical channel


@dataclass(frozen=True)
class SiftingMessage:
    kind: str
    sender: str
    payload: dict

    KINDS = ("obs-announcement", "unitary-announcement", "test-reveal", "verdict")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ProtocolError(f"unknown message kind {self.kind!r}")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "sender": self.sender, "payload": self.payload}, sort_keys=True)


class ClassicalChannel:
    """Reliable, ordered, authenticated in-process delivery with a full log."""

    def __init__(self):
        self.log: list[SiftingMessage] = []

    def send(self, kind: str, sender: str, payload: dict) -> SiftingMessage:
        msg = SiftingMessage(kind, sender, payload)
        self.log.append(msg)
        return msg

    def last(self, kind: str, sender: str) -> SiftingMessage:
        for msg in reversed(self.log):
            if msg.kind == kind and msg.sender == sender:
                return msg
        raise ProtocolError(f"no {kind} message from {sender}")

    def transcript_jsonl(self) -> str:
        return "".join(m.to_json() + "\n" for m in self.log)


# --------------------------------------------------------------------------
# parties

_PHASES = ("measured", "announced", "sifted", "tested", "done")


class _Party:
    name = ""

    def __init__(self, log: RoundLog, channel: ClassicalChannel):
        self._log = log
        self.channel = channel
        self.phase = "measured"
        self.labels: Optional[np.ndarray] = None

    def _advance(self, to: str):
        if _PHASES.index(to) != _PHASES.index(self.phase) + 1:
            raise ProtocolError(f"{self.name} cannot go from {self.phase} to {to}")
        self.phase = to

    @property
    def _outcomes(self) -> np.ndarray:
        raise NotImplementedError

    def sift(self):
        """Rebuild the subensemble labels from the public announcements."""
        self._advance("sifted")
        alice = self.channel.last("obs-announcement", "alice").payload["observables"]
        bob = self.channel.last("obs-announcement", "bob").payload["observables"]
        unitaries = self.channel.last("unitary-announcement", "bob").payload["unitaries"]
        a_code = np.frombuffer(alice.encode(), dtype=np.uint8) == ord("C")
        b_code = np.frombuffer(bob.encode(), dtype=np.uint8) == ord("D")
        u_code = np.where(np.frombuffer(unitaries.encode(), dtype=np.uint8) == ord("+"), 1, 2)
        self.labels = engine.LABEL_CODE[a_code.astype(np.intp), u_code, b_code.astype(np.intp)]
        return self.labels

    def reveal(self, positions: np.ndarray, step: int) -> SiftingMessage:
        out = self._outcomes[positions]
        pairs = [[int(j), int(o)] for j, o in zip(self._log.index[positions], out)]
        return self.channel.send("test-reveal", self.name, {"step": step, "outcomes": pairs})

    def key_bits(self, positions: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Alice(_Party):
    name = "alice"

    @property
    def _outcomes(self):
        return self._log.alice_outcome

    def announce(self):
        self._advance("announced")
        choices = "".join(np.array(obs.ALICE_OBS)[self._log.alice_obs])
        self.channel.send("obs-announcement", self.name, {"observables": choices})

    def key_bits(self, positions):
        return (self._log.alice_outcome[positions] == 1).astype(np.uint8)


class Bob(_Party):
    name = "bob"

    @property
    def _outcomes(self):
        return self._log.bob_outcome

    def announce(self):
        self._advance("announced")
        choices = "".join(np.array(obs.BOB_OBS)[self._log.bob_obs])
        unitaries = "".join(np.array(["?", "+", "-"])[self._log.bob_unitary])
        self.channel.send("obs-announcement", self.name, {"observables": choices})
        self.channel.send("unitary-announcement", self.name, {"unitaries": unitaries})

    def key_bits(self, positions):
        bits = (self._log.bob_outcome[positions] == 1).astype(np.uint8)
        # E2 outcomes are anticorrelated with Alice's
        return bits ^ (self.labels[positions] == _E2).astype(np.uint8)


def _revealed_pairs(msg_alice: SiftingMessage, msg_bob: SiftingMessage):
    a = msg_alice.payload["outcomes"]
    b = msg_bob.payload["outcomes"]
    if [j for j, _ in a] != [j for j, _ in b]:
        raise ProtocolError("Alice and Bob revealed different rounds")
    return np.array([o for _, o in a], dtype=np.int8), np.array([o for _, o in b], dtype=np.int8)


# --------------------------------------------------------------------------
# tests on revealed data


def perfect_correlation_check(revealed: Iterable) -> int:
    """Number of revealed correct-context rounds breaking their identity.

    ``revealed`` holds ``(round_or_label, alice_outcome, bob_outcome)``
    triples; the first item is a RoundRecord or a SubensembleLabel.
    """
    errors = 0
    for item, a, b in revealed:
        label = item.label if isinstance(item, RoundRecord) else item
        if not isinstance(label, SubensembleLabel) or not label.correct_context:
            raise ProtocolError(f"perfect-correlation check got a round from {getattr(label, 'name', label)}")
        if a * b != label.perfect_sign:
            errors += 1
    return errors


def four_outcome_iq_check(revealed: Iterable) -> int:
    """``ab + cb + cd - ad`` from one revealed round in each of E1..E4."""
    products: dict[SubensembleLabel, int] = {}
    for item, a, b in revealed:
        label = item.label if isinstance(item, RoundRecord) else item
        if label not in CORRECT_LABELS:
            raise ProtocolError(f"four-outcome check got a round from {getattr(label, 'name', label)}")
        if label in products:
            raise ProtocolError(f"four-outcome check got two rounds from {label.name}")
        products[label] = a * b
    missing = [label.name for label in CORRECT_LABELS if label not in products]
    if missing:
        raise ProtocolError(f"four-outcome check is missing {', '.join(missing)}")
    E1, E2, E3, E4 = CORRECT_LABELS
    return products[E1] + products[E3] + products[E4] - products[E2]


def clopper_pearson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    alpha = 1 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


# --------------------------------------------------------------------------
# resource accounting

# kept as printed (3/9, not 1/3)
PUBLISHED_TABLE = {
    "Ekert": {"key": "2/9", "test": "4/9", "discard": "3/9", "waste": "7/9"},
    "Wigner": {"key": "1/4", "test": "3/4", "discard": "0", "waste": "3/4"},
}


def _fmt(x) -> dict:
    if isinstance(x, str):
        return {"exact": x, "value": float(Fraction(x))}
    if isinstance(x, Fraction):
        return {"exact": str(x), "value": float(x)}
    return {"exact": None, "value": float(x)}


def accounting_table(epsilon: float, x: float = DEFAULT_BB84_X) -> dict:
    """Per-protocol {key, test, discard, waste} fractions; waste = test + discard."""
    if not 0 < x < 1:
        raise ConfigError(f"BB84' parameter x must be in (0, 1), got {x!r}")
    rows = {name: {k: _fmt(v) for k, v in row.items()} for name, row in PUBLISHED_TABLE.items()}
    rows["ST"] = {
        "key": _fmt(0.5 - epsilon), "test": _fmt(0.5 + epsilon), "discard": _fmt(Fraction(0)), "waste": _fmt(0.5 + epsilon),
    }
    rows["BB84'"] = {"key": _fmt(x / 2), "test": _fmt((1 - x) / 2), "discard": _fmt(Fraction(1, 2)), "waste": _fmt((2 - x) / 2)}
    # accounting only: Bob holds his qubit until Alice's choices are public, so every round is correctly evolved
    rows["ST (quantum memory)"] = {
        "key": _fmt(1 - epsilon), "test": _fmt(epsilon), "discard": _fmt(Fraction(0)), "waste": _fmt(epsilon),
    }
    return rows


def resource_accounting(counts: dict, n_rounds: int, epsilon: float, x: float = DEFAULT_BB84_X) -> dict:
    """Empirical purpose fractions next to the published comparison rows."""
    if sum(counts.values()) != n_rounds:
        raise ProtocolError("every round must be assigned exactly one purpose")
    fractions = {k: counts[k] / n_rounds for k in ("key", "test", "discard")}
    fractions["waste"] = fractions["test"] + fractions["discard"]
    # multinomial standard error of the key fraction around 1/2 - epsilon
    p = 0.5 - epsilon
    return {
        "empirical": fractions,
        "counts": dict(counts),
        "expected_key_fraction": p,
        "key_fraction_std_error": math.sqrt(p * (1 - p) / n_rounds),
        "bb84_x": x,
        "table": accounting_table(epsilon, x),
    }


# --------------------------------------------------------------------------
# protocol driver


@dataclass(frozen=True)
class QkdConfig:
    n_rounds: int
    rng: RngSpec
    epsilon: float = DEFAULT_EPSILON
    tau1: Optional[float] = None
    tau2: float = DEFAULT_TAU2
    noise_p: float = 0.0
    bb84_x: float = DEFAULT_BB84_X

    def __post_init__(self):
        if not isinstance(self.n_rounds, (int, np.integer)) or self.n_rounds < 8:
            raise ConfigError(f"n_rounds must be an integer >= 8, got {self.n_rounds!r}")
        # epsilon is a share of all rounds, so at most the whole correct-context half
        if not 0 < self.epsilon < 0.5:
            raise ConfigError(f"epsilon must be in (0, 0.5), got {self.epsilon!r}")
        if self.tau1 is not None and not self.tau1 > 0:
            raise ConfigError(f"tau1 must be positive, got {self.tau1!r}")
        if not 0 <= self.tau2 < 1:
            raise ConfigError(f"tau2 must be in [0, 1), got {self.tau2!r}")
        if not 0 <= self.noise_p <= 1:
            raise ConfigError(f"noise must be in [0, 1], got {self.noise_p!r}")
        if not 0 < self.bb84_x < 1:
            raise ConfigError(f"bb84_x must be in (0, 1), got {self.bb84_x!r}")


@dataclass
class QkdReport:
    verdict: str
    key_bits_alice: np.ndarray
    key_bits_bob: np.ndarray
    step1_IQ: ChshEstimate
    step1_threshold: float
    step2_revealed: Optional[int]
    step2_error_count: Optional[int]
    four_outcome_iq: Optional[int]
    fractions: dict
    bucket_counts: dict
    accounting: dict
    config: QkdConfig
    eve: EveModel
    transcript: list = field(repr=False, default_factory=list)

    @property
    def step2_error_rate(self) -> Optional[float]:
        if not self.step2_revealed:
            return None
        return self.step2_error_count / self.step2_revealed

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"

    def key_hex(self, party: str = "alice") -> str:
        bits = self.key_bits_alice if party == "alice" else self.key_bits_bob
        return np.packbits(bits).tobytes().hex()

    def transcript_jsonl(self) -> str:
        return "".join(m.to_json() + "\n" for m in self.transcript)

    def to_dict(self) -> dict:
        step2 = None
        if self.step2_revealed is not None:
            lo, hi = clopper_pearson(self.step2_error_count, self.step2_revealed)
            step2 = {
                "revealed": self.step2_revealed,
                "errors": self.step2_error_count,
                "error_rate": self.step2_error_rate,
                "error_rate_ci95": [lo, hi],
                "threshold": self.config.tau2,
                "four_outcome_iq": self.four_outcome_iq,
            }
        cfg = asdict(self.config)
        cfg["rng"] = {"seed": self.config.rng.seed, "stream_id": self.config.rng.stream_id}
        return {
            "verdict": self.verdict,
            "config": cfg,
            "eve": asdict(self.eve),
            "bucket_counts": self.bucket_counts,
            "step1": {**self.step1_IQ.to_dict(), "threshold": self.step1_threshold},
            "step2": step2,
            "key": {
                "length": int(len(self.key_bits_alice)),
                "alice_hex": self.key_hex("alice"),
                "bob_hex": self.key_hex("bob"),
                "mismatches": int(np.count_nonzero(self.key_bits_alice != self.key_bits_bob)),
                "ones_fraction": float(self.key_bits_alice.mean()) if len(self.key_bits_alice) else None,
            },
            "fractions": self.fractions,
            "accounting": self.accounting,
            "caveats": [
                "Step I alone cannot exclude a separable state whose wrong-context value happens to be near 0; "
                "Step II covers that case.",
            ],
        }


def run_protocol(cfg: QkdConfig, eve: EveModel = EveModel(), *, workers: int = 1, backend: Optional[str] = None) -> QkdReport:
    rounds = engine.simulate(
        cfg.n_rounds, cfg.rng, engine.SPACETIME, ChannelSource(eve, cfg.noise_p), workers=workers, backend=backend
    )
    channel = ClassicalChannel()
    alice, bob = Alice(rounds, channel), Bob(rounds, channel)

    alice.announce()
    bob.announce()
    labels = alice.sift()
    if not np.array_equal(labels, bob.sift()):
        raise ProtocolError("parties disagree on the subensemble partition")
    counts = np.bincount(labels, minlength=8)
    bucket_counts = {label.name: int(c) for label, c in zip(engine.LABELS, counts)}
    missing = [label.name for label, c in zip(engine.LABELS, counts) if c == 0]
    if missing:
        raise InsufficientDataError(
            f"{cfg.n_rounds} rounds left {', '.join(missing)} empty; the protocol needs every subensemble", missing
        )

    correct = np.isin(labels, _CORRECT_CODES)
    sift_u = rng_mod.round_uniforms(cfg.rng, 0, cfg.n_rounds)[:, rng_mod.SIFT]
    # each correct-context round is sacrificed with prob 2*epsilon, i.e. epsilon of all rounds
    step2_mask = correct & (sift_u < 2 * cfg.epsilon)
    key_mask = correct & ~step2_mask
    wrong_pos = np.flatnonzero(~correct)
    step2_pos = np.flatnonzero(step2_mask)
    purposes = {"key": int(key_mask.sum()), "test": int((~key_mask).sum()), "discard": 0}
    accounting = resource_accounting(purposes, cfg.n_rounds, cfg.epsilon, cfg.bb84_x)

    # Step I: wrong-context CHSH value must be compatible with 0
    a1, b1 = _revealed_pairs(alice.reveal(wrong_pos, 1), bob.reveal(wrong_pos, 1))
    alice._advance("tested")
    bob._advance("tested")
    step1_log = rounds.subset(wrong_pos)
    step1_log = RoundLog(step1_log.index, step1_log.alice_obs, step1_log.bob_unitary, step1_log.bob_obs, a1, b1)
    iq = engine.chsh_statistic(step1_log, "spacetime-wrong")
    tau1 = cfg.tau1 if cfg.tau1 is not None else max(TAU1_FLOOR, TAU1_SIGMAS * iq.std_error)

    verdict = "accept"
    n_revealed = errors = four = None
    if abs(iq.value) > tau1:
        verdict = "abort-step1"
    else:
        # Step II: spot-check perfect (anti)correlations on a random slice of E1..E4
        if len(step2_pos) == 0:
            raise InsufficientDataError("no correct-context rounds were selected for the Step II check", ["step2"])
        a2, b2 = _revealed_pairs(alice.reveal(step2_pos, 2), bob.reveal(step2_pos, 2))
        signs = _PERFECT_SIGN[labels[step2_pos]]
        n_revealed = len(step2_pos)
        errors = int(np.count_nonzero(a2.astype(np.int64) * b2 != signs))
        four = _first_four(labels[step2_pos], a2, b2)
        if errors / n_revealed > cfg.tau2:
            verdict = "abort-step2"

    alice._advance("done")
    bob._advance("done")
    if verdict == "accept":
        key_pos = np.flatnonzero(key_mask)
        key_a, key_b = alice.key_bits(key_pos), bob.key_bits(key_pos)
    else:
        key_a = key_b = np.zeros(0, dtype=np.uint8)
    channel.send("verdict", "alice", {"verdict": verdict})

    return QkdReport(
        verdict=verdict,
        key_bits_alice=key_a,
        key_bits_bob=key_b,
        step1_IQ=iq,
        step1_threshold=tau1,
        step2_revealed=n_revealed,
        step2_error_count=errors,
        four_outcome_iq=four,
        fractions=accounting["empirical"],
        bucket_counts=bucket_counts,
        accounting=accounting,
        config=cfg,
        eve=eve,
        transcript=list(channel.log),
    )


def _first_four(codes: np.ndarray, a: np.ndarray, b: np.ndarray) -> Optional[int]:
    picked = []
    for label in CORRECT_LABELS:
        hits = np.flatnonzero(codes == _LABEL_INDEX[label])
        if len(hits) == 0:
            return None
        i = hits[0]
        picked.append((label, int(a[i]), int(b[i])))
    return four_outcome_iq_check(picked)
