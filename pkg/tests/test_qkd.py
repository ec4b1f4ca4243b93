import itertools
import json

import numpy as np
import pytest
from scipy import stats

from stbell import engine, qkd
from stbell import observables as obs
from stbell import quantum as q
from stbell.errors import ConfigError, InsufficientDataError, ProtocolError
from stbell.observables import SubensembleLabel
from stbell.qkd import EveModel, QkdConfig
from stbell.rng import RngSpec

import oracles

E1, E2, E3, E4, E5, E6, E7, E8 = SubensembleLabel


@pytest.fixture(scope="module")
def clean_run():
    return qkd.run_protocol(QkdConfig(10_000, RngSpec(2024)))


@pytest.fixture(scope="module")
def broken_run():
    return qkd.run_protocol(QkdConfig(10_000, RngSpec(2024)), EveModel("break-entanglement"))


class TestChannel:
    def test_identity(self):
        rho = obs.singlet_density()
        assert q.DensityOp is type(qkd.quantum_channel(rho, EveModel()))
        np.testing.assert_array_equal(qkd.quantum_channel(rho, EveModel(), 0.0).matrix, rho.matrix)

    def test_intercept_z(self):
        z = [oracles.eig_projector(np.kron(oracles.I2, oracles.SZ), s) for s in (1, -1)]
        expected = sum(p @ oracles.RHO0 @ p for p in z)
        np.testing.assert_allclose(expected, np.diag([0, 0.5, 0.5, 0]), atol=1e-12)
        out = qkd.quantum_channel(obs.singlet_density(), EveModel("intercept-resend-z"))
        np.testing.assert_allclose(out.matrix, expected, atol=1e-12)

    def test_intercept_z_output_is_separable(self):
        out = qkd.quantum_channel(obs.singlet_density(), EveModel("intercept-resend-z")).matrix
        # PPT criterion (exact for two qubits)
        pt = out.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)
        assert np.linalg.eigvalsh(pt).min() >= -1e-12

    def test_break_entanglement(self):
        out = qkd.quantum_channel(obs.singlet_density(), EveModel("break-entanglement"))
        expected = np.kron(oracles.reduced(oracles.RHO0, 1), oracles.reduced(oracles.RHO0, 2))
        np.testing.assert_allclose(expected, np.eye(4) / 4, atol=1e-12)
        np.testing.assert_allclose(out.matrix, expected, atol=1e-12)

    def test_random_basis_needs_rng(self):
        with pytest.raises(ConfigError):
            qkd.quantum_channel(obs.singlet_density(), EveModel("intercept-resend-random"))
        out = qkd.quantum_channel(obs.singlet_density(), EveModel("intercept-resend-random"), rng=np.random.default_rng(0))
        assert np.trace(out.matrix).real == pytest.approx(1)

    def test_noise_applied_after_attack(self):
        out = qkd.quantum_channel(obs.singlet_density(), EveModel("intercept-resend-z"), 0.2)
        np.testing.assert_allclose(out.matrix, 0.8 * np.diag([0, 0.5, 0.5, 0]) + 0.2 * np.eye(4) / 4, atol=1e-12)

    def test_aliases_and_validation(self):
        assert EveModel("break").kind == "break-entanglement"
        with pytest.raises(ConfigError):
            EveModel("photon-splitting")
        with pytest.raises(ConfigError):
            EveModel("break", 1.5)

    def test_source_attack_fraction(self):
        source = qkd.ChannelSource(EveModel("break", 0.3))
        u = np.random.default_rng(0).random((100_000, 8))
        hit = np.count_nonzero(source.select(u))
        assert abs(hit - 30_000) <= 5 * oracles.binomial_sigma(100_000, 0.3)


class TestChecks:
    def test_noiseless_no_errors(self):
        revealed = [(r, r.alice_outcome, r.bob_outcome) for r in
                    (engine.simulate_round(j, RngSpec(1), forced=l.ctx) for j in range(50) for l in (E1, E2, E3, E4))]
        assert qkd.perfect_correlation_check(revealed) == 0

    def test_single_error(self):
        assert qkd.perfect_correlation_check([(E1, 1, -1)]) == 1
        assert qkd.perfect_correlation_check([(E2, 1, 1)]) == 1
        assert qkd.perfect_correlation_check([(E2, 1, -1)]) == 0

    def test_wrong_context_rejected(self):
        with pytest.raises(ProtocolError):
            qkd.perfect_correlation_check([(E6, 1, 1)])

    @pytest.mark.parametrize("p", [0.1, 0.3])
    def test_noise_error_probability_half_p(self, p):
        rho = (1 - p) * oracles.RHO0 + p * np.eye(4) / 4
        for label in (E1, E2, E3, E4):
            c = label.ctx
            sign = label.perfect_sign
            mismatch = sum(
                oracles.joint_probability(rho, c.alice_obs, c.bob_unitary, c.bob_obs, a, b)
                for a in (1, -1) for b in (1, -1) if a * b != sign
            )
            assert mismatch == pytest.approx(p / 2, abs=1e-12)
        log = engine.simulate(100_000, RngSpec(77), engine.SPACETIME, qkd.ChannelSource(EveModel(), p))
        parts = engine.partition(log)
        for label in (E1, E2, E3, E4):
            part = parts[label]
            errors = qkd.perfect_correlation_check([(label, a, b) for a, b in zip(part.alice_outcome, part.bob_outcome)])
            assert abs(errors - len(part) * p / 2) <= 5 * oracles.binomial_sigma(len(part), p / 2)

    def test_four_outcome_noiseless(self):
        picked = [(l, 1, l.perfect_sign) for l in (E1, E2, E3, E4)]
        assert qkd.four_outcome_iq_check(picked) == 4

    def test_four_outcome_missing_label(self):
        with pytest.raises(ProtocolError, match="E4"):
            qkd.four_outcome_iq_check([(E1, 1, 1), (E2, 1, -1), (E3, 1, 1)])

    def test_four_outcome_spectrum(self):
        values = {
            qkd.four_outcome_iq_check(list(zip((E1, E2, E3, E4), a, b)))
            for a in itertools.product((1, -1), repeat=4)
            for b in itertools.product((1, -1), repeat=4)
        }
        assert values == {-4, -2, 0, 2, 4}

    def test_four_outcome_under_break_entanglement(self):
        # every product is an unbiased +-1 on (1/2)(x)(1/2): value = sum of four independent signs
        dist = {}
        for signs in itertools.product((1, -1), repeat=4):
            v = signs[0] + signs[1] + signs[2] - signs[3]
            dist[v] = dist.get(v, 0) + 1 / 16
        assert sum(v * p for v, p in dist.items()) == 0
        log = engine.simulate(40_000, RngSpec(5), engine.SPACETIME, qkd.ChannelSource(EveModel("break")))
        parts = engine.partition(log)
        n = min(len(parts[l]) for l in (E1, E2, E3, E4))
        values = np.array([
            qkd.four_outcome_iq_check([(l, int(parts[l].alice_outcome[i]), int(parts[l].bob_outcome[i])) for l in (E1, E2, E3, E4)])
            for i in range(n)
        ])
        assert set(values.tolist()) <= set(dist)
        var = sum(v * v * p for v, p in dist.items())
        assert abs(values.mean()) <= 5 * np.sqrt(var / n)


class TestRunProtocol:
    def test_clean_accept(self, clean_run):
        r = clean_run
        assert r.verdict == "accept"
        assert abs(r.step1_IQ.value) <= 5 * r.step1_IQ.std_error
        assert r.step2_error_count == 0
        assert r.four_outcome_iq == 4
        np.testing.assert_array_equal(r.key_bits_alice, r.key_bits_bob)

    def test_key_length(self, clean_run):
        r = clean_run
        correct = sum(r.bucket_counts[l.name] for l in (E1, E2, E3, E4))
        assert len(r.key_bits_alice) == correct - r.step2_revealed

    def test_fractions(self, clean_run):
        f = clean_run.fractions
        assert f["key"] + f["test"] + f["discard"] == pytest.approx(1)
        assert f["discard"] == 0
        p = 0.5 - 0.05
        assert abs(f["key"] - p) <= 5 * np.sqrt(p * (1 - p) / 10_000)

    def test_key_bits_unbiased(self, clean_run):
        k = clean_run.key_bits_alice
        assert abs(k.sum() - len(k) / 2) <= 5 * oracles.binomial_sigma(len(k), 0.5)

    def test_bob_inverts_e2(self):
        cfg = QkdConfig(2000, RngSpec(8))
        r = qkd.run_protocol(cfg)
        log = engine.simulate(2000, cfg.rng)
        e2 = log.subset(log.label == 1)
        # raw E2 outcomes disagree, so only inversion makes the keys equal
        assert np.all(e2.alice_outcome != e2.bob_outcome)
        np.testing.assert_array_equal(r.key_bits_alice, r.key_bits_bob)

    def test_privacy_of_announcements(self, clean_run):
        r = clean_run
        log = engine.simulate(10_000, RngSpec(2024))
        test_rounds = set()
        for msg in r.transcript:
            if msg.kind in ("obs-announcement", "unitary-announcement"):
                assert set(msg.payload) <= {"observables", "unitaries"}
                for v in msg.payload.values():
                    assert isinstance(v, str) and set(v) <= set("ACBD+-")
            elif msg.kind == "test-reveal":
                test_rounds |= {j for j, _ in msg.payload["outcomes"]}
        key_rounds = set(log.index[np.isin(log.label, [0, 1, 2, 3])]) - test_rounds
        assert len(key_rounds) == len(r.key_bits_alice)
        assert test_rounds.isdisjoint(key_rounds)

    def test_transcript_jsonl(self, clean_run):
        lines = clean_run.transcript_jsonl().splitlines()
        kinds = [json.loads(line)["kind"] for line in lines]
        assert kinds[0] == "obs-announcement" and kinds[-1] == "verdict"
        assert kinds.count("test-reveal") == 4

    def test_break_entanglement_aborts_step2(self, broken_run):
        r = broken_run
        assert r.verdict == "abort-step2"
        assert -2 <= r.step1_IQ.value <= 2
        assert abs(r.step2_error_rate - 0.5) <= 5 * np.sqrt(0.25 / r.step2_revealed)
        assert len(r.key_bits_alice) == 0

    def test_detection_at_hundred_pairs(self):
        # at >= 100 revealed pairs with error prob 1/2, passing tau2 = 0.1 needs <= 10 errors
        assert stats.binom.cdf(10, 100, 0.5) < 1e-3
        cfg = QkdConfig(1000, RngSpec(9), epsilon=0.1, tau2=0.1)
        r = qkd.run_protocol(cfg, EveModel("break"))
        assert r.step2_revealed >= 100
        assert r.verdict == "abort-step2"

    def test_step1_abort_on_tampered_wrong_context(self):
        # a tight explicit threshold turns ordinary fluctuations into a Step I abort
        r = qkd.run_protocol(QkdConfig(2000, RngSpec(3), tau1=1e-6))
        assert r.verdict == "abort-step1"
        assert r.step2_revealed is None
        assert len(r.key_bits_alice) == 0

    def test_default_tau1(self, clean_run):
        assert clean_run.step1_threshold == max(0.2, 5 * clean_run.step1_IQ.std_error)

    def test_noise_accepted_below_tau2(self):
        r = qkd.run_protocol(QkdConfig(20_000, RngSpec(4), noise_p=0.02, tau2=0.05))
        assert r.verdict == "accept"
        assert r.step2_error_count > 0
        assert np.count_nonzero(r.key_bits_alice != r.key_bits_bob) > 0

    def test_insufficient_rounds(self):
        with pytest.raises(InsufficientDataError):
            qkd.run_protocol(QkdConfig(8, RngSpec(3)))

    @pytest.mark.parametrize("kwargs", [{"n_rounds": 7}, {"epsilon": 0.0}, {"epsilon": 0.6}, {"tau2": 1.0},
                                        {"tau1": -1.0}, {"noise_p": 2.0}])
    def test_config_validation(self, kwargs):
        base = {"n_rounds": 100, "rng": RngSpec(1)}
        with pytest.raises(ConfigError):
            QkdConfig(**{**base, **kwargs})

    def test_report_dict_is_json(self, clean_run):
        d = clean_run.to_dict()
        json.dumps(d)
        assert d["key"]["alice_hex"] == d["key"]["bob_hex"]
        assert d["key"]["mismatches"] == 0

    def test_deterministic(self):
        cfg = QkdConfig(5000, RngSpec(6))
        a = qkd.run_protocol(cfg, workers=1).to_dict()
        b = qkd.run_protocol(cfg, workers=3).to_dict()
        assert json.dumps(a) == json.dumps(b)


class TestAccounting:
    def test_published_rows(self):
        t = qkd.accounting_table(0.02)
        assert {k: v["exact"] for k, v in t["Ekert"].items()} == {"key": "2/9", "test": "4/9", "discard": "3/9", "waste": "7/9"}
        assert t["Ekert"]["discard"]["value"] == pytest.approx(3 / 9)
        assert {k: v["value"] for k, v in t["Wigner"].items()} == {"key": 0.25, "test": 0.75, "discard": 0.0, "waste": 0.75}

    def test_st_row_limit(self):
        t = qkd.accounting_table(1e-12)
        assert t["ST"]["waste"]["value"] == pytest.approx(0.5)
        assert t["ST"]["discard"]["value"] == 0

    def test_bb84_row(self):
        t = qkd.accounting_table(0.05, x=0.9)
        assert t["BB84'"]["key"]["value"] == pytest.approx(0.45)
        assert t["BB84'"]["waste"]["value"] == pytest.approx(0.55)

    def test_quantum_memory_row_has_no_discard(self):
        assert qkd.accounting_table(0.05)["ST (quantum memory)"]["discard"]["value"] == 0

    def test_empirical_key_fraction(self):
        r = qkd.run_protocol(QkdConfig(100_000, RngSpec(12), epsilon=0.02))
        acc = r.accounting
        assert abs(acc["empirical"]["key"] - 0.48) <= 5 * acc["key_fraction_std_error"]
        assert sum(acc["counts"].values()) == 100_000

    def test_purposes_must_cover_all_rounds(self):
        with pytest.raises(ProtocolError):
            qkd.resource_accounting({"key": 1, "test": 1, "discard": 0}, 3, 0.05)
