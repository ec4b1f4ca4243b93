import json
import math

import pytest

from stbell import cli, engine


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def spacetime_report(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "st.json"
    assert cli.main(["spacetime", "--rounds", "100000", "--seed", "7", "--out", str(path)]) == 0
    return json.loads(path.read_text())


class TestSpacetime:
    def test_correct_context_is_four(self, spacetime_report):
        est = spacetime_report["empirical"]["correct_context"]
        assert est["value"] == 4.0
        assert est["within_5_std_error"]

    def test_wrong_context_near_zero(self, spacetime_report):
        est = spacetime_report["empirical"]["wrong_context"]
        assert abs(est["value"]) <= 5 * est["std_error"]
        assert est["within_5_std_error"]

    def test_config_echo(self, spacetime_report):
        cfg = spacetime_report["config"]
        assert cfg["command"] == "spacetime"
        assert cfg["seed"] == 7 and cfg["seed_generated"] is False
        assert cfg["rounds"] == 100_000
        assert set(cli.DEFAULTS) - set(cli._NOT_ECHOED) <= set(cfg)

    def test_analytic_tables(self, spacetime_report):
        tables = spacetime_report["analytic"]["joint_probabilities"]
        assert tables["E1"]["+1,+1"] == pytest.approx(0.5, abs=1e-12)
        assert tables["E2"]["+1,+1"] == pytest.approx(0.0, abs=1e-12)
        assert tables["E7"]["-1,+1"] == pytest.approx(0.25, abs=1e-12)
        assert sum(spacetime_report["bucket_counts"].values()) == 100_000


def test_spatial(capsys):
    code, out, _ = run_cli(capsys, "spatial", "--rounds", "20000", "--seed", "3")
    assert code == 0
    rep = json.loads(out)
    assert rep["analytic"]["chsh"] == pytest.approx(2 * math.sqrt(2), abs=1e-9)
    assert rep["empirical"]["spatial"]["within_5_std_error"]


def test_lhv(capsys):
    code, out, _ = run_cli(capsys, "lhv")
    assert code == 0
    rep = json.loads(out)["lhv"]
    assert rep["no_postselection"]["max_abs"] == 2
    assert rep["postselected"]["spectrum"] == [-4, -2, 0, 2, 4]


def test_qkd_accepts(capsys, tmp_path):
    transcript = tmp_path / "t.jsonl"
    code, out, _ = run_cli(capsys, "qkd", "--rounds", "4000", "--seed", "1", "--transcript", str(transcript))
    assert code == 0
    rep = json.loads(out)["qkd"]
    assert rep["verdict"] == "accept"
    lines = transcript.read_text().splitlines()
    kinds = [json.loads(line)["kind"] for line in lines]
    assert kinds[0] == "obs-announcement" and kinds[-1] == "verdict"


def test_qkd_break_aborts(capsys):
    code, out, _ = run_cli(capsys, "qkd", "--rounds", "4000", "--seed", "1", "--eve", "break")
    assert code == 0
    assert json.loads(out)["qkd"]["verdict"].startswith("abort")


class TestErrors:
    def test_too_few_rounds(self, capsys):
        code, _, err = run_cli(capsys, "qkd", "--rounds", "8", "--seed", "1")
        assert code == cli.EXIT_INSUFFICIENT
        assert "insufficient data" in err

    def test_unknown_command(self, capsys):
        code, _, err = run_cli(capsys, "teleport")
        assert code == cli.EXIT_USAGE
        assert "unknown command" in err

    def test_missing_command(self, capsys):
        assert run_cli(capsys)[0] == cli.EXIT_USAGE

    @pytest.mark.parametrize(
        "argv",
        [
            ["spacetime", "--noise", "2"],
            ["spacetime", "--rounds", "0"],
            ["qkd", "--epsilon", "0.7"],
            ["qkd", "--eve", "break", "--eve-fraction", "1.5"],
            ["lhv", "--format", "csv"],
        ],
    )
    def test_out_of_range(self, capsys, argv):
        code, _, err = run_cli(capsys, *argv, "--seed", "1")
        assert code == cli.EXIT_CONFIG
        assert "configuration error" in err

    def test_unwritable_output(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "lhv", "--out", str(tmp_path / "missing" / "r.json"))
        assert code == cli.EXIT_OUTPUT
        assert "output error" in err

    def test_distinct_messages(self, capsys, tmp_path):
        errs = {
            run_cli(capsys, "teleport")[2],
            run_cli(capsys, "spacetime", "--noise", "2")[2],
            run_cli(capsys, "qkd", "--rounds", "8", "--seed", "1")[2],
            run_cli(capsys, "lhv", "--out", str(tmp_path / "missing" / "r.json"))[2],
        }
        assert len(errs) == 4


class TestConfigFile:
    def test_flags_override_file(self, capsys, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"rounds": 500, "seed": 11, "noise": 0.1}))
        code, out, _ = run_cli(capsys, "spacetime", "--config", str(path), "--rounds", "800")
        assert code == 0
        cfg = json.loads(out)["config"]
        assert (cfg["rounds"], cfg["seed"], cfg["noise"]) == (800, 11, 0.1)

    def test_unknown_field(self, capsys, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"rounds": 500, "colour": "blue"}))
        code, _, err = run_cli(capsys, "spacetime", "--config", str(path))
        assert code == cli.EXIT_CONFIG and "colour" in err

    def test_bad_json(self, capsys, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{rounds: 5")
        assert run_cli(capsys, "spacetime", "--config", str(path))[0] == cli.EXIT_CONFIG


class TestDeterminism:
    @pytest.mark.parametrize("command", ["spatial", "spacetime", "qkd"])
    def test_byte_identical_across_workers(self, capsys, command):
        outs = [run_cli(capsys, command, "--rounds", "70000", "--seed", "5", "--workers", w)[1] for w in ("1", "4")]
        assert outs[0] == outs[1]

    def test_generated_seed_recorded_and_replayable(self, capsys):
        first = json.loads(run_cli(capsys, "spacetime", "--rounds", "2000")[1])
        assert first["config"]["seed_generated"] is True
        seed = str(first["config"]["seed"])
        again = json.loads(run_cli(capsys, "spacetime", "--rounds", "2000", "--seed", seed)[1])
        assert again["empirical"] == first["empirical"]


def test_csv_round_log(capsys, tmp_path):
    path = tmp_path / "rounds.csv"
    assert cli.main(["spacetime", "--rounds", "300", "--seed", "2", "--format", "csv", "--out", str(path)]) == 0
    with open(path) as fh:
        log = engine.read_csv(fh)
    assert len(log) == 300
    assert path.read_text().splitlines()[0] == ",".join(engine.CSV_COLUMNS)
