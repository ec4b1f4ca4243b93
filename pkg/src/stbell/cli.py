"""Command-line front end.

    stbell spatial   --rounds 100000 --seed 7
    stbell spacetime --rounds 100000 --seed 7 --out report.json
    stbell spacetime --rounds 1000 --seed 7 --format csv --out rounds.csv
    stbell lhv
    stbell qkd --rounds 10000 --seed 1 --eve break --transcript log.jsonl

Options may also come from a JSON file (``--config``) using the same names
with underscores (``eve_fraction``); flags win over the file.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

from . import engine, lhv, observables as obs, qkd, quantum
from .errors import ConfigError, InsufficientDataError, StBellError
from .rng import RngSpec

COMMANDS = ("spatial", "spacetime", "lhv", "qkd")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INSUFFICIENT = 4
EXIT_OUTPUT = 5

DEFAULTS = {
    "rounds": 100_000,
    "seed": None,
    "eve": "none",
    "eve_fraction": 1.0,
    "noise": 0.0,
    "epsilon": qkd.DEFAULT_EPSILON,
    "tau1": None,
    "tau2": qkd.DEFAULT_TAU2,
    "bb84_x": qkd.DEFAULT_BB84_X,
    "out": None,
    "format": "json",
    "transcript": None,
    "workers": 1,
}
# execution details that cannot change a report
_NOT_ECHOED = ("workers",)

SIGMA_GATE = 5.0


class OutputError(StBellError):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--rounds", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--eve", choices=sorted(qkd.EVE_ALIASES))
    common.add_argument("--eve-fraction", dest="eve_fraction", type=float)
    common.add_argument("--noise", type=float)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--tau1", type=float)
    common.add_argument("--tau2", type=float)
    common.add_argument("--bb84-x", dest="bb84_x", type=float)
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--transcript", help="qkd: write the classical-channel transcript as JSON lines")
    common.add_argument("--workers", type=int)

    parser = argparse.ArgumentParser(prog="stbell", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.add_parser("spatial", parents=[common], help="ordinary CHSH test on singlets")
    sub.add_parser("spacetime", parents=[common], help="CHSH test with Bob's rotations and post-selection")
    sub.add_parser("lhv", parents=[common], help="exhaustive local hidden-variable bounds")
    sub.add_parser("qkd", parents=[common], help="run the ST key distribution protocol")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg["seed_generated"] = cfg["seed"] is None
    if cfg["seed"] is None:
        cfg["seed"] = RngSpec.fresh().seed
    _validate(cfg)
    cfg["eve"] = qkd.EVE_ALIASES.get(cfg["eve"], cfg["eve"])
    return cfg


def _validate(cfg: dict) -> None:
    if not isinstance(cfg["rounds"], int) or cfg["rounds"] < 1:
        raise ConfigError(f"--rounds must be a positive integer, got {cfg['rounds']!r}")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise ConfigError(f"--workers must be a positive integer, got {cfg['workers']!r}")
    if cfg["format"] not in ("json", "csv"):
        raise ConfigError(f"--format must be json or csv, got {cfg['format']!r}")
    if not 0 <= cfg["noise"] <= 1:
        raise ConfigError(f"--noise must be in [0, 1], got {cfg['noise']!r}")
    RngSpec(cfg["seed"])
    qkd.EveModel(cfg["eve"], cfg["eve_fraction"])


def _config_echo(command: str, cfg: dict) -> dict:
    return {"command": command, **{k: v for k, v in cfg.items() if k not in _NOT_ECHOED}}


def _source(cfg):
    return qkd.ChannelSource(qkd.EveModel(cfg["eve"], cfg["eve_fraction"]), cfg["noise"])


def _analytic_rho(cfg):
    """Round-averaged source state, for analytic values under Eve/noise."""
    eve = qkd.EveModel(cfg["eve"], cfg["eve_fraction"])
    src = qkd.ChannelSource(eve, cfg["noise"])
    states = src.states()
    if eve.kind == "none":
        return states[0]
    f = eve.attack_fraction
    attacked = states[1].matrix if eve.kind != "intercept-resend-random" else (states[1].matrix + states[2].matrix) / 2
    return quantum.DensityOp((1 - f) * states[0].matrix + f * attacked)


def _tables(contexts, rho):
    return {
        name: {f"{a:+d},{b:+d}": obs.born_joint_probability(ctx, a, b, rho) for a in (1, -1) for b in (1, -1)}
        for name, ctx in contexts
    }


def _estimate_entry(log, mode, analytic):
    est = engine.chsh_statistic(log, mode)
    d = est.to_dict()
    d["analytic"] = analytic
    d["within_5_std_error"] = abs(est.value - analytic) <= SIGMA_GATE * est.std_error + quantum.CHAIN_ATOL
    return d


def run_experiment(command: str, cfg: dict):
    """Return ``(report_dict, round_log_or_None, transcript_or_None)``."""
    rng = RngSpec(cfg["seed"])
    if command == "lhv":
        return {"config": _config_echo(command, cfg), "lhv": lhv.lhv_exhaustive_report()}, None, None

    if command == "qkd":
        qcfg = qkd.QkdConfig(
            n_rounds=cfg["rounds"], rng=rng, epsilon=cfg["epsilon"], tau1=cfg["tau1"], tau2=cfg["tau2"],
            noise_p=cfg["noise"], bb84_x=cfg["bb84_x"],
        )
        report = qkd.run_protocol(qcfg, qkd.EveModel(cfg["eve"], cfg["eve_fraction"]), workers=cfg["workers"])
        body = report.to_dict()
        body.pop("config")
        return {"config": _config_echo(command, cfg), "qkd": body}, None, report.transcript_jsonl()

    mode = engine.SPATIAL if command == "spatial" else engine.SPACETIME
    log = engine.simulate(cfg["rounds"], rng, mode, _source(cfg), workers=cfg["workers"])
    rho = _analytic_rho(cfg)
    report = {"config": _config_echo(command, cfg)}
    if mode == engine.SPATIAL:
        contexts = [(ctx.alice_obs + ctx.bob_obs, ctx) for ctx, _ in obs.SPATIAL_TERMS]
        report["analytic"] = {
            "joint_probabilities": _tables(contexts, rho),
            "chsh": obs.analytic_chsh("spatial", rho),
            "tsirelson_bound": 2 * math.sqrt(2),
        }
        report["empirical"] = {"spatial": _estimate_entry(log, "spatial", report["analytic"]["chsh"])}
    else:
        contexts = [(label.name, label.ctx) for label in obs.SubensembleLabel]
        correct = obs.analytic_chsh("spacetime-correct", rho)
        wrong = obs.analytic_chsh("spacetime-wrong", rho)
        report["analytic"] = {
            "joint_probabilities": _tables(contexts, rho),
            "chsh_correct_context": correct,
            "chsh_wrong_context": wrong,
        }
        report["bucket_counts"] = engine.bucket_counts(log)
        report["empirical"] = {
            "correct_context": _estimate_entry(log, "spacetime-correct", correct),
            "wrong_context": _estimate_entry(log, "spacetime-wrong", wrong),
        }
    return report, log, None


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write output file {path}: {exc.strerror or exc}") from exc


def render(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def run(command: str, cfg: dict) -> int:
    if cfg["format"] == "csv" and command not in ("spatial", "spacetime"):
        raise ConfigError(f"--format csv writes round logs and is only available for spatial and spacetime, not {command}")
    report, log, transcript = run_experiment(command, cfg)
    if cfg["format"] == "csv":
        _write(cfg["out"], engine.to_csv_string(log))
    else:
        _write(cfg["out"], render(report))
    if transcript is not None and cfg["transcript"]:
        _write(cfg["transcript"], transcript)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        print(f"stbell: unknown command {argv[0]!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("stbell: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(args.command, resolve_config(args))
    except InsufficientDataError as exc:
        print(f"stbell: insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except ConfigError as exc:
        print(f"stbell: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"stbell: output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT


if __name__ == "__main__":
    sys.exit(main())
