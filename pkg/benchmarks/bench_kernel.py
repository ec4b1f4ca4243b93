"""Compare the compiled and numpy round kernels on the same workload.

    python3 benchmarks/bench_kernel.py --rounds 1000000 --repeat 5

Two timings per backend: the bare kernel call on pre-drawn inputs, and a
full ``engine.simulate`` (random draws, choices, round log).  Both backends
consume the same uniforms, so their outcome columns are also checked for
equality.
"""
import argparse
import json
import statistics
import sys
import time

import numpy as np

from stbell import engine, kernel, qkd
from stbell import rng as rng_mod
from stbell.rng import RngSpec


def _timed(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, times


def kernel_inputs(rounds, mode, source):
    source = engine._coerce_source(source)
    u = rng_mod.round_uniforms(RngSpec(1), 0, rounds)
    alice, unitary, bob = engine._choices(u, mode, None)
    states = np.ascontiguousarray(np.stack([s.matrix for s in source.states()]), dtype=complex)
    return (
        states, np.ascontiguousarray(source.select(u), dtype=np.intc), alice, unitary, bob,
        np.ascontiguousarray(u[:, rng_mod.ALICE_OUTCOME]), np.ascontiguousarray(u[:, rng_mod.BOB_OUTCOME]),
        engine.ALICE_PROJ, engine.BOB_PROJ, engine.BOB_UNITARIES,
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--rounds", type=int, default=1_000_000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--json", action="store_true", help="print results as JSON")
    args = parser.parse_args(argv)

    if "cython" not in kernel.BACKENDS:
        print("compiled kernel not built; only the numpy backend is available", file=sys.stderr)

    workloads = {
        "spacetime/singlet": (engine.SPACETIME, None),
        "spatial/singlet": (engine.SPATIAL, None),
        "spacetime/intercept-random+noise": (engine.SPACETIME, qkd.ChannelSource(qkd.EveModel("intercept-random", 0.5), 0.05)),
    }
    results = []
    for name, (mode, source) in workloads.items():
        logs = {}
        inputs = kernel_inputs(args.rounds, mode, source)
        for backend in sorted(kernel.BACKENDS):
            fn = kernel.get_backend(backend)
            _, k_times = _timed(lambda: fn(*inputs), args.repeat)
            log, times = _timed(
                lambda: engine.simulate(args.rounds, RngSpec(1), mode, source, workers=args.workers, backend=backend),
                args.repeat,
            )
            logs[backend] = log
            results.append({
                "workload": name, "backend": backend, "rounds": args.rounds, "workers": args.workers,
                "kernel_best_s": min(k_times), "simulate_best_s": min(times),
                "simulate_median_s": statistics.median(times), "rounds_per_s": args.rounds / min(times),
            })
        ref = next(iter(logs.values()))
        for log in logs.values():
            if not (np.array_equal(ref.alice_outcome, log.alice_outcome) and np.array_equal(ref.bob_outcome, log.bob_outcome)):
                raise SystemExit(f"backends disagree on {name}")

    if args.json:
        print(json.dumps(results, indent=2))
        return
    print(f"{'workload':34} {'backend':7} {'kernel [s]':>10} {'simulate [s]':>12} {'rounds/s':>10}")
    for r in results:
        print(f"{r['workload']:34} {r['backend']:7} {r['kernel_best_s']:10.3f} {r['simulate_best_s']:12.3f} {r['rounds_per_s']:10.3g}")
    if "cython" in kernel.BACKENDS:
        by = {(r["workload"], r["backend"]): r for r in results}
        for name in workloads:
            py, cy = by[(name, "python")], by[(name, "cython")]
            print(f"speedup {name}: kernel {py['kernel_best_s'] / cy['kernel_best_s']:.1f}x, "
                  f"simulate {py['simulate_best_s'] / cy['simulate_best_s']:.1f}x")


if __name__ == "__main__":
    main()
