"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 5] [--inner 2000]

Times one household's power allocation and one actor forward pass (the
per-slot hot path of a rollout), then a full 48-slot evaluation rollout
with each backend.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dpcs import _kernels_py, kernels
from dpcs.agents import AgentSet
from dpcs.data import synth_scenario
from dpcs.nn import Mlp


def best_time(fn, repeats: int, inner: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def allocate_case(impl):
    category = np.array([1, 1, 2, 2, 2], dtype=np.int8)
    rate = np.array([1.2, 0.6, 6.6, 3.0, 2.0])
    start = np.array([1.0, 0.5, 12.0, 4.0, 2.0])
    started = np.zeros(5, dtype=np.uint8)
    out = np.zeros(5)

    def run():
        rem = start.copy()
        st = started.copy()
        impl.allocate(category, rate, rem, st, 5.0, 0.75, out)
    return run


def forward_case(impl, dims):
    rng = np.random.default_rng(0)
    net = Mlp(dims, "nonnegative", rng=rng)
    x = rng.standard_normal(dims[0])
    args = (x, net.normalizer.mean, net.normalizer.inv_std, net.weights, net.biases, True)
    return lambda: impl.mlp_forward_vec(*args)


def rollout_time(impl, repeats: int) -> float:
    from dpcs import trainer
    saved = (kernels.allocate, kernels.mlp_forward_vec)
    kernels.allocate, kernels.mlp_forward_vec = impl.allocate, impl.mlp_forward_vec
    try:
        sc = synth_scenario(0, 4, 48)
        agents = AgentSet("dpcs", sc.obs_dims(), sc.p_max(), seed=0)
        return best_time(lambda: trainer.rollout(sc, agents.act), repeats, 5)
    finally:
        kernels.allocate, kernels.mlp_forward_vec = saved


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--inner", type=int, default=2000)
    args = ap.parse_args(argv)

    if kernels.BACKEND != "cython":
        print("compiled extension not available; only the numpy fallback can be timed")
    backends = {"numpy": _kernels_py}
    if kernels.BACKEND == "cython":
        from dpcs import _kernels
        backends["cython"] = _kernels

    cases = {
        "allocate (5 appliances)": allocate_case,
        "actor forward 11-64-64-1": lambda m: forward_case(m, [11, 64, 64, 1]),
        "actor forward 44-64-64-4": lambda m: forward_case(m, [44, 64, 64, 4]),
    }
    print(f"{'kernel':<28}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for label, make in cases.items():
        times = {name: best_time(make(mod), args.repeats, args.inner) for name, mod in backends.items()}
        speed = times["numpy"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<28}" + "".join(f"{t * 1e6:11.2f} us" for t in times.values()) + f"{speed:9.2f}x")
    times = {name: rollout_time(mod, args.repeats) for name, mod in backends.items()}
    speed = times["numpy"] / times["cython"] if "cython" in times else float("nan")
    print(f"{'rollout, 4 households x 48':<28}" + "".join(f"{t * 1e3:11.2f} ms" for t in times.values())
          + f"{speed:9.2f}x")


if __name__ == "__main__":
    main()
