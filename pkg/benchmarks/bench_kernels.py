"""Compare the compiled and pure-Python simulation kernels.

Usage::

    python benchmarks/bench_kernels.py [--t-final 30] [--repeat 3]

Both backends integrate the bundled example plant with a synthesized-style
random stable filter; the script reports the best wall time per backend, the
speedup, and the largest state difference between them.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fuzzy_hinf.kernels import available_backends
from fuzzy_hinf.model import FuzzyFilter, example1_model
from fuzzy_hinf.simulation import Disturbance, SimConfig, make_delay_sine, simulate_filtering


def _filter(model, seed: int) -> FuzzyFilter:
    rng = np.random.default_rng(seed)
    n, ny, nz, p = model.n, model.n_y, model.n_z, model.p
    A = [-2.0 * np.eye(n) + 0.3 * rng.standard_normal((n, n)) for _ in range(p)]
    B = [0.5 * rng.standard_normal((n, ny)) for _ in range(p)]
    C = [rng.standard_normal((nz, n)) for _ in range(p)]
    return FuzzyFilter(tuple(A), tuple(B), tuple(C))


def run(t_final: float, repeat: int) -> dict[str, tuple[float, np.ndarray]]:
    model = example1_model()
    filt = _filter(model, 0)
    cfg = SimConfig(
        t_final,
        make_delay_sine(0.5, 0.2, 0.01),
        phi=[0.5, -0.3],
        disturbance=Disturbance("seeded_noise", {"seed": 1, "bandwidth": 2.0}),
    )
    out = {}
    for name in available_backends():
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            res = simulate_filtering(model, filt, cfg, backend=name)
            best = min(best, time.perf_counter() - t0)
        out[name] = (best, res.zeta)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-final", type=float, default=30.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    res = run(args.t_final, args.repeat)
    steps = res[next(iter(res))][1].shape[0] - 1
    print(f"{steps} RK4 steps, best of {args.repeat}")
    for name, (sec, _) in sorted(res.items()):
        print(f"  {name:8s} {sec * 1e3:10.2f} ms  {sec / steps * 1e6:8.2f} us/step")
    if {"python", "cython"} <= res.keys():
        print(f"  speedup  {res['python'][0] / res['cython'][0]:10.1f}x")
        diff = np.max(np.abs(res["python"][1] - res["cython"][1]))
        print(f"  max |state difference| {diff:.3e}")


if __name__ == "__main__":
    main()
