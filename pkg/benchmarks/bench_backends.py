"""Time the JIT and pure-numpy backends on the ensemble propagation loop.

The two backends must produce bit-identical ensembles; this script checks
that on every configuration before reporting timings.

Usage:
    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --particles 20000 --steps 400 --dim 8
"""

import argparse
import time

import numpy as np

from flowfilt import (
    GaussianPrior,
    LambdaGrid,
    LinearMeasurement,
    preset,
    propagate_ensemble,
    sample_prior,
)
from flowfilt.kernels import NUMBA_AVAILABLE, use_backend


def _model(n: int, d: int, seed: int):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    prior = GaussianPrior(rng.standard_normal(n), a @ a.T + n * np.eye(n))
    meas = LinearMeasurement(rng.standard_normal((d, n)), np.eye(d),
                             rng.standard_normal(d))
    return prior, meas


def _run(backend: str, ensemble, params, grid, prior, meas):
    with use_backend(backend):
        start = time.perf_counter()
        out = propagate_ensemble(ensemble, params, grid, prior, meas)
        return time.perf_counter() - start, out.particles


def bench(scheme: str, n_particles: int, steps: int, dim: int, seed: int):
    prior, meas = _model(dim, max(1, dim // 2), seed)
    params = preset("exact" if scheme == "rk4" else "fixed_q",
                         prior, meas)
    grid = LambdaGrid.uniform(steps, scheme=scheme)
    ensemble = sample_prior(n_particles, prior, seed=seed)

    # Warm-up compiles the JIT kernels so timings measure steady state.
    small = sample_prior(8, prior, seed=seed)
    for backend in ("numba", "numpy"):
        _run(backend, small, params, grid, prior, meas)

    t_numba, x_numba = _run("numba", ensemble, params, grid, prior, meas)
    t_numpy, x_numpy = _run("numpy", ensemble, params, grid, prior, meas)
    identical = np.array_equal(x_numba, x_numpy)
    return t_numba, t_numpy, identical


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--particles", type=int, default=10000)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--dim", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if not NUMBA_AVAILABLE:
        parser.error("numba is not importable; nothing to compare")

    print(f"{args.particles} particles, {args.steps} steps, dim {args.dim}")
    print(f"{'scheme':<14}{'numba':>10}{'numpy':>10}{'speedup':>9}  bitwise")
    ok = True
    for scheme in ("euler_maruyama", "rk4"):
        t_jit, t_np, identical = bench(scheme, args.particles, args.steps,
                                       args.dim, args.seed)
        ok = ok and identical
        print(f"{scheme:<14}{t_jit:>9.3f}s{t_np:>9.3f}s{t_np / t_jit:>8.1f}x"
              f"  {'yes' if identical else 'NO'}")
    if not ok:
        print("backend outputs differ")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
