"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Prints the median wall time
of each backend, the speed-up, and the largest relative difference between
the two outputs.
"""

import argparse
import time

import numpy as np

from dosemerge import kernels


def _time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def cases(rng, n_subj=40, n_obs=200, n_peak=64 * 2000):
    subj = np.repeat(np.arange(n_subj), n_obs // n_subj).astype(np.int64)
    dose = rng.uniform(1, 300, subj.size)
    t = rng.uniform(0.1, 15, subj.size)
    cl = 0.4 * np.exp(0.7 * rng.standard_normal(n_subj))
    v = 0.2 * np.exp(0.7 * rng.standard_normal(n_subj))
    ic50 = 0.3 * np.exp(0.7 * rng.standard_normal(n_subj))
    ke = 1.6 * np.exp(0.7 * rng.standard_normal(n_subj))
    y = rng.standard_normal(subj.size)
    pcl = 40 * np.exp(0.7 * rng.standard_normal(n_peak))
    pv = 100 * np.exp(0.7 * rng.standard_normal(n_peak))
    pke = 1.6 * np.exp(0.7 * rng.standard_normal(n_peak))
    return {
        "conc_sq_resid": lambda b: kernels.conc_sq_resid(2.0, cl, v, subj, dose, t, y, n_subj, backend=b),
        "inhib_sq_resid": lambda b: kernels.inhib_sq_resid(2.0, cl, v, ic50, ke, 1.0, subj, dose, t, y,
                                                           n_subj, backend=b),
        "peak_unit_effect": lambda b: kernels.peak_unit_effect(2.0, pcl, pv, pke, 48.0, backend=b),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    print(f"default backend: {kernels.BACKEND}")
    backends = ["python"] + (["compiled"] if kernels.COMPILED_AVAILABLE else [])
    for name, fn in cases(np.random.default_rng(args.seed)).items():
        res = {b: _time(lambda: fn(b), args.repeat) for b in backends}
        line = f"{name:18s} python {res['python'][0] * 1e3:9.2f} ms"
        if "compiled" in res:
            a, b = (np.asarray(res[k][1], dtype=float) for k in ("python", "compiled"))
            rel = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))
            line += (f"   compiled {res['compiled'][0] * 1e3:9.2f} ms"
                     f"   speed-up {res['python'][0] / res['compiled'][0]:6.1f}x   max rel diff {rel:.1e}")
        print(line)


if __name__ == "__main__":
    main()
