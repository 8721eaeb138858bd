"""Compare the compiled and numpy backends of the pointwise stress kernel.

Times the kernel alone on 2x-padded physical inputs and the full fused drift
evaluation (FFTs included) for a batch of paths, then checks that both
backends give bit-identical results.

    python benchmarks/bench_kernels.py --n 64 --paths 8 --repeat 20
"""

import argparse
import timeit

import numpy as np

from tgf_cda import kernels
from tgf_cda.grid import DomainSpec, random_field
from tgf_cda.operators import spectral_drift


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64, help="grid points per side")
    ap.add_argument("--paths", type=int, default=8, help="batch size")
    ap.add_argument("--repeat", type=int, default=20, help="timed repetitions")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    dom = DomainSpec(args.n, 2 * np.pi)
    rng = np.random.default_rng(0)
    fields = [random_field(dom, rng, kmax=args.n // 4) for _ in range(args.paths)]
    uh = np.stack([f.spectral() for f in fields])
    m = 2 * args.n
    phys = rng.standard_normal((args.paths, 5, m, m))
    alpha, beta = 0.5, 1.0

    results = {}
    print(f"n={args.n} paths={args.paths} repeat={args.repeat}")
    print(f"{'backend':<8} {'kernel ms':>10} {'drift ms':>10}")
    prev = kernels.get_backend()
    try:
        for name in backends:
            kernels.use_backend(name)
            tk = min(timeit.repeat(lambda: kernels.assemble(phys, alpha, beta), number=1, repeat=args.repeat))
            td = min(timeit.repeat(lambda: spectral_drift(uh, dom, alpha, beta), number=1, repeat=args.repeat))
            results[name] = (tk, td, kernels.assemble(phys, alpha, beta), spectral_drift(uh, dom, alpha, beta))
            print(f"{name:<8} {1e3 * tk:10.2f} {1e3 * td:10.2f}")
    finally:
        kernels.use_backend(prev)

    if len(results) == 2:
        c, p = results["cython"], results["python"]
        print(f"speedup: kernel {p[0] / c[0]:.1f}x, drift {p[1] / c[1]:.1f}x")
        same = all(np.array_equal(a, b) for a, b in zip(c[2], p[2]))
        same_drift = all(np.array_equal(a, b) for a, b in zip(c[3], p[3]))
        print(f"bit-identical: kernel {same}, drift {same_drift}")


if __name__ == "__main__":
    main()
