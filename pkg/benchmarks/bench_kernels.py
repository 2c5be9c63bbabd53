"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Reports the median wall time of the two hot loops (GMM sufficient statistics
over one instance's shingles, and one dual coordinate descent epoch) plus the
end-to-end Fisher vector encoding of one 512-sample instance.
"""

import argparse
import statistics
import time

import numpy as np

from lpmodrec import _backend
from lpmodrec.local_features import GmmDictionary, SeriesTag, encode_instance
from lpmodrec.iq import Modulation
from lpmodrec.simulator import SimConfig, generate_instance


def _median_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _dictionary(rng, K, l, tag):
    w = rng.dirichlet(np.ones(K))
    return GmmDictionary(w, rng.normal(size=(K, l)), rng.uniform(0.05, 1.0, size=(K, l)), tag)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--K", type=int, default=50)
    ap.add_argument("--l", type=int, default=3)
    args = ap.parse_args(argv)

    backends = {"python": _backend.get_backend("python")}
    try:
        backends["cython"] = _backend.get_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing the fallback only")

    rng = np.random.default_rng(0)
    K, l = args.K, args.l
    da = _dictionary(rng, K, l, SeriesTag.AMPLITUDE)
    dp = _dictionary(rng, K, l, SeriesTag.PHASE)
    shingles = np.ascontiguousarray(rng.normal(size=(100_000, l)))
    n_svm, dim = 20_000, 608
    X = np.ascontiguousarray(np.hstack([rng.normal(size=(n_svm, dim - 1)), np.ones((n_svm, 1))]))
    y = np.where(rng.random(n_svm) < 0.5, 1.0, -1.0)
    qdiag = np.einsum("ij,ij->i", X, X)
    order = rng.permutation(n_svm).astype(np.int64)
    inst = generate_instance(SimConfig(Modulation.QAM16, snr_db=10.0, rng_seed=1))

    rows = []
    for name, k in backends.items():
        t_gmm = _median_time(lambda: k.gmm_accumulate(shingles, da.weights, da.means, da.variances),
                             args.repeat)

        def epoch():
            alpha, w = np.zeros(n_svm), np.zeros(dim)
            k.dual_cd_epoch(X, y, alpha, w, qdiag, 1.0, order)

        t_cd = _median_time(epoch, max(1, args.repeat // 2) if name == "python" else args.repeat)
        t_fv = _median_time(lambda: encode_instance(da, dp, inst, kernels=k), args.repeat * 10)
        rows.append((name, t_gmm, t_cd, t_fv))

    print(f"{'backend':8s} {'gmm 1e5x' + str(l):>14s} {'cd epoch':>12s} {'fv n=512':>12s}")
    for name, a, b, c in rows:
        print(f"{name:8s} {a * 1e3:11.2f} ms {b * 1e3:9.2f} ms {c * 1e3:9.3f} ms")
    if len(rows) == 2:
        (_, a0, b0, c0), (_, a1, b1, c1) = rows
        print(f"speedup  {a0 / a1:11.1f}x {b0 / b1:10.1f}x {c0 / c1:10.1f}x")


if __name__ == "__main__":
    main()
