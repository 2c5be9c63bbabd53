"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The experiment criteria run the bundled configs at desk scale (1000 training
and 500 test instances per modulation and condition).  They share one
feature and dictionary cache; point ``LPMODREC_ACCEPTANCE_CACHE`` at a
directory to keep it between sessions.
"""

import hashlib
import os
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from lpmodrec.cli import main
from lpmodrec.global_features import compute_moments, hoc_features, normalized_cumulants
from lpmodrec.harness import diagnostic_feature_stability, load_config, run_experiment
from lpmodrec.iq import Modulation
from lpmodrec.local_features import GmmDictionary, SeriesTag, encode_instance, posterior
from lpmodrec.simulator import NOISELESS, SimConfig, generate_instance

from test_local_features import em_worst_decrease, gradient_relative_errors, order_sensitivity_witness

SNRS = [f"{s}" for s in range(0, 21, 2)]
OVERLAPS = ["50", "60", "70", "80", "90", "100"]


@pytest.fixture(scope="session")
def experiments(tmp_path_factory):
    """Run bundled configs on demand, once per session, through a shared cache."""
    cache = os.environ.get("LPMODREC_ACCEPTANCE_CACHE") or tmp_path_factory.mktemp("accept-cache")
    out = tmp_path_factory.mktemp("accept-results")
    done = {}

    def get(name):
        if name not in done:
            done[name] = run_experiment(load_config(name), out / name, cache_dir=cache,
                                        store_models=False)
        return done[name]

    return get


def _acc(table, family, **knobs):
    return table.accuracy(family=family, **knobs)


# --- 1-5: oracles -------------------------------------------------------------------

def test_criterion_01_cumulant_oracle(acceptance_report):
    t0 = time.perf_counter()
    x = generate_instance(SimConfig(Modulation.QPSK, NOISELESS, samples_per_symbol=1,
                                    n_samples=100_000, rng_seed=1))
    c42 = hoc_features(x)[2]
    const = normalized_cumulants(compute_moments(np.ones(1000, dtype=complex)))["C42"]
    dt = time.perf_counter() - t0
    ok = abs(c42 - 1.0) <= 0.02 and const == -2 and dt < 1.0
    acceptance_report(1, ok, f"QPSK |C42|={c42:.4f} (1.00+-0.02), constant C42={const.real:g} "
                             f"(-2 exactly), {dt:.3f} s (<1 s)")
    assert ok


def test_criterion_02_gradient(acceptance_report):
    t0 = time.perf_counter()
    errs = gradient_relative_errors(1000, 2024)
    dt = time.perf_counter() - t0
    ok = errs.max() <= 1e-5 and dt < 10.0
    acceptance_report(2, ok, f"max relative error {errs.max():.2e} over 1000 pairs (<=1e-5), {dt:.2f} s (<10 s)")
    assert ok


def test_criterion_03_posterior_normalization(acceptance_report):
    rng = np.random.default_rng(3)
    worst, n_total, n_far = 0.0, 0, 0
    for _ in range(100):
        K, l = int(rng.integers(1, 60)), int(rng.integers(1, 6))
        var = rng.uniform(1e-6, 2.0, size=(K, l))
        d = GmmDictionary(rng.dirichlet(np.ones(K)), rng.normal(scale=3.0, size=(K, l)), var,
                          SeriesTag.AMPLITUDE)
        X = rng.normal(scale=3.0, size=(1000, l))
        # half the shingles sit 100 sigma away from every component
        far = rng.random(1000) < 0.5
        X[far] = d.means.max(axis=0) + 100.0 * np.sqrt(var.max(axis=0))
        X[far] += rng.normal(scale=10.0, size=(far.sum(), l))
        g = posterior(d, X)
        worst = max(worst, float(np.max(np.abs(g.sum(axis=1) - 1.0))))
        n_total += len(X)
        n_far += int(far.sum())
    ok = worst <= 1e-12 and np.all(np.isfinite(worst))
    acceptance_report(3, ok, f"max |sum(gamma)-1| = {worst:.1e} over {n_total} shingles "
                             f"({n_far} extreme) (<=1e-12)")
    assert ok


def test_criterion_04_em_monotone(acceptance_report):
    worst = em_worst_decrease(100, 11)
    ok = worst >= -1e-10
    acceptance_report(4, ok, f"largest per-iteration decrease {-worst:.1e} over 100 runs (<=1e-10)")
    assert ok


def test_criterion_05_fv_dimension_and_order(acceptance_report):
    rng = np.random.default_rng(5)
    dicts = [GmmDictionary(rng.dirichlet(np.ones(50)), rng.normal(size=(50, 3)),
                           rng.uniform(0.2, 2.0, (50, 3)), t) for t in (SeriesTag.AMPLITUDE, SeriesTag.PHASE)]
    fv = encode_instance(*dicts, generate_instance(SimConfig(Modulation.QAM16, 10.0, rng_seed=5)))
    gap = order_sensitivity_witness()
    ok = len(fv) == 600 and gap > 0.1
    acceptance_report(5, ok, f"FV length {len(fv)} (600), order witness relative L2 gap {gap:.3f} (>0.1)")
    assert ok


# --- 6-11: experiments --------------------------------------------------------------

@pytest.mark.slow
def test_criterion_06_unbiased_snr_aware(experiments, acceptance_report):
    t = experiments("unbiased")
    accs = {s: _acc(t, "LP+HOC", snr_db=s) for s in SNRS if int(s) >= 10}
    ok = min(accs.values()) >= 0.90
    acceptance_report(6, ok, "LP+HOC at SNR>=10: " + ", ".join(f"{s}dB {a:.3f}" for s, a in accs.items())
                      + " (>=0.90)")
    assert ok


@pytest.mark.slow
def test_criterion_07_bias_robustness(experiments, acceptance_report):
    t = experiments("bias_20db")
    lp, hoc, os_ = (_acc(t, f, missing_symbols="3") for f in ("LP+HOC", "HOC", "OS"))
    ok = lp >= 0.90 and lp - hoc >= 0.15 and lp - os_ >= 0.15
    acceptance_report(7, ok, f"3 missing at 20 dB: LP+HOC {lp:.3f} (>=0.90), HOC {hoc:.3f}, OS {os_:.3f} "
                             f"(gaps {lp - hoc:+.3f}, {lp - os_:+.3f}; >=0.15)")
    assert ok


@pytest.mark.slow
def test_criterion_08_partial_overlap(experiments, acceptance_report):
    t = experiments("overlap_aware_20db")
    parts, ok = [], True
    for o in ("70", "60", "50"):
        lp, hoc, os_ = (_acc(t, f, overlap_pct=o) for f in ("LP+HOC", "HOC", "OS"))
        ok &= lp - hoc >= 0.10 and lp - os_ >= 0.10
        parts.append(f"{o}%: LP+HOC {lp:.3f} HOC {hoc:.3f} OS {os_:.3f}")
    (row,) = t.select(family="LP+HOC", overlap_pct="70")
    per_class = {m: row[f"acc_{m}"] for m in ("QPSK", "8PSK", "8QAM")}
    ok &= min(per_class.values()) >= 0.90
    acceptance_report(8, ok, "; ".join(parts) + " (gaps >=0.10); at 70% "
                      + ", ".join(f"{m} {a:.3f}" for m, a in per_class.items()) + " (>=0.90)")
    assert ok


@pytest.mark.slow
def test_criterion_09_overlap_blind(experiments, acceptance_report):
    aware, blind = experiments("overlap_aware_10db"), experiments("overlap_blind_10db")
    diffs = {o: _acc(blind, "LP+HOC", overlap_pct=o) - _acc(aware, "LP+HOC", overlap_pct=o) for o in OVERLAPS}
    ok = max(abs(d) for d in diffs.values()) <= 0.10
    acceptance_report(9, ok, "blind-aware LP+HOC at 10 dB: "
                      + ", ".join(f"{o}% {d:+.3f}" for o, d in diffs.items()) + " (|.|<=0.10)")
    assert ok


@pytest.mark.slow
def test_criterion_10_snr_blind(experiments, acceptance_report):
    aware, blind = experiments("unbiased"), experiments("snr_blind")
    diffs = {s: _acc(blind, "LP+HOC", snr_db=s) - _acc(aware, "LP+HOC", snr_db=s) for s in SNRS}
    margin = {s: _acc(blind, "LP+HOC", snr_db=s) - _acc(blind, "HOC", snr_db=s) for s in SNRS}
    ok = max(abs(d) for d in diffs.values()) <= 0.05 and min(margin.values()) >= 0
    acceptance_report(10, ok, f"max |blind-aware| {max(abs(d) for d in diffs.values()):.3f} (<=0.05), "
                              f"min LP+HOC-HOC {min(margin.values()):+.3f} (>=0)")
    assert ok


@pytest.mark.slow
def test_criterion_11_dictionary_universality(experiments, acceptance_report):
    names = ("dictionary_0db", "dictionary_10db", "dictionary_20db", "dictionary_varied")
    tables = [experiments(n) for n in names]
    spread = {s: np.ptp([_acc(t, "LP+HOC", snr_db=s) for t in tables]) for s in SNRS}
    worst = max(spread, key=spread.get)
    ok = spread[worst] <= 0.05
    acceptance_report(11, ok, f"largest spread across 0/10/20 dB and per-condition dictionaries "
                              f"{spread[worst]:.3f} at {worst} dB (<=0.05)")
    assert ok


# --- 12-14 ---------------------------------------------------------------------------

def test_criterion_12_linear_encoding_time(acceptance_report):
    rng = np.random.default_rng(12)
    da, dp = (GmmDictionary(rng.dirichlet(np.ones(50)), rng.normal(size=(50, 3)),
                            rng.uniform(0.2, 2.0, (50, 3)), t) for t in (SeriesTag.AMPLITUDE, SeriesTag.PHASE))

    batches = {n: [generate_instance(SimConfig(Modulation.QAM16, 10.0, n_samples=n, rng_seed=i))
                   for i in range(20)] for n in (512, 1024)}
    for xs in batches.values():
        encode_instance(da, dp, xs[0])  # warm up
    best = {n: np.inf for n in batches}
    for _ in range(9):  # interleaved so both lengths see the same machine load
        for n, xs in batches.items():
            t0 = time.perf_counter()
            for x in xs:
                encode_instance(da, dp, x)
            best[n] = min(best[n], time.perf_counter() - t0)

    ratio = best[1024] / best[512]
    ok = 1.7 <= ratio <= 2.3
    acceptance_report(12, ok, f"encode time ratio n=1024/n=512 = {ratio:.2f} ([1.7, 2.3])")
    assert ok


def test_criterion_13_global_feature_degradation(acceptance_report):
    overlaps = [100, 90, 80, 70, 60, 50]
    rows = diagnostic_feature_stability(["8QAM", "16QAM"], "overlap", overlaps, n_instances=100)
    stat = {(r["value"], r["modulation"]): (r["mean"], r["std"]) for r in rows if r["feature"] == "C42"}
    gaps = [abs(stat[(o, "8QAM")][0] - stat[(o, "16QAM")][0]) for o in overlaps]
    rises = int(np.sum(np.diff(gaps) > 0))
    std_ok = True
    for m in ("8QAM", "16QAM"):
        s = [stat[(o, m)][1] for o in overlaps]
        std_ok &= s[-1] > s[0] and int(np.sum(np.diff(s) < 0)) <= 1
    ok = rises <= 1 and gaps[-1] < gaps[0] and std_ok
    acceptance_report(13, ok, "C42 gap 8QAM/16QAM at 100..50%: " + ", ".join(f"{g:.3f}" for g in gaps)
                      + f" ({rises} rises, <=1); std grows: {std_ok}")
    assert ok


def _tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def _pipeline(workdir: Path) -> dict:
    """Run every CLI stage inside ``workdir`` using relative paths."""
    cwd = os.getcwd()
    os.chdir(workdir)
    try:
        r = CliRunner()
        steps = [
            ["simulate", "--mod", "QPSK", "--mod", "8QAM", "--mod", "16QAM", "--snr", "10", "--overlap", "100",
             "--overlap", "70", "--missing", "0", "--missing", "1", "--count", "8", "--test-count", "4",
             "--len", "256", "--seed", "9", "--out", "data"],
            ["train-dict", "--in", "data/manifest.tsv", "--l", "3", "--K", "6", "--seed", "2", "--out", "dict"],
            *[["extract", "--features", f, "--in", "data/manifest.tsv", "--dict", "dict", "--out", f"{f}.csv"]
              for f in ("hoc", "os", "lp", "lp+hoc")],
            ["train-clf", "--features", "lp+hoc.csv", "--C", "auto", "--seed", "4", "--out", "model"],
            ["classify", "--model", "model", "--in", "data/manifest.tsv", "--dict", "dict", "--split", "test",
             "--out", "pred.csv"],
            ["evaluate", "--features", "os.csv", "--folds", "4", "--seed", "1", "--out", "eval.csv"],
            ["run", "--config", "quick", "--out", "run"],
            ["sweep", "--config", "quick", "--l", "2", "--K", "4", "--out", "sweep"],
            ["diagnose", "--instances", "5", "--values", "100", "--values", "60", "--out", "diag.csv"],
        ]
        for args in steps:
            res = r.invoke(main, args)
            assert res.exit_code == 0, (args, res.output)
    finally:
        os.chdir(cwd)
    return _tree_digest(workdir)


def test_criterion_14_determinism(tmp_path, acceptance_report):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and len(a) > 10
    acceptance_report(14, ok, f"{len(a)} output files across every stage, "
                              f"{len(differing)} differ between reruns (0)")
    assert ok, differing[:10]
