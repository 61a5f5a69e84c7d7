"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line and the collected lines are
repeated in the pytest terminal summary (see ``conftest.py``). Running this
file directly prints the same lines without pytest.
"""
import itertools
import math
import time

import numpy as np
import pytest

from irbp.assembly import build_block_system
from irbp.cli import bench_levels
from irbp.diagnostics import (best_k_term_error, check_lemma_energy_identity, check_lemma_mutual_bound,
                              check_rip_mu_bound, check_support_split, energy_identities, mutual_incoherence,
                              recovery_experiment, rip_constant, two_stage_decode)
from irbp.dictionary import Family, RefinementTree, count_basis, ids_through_level
from irbp.lp import LpStatus, basis_pursuit, least_squares
from irbp.problems import exact_on_points, get_problem, relative_l2_error
from irbp.solver import IrbpConfig, irbp_run, reconstruct, support_mask

RESULTS = []


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def lower_block_1d(level, problem="arctan4"):
    p = get_problem(problem)
    C = ids_through_level(Family.HAT1D, level - 1)
    return build_block_system(C, RefinementTree(Family.HAT1D), p)


def test_criterion_01_mutual_incoherence():
    t0 = time.perf_counter()
    mus = {L: mutual_incoherence(lower_block_1d(L).lower()).mu for L in range(3, 9)}
    secs = time.perf_counter() - t0
    target = math.sqrt(2 / 3)
    worst = max(abs(m - target) for m in mus.values())
    ok = worst <= 1e-10 and secs < 5
    record(1, "mutual incoherence", ok, f"max |mu - sqrt(2/3)| = {worst:.2e} over levels 3-8, {secs:.2f} s")


def test_criterion_02_rip_constants():
    t0 = time.perf_counter()
    rows = []
    for L in (3, 4, 5):
        M = lower_block_1d(L).lower()
        d = [rip_constant(M, k, method="exhaustive").delta_k for k in (1, 2, 3)]
        rows.append((L, *d))
    secs = time.perf_counter() - t0
    ok = all(abs(d1) <= 1e-12 and abs(d2 - 0.8165) <= 5e-4 and d3 > 1 for _, d1, d2, d3 in rows) and secs < 60
    detail = "; ".join(f"L{L}: d1={d1:.1e} d2={d2:.7f} d3={d3:.4f}" for L, d1, d2, d3 in rows)
    record(2, "RIP constants", ok, f"{detail}; {secs:.1f} s")


def test_criterion_03_counterexample_lp():
    r2 = math.sqrt(2)
    A4 = np.array([[1, 0, 1 / r2, 0], [0, 1, -0.5, 0], [1 / r2, -0.5, 1, -0.5], [0, 0, -0.5, 1]])
    b2 = np.array([6.0, -1.5, -1.0])
    x4 = np.array([0.0, 7.0, 2.0, 0.0])
    res = basis_pursuit(A4[1:], b2)
    ok = (res.status is LpStatus.OPTIMAL and abs(res.objective - (7 + r2)) <= 1e-8
          and np.abs(res.solution).sum() < np.abs(x4).sum() == 9)
    record(3, "counterexample LP", ok,
           f"objective {res.objective:.12f} vs 7+sqrt(2) = {7 + r2:.12f}, z = {np.round(res.solution, 10).tolist()}")


def test_criterion_04_table1_reproduction():
    t0 = time.perf_counter()
    cfg = IrbpConfig(get_problem("arctan2"), start_level=4, max_steps=5)
    state, report = irbp_run(cfg)
    secs = time.perf_counter() - t0
    dims = [(r.l1_rows, r.l1_cols) for r in state.history]
    z = [r.z_l0 for r in state.history]
    ratios = [r.ratio for r in state.history]
    want_dims = [(15, 26), (29, 42), (59, 72), (113, 126), (191, 204)]
    want_z = [13, 23, 41, 67, 103]
    dims_ok = len(dims) == 5 and all(abs(m - wm) <= 0.1 * wm and abs(n - wn) <= 0.1 * wn
                                     for (m, n), (wm, wn) in zip(dims, want_dims))
    z_ok = len(z) == 5 and all(abs(a - b) <= 0.15 * b for a, b in zip(z, want_z))
    ratio_ok = all(b < a for a, b in zip(ratios, ratios[1:]))
    ok = dims_ok and z_ok and ratio_ok and secs < 120
    record(4, "1D refinement table", ok,
           f"dims {dims} ({'ok' if dims_ok else 'off'}), z_l0 {z} ({'ok' if z_ok else 'off'}), "
           f"ratios {[round(r, 3) for r in ratios]} ({'decreasing' if ratio_ok else 'not strictly decreasing'}), "
           f"{secs:.1f} s")


def test_criterion_05_level8_experiment():
    t0 = time.perf_counter()
    p = get_problem("arctan4")
    system = lower_block_1d(8)
    M, b = system.lower(), system.b2.values
    res = basis_pursuit(M, b)
    z_nnz = int(support_mask(res.solution).sum())
    x_ls = least_squares(M, b)
    ls_nnz = int(support_mask(x_ls).sum())
    coeffs = dict(zip(system.columns, res.solution))
    err = relative_l2_error(lambda q: reconstruct(coeffs, q, Family.HAT1D), exact_on_points(p), Family.HAT1D)
    secs = time.perf_counter() - t0
    ok = M.shape == (255, 502) and z_nnz <= 70 and ls_nnz >= 480 and err <= 0.08 and secs < 60
    record(5, "level-8 experiment", ok,
           f"matrix {M.shape[0]}x{M.shape[1]}, l1 nonzeros {z_nnz} (need <= 70), "
           f"least-squares nonzeros {ls_nnz} (need >= 480), rel. error {err:.4f} (need <= 0.08), {secs:.1f} s")


@pytest.mark.slow
def test_criterion_06_table2_reproduction():
    t0 = time.perf_counter()
    cfg = IrbpConfig(get_problem("poly2d"), start_level=2, max_steps=5)
    state, report = irbp_run(cfg)
    secs = time.perf_counter() - t0
    dims = [(r.l1_rows, r.l1_cols) for r in state.history]
    ratios = [r.ratio for r in state.history]
    first_ok = bool(dims) and dims[0] == (9, 10)
    dec_ok = all(b <= a for a, b in zip(ratios, ratios[1:]))
    final_ok = bool(ratios) and ratios[-1] <= 0.15
    ok = first_ok and dec_ok and final_ok and secs < 600
    record(6, "2D refinement table", ok,
           f"dims {dims}, ratios {[round(r, 3) for r in ratios]} "
           f"(step-1 dims {'ok' if first_ok else 'off'}, {'decreasing' if dec_ok else 'not decreasing'}, "
           f"final {'<=' if final_ok else '>'} 0.15), {secs:.0f} s")


def _brute_sigma(x, k, p):
    best = math.inf
    for S in itertools.combinations(range(len(x)), k):
        r = np.delete(np.abs(x), list(S))
        val = 0.0 if r.size == 0 else (r.max() if np.isinf(p) else np.sum(r ** p) ** (1 / p))
        best = min(best, val)
    return best


def test_criterion_07_property_suite():
    rng = np.random.default_rng(2024)
    notes = []

    mutual = [check_lemma_mutual_bound(rng.standard_normal((10, 20)), trials=1000, seed=s) for s in range(5)]
    mutual_ok = all(r.holds and r.violations == 0 for r in mutual)
    notes.append(f"mutual bound violations {sum(r.violations for r in mutual)}/5000")

    split_bad, worst = 0, 0.0
    for t in range(100):
        m = int(rng.integers(4, 10))
        n = 2 * m + int(rng.integers(0, 6))
        A = rng.standard_normal((m, n))
        x = rng.standard_normal(n) * (rng.random(n) < rng.uniform(0.2, 1.0))
        rep = check_support_split(A, A @ x, x, slack=1e-9)
        split_bad += not rep.holds
        worst = max(worst, rep.max_violation)
    notes.append(f"support split failures {split_bad}/100 (max excess {worst:.1e})")

    rip_bad = 0
    mats = [rng.standard_normal((6, 12)) for _ in range(4)] + [lower_block_1d(3).lower().toarray()]
    for M in mats:
        for k in range(1, 5):
            rip_bad += not check_rip_mu_bound(M, k).holds
    notes.append(f"delta_k <= (k-1) mu failures {rip_bad}/{4 * len(mats)}")

    sigma_bad = 0
    for _ in range(50):
        n = int(rng.integers(1, 13))
        x = rng.standard_normal(n) * (rng.random(n) < 0.7)
        for p in (0.5, 1.0, 2.0, np.inf):
            for k in range(n + 1):
                sigma_bad += not math.isclose(best_k_term_error(x, k, p), _brute_sigma(x, k, p),
                                              rel_tol=1e-12, abs_tol=1e-12)
    notes.append(f"best k-term mismatches {sigma_bad}")

    ok = mutual_ok and split_bad == 0 and rip_bad == 0 and sigma_bad == 0
    record(7, "property suite", ok, "; ".join(notes))


def test_criterion_08_energy_identities():
    hier = check_lemma_energy_identity((3, 4, 8), tol=1e-8)
    rng = np.random.default_rng(8)
    gaps = []
    for _ in range(10):
        L = int(rng.integers(10, 18))
        G = rng.standard_normal((L, L))
        A = G @ G.T + 0.1 * np.eye(L)
        b = rng.standard_normal(L)
        n = int(rng.integers(1, L // 2))
        N = int(rng.integers(n + 1, L))
        out = energy_identities(A, b, n, N)
        gaps.append(max(out["x_gap"], out["z_gap"]))
    ok = hier.holds and max(gaps) <= 1e-8
    record(8, "energy identities", ok,
           f"(3,4,8) hierarchy max gap {hier.max_violation:.1e}; random SPD max gap {max(gaps):.1e}")


def test_criterion_09_exact_recovery():
    t0 = time.perf_counter()
    rep = recovery_experiment(m=30, n=60, k=3, trials=200, seed=42, tol=1e-6)
    ok = rep.rate >= 0.95
    record(9, "exact recovery", ok,
           f"{rep.recovered}/{rep.trials} recovered ({100 * rep.rate:.1f}%), {time.perf_counter() - t0:.1f} s")


def test_criterion_10_two_stage_decoder():
    rng = np.random.default_rng(10)
    errs, deltas = [], []
    k = 2
    for _ in range(10):
        N, r = 40, 32
        # rows of a random orthogonal matrix keep delta_2k of B1 well below the Gaussian value
        Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
        B1 = Q[:r] * math.sqrt(N / r)
        # B2^T B2 is diagonal on k coordinates, so the corruption B2^T B2 x is k-sparse
        corrupt = rng.choice(N, size=k, replace=False)
        B2 = np.zeros((k, N))
        B2[np.arange(k), corrupt] = rng.uniform(0.5, 2.0, k)
        A = B1.T @ B1 + B2.T @ B2
        x = np.zeros(N)
        x[rng.choice(N, size=k, replace=False)] = rng.standard_normal(k)
        rep = two_stage_decode(A, A @ x, split=(B1, B2), x_ref=x)
        errs.append(rep.relative_energy_error)
        deltas.append(rip_constant(B1, 2 * k, method="exhaustive").delta_k)
    ok = max(errs) <= 1e-16
    record(10, "two-stage decoder", ok,
           f"max relative energy error {max(errs):.1e} over 10 instances; delta_2k of B1 in "
           f"[{min(deltas):.3f}, {max(deltas):.3f}]")


@pytest.mark.slow
def test_criterion_11_benchmark_shape(tmp_path):
    t0 = time.perf_counter()
    rows = bench_levels((7, 14))
    secs = time.perf_counter() - t0
    got = [(lvl, m, n) for lvl, m, n, *_ in rows]
    want = [(7, 127, 247), (8, 255, 502), (9, 511, 1013), (10, 1023, 2036), (11, 2047, 4083),
            (12, 4095, 8178), (13, 8191, 16369), (14, 16383, 32752)]
    ok = got == want and all(n == count_basis(Family.HAT1D, lvl) for lvl, _, n in got)
    times = ", ".join(f"L{lvl} {t / 1e3:.2f}s/{s}" for lvl, _, _, t, _, s in rows)
    record(11, "benchmark shape", ok, f"(level, m, n) {'match' if ok else 'differ'} for levels 7-14; "
                                      f"times {times}; total {secs:.0f} s")


if __name__ == "__main__":
    import inspect
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted(inspect.getmembers(sys.modules[__name__], inspect.isfunction)):
        if not name.startswith("test_criterion_"):
            continue
        try:
            fn(*([Path(tempfile.mkdtemp())] if "tmp_path" in inspect.signature(fn).parameters else []))
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
