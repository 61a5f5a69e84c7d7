import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irbp.assembly import Assembler, build_block_system
from irbp.diagnostics import (best_k_term_error, check_lemma_energy_identity, check_lemma_mutual_bound,
                              check_rip_mu_bound, check_support_split, energy_identities, full_rank_factor,
                              mutual_incoherence, recovery_experiment, rip_constant, two_stage_decode)
from irbp.dictionary import Family, RefinementTree, ids_through_level
from irbp.problems import get_problem


def hierarchy(level, problem="arctan4"):
    ids = ids_through_level(Family.HAT1D, level)
    asm = Assembler(get_problem(problem))
    return asm.stiffness(ids, ids).toarray(), asm.load(ids).values


def lower_block(level):
    """``[A21 A22]`` for the step that adds ``level`` to all coarser levels."""
    C = ids_through_level(Family.HAT1D, level - 1)
    return build_block_system(C, RefinementTree(Family.HAT1D), get_problem("arctan4")).lower().toarray()


def rip_brute(Phi, k):
    # every support of size at most k, eigenvalues one by one
    P = Phi / np.linalg.norm(Phi, axis=0)
    best = 0.0
    for s in range(1, k + 1):
        for S in itertools.combinations(range(P.shape[1]), s):
            ev = np.linalg.eigvalsh(P[:, S].T @ P[:, S])
            best = max(best, ev[-1] - 1, 1 - ev[0])
    return best


def test_incoherence_orthonormal_and_duplicate():
    assert mutual_incoherence(np.eye(4)).mu == 0.0
    rep = mutual_incoherence(np.array([[1.0, 0, 2], [0, 1, 0]]))
    assert rep.mu == pytest.approx(1.0)
    assert rep.witness == (0, 2)


def test_incoherence_rejects_zero_column():
    with pytest.raises(ValueError, match="column 1 is zero"):
        mutual_incoherence(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_incoherence_unnormalised():
    Phi = np.array([[2.0, 1.0], [0.0, 1.0]])
    assert mutual_incoherence(Phi, normalize=False).mu == pytest.approx(2.0)
    assert mutual_incoherence(Phi).mu == pytest.approx(1 / math.sqrt(2))


@pytest.mark.parametrize("level", [3, 5, 7])
def test_lower_block_incoherence(level):
    A = lower_block(level)
    assert mutual_incoherence(A).mu == pytest.approx(math.sqrt(2 / 3), abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_rip_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    Phi = rng.standard_normal((5, 8))
    est = rip_constant(Phi, k)
    assert est.method == "exhaustive" and not est.is_lower_bound
    assert est.delta_k == pytest.approx(rip_brute(Phi, k), abs=1e-12)


def test_rip_sampled_is_a_lower_bound():
    rng = np.random.default_rng(3)
    Phi = rng.standard_normal((6, 14))
    exact = rip_constant(Phi, 3).delta_k
    sampled = rip_constant(Phi, 3, budget=40, method="auto")
    assert sampled.is_lower_bound
    assert sampled.delta_k <= exact + 1e-12


def test_rip_budget_and_k_validation():
    Phi = np.random.default_rng(0).standard_normal((4, 20))
    with pytest.raises(ValueError, match="budget"):
        rip_constant(Phi, 5, budget=100, method="exhaustive")
    with pytest.raises(ValueError):
        rip_constant(Phi, 0)
    with pytest.raises(ValueError):
        rip_constant(Phi, 2, method="guess")


def test_rip_lower_block_small_k():
    A = lower_block(3)
    assert rip_constant(A, 1).delta_k == pytest.approx(0.0, abs=1e-12)
    assert rip_constant(A, 2).delta_k == pytest.approx(math.sqrt(2 / 3), abs=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.data(),
       st.sampled_from([0.5, 1.0, 2.0, np.inf]))
def test_best_k_term_error_is_optimal(x, data, p):
    x = np.array(x)
    k = data.draw(st.integers(0, len(x)))
    got = best_k_term_error(x, k, p)
    # brute force over all supports of size k
    best = np.inf
    for S in itertools.combinations(range(len(x)), k):
        r = np.delete(np.abs(x), list(S))
        val = 0.0 if r.size == 0 else (r.max() if np.isinf(p) else np.sum(r ** p) ** (1 / p))
        best = min(best, val)
    assert got == pytest.approx(best, rel=1e-12, abs=1e-12)


def test_best_k_term_examples():
    x = np.array([3.0, -1.0, 2.0, 0.5])
    assert best_k_term_error(x, 2, 1) == pytest.approx(1.5)
    assert best_k_term_error(x, 4, 1) == 0.0
    assert best_k_term_error(x, 1, np.inf) == 2.0
    with pytest.raises(ValueError):
        best_k_term_error(x, 5)
    with pytest.raises(ValueError):
        best_k_term_error(x, 1, p=0)


@pytest.mark.parametrize("level", [3, 5])
def test_mutual_bound_holds_on_lower_block(level):
    A = lower_block(level)
    rep = check_lemma_mutual_bound(A, trials=1000)
    assert rep.holds and rep.violations == 0


def test_mutual_bound_holds_on_random_matrices():
    rng = np.random.default_rng(5)
    for _ in range(5):
        assert check_lemma_mutual_bound(rng.standard_normal((10, 25)), trials=300).holds


@pytest.mark.parametrize("k", [2, 3])
def test_rip_mu_bound(k):
    A = lower_block(4)
    rep = check_rip_mu_bound(A, k)
    assert rep.holds
    assert rep.details["delta_k"] <= (k - 1) * rep.details["mu"] + 1e-12


def test_energy_identities_on_levels():
    rep = check_lemma_energy_identity((3, 4, 8))
    assert rep.holds, rep.details
    assert rep.details["x_lhs"] >= 0


def test_energy_identities_degenerate_partition():
    A, b = hierarchy(5)
    out = energy_identities(A, b, 11, 11)
    assert out["z_lhs"] == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        energy_identities(A, b, 12, 11)


def test_support_split_on_recoverable_instance():
    rng = np.random.default_rng(11)
    Phi = rng.standard_normal((20, 40)) / math.sqrt(20)
    x = np.zeros(40)
    x[[3, 17]] = [1.0, -2.0]
    assert check_support_split(Phi, Phi @ x, x).holds


def test_support_split_flags_a_bad_guess():
    # z far from x and mostly off the support of x
    x = np.array([1.0, 0, 0, 0])
    z = np.array([1.0, 5, 5, 5])
    rep = check_support_split(np.eye(4), z, x, z=z)
    assert not rep.holds and rep.max_violation == pytest.approx(7.5)


def test_recovery_experiment_small():
    rep = recovery_experiment(m=30, n=60, k=3, trials=20, seed=1)
    assert rep.rate == 1.0 and rep.failures == []


def test_full_rank_factor_reproduces_matrix():
    A, _ = hierarchy(5)
    B = full_rank_factor(A)
    assert B.shape == (31, A.shape[0])
    np.testing.assert_allclose(B.T @ B, A, atol=1e-12)


def test_two_stage_decoder_with_full_factor():
    A, b = hierarchy(4)
    x_ref, *_ = np.linalg.lstsq(A, b, rcond=None)
    rep = two_stage_decode(A, b, x_ref=x_ref)
    assert rep.norm_B2 == 0.0
    assert rep.relative_energy_error < 1e-12
    np.testing.assert_allclose(A @ rep.x, b, atol=1e-10)


def test_two_stage_decoder_truncated_split_bounded_by_tail():
    A, b = hierarchy(4)
    rep = two_stage_decode(A, b, split=10)
    assert rep.B1.shape[0] == 10 and rep.norm_B2 > 0


def test_two_stage_decoder_rejects_bad_split():
    A, b = hierarchy(3)
    B = full_rank_factor(A)
    with pytest.raises(ValueError, match="reproduce"):
        two_stage_decode(A, b, split=(B[:3], B[4:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_incoherence_invariant_under_permutation_and_signs(seed):
    rng = np.random.default_rng(seed)
    Phi = rng.standard_normal((6, 10))
    perm = rng.permutation(10)
    signs = rng.choice([-1.0, 1.0], 10)
    assert mutual_incoherence(Phi[:, perm] * signs).mu == pytest.approx(mutual_incoherence(Phi).mu, abs=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_rip_monotone_in_k(seed):
    Phi = np.random.default_rng(seed).standard_normal((6, 9))
    deltas = [rip_constant(Phi, k).delta_k for k in range(1, 6)]
    assert all(a <= b + 1e-12 for a, b in zip(deltas, deltas[1:]))
