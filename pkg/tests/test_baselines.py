"""Tests for the factorization baselines and the rank-search sweep."""

from collections import Counter

import numpy as np
import pytest

from ebgmcr.baselines import (
    FactorizationResult,
    candidate_ranks,
    mcr_als_solve,
    nmf_solve,
    rank_search,
)
from ebgmcr.synthgen import SynthConfig, generate_dataset

RANK_ONE = np.outer([1.0, 2.0], [1.0, 0.0, 1.0])


def _frob_error(D, result) -> float:
    return float(((D - result.left @ result.right) ** 2).sum())


class TestNmf:
    def test_exact_rank_one_matrix(self):
        result = nmf_solve(RANK_ONE, 1)
        assert result.r2 >= 0.999

    def test_zero_rank_is_an_error(self):
        with pytest.raises(ValueError, match="rank"):
            nmf_solve(RANK_ONE, 0)

    def test_rank_beyond_shape_is_an_error(self):
        with pytest.raises(ValueError, match="exceeds"):
            nmf_solve(RANK_ONE, 3)

    def test_noiseless_sparse_mixture_recovered_at_true_rank(self):
        ds = generate_dataset(SynthConfig(n_components=4, m_samples=16, d=32, seed=0))
        best = max(nmf_solve(ds.mixtures, 4, seed=s).r2 for s in range(5))
        assert best >= 0.99

    def test_updates_never_increase_frobenius_error(self):
        rng = np.random.default_rng(0)
        D = np.abs(rng.standard_normal((12, 9)))
        # Same seed means run k is a prefix of run k+1, so the per-iteration
        # error sequence is observable through increasing iteration caps.
        errors = [
            _frob_error(D, nmf_solve(D, 3, max_iters=k, tol=0.0, seed=1))
            for k in range(1, 26)
        ]
        for prev, nxt in zip(errors, errors[1:]):
            assert nxt <= prev * (1 + 1e-10) + 1e-15

    def test_outputs_are_non_negative_even_for_noisy_input(self):
        rng = np.random.default_rng(2)
        D = rng.standard_normal((10, 8)) + 1.0
        result = nmf_solve(D, 3, seed=0)
        assert np.all(result.left >= 0) and np.all(result.right >= 0)

    def test_same_seed_is_deterministic(self):
        rng = np.random.default_rng(3)
        D = np.abs(rng.standard_normal((8, 6)))
        a, b = nmf_solve(D, 2, seed=5), nmf_solve(D, 2, seed=5)
        assert np.array_equal(a.left, b.left) and np.array_equal(a.right, b.right)

    def test_iteration_cap_reported(self):
        rng = np.random.default_rng(4)
        D = np.abs(rng.standard_normal((8, 6)))
        result = nmf_solve(D, 2, max_iters=3, seed=0)
        assert result.iterations_run == 3
        assert not result.converged

    def test_convergence_flag_set_when_tolerance_reached(self):
        result = nmf_solve(RANK_ONE, 1, max_iters=2000, tol=1e-6)
        assert result.converged


class TestMcrAls:
    def test_exact_rank_one_matrix(self):
        result = mcr_als_solve(RANK_ONE, 1)
        assert result.r2 >= 0.999

    def test_zero_rank_is_an_error(self):
        with pytest.raises(ValueError, match="rank"):
            mcr_als_solve(RANK_ONE, 0)

    def test_same_seed_is_deterministic(self):
        rng = np.random.default_rng(5)
        D = np.abs(rng.standard_normal((9, 7)))
        a, b = mcr_als_solve(D, 3, seed=2), mcr_als_solve(D, 3, seed=2)
        assert np.array_equal(a.left, b.left) and np.array_equal(a.right, b.right)

    def test_outputs_are_non_negative(self):
        rng = np.random.default_rng(6)
        D = rng.standard_normal((10, 8)) + 0.5
        result = mcr_als_solve(D, 3, seed=0)
        assert np.all(result.left >= 0) and np.all(result.right >= 0)

    def test_ridge_handles_rank_deficient_normal_equations(self):
        # Duplicated rows make the factor normal equations singular without
        # the ridge term; the solve must still return finite factors.
        row = np.abs(np.random.default_rng(7).standard_normal(6))
        D = np.vstack([row, row, row, 2 * row])
        result = mcr_als_solve(D, 2, seed=0)
        assert np.all(np.isfinite(result.left)) and np.all(np.isfinite(result.right))
        assert result.r2 >= 0.99

    def test_noiseless_sparse_mixture_recovered_at_true_rank(self):
        ds = generate_dataset(SynthConfig(n_components=4, m_samples=16, d=32, seed=1))
        best = max(mcr_als_solve(ds.mixtures, 4, seed=s).r2 for s in range(5))
        assert best >= 0.99


class TestFactorizationResult:
    def test_r2_above_one_rejected(self):
        with pytest.raises(ValueError):
            FactorizationResult(
                left=np.ones((2, 1)),
                right=np.ones((1, 2)),
                r2=1.5,
                iterations_run=1,
                converged=True,
            )


class TestCandidateRanks:
    def test_sixteen_gives_the_published_multiset(self):
        ranks = candidate_ranks(16)
        assert ranks == [12, 13, 14, 15, 16, 16, 17, 18, 19]
        assert Counter(ranks) == Counter({12: 1, 13: 1, 14: 1, 15: 1, 16: 2, 17: 1, 18: 1, 19: 1})

    def test_integer_arithmetic_avoids_float_floor_artifacts(self):
        # floor(1.15 * 20) evaluates to 22 in binary floating point; the
        # integer form (115 * 20) // 100 yields the intended 23.
        assert candidate_ranks(20) == [16, 17, 18, 19, 20, 21, 22, 23, 24]

    def test_thirty_two(self):
        assert candidate_ranks(32) == [25, 27, 28, 30, 32, 33, 35, 36, 38]


class TestRankSearch:
    def test_monotone_fake_solver_selects_largest(self):
        def fake(D, c):
            return FactorizationResult(
                left=np.zeros((1, 1)),
                right=np.zeros((1, 1)),
                r2=c / 20.0,
                iterations_run=1,
                converged=True,
            )

        out = rank_search(fake, np.ones((4, 4)), 16, r2_target=0.9)
        assert out.c_selected == 19
        assert out.r2_best == pytest.approx(0.95)
        assert out.success
        assert len(out.trace) == 9

    def test_best_below_target_is_not_success(self):
        def fake(D, c):
            return FactorizationResult(
                left=np.zeros((1, 1)),
                right=np.zeros((1, 1)),
                r2=0.975,
                iterations_run=1,
                converged=True,
            )

        out = rank_search(fake, np.ones((4, 4)), 16, r2_target=0.98)
        assert not out.success
        assert out.r2_best == pytest.approx(0.975)

    def test_ties_keep_the_last_candidate(self):
        def fake(D, c):
            return FactorizationResult(
                left=np.zeros((1, 1)),
                right=np.zeros((1, 1)),
                r2=0.5,
                iterations_run=1,
                converged=True,
            )

        out = rank_search(fake, np.ones((4, 4)), 16, r2_target=0.4)
        assert out.c_selected == 19

    def test_zero_rank_candidates_skipped_with_warning(self):
        def fake(D, c):
            assert c >= 1
            return FactorizationResult(
                left=np.zeros((1, 1)),
                right=np.zeros((1, 1)),
                r2=0.1,
                iterations_run=1,
                converged=True,
            )

        with pytest.warns(UserWarning, match="zero-rank"):
            out = rank_search(fake, np.ones((4, 4)), 1, r2_target=0.5)
        assert len(out.trace) == 5
        assert all(c == 1 for c, _ in out.trace)

    def test_invalid_true_count_is_an_error(self):
        with pytest.raises(ValueError, match="c_star"):
            rank_search(lambda D, c: None, np.ones((2, 2)), 0, 0.9)

    def test_selection_reproduces_exhaustive_rescan(self):
        rng = np.random.default_rng(11)

        for _ in range(25):
            values = iter(rng.uniform(0.0, 1.0, 9).tolist())

            def fake(D, c):
                return FactorizationResult(
                    left=np.zeros((1, 1)),
                    right=np.zeros((1, 1)),
                    r2=next(values),
                    iterations_run=1,
                    converged=True,
                )

            out = rank_search(fake, np.ones((4, 4)), 16, r2_target=2.0)
            best = max(r for _, r in out.trace)
            last_best = [c for c, r in out.trace if r == best][-1]
            assert out.c_selected == last_best
            assert out.r2_best == pytest.approx(best)
            assert not out.success
