import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_lattice, margin_loss_literal
from privrep.dp import exponential_weights
from privrep.jl import (
    CoverKind,
    CoverSpec,
    CoverTooLarge,
    MarginParams,
    ResolutionTooCoarse,
    Solver,
    best_head_margin,
    build_cover,
    default_k_prime,
    head_grid,
    lattice_cardinality,
    margin_empirical_loss,
    private_classify,
    sample_jl,
    score_cover,
)
from privrep.rng import keyed_rng
from privrep.synth import BoundedClassDataset, gen_ground_truth, sample_ball, sample_class_data


class TestSketch:
    def test_entries(self):
        M = sample_jl(30, 6, 0).matrix
        np.testing.assert_array_equal(np.abs(M), np.full((6, 30), 1 / math.sqrt(6)))
        np.testing.assert_allclose(np.linalg.norm(M, axis=1), math.sqrt(30 / 6))
        assert set(np.unique(sample_jl(5, 1, 1).matrix)) <= {-1.0, 1.0}

    def test_keyed(self):
        np.testing.assert_array_equal(sample_jl(8, 3, 4).matrix, sample_jl(8, 3, 4).matrix)
        with pytest.raises(ValueError):
            sample_jl(8, 0, 0)

    def test_apply_and_dims(self):
        sk = sample_jl(8, 3, 4)
        x = np.arange(8.0)
        np.testing.assert_allclose(sk.apply(x[None])[0], sk.matrix @ x)
        assert (sk.target_dim, sk.source_dim) == (3, 8)

    def test_default_k_prime(self):
        assert default_k_prime(1.0, 1.0, 0.3, 50, 40) == math.ceil(8 * math.log(2000 / 0.05) / 0.09)


class TestMarginLoss:
    def test_hand_set(self):
        X = np.array([[1.0, 0.0], [0.5, 0.0], [-2.0, 0.0], [0.0, 3.0]])
        y = np.array([1.0, 1.0, 1.0, -1.0])
        U = np.array([[1.0], [0.0]])
        # signed scores with v = 1: 1.0, 0.5, -2.0, 0.0 -> two of four exceed 0.3
        assert margin_empirical_loss(U, np.array([1.0]), X, y, 0.3) == 0.5
        assert margin_empirical_loss(U, np.array([1.0]), X, y, 0.3) == margin_loss_literal(U, np.array([1.0]), X, y, 0.3)
        assert margin_empirical_loss(U, np.array([1.0]), X, y, 0.0) == 0.5
        assert margin_empirical_loss(U, np.array([1.0]), X, y, 0.6) == 0.75

    def test_zero_head_is_total_loss(self):
        X = np.random.default_rng(0).standard_normal((5, 3))
        assert margin_empirical_loss(np.eye(3)[:, :1], np.zeros(1), X, np.ones(5), 0.0) == 1.0

    def test_separable(self):
        X = np.array([[1.0, 0.2], [-1.0, 0.1]])
        assert margin_empirical_loss(np.eye(2)[:, :1], np.array([1.0]), X, np.array([1.0, -1.0]), 0.0) == 0.0


class TestHeadSolvers:
    def test_exact_matches_fine_grid(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            X, y = rng.standard_normal((20, 4)), rng.choice([-1.0, 1.0], 20)
            U = rng.standard_normal((4, 1))
            v, e = best_head_margin(U, X, y, 0.3, 1.0, Solver.EXACT_1D)
            _, g = best_head_margin(U, X, y, 0.3, 1.0, Solver.GRID, res=10001)
            assert e == g
            assert margin_empirical_loss(U, v, X, y, 0.3) == e
            assert abs(v[0]) <= 1.0

    def test_separable_reaches_zero(self):
        X = np.array([[2.0], [-3.0], [1.0]])
        y = np.array([1.0, -1.0, 1.0])
        v, loss = best_head_margin(np.ones((1, 1)), X, y, 0.3, 1.0)
        assert loss == 0.0 and v[0] > 0.3

    @given(st.integers(0, 2**31), st.integers(1, 15), st.floats(0.0, 0.5))
    def test_exact_is_global_minimum(self, seed, m, rho):
        rng = np.random.default_rng(seed)
        X, y = rng.standard_normal((m, 3)), rng.choice([-1.0, 1.0], m)
        U = rng.standard_normal((3, 1))
        _, e = best_head_margin(U, X, y, rho, 1.5, Solver.EXACT_1D)
        probes = np.linspace(-1.5, 1.5, 3001)
        brute = min(margin_empirical_loss(U, np.array([p]), X, y, rho) for p in probes)
        assert e <= brute

    def test_grid_monotone_in_resolution(self):
        rng = np.random.default_rng(2)
        X, y = rng.standard_normal((30, 5)), rng.choice([-1.0, 1.0], 30)
        U = rng.standard_normal((5, 2))
        # 2^j + 1 points per axis gives nested grids
        losses = [best_head_margin(U, X, y, 0.2, 1.0, Solver.GRID, res=2**j + 1)[1] for j in range(1, 7)]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_grid_tie_break(self):
        g = head_grid(1.0, 2, 3)
        np.testing.assert_array_equal(g[0], [0.0, 0.0])
        assert np.all(np.diff(np.linalg.norm(g, axis=1)) >= -1e-12)
        # zero data: every head ties, the smallest-norm one wins
        v, loss = best_head_margin(np.eye(2), np.zeros((3, 2)), np.ones(3), 0.1, 1.0, Solver.GRID, res=5)
        np.testing.assert_array_equal(v, [0.0, 0.0])
        assert loss == 1.0

    def test_coarse_grid_warns(self):
        with pytest.warns(ResolutionTooCoarse):
            best_head_margin(np.eye(2), np.ones((2, 2)), np.ones(2), 0.1, 1.0, Solver.GRID, res=5, r=1.0)

    def test_exact_needs_one_column(self):
        with pytest.raises(ValueError):
            best_head_margin(np.eye(2), np.ones((2, 2)), np.ones(2), 0.1, 1.0, Solver.EXACT_1D)


class TestCover:
    def test_one_dimensional(self):
        pts = build_cover(CoverSpec(1.0, 1, 1)).points
        np.testing.assert_array_equal(np.sort(pts.ravel()), [-1.0, 0.0, 1.0])

    @pytest.mark.parametrize("gamma,kp,k", [(1.0, 2, 1), (0.5, 2, 1), (1.0, 2, 2), (0.8, 3, 1)])
    def test_matches_brute_force(self, gamma, kp, k):
        pts = build_cover(CoverSpec(gamma, kp, k)).points.reshape(-1, kp * k)
        ref = np.array(brute_lattice(gamma, kp, k))
        got = pts[np.lexsort(pts.T[::-1])]
        np.testing.assert_allclose(got, ref, atol=1e-12)

    @pytest.mark.parametrize("gamma,kp,k", [(1.0, 2, 1), (0.5, 3, 1), (1.0, 2, 2)])
    def test_covers_ball(self, gamma, kp, k):
        spec = CoverSpec(gamma, kp, k)
        pts = build_cover(spec).points.reshape(-1, kp * k)
        probes = sample_ball(keyed_rng(0, "probe"), 10_000, kp * k, spec.ball_radius)
        nearest = np.min(np.linalg.norm(probes[:, None, :] - pts[None], axis=2), axis=1)
        assert nearest.max() <= gamma

    def test_too_large(self):
        spec = CoverSpec(0.1, 10, 2)
        with pytest.raises(CoverTooLarge) as info:
            build_cover(spec)
        assert info.value.cardinality == lattice_cardinality(spec) > spec.cap

    def test_random_net(self):
        cov = build_cover(CoverSpec(0.5, 3, 2, CoverKind.RANDOM_NET, count=100), 0)
        assert cov.heuristic and cov.points.shape == (100, 3, 2)
        assert np.all(np.linalg.norm(cov.points, axis=(1, 2)) <= 2.0 + 1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            CoverSpec(1.5, 2, 1)
        with pytest.raises(ValueError):
            CoverSpec(0.5, 2, 1, CoverKind.RANDOM_NET)
        with pytest.raises(ValueError):
            MarginParams(0.0, 1.0, 1.0)


def _instance(seed, n=20, m=12, d=6):
    gt = gen_ground_truth(d, 1, n, "unit", 0.0, seed)
    return gt, sample_class_data(gt.u_star, gt.v_star, 1.0, m, n, margin=0.2, rng_seed=seed)


class TestScoring:
    def test_score_is_mean_of_head_minima(self):
        gt, data = _instance(0, n=5)
        sk = sample_jl(6, 3, 1)
        pts = build_cover(CoverSpec(1.0, 3, 1)).points
        sketched = np.stack([sk.apply(ds.s0()[0]) for ds in data])
        labels = np.stack([ds.s0()[1] for ds in data])
        s = score_cover(pts, sketched, labels, 0.2, 1.0)
        for c in (0, len(pts) // 2, len(pts) - 1):
            per_user = [best_head_margin(pts[c], sketched[i], labels[i], 0.2, 1.0)[1] for i in range(5)]
            assert s[c] == pytest.approx(-np.mean(per_user), abs=1e-15)
        assert np.all((s >= -1) & (s <= 0))

    def test_grid_solver_scoring(self):
        gt, data = _instance(1, n=4)
        sk = sample_jl(6, 2, 1)
        pts = build_cover(CoverSpec(1.0, 2, 2)).points
        sketched = np.stack([sk.apply(ds.s0()[0]) for ds in data])
        labels = np.stack([ds.s0()[1] for ds in data])
        s = score_cover(pts, sketched, labels, 0.2, 1.0, Solver.GRID, res=11)
        per_user = [best_head_margin(pts[7], sketched[i], labels[i], 0.2, 1.0, Solver.GRID, res=11)[1] for i in range(4)]
        assert s[7] == pytest.approx(-np.mean(per_user))

    def test_replace_one_user_sensitivity(self):
        gt, data = _instance(2)
        n = len(data)
        sk = sample_jl(6, 3, 1)
        pts = build_cover(CoverSpec(1.0, 3, 1)).points
        sketched = np.stack([sk.apply(ds.s0()[0]) for ds in data])
        labels = np.stack([ds.s0()[1] for ds in data])
        base = score_cover(pts, sketched, labels, 0.2, 1.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            i = rng.integers(n)
            s2, l2 = sketched.copy(), labels.copy()
            s2[i] = sk.apply(sample_ball(rng, s2.shape[1], 6, 1.0))
            l2[i] = rng.choice([-1.0, 1.0], l2.shape[1])
            assert np.max(np.abs(score_cover(pts, s2, l2, 0.2, 1.0) - base)) <= 1 / n + 1e-12


class TestPipeline:
    def test_outputs(self):
        gt, data = _instance(3)
        U, heads, rep = private_classify(data, MarginParams(0.2, 1.0, 1.0), 10.0, CoverSpec(1.0, 3, 1), 0, k_prime=3)
        assert U.shape == (6, 1) and heads.shape == (20, 1)
        sk = rep.extras["sketch"]
        U_t = rep.extras["U_tilde"]
        np.testing.assert_allclose(U, sk.matrix.T @ U_t)
        assert np.linalg.norm(U_t) <= math.sqrt(2) + 0.5 + 1e-12
        assert rep.score_min <= rep.selected_score <= rep.score_max
        # predictions through the lift equal predictions on sketched data
        X = data[0].features
        np.testing.assert_allclose(X @ U, sk.apply(X) @ U_t, atol=1e-12)

    def test_deterministic(self):
        gt, data = _instance(4)
        args = (data, MarginParams(0.2, 1.0, 1.0), 5.0, CoverSpec(1.0, 3, 1), 9)
        a, b = private_classify(*args, k_prime=3), private_classify(*args, k_prime=3)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_single_user(self):
        gt, data = _instance(5, n=1)
        U, heads, rep = private_classify(data, MarginParams(0.2, 1.0, 1.0), 1.0, CoverSpec(1.0, 2, 1), 0, k_prime=2)
        assert heads.shape == (1, 1) and 0 <= rep.selected_index < rep.cover_size

    def test_k_prime_mismatch(self):
        gt, data = _instance(6)
        with pytest.raises(ValueError):
            private_classify(data, MarginParams(0.2, 1.0, 1.0), 1.0, CoverSpec(1.0, 3, 1), 0, k_prime=2)

    def test_infinite_budget_limit(self):
        w = exponential_weights([-0.4, -0.1, -0.7], math.inf, 1 / 50)
        np.testing.assert_array_equal(w, [0.0, 1.0, 0.0])

    def test_s1_loss_near_best_cover_margin(self):
        gt = gen_ground_truth(10, 1, 50, "unit", 0.0, 100)
        data = sample_class_data(gt.u_star, gt.v_star, 0.5, 40, 50, margin=0.3, rng_seed=0)
        params = MarginParams(0.3, 1.0, 0.5)
        U, heads, rep = private_classify(data, params, 50.0, CoverSpec(0.5, 4, 1), 0, k_prime=4)
        s1 = np.mean([margin_empirical_loss(U, heads[i], *data[i].s1(), 0.0) for i in range(50)])
        assert s1 <= -rep.score_max + 0.1

    def test_bounded_dataset_halves(self):
        ds = BoundedClassDataset(0, np.zeros((5, 2)), np.ones(5), 1.0)
        assert ds.s0()[0].shape[0] == 2 and ds.s1()[0].shape[0] == 3
