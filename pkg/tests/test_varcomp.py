"""Projector primitives and moment-based variance components."""

import numpy as np
import pytest

from lmmridge import (
    ConfoundedRandomEffectsError,
    build_design,
    henderson_m3,
    orthonormal_basis,
    projector,
)

from tests.helpers import make_design, simulate_response


class TestProjector:
    def test_identity(self):
        np.testing.assert_allclose(projector(np.eye(5)), np.eye(5), atol=1e-12)

    def test_rank_one(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal(7)
        expected = np.outer(v, v) / (v @ v)
        np.testing.assert_allclose(projector(v[:, None]), expected, atol=1e-12)

    def test_definitional_properties(self):
        """P A = A, trace(P) = rank, symmetry, idempotence on a 10x4."""
        rng = np.random.default_rng(1)
        a = rng.standard_normal((10, 4))
        p = projector(a)
        np.testing.assert_allclose(p @ a, a, atol=1e-10)
        assert np.trace(p) == pytest.approx(4.0, abs=1e-8)
        np.testing.assert_allclose(p, p.T, atol=1e-12)
        assert np.max(np.abs(p @ p - p)) <= 1e-10

    def test_zero_matrix(self):
        np.testing.assert_array_equal(projector(np.zeros((6, 3))), np.zeros((6, 6)))

    def test_rank_detection(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((8, 3))
        a = np.hstack([a, a[:, :1] * 2.0])  # duplicate direction
        _, rank = orthonormal_basis(a)
        assert rank == 3


def _dense_henderson(design, support):
    """Dense-projector oracle for the moment equations."""
    y = design.y
    n = design.n_obs
    xs = design.x[:, support]
    xt = np.hstack([xs, design.z])
    p_xt = projector(xt)
    p_xs = projector(xs)
    rank_xt = int(round(np.trace(p_xt)))
    rank_xs = int(round(np.trace(p_xs)))
    sigma2 = y @ (np.eye(n) - p_xt) @ y / (n - rank_xt)
    trace_term = np.trace(design.z.T @ (np.eye(n) - p_xs) @ design.z)
    tau2 = (y @ (p_xt - p_xs) @ y - sigma2 * (rank_xt - rank_xs)) / trace_term
    return sigma2, tau2, rank_xt, rank_xs, trace_term


class TestHendersonM3:
    def test_matches_dense_oracle(self):
        design = make_design(n_groups=8, n_per_group=5, p=15, seed=3)
        beta = np.zeros(15)
        beta[:2] = [1.0, -0.5]
        design = simulate_response(design, beta, 0.5, 1.0, seed=4)
        support = np.array([0, 1, 5])
        vc = henderson_m3(design, support)
        sigma2, tau2, rank_xt, rank_xs, trace_term = _dense_henderson(
            design, support
        )
        assert vc.sigma2_hat == pytest.approx(sigma2, rel=1e-10)
        assert vc.tau2_hat == pytest.approx(tau2, rel=1e-10)
        assert vc.rank_xtilde == rank_xt
        assert vc.rank_xs == rank_xs
        assert vc.trace_term == pytest.approx(trace_term, rel=1e-10)

    def test_response_in_span_gives_zero_sigma2(self):
        design = make_design(n_groups=6, n_per_group=4, p=8, seed=5)
        support = np.array([0, 2])
        coeffs = np.array([1.0, -2.0])
        ups = np.linspace(-1, 1, design.z.shape[1])
        y = design.x[:, support] @ coeffs + design.z @ ups
        design = design.with_response(y)
        vc = henderson_m3(design, support)
        assert vc.sigma2_hat == pytest.approx(0.0, abs=1e-18)
        between = np.linalg.norm(
            projector(np.hstack([design.x[:, support], design.z])) @ y
        ) ** 2 - np.linalg.norm(projector(design.x[:, support]) @ y) ** 2
        assert vc.tau2_hat == pytest.approx(between / vc.trace_term, rel=1e-8)

    def test_confounded_random_effects(self):
        """Selected fixed effects that span the z columns leave no
        random-effect energy: explicit confounding error."""
        rng = np.random.default_rng(6)
        n_groups, n_per = 3, 4
        n = n_groups * n_per
        raw_x = rng.standard_normal((n, 6))
        # copy the (unstandardized) intercept blocks into x columns 0..2
        gids = np.repeat(np.arange(n_groups), n_per)
        for g in range(n_groups):
            raw_x[:, g] = (gids == g).astype(float) + 1e-13 * rng.standard_normal(n)
        design = build_design(raw_x, np.ones(n), gids)
        design = simulate_response(design, np.zeros(6), 1.0, 1.0, seed=7)
        with pytest.raises(ConfoundedRandomEffectsError):
            henderson_m3(design, np.array([0, 1, 2]))

    def test_support_permutation_invariance(self):
        design = make_design(n_groups=8, n_per_group=5, p=15, seed=8)
        design = simulate_response(design, np.zeros(15), 0.5, 1.0, seed=9)
        support = np.array([2, 7, 11, 3])
        a = henderson_m3(design, support)
        b = henderson_m3(design, support[::-1])
        assert a.sigma2_hat == pytest.approx(b.sigma2_hat, rel=1e-10)
        assert a.tau2_hat == pytest.approx(b.tau2_hat, rel=1e-10)

    def test_projector_difference_psd(self):
        design = make_design(n_groups=5, n_per_group=4, p=10, seed=10)
        support = np.array([1, 4])
        p_small = projector(design.x[:, support])
        p_big = projector(np.hstack([design.x[:, support], design.z]))
        eigs = np.linalg.eigvalsh(p_big - p_small)
        assert eigs.min() >= -1e-10

    def test_unbiased_at_desk_scale(self):
        """Means over 200 replicates land near the truth (the full
        1000-replicate check lives in the acceptance suite)."""
        design = make_design(n_groups=30, n_per_group=5, p=20, seed=11)
        beta = np.zeros(20)
        beta[:2] = [1.0, -1.0]
        support = np.array([0, 1])
        rng = np.random.default_rng(12)
        sig, tau = [], []
        for _ in range(200):
            ups = rng.standard_normal(design.z.shape[1]) * 1.0
            eps = rng.standard_normal(design.n_obs) * 0.5
            y = design.x @ beta + design.z @ ups + eps
            vc = henderson_m3(design.with_response(y), support)
            sig.append(vc.sigma2_hat)
            tau.append(vc.tau2_hat)
        assert abs(np.mean(sig) - 0.25) <= 0.025
        assert abs(np.mean(tau) - 1.0) <= 0.10

    def test_tau2_plugin_truncates(self):
        from lmmridge import VarianceComponents

        vc = VarianceComponents(
            sigma2_hat=0.5, tau2_hat=-0.2, rank_xtilde=10, rank_xs=3, trace_term=5.0
        )
        assert vc.tau2_plugin == 0.0
        assert vc.tau2_hat == -0.2
