"""Sparse-regression machinery: lasso, scaled lasso, tuning, restricted OLS."""

import math

import numpy as np
import pytest

from lmmridge import (
    DegenerateFitError,
    build_design,
    lasso,
    lasso_kkt_gap,
    ols_on_support,
    scaled_lasso,
    select_lambda_l,
    theoretical_lambda_l,
    universal_lambda,
)
from lmmridge.solvers import ScreeningResult

from tests.helpers import make_design, simulate_response


def _soft(v, lam):
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def make_orthogonal_design(n=24, p=6, seed=0, q_groups=4):
    """Design whose standardized X has exactly orthogonal columns
    (X'X = N I), with a random-intercept z."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, p))
    q_mat, _ = np.linalg.qr(a)
    raw_x = q_mat[:, :p]  # orthonormal columns; build_design rescales
    gids = np.repeat(np.arange(q_groups), n // q_groups)
    return build_design(raw_x, np.ones(n), gids)


class TestLasso:
    def test_null_solution_above_threshold(self):
        design = make_design(n_groups=5, n_per_group=4, p=8, seed=1)
        design = simulate_response(design, np.zeros(8), 1.0, 0.5, seed=2)
        y = design.y
        lam_max = np.max(np.abs(design.x.T @ y / design.n_obs))
        beta = lasso(design, lam_max * 1.0001)
        np.testing.assert_array_equal(beta, np.zeros(8))

    def test_orthogonal_design_soft_threshold(self):
        design = make_orthogonal_design(seed=3)
        beta_true = np.array([2.0, -1.5, 0.0, 0.0, 0.7, 0.0])
        design = simulate_response(design, beta_true, 0.3, 0.2, seed=4)
        lam = 0.25
        beta = lasso(design, lam)
        expected = _soft(design.x.T @ design.y / design.n_obs, lam)
        np.testing.assert_allclose(beta, expected, atol=1e-8)

    def test_order_invariance_and_kkt(self):
        """Two coordinate orders agree in objective to 1e-8 and both
        pass the KKT audit (the stated oracle for the solver)."""
        rng = np.random.default_rng(5)
        design = make_design(n_groups=5, n_per_group=4, p=8, seed=5)
        beta_true = np.zeros(8)
        beta_true[:3] = [1.0, -2.0, 0.5]
        design = simulate_response(design, beta_true, 0.5, 0.3, seed=6)
        lam = 0.3
        beta_fwd = lasso(design, lam)
        beta_perm = lasso(design, lam, order=rng.permutation(8))

        def objective(b):
            r = design.y - design.x @ b
            return (r @ r) / design.n_obs + 2 * lam * np.abs(b).sum()

        assert abs(objective(beta_fwd) - objective(beta_perm)) <= 1e-8
        for beta in (beta_fwd, beta_perm):
            inactive_gap, active_gap = lasso_kkt_gap(design, beta, lam)
            assert inactive_gap <= 1e-8
            assert active_gap <= 1e-8

    def test_invalid_penalty(self):
        design = make_design(seed=7)
        design = simulate_response(design, np.zeros(design.p), 1.0, 1.0, seed=7)
        with pytest.raises(ValueError):
            lasso(design, 0.0)


class TestScaledLasso:
    def test_scale_equivariance_exact(self):
        """Scaling y by a power of two scales sigma exactly (identical
        floating-point iterate path)."""
        design = make_design(n_groups=6, n_per_group=5, p=10, seed=8)
        beta_true = np.zeros(10)
        beta_true[0] = 1.5
        design = simulate_response(design, beta_true, 0.5, 1.0, seed=9)
        lam_univ = universal_lambda(design)
        beta1, sigma1 = scaled_lasso(design, lam_univ)
        scaled = design.with_response(4.0 * design.y)
        beta4, sigma4 = scaled_lasso(scaled, lam_univ)
        assert sigma4 == 4.0 * sigma1
        np.testing.assert_array_equal(beta4, 4.0 * beta1)

    def test_fixed_point_identity(self):
        design = make_design(n_groups=6, n_per_group=5, p=10, seed=10)
        design = simulate_response(design, np.zeros(10), 1.0, 0.5, seed=11)
        beta, sigma = scaled_lasso(design, universal_lambda(design))
        resid_rms = np.linalg.norm(design.y - design.x @ beta) / math.sqrt(
            design.n_obs
        )
        assert abs(sigma - resid_rms) <= 1e-6 * sigma

    def test_pure_noise_monte_carlo(self):
        """Mean noise estimate within 15% of 1 under y ~ N(0, I)."""
        rng = np.random.default_rng(12)
        n, p = 200, 50
        lam_univ = math.sqrt(2 * math.log(p) / n)
        gids = np.repeat(np.arange(20), 10)
        estimates = []
        for _ in range(200):
            design = build_design(
                rng.standard_normal((n, p)), np.ones(n), gids
            ).with_response(rng.standard_normal(n))
            _, sigma = scaled_lasso(design, lam_univ)
            estimates.append(sigma)
        assert abs(np.mean(estimates) - 1.0) <= 0.15

    def test_degenerate_response_rejected(self):
        design = make_design(n_groups=4, n_per_group=4, p=6, seed=13)
        with pytest.raises(Exception):
            scaled_lasso(design.with_response(np.zeros(16)), 0.5)


class TestSelectLambdaL:
    def test_random_intercept_rho_z(self):
        """Uniform groups of size n give Z'Z = n I, so rho_z = sqrt(n)."""
        design = make_design(n_groups=5, n_per_group=6, p=8, seed=14)
        lam, rho_z = select_lambda_l(design, 1.0)
        assert rho_z == pytest.approx(math.sqrt(6.0), abs=1e-12)
        assert lam == pytest.approx(universal_lambda(design) * rho_z, abs=1e-12)

    def test_zero_sigma_flagged(self):
        design = make_design(seed=15)
        lam, rho_z = select_lambda_l(design, 0.0)
        assert lam == 0.0
        assert rho_z > 0

    def test_dense_spectral_oracle(self):
        """rho_z recomputed by a dense eigendecomposition of Z'Z."""
        design = make_design(
            n_groups=25, n_per_group=6, p=300, q=1, seed=16, random_intercept=False
        )
        _, rho_z = select_lambda_l(design, 1.0)
        ztz = design.z.T @ design.z
        nu_max = np.linalg.eigvalsh(ztz)[-1]
        oracle = math.sqrt(nu_max / (np.trace(ztz) / design.n_obs))
        assert rho_z == pytest.approx(oracle, abs=1e-10)


class TestTheoreticalLambdaL:
    def test_hand_arithmetic_tau_zero(self):
        design = make_design(n_groups=5, n_per_group=6, p=8, seed=17)
        value = theoretical_lambda_l(design, 0.25, 0.0, xi=3.0, eps=2.0 / 8)
        # (xi+1)/(xi-1) = 2; log p - log(eps/2) = 2 log p
        expected = 2.0 * math.sqrt(2 * 0.25 * 2 * math.log(8) / design.n_obs)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_duplicate_arithmetic_oracle(self):
        design = make_design(n_groups=25, n_per_group=6, p=300, seed=18)
        value = theoretical_lambda_l(design, 0.25, 1.0, xi=2.0, eps=0.05)
        expected = ((2 + 1) / (2 - 1)) * math.sqrt(
            2 * (0.25 + 1.0 * 1 * 6) * (math.log(300) - math.log(0.025)) / 150
        )
        assert value == pytest.approx(expected, rel=1e-12)

    def test_monotonicity(self):
        base = make_design(n_groups=10, n_per_group=6, p=50, seed=19)
        taus = [0.0, 0.5, 1.0, 2.0]
        values = [theoretical_lambda_l(base, 0.25, t, 2.0, 0.05) for t in taus]
        assert all(a < b for a, b in zip(values, values[1:]))
        bigger = make_design(n_groups=20, n_per_group=6, p=50, seed=19)
        assert theoretical_lambda_l(bigger, 0.25, 1.0, 2.0, 0.05) < values[2]

    def test_invalid_xi(self):
        design = make_design(seed=20)
        with pytest.raises(ValueError):
            theoretical_lambda_l(design, 0.25, 1.0, xi=1.0, eps=0.05)


class TestOlsOnSupport:
    def test_empty_support(self):
        design = make_design(seed=21)
        design = simulate_response(design, np.zeros(design.p), 1.0, 1.0, seed=21)
        init = ols_on_support(design, np.array([], dtype=int))
        np.testing.assert_array_equal(init.beta_init, np.zeros(design.p))

    def test_orthogonal_projection(self):
        design = make_orthogonal_design(seed=22)
        beta_true = np.array([1.0, 0.0, -2.0, 0.0, 0.0, 0.0])
        design = simulate_response(design, beta_true, 0.4, 0.3, seed=23)
        support = np.array([0, 2])
        init = ols_on_support(design, support)
        expected = design.x[:, support].T @ design.y / design.n_obs
        np.testing.assert_allclose(init.beta_init[support], expected, atol=1e-10)

    def test_normal_equations_oracle(self):
        design = make_design(n_groups=4, n_per_group=3, p=8, seed=24)
        design = simulate_response(design, np.zeros(8), 1.0, 0.5, seed=25)
        support = np.array([1, 4, 6])
        init = ols_on_support(design, support)
        xs = design.x[:, support]
        oracle = np.linalg.solve(xs.T @ xs, xs.T @ design.y)
        np.testing.assert_allclose(init.beta_init[support], oracle, atol=1e-10)
        off = np.setdiff1d(np.arange(8), support)
        assert np.all(init.beta_init[off] == 0.0)

    def test_residual_orthogonality(self):
        design = make_design(n_groups=6, n_per_group=5, p=12, seed=26)
        design = simulate_response(design, np.zeros(12), 1.0, 1.0, seed=27)
        support = np.array([0, 3, 7, 9])
        init = ols_on_support(design, support)
        resid = design.y - design.x @ init.beta_init
        bound = 1e-8 * np.linalg.norm(design.y) * math.sqrt(design.n_obs)
        assert np.max(np.abs(design.x[:, support].T @ resid)) <= bound

    def test_collinear_columns_named(self):
        rng = np.random.default_rng(28)
        raw_x = rng.standard_normal((12, 5))
        raw_x[:, 3] = 2.0 * raw_x[:, 1]
        design = build_design(raw_x, np.ones(12), np.repeat([0, 1, 2], 4))
        design = design.with_response(rng.standard_normal(12))
        with pytest.raises(DegenerateFitError, match=r"\[3\]|\[1\]"):
            ols_on_support(design, np.array([1, 2, 3]))


class TestScreeningResult:
    def test_support_cap_enforced(self):
        with pytest.raises(ValueError, match="not a valid lasso minimizer"):
            ScreeningResult(
                beta_lasso=np.ones(5),
                lambda_l=0.1,
                sigma_scaled=1.0,
                rho_z=1.0,
                n_obs=4,
            )

    def test_support_matches_pattern(self):
        res = ScreeningResult(
            beta_lasso=np.array([0.0, 1.2, 0.0, -0.4]),
            lambda_l=0.1,
            sigma_scaled=1.0,
            rho_z=2.0,
            n_obs=10,
        )
        np.testing.assert_array_equal(res.support_hat, [1, 3])
