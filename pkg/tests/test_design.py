"""Design construction, standardization, and the marginal covariance."""

import numpy as np
import pytest

from lmmridge import (
    DataError,
    DegenerateColumnError,
    build_design,
    marginal_covariance,
)

from tests.helpers import make_design


class TestBuildDesign:
    def test_random_intercept_blocks(self):
        """Two groups of three with an all-ones z column: two length-3
        one-blocks, each column rescaled to squared norm 3."""
        rng = np.random.default_rng(0)
        raw_x = rng.standard_normal((6, 4))
        design = build_design(raw_x, np.ones(6), [0, 0, 0, 1, 1, 1])
        assert design.z.shape == (6, 2)
        expected = np.zeros((6, 2))
        expected[:3, 0] = 1.0
        expected[3:, 1] = 1.0
        np.testing.assert_allclose(design.z, expected, atol=1e-12)
        np.testing.assert_allclose((design.z**2).sum(axis=0), [3.0, 3.0])

    def test_constant_column_rejected(self):
        rng = np.random.default_rng(1)
        raw_x = rng.standard_normal((6, 4))
        raw_x[:, 2] = 7.5
        with pytest.raises(DegenerateColumnError, match="column 2"):
            build_design(raw_x, np.ones(6), [0, 0, 0, 1, 1, 1])

    def test_zero_z_block_rejected(self):
        rng = np.random.default_rng(2)
        raw_x = rng.standard_normal((6, 4))
        raw_zu = np.ones((6, 1))
        raw_zu[3:, 0] = 0.0
        with pytest.raises(DegenerateColumnError, match="group 1"):
            build_design(raw_x, raw_zu, [0, 0, 0, 1, 1, 1])

    def test_x_columns_standardized(self):
        """Recompute norms after scaling: every column has ||x_j||^2 = N."""
        rng = np.random.default_rng(3)
        raw_x = rng.standard_normal((6, 4))
        design = build_design(raw_x, np.ones(6), [0, 0, 0, 1, 1, 1])
        np.testing.assert_allclose(
            np.sum(design.x**2, axis=0), np.full(4, 6.0), atol=1e-12
        )

    def test_standardization_idempotent(self):
        design = make_design(n_groups=4, n_per_group=5, p=7, seed=5)
        gids = np.repeat(np.arange(4), 5)
        raw_zu = np.empty((design.n_obs, design.q))
        offsets = design.group_offsets
        for g in range(design.m_groups):
            rows = slice(offsets[g], offsets[g + 1])
            raw_zu[rows] = design.z[rows, g * design.q : (g + 1) * design.q]
        again = build_design(design.x, raw_zu, gids)
        np.testing.assert_allclose(again.x, design.x, atol=1e-12)
        np.testing.assert_allclose(again.z, design.z, atol=1e-12)
        np.testing.assert_allclose(again.x_scale, np.ones(design.p), atol=1e-12)

    def test_noncontiguous_groups_reordered(self):
        rng = np.random.default_rng(6)
        raw_x = rng.standard_normal((6, 3))
        y = rng.standard_normal(6)
        gids = ["a", "b", "a", "b", "a", "b"]
        design = build_design(raw_x, np.ones(6), gids, y=y)
        np.testing.assert_array_equal(design.group_sizes, [3, 3])
        # rows of group "a" (0, 2, 4) come first, in order
        expected_rows = raw_x[[0, 2, 4, 1, 3, 5]]
        np.testing.assert_allclose(
            design.x, expected_rows * design.x_scale, atol=1e-12
        )
        np.testing.assert_allclose(design.y, y[[0, 2, 4, 1, 3, 5]])

    def test_ragged_groups_supported(self):
        design = make_design(n_groups=8, n_per_group=6, p=10, seed=7, ragged=True)
        norms2 = (design.z**2).sum(axis=0)
        np.testing.assert_allclose(norms2, design.group_sizes.astype(float))

    def test_scale_recorded(self):
        rng = np.random.default_rng(8)
        raw_x = rng.standard_normal((12, 5)) * 10.0
        design = build_design(raw_x, np.ones(12), np.repeat([0, 1], 6))
        np.testing.assert_allclose(design.x, raw_x * design.x_scale, atol=1e-12)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(9)
        with pytest.raises(DataError):
            build_design(rng.standard_normal((6, 3)), np.ones(5), [0, 0, 0, 1, 1, 1])


class TestMarginalCovariance:
    def test_tau_zero_is_diagonal(self, small_design):
        cov = marginal_covariance(small_design, 0.7, 0.0)
        np.testing.assert_allclose(cov.dense(), 0.7 * np.eye(small_design.n_obs))

    def test_random_intercept_block_oracle(self):
        """Each block matches the dense sigma2 I + tau2 Z Z' product."""
        design = make_design(n_groups=2, n_per_group=3, p=4, seed=10)
        cov = marginal_covariance(design, 0.25, 1.0)
        dense_oracle = 0.25 * np.eye(6) + 1.0 * design.z @ design.z.T
        np.testing.assert_allclose(cov.dense(), dense_oracle, atol=1e-12)
        block = 0.25 * np.eye(3) + np.ones((3, 3))
        np.testing.assert_allclose(cov.blocks[0], block, atol=1e-12)

    def test_eigenvalues_floor_at_sigma2(self, small_design):
        cov = marginal_covariance(small_design, 0.3, 0.9)
        eigs = np.linalg.eigvalsh(cov.dense())
        assert eigs.min() >= 0.3 - 1e-10

    def test_cross_group_blocks_zero(self, small_design):
        dense = marginal_covariance(small_design, 0.5, 2.0).dense()
        offsets = small_design.group_offsets
        for g in range(small_design.m_groups):
            rows = slice(offsets[g], offsets[g + 1])
            off_block = dense[rows].copy()
            off_block[:, rows] = 0.0
            assert np.all(off_block == 0.0)

    def test_matvec_matches_dense(self, small_design):
        cov = marginal_covariance(small_design, 0.4, 1.3)
        rng = np.random.default_rng(11)
        v = rng.standard_normal(small_design.n_obs)
        np.testing.assert_allclose(cov.matvec(v), cov.dense() @ v, atol=1e-10)

    def test_nonpositive_sigma2_rejected(self, small_design):
        with pytest.raises(ValueError):
            marginal_covariance(small_design, 0.0, 1.0)
        with pytest.raises(ValueError):
            marginal_covariance(small_design, 1.0, -0.5)
