"""Grouped regression designs with block-diagonal random effects.

The data model: N observations split into M groups, a fixed-effect
matrix X (N x p), and a random-effect matrix Z (N x qM) that is
block-diagonal with one n_m x q block per group. Columns are
standardized so that ||x_j||^2 = N for every fixed-effect column and
||z_j||^2 equals the owning group's size for every random-effect
column (= n for uniform groups). Group sizes may be ragged.
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DegenerateColumnError

# Relative threshold below which a column is treated as constant / zero.
_DEGENERATE_RTOL = 1e-12


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroupedDesign:
    """Immutable grouped design on the standardized scale.

    Attributes:
        y: Response vector, length N (``None`` until a response is
            attached; simulation builds the design first and generates
            the response on the standardized scale).
        x: Fixed-effect matrix, N x p, columns scaled to ||x_j||^2 = N.
        z: Random-effect matrix, N x (q*M), block-diagonal; group m owns
            columns [m*q, (m+1)*q) and rows [offsets[m], offsets[m+1]).
        group_sizes: Length-M integer vector, entries >= 1 summing to N.
        q: Random effects per group.
        x_scale: Length-p multipliers taking raw columns to standardized
            ones (x_std = x_raw * x_scale). Positive.
        z_scale: Length-(q*M) multipliers for the z columns.
    """

    y: Optional[np.ndarray]
    x: np.ndarray
    z: np.ndarray
    group_sizes: np.ndarray
    q: int
    x_scale: np.ndarray
    z_scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _freeze(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "z", _freeze(np.asarray(self.z, dtype=float)))
        object.__setattr__(
            self, "group_sizes", _freeze(np.asarray(self.group_sizes, dtype=int))
        )
        object.__setattr__(self, "x_scale", _freeze(np.asarray(self.x_scale, dtype=float)))
        object.__setattr__(self, "z_scale", _freeze(np.asarray(self.z_scale, dtype=float)))
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.ndim != 1 or y.shape[0] != self.x.shape[0]:
                raise DataError(
                    f"response has shape {y.shape}, expected ({self.x.shape[0]},)"
                )
            object.__setattr__(self, "y", _freeze(y))
        self._validate()

    # -- basic dimensions ------------------------------------------------

    @property
    def n_obs(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def m_groups(self) -> int:
        return self.group_sizes.shape[0]

    @property
    def group_offsets(self) -> np.ndarray:
        """Row offsets: group m spans rows [offsets[m], offsets[m+1])."""
        return np.concatenate([[0], np.cumsum(self.group_sizes)])

    def _validate(self):
        n, p = self.x.shape
        m = self.group_sizes.shape[0]
        if m == 0 or n == 0 or p == 0:
            raise DataError("design must have at least one row, column and group")
        if np.any(self.group_sizes < 1):
            raise DataError("every group must contain at least one observation")
        if int(self.group_sizes.sum()) != n:
            raise DataError(
                f"group sizes sum to {int(self.group_sizes.sum())}, expected N={n}"
            )
        if self.q < 1:
            raise DataError(f"q must be >= 1, got {self.q}")
        if self.z.shape != (n, self.q * m):
            raise DataError(
                f"z has shape {self.z.shape}, expected ({n}, {self.q * m})"
            )
        if self.x_scale.shape != (p,) or self.z_scale.shape != (self.q * m,):
            raise DataError("scale vectors do not match design dimensions")
        # Block pattern: z must vanish outside each group's own block.
        offsets = self.group_offsets
        for g in range(m):
            rows = slice(offsets[g], offsets[g + 1])
            cols = slice(g * self.q, (g + 1) * self.q)
            outside = self.z[rows].copy()
            outside[:, cols] = 0.0
            if np.any(outside != 0.0):
                raise DataError(
                    f"z has nonzero entries outside group {g}'s diagonal block"
                )
        # Standardization invariants.
        xnorm2 = np.einsum("ij,ij->j", self.x, self.x)
        if not np.allclose(xnorm2, n, rtol=1e-8, atol=1e-8 * n):
            j = int(np.argmax(np.abs(xnorm2 - n)))
            raise DataError(
                f"x column {j} has squared norm {xnorm2[j]:.6g}, expected N={n}"
            )
        znorm2 = np.einsum("ij,ij->j", self.z, self.z)
        owner = np.repeat(self.group_sizes, self.q).astype(float)
        if not np.allclose(znorm2, owner, rtol=1e-8, atol=1e-8 * max(owner.max(), 1)):
            j = int(np.argmax(np.abs(znorm2 - owner)))
            raise DataError(
                f"z column {j} has squared norm {znorm2[j]:.6g}, expected "
                f"its group size {owner[j]:.6g}"
            )

    def with_response(self, y: np.ndarray) -> "GroupedDesign":
        """Return a copy of this design carrying the response vector ``y``."""
        return replace(self, y=np.asarray(y, dtype=float))

    def require_response(self) -> np.ndarray:
        if self.y is None:
            raise DataError("this operation needs a response; none was attached")
        return self.y


@dataclass(frozen=True)
class ModelTruth:
    """Ground truth of a simulated model (simulation only).

    ``support`` is always derived from ``beta_star``'s nonzero pattern.
    """

    beta_star: np.ndarray
    sigma_star2: float
    tau_star2: float

    def __post_init__(self):
        object.__setattr__(
            self, "beta_star", _freeze(np.asarray(self.beta_star, dtype=float))
        )
        if self.sigma_star2 <= 0:
            raise DataError(f"sigma_star2 must be > 0, got {self.sigma_star2}")
        if self.tau_star2 < 0:
            raise DataError(f"tau_star2 must be >= 0, got {self.tau_star2}")

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta_star)

    @property
    def d(self) -> int:
        return int(self.support.size)


def _contiguous_groups(group_ids: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Map arbitrary group labels to contiguous blocks.

    Returns (row_order, group_sizes): ``row_order`` is a stable
    permutation placing each group's rows together, groups ordered by
    first appearance. Already-contiguous inputs yield the identity.
    """
    ids = np.asarray(group_ids)
    if ids.ndim != 1 or ids.shape[0] == 0:
        raise DataError("group_ids must be a nonempty 1-d sequence")
    first_seen: dict = {}
    codes = np.empty(ids.shape[0], dtype=int)
    for i, g in enumerate(ids):
        key = g.item() if hasattr(g, "item") else g
        if key not in first_seen:
            first_seen[key] = len(first_seen)
        codes[i] = first_seen[key]
    order = np.argsort(codes, kind="stable")
    sizes = np.bincount(codes)
    if np.any(sizes == 0):
        raise DataError("encountered an empty group")
    return order, sizes


def build_design(
    raw_x: np.ndarray,
    raw_z_unblocked: np.ndarray,
    group_ids: Sequence,
    y: Optional[np.ndarray] = None,
) -> GroupedDesign:
    """Assemble and standardize a grouped design.

    ``raw_z_unblocked`` is the N x q row-stack of the per-group blocks;
    it is split on group boundaries and placed on the block diagonal of
    z. Columns of x are rescaled to ||x_j||^2 = N and each z column to
    squared norm equal to its group's size. Rows may arrive in any
    order; they are stably permuted so groups are contiguous (groups
    ordered by first appearance).

    Args:
        raw_x: N x p fixed-effect covariates.
        raw_z_unblocked: N x q (or length-N for q = 1) random-effect
            covariates, unblocked.
        group_ids: Length-N group labels (hashable).
        y: Optional length-N response, permuted along with the rows.

    Raises:
        DegenerateColumnError: A constant x column, or a z column that
            is identically zero within some group.
        DataError: Dimension mismatches or empty input.
    """
    raw_x = np.asarray(raw_x, dtype=float)
    raw_zu = np.asarray(raw_z_unblocked, dtype=float)
    if raw_zu.ndim == 1:
        raw_zu = raw_zu[:, None]
    if raw_x.ndim != 2 or raw_zu.ndim != 2:
        raise DataError("raw_x and raw_z_unblocked must be 2-d arrays")
    n = raw_x.shape[0]
    if raw_zu.shape[0] != n:
        raise DataError(
            f"raw_z_unblocked has {raw_zu.shape[0]} rows, expected {n}"
        )
    order, sizes = _contiguous_groups(group_ids)
    if order.shape[0] != n:
        raise DataError(f"group_ids has length {order.shape[0]}, expected {n}")

    raw_x = raw_x[order]
    raw_zu = raw_zu[order]
    if y is not None:
        y = np.asarray(y, dtype=float)[order]

    n_groups = sizes.shape[0]
    q = raw_zu.shape[1]

    # Fixed effects: reject constant columns, then scale to ||x_j||^2 = N.
    spread = raw_x.max(axis=0) - raw_x.min(axis=0)
    col_scale = np.maximum(np.abs(raw_x).max(axis=0), 1.0)
    degenerate = spread <= _DEGENERATE_RTOL * col_scale
    if np.any(degenerate):
        j = int(np.flatnonzero(degenerate)[0])
        raise DegenerateColumnError(
            f"fixed-effect column {j} is constant (zero variance); it cannot "
            "be standardized"
        )
    xnorm = np.linalg.norm(raw_x, axis=0)
    x_scale = np.sqrt(n) / xnorm
    x = raw_x * x_scale

    # Random effects: per-group blocks, each column scaled to its group size.
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    z = np.zeros((n, q * n_groups))
    z_scale = np.empty(q * n_groups)
    for g in range(n_groups):
        rows = slice(offsets[g], offsets[g + 1])
        block = raw_zu[rows]
        bnorm = np.linalg.norm(block, axis=0)
        for a in range(q):
            if bnorm[a] <= _DEGENERATE_RTOL * max(1.0, np.abs(block).max(initial=0.0)):
                raise DegenerateColumnError(
                    f"random-effect column {a} is identically zero within "
                    f"group {g}; it cannot be standardized"
                )
        scale = np.sqrt(sizes[g]) / bnorm
        z[rows, g * q : (g + 1) * q] = block * scale
        z_scale[g * q : (g + 1) * q] = scale

    return GroupedDesign(
        y=y,
        x=x,
        z=z,
        group_sizes=sizes,
        q=q,
        x_scale=x_scale,
        z_scale=z_scale,
    )


class BlockCovariance:
    """Marginal covariance V = sigma2 * I + tau2 * Z Z^T, stored per block.

    All downstream uses are block-wise, so the N x N matrix is never
    materialized; ``matvec`` applies V and ``dense`` assembles the full
    matrix for small-N checks only.
    """

    def __init__(self, design: GroupedDesign, sigma2: float, tau2: float):
        if sigma2 <= 0:
            raise ValueError(f"sigma2 must be > 0, got {sigma2}")
        if tau2 < 0:
            raise ValueError(f"tau2 must be >= 0, got {tau2}")
        self.sigma2 = float(sigma2)
        self.tau2 = float(tau2)
        self._offsets = design.group_offsets
        q = design.q
        self.blocks = []
        for g in range(design.m_groups):
            rows = slice(self._offsets[g], self._offsets[g + 1])
            zg = design.z[rows, g * q : (g + 1) * q]
            n_g = zg.shape[0]
            self.blocks.append(self.sigma2 * np.eye(n_g) + self.tau2 * (zg @ zg.T))

    @property
    def n_obs(self) -> int:
        return int(self._offsets[-1])

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        for g, block in enumerate(self.blocks):
            rows = slice(self._offsets[g], self._offsets[g + 1])
            out[rows] = block @ v[rows]
        return out

    def dense(self) -> np.ndarray:
        n = self.n_obs
        out = np.zeros((n, n))
        for g, block in enumerate(self.blocks):
            rows = slice(self._offsets[g], self._offsets[g + 1])
            out[rows, rows] = block
        return out


def marginal_covariance(
    design: GroupedDesign, sigma2: float, tau2: float
) -> BlockCovariance:
    """Marginal covariance of the response given the variance components."""
    return BlockCovariance(design, sigma2, tau2)
