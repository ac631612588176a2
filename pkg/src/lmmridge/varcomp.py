"""Moment-based variance-component estimation on the screened model.

Matches sums-of-squares reductions between the nested fits
``y ~ X_S`` and ``y ~ [X_S Z]`` to their expectations, yielding a
triangular system whose solution gives the error variance and the
random-effect variance. Both estimators are unbiased when the working
model contains the truth; the random-effect estimate can come out
negative in finite samples, so the raw value is reported alongside a
truncated-at-zero plug-in value.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .design import GroupedDesign
from .errors import ConfoundedRandomEffectsError, DegenerateFitError

# Relative singular-value threshold for numerical rank decisions.
RANK_RTOL = 1e-10


def orthonormal_basis(a: np.ndarray, rtol: float = RANK_RTOL) -> tuple[np.ndarray, int]:
    """Thin orthonormal basis of col(a) with SVD rank detection.

    Returns (Q, rank) where Q is N x rank with orthonormal columns.
    A zero (or empty) matrix yields an N x 0 basis.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], 0)), 0
    u, s, _ = scipy.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        return np.zeros((a.shape[0], 0)), 0
    rank = int(np.sum(s > rtol * s[0]))
    return u[:, :rank], rank


def projector(a: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Dense orthogonal projector onto col(a).

    Symmetric and idempotent with trace equal to rank(a); intended for
    small problems and tests. Large-N quadratic forms should go through
    ``orthonormal_basis`` instead of materializing the projector.
    """
    q, _ = orthonormal_basis(a, rtol=rtol)
    return q @ q.T


@dataclass(frozen=True)
class VarianceComponents:
    """Variance-component estimates with their provenance.

    ``tau2_hat`` is the raw moment estimate (possibly negative);
    ``tau2_plugin`` truncates it at zero for downstream covariance
    plug-ins. ``trace_term`` is the random-effect energy left after
    projecting out the selected fixed effects.
    """

    sigma2_hat: float
    tau2_hat: float
    rank_xtilde: int
    rank_xs: int
    trace_term: float

    def __post_init__(self):
        if self.sigma2_hat < 0:
            raise ValueError(f"sigma2_hat must be >= 0, got {self.sigma2_hat}")
        if not self.rank_xs <= self.rank_xtilde:
            raise ValueError("rank(X_S) cannot exceed rank([X_S Z])")
        if self.trace_term < 0:
            raise ValueError("trace_term must be nonnegative")

    @property
    def tau2_plugin(self) -> float:
        return max(0.0, self.tau2_hat)


def henderson_m3(design: GroupedDesign, support: np.ndarray) -> VarianceComponents:
    """Variance components from nested sums-of-squares reductions.

    With F = [X_S Z]:

        sigma2 = y'(I - P_F) y / (N - rank F)
        tau2   = [y'(P_F - P_{X_S}) y - sigma2 (rank F - rank X_S)]
                 / tr[Z'(I - P_{X_S}) Z]

    All quadratic forms are evaluated through thin orthonormal bases;
    no N x N projector is formed.

    Raises:
        DegenerateFitError: N - rank([X_S Z]) <= 0, so the error
            variance has no degrees of freedom.
        ConfoundedRandomEffectsError: tr[Z'(I - P_{X_S}) Z] is (near)
            zero, i.e. the random effects lie in the span of the
            selected fixed effects.
    """
    y = design.require_response()
    support = np.asarray(support, dtype=int)
    n = design.n_obs
    xs = design.x[:, support]
    z = design.z

    q_s, rank_xs = orthonormal_basis(xs)
    q_f, rank_xtilde = orthonormal_basis(np.hstack([xs, z]))

    dof = n - rank_xtilde
    if dof <= 0:
        raise DegenerateFitError(
            f"no residual degrees of freedom: N={n}, rank([X_S Z])={rank_xtilde}"
        )

    resid = y - q_f @ (q_f.T @ y)
    sigma2 = float(resid @ resid) / dof

    # tr[Z'(I - P_{X_S}) Z] = ||Z||_F^2 - ||Q_S' Z||_F^2
    trace_term = float(np.einsum("ij,ij->", z, z))
    if rank_xs > 0:
        qs_z = q_s.T @ z
        trace_term -= float(np.einsum("ij,ij->", qs_z, qs_z))
    trace_term = max(trace_term, 0.0)
    if trace_term <= 1e-10:
        raise ConfoundedRandomEffectsError(
            "random effects are confounded with the selected fixed effects: "
            "tr[Z'(I - P_{X_S}) Z] is numerically zero"
        )

    between = float(np.linalg.norm(q_f.T @ y) ** 2)
    if rank_xs > 0:
        between -= float(np.linalg.norm(q_s.T @ y) ** 2)
    tau2 = (between - sigma2 * (rank_xtilde - rank_xs)) / trace_term

    return VarianceComponents(
        sigma2_hat=sigma2,
        tau2_hat=tau2,
        rank_xtilde=rank_xtilde,
        rank_xs=rank_xs,
        trace_term=trace_term,
    )
