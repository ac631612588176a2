"""Sparse-regression machinery for the screening stage.

Lasso by cyclic coordinate descent, the scaled lasso for an initial
noise estimate, the tuning rule converting that estimate into the
screening penalty, and the restricted OLS initial estimator.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from ._kernels import cd_lasso
from .design import GroupedDesign
from .errors import (
    ConvergenceError,
    DataError,
    DegenerateFitError,
)

# Convergence: max coefficient change per sweep, on the standardized scale.
CD_TOL = 1e-9
CD_MAX_SWEEPS = 100_000
KKT_TOL = 1e-8


@dataclass(frozen=True)
class ScreeningResult:
    """Output of the lasso screening stage.

    ``support_hat`` is exactly the nonzero pattern of ``beta_lasso``;
    its size never exceeds ``n_obs``.
    """

    beta_lasso: np.ndarray
    lambda_l: float
    sigma_scaled: float
    rho_z: float
    n_obs: int

    def __post_init__(self):
        object.__setattr__(
            self, "beta_lasso", np.asarray(self.beta_lasso, dtype=float)
        )
        if self.lambda_l < 0 or self.sigma_scaled < 0:
            raise ValueError("lambda_l and sigma_scaled must be nonnegative")
        if self.support_hat.size > self.n_obs:
            raise ValueError(
                f"lasso support has {self.support_hat.size} entries, more than "
                f"N={self.n_obs}; the solution is not a valid lasso minimizer"
            )

    @property
    def support_hat(self) -> np.ndarray:
        return np.flatnonzero(self.beta_lasso)


@dataclass(frozen=True)
class InitialEstimate:
    """Restricted OLS fit; exactly zero off the screened support."""

    beta_init: np.ndarray
    support: np.ndarray


def lasso(
    design: GroupedDesign,
    lam: float,
    beta0: Optional[np.ndarray] = None,
    order: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Minimize ``||y - X b||^2 / N + 2 lam ||b||_1`` by coordinate descent.

    Args:
        design: Standardized grouped design carrying a response.
        lam: Penalty level, > 0.
        beta0: Optional warm start (copied, not modified).
        order: Optional coordinate-visit permutation; the solution is
            order-invariant up to the convergence tolerance.

    Returns:
        The minimizer. The KKT conditions hold at the returned point to
        within ``KKT_TOL``.

    Raises:
        ConvergenceError: Sweep budget exhausted; the error carries the
            last iterate and its KKT residual.
    """
    if lam <= 0:
        raise ValueError(f"lasso penalty must be > 0, got {lam}")
    y = design.require_response()
    x = np.asfortranarray(design.x)
    n, p = x.shape
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    if order is None:
        order = np.arange(p)
    else:
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(p)):
            raise ValueError("order must be a permutation of range(p)")
    colnorm2_over_n = np.einsum("ij,ij->j", x, x) / n
    sweeps, max_delta = cd_lasso(
        x, y, float(lam), beta, colnorm2_over_n, order, CD_MAX_SWEEPS, CD_TOL
    )
    if max_delta > CD_TOL:
        grad = x.T @ (y - x @ beta) / n
        raise ConvergenceError(
            f"coordinate descent did not converge within {CD_MAX_SWEEPS} sweeps "
            f"(last max coefficient change {max_delta:.3e})",
            beta=beta,
            kkt_residual=float(np.max(np.abs(grad)) - lam),
        )
    return beta


def lasso_kkt_gap(design: GroupedDesign, beta: np.ndarray, lam: float) -> tuple:
    """KKT audit for a lasso candidate solution.

    Returns ``(inactive_gap, active_gap)``: the worst violation of
    |x_j'(y - X b)/N| <= lam off the support, and of
    x_j'(y - X b)/N = lam * sign(b_j) on the support. Both are <= 0
    up to tolerance at an exact solution.
    """
    y = design.require_response()
    x = design.x
    grad = x.T @ (y - x @ beta) / design.n_obs
    active = beta != 0
    inactive_gap = float(np.max(np.abs(grad[~active]), initial=0.0) - lam)
    active_gap = float(
        np.max(np.abs(grad[active] - lam * np.sign(beta[active])), initial=0.0)
    )
    return inactive_gap, active_gap


def scaled_lasso(
    design: GroupedDesign,
    lambda_univ: float,
    max_iter: int = 500,
    rel_tol: float = 1e-6,
) -> tuple[np.ndarray, float]:
    """Joint noise-level / coefficient estimate via the scaled lasso.

    Alternates a lasso solve at penalty ``sigma * lambda_univ`` with the
    noise update ``sigma <- ||y - X b|| / sqrt(N)`` until the relative
    change in sigma is below ``rel_tol``; this is a stationary point of
        ||y - X b||^2 / (2 N sigma) + sigma / 2 + lambda_univ ||b||_1.

    Returns:
        (beta, sigma_scaled). At convergence sigma_scaled equals the
        residual RMS at beta up to ``rel_tol``.

    Raises:
        DegenerateFitError: sigma collapsed below 1e-8 of the response
            RMS (the response is explained to machine precision).
        ConvergenceError: The alternation failed to settle.
    """
    if lambda_univ <= 0:
        raise ValueError(f"lambda_univ must be > 0, got {lambda_univ}")
    y = design.require_response()
    n = design.n_obs
    y_rms = float(np.linalg.norm(y)) / math.sqrt(n)
    if y_rms == 0.0:
        raise DataError("scaled lasso needs a response that is not identically zero")
    floor = 1e-8 * y_rms

    sigma = y_rms
    beta = np.zeros(design.p)
    for _ in range(max_iter):
        beta = lasso(design, sigma * lambda_univ, beta0=beta)
        sigma_new = float(np.linalg.norm(y - design.x @ beta)) / math.sqrt(n)
        if sigma_new < floor:
            raise DegenerateFitError(
                f"scaled-lasso noise estimate collapsed to {sigma_new:.3e} "
                f"(below 1e-8 of the response RMS {y_rms:.3e})"
            )
        if abs(sigma_new - sigma) <= rel_tol * sigma:
            return beta, sigma_new
        sigma = sigma_new
    raise ConvergenceError(
        f"scaled lasso did not reach a fixed point in {max_iter} alternations",
        beta=beta,
    )


def universal_lambda(design: GroupedDesign) -> float:
    """The dimension-driven base penalty sqrt(2 log p / N)."""
    return math.sqrt(2.0 * math.log(design.p) / design.n_obs)


def select_lambda_l(design: GroupedDesign, sigma_scaled: float) -> tuple[float, float]:
    """Screening penalty from the scaled-lasso noise estimate.

    The spectral adjustment
        rho_z = sqrt( nu_max(Z'Z) / (tr(Z'Z) / N) )
    converts the average noise level into the worst-case level across
    the random-effect directions; the returned penalty is
    ``sigma_scaled * sqrt(2 log p / N) * rho_z``.

    ``nu_max(Z'Z)`` is computed from the M per-group q x q blocks of
    the block-diagonal Z'Z, never from an N-dimensional eigenproblem.

    Returns:
        (lambda_l, rho_z). A zero ``sigma_scaled`` yields lambda_l = 0,
        which downstream fitting rejects; callers must guard.
    """
    if sigma_scaled < 0:
        raise ValueError(f"sigma_scaled must be >= 0, got {sigma_scaled}")
    z = design.z
    trace = float(np.einsum("ij,ij->", z, z))
    if trace <= 0:
        raise DegenerateFitError("random-effect design is identically zero")
    q = design.q
    offsets = design.group_offsets
    nu_max = 0.0
    for g in range(design.m_groups):
        rows = slice(offsets[g], offsets[g + 1])
        zg = z[rows, g * q : (g + 1) * q]
        gram = zg.T @ zg
        top = float(np.linalg.eigvalsh(gram)[-1])
        nu_max = max(nu_max, top)
    rho_z = math.sqrt(nu_max / (trace / design.n_obs))
    return sigma_scaled * universal_lambda(design) * rho_z, rho_z


def theoretical_lambda_l(
    design: GroupedDesign,
    sigma_star2: float,
    tau_star2: float,
    xi: float,
    eps: float,
) -> float:
    """Oracle screening penalty from the true variance components.

    Simulation-only: uses ground truth. For ragged groups the group
    size entering the bound is the largest one (the worst-case noise
    level grows with the group size).
    """
    if xi <= 1:
        raise ValueError(f"xi must be > 1, got {xi}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if sigma_star2 <= 0 or tau_star2 < 0:
        raise ValueError("variance components must satisfy sigma2 > 0, tau2 >= 0")
    n_max = int(design.group_sizes.max())
    p = design.p
    n = design.n_obs
    level = sigma_star2 + tau_star2 * design.q * n_max
    return ((xi + 1.0) / (xi - 1.0)) * math.sqrt(
        2.0 * level * (math.log(p) - math.log(eps / 2.0)) / n
    )


def ols_on_support(design: GroupedDesign, support: np.ndarray) -> InitialEstimate:
    """Least-squares fit restricted to the given support, zero elsewhere.

    Uses a rank-revealing (pivoted QR) factorization; a rank-deficient
    restricted design is an error naming the collinear columns rather
    than a silent pseudo-inverse, since downstream slack constants
    assume a well-conditioned restricted model.
    """
    y = design.require_response()
    support = np.asarray(support, dtype=int)
    if support.size == 0:
        return InitialEstimate(beta_init=np.zeros(design.p), support=support)
    if support.size > design.n_obs:
        raise DataError(
            f"support size {support.size} exceeds the number of observations "
            f"{design.n_obs}"
        )
    xs = design.x[:, support]
    q_fac, r_fac, piv = scipy.linalg.qr(xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_fac))
    rank = int(np.sum(diag > 1e-10 * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < support.size:
        collinear = sorted(int(support[piv[k]]) for k in range(rank, support.size))
        raise DegenerateFitError(
            "restricted design is rank-deficient; collinear columns: "
            f"{collinear}"
        )
    coef = scipy.linalg.solve_triangular(r_fac, q_fac.T @ y)
    beta = np.zeros(design.p)
    beta[support[piv]] = coef
    return InitialEstimate(beta_init=beta, support=support)
