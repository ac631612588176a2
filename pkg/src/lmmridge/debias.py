"""Ridge-based de-biased inference for grouped designs.

The chain: an l2-penalized fit of the standardized design, its exact
covariance under the grouped error model, a projection-bias correction
built from an initial sparse estimate, per-coordinate normalizations
and slack constants, and finally p-values and confidence intervals.

Everything runs through the economy SVD of X; neither the p x p
projector onto the row space nor the p x p covariance is ever
materialized (rows on demand, diagonals in closed form).
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg
from scipy.special import erfc, ndtri

from .design import GroupedDesign
from .errors import DegenerateFitError, PipelineError
from .solvers import (
    InitialEstimate,
    ScreeningResult,
    lasso,
    ols_on_support,
    scaled_lasso,
    select_lambda_l,
    universal_lambda,
)
from .varcomp import VarianceComponents, henderson_m3

RANK_RTOL = 1e-10
# Coordinates whose estimator variance falls below this have no usable
# noise scale (possible only for pathological designs).
OMEGA_FLOOR = 1e-14
# Coordinates whose row-space projector diagonal falls below this are
# flagged unreportable in confidence intervals.
PXT_RTOL = 1e-10
# Monte-Carlo draws are generated in fixed-size batches with one spawned
# RNG stream per batch; the batch size is part of the algorithm, so a
# given seed always yields the same estimate.
MC_CHUNK = 16384


# ---------------------------------------------------------------------------
# Ridge fit via the economy SVD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RidgeFit:
    """l2-penalized fit plus the SVD cache all downstream steps reuse.

    ``q_mat`` (N x R), ``s`` (R,) and ``gamma`` (p x R) form the economy
    singular triple of X restricted to singular values above
    ``RANK_RTOL`` times the largest.
    """

    beta_ridge: np.ndarray
    lambda_ridge: float
    q_mat: np.ndarray
    s: np.ndarray
    gamma: np.ndarray
    n_obs: int

    def __post_init__(self):
        if self.lambda_ridge <= 0:
            raise ValueError(f"ridge penalty must be > 0, got {self.lambda_ridge}")
        s = np.asarray(self.s, dtype=float)
        if s.size and (np.any(np.diff(s) > 0) or s[-1] <= RANK_RTOL * s[0]):
            raise ValueError("singular values must be descending and above cutoff")

    @property
    def rank(self) -> int:
        return int(self.s.size)

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def g_factors(self) -> np.ndarray:
        """Diagonal factors of A = (Sigma_hat + lambda I)^{-1} X' in the
        SVD basis: A = Gamma diag(g) Q' with g = N s / (s^2 + N lambda)."""
        n = self.n_obs
        return n * self.s / (self.s**2 + n * self.lambda_ridge)

    @property
    def pxt_diag(self) -> np.ndarray:
        """Diagonal of the projector onto the row space of X."""
        return np.einsum("jk,jk->j", self.gamma, self.gamma)


def ridge_fit(design: GroupedDesign, lam: float) -> RidgeFit:
    """Closed-form ridge solution through the economy SVD.

    Algebraically identical to solving (X'X/N + lam I) b = X'y/N but
    never forms a p x p system.
    """
    if lam <= 0:
        raise ValueError(f"ridge penalty must be > 0, got {lam}")
    y = design.require_response()
    n = design.n_obs
    u, s, vt = scipy.linalg.svd(design.x, full_matrices=False)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    u, s, vt = u[:, :rank], s[:rank], vt[:rank]
    beta = vt.T @ ((s / (s**2 + n * lam)) * (u.T @ y))
    return RidgeFit(
        beta_ridge=beta,
        lambda_ridge=float(lam),
        q_mat=u,
        s=s,
        gamma=vt.T,
        n_obs=n,
    )


def pxt_row(fit: RidgeFit, j: int) -> np.ndarray:
    """Row j of the row-space projector Gamma Gamma', without forming it."""
    return fit.gamma[j] @ fit.gamma.T


def omega_diag(
    fit: RidgeFit, design: GroupedDesign, sigma2: float, tau2: float
) -> np.ndarray:
    """Diagonal of the ridge estimator's covariance, scaled by N.

    With a_j the j-th row of A = (Sigma_hat + lam I)^{-1} X',

        omega_jj = (sigma2 ||a_j||^2 + tau2 ||Z' a_j||^2) / N,

    and N Var(beta_ridge_j) = omega_jj exactly under the grouped model.

    Raises:
        DegenerateFitError: Every omega_jj is numerically zero, i.e. the
            design gives the estimator no variance in any coordinate (a
            degenerate spectrum; generic designs never trigger this).
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    if tau2 < 0:
        raise ValueError(f"tau2 must be >= 0, got {tau2}")
    g = fit.g_factors
    n = fit.n_obs
    # ||a_j||^2 = sum_k gamma_jk^2 g_k^2 (Q has orthonormal columns).
    norm_a = (fit.gamma**2) @ (g**2)
    # Z'a_j = (Z'Q) diag(g) gamma_j; precompute B = (Z'Q) * g.
    b_mat = (design.z.T @ fit.q_mat) * g
    za = fit.gamma @ b_mat.T
    norm_za = np.einsum("jm,jm->j", za, za)
    omega = (sigma2 * norm_a + tau2 * norm_za) / n
    if np.all(omega < OMEGA_FLOOR):
        raise DegenerateFitError(
            "every coordinate of the estimator covariance is numerically "
            "zero; the design's singular structure leaves no coordinate "
            "with usable variance"
        )
    return omega


def kappa_from_omega(omega: np.ndarray, n_obs: int) -> np.ndarray:
    """Normalizations sqrt(N / omega_jj); zero where omega_jj is degenerate."""
    omega = np.asarray(omega, dtype=float)
    out = np.zeros_like(omega)
    ok = omega > OMEGA_FLOOR
    out[ok] = np.sqrt(n_obs / omega[ok])
    return out


def corrected_estimator(fit: RidgeFit, init: InitialEstimate) -> np.ndarray:
    """Subtract the estimated off-diagonal projection bias.

        corr_j = ridge_j - sum_{k != j} P_jk init_k

    with P the row-space projector, evaluated as Gamma (Gamma' init)
    minus the diagonal part.
    """
    b = init.beta_init
    full = fit.gamma @ (fit.gamma.T @ b)
    return fit.beta_ridge - (full - fit.pxt_diag * b)


def _max_offdiag_abs(gamma: np.ndarray, block: int = 512) -> np.ndarray:
    """max_{k != j} |P_jk| for every row j of P = Gamma Gamma', blockwise."""
    p = gamma.shape[0]
    out = np.empty(p)
    for start in range(0, p, block):
        stop = min(start + block, p)
        rows = gamma[start:stop] @ gamma.T
        np.abs(rows, out=rows)
        rows[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        out[start:stop] = rows.max(axis=1)
    return np.maximum(out, 0.0)


def c_slack(
    fit: RidgeFit, design: GroupedDesign, omega: np.ndarray, eta: float
) -> np.ndarray:
    """Slack constants bounding the unremovable initial-estimator error.

        C_j = max_{k != j} |kappa_j P_jk| * (q log p / M)^(1/2 - eta)

    Coordinates with degenerate omega_jj get C_j = +inf, which forces
    their p-value to 1 rather than dividing by a vanishing scale.
    """
    if not 0 < eta < 0.5:
        raise ValueError(f"eta must lie in (0, 1/2), got {eta}")
    kappa = kappa_from_omega(omega, fit.n_obs)
    factor = (design.q * math.log(fit.p) / design.m_groups) ** (0.5 - eta)
    out = kappa * _max_offdiag_abs(fit.gamma) * factor
    out[np.asarray(omega) <= OMEGA_FLOOR] = np.inf
    return out


# ---------------------------------------------------------------------------
# p-values and intervals
# ---------------------------------------------------------------------------


def p_single(
    beta_corr: np.ndarray, kappa: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Two-sided p-values 2(1 - Phi((kappa |corr_j| - C_j)_+)).

    Evaluated through erfc, accurate to better than 1e-12 absolute.
    """
    t = np.maximum(kappa * np.abs(beta_corr) - c, 0.0)
    return erfc(t / math.sqrt(2.0))


@dataclass(frozen=True)
class GroupTestResult:
    """Monte-Carlo group p-value with its binomial standard error."""

    p_value: float
    mc_stderr: float
    n_mc: int
    observed: float
    group: tuple


def p_group(
    fit: RidgeFit,
    design: GroupedDesign,
    sigma2: float,
    tau2: float,
    beta_corr: np.ndarray,
    kappa: np.ndarray,
    c: np.ndarray,
    group: Sequence[int],
    n_mc: int = 100_000,
    seed: Optional[int] = None,
) -> GroupTestResult:
    """Monte-Carlo p-value for the null that every coefficient in
    ``group`` is zero.

    Estimates 1 - P[ max_{j in G} (kappa_j |W_j| + C_j) <= max_{j in G}
    kappa_j |corr_j| ] by sampling W from its exact law: each draw takes
    v ~ N(0, tau2 I_{qM}) and e ~ N(0, sigma2 I_N) and sets
    W = A (Z v + e) / N restricted to G, with A the ridge influence
    matrix. Draws are generated in fixed batches with one spawned RNG
    stream per batch, so results are independent of batch execution
    order and reproducible from the seed alone.
    """
    group = np.asarray(sorted(set(int(j) for j in group)), dtype=int)
    if group.size == 0:
        raise ValueError("group must be nonempty")
    if group.min() < 0 or group.max() >= fit.p:
        raise ValueError(
            f"group indices must lie in [0, {fit.p}); got "
            f"[{group.min()}, {group.max()}]"
        )
    if n_mc < 1000:
        raise ValueError(f"n_mc must be >= 1000, got {n_mc}")
    if seed is None:
        raise ValueError("a seed is required for reproducible Monte Carlo")
    kappa_g = np.asarray(kappa, dtype=float)[group]
    c_g = np.asarray(c, dtype=float)[group]
    if np.all(kappa_g == 0.0):
        raise DegenerateFitError(
            "every coordinate in the group has zero estimator variance; "
            "the group statistic is degenerate"
        )
    observed = float(np.max(kappa_g * np.abs(np.asarray(beta_corr)[group])))

    g = fit.g_factors
    a_g = (fit.gamma[group] * g) @ fit.q_mat.T  # |G| x N
    z = design.z
    n = fit.n_obs
    qm = z.shape[1]
    sd_v = math.sqrt(tau2)
    sd_e = math.sqrt(sigma2)

    n_chunks = (n_mc + MC_CHUNK - 1) // MC_CHUNK
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    count_le = 0
    remaining = n_mc
    for child in streams:
        b = min(MC_CHUNK, remaining)
        remaining -= b
        rng = np.random.default_rng(child)
        v = rng.standard_normal((qm, b)) * sd_v
        e = rng.standard_normal((n, b)) * sd_e
        w_g = a_g @ (z @ v + e) / n
        stat = np.max(kappa_g[:, None] * np.abs(w_g) + c_g[:, None], axis=0)
        count_le += int(np.sum(stat <= observed))
    p_le = count_le / n_mc
    p_value = 1.0 - p_le
    stderr = math.sqrt(max(p_value * (1.0 - p_value), 0.0) / n_mc)
    return GroupTestResult(
        p_value=p_value,
        mc_stderr=stderr,
        n_mc=n_mc,
        observed=observed,
        group=tuple(int(j) for j in group),
    )


def confidence_intervals(
    beta_corr: np.ndarray,
    pxt_diag: np.ndarray,
    omega: np.ndarray,
    c: np.ndarray,
    alpha: float,
    n_obs: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate intervals inverting the slack-adjusted test.

    Center beta_corr_j / P_jj, half-width
    (z_{1-alpha/2} + C_j) * sqrt(omega_jj / N) / P_jj, so the interval
    excludes zero exactly when the p-value falls below alpha (same
    pivot, same slack). Coordinates with P_jj <= PXT_RTOL (or with a
    degenerate noise scale) are flagged unreportable: both bounds NaN.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    beta_corr = np.asarray(beta_corr, dtype=float)
    pxt = np.asarray(pxt_diag, dtype=float)
    omega = np.asarray(omega, dtype=float)
    c = np.asarray(c, dtype=float)
    z = float(ndtri(1.0 - alpha / 2.0))
    ok = (pxt > PXT_RTOL) & (omega > OMEGA_FLOOR)
    lower = np.full(beta_corr.shape, np.nan)
    upper = np.full(beta_corr.shape, np.nan)
    center = beta_corr[ok] / pxt[ok]
    half = (z + c[ok]) * np.sqrt(omega[ok] / n_obs) / pxt[ok]
    lower[ok] = center - half
    upper[ok] = center + half
    return lower, upper


# ---------------------------------------------------------------------------
# End-to-end pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for the end-to-end fit.

    ``ridge_lambda="auto"`` resolves to 1/N. ``lambda_l_override``
    replaces the data-driven screening penalty (used by simulations
    with oracle tuning); ``c_override`` supplies external slack
    constants (comparison mode). The seed is mandatory: it feeds any
    Monte-Carlo group tests run on the result and is recorded in
    reports.
    """

    seed: int
    alpha: float = 0.05
    eta: float = 0.005
    ridge_lambda: Union[str, float] = "auto"
    n_mc: int = 100_000
    lambda_l_override: Optional[float] = None
    c_override: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.eta < 0.5:
            raise ValueError(f"eta must lie in (0, 1/2), got {self.eta}")
        if self.n_mc < 1000:
            raise ValueError(f"n_mc must be >= 1000, got {self.n_mc}")
        if self.ridge_lambda != "auto" and float(self.ridge_lambda) <= 0:
            raise ValueError("ridge_lambda must be 'auto' or a positive number")

    def resolve_ridge_lambda(self, n_obs: int) -> float:
        if self.ridge_lambda == "auto":
            return 1.0 / n_obs
        return float(self.ridge_lambda)


@dataclass(frozen=True)
class DebiasedInference:
    """Full inference record, including every audited intermediate."""

    beta_ridge: np.ndarray
    beta_init: np.ndarray
    beta_corr: np.ndarray
    pxt_diag: np.ndarray
    omega_diag: np.ndarray
    kappa: np.ndarray
    c_slack: np.ndarray
    p_single: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    alpha: float
    eta: float
    ridge_lambda: float
    seed: int
    screening: ScreeningResult
    varcomp: VarianceComponents
    fit: RidgeFit = field(repr=False)

    def __post_init__(self):
        p = self.p_single
        if np.any((p < 0) | (p > 1)):
            raise ValueError("p-values must lie in [0, 1]")
        both = np.isfinite(self.ci_lower) & np.isfinite(self.ci_upper)
        if np.any(self.ci_lower[both] > self.ci_upper[both]):
            raise ValueError("interval lower bounds exceed upper bounds")

    @property
    def ci_reportable(self) -> np.ndarray:
        return np.isfinite(self.ci_lower)

    @property
    def estimate(self) -> np.ndarray:
        """De-biased point estimate beta_corr / P_jj (NaN where flagged)."""
        out = np.full(self.beta_corr.shape, np.nan)
        ok = self.ci_reportable
        out[ok] = self.beta_corr[ok] / self.pxt_diag[ok]
        return out

    @property
    def support_hat(self) -> np.ndarray:
        return self.screening.support_hat


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


def full_pipeline(design: GroupedDesign, config: PipelineConfig) -> DebiasedInference:
    """Screening, variance components, ridge de-biasing, tests, intervals.

    Deterministic given (design, config): the single-coefficient path
    draws no random numbers, so two runs produce bit-identical results.
    Group tests are run separately on the returned record (see
    ``p_group``), seeded from ``config.seed``.
    """
    n = design.n_obs
    lam_univ = universal_lambda(design)
    beta_sc, sigma_sc = _stage("scaled_lasso", scaled_lasso, design, lam_univ)
    lam_l_data, rho_z = _stage("select_lambda_l", select_lambda_l, design, sigma_sc)
    lam_l = (
        lam_l_data
        if config.lambda_l_override is None
        else float(config.lambda_l_override)
    )
    if lam_l <= 0:
        raise PipelineError(
            "lasso", f"screening penalty must be > 0, got {lam_l}"
        )
    beta_l = _stage("lasso", lasso, design, lam_l, beta0=beta_sc)
    screening = ScreeningResult(
        beta_lasso=beta_l,
        lambda_l=lam_l,
        sigma_scaled=sigma_sc,
        rho_z=rho_z,
        n_obs=n,
    )
    init = _stage("ols_on_support", ols_on_support, design, screening.support_hat)
    vc = _stage("henderson_m3", henderson_m3, design, screening.support_hat)
    lam_ridge = config.resolve_ridge_lambda(n)
    fit = _stage("ridge_fit", ridge_fit, design, lam_ridge)
    omega = _stage("omega_diag", omega_diag, fit, design, vc.sigma2_hat, vc.tau2_plugin)
    kappa = kappa_from_omega(omega, n)
    beta_corr = _stage("corrected_estimator", corrected_estimator, fit, init)
    if config.c_override is not None:
        c = np.asarray(config.c_override, dtype=float)
        if c.shape != (design.p,):
            raise PipelineError(
                "c_slack", f"c_override has shape {c.shape}, expected ({design.p},)"
            )
    else:
        c = _stage("c_slack", c_slack, fit, design, omega, config.eta)
    pvals = _stage("p_single", p_single, beta_corr, kappa, c)
    lower, upper = _stage(
        "confidence_intervals",
        confidence_intervals,
        beta_corr,
        fit.pxt_diag,
        omega,
        c,
        config.alpha,
        n,
    )
    return DebiasedInference(
        beta_ridge=fit.beta_ridge,
        beta_init=init.beta_init,
        beta_corr=beta_corr,
        pxt_diag=fit.pxt_diag,
        omega_diag=omega,
        kappa=kappa,
        c_slack=c,
        p_single=pvals,
        ci_lower=lower,
        ci_upper=upper,
        alpha=config.alpha,
        eta=config.eta,
        ridge_lambda=lam_ridge,
        seed=config.seed,
        screening=screening,
        varcomp=vc,
        fit=fit,
    )
