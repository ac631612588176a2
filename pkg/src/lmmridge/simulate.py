"""Simulation harness: data generation, test-error metrics, coverage.

Two design families are supported: correlated columns with geometric
decay 0.2^|j-k| across the joint fixed/random covariate block (M1) and
independent columns (M2). Replicates are driven by spawned RNG
streams, so every report is a pure function of (scenario, seed) and
aggregation is order-independent.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .debias import (
    PipelineConfig,
    c_slack,
    confidence_intervals,
    corrected_estimator,
    full_pipeline,
    omega_diag,
    p_group,
    ridge_fit,
)
from .design import GroupedDesign, ModelTruth, build_design
from .errors import (
    ConfoundedRandomEffectsError,
    ConvergenceError,
    DataError,
    DegenerateFitError,
    PipelineError,
)
from .solvers import (
    lasso,
    ols_on_support,
    scaled_lasso,
    select_lambda_l,
    theoretical_lambda_l,
    universal_lambda,
)
from .varcomp import henderson_m3

AR_DECAY = 0.2  # adjacent-column correlation in the M1 family


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    Defaults follow the benchmark setup: 25 groups of 6 observations,
    noise scale 0.5, random-effect scale 1, level 0.05. ``beta_star``
    overrides the default coefficient pattern (b on the first d
    coordinates, zero elsewhere). ``oracle_lambda`` switches the
    screening penalty to the truth-based rule (simulation only).
    """

    seed: int
    model: str = "M1"
    p: int = 300
    q: int = 1
    d: int = 5
    m_groups: int = 25
    n_per_group: int = 6
    b: float = 1.0
    sigma_star: float = 0.5
    tau_star: float = 1.0
    n_replicates: int = 200
    alpha: float = 0.05
    eta: float = 0.005
    n_mc_group: int = 10_000
    beta_star: Optional[np.ndarray] = None
    oracle_lambda: bool = False
    oracle_xi: float = 3.0

    def __post_init__(self):
        if self.model not in ("M1", "M2"):
            raise ValueError(f"model must be 'M1' or 'M2', got {self.model!r}")
        if min(self.p, self.q, self.m_groups, self.n_per_group) < 1:
            raise ValueError("all scenario dimensions must be positive")
        if not 0 <= self.d <= self.p:
            raise ValueError(f"d must lie in [0, p], got {self.d}")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.sigma_star <= 0 or self.tau_star < 0:
            raise ValueError("sigma_star must be > 0 and tau_star >= 0")
        if self.beta_star is not None:
            beta = np.asarray(self.beta_star, dtype=float)
            if beta.shape != (self.p,):
                raise ValueError(
                    f"beta_star has shape {beta.shape}, expected ({self.p},)"
                )
            object.__setattr__(self, "beta_star", beta)

    @property
    def n_obs(self) -> int:
        return self.m_groups * self.n_per_group

    def resolve_beta(self) -> np.ndarray:
        if self.beta_star is not None:
            return np.array(self.beta_star)
        beta = np.zeros(self.p)
        beta[: self.d] = self.b
        return beta


def _draw_covariates(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """N x (p+q) matrix of raw covariate rows for the chosen family.

    M1 builds the geometric correlation through a stationary AR(1)
    recursion across columns (exact, no Cholesky of the (p+q)^2
    matrix); M2 draws independent standard normals.
    """
    n = cfg.n_obs
    k = cfg.p + cfg.q
    innov = rng.standard_normal((n, k))
    if cfg.model == "M2":
        return innov
    out = np.empty((n, k))
    out[:, 0] = innov[:, 0]
    carry = math.sqrt(1.0 - AR_DECAY**2)
    for j in range(1, k):
        out[:, j] = AR_DECAY * out[:, j - 1] + carry * innov[:, j]
    return out


def generate_scenario(
    cfg: ScenarioConfig, replicate_seed
) -> tuple[GroupedDesign, ModelTruth, np.ndarray]:
    """Draw one replicate: standardized design, ground truth, response.

    The response is generated on the standardized scale:
    y = X beta* + Z v + e with v ~ N(0, tau*^2 I) per group and
    e ~ N(0, sigma*^2 I). Draw order (covariates, then v, then e) is
    fixed, so a replicate seed pins the dataset exactly.
    """
    rng = np.random.default_rng(replicate_seed)
    raw = _draw_covariates(cfg, rng)
    group_ids = np.repeat(np.arange(cfg.m_groups), cfg.n_per_group)
    design = build_design(raw[:, : cfg.p], raw[:, cfg.p :], group_ids)
    beta = cfg.resolve_beta()
    upsilon = rng.standard_normal(cfg.q * cfg.m_groups) * cfg.tau_star
    eps = rng.standard_normal(cfg.n_obs) * cfg.sigma_star
    y = design.x @ beta + design.z @ upsilon + eps
    truth = ModelTruth(
        beta_star=beta,
        sigma_star2=cfg.sigma_star**2,
        tau_star2=cfg.tau_star**2,
    )
    return design.with_response(y), truth, y


def _pipeline_config(cfg: ScenarioConfig, design: GroupedDesign) -> PipelineConfig:
    override = None
    if cfg.oracle_lambda:
        override = theoretical_lambda_l(
            design,
            cfg.sigma_star**2,
            cfg.tau_star**2,
            xi=cfg.oracle_xi,
            eps=2.0 / cfg.p,
        )
    return PipelineConfig(
        seed=cfg.seed,
        alpha=cfg.alpha,
        eta=cfg.eta,
        n_mc=max(cfg.n_mc_group, 1000),
        lambda_l_override=override,
    )


@dataclass(frozen=True)
class SimulationReport:
    """Aggregated metrics over replicates; unset sections are None.

    Rates are averaged the benchmark way: type-I over off-support
    coordinates, power over support coordinates, both then averaged
    over replicates. Standard errors treat replicate-level averages as
    i.i.d. (which they are).
    """

    seed: int
    n_replicates: int
    n_failed: int
    avg_type1: Optional[float] = None
    avg_type1_stderr: Optional[float] = None
    avg_power: Optional[float] = None
    avg_power_stderr: Optional[float] = None
    group_type1: Optional[float] = None
    group_type1_stderr: Optional[float] = None
    group_power: Optional[float] = None
    group_power_stderr: Optional[float] = None
    coverage: Optional[np.ndarray] = None
    coverage_stderr: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("avg_type1", "avg_power", "group_type1", "group_power"):
            value = getattr(self, name)
            if value is not None and not (
                math.isnan(value) or 0.0 <= value <= 1.0
            ):
                raise ValueError(f"{name}={value} lies outside [0, 1]")


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan")
    mean = float(values.mean())
    if values.size == 1:
        return mean, float("nan")
    return mean, float(values.std(ddof=1) / math.sqrt(values.size))


def run_single_tests(cfg: ScenarioConfig) -> SimulationReport:
    """Rejection-rate and coverage metrics for per-coefficient tests."""
    root = np.random.SeedSequence(cfg.seed)
    rep_streams = root.spawn(cfg.n_replicates)
    beta = cfg.resolve_beta()
    support = np.flatnonzero(beta)
    off = np.flatnonzero(beta == 0)

    type1_rates, power_rates = [], []
    cover_counts = np.zeros(cfg.p)
    report_counts = np.zeros(cfg.p)
    n_failed = 0
    for stream in rep_streams:
        sub = stream.spawn(2)
        design, truth, _ = generate_scenario(cfg, sub[0])
        try:
            inf = full_pipeline(design, _pipeline_config(cfg, design))
        except PipelineError:
            n_failed += 1
            continue
        reject = inf.p_single <= cfg.alpha
        if off.size:
            type1_rates.append(reject[off].mean())
        if support.size:
            power_rates.append(reject[support].mean())
        ok = inf.ci_reportable
        covered = ok & (inf.ci_lower <= beta) & (beta <= inf.ci_upper)
        cover_counts += covered
        report_counts += ok

    avg_type1, t1_se = _mean_stderr(np.array(type1_rates))
    avg_power, pw_se = _mean_stderr(np.array(power_rates))
    with np.errstate(invalid="ignore", divide="ignore"):
        coverage = np.where(report_counts > 0, cover_counts / report_counts, np.nan)
        coverage_se = np.sqrt(
            np.clip(coverage * (1.0 - coverage), 0.0, None)
            / np.maximum(report_counts, 1)
        )
    return SimulationReport(
        seed=cfg.seed,
        n_replicates=cfg.n_replicates,
        n_failed=n_failed,
        avg_type1=avg_type1 if off.size else None,
        avg_type1_stderr=t1_se if off.size else None,
        avg_power=avg_power if support.size else None,
        avg_power_stderr=pw_se if support.size else None,
        coverage=coverage,
        coverage_stderr=coverage_se,
    )


def default_test_groups(p: int) -> tuple[np.ndarray, np.ndarray]:
    """The benchmark group pair: indices 0..99 (holds every signal when
    d <= 100, so its null is false) and 100..199 (a true null)."""
    if p < 200:
        raise ValueError(
            f"the default group pair needs p >= 200, got p={p}; pass explicit groups"
        )
    return np.arange(100), np.arange(100, 200)


def run_group_tests(
    cfg: ScenarioConfig,
    groups: Optional[tuple[Sequence[int], Sequence[int]]] = None,
) -> SimulationReport:
    """Rejection rates for the (false-null, true-null) group pair.

    ``groups`` overrides the default pair as (false_null_group,
    true_null_group); power is the rejection rate of the first, type-I
    error the rejection rate of the second.
    """
    if groups is None:
        g_false, g_true = default_test_groups(cfg.p)
    else:
        g_false, g_true = (np.asarray(g, dtype=int) for g in groups)
        if g_false.size == 0 or g_true.size == 0:
            raise ValueError("both groups must be nonempty")
        for g in (g_false, g_true):
            if g.min() < 0 or g.max() >= cfg.p:
                raise ValueError("group indices out of range")

    root = np.random.SeedSequence(cfg.seed)
    rep_streams = root.spawn(cfg.n_replicates)
    rej_false, rej_true = [], []
    n_failed = 0
    for stream in rep_streams:
        sub = stream.spawn(3)
        design, truth, _ = generate_scenario(cfg, sub[0])
        try:
            inf = full_pipeline(design, _pipeline_config(cfg, design))
        except PipelineError:
            n_failed += 1
            continue
        results = []
        for g, mc_seed in ((g_false, sub[1]), (g_true, sub[2])):
            res = p_group(
                inf.fit,
                design,
                inf.varcomp.sigma2_hat,
                inf.varcomp.tau2_plugin,
                inf.beta_corr,
                inf.kappa,
                inf.c_slack,
                g,
                n_mc=cfg.n_mc_group,
                seed=mc_seed,
            )
            results.append(res.p_value <= cfg.alpha)
        rej_false.append(results[0])
        rej_true.append(results[1])

    power, power_se = _mean_stderr(np.array(rej_false, dtype=float))
    type1, type1_se = _mean_stderr(np.array(rej_true, dtype=float))
    return SimulationReport(
        seed=cfg.seed,
        n_replicates=cfg.n_replicates,
        n_failed=n_failed,
        group_power=power,
        group_power_stderr=power_se,
        group_type1=type1,
        group_type1_stderr=type1_se,
    )


# ---------------------------------------------------------------------------
# Coverage comparison against the independence-model baseline
# ---------------------------------------------------------------------------

COMPARISON_SIGNALS = np.array([0.05, 2.0, 4.0, 3.0, 0.1])
# Signal positions whose coverage gap is aggregated (the three strong ones).
STRONG_SIGNAL_IDX = np.array([1, 2, 3])


def comparison_beta(p: int) -> np.ndarray:
    beta = np.zeros(p)
    beta[: COMPARISON_SIGNALS.size] = COMPARISON_SIGNALS
    return beta


@dataclass(frozen=True)
class ComparisonReport:
    """Coverage of our intervals vs a baseline that ignores grouping.

    The baseline keeps the identical de-biased estimator and slack
    constants but plugs in an independence covariance model: noise
    variance from the scaled lasso, random-effect variance zero.
    ``signal_gap`` is the paired mean coverage advantage on the strong
    signal coordinates; ``conclusive`` states whether it exceeds one
    aggregated Monte-Carlo standard error.
    """

    seed: int
    n_replicates: int
    n_failed: int
    beta_star: np.ndarray
    coverage_ours: np.ndarray
    coverage_baseline: np.ndarray
    coverage_ours_stderr: np.ndarray
    coverage_baseline_stderr: np.ndarray
    signal_gap: float
    signal_gap_stderr: float

    @property
    def conclusive(self) -> bool:
        return bool(self.signal_gap >= self.signal_gap_stderr)


def run_comparison(cfg: ScenarioConfig) -> ComparisonReport:
    """Coverage table for our method and the tau2 = 0 baseline.

    One screening pass is shared per replicate (identical support,
    initial estimator, correction and slack constants); the two methods
    differ only in the covariance plug-in used for interval widths, so
    the comparison isolates whether modeling within-group correlation
    matters.
    """
    if cfg.q != 1 or cfg.model != "M1":
        raise ValueError("the comparison scenario uses model M1 with q = 1")
    beta = cfg.beta_star if cfg.beta_star is not None else comparison_beta(cfg.p)
    if beta.shape != (cfg.p,):
        raise ValueError("beta_star does not match p")
    cfg = replace(cfg, beta_star=beta)

    root = np.random.SeedSequence(cfg.seed)
    rep_streams = root.spawn(cfg.n_replicates)
    n = cfg.n_obs
    cover_ours = np.zeros(cfg.p)
    cover_base = np.zeros(cfg.p)
    counts = 0
    gaps = []
    n_failed = 0
    for stream in rep_streams:
        sub = stream.spawn(2)
        design, truth, y = generate_scenario(cfg, sub[0])
        try:
            beta_sc, sigma_sc = scaled_lasso(design, universal_lambda(design))
            lam_l, _ = select_lambda_l(design, sigma_sc)
            beta_l = lasso(design, lam_l, beta0=beta_sc)
            support = np.flatnonzero(beta_l)
            init = ols_on_support(design, support)
            vc = henderson_m3(design, support)
            fit = ridge_fit(design, 1.0 / n)
            bc = corrected_estimator(fit, init)
            omega_ours = omega_diag(fit, design, vc.sigma2_hat, vc.tau2_plugin)
            c = c_slack(fit, design, omega_ours, cfg.eta)
            lo_o, hi_o = confidence_intervals(
                bc, fit.pxt_diag, omega_ours, c, cfg.alpha, n
            )
            omega_base = omega_diag(fit, design, sigma_sc**2, 0.0)
            lo_b, hi_b = confidence_intervals(
                bc, fit.pxt_diag, omega_base, c, cfg.alpha, n
            )
        except (
            ConfoundedRandomEffectsError,
            ConvergenceError,
            DataError,
            DegenerateFitError,
        ):
            n_failed += 1
            continue
        ok_o = np.isfinite(lo_o)
        ok_b = np.isfinite(lo_b)
        cov_o = ok_o & (lo_o <= beta) & (beta <= hi_o)
        cov_b = ok_b & (lo_b <= beta) & (beta <= hi_b)
        cover_ours += cov_o
        cover_base += cov_b
        counts += 1
        gaps.append(
            cov_o[STRONG_SIGNAL_IDX].mean() - cov_b[STRONG_SIGNAL_IDX].mean()
        )

    denom = max(counts, 1)
    coverage_ours = cover_ours / denom
    coverage_base = cover_base / denom
    se_o = np.sqrt(np.clip(coverage_ours * (1 - coverage_ours), 0, None) / denom)
    se_b = np.sqrt(np.clip(coverage_base * (1 - coverage_base), 0, None) / denom)
    gap, gap_se = _mean_stderr(np.array(gaps))
    return ComparisonReport(
        seed=cfg.seed,
        n_replicates=cfg.n_replicates,
        n_failed=n_failed,
        beta_star=beta,
        coverage_ours=coverage_ours,
        coverage_baseline=coverage_base,
        coverage_ours_stderr=se_o,
        coverage_baseline_stderr=se_b,
        signal_gap=gap,
        signal_gap_stderr=gap_se,
    )


# ---------------------------------------------------------------------------
# Scenario grids and long-format emission
# ---------------------------------------------------------------------------


def benchmark_grid(model: str, seed: int, n_replicates: int = 200) -> list:
    """The 16-scenario grid per model: p in {300, 600}, q in {1, 2},
    b in {0.5, 1}, d in {5, 10}, with 25 groups of 6."""
    combos = [
        (p, q, b, d)
        for p in (300, 600)
        for q in (1, 2)
        for b in (0.5, 1.0)
        for d in (5, 10)
    ]
    streams = np.random.SeedSequence(seed).spawn(len(combos))
    out = []
    for (p, q, b, d), stream in zip(combos, streams):
        out.append(
            ScenarioConfig(
                seed=int(stream.generate_state(1)[0]),
                model=model,
                p=p,
                q=q,
                b=b,
                d=d,
                n_replicates=n_replicates,
            )
        )
    return out


def scenario_meta(cfg: ScenarioConfig) -> dict:
    return {
        "model": cfg.model,
        "p": cfg.p,
        "q": cfg.q,
        "b": cfg.b,
        "d": cfg.d,
        "m_groups": cfg.m_groups,
        "n_per_group": cfg.n_per_group,
        "replicates": cfg.n_replicates,
        "seed": cfg.seed,
    }


def report_rows(cfg: ScenarioConfig, report) -> list[dict]:
    """Flatten a report into long-format rows (scenario, metric, value,
    stderr), ready for external plotting."""
    meta = scenario_meta(cfg)
    rows = []

    def add(metric, value, stderr):
        if value is None:
            return
        rows.append({**meta, "metric": metric, "value": value, "stderr": stderr})

    if isinstance(report, SimulationReport):
        add("avg_type1", report.avg_type1, report.avg_type1_stderr)
        add("avg_power", report.avg_power, report.avg_power_stderr)
        add("group_type1", report.group_type1, report.group_type1_stderr)
        add("group_power", report.group_power, report.group_power_stderr)
        if report.coverage is not None:
            support = np.flatnonzero(cfg.resolve_beta())
            for j in support[: min(support.size, 10)]:
                add(
                    f"coverage_{j + 1}",
                    float(report.coverage[j]),
                    float(report.coverage_stderr[j]),
                )
            off = np.flatnonzero(cfg.resolve_beta() == 0)
            if off.size:
                add("coverage_offsupport_mean", float(np.nanmean(report.coverage[off])), None)
        add("n_failed", float(report.n_failed), None)
    elif isinstance(report, ComparisonReport):
        for j in range(COMPARISON_SIGNALS.size):
            add(
                f"coverage_ours_{j + 1}",
                float(report.coverage_ours[j]),
                float(report.coverage_ours_stderr[j]),
            )
            add(
                f"coverage_baseline_{j + 1}",
                float(report.coverage_baseline[j]),
                float(report.coverage_baseline_stderr[j]),
            )
        add("signal_gap", report.signal_gap, report.signal_gap_stderr)
        add("gap_conclusive", float(report.conclusive), None)
        add("n_failed", float(report.n_failed), None)
    else:
        raise TypeError(f"unsupported report type {type(report)!r}")
    return rows
