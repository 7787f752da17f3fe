"""Synthetic trial generator, effect-size calibration, and study driver.

Trials follow a two-arm randomized design with a prognostic component, an
optional treatment-by-covariate interaction, and unit normal noise:

    y = scale * prognostic(x) + arm * (beta0 + beta1 * predictive(x)) + eps

Four scenario shapes are provided (step, linear, and two multi-covariate
indicators). The prognostic scale is fixed per scenario so the prognostic
signal has unit standard deviation at a large reference draw. beta0 and
beta1 are calibrated by common-random-number bisection: beta1* targets a
stated interaction-test power, beta0 targets a stated power for the
unadjusted two-sample Z-test of the overall effect.
"""

from __future__ import annotations

import math
import time
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .data import CATEGORICAL, NUMERIC, Covariate, CovariateSchema, Dataset
from .errors import CalibrationError, ConfigError, HetfunnelError
from .inference import (
    BONFERRONI,
    METHODS,
    MVN_INTEGRATION,
    PERMUTATION,
    SIMPLE_MEANS,
    compute_stats,
    correlation_matrix,
    nearest_pd_correlation,
    permutation_reference,
    pvalue_bonferroni,
    pvalue_mvn,
    simple_means_stats,
)
from .mvn import MvnConfig
from .nuisance import LearnerSpec, PropensityRule, assign_folds, cross_fit_nuisance
from .pseudo import compute_pseudo_outcomes
from .subgroups import enumerate_subgroups
from .data import bin_all

HOMOGENEOUS = "homogeneous"
HETEROGENEOUS = "heterogeneous"
EFFECTS = (HOMOGENEOUS, HETEROGENEOUS)

N_COVARIATES = 30
_BINARY_NAMED = ("X1", "X4", "X8")
_NORMAL_BLOCKS = (
    ("X2", "X3", "X5", "X6"),
    ("X7", "X9", "X10", "X12"),
    ("X13", "X15", "X16", "X18"),
)
_BLOCK_CORR = 0.3
_UNIFORM_EXTRA = ("X19", "X20", "X21", "X22", "X23", "X24")
_BINARY_EXTRA = ("X25", "X26", "X27", "X28", "X29", "X30")

# Prognostic scales: 1 / SD(prognostic) over 1e6 reference draws with
# _REFERENCE_SEED; recomputable via prognostic_scale().
_REFERENCE_SEED = 202401
PROGNOSTIC_SCALES = {
    1: 2.6183589962779266,
    2: 1.4130322078291537,
    3: 1.4149631031047099,
    4: 1.7328257330371204,
}


def scenario_schema() -> CovariateSchema:
    """Schema of the 30-column synthetic covariate table."""
    covs = []
    binary = set(_BINARY_NAMED) | set(_BINARY_EXTRA)
    for i in range(1, N_COVARIATES + 1):
        name = f"X{i}"
        if name in binary:
            covs.append(Covariate(name=name, kind=CATEGORICAL, levels=("N", "Y")))
        else:
            covs.append(Covariate(name=name, kind=NUMERIC))
    return CovariateSchema(covariates=tuple(covs))


def generate_covariates(n: int, seed: int) -> dict[str, np.ndarray]:
    """Draw the 30-column covariate table; deterministic given the seed.

    X1/X4/X8 and X25..X30 are balanced Y/N binaries; X11 and X19..X24 are
    uniform on [0,1]; X14 is normal with standard deviation 0.5; X17 and the
    three blocks (X2,X3,X5,X6), (X7,X9,X10,X12), (X13,X15,X16,X18) are
    standard normal, with pairwise correlation 0.3 inside each block.
    """
    if n < 1:
        raise ValueError("need at least one row")
    rng = np.random.default_rng(seed)
    cols: dict[str, np.ndarray] = {}

    def draw_binary(name):
        cols[name] = np.where(rng.random(n) < 0.5, "Y", "N").astype(object)

    for name in _BINARY_NAMED:
        draw_binary(name)
    cols["X11"] = rng.random(n)
    cols["X14"] = rng.normal(0.0, 0.5, n)
    cols["X17"] = rng.standard_normal(n)
    block_cov = _BLOCK_CORR + (1.0 - _BLOCK_CORR) * np.eye(4)
    chol = np.linalg.cholesky(block_cov)
    for block in _NORMAL_BLOCKS:
        z = rng.standard_normal((n, 4)) @ chol.T
        for j, name in enumerate(block):
            cols[name] = z[:, j]
    for name in _UNIFORM_EXTRA:
        cols[name] = rng.random(n)
    for name in _BINARY_EXTRA:
        draw_binary(name)
    return {f"X{i}": cols[f"X{i}"] for i in range(1, N_COVARIATES + 1)}


def _is_yes(col: np.ndarray) -> np.ndarray:
    return np.asarray([v == "Y" for v in col], dtype=np.float64)


def prognostic_raw(scenario: int, cols: dict[str, np.ndarray]) -> np.ndarray:
    """Unscaled prognostic component of the mean response."""
    if scenario == 1:
        return 0.5 * _is_yes(cols["X1"]) + np.asarray(cols["X11"], dtype=np.float64)
    if scenario == 2:
        return np.asarray(cols["X14"], dtype=np.float64) - (1.0 - _is_yes(cols["X8"]))
    if scenario == 3:
        return (1.0 - _is_yes(cols["X1"])) - 0.5 * np.asarray(cols["X17"], dtype=np.float64)
    if scenario == 4:
        return np.asarray(cols["X11"], dtype=np.float64) - np.asarray(cols["X14"], dtype=np.float64)
    raise ConfigError(f"unknown scenario {scenario}")


def predictive(scenario: int, cols: dict[str, np.ndarray]) -> np.ndarray:
    """Treatment-effect-modifying component of the mean response."""
    if scenario == 1:
        x11 = np.asarray(cols["X11"], dtype=np.float64)
        return ndtr(20.0 * (x11 - 0.5))
    if scenario == 2:
        return np.asarray(cols["X14"], dtype=np.float64)
    if scenario == 3:
        x14 = np.asarray(cols["X14"], dtype=np.float64)
        return ((x14 > 0.25) & (_is_yes(cols["X1"]) == 0.0)).astype(np.float64)
    if scenario == 4:
        x14 = np.asarray(cols["X14"], dtype=np.float64)
        return ((x14 > 0.3) | (_is_yes(cols["X4"]) == 1.0)).astype(np.float64)
    raise ConfigError(f"unknown scenario {scenario}")


def prognostic_scale(scenario: int, n_ref: int = 1_000_000, seed: int = _REFERENCE_SEED) -> float:
    """Scale making the prognostic signal unit-SD at a large reference draw."""
    cols = generate_covariates(n_ref, seed)
    return float(1.0 / prognostic_raw(scenario, cols).std())


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    scale: float
    n: int = 500
    n_treated: int = 250
    noise_sd: float = 1.0

    @classmethod
    def for_id(cls, scenario: int, n: int = 500, n_treated: int | None = None) -> "ScenarioSpec":
        if scenario not in PROGNOSTIC_SCALES:
            raise ConfigError(f"unknown scenario {scenario}")
        if n_treated is None:
            n_treated = n // 2
        return cls(scenario=scenario, scale=PROGNOSTIC_SCALES[scenario], n=n, n_treated=n_treated)


def mean_function(
    spec: ScenarioSpec,
    cols: dict[str, np.ndarray],
    arm,
    beta0: float,
    beta1: float,
) -> np.ndarray:
    """Mean response for given covariates and arm (scalar or per-row array)."""
    arm = np.asarray(arm, dtype=np.float64)
    return spec.scale * prognostic_raw(spec.scenario, cols) + arm * (
        beta0 + beta1 * predictive(spec.scenario, cols)
    )


def _child_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def simulate_trial(spec: ScenarioSpec, beta0: float, beta1: float, seed: int) -> Dataset:
    """One synthetic trial: covariates, permuted arm vector, noisy outcomes."""
    cols = generate_covariates(spec.n, np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    arm = np.zeros(spec.n, dtype=np.int8)
    arm[: spec.n_treated] = 1
    arm = _child_rng(seed, 1).permutation(arm)
    eps = _child_rng(seed, 2).normal(0.0, spec.noise_sd, spec.n)
    y = mean_function(spec, cols, arm, beta0, beta1) + eps
    return Dataset.from_columns(scenario_schema(), y, arm, cols)


# --- calibration --------------------------------------------------------------


def _scenario_draws(spec: ScenarioSpec, reps: int, seed):
    """Only the pieces of `reps` trials that calibration needs."""
    prog = np.empty((reps, spec.n))
    pred = np.empty((reps, spec.n))
    arm = np.empty((reps, spec.n))
    eps = np.empty((reps, spec.n))
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(entropy=seed)
    template = np.zeros(spec.n)
    template[: spec.n_treated] = 1.0
    for r, child in enumerate(base.spawn(reps)):
        rng = np.random.default_rng(child)
        cols = {
            "X1": np.where(rng.random(spec.n) < 0.5, "Y", "N").astype(object),
            "X4": np.where(rng.random(spec.n) < 0.5, "Y", "N").astype(object),
            "X8": np.where(rng.random(spec.n) < 0.5, "Y", "N").astype(object),
            "X11": rng.random(spec.n),
            "X14": rng.normal(0.0, 0.5, spec.n),
            "X17": rng.standard_normal(spec.n),
        }
        prog[r] = spec.scale * prognostic_raw(spec.scenario, cols)
        pred[r] = predictive(spec.scenario, cols)
        arm[r] = rng.permutation(template)
        eps[r] = rng.normal(0.0, spec.noise_sd, spec.n)
    return prog, pred, arm, eps


def _interaction_precompute(prog, pred, arm, eps):
    """Per-repetition pieces of the interaction Wald test that are free of
    beta: the noise component of the interaction coefficient and its
    standard error (the response enters the fitted model linearly)."""
    reps, n = prog.shape
    ones = np.ones_like(prog)
    cols = [ones, prog, arm, arm * pred]
    xtx = np.empty((reps, 4, 4))
    xte = np.empty((reps, 4))
    for i in range(4):
        xte[:, i] = np.sum(cols[i] * eps, axis=1)
        for j in range(i, 4):
            xtx[:, i, j] = xtx[:, j, i] = np.sum(cols[i] * cols[j], axis=1)
    try:
        solved = np.linalg.solve(xtx, xte[:, :, None])[:, :, 0]
        inv = np.linalg.inv(xtx)
    except np.linalg.LinAlgError:
        solved = np.empty((reps, 4))
        inv = np.empty((reps, 4, 4))
        for r in range(reps):
            inv[r] = np.linalg.pinv(xtx[r])
            solved[r] = inv[r] @ xte[r]
    noise_coef = solved[:, 3]
    rss = np.sum(eps * eps, axis=1) - np.sum(xte * solved, axis=1)
    sigma2 = np.maximum(rss, 0.0) / (n - 4)
    se = np.sqrt(np.maximum(sigma2 * inv[:, 3, 3], 1e-300))
    return noise_coef, se


def _interaction_power(beta1, noise_coef, se, alpha) -> float:
    crit = ndtri(1.0 - alpha / 2.0)
    return float(np.mean(np.abs(beta1 + noise_coef) / se > crit))


def _overall_z_parts(prog, pred, arm, eps, beta1):
    """Beta0-free pieces of the unadjusted Z-test: the mean difference at
    beta0 = 0 and the standard-error factor (both arms' spreads are
    unchanged by a constant shift of the treated arm)."""
    y0 = prog + arm * (beta1 * pred) + eps
    n1 = arm.sum(axis=1)
    n0 = arm.shape[1] - n1
    sum1 = np.sum(y0 * arm, axis=1)
    sum0 = np.sum(y0 * (1.0 - arm), axis=1)
    mean1, mean0 = sum1 / n1, sum0 / n0
    dev = y0 - np.where(arm > 0, mean1[:, None], mean0[:, None])
    pooled_var = np.sum(dev * dev, axis=1) / (arm.shape[1] - 2)
    se = np.sqrt(pooled_var * (1.0 / n1 + 1.0 / n0))
    return mean1 - mean0, se


def _overall_power(beta0, diff0, se, alpha) -> float:
    crit = ndtri(1.0 - alpha / 2.0)
    return float(np.mean(np.abs(beta0 + diff0) / se > crit))


def _bisect_power(power_fn, target: float, hi0: float = 0.25) -> float:
    """Find the smallest magnitude crossing power_fn(x) = target, expanding
    the bracket as needed; power_fn must be (noisily) increasing in x over
    the bracket."""
    lo, hi = 0.0, hi0
    expansions = 0
    while power_fn(hi) < target:
        hi *= 2.0
        expansions += 1
        if expansions > 24:
            raise CalibrationError(
                f"power {power_fn(hi):.3f} never reached target {target} (bound {hi:g})"
            )
    if power_fn(lo) > target:
        step = hi0
        while power_fn(lo) > target:
            hi = lo
            lo -= step
            step *= 2.0
            expansions += 1
            if expansions > 48:
                raise CalibrationError(
                    f"power stays above target {target} down to {lo:g}"
                )
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if power_fn(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CalibrationResult:
    scenario: int
    heterogeneous: bool
    beta0: float
    beta1_star: float
    beta1: float  # 0 under homogeneity, 2 * beta1_star under heterogeneity
    reps: int
    achieved_overall_power: float
    achieved_overall_se: float
    achieved_interaction_power: float
    achieved_interaction_se: float


def calibrate(
    spec: ScenarioSpec,
    target_overall_power: float = 0.5,
    target_interaction_power: float = 0.8,
    alpha_interaction: float = 0.1,
    alpha_overall: float = 0.05,
    reps: int = 4000,
    seed: int = 0,
    heterogeneous: bool = False,
) -> CalibrationResult:
    """Monte-Carlo bisection for beta1* (interaction power) then beta0
    (overall power, given the beta1 in use); the same repetitions are reused
    across candidate values so the power curves are effectively exact
    functions of beta. Achieved powers are re-estimated on independent draws.
    """
    if reps < 1000:
        raise CalibrationError("calibration needs at least 1000 repetitions")
    root = np.random.SeedSequence(entropy=seed, spawn_key=(spec.scenario, int(heterogeneous)))
    fit_seed, eval_seed = root.spawn(2)

    prog, pred, arm, eps = _scenario_draws(spec, reps, fit_seed)
    noise_coef, se_int = _interaction_precompute(prog, pred, arm, eps)
    beta1_star = _bisect_power(
        lambda b: _interaction_power(b, noise_coef, se_int, alpha_interaction),
        target_interaction_power,
    )
    beta1 = 2.0 * beta1_star if heterogeneous else 0.0
    diff0, se_z = _overall_z_parts(prog, pred, arm, eps, beta1)
    beta0 = _bisect_power(
        lambda b: _overall_power(b, diff0, se_z, alpha_overall), target_overall_power
    )

    eprog, epred, earm, eeps = _scenario_draws(spec, reps, eval_seed)
    enoise, ese_int = _interaction_precompute(eprog, epred, earm, eeps)
    p_int = _interaction_power(beta1_star, enoise, ese_int, alpha_interaction)
    ediff0, ese_z = _overall_z_parts(eprog, epred, earm, eeps, beta1)
    p_all = _overall_power(beta0, ediff0, ese_z, alpha_overall)
    return CalibrationResult(
        scenario=spec.scenario,
        heterogeneous=heterogeneous,
        beta0=float(beta0),
        beta1_star=float(beta1_star),
        beta1=float(beta1),
        reps=reps,
        achieved_overall_power=p_all,
        achieved_overall_se=math.sqrt(p_all * (1.0 - p_all) / reps),
        achieved_interaction_power=p_int,
        achieved_interaction_se=math.sqrt(p_int * (1.0 - p_int) / reps),
    )


# --- repeated-sampling study --------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    scenarios: tuple[int, ...] = (1,)
    effects: tuple[str, ...] = (HOMOGENEOUS,)
    methods: tuple[str, ...] = (PERMUTATION,)
    reps: int = 100
    min_per_arm: int = 10
    n_perm: int = 500
    folds: int = 5
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    propensity: PropensityRule = field(default_factory=PropensityRule)
    seed: int = 0
    calibration_reps: int = 4000
    gammas: tuple[float, ...] = (0.75, 0.97)
    mvn: MvnConfig = field(default_factory=MvnConfig)
    n_jobs: int = 1

    def __post_init__(self):
        for s in self.scenarios:
            if s not in PROGNOSTIC_SCALES:
                raise ConfigError(f"unknown scenario {s}")
        for e in self.effects:
            if e not in EFFECTS:
                raise ConfigError(f"unknown effect setting {e!r}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if self.reps < 1:
            raise ConfigError("reps must be positive")

    def to_dict(self) -> dict:
        return {
            "scenarios": list(self.scenarios),
            "effects": list(self.effects),
            "methods": list(self.methods),
            "reps": self.reps,
            "min_per_arm": self.min_per_arm,
            "n_perm": self.n_perm,
            "folds": self.folds,
            "learner": {
                "kind": self.learner.kind,
                "n_lambdas": self.learner.n_lambdas,
                "lam_min_ratio": self.learner.lam_min_ratio,
                "cv_folds": self.learner.cv_folds,
            },
            "propensity": {"kind": self.propensity.kind, "value": self.propensity.value},
            "seed": self.seed,
            "calibration_reps": self.calibration_reps,
            "gammas": list(self.gammas),
            "n_jobs": self.n_jobs,
        }


_THREAD_CONTROLLER = None


def _limit_threads():
    global _THREAD_CONTROLLER
    try:
        from threadpoolctl import ThreadpoolController

        if _THREAD_CONTROLLER is None:
            _THREAD_CONTROLLER = ThreadpoolController()
        return _THREAD_CONTROLLER.limit(limits=1)
    except Exception:
        return nullcontext()


def _needs_pseudo(methods) -> bool:
    return any(m in (PERMUTATION, BONFERRONI, MVN_INTEGRATION) for m in methods)


def _analyze_repetition(dataset: Dataset, cfg: StudyConfig, rep_seed: np.random.SeedSequence):
    """Global p-value per requested method for one simulated trial, plus the
    permutation quantiles needed for region-coverage summaries."""
    record: dict = {}
    binned = bin_all(dataset)
    subgroups = enumerate_subgroups(dataset, binned, cfg.min_per_arm)
    if not subgroups:
        raise HetfunnelError("no subgroups pass the size filter")
    record["k"] = len(subgroups)

    if _needs_pseudo(cfg.methods):
        fold_seed, perm_seed, mvn_seed = (
            int(s.generate_state(1)[0]) for s in rep_seed.spawn(3)
        )
        folds = assign_folds(dataset.n, cfg.folds, fold_seed)
        nuisance = cross_fit_nuisance(dataset, folds, cfg.learner, cfg.propensity)
        pseudo = compute_pseudo_outcomes(dataset, nuisance)
        stats = compute_stats(pseudo, subgroups)
        record["t_max"] = stats.t_max
        if PERMUTATION in cfg.methods:
            ref = permutation_reference(pseudo, subgroups, cfg.n_perm, perm_seed)
            record["p_permutation"] = float(ref.pvalue(stats.t_max))
            for gamma in cfg.gammas:
                q = ref.quantile(gamma)
                record[f"q_{gamma:g}"] = q
                record[f"inside_{gamma:g}"] = bool(stats.t_max <= q)
        if BONFERRONI in cfg.methods:
            record["p_bonferroni"] = pvalue_bonferroni(stats.t_max, stats.k)
        if MVN_INTEGRATION in cfg.methods:
            corr = correlation_matrix(subgroups, dataset.n)
            if corr.min_eigenvalue() < -1e-8:
                corr = nearest_pd_correlation(corr)
            p, se, converged = pvalue_mvn(stats.t_max, corr, cfg.mvn, mvn_seed)
            record["p_mvn"] = p
            record["mvn_se"] = se
            record["mvn_converged"] = converged
    if SIMPLE_MEANS in cfg.methods:
        sm = simple_means_stats(dataset, subgroups)
        record["p_simple_means"] = pvalue_bonferroni(sm.t_max, sm.k_included)
        record["t_max_simple_means"] = sm.t_max
    return record


def _run_one(args):
    cfg, scenario, effect, rep, beta0, beta1 = args
    spec = ScenarioSpec.for_id(scenario)
    base = np.random.SeedSequence(
        entropy=cfg.seed, spawn_key=(scenario, EFFECTS.index(effect), rep)
    )
    trial_seed = int(base.generate_state(1)[0])
    started = time.perf_counter()
    record = {"scenario": scenario, "effect": effect, "rep": rep}
    with _limit_threads():
        try:
            dataset = simulate_trial(spec, beta0, beta1, trial_seed)
            record.update(_analyze_repetition(dataset, cfg, base))
            record["error"] = ""
        except HetfunnelError as exc:
            record["error"] = f"{type(exc).__name__}: {exc}"
    record["seconds"] = time.perf_counter() - started
    return record


@dataclass(frozen=True)
class GroupSummary:
    scenario: int
    effect: str
    method: str
    n_reps: int
    ecdf_grid: np.ndarray  # 0, 0.01, ..., 1
    ecdf: np.ndarray
    ks_uniform: float
    prop_below_0_1: float
    prop_below_se: float

    def __post_init__(self):
        self.ecdf_grid.setflags(write=False)
        self.ecdf.setflags(write=False)


@dataclass(frozen=True)
class SimulationSummary:
    config: StudyConfig
    calibrations: dict
    groups: dict
    rows: list
    n_failures: int
    coverage: dict  # (scenario, effect, gamma) -> inside frequency
    timings: list = field(default_factory=list, compare=False)


def ks_distance_to_uniform(p_values: np.ndarray) -> float:
    p = np.sort(np.asarray(p_values, dtype=np.float64))
    n = len(p)
    if n == 0:
        return 1.0
    upper = np.max(np.arange(1, n + 1) / n - p)
    lower = np.max(p - np.arange(0, n) / n)
    return float(max(upper, lower))


def run_study(cfg: StudyConfig, progress=None) -> SimulationSummary:
    """Simulate, analyze, and aggregate every configured repetition.

    Repetition seeds derive from (seed, scenario, effect, repetition), so
    results are independent of worker count and arrival order. Failures are
    excluded from aggregates and counted.
    """
    calibrations = {}
    tasks = []
    for scenario in cfg.scenarios:
        for effect in cfg.effects:
            spec = ScenarioSpec.for_id(scenario)
            cal = calibrate(
                spec,
                reps=cfg.calibration_reps,
                seed=cfg.seed,
                heterogeneous=(effect == HETEROGENEOUS),
            )
            calibrations[(scenario, effect)] = cal
            tasks.extend(
                (cfg, scenario, effect, rep, cal.beta0, cal.beta1) for rep in range(cfg.reps)
            )

    if cfg.n_jobs > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(cfg.n_jobs) as pool:
            rows = []
            for i, rec in enumerate(pool.imap_unordered(_run_one, tasks, chunksize=1)):
                rows.append(rec)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        rows = []
        for i, task in enumerate(tasks):
            rows.append(_run_one(task))
            if progress:
                progress(i + 1, len(tasks))
    rows.sort(key=lambda r: (r["scenario"], r["effect"], r["rep"]))
    timings = [r.pop("seconds") for r in rows]

    groups = {}
    coverage = {}
    n_failures = sum(1 for r in rows if r["error"])
    grid = np.round(np.linspace(0.0, 1.0, 101), 2)
    for scenario in cfg.scenarios:
        for effect in cfg.effects:
            sub = [r for r in rows if r["scenario"] == scenario and r["effect"] == effect and not r["error"]]
            for method in cfg.methods:
                key = f"p_{method}"
                p = np.asarray([r[key] for r in sub if key in r])
                if p.size == 0:
                    continue
                prop = float(np.mean(p < 0.1))
                groups[(scenario, effect, method)] = GroupSummary(
                    scenario=scenario,
                    effect=effect,
                    method=method,
                    n_reps=len(p),
                    ecdf_grid=grid,
                    ecdf=np.asarray([(p <= g).mean() for g in grid]),
                    ks_uniform=ks_distance_to_uniform(p),
                    prop_below_0_1=prop,
                    prop_below_se=math.sqrt(max(prop * (1 - prop), 1e-12) / len(p)),
                )
            for gamma in cfg.gammas:
                key = f"inside_{gamma:g}"
                flags = [r[key] for r in sub if key in r]
                if flags:
                    coverage[(scenario, effect, gamma)] = float(np.mean(flags))
    return SimulationSummary(
        config=cfg,
        calibrations=calibrations,
        groups=groups,
        rows=rows,
        n_failures=n_failures,
        coverage=coverage,
        timings=timings,
    )
