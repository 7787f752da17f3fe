"""End-to-end analysis and the self-contained report document.

``analyze`` runs the whole pipeline (bin, enumerate, cross-fit, pseudo-
outcomes, statistics, reference distributions, regions) and returns an
``InferenceReport``; ``document_from_report`` turns it into a plain dict
with stable key order that serializes to the canonical JSON consumed by the
explorer UI, the CSV exports, and the figures.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .data import Dataset, bin_all
from .errors import ConfigError, MvnLimitError
from .inference import (
    BONFERRONI,
    MVN_INTEGRATION,
    PERMUTATION,
    SIMPLE_MEANS,
    BonferroniReference,
    HomogeneityRegion,
    MvnReference,
    SimpleMeansStats,
    SubgroupStats,
    compute_stats,
    correlation_matrix,
    gamma_from_surprise,
    homogeneity_region,
    individual_pvalues,
    nearest_pd_correlation,
    permutation_reference,
    pvalue_bonferroni,
    simple_means_stats,
    surprise,
)
from .mvn import MvnConfig
from .nuisance import LearnerSpec, PropensityRule, assign_folds, cross_fit_nuisance
from .pseudo import PseudoOutcomes, compute_pseudo_outcomes
from .subgroups import SubgroupIndex, enumerate_subgroups

SCHEMA_VERSION = "1.0"

PSEUDO_METHODS = (PERMUTATION, BONFERRONI, MVN_INTEGRATION)


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one analysis run (echoed into the report)."""

    outcome_col: str
    arm_col: str
    methods: tuple[str, ...] = (PERMUTATION,)
    s_levels: tuple[float, ...] = (2.0, 5.0, 10.0)
    min_per_arm: int = 10
    max_depth: int = 2
    n_perm: int = 500
    folds: int = 5
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    propensity: PropensityRule = field(default_factory=PropensityRule)
    seed: int = 0
    mvn: MvnConfig = field(default_factory=MvnConfig)
    top_rows: int = 5
    input_path: str = ""
    schema_path: str = ""
    delimiter: str = ","
    timestamp: str | None = None  # embedded only when explicitly supplied

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        known = PSEUDO_METHODS + (SIMPLE_MEANS,)
        for m in self.methods:
            if m not in known:
                raise ConfigError(f"unknown method {m!r}")
        if any(s <= 0 for s in self.s_levels):
            raise ConfigError("surprise thresholds must be positive")

    def to_dict(self) -> dict:
        return {
            "input": self.input_path,
            "schema": self.schema_path,
            "outcome": self.outcome_col,
            "arm": self.arm_col,
            "delimiter": self.delimiter,
            "methods": list(self.methods),
            "s_levels": [float(s) for s in self.s_levels],
            "min_per_arm": self.min_per_arm,
            "max_depth": self.max_depth,
            "n_perm": self.n_perm,
            "folds": self.folds,
            "learner": {
                "kind": self.learner.kind,
                "lam_grid": list(self.learner.lam_grid) if self.learner.lam_grid else None,
                "n_lambdas": self.learner.n_lambdas,
                "lam_min_ratio": self.learner.lam_min_ratio,
                "cv_folds": self.learner.cv_folds,
            },
            "propensity": {"kind": self.propensity.kind, "value": self.propensity.value},
            "seed": self.seed,
            "top_rows": self.top_rows,
        }


@dataclass(frozen=True)
class MethodResult:
    method: str
    p_global: float
    s_global: float
    s_floored: bool
    p_individual: np.ndarray
    quantiles: dict  # gamma -> q_gamma
    se: float | None = None  # integration methods only
    converged: bool | None = None
    repair_distance: float | None = None

    def __post_init__(self):
        self.p_individual.setflags(write=False)


@dataclass(frozen=True)
class BaselineResult:
    stats: SimpleMeansStats
    p_global: float
    s_global: float
    s_floored: bool
    p_individual: np.ndarray  # NaN where excluded

    def __post_init__(self):
        self.p_individual.setflags(write=False)


@dataclass(frozen=True)
class InferenceReport:
    config: RunConfig
    n: int
    subgroups: list[SubgroupIndex]
    pseudo: PseudoOutcomes
    stats: SubgroupStats
    methods: dict  # name -> MethodResult
    regions: list[HomogeneityRegion]
    baseline: BaselineResult | None

    @property
    def k(self) -> int:
        return len(self.subgroups)


def _region_sizes(subgroups: list[SubgroupIndex], n: int) -> np.ndarray:
    observed = np.asarray([s.n_members for s in subgroups], dtype=np.int64)
    grid = np.rint(np.geomspace(max(2, observed.min()), n, 64)).astype(np.int64)
    return np.unique(np.concatenate([observed, grid, [n]]))


def analyze(dataset: Dataset, config: RunConfig) -> InferenceReport:
    """Run the full homogeneity-evidence pipeline on one dataset."""
    binned = bin_all(dataset)
    subgroups = enumerate_subgroups(dataset, binned, config.min_per_arm, config.max_depth)
    if not subgroups:
        raise ConfigError("no subgroups pass the size filter; lower --min-per-arm")

    seeds = np.random.SeedSequence(entropy=config.seed)
    fold_seed, perm_seed, mvn_seed = (int(s.generate_state(1)[0]) for s in seeds.spawn(3))

    folds = assign_folds(dataset.n, config.folds, fold_seed)
    nuisance = cross_fit_nuisance(dataset, folds, config.learner, config.propensity)
    pseudo = compute_pseudo_outcomes(dataset, nuisance)
    stats = compute_stats(pseudo, subgroups)

    gammas = [gamma_from_surprise(s) for s in config.s_levels]
    sizes = _region_sizes(subgroups, dataset.n)
    methods: dict[str, MethodResult] = {}
    regions: list[HomogeneityRegion] = []

    for method in config.methods:
        if method == SIMPLE_MEANS:
            continue
        se = converged = repair = None
        if method == PERMUTATION:
            ref = permutation_reference(pseudo, subgroups, config.n_perm, perm_seed)
            p_global = float(ref.pvalue(stats.t_max))
        elif method == BONFERRONI:
            ref = BonferroniReference(k=stats.k)
            p_global = float(ref.pvalue(stats.t_max))
        elif method == MVN_INTEGRATION:
            if stats.k > config.mvn.k_limit:
                raise MvnLimitError(
                    f"{stats.k} subgroups exceed the numerical-integration limit "
                    f"of {config.mvn.k_limit}; use the permutation method instead"
                )
            corr = correlation_matrix(subgroups, dataset.n)
            if corr.min_eigenvalue() < -1e-8:
                corr = nearest_pd_correlation(corr)
            repair = corr.repair_distance
            ref = MvnReference(corr, config=config.mvn, seed=mvn_seed)
            p_global, se, converged = ref.pvalue_with_error(stats.t_max)
        s_val, floored = surprise(p_global)
        methods[method] = MethodResult(
            method=method,
            p_global=p_global,
            s_global=s_val,
            s_floored=floored,
            p_individual=individual_pvalues(stats, ref),
            quantiles={g: float(ref.quantile(g)) for g in gammas},
            se=se,
            converged=converged,
            repair_distance=repair,
        )
        for gamma in gammas:
            regions.append(homogeneity_region(gamma, pseudo, ref, sizes=sizes))

    baseline = None
    if SIMPLE_MEANS in config.methods:
        sm = simple_baseline(dataset, subgroups)
        baseline = sm
    return InferenceReport(
        config=config,
        n=dataset.n,
        subgroups=subgroups,
        pseudo=pseudo,
        stats=stats,
        methods=methods,
        regions=regions,
        baseline=baseline,
    )


def simple_baseline(dataset: Dataset, subgroups: list[SubgroupIndex]) -> BaselineResult:
    """Raw-group-means contrasts referenced against a union bound."""
    sm = simple_means_stats(dataset, subgroups)
    ref = BonferroniReference(k=sm.k_included)
    p_global = pvalue_bonferroni(sm.t_max, sm.k_included)
    s_val, floored = surprise(p_global)
    p_ind = np.full(len(subgroups), np.nan)
    inc = sm.included
    p_ind[inc] = np.asarray(ref.pvalue(np.abs(sm.t_stats[inc])))
    return BaselineResult(
        stats=sm, p_global=p_global, s_global=s_val, s_floored=floored, p_individual=p_ind
    )


def _round(x: float) -> float:
    # Canonical JSON keeps full double precision via repr round-trip.
    return float(x)


def _surprise_or_none(p: float):
    if math.isnan(p):
        return None, None
    s, floored = surprise(p)
    return s, floored


def document_from_report(report: InferenceReport) -> dict:
    """Plain-dict form of the report (self-contained; the UI needs no other
    input). Key order is stable and floats round-trip exactly."""
    stats = report.stats
    points = []
    for i, sub in enumerate(report.subgroups):
        row = {
            "label": sub.label,
            "terms": [[cov, lev] for cov, lev in sub.definition.terms],
            "n": sub.n_members,
            "n_treated": sub.n_treated,
            "n_control": sub.n_control,
            "effect": _round(stats.effects[i]),
            "diff": _round(stats.diffs[i]),
            "t": _round(stats.t_stats[i]),
            "duplicate_of": sub.duplicate_of,
            "methods": {},
        }
        for name, res in report.methods.items():
            p = float(res.p_individual[i])
            s, floored = _surprise_or_none(p)
            row["methods"][name] = {"p": _round(p), "surprise": s, "floored": floored}
        if report.baseline is not None:
            p = float(report.baseline.p_individual[i])
            if math.isnan(p):
                row["methods"][SIMPLE_MEANS] = None
            else:
                s, floored = _surprise_or_none(p)
                t_val = float(report.baseline.stats.t_stats[i])
                row["methods"][SIMPLE_MEANS] = {
                    "p": _round(p),
                    "surprise": s,
                    "floored": floored,
                    "t": _round(t_val),
                }
        points.append(row)

    overall_methods = {}
    for name, res in report.methods.items():
        entry = {
            "p": _round(res.p_global),
            "surprise": _round(res.s_global),
            "floored": res.s_floored,
            "quantiles": {f"{g:.12g}": _round(q) for g, q in res.quantiles.items()},
        }
        if res.se is not None:
            entry["integration_se"] = _round(res.se)
            entry["integration_converged"] = bool(res.converged)
            entry["repair_distance"] = _round(res.repair_distance)
        overall_methods[name] = entry
    if report.baseline is not None:
        overall_methods[SIMPLE_MEANS] = {
            "p": _round(report.baseline.p_global),
            "surprise": _round(report.baseline.s_global),
            "floored": report.baseline.s_floored,
            "t_max": _round(report.baseline.stats.t_max),
            "outcome_sd": _round(report.baseline.stats.outcome_sd),
            "overall_effect": _round(report.baseline.stats.overall_effect),
            "k_included": report.baseline.stats.k_included,
        }

    regions = []
    for reg in report.regions:
        regions.append(
            {
                "method": reg.method,
                "s_level": _round(reg.s_level),
                "gamma": _round(reg.gamma),
                "quantile": _round(reg.quantile),
                "curve": [
                    [int(n), _round(lo), _round(hi)]
                    for n, lo, hi in zip(reg.sizes, reg.lower, reg.upper)
                ],
            }
        )

    order = np.argsort(-np.abs(stats.t_stats), kind="stable")
    top = []
    for i in order[: report.config.top_rows]:
        sub = report.subgroups[int(i)]
        top.append(
            {
                "subgroup": sub.label,
                "n_treated": sub.n_treated,
                "n_control": sub.n_control,
                "effect": _round(stats.effects[int(i)]),
                "abs_t": _round(abs(stats.t_stats[int(i)])),
            }
        )

    return {
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "tool": "hetfunnel",
            "tool_version": __version__,
            "timestamp": report.config.timestamp,
            "config": report.config.to_dict(),
        },
        "overall": {
            "n": report.n,
            "k": report.k,
            "ate": _round(stats.ate),
            "sd": _round(stats.sd),
            "t_max": _round(stats.t_max),
            "methods": overall_methods,
        },
        "points": points,
        "regions": regions,
        "top_table": top,
    }


def dumps_canonical(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_atomic(path, data: str | bytes):
    """Write via a temp file and rename so readers never see torn output."""
    directory = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-hetfunnel-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_document(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = str(doc.get("schema_version", ""))
    major = version.split(".", 1)[0]
    if major != SCHEMA_VERSION.split(".", 1)[0]:
        raise ConfigError(f"unsupported report schema version {version!r}")
    return doc
