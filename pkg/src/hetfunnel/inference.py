"""Standardized subgroup statistics and homogeneity reference distributions.

Every subgroup's deviation from the overall effect is standardized by its
exact variance under effect homogeneity, giving statistics whose maximum
absolute value calibrates "how surprising" the observed spread is. Three
reference distributions for that maximum are provided: a Bonferroni bound,
numerical integration of the joint multivariate normal, and a permutation
scheme that reshuffles pseudo-outcomes while keeping memberships fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .data import Dataset
from .mvn import MvnConfig, symmetric_rectangle_probability
from .pseudo import PseudoOutcomes
from .subgroups import (
    SubgroupIndex,
    member_counts,
    membership_matrix,
    overlap_matrix,
)

BONFERRONI = "bonferroni"
MVN_INTEGRATION = "mvn"
PERMUTATION = "permutation"
SIMPLE_MEANS = "simple_means"
METHODS = (BONFERRONI, MVN_INTEGRATION, PERMUTATION, SIMPLE_MEANS)

P_FLOOR = 2.0**-52


def surprise(p: float) -> tuple[float, bool]:
    """Bits of information against homogeneity: -log2(p).

    p below the 2**-52 floor is clamped and flagged so reports stay honest
    about finite arithmetic.
    """
    if p < P_FLOOR:
        return 52.0, True
    return float(-math.log2(p)), False


def gamma_from_surprise(s: float) -> float:
    """Region level corresponding to a surprise threshold: gamma = 1 - 2**-s."""
    if s <= 0:
        raise ValueError("surprise threshold must be positive")
    return 1.0 - 2.0**-s


@dataclass(frozen=True)
class SubgroupStats:
    """Per-subgroup effect estimates standardized against homogeneity."""

    effects: np.ndarray  # subgroup mean pseudo-outcomes
    diffs: np.ndarray  # effects - overall effect
    variances: np.ndarray  # sd^2 (1/N_j - 1/N)
    t_stats: np.ndarray  # diffs / sqrt(variances)
    t_max: float  # max |t|
    sd: float  # pseudo-outcome scale used for standardization
    ate: float  # overall effect
    n_total: int

    def __post_init__(self):
        for arr in (self.effects, self.diffs, self.variances, self.t_stats):
            arr.setflags(write=False)

    @property
    def k(self) -> int:
        return len(self.t_stats)


def compute_stats(pseudo: PseudoOutcomes, subgroups: list[SubgroupIndex]) -> SubgroupStats:
    """Standardize every subgroup's deviation from the overall effect."""
    if not subgroups:
        raise ValueError("no subgroups to analyze")
    n = pseudo.n
    counts = member_counts(subgroups)
    if np.any(counts >= n) or np.any(counts < 1):
        raise ValueError("subgroup sizes must satisfy 1 <= N_j < N")
    m = membership_matrix(subgroups)
    effects = (m @ pseudo.values) / counts
    diffs = effects - pseudo.ate
    variances = pseudo.sd**2 * (1.0 / counts - 1.0 / n)
    t_stats = diffs / np.sqrt(variances)
    return SubgroupStats(
        effects=effects,
        diffs=diffs,
        variances=variances,
        t_stats=t_stats,
        t_max=float(np.max(np.abs(t_stats))),
        sd=pseudo.sd,
        ate=pseudo.ate,
        n_total=n,
    )


@dataclass(frozen=True)
class CorrelationModel:
    """Correlation of the standardized subgroup deviations."""

    matrix: np.ndarray
    repaired: bool = False
    repair_distance: float = 0.0  # Frobenius distance moved by the repair
    converged: bool = True

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


def correlation_matrix(subgroups: list[SubgroupIndex], n_total: int) -> CorrelationModel:
    """Pairwise correlations implied by subgroup overlaps.

    rho_ij = (N_ij/(N_i N_j) - 1/N) / sqrt((1/N_i - 1/N)(1/N_j - 1/N))
    """
    counts = member_counts(subgroups)
    if np.any(counts >= n_total):
        raise ValueError("subgroup sizes must be strictly below the total")
    overlaps = overlap_matrix(subgroups)
    inv_n = 1.0 / n_total
    numer = overlaps / np.outer(counts, counts) - inv_n
    scale = np.sqrt(1.0 / counts - inv_n)
    rho = numer / np.outer(scale, scale)
    np.fill_diagonal(rho, 1.0)
    rho = np.clip(rho, -1.0, 1.0)
    return CorrelationModel(matrix=rho)


def nearest_pd_correlation(
    model: CorrelationModel,
    tol: float = 1e-8,
    max_iter: int = 200,
    stop: float = 1e-7,
) -> CorrelationModel:
    """Project onto the positive-semidefinite cone with unit diagonal.

    Alternating projections with Dykstra's correction: eigenvalues are
    clipped at ``tol``, then the diagonal is reset to one; iteration stops
    when successive iterates differ by less than ``stop`` in max-norm. If the
    iteration cap is reached the best iterate is returned flagged
    non-converged.
    """
    r = np.asarray(model.matrix, dtype=np.float64)
    if not np.allclose(r, r.T, atol=1e-12):
        raise ValueError("correlation matrix must be symmetric")
    y = r.copy()
    correction = np.zeros_like(r)
    converged = False
    clipped_any = False
    for _ in range(max_iter):
        prev = y.copy()
        shifted = y - correction
        vals, vecs = np.linalg.eigh(shifted)
        if vals[0] < tol:
            clipped_any = True
        clipped = np.maximum(vals, tol)
        x = (vecs * clipped) @ vecs.T
        x = 0.5 * (x + x.T)
        correction = x - shifted
        y = x.copy()
        np.fill_diagonal(y, 1.0)
        if np.max(np.abs(y - prev)) < stop:
            converged = True
            break
    distance = float(np.linalg.norm(y - r, ord="fro"))
    return CorrelationModel(
        matrix=y,
        repaired=clipped_any,
        repair_distance=distance,
        converged=converged,
    )


# --- reference distributions -------------------------------------------------


@dataclass(frozen=True)
class BonferroniReference:
    """Union-bound reference: p(t) = min(1, 2k(1 - Phi(t)))."""

    k: int
    method: str = BONFERRONI

    def pvalue(self, t) -> np.ndarray | float:
        return np.minimum(1.0, 2.0 * self.k * (1.0 - ndtr(t)))

    def cdf(self, t) -> np.ndarray | float:
        return np.maximum(0.0, 1.0 - 2.0 * self.k * (1.0 - ndtr(t)))

    def quantile(self, gamma: float) -> float:
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        return float(ndtri(1.0 - (1.0 - gamma) / (2.0 * self.k)))


@dataclass(frozen=True)
class PermutationReference:
    """Empirical reference from permuted max statistics (add-one estimator)."""

    sample: np.ndarray  # sorted permuted max statistics
    n_perm: int
    seed: int
    method: str = PERMUTATION

    def __post_init__(self):
        self.sample.setflags(write=False)

    def pvalue(self, t) -> np.ndarray | float:
        n_ge = self.n_perm - np.searchsorted(self.sample, t, side="left")
        return (1.0 + n_ge) / (self.n_perm + 1.0)

    def cdf(self, t) -> np.ndarray | float:
        n_le = np.searchsorted(self.sample, t, side="right")
        return (1.0 + n_le) / (self.n_perm + 1.0)

    def quantile(self, gamma: float) -> float:
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        rank = min(self.n_perm - 1, max(0, math.ceil(gamma * self.n_perm) - 1))
        return float(self.sample[rank])


@dataclass(frozen=True)
class MvnReference:
    """Joint-normal reference evaluated by quasi-Monte-Carlo integration."""

    corr: CorrelationModel
    config: MvnConfig = field(default_factory=MvnConfig)
    seed: int = 0
    max_exact_evals: int = 32  # above this, p_j come from a monotone grid fit
    method: str = MVN_INTEGRATION
    _memo: dict = field(default_factory=dict, compare=False, repr=False)

    def _prob_inside(self, t: float):
        res = self._memo.get(t)
        if res is None:
            res = symmetric_rectangle_probability(self.corr.matrix, t, self.config, self.seed)
            self._memo[t] = res
        return res

    def pvalue_with_error(self, t: float) -> tuple[float, float, bool]:
        res = self._prob_inside(float(t))
        return 1.0 - res.prob, res.se, res.converged

    def pvalue(self, t) -> np.ndarray | float:
        if np.ndim(t) == 0:
            return self.pvalue_with_error(float(t))[0]
        return self.pvalue_many(np.asarray(t, dtype=np.float64))

    def cdf(self, t) -> np.ndarray | float:
        return 1.0 - self.pvalue(t)

    def pvalue_many(self, ts: np.ndarray) -> np.ndarray:
        """p-values at many thresholds.

        Unique thresholds are evaluated exactly up to ``max_exact_evals``;
        beyond that the distribution function is evaluated on a spanning grid
        and interpolated monotonically (error at the integration-noise level).
        """
        ts = np.asarray(ts, dtype=np.float64)
        uniq = np.unique(ts)
        if len(uniq) <= self.max_exact_evals:
            nodes = uniq
            node_p = np.asarray([self.pvalue_with_error(t)[0] for t in nodes])
            lookup = dict(zip(nodes.tolist(), node_p.tolist()))
            return np.asarray([lookup[t] for t in ts.tolist()])
        nodes = np.unique(
            np.concatenate(
                [
                    np.quantile(uniq, np.linspace(0.0, 1.0, self.max_exact_evals - 2)),
                    [uniq[0], uniq[-1]],
                ]
            )
        )
        node_p = np.asarray([self.pvalue_with_error(t)[0] for t in nodes])
        # Enforce monotone nonincreasing p before interpolating.
        node_p = np.minimum.accumulate(node_p)
        return np.interp(ts, nodes, node_p)

    def quantile(self, gamma: float, t_hi: float = 15.0, tol: float = 1e-4) -> float:
        """Bisection on the distribution function over [0, t_hi]."""
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        key = ("q", gamma, t_hi, tol)
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        lo, hi = 0.0, t_hi
        if self.cdf(hi) < gamma:
            self._memo[key] = hi
            return hi
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < gamma:
                lo = mid
            else:
                hi = mid
        q = 0.5 * (lo + hi)
        self._memo[key] = q
        return q


ReferenceDistribution = BonferroniReference | PermutationReference | MvnReference


def pvalue_bonferroni(t_max: float, k: int) -> float:
    """Union-bound p-value for the max statistic over k subgroups."""
    if k < 1:
        raise ValueError("need at least one subgroup")
    return float(BonferroniReference(k).pvalue(t_max))


def pvalue_mvn(
    t_max: float,
    corr: CorrelationModel,
    config: MvnConfig = MvnConfig(),
    seed: int = 0,
) -> tuple[float, float, bool]:
    """Joint-normal p-value with its integration standard error.

    The correlation model must already be positive semidefinite (apply
    nearest_pd_correlation first); returns (p, se, converged).
    """
    if corr.min_eigenvalue() < -1e-8:
        raise ValueError("correlation matrix is indefinite; repair it first")
    return MvnReference(corr, config=config, seed=seed).pvalue_with_error(t_max)


_PERM_CHUNK = 128


def permutation_reference(
    pseudo: PseudoOutcomes,
    subgroups: list[SubgroupIndex],
    n_perm: int,
    seed: int,
) -> PermutationReference:
    """Max-statistic distribution from uniformly permuted pseudo-outcomes.

    Memberships and the scale estimate stay fixed; only the pseudo-outcome
    vector is shuffled. Replicate l draws its permutation from an RNG stream
    split deterministically off the master seed, so results do not depend on
    scheduling or worker counts.
    """
    if n_perm < 1:
        raise ValueError("need at least one permutation")
    n = pseudo.n
    counts = member_counts(subgroups)
    m = membership_matrix(subgroups)
    sqrt_v = pseudo.sd * np.sqrt(1.0 / counts - 1.0 / n)
    ate = pseudo.ate

    t_max = np.empty(n_perm)
    for start in range(0, n_perm, _PERM_CHUNK):
        stop = min(start + _PERM_CHUNK, n_perm)
        block = np.empty((n, stop - start))
        for ell in range(start, stop):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(ell,)))
            block[:, ell - start] = pseudo.values[rng.permutation(n)]
        sums = m @ block
        t_block = (sums / counts[:, None] - ate) / sqrt_v[:, None]
        t_max[start:stop] = np.max(np.abs(t_block), axis=0)
    return PermutationReference(sample=np.sort(t_max), n_perm=n_perm, seed=seed)


def individual_pvalues(stats: SubgroupStats, ref) -> np.ndarray:
    """Per-subgroup divergence p-values against the max-statistic reference."""
    return np.asarray(ref.pvalue(np.abs(stats.t_stats)), dtype=np.float64)


@dataclass(frozen=True)
class HomogeneityRegion:
    """Band containing all subgroup effects with the stated probability."""

    method: str
    gamma: float
    s_level: float  # -log2(1 - gamma)
    quantile: float
    sizes: np.ndarray  # subgroup sizes the band is evaluated at
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for arr in (self.sizes, self.lower, self.upper):
            arr.setflags(write=False)


def homogeneity_region(
    threshold: float,
    pseudo: PseudoOutcomes,
    ref,
    sizes: np.ndarray | None = None,
    threshold_is_surprise: bool = False,
) -> HomogeneityRegion:
    """Band ate +/- q_gamma * sd * sqrt(1/N_j - 1/N) over subgroup sizes.

    ``threshold`` is either gamma in (0,1) or, with ``threshold_is_surprise``,
    a surprise level s mapped through gamma = 1 - 2**-s.
    """
    gamma = gamma_from_surprise(threshold) if threshold_is_surprise else float(threshold)
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    n = pseudo.n
    if sizes is None:
        sizes = np.unique(np.rint(np.geomspace(2, n, 64)).astype(np.int64))
    sizes = np.unique(np.asarray(sizes, dtype=np.int64))
    if np.any(sizes < 1) or np.any(sizes > n):
        raise ValueError("region sizes must lie in [1, N]")
    q = float(ref.quantile(gamma))
    half = q * pseudo.sd * np.sqrt(1.0 / sizes - 1.0 / n)
    return HomogeneityRegion(
        method=ref.method,
        gamma=gamma,
        s_level=float(-math.log2(1.0 - gamma)),
        quantile=q,
        sizes=sizes,
        lower=pseudo.ate - half,
        upper=pseudo.ate + half,
    )


@dataclass(frozen=True)
class SimpleMeansStats:
    """Baseline statistics from raw group-mean differences (no adjustment)."""

    effects: np.ndarray  # treated-minus-control mean difference per subgroup
    t_stats: np.ndarray  # NaN where the subgroup is excluded
    included: np.ndarray  # bool mask of usable subgroups
    t_max: float
    overall_effect: float
    outcome_sd: float

    def __post_init__(self):
        for arr in (self.effects, self.t_stats, self.included):
            arr.setflags(write=False)

    @property
    def k_included(self) -> int:
        return int(self.included.sum())


def simple_means_stats(dataset: Dataset, subgroups: list[SubgroupIndex]) -> SimpleMeansStats:
    """Unadjusted subgroup-vs-overall contrasts of raw outcome means.

    t_j = (ybar_1j - ybar_0j - (ybar_1 - ybar_0)) / s_j with
    s_j = tau * sqrt(1/n_1j + 1/n_0j - 1/n_1 - 1/n_0) and tau the sample
    standard deviation of all outcomes. Subgroups whose bracket is not
    positive (both arms equal to the full arms) are excluded.
    """
    y = dataset.outcome
    a1 = (dataset.arm == 1).astype(np.float64)
    a0 = 1.0 - a1
    n1, n0 = float(a1.sum()), float(a0.sum())
    ybar1, ybar0 = float((y * a1).sum() / n1), float((y * a0).sum() / n0)
    tau = float(y.std(ddof=1))

    m = membership_matrix(subgroups)
    n1_j = m @ a1
    n0_j = m @ a0
    if np.any(n1_j < 1) or np.any(n0_j < 1):
        raise ValueError("every subgroup needs at least one patient per arm")
    sum1_j = m @ (y * a1)
    sum0_j = m @ (y * a0)
    effects = sum1_j / n1_j - sum0_j / n0_j
    bracket = 1.0 / n1_j + 1.0 / n0_j - 1.0 / n1 - 1.0 / n0
    included = bracket > 0.0
    t = np.full(len(subgroups), np.nan)
    t[included] = (effects[included] - (ybar1 - ybar0)) / (
        tau * np.sqrt(bracket[included])
    )
    if not np.any(included):
        raise ValueError("no subgroup distinct from the full population per arm")
    return SimpleMeansStats(
        effects=effects,
        t_stats=t,
        included=included,
        t_max=float(np.nanmax(np.abs(t))),
        overall_effect=ybar1 - ybar0,
        outcome_sd=tau,
    )
