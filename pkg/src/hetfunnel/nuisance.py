"""Cross-fitted outcome regressions and propensity scores.

Both arms' mean-outcome functions are fit out-of-fold so that no patient's
prediction ever uses their own outcome. Learners are ordinary least squares
(with a deterministic ridge fallback on singular designs) and an L1-penalized
linear model solved by cyclic coordinate descent on standardized columns,
with the penalty weight chosen by an inner cross-validation over a grid.
The propensity score in a randomized trial is a known constant; an
"empirical" rule using the observed treated share is available as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CATEGORICAL, Dataset
from .errors import FoldError

OLS = "ols"
LASSO = "lasso"


@dataclass(frozen=True)
class FoldAssignment:
    n: int
    k: int
    fold_of: np.ndarray  # fold id per row, shape (n,)
    seed: int

    def __post_init__(self):
        self.fold_of.setflags(write=False)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k)


def assign_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Uniformly random partition into k folds whose sizes differ by <= 1."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int32)
    # Row order is shuffled, then folds are dealt round-robin.
    fold_of[order] = np.arange(n, dtype=np.int32) % k
    return FoldAssignment(n=n, k=k, fold_of=fold_of, seed=seed)


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = LASSO
    lam_grid: tuple[float, ...] | None = None  # None: data-driven log grid
    n_lambdas: int = 16
    lam_min_ratio: float = 1e-2
    cv_folds: int = 5
    tol: float = 1e-7
    max_sweeps: int = 1000

    def __post_init__(self):
        if self.kind not in (OLS, LASSO):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.lam_grid is not None:
            grid = tuple(self.lam_grid)
            if any(l <= 0 for l in grid) or list(grid) != sorted(grid):
                raise ValueError("lam_grid must be strictly positive and sorted")


@dataclass(frozen=True)
class PropensityRule:
    kind: str = "known"  # "known" or "empirical"
    value: float | None = None  # known(p); None means the observed treated share

    def resolve(self, dataset: Dataset) -> float:
        if self.kind == "empirical" or self.value is None:
            return dataset.n_treated / dataset.n
        return float(self.value)


def encode_design(dataset: Dataset) -> np.ndarray:
    """Deterministic design matrix: numeric columns as-is, categoricals as
    indicator columns for every level after the first declared one."""
    cols: list[np.ndarray] = []
    for cov in dataset.schema:
        col = dataset.columns[cov.name]
        if cov.kind == CATEGORICAL:
            for code in range(1, len(cov.levels)):
                cols.append((col == code).astype(np.float64))
        else:
            cols.append(col.astype(np.float64))
    if not cols:
        return np.zeros((dataset.n, 0))
    return np.column_stack(cols)


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray  # on the original (unstandardized) column scale
    lam: float | None = None  # chosen penalty, lasso only

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + x @ self.coef


def _standardize(x: np.ndarray):
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (x - center) / scale, center, scale


def _cd_lasso_path(gram, cov_xy, lams, tol, max_sweeps):
    """Coordinate descent over a descending penalty path with warm starts.

    ``gram`` is X'X/n of standardized columns (unit diagonal except for
    zero-variance columns, which stay inactive) and ``cov_xy`` is X'y/n with
    y centered. The running vector q = gram @ beta is updated incrementally
    so each coordinate step costs O(1) plus one vector update when it moves.
    Returns one coefficient vector per penalty value.
    """
    p = len(cov_xy)
    beta = np.zeros(p)
    q = np.zeros(p)  # gram @ beta
    out = np.empty((len(lams), p))
    usable = gram.diagonal() > 0.5
    cols = {j: gram[:, j] for j in np.flatnonzero(usable)}

    def sweep(coords, lam):
        nonlocal q
        max_step = 0.0
        for j in coords:
            old = beta[j]
            z = cov_xy[j] - q[j] + old
            new = 0.0 if abs(z) <= lam else (z - lam if z > 0 else z + lam)
            if new != old:
                beta[j] = new
                q += cols[j] * (new - old)
                step = abs(new - old)
                if step > max_step:
                    max_step = step
        return max_step

    all_coords = list(cols)
    for li, lam in enumerate(lams):
        for _ in range(max_sweeps):
            # Full pass lets coordinates (re-)enter, then the nonzero set is
            # iterated to convergence before checking the full pass again.
            if sweep(all_coords, lam) <= tol:
                break
            active = [j for j in all_coords if beta[j] != 0.0]
            for _ in range(max_sweeps):
                if sweep(active, lam) <= tol:
                    break
        out[li] = beta
    return out


def _ols_coef(x_std: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares on standardized columns with a ridge fallback when the
    normal equations are singular (eps = 1e-8 * trace(X'X)/p)."""
    n, p = x_std.shape
    if p == 0:
        return np.zeros(0)
    gram = x_std.T @ x_std
    rhs = x_std.T @ y
    try:
        coef = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError
        # Reject solutions from numerically singular systems.
        if np.linalg.cond(gram) > 1e12:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        eps = 1e-8 * np.trace(gram) / p
        coef = np.linalg.solve(gram + eps * np.eye(p), rhs)
    return coef


def lasso_lambda_max(x_std: np.ndarray, y_centered: np.ndarray) -> float:
    n = len(y_centered)
    if x_std.shape[1] == 0:
        return 1.0
    return float(np.max(np.abs(x_std.T @ y_centered)) / n)


def _default_grid(lam_max: float, spec: LearnerSpec) -> np.ndarray:
    if lam_max <= 0:
        lam_max = 1e-3
    return np.geomspace(lam_max, lam_max * spec.lam_min_ratio, spec.n_lambdas)


def fit_regressor(x: np.ndarray, y: np.ndarray, spec: LearnerSpec) -> LinearModel:
    """Fit one outcome regression; the intercept is never penalized.

    Columns are centered and scaled by the statistics of the rows being fit,
    so penalties act on comparable scales and no information leaks from
    held-out rows.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(y):
        raise ValueError("design matrix and response are misaligned")
    if len(y) < 2:
        raise ValueError("need at least 2 rows")
    y_mean = float(y.mean())
    if np.ptp(y) == 0.0 or x.shape[1] == 0:
        return LinearModel(intercept=y_mean, coef=np.zeros(x.shape[1]))

    x_std, center, scale = _standardize(x)
    y_c = y - y_mean

    if spec.kind == OLS:
        coef_std = _ols_coef(x_std, y_c)
        coef = coef_std / scale
        return LinearModel(intercept=y_mean - float(center @ coef), coef=coef)

    # Lasso: choose the penalty by inner cross-validation over the grid.
    n = len(y)
    tol = spec.tol * max(1.0, float(y_c.std()))
    if spec.lam_grid is not None:
        lams = np.asarray(sorted(spec.lam_grid, reverse=True), dtype=np.float64)
    else:
        lams = _default_grid(lasso_lambda_max(x_std, y_c), spec)

    lam = float(lams[0]) if len(lams) == 1 else None
    if lam is None:
        k = min(spec.cv_folds, n)
        fold_of = np.arange(n) % k  # deterministic inner folds
        cv_err = np.zeros(len(lams))
        for f in range(k):
            test = fold_of == f
            train = ~test
            xt = x[train]
            yt = y[train]
            xt_std, t_center, t_scale = _standardize(xt)
            yt_mean = yt.mean()
            gram = (xt_std.T @ xt_std) / len(yt)
            cov_xy = (xt_std.T @ (yt - yt_mean)) / len(yt)
            path = _cd_lasso_path(gram, cov_xy, lams, tol, spec.max_sweeps)
            x_test_std = (x[test] - t_center) / t_scale
            preds = yt_mean + path @ x_test_std.T  # (n_lams, n_test)
            cv_err += np.square(preds - y[test]).sum(axis=1)
        cv_err /= n
        # Ties favor the larger penalty (sparser model).
        lam = float(lams[int(np.argmin(cv_err))])

    gram = (x_std.T @ x_std) / n
    cov_xy = (x_std.T @ y_c) / n
    coef_std = _cd_lasso_path(gram, cov_xy, np.asarray([lam]), tol, spec.max_sweeps)[0]
    coef = coef_std / scale
    return LinearModel(intercept=y_mean - float(center @ coef), coef=coef, lam=lam)


@dataclass(frozen=True)
class NuisanceEstimates:
    mu0_hat: np.ndarray  # out-of-fold control-arm mean predictions
    mu1_hat: np.ndarray  # out-of-fold treated-arm mean predictions
    pi_hat: np.ndarray  # propensity per row, in (0, 1)
    folds: FoldAssignment
    spec: LearnerSpec
    propensity: PropensityRule = field(default_factory=PropensityRule)

    def __post_init__(self):
        for arr in (self.mu0_hat, self.mu1_hat, self.pi_hat):
            arr.setflags(write=False)
        if not np.all(np.isfinite(self.mu0_hat)) or not np.all(np.isfinite(self.mu1_hat)):
            raise FoldError("non-finite outcome predictions")
        if np.any(self.pi_hat <= 0.0) or np.any(self.pi_hat >= 1.0):
            raise ValueError("propensity scores must lie strictly inside (0, 1)")


def cross_fit_nuisance(
    dataset: Dataset,
    folds: FoldAssignment,
    spec: LearnerSpec,
    propensity: PropensityRule = PropensityRule(),
) -> NuisanceEstimates:
    """Out-of-fold predictions for both arms' outcome regressions.

    For each fold, the two arm models are fit on all rows outside it and used
    to predict every row inside it, so row i's predictions never depend on
    row i's outcome.
    """
    if folds.n != dataset.n:
        raise ValueError("fold assignment does not match the dataset")
    x = encode_design(dataset)
    y = dataset.outcome
    arm = dataset.arm
    mu0 = np.empty(dataset.n)
    mu1 = np.empty(dataset.n)
    for f in range(folds.k):
        held = folds.fold_of == f
        train = ~held
        train0 = train & (arm == 0)
        train1 = train & (arm == 1)
        if train0.sum() < 2 or train1.sum() < 2:
            raise FoldError(f"fold {f}: training complement lacks an arm (needs >= 2 per arm)")
        model0 = fit_regressor(x[train0], y[train0], spec)
        model1 = fit_regressor(x[train1], y[train1], spec)
        mu0[held] = model0.predict(x[held])
        mu1[held] = model1.predict(x[held])
    p = propensity.resolve(dataset)
    pi = np.full(dataset.n, p, dtype=np.float64)
    return NuisanceEstimates(
        mu0_hat=mu0, mu1_hat=mu1, pi_hat=pi, folds=folds, spec=spec, propensity=propensity
    )
