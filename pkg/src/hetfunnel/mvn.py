"""Multivariate normal rectangle probabilities by randomized quasi-Monte Carlo.

The probability P(lower <= Z <= upper) for Z ~ N(0, R) is rewritten by the
separation-of-variables transform: a Cholesky factorization with diagonal
pivoting (variables reordered so the narrowest conditional ranges integrate
first) turns the rectangle integral into an integral over the unit cube,
which is evaluated with scrambled Sobol points. Batches with independent
scrambles give a standard-error estimate; everything is deterministic given
the seed. Rank-deficient correlation matrices (zero pivots) are handled by
treating the degenerate coordinates as deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .errors import MvnLimitError

_TINY = 1e-15
_CHOL_EPS = 1e-10


@dataclass(frozen=True)
class MvnConfig:
    base_exponent: int = 11  # first round uses 2**11 points per batch
    n_batches: int = 8
    target_se: float = 2.5e-3
    max_rounds: int = 4  # each round doubles the points per batch
    k_limit: int = 512  # refuse larger problems (permutation scales better)


@dataclass(frozen=True)
class MvnResult:
    prob: float
    se: float
    n_samples: int
    converged: bool  # reached target_se within the sample budget


def _ordered_cholesky(corr: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Pivoted Cholesky for integration order, tolerating semidefiniteness.

    At each step the remaining variable with the smallest conditional
    probability mass (given truncated-normal expectations of the earlier
    coordinates) is moved next, which concentrates the integrand's variation
    in the leading dimensions. Returns the permuted factor and bounds.
    """
    k = corr.shape[0]
    c = np.array(corr, dtype=np.float64, copy=True)
    a = np.array(lower, dtype=np.float64, copy=True)
    b = np.array(upper, dtype=np.float64, copy=True)
    chol = np.zeros((k, k))
    y = np.zeros(k)

    for i in range(k):
        done = chol[:, :i]
        cond_var = np.diag(c) - np.einsum("ij,ij->i", done, done)
        cond_var = np.maximum(cond_var, 0.0)
        shift = done @ y[:i]
        denom = np.sqrt(cond_var)
        with np.errstate(divide="ignore", invalid="ignore"):
            at = np.where(denom > _CHOL_EPS, (a - shift) / denom, np.where(a - shift <= 0, -np.inf, np.inf))
            bt = np.where(denom > _CHOL_EPS, (b - shift) / denom, np.where(b - shift >= 0, np.inf, -np.inf))
        mass = ndtr(bt) - ndtr(at)
        mass[:i] = np.inf  # already placed
        j = int(np.argmin(mass))

        if j != i:
            for arr in (a, b, y):
                arr[[i, j]] = arr[[j, i]]
            c[[i, j], :] = c[[j, i], :]
            c[:, [i, j]] = c[:, [j, i]]
            chol[[i, j], :] = chol[[j, i], :]

        var_i = c[i, i] - chol[i, :i] @ chol[i, :i]
        if var_i > _CHOL_EPS**2:
            chol[i, i] = np.sqrt(var_i)
            if i + 1 < k:
                rest = c[i + 1 :, i] - chol[i + 1 :, :i] @ chol[i, :i]
                chol[i + 1 :, i] = rest / chol[i, i]
        else:
            chol[i, i] = 0.0  # coordinate i is a.s. determined by earlier ones

        # Truncated-normal expectation used to condition later pivots.
        if chol[i, i] > 0.0:
            shift_i = chol[i, :i] @ y[:i]
            ati = (a[i] - shift_i) / chol[i, i]
            bti = (b[i] - shift_i) / chol[i, i]
            mass_i = ndtr(bti) - ndtr(ati)
            if mass_i > _TINY:
                phi_a = np.exp(-0.5 * ati**2) / np.sqrt(2 * np.pi) if np.isfinite(ati) else 0.0
                phi_b = np.exp(-0.5 * bti**2) / np.sqrt(2 * np.pi) if np.isfinite(bti) else 0.0
                y[i] = (phi_a - phi_b) / mass_i
            else:
                y[i] = 0.5 * (np.clip(ati, -10, 10) + np.clip(bti, -10, 10))
        else:
            y[i] = 0.0
    return chol, a, b


def _integrate_batch(chol, a, b, w):
    """Evaluate the transformed integrand at one batch of unit-cube points."""
    k = chol.shape[0]
    m = w.shape[0]
    if chol[0, 0] > 0.0:
        d = np.full(m, ndtr(a[0] / chol[0, 0]))
        e = np.full(m, ndtr(b[0] / chol[0, 0]))
    else:
        d = np.full(m, float(a[0] > 0.0))
        e = np.full(m, float(b[0] >= 0.0))
    f = e - d
    ys = np.empty((m, max(k - 1, 1)))
    for i in range(1, k):
        u = d + w[:, i - 1] * (e - d)
        np.clip(u, _TINY, 1.0 - _TINY, out=u)
        ys[:, i - 1] = ndtri(u)
        shift = ys[:, :i] @ chol[i, :i]
        if chol[i, i] > 0.0:
            d = ndtr((a[i] - shift) / chol[i, i])
            e = ndtr((b[i] - shift) / chol[i, i])
        else:
            d = (shift < a[i]).astype(np.float64)
            e = (shift <= b[i]).astype(np.float64)
        f = f * np.maximum(e - d, 0.0)
    return f


def rectangle_probability(
    corr: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    config: MvnConfig = MvnConfig(),
    seed: int = 0,
) -> MvnResult:
    """P(lower <= Z <= upper) for Z ~ N(0, corr) with a standard-error estimate.

    Rounds of scrambled-Sobol batches run until the between-batch standard
    error reaches ``config.target_se`` or the budget is exhausted; the final
    round's estimate is returned and flagged accordingly.
    """
    corr = np.asarray(corr, dtype=np.float64)
    k = corr.shape[0]
    if corr.shape != (k, k):
        raise ValueError("correlation matrix must be square")
    if k > config.k_limit:
        raise MvnLimitError(
            f"{k} subgroups exceed the numerical-integration limit of "
            f"{config.k_limit}; use the permutation method instead"
        )
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if k == 0:
        return MvnResult(prob=1.0, se=0.0, n_samples=0, converged=True)
    if k == 1:
        p = float(ndtr(upper[0]) - ndtr(lower[0]))
        return MvnResult(prob=p, se=0.0, n_samples=0, converged=True)

    chol, a, b = _ordered_cholesky(corr, lower, upper)
    children = np.random.SeedSequence(entropy=seed).spawn(config.max_rounds * config.n_batches)

    prob = se = 0.0
    n_samples = 0
    converged = False
    for rnd in range(config.max_rounds):
        exponent = config.base_exponent + rnd
        means = np.empty(config.n_batches)
        for batch in range(config.n_batches):
            child = children[rnd * config.n_batches + batch]
            engine = qmc.Sobol(d=k - 1, scramble=True, seed=np.random.default_rng(child))
            w = engine.random_base2(exponent)
            means[batch] = float(_integrate_batch(chol, a, b, w).mean())
        prob = float(means.mean())
        se = float(means.std(ddof=1) / np.sqrt(config.n_batches))
        n_samples = config.n_batches * 2**exponent
        if se <= config.target_se:
            converged = True
            break
    return MvnResult(prob=min(max(prob, 0.0), 1.0), se=se, n_samples=n_samples, converged=converged)


def symmetric_rectangle_probability(
    corr: np.ndarray, t: float, config: MvnConfig = MvnConfig(), seed: int = 0
) -> MvnResult:
    """P(-t <= Z <= t componentwise) for Z ~ N(0, corr)."""
    k = corr.shape[0]
    if t <= 0:
        return MvnResult(prob=0.0, se=0.0, n_samples=0, converged=True)
    bound = np.full(k, float(t))
    return rectangle_probability(corr, -bound, bound, config=config, seed=seed)
