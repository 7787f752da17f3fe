"""Doubly robust pseudo-outcomes and their subgroup averages.

Each patient's pseudo-outcome combines the two outcome regressions with an
inverse-propensity-weighted residual; its population mean is the average
treatment effect, and a subgroup's effect estimate is just the mean of the
pseudo-outcomes of its members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DegenerateScaleError, PositivityError
from .nuisance import NuisanceEstimates
from .subgroups import SubgroupIndex, member_counts, membership_matrix

POSITIVITY_EPS = 1e-6


@dataclass(frozen=True)
class PseudoOutcomes:
    values: np.ndarray  # one pseudo-outcome per row
    sd: float  # sample standard deviation (denominator N-1)
    ate: float  # mean of values; overall treatment effect estimate

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.values)


def compute_pseudo_outcomes(dataset: Dataset, nuisance: NuisanceEstimates) -> PseudoOutcomes:
    """Combine outcome regressions and propensity into per-patient effects.

    value_i = mu1(x_i) - mu0(x_i)
              + (a_i - pi_i) / (pi_i (1 - pi_i)) * (y_i - mu_{a_i}(x_i))
    """
    if len(nuisance.mu0_hat) != dataset.n:
        raise ValueError("nuisance estimates are not aligned to the dataset")
    pi = nuisance.pi_hat
    bad = np.flatnonzero((pi < POSITIVITY_EPS) | (pi > 1.0 - POSITIVITY_EPS))
    if bad.size:
        shown = ", ".join(str(int(i)) for i in bad[:10])
        raise PositivityError(
            f"propensity outside ({POSITIVITY_EPS}, {1 - POSITIVITY_EPS}) "
            f"for {bad.size} rows (first: {shown})"
        )
    a = dataset.arm.astype(np.float64)
    mu_a = np.where(dataset.arm == 1, nuisance.mu1_hat, nuisance.mu0_hat)
    values = nuisance.mu1_hat - nuisance.mu0_hat + (a - pi) / (pi * (1.0 - pi)) * (
        dataset.outcome - mu_a
    )
    sd = float(values.std(ddof=1))
    if sd == 0.0:
        raise DegenerateScaleError("all pseudo-outcomes are identical")
    return PseudoOutcomes(values=values, sd=sd, ate=float(values.mean()))


def subgroup_means(pseudo: PseudoOutcomes, subgroups: list[SubgroupIndex]) -> np.ndarray:
    """Per-subgroup mean pseudo-outcome, via the bit-vector index sets."""
    if not subgroups:
        return np.zeros(0)
    if subgroups[0].n_rows != pseudo.n:
        raise ValueError("subgroups are not aligned to the pseudo-outcomes")
    m = membership_matrix(subgroups)
    return (m @ pseudo.values) / member_counts(subgroups)
