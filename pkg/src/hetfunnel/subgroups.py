"""Exhaustive subgroup enumeration with bit-vector membership indexes.

Subgroups are all single binned-covariate levels plus all two-covariate
level combinations ("and"), subject to a per-arm minimum size. Membership
is stored as packed bit-vectors so that overlap counts (needed O(k^2)
times by the correlation model) and subgroup sums reduce to popcounts and
one dense matrix product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BinnedCovariate, Dataset

PAIR_SEPARATOR = " & "


@dataclass(frozen=True)
class SubgroupDef:
    """One or two (covariate, level) constraints joined with "and"."""

    terms: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not 1 <= len(self.terms) <= 2:
            raise ValueError("a subgroup has 1 or 2 terms")
        if len(self.terms) == 2 and self.terms[0][0] == self.terms[1][0]:
            raise ValueError("pair terms must reference distinct covariates")

    @property
    def label(self) -> str:
        return PAIR_SEPARATOR.join(f"{cov}={lev}" for cov, lev in self.terms)


@dataclass(frozen=True)
class SubgroupIndex:
    """Membership index of one subgroup over a fixed dataset row order."""

    definition: SubgroupDef
    bits: np.ndarray  # packed uint8 bit-vector, little-bit-order by row
    n_rows: int  # dataset size N
    n_members: int  # N_j
    n_treated: int  # members in arm 1
    n_control: int  # members in arm 0
    duplicate_of: str | None = None  # label of an earlier identical member set

    def __post_init__(self):
        self.bits.setflags(write=False)

    @property
    def label(self) -> str:
        return self.definition.label

    def mask(self) -> np.ndarray:
        """Boolean membership vector of length n_rows."""
        return np.unpackbits(self.bits, count=self.n_rows).astype(bool)

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask())


def _pack(mask: np.ndarray) -> np.ndarray:
    return np.packbits(mask.astype(np.uint8))


def _popcount(bits: np.ndarray) -> int:
    return int(np.bitwise_count(bits).sum())


def subgroup_from_mask(
    mask: np.ndarray, arm: np.ndarray, definition: SubgroupDef
) -> SubgroupIndex:
    mask = np.asarray(mask, dtype=bool)
    n1 = int(np.count_nonzero(mask & (arm == 1)))
    n0 = int(np.count_nonzero(mask & (arm == 0)))
    return SubgroupIndex(
        definition=definition,
        bits=_pack(mask),
        n_rows=len(mask),
        n_members=n1 + n0,
        n_treated=n1,
        n_control=n0,
    )


def overlap_count(a: SubgroupIndex, b: SubgroupIndex) -> int:
    """Number of rows belonging to both subgroups (|members(a) & members(b)|)."""
    if a.n_rows != b.n_rows:
        raise ValueError("subgroup indexes built over datasets of different sizes")
    return _popcount(a.bits & b.bits)


def enumerate_subgroups(
    dataset: Dataset,
    binned: list[BinnedCovariate],
    min_per_arm: int,
    max_depth: int = 2,
) -> list[SubgroupIndex]:
    """All single levels and two-covariate level pairs passing the size filter.

    A subgroup is kept when both arms contain at least ``min_per_arm``
    members. Subgroups identical to the full population are dropped (their
    difference-to-overall variance is zero). Order is deterministic:
    covariates as given, levels in level order, singles before pairs.
    Definitions that duplicate an earlier subgroup's member set are kept but
    marked with the earlier label.
    """
    if min_per_arm < 1:
        raise ValueError("min_per_arm must be >= 1")
    if max_depth not in (1, 2):
        raise ValueError("only depths 1 and 2 are supported")
    arm = dataset.arm
    n = dataset.n
    treated = arm == 1

    # Per-covariate per-level masks and arm counts, reused by the pair pass.
    level_masks: list[list[np.ndarray]] = []
    for b in binned:
        masks = [b.assignment == lev for lev in range(b.n_levels)]
        level_masks.append(masks)

    candidates: list[tuple[SubgroupDef, np.ndarray]] = []
    for b, masks in zip(binned, level_masks):
        for lev, mask in enumerate(masks):
            candidates.append((SubgroupDef(((b.name, b.levels[lev]),)), mask))
    if max_depth == 2:
        for i in range(len(binned)):
            for j in range(i + 1, len(binned)):
                bi, bj = binned[i], binned[j]
                for li, mi in enumerate(level_masks[i]):
                    for lj, mj in enumerate(level_masks[j]):
                        definition = SubgroupDef(
                            ((bi.name, bi.levels[li]), (bj.name, bj.levels[lj]))
                        )
                        candidates.append((definition, mi & mj))

    out: list[SubgroupIndex] = []
    seen: dict[bytes, str] = {}
    for definition, mask in candidates:
        n1 = int(np.count_nonzero(mask & treated))
        n0 = int(np.count_nonzero(mask)) - n1
        if n1 < min_per_arm or n0 < min_per_arm:
            continue
        if n1 + n0 == n:
            continue  # identical to the full population
        bits = _pack(mask)
        key = bits.tobytes()
        first = seen.get(key)
        if first is None:
            seen[key] = definition.label
        out.append(
            SubgroupIndex(
                definition=definition,
                bits=bits,
                n_rows=n,
                n_members=n1 + n0,
                n_treated=n1,
                n_control=n0,
                duplicate_of=first,
            )
        )
    return out


def membership_matrix(subgroups: list[SubgroupIndex], dtype=np.float64) -> np.ndarray:
    """Dense (k, N) membership matrix for batched subgroup sums."""
    if not subgroups:
        return np.zeros((0, 0), dtype=dtype)
    n = subgroups[0].n_rows
    out = np.empty((len(subgroups), n), dtype=dtype)
    for i, s in enumerate(subgroups):
        if s.n_rows != n:
            raise ValueError("subgroup indexes built over datasets of different sizes")
        out[i] = np.unpackbits(s.bits, count=n)
    return out


def member_counts(subgroups: list[SubgroupIndex]) -> np.ndarray:
    return np.asarray([s.n_members for s in subgroups], dtype=np.float64)


def overlap_matrix(subgroups: list[SubgroupIndex]) -> np.ndarray:
    """All pairwise overlap counts N_ij as a dense symmetric matrix."""
    m = membership_matrix(subgroups, dtype=np.float64)
    counts = m @ m.T
    return np.rint(counts)
