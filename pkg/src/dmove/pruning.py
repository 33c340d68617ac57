"""Sets of action-tagged return distributions and dominance pruning.

Tags carry partial joint actions forward through elimination, so the final
factor's members name complete joint actions without a backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .distributions import CdfGrid, ReturnDistribution, convolve, esr_dominates


class TagConflictError(ValueError):
    """Two tags assign different actions to the same agent.

    Cross-summing sets whose tags disagree on a shared agent signals an
    elimination-order bug, not a recoverable condition.
    """


def merge_tags(t1: dict, t2: dict) -> dict:
    merged = dict(t1)
    for agent, action in t2.items():
        if merged.setdefault(agent, action) != action:
            raise TagConflictError(
                f"agent {agent}: conflicting actions {merged[agent]} and {action}"
            )
    return merged


@dataclass(frozen=True)
class TaggedDistribution:
    """A return distribution plus the partial joint action that produced it."""

    dist: ReturnDistribution
    tag: dict

    def key(self):
        return (tuple(sorted(self.tag.items())), self.dist.samples.tobytes())


class DistributionSet:
    """Insertion-ordered set of tagged distributions.

    Members identical in both tag and sample matrix are deduplicated;
    distinct tags with equal distributions are kept (ties stay in the set).
    """

    __slots__ = ("_members", "_keys")

    def __init__(self, members: Iterable[TaggedDistribution] = ()):
        self._members: list[TaggedDistribution] = []
        self._keys: set = set()
        for td in members:
            self.add(td)

    def add(self, td: TaggedDistribution) -> None:
        k = td.key()
        if k not in self._keys:
            self._keys.add(k)
            self._members.append(td)

    @property
    def members(self) -> tuple[TaggedDistribution, ...]:
        return tuple(self._members)

    def __len__(self) -> int:
        return len(self._members)

    def __iter__(self) -> Iterator[TaggedDistribution]:
        return iter(self._members)

    def __getitem__(self, i: int) -> TaggedDistribution:
        return self._members[i]

    def __repr__(self):
        return f"DistributionSet({len(self)} members)"


Pruner = Callable[[DistributionSet, CdfGrid], DistributionSet]


def no_prune(s: DistributionSet, grid: CdfGrid) -> DistributionSet:
    """Identity pruner for oracle / exhaustive-enumeration mode."""
    return s


def cross_sum(a: DistributionSet, b: DistributionSet, cap: int | None = None, seed=None) -> DistributionSet:
    """Pairwise sums of two sets: convolved distributions with merged tags.

    |result| = |a| * |b|; pairs are convolved in insertion order so a fixed
    seed gives a fixed result.
    """
    rng = np.random.default_rng(seed)
    out = DistributionSet()
    for ta in a:
        for tb in b:
            out.add(
                TaggedDistribution(
                    convolve(ta.dist, tb.dist, cap=cap, seed=rng),
                    merge_tags(ta.tag, tb.tag),
                )
            )
    return out


def esr_prune(s: DistributionSet, grid: CdfGrid) -> DistributionSet:
    """Remove every member dominated by another member of the set.

    Repeatedly scans for a maximal element (starting from the first member,
    replacing it whenever a later member dominates the current candidate),
    removes the candidate together with everything it dominates, and keeps
    the candidate.  Insertion order makes the scan deterministic; ties
    (equal grid CDFs) are never removed.
    """
    remaining = list(s)
    survivors: list[TaggedDistribution] = []
    while remaining:
        best = remaining[0]
        for cand in remaining:
            if esr_dominates(cand.dist, best.dist, grid):
                best = cand
        survivors.append(best)
        remaining = [
            td
            for td in remaining
            if td is not best and not esr_dominates(best.dist, td.dist, grid)
        ]
    return DistributionSet(survivors)


def prune_and_cross_sum(
    sets,
    grid: CdfGrid,
    cap: int | None = None,
    seed=None,
    prune: Pruner = esr_prune,
) -> DistributionSet:
    """Left-fold cross-sum with pruning after every pairwise combination.

    Incremental pruning: dominated members are discarded as soon as they
    appear instead of after the full product is materialised.  A single set
    folds to its own pruned form.
    """
    sets = list(sets)
    if not sets:
        raise ValueError("prune_and_cross_sum requires at least one set")
    rng = np.random.default_rng(seed)
    acc = prune(sets[0], grid)
    for nxt in sets[1:]:
        acc = prune(cross_sum(acc, nxt, cap=cap, seed=rng), grid)
    return acc
