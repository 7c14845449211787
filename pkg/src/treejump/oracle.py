"""Exact answers for tiny instances, by enumerating every seating path.

The likelihood sums, over every sequence of seating paths that produces the
observed values, the product of the generative path probabilities.  States
are memoised on the multiset of (label, size) clusters per restaurant, which
fully determines all future seating probabilities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .crf import BaseMeasure
from .jumpmodel import prior_log_pmf
from .smc import observation_order
from .treemodel import Tree, _check_jumps, prune


class OracleLimitError(ValueError):
    pass


@dataclass(frozen=True)
class TruncationSpec:
    b_max: int = 2
    max_observations: int = 8
    max_groups: int = 8

    def __post_init__(self):
        if self.b_max < 0:
            raise ValueError("b_max must be nonnegative")


def _seatings(state, g, value, group_parent, discounts, base):
    """Yield (probability, new_state) for every path at ``g`` that produces
    ``value``."""
    clusters = state[g]
    n = sum(c for _, c in clusters)
    d = discounts[g]
    if n:
        for k, (lab, c) in enumerate(clusters):
            if lab == value:
                new = clusters[:k] + ((lab, c + 1),) + clusters[k + 1:]
                yield (c - d) / n, _replace(state, g, new)
        p_new = len(clusters) * d / n
    else:
        p_new = 1.0
    if p_new == 0:
        return
    opened = _replace(state, g, clusters + ((value, 1),))
    parent = group_parent[g]
    if parent < 0:
        if base[value] > 0:
            yield p_new * base[value], opened
        return
    for p, upper in _seatings(opened, parent, value, group_parent, discounts, base):
        yield p_new * p, upper


def _replace(state, g, clusters):
    return state[:g] + (tuple(sorted(clusters)),) + state[g + 1:]


def exact_likelihood(jumps, tree: Tree, discount: float, base: BaseMeasure | None = None,
                     trunc: TruncationSpec = TruncationSpec(), order=None) -> float:
    """p(X | jumps) by full enumeration."""
    b = _check_jumps(tree, jumps)
    if base is None:
        base = BaseMeasure.uniform(tree.n_categories)
    if tree.n_observations > trunc.max_observations:
        raise OracleLimitError(f"{tree.n_observations} observations exceed the limit "
                               f"{trunc.max_observations}")
    pruned = prune(tree, b)
    if pruned.n_groups > trunc.max_groups:
        raise OracleLimitError(f"{pruned.n_groups} groups exceed the limit {trunc.max_groups}")
    if order is None:
        order = observation_order(tree, pruned)
    steps = tuple((int(pruned.group_of[i]), tree.observations[i][j]) for i, j in order)
    group_parent = tuple(int(x) for x in pruned.group_parent)
    discounts = tuple(discount if g == 0 else discount ** int(pruned.edge_jumps[g])
                      for g in range(pruned.n_groups))
    probs = tuple(float(x) for x in base.probabilities)

    @lru_cache(maxsize=None)
    def rest(t, state):
        if t == len(steps):
            return 1.0
        g, value = steps[t]
        return sum(p * rest(t + 1, new)
                   for p, new in _seatings(state, g, value, group_parent, discounts, probs))

    return rest(0, ((),) * pruned.n_groups)


def exact_jump_posterior(tree: Tree, discount: float, base: BaseMeasure | None, lam: float,
                         trunc: TruncationSpec = TruncationSpec()) -> dict:
    """P(b | X, lam) over all b with every entry at most ``trunc.b_max``,
    renormalised over that set.  ``tree`` must carry rescaled lengths."""
    n_states = (trunc.b_max + 1) ** tree.n_branches
    if n_states > 100_000:
        raise OracleLimitError(f"{n_states} jump vectors to enumerate")
    log_mass = {}
    for b in itertools.product(range(trunc.b_max + 1), repeat=tree.n_branches):
        prior = prior_log_pmf(b, lam, tree)
        if prior == -math.inf:
            continue
        like = exact_likelihood(b, tree, discount, base, trunc)
        if like > 0:
            log_mass[b] = prior + math.log(like)
    top = max(log_mass.values())
    mass = {b: math.exp(v - top) for b, v in log_mass.items()}
    total = math.fsum(mass.values())
    return {b: m / total for b, m in mass.items()}


def unnormalized_jump_mass(jumps, tree, discount, base, lam, trunc=TruncationSpec()) -> float:
    return math.exp(prior_log_pmf(jumps, lam, tree)) * exact_likelihood(jumps, tree, discount, base, trunc)


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_distribution(samples, b_max=None) -> dict:
    """Normalised frequencies of jump vectors (rows of ``samples``),
    optionally restricted to vectors with every entry at most ``b_max``."""
    samples = np.asarray(samples)
    if b_max is not None:
        samples = samples[np.all(samples <= b_max, axis=1)]
    rows, counts = np.unique(samples, axis=0, return_counts=True)
    total = counts.sum()
    return {tuple(int(x) for x in r): c / total for r, c in zip(rows, counts)}
