"""Synthetic instances for detection experiments, and their scoring."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.metrics import auc, roc_curve

from . import pmcmc, posterior
from .treemodel import Tree, prune

TWO_GROUP = "two-group"
NESTED = "nested"
SCHEMES = (TWO_GROUP, NESTED)


def random_binary_tree(n_leaves: int, rng: np.random.Generator, length_sampler=None) -> Tree:
    """Uniform random rooted binary topology (Remy's algorithm).

    Branch lengths are drawn by ``length_sampler(rng, size)``, exponential
    with mean 1 by default.  Nodes are numbered in preorder and leaves are
    labelled ``t1 .. tn`` in that order.
    """
    if n_leaves < 2:
        raise ValueError("need at least two leaves")
    n_total = 2 * n_leaves - 1
    par = np.full(n_total, -1, dtype=np.int64)
    kids = [[] for _ in range(n_total)]
    root = 0
    n_used = 1
    for leaf_idx in range(1, n_leaves):
        target = int(rng.integers(n_used))
        inner = n_used
        leaf = n_used + 1
        n_used += 2
        up = par[target]
        par[inner] = up
        if up >= 0:
            kids[up][kids[up].index(target)] = inner
        else:
            root = inner
        pair = [target, leaf] if rng.random() < 0.5 else [leaf, target]
        kids[inner] = pair
        par[target] = inner
        par[leaf] = inner

    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(reversed(kids[v]))
    new_id = np.empty(n_total, dtype=np.int64)
    new_id[order] = np.arange(n_total)
    parent = np.array([-1] + [int(new_id[par[v]]) for v in order[1:]], dtype=np.int64)
    if length_sampler is None:
        lengths = rng.exponential(1.0, size=n_total - 1)
    else:
        lengths = np.asarray(length_sampler(rng, n_total - 1), dtype=float)
    length = np.concatenate([[0.0], lengths])
    labels = []
    count = 0
    for v in order:
        if kids[v]:
            labels.append(None)
        else:
            count += 1
            labels.append(f"t{count}")
    return Tree(parent, length, tuple(labels))


def nested_targets(count: int) -> tuple:
    """Leaf fractions 3/4, 1/2, 1/4 for three nested jumps, and the analogous
    evenly spaced values for other counts."""
    return tuple(1 - (i + 1) / (count + 1) for i in range(count))


def place_jumps(tree: Tree, window=(0.1, 0.5), count: int = 1, nested: bool = False,
                rng: np.random.Generator | None = None, targets=None) -> list:
    """Choose jump branches.

    Without ``nested``, ``count`` distinct branches are drawn uniformly from
    those whose subtree holds a leaf fraction inside ``window``.  With
    ``nested``, the chain of ``count`` branches, each below the previous one,
    whose leaf fractions are closest (summed absolute error) to ``targets``
    is returned, outermost first.
    """
    n_leaves = len(tree.leaves)
    frac = tree.subtree_leaf_counts[1:] / n_leaves
    if count < 1:
        raise ValueError("need at least one jump branch")
    if nested:
        return _nested_chain(tree, frac, count, targets or nested_targets(count))
    lo, hi = window
    if not 0 < lo < hi <= 1:
        raise ValueError("window must satisfy 0 < lo < hi <= 1")
    eligible = np.flatnonzero((frac >= lo) & (frac <= hi))
    if len(eligible) < count:
        raise ValueError(f"only {len(eligible)} branches have a leaf fraction in [{lo}, {hi}]")
    if rng is None:
        rng = np.random.default_rng()
    return sorted(int(j) for j in rng.choice(eligible, size=count, replace=False))


def _nested_chain(tree, frac, count, targets):
    if len(targets) != count:
        raise ValueError("need one target fraction per jump")
    n = tree.n_nodes
    parent = tree.parent
    # cost[v]: best cost of a chain of length i+1 ending at the branch above v
    cost = np.full(n, math.inf)
    cost[1:] = np.abs(frac - targets[0])
    back = []
    for t in targets[1:]:
        best_above = np.full(n, math.inf)
        arg_above = np.full(n, -1, dtype=np.int64)
        for v in range(2, n):
            u = parent[v]
            if u == 0:
                continue
            if cost[u] <= best_above[u]:
                best_above[v], arg_above[v] = cost[u], u
            else:
                best_above[v], arg_above[v] = best_above[u], arg_above[u]
        new = np.full(n, math.inf)
        new[1:] = best_above[1:] + np.abs(frac - t)
        back.append(arg_above)
        cost = new
    if not np.isfinite(cost).any():
        raise ValueError(f"tree too shallow for {count} nested jumps")
    v = int(np.argmin(cost))
    chain = [v]
    for arg in reversed(back):
        v = int(arg[v])
        chain.append(v)
    return [c - 1 for c in reversed(chain)]


def group_probabilities(scheme: str, p: float, n_jumps: int) -> np.ndarray:
    """Success probability indexed by the number of jump branches above."""
    if scheme == TWO_GROUP:
        bound = 1.0
        probs = np.array([0.5 - p / 2, 0.5 + p / 2])
    elif scheme == NESTED:
        bound = 1.0 / n_jumps
        probs = 0.5 + (np.arange(n_jumps + 1) - n_jumps / 2) * p
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not 0 <= p <= bound:
        raise ValueError(f"p must lie in [0, {bound:.4g}] for the {scheme} scheme")
    return probs


@dataclass
class GroundTruth:
    scheme: str
    p: float
    jump_branches: list
    leaf_probabilities: dict
    group_probabilities: list
    emp_tv: list

    def indicator(self, n_branches: int) -> np.ndarray:
        out = np.zeros(n_branches, dtype=bool)
        out[self.jump_branches] = True
        return out

    @property
    def mean_emp_tv(self) -> float:
        return float(np.mean(self.emp_tv))

    def to_dict(self) -> dict:
        return asdict(self)


def simulate_dataset(tree: Tree, jump_branches, p: float, scheme: str,
                     rng: np.random.Generator):
    """One Bernoulli observation per leaf; returns ``(tree, truth)``."""
    jump_branches = [int(j) for j in jump_branches]
    if not jump_branches:
        raise ValueError("need at least one jump branch")
    if scheme == TWO_GROUP and len(jump_branches) != 1:
        raise ValueError("the two-group scheme takes exactly one jump branch")
    probs = group_probabilities(scheme, p, len(jump_branches))
    b = np.zeros(tree.n_branches, dtype=np.int64)
    b[jump_branches] = 1
    pruned = prune(tree, b)
    # number of jump branches above each group
    level = np.zeros(pruned.n_groups, dtype=np.int64)
    for g in range(1, pruned.n_groups):
        level[g] = level[pruned.group_parent[g]] + 1
    if scheme == NESTED and level.max() != len(jump_branches):
        raise ValueError("nested jump branches must form a single chain")
    group_p = probs[level]
    leaves = tree.leaves
    obs = [[] for _ in range(tree.n_nodes)]
    values = rng.random(len(leaves)) < group_p[pruned.group_of[list(leaves)]]
    for leaf, x in zip(leaves, values):
        obs[leaf].append(int(x))
    data = tree.with_observations(obs, 2)

    emp = []
    for j in jump_branches:
        below = pruned.group_of[j + 1]
        above = pruned.group_parent[below]
        emp.append(_empirical_tv(data, pruned.group_of, below, above))
    truth = GroundTruth(
        scheme=scheme, p=float(p), jump_branches=jump_branches,
        leaf_probabilities={tree.node_name(v): float(group_p[pruned.group_of[v]]) for v in leaves},
        group_probabilities=[float(x) for x in group_p],
        emp_tv=emp,
    )
    return data, truth


def _empirical_tv(tree, group_of, g1, g2) -> float:
    x1 = [v for i in np.flatnonzero(group_of == g1) for v in tree.observations[i]]
    x2 = [v for i in np.flatnonzero(group_of == g2) for v in tree.observations[i]]
    if not x1 or not x2:
        return math.nan
    return abs(float(np.mean(x1)) - float(np.mean(x2)))


def roc_auc(scores, truth):
    """ROC points ``(fpr, tpr)`` from a threshold sweep, and trapezoidal AUC.

    Tied scores enter as a single threshold, which averages over their
    orderings.
    """
    truth = np.asarray(truth, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    if truth.shape != scores.shape:
        raise ValueError("scores and truth differ in length")
    if truth.all() or not truth.any():
        raise ValueError("need at least one positive and one negative branch")
    fpr, tpr, _ = roc_curve(truth, scores, drop_intermediate=False)
    return (fpr, tpr), float(auc(fpr, tpr))


def target_identified(summary, truth: GroundTruth) -> bool:
    """True when the median clustering cuts exactly the true jump branches."""
    return sorted(summary.median_jump_branches) == sorted(truth.jump_branches)


# ---------------------------------------------------------------------------
# Experiments

@dataclass(frozen=True)
class ExperimentSpec:
    n_leaves: int = 100
    window: tuple = (0.1, 0.5)
    p: float = 0.8
    scheme: str = TWO_GROUP
    replications: int = 10
    seed: int = 0
    n_jumps: int = 1
    mcmc: pmcmc.McmcConfig = field(default_factory=pmcmc.McmcConfig)

    def __post_init__(self):
        if self.n_leaves < 2:
            raise ValueError("need at least two leaves")
        lo, hi = self.window
        if not 0 < lo < hi <= 1:
            raise ValueError("window must satisfy 0 < lo < hi <= 1")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        group_probabilities(self.scheme, self.p, self.n_jumps)


RESULT_FIELDS = ("replication", "TV", "EmpTV", "targetIdentified", "log10K", "AUC")


def make_instance(spec: ExperimentSpec, rng: np.random.Generator):
    tree = random_binary_tree(spec.n_leaves, rng)
    nested = spec.scheme == NESTED
    jumps = place_jumps(tree, spec.window, spec.n_jumps, nested, rng)
    return simulate_dataset(tree, jumps, spec.p, spec.scheme, rng)


def run_replication(spec: ExperimentSpec, index: int) -> dict:
    """Simulate replication ``index`` and score the sampler on it."""
    data_seq, mcmc_seq = np.random.SeedSequence([spec.seed, index]).spawn(2)
    data, truth = make_instance(spec, np.random.default_rng(data_seq))
    seed = int(mcmc_seq.generate_state(1, np.uint64)[0] >> np.uint64(1))
    config = replace(spec.mcmc, seed=seed)
    chain = pmcmc.run(data, config, np.random.default_rng(seed))
    summary = posterior.summarize(chain)
    _, area = roc_auc(summary.branch_probabilities, truth.indicator(data.n_branches))
    return {
        "replication": index,
        "TV": spec.p,
        "EmpTV": truth.mean_emp_tv,
        "targetIdentified": int(target_identified(summary, truth)),
        "log10K": summary.log10_bayes_factor,
        "AUC": area,
    }


def run_experiment(spec: ExperimentSpec, progress=None) -> list:
    rows = []
    for r in range(spec.replications):
        rows.append(run_replication(spec, r))
        if progress is not None:
            progress(rows[-1])
    return rows


def write_results(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: posterior.format_float(row[k]) if isinstance(row[k], float) else row[k]
                        for k in RESULT_FIELDS})
