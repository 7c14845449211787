"""Particle estimate of the likelihood of a jump configuration.

The estimator is unbiased for p(X | b) on the natural scale; its log is
returned.  Two backends share one contract: ``"numba"`` (default, compiled
count tables) and ``"python"`` (explicit :class:`~treejump.crf.CrfState`
particles, slow, kept as a readable reference).
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernel
from .crf import BaseMeasure, CrfState
from .treemodel import PrunedTree, Tree, _check_jumps, prune


def observation_order(tree: Tree, pruned: PrunedTree) -> list:
    """``(node, index)`` pairs: groups breadth-first from the root, then by
    node id, then by observation index."""
    order = []
    for g in pruned.bfs_order():
        for node in pruned.members[g]:
            order.extend((node, j) for j in range(len(tree.observations[node])))
    return order


def _seed_from(rng) -> int:
    if rng is None:
        rng = np.random.default_rng()
    if isinstance(rng, (int, np.integer)):
        return int(rng) & (2**64 - 1)
    return int(rng.integers(0, 2**63))


def estimate_log_likelihood(jumps, n_particles: int, tree: Tree, discount: float,
                            base: BaseMeasure | None = None, rng=None, *,
                            backend: str = "numba", ess_threshold: float | None = None,
                            order=None) -> float:
    """Return log p_hat(X | jumps), or ``-inf`` when every particle assigns
    zero probability to some observation.

    ``rng`` may be a ``numpy.random.Generator`` or an integer seed.
    ``ess_threshold`` switches from resampling at every step to resampling
    only when the effective sample size falls below that fraction of the
    particle count.  ``order`` overrides the observation order (python
    backend only).
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if not 0 < discount < 1:
        raise ValueError("discount must lie in (0, 1)")
    if tree.n_observations == 0:
        raise ValueError("tree carries no observations")
    b = _check_jumps(tree, jumps)
    if base is None:
        base = BaseMeasure.uniform(tree.n_categories)
    if base.n_categories < tree.n_categories:
        raise ValueError("base measure smaller than the observation alphabet")
    if backend == "numba":
        if order is not None:
            raise ValueError("custom orders need the python backend")
        ptr, values = tree.observation_arrays()
        return float(_kernel.log_likelihood_for_jumps(
            tree.parent, b, ptr, values, float(discount), base.probabilities,
            int(n_particles), _seed_from(rng), float(ess_threshold or 0.0)))
    if backend == "python":
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        return _python_log_likelihood(b, n_particles, tree, discount, base, rng,
                                      ess_threshold, order)
    raise ValueError(f"unknown backend {backend!r}")


def _python_log_likelihood(b, n_particles, tree, discount, base, rng, ess_threshold, order):
    pruned = prune(tree, b)
    if order is None:
        order = observation_order(tree, pruned)
    particles = [CrfState(pruned, discount, base) for _ in range(n_particles)]
    logw = np.zeros(n_particles)
    loglik = 0.0
    for step, (node, j) in enumerate(order):
        g = int(pruned.group_of[node])
        value = tree.observations[node][j]
        w = np.array([p.predictive(g, value) for p in particles])
        for p, wi in zip(particles, w):
            if wi > 0:
                p.seat(g, value, rng)
        prev = logw
        with np.errstate(divide="ignore"):
            logw = prev + np.log(w)
        if not np.any(np.isfinite(logw)):
            return -math.inf
        loglik += np.logaddexp.reduce(logw) - np.logaddexp.reduce(prev)
        if step == len(order) - 1:
            break
        weights = np.exp(logw - logw.max())
        if ess_threshold and weights.sum() ** 2 / np.sum(weights ** 2) >= ess_threshold * n_particles:
            continue
        picks = rng.choice(n_particles, size=n_particles, p=weights / weights.sum())
        particles = [particles[k].copy() for k in picks]
        logw = np.zeros(n_particles)
    return float(loglik)
