"""Poisson prior over per-branch jump counts, Metropolis-Hastings proposals,
and the conjugate Gamma update of the jump rate.

All functions take branch lengths from an already rescaled tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .treemodel import Tree

RESAMPLE, SWAP = "resample", "swap"


@dataclass(frozen=True)
class RateConfig:
    """Jump-rate setup.

    In ``fixed`` mode the rate is ``lam`` (or, when omitted, the rate giving
    ``prior_mean_jumps`` expected jumps).  In ``learned`` mode the rate has an
    exponential prior with rate ``rho``; when ``rho`` is omitted it is set so
    that the prior mean number of jumps is ``prior_mean_jumps``.
    """

    mode: str = "learned"
    lam: float | None = None
    rho: float | None = None
    prior_mean_jumps: float = 1.0

    def __post_init__(self):
        if self.mode not in ("fixed", "learned"):
            raise ValueError(f"unknown rate mode {self.mode!r}")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.prior_mean_jumps > 0:
            raise ValueError("prior mean jump count must be positive")

    def resolve_rho(self, total_length: float) -> float:
        if self.rho is not None:
            return self.rho
        if total_length <= 0:
            raise ValueError("rho must be given explicitly for a tree without branch length")
        return total_length / self.prior_mean_jumps

    def resolve_lambda(self, total_length: float) -> float:
        if self.lam is not None:
            return self.lam
        if total_length <= 0:
            raise ValueError("lambda must be given explicitly for a tree without branch length")
        return self.prior_mean_jumps / total_length

    def prior_prob_no_jumps(self, total_length: float) -> float:
        if self.mode == "fixed":
            return math.exp(-self.resolve_lambda(total_length) * total_length)
        rho = self.resolve_rho(total_length)
        return rho / (rho + total_length)


def _lengths(tree) -> np.ndarray:
    return tree.branch_lengths if isinstance(tree, Tree) else np.asarray(tree, dtype=float)


def poisson_logpmf(k: int, mu: float) -> float:
    if mu == 0:
        return 0.0 if k == 0 else -math.inf
    return k * math.log(mu) - mu - math.lgamma(k + 1)


def prior_log_pmf(jumps, lam: float, tree) -> float:
    """Log probability of independent Poisson(lam * L_i) counts."""
    b = np.asarray(jumps, dtype=np.int64)
    mu = lam * _lengths(tree)
    if b.shape != mu.shape:
        raise ValueError("jump vector does not match the tree")
    zero = mu == 0
    if np.any(b[zero] > 0):
        return -math.inf
    b, mu = b[~zero], mu[~zero]
    return float(np.sum(b * np.log(mu) - mu - gammaln(b + 1)))


def sample_jumps(lam: float, tree, rng: np.random.Generator) -> np.ndarray:
    return rng.poisson(lam * _lengths(tree)).astype(np.int64)


class Proposal(NamedTuple):
    jumps: np.ndarray
    log_q_ratio: float
    move: str


def propose(jumps, lam: float, tree: Tree, rng: np.random.Generator) -> Proposal:
    """One move, chosen with equal probability: redraw a random branch's
    count from its prior, or swap counts across a random parent-child
    branch pair.  ``log_q_ratio`` is log q(b | b*) - log q(b* | b)."""
    b = np.array(jumps, dtype=np.int64)
    lengths = tree.branch_lengths
    if rng.random() < 0.5:
        if len(b) == 0:
            return Proposal(b, 0.0, RESAMPLE)
        i = int(rng.integers(len(b)))
        mu = lam * lengths[i]
        old, new = int(b[i]), int(rng.poisson(mu))
        if new == old:
            return Proposal(b, 0.0, RESAMPLE)
        b[i] = new
        return Proposal(b, poisson_logpmf(old, mu) - poisson_logpmf(new, mu), RESAMPLE)
    pairs = tree.adjacent_branch_pairs
    if len(pairs) == 0:
        return Proposal(b, 0.0, SWAP)
    i, j = pairs[int(rng.integers(len(pairs)))]
    b[i], b[j] = b[j], b[i]
    return Proposal(b, 0.0, SWAP)


def sample_rate_posterior(jumps, rho: float, tree, rng: np.random.Generator) -> float:
    """Draw lambda from Gamma(1 + sum(b), rate = rho + sum(L))."""
    shape = 1.0 + float(np.sum(jumps))
    rate = rho + float(_lengths(tree).sum())
    return float(rng.gamma(shape, 1.0 / rate))
