"""Point estimates and evidence summaries from a sampled chain."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .jumpmodel import RateConfig


def cluster_assignments(parent, jumps) -> np.ndarray:
    """Node cluster ids for each row of ``jumps``.

    Ids are canonical: clusters are numbered in order of first appearance
    along the node order.
    """
    parent = np.asarray(parent)
    b = np.atleast_2d(np.asarray(jumps))
    M, n = b.shape[0], len(parent)
    top = np.zeros((M, n), dtype=np.int64)
    cut = b > 0
    for i in range(1, n):
        top[:, i] = np.where(cut[:, i - 1], i, top[:, parent[i]])
    is_top = np.zeros((M, n), dtype=np.int64)
    is_top[:, 0] = 1
    is_top[:, 1:] = cut
    rank = np.cumsum(is_top, axis=1) - 1
    return np.take_along_axis(rank, top, axis=1)


def _patterns(jumps):
    """Distinct jump-indicator rows: (rows, first index, counts)."""
    ind = np.asarray(jumps) > 0
    if ind.shape[1] == 0:
        return ind[:1], np.array([0]), np.array([len(ind)])
    rows, first, counts = np.unique(ind, axis=0, return_index=True, return_counts=True)
    return rows, first, counts


def co_clustering(parent, jumps) -> np.ndarray:
    """P(z_i = z_j) estimated over the rows of ``jumps``."""
    rows, _, counts = _patterns(jumps)
    Z = cluster_assignments(parent, rows)
    n = len(parent)
    P = np.zeros((n, n))
    for z, c in zip(Z, counts):
        onehot = np.zeros((n, z.max() + 1))
        onehot[np.arange(n), z] = 1.0
        P += c * (onehot @ onehot.T)
    return P / counts.sum()


def _segment(chain, burn_in):
    seg = chain.jumps[chain.post_burn_in(burn_in)]
    if len(seg) == 0:
        raise ValueError("no post-burn-in samples")
    return seg


def branch_probabilities(chain, burn_in=None) -> np.ndarray:
    return np.mean(_segment(chain, burn_in) > 0, axis=0)


def _binder_pick(parent, estimate_rows, candidate_rows):
    P = co_clustering(parent, estimate_rows)
    rows, first, _ = _patterns(candidate_rows)
    Z = cluster_assignments(parent, rows)
    scores = np.array([binder_score(z, P) for z in Z])
    best = np.flatnonzero(scores >= scores.max() - 1e-12 * max(1.0, abs(scores.max())))
    pick = best[np.argmin(first[best])]
    return Z[pick], int(first[pick])


def _halves(seg):
    half = len(seg) // 2
    if half == 0:
        raise ValueError("need at least two post-burn-in samples")
    return seg[:half], seg[half:]


def binder_median(chain, burn_in=None):
    """Clustering maximising the pairwise Binder score.

    Co-clustering probabilities come from the first half of the post-burn-in
    segment; candidates are the second half's samples.  Returns
    ``(assignment, jumps, iteration)``; ties go to the earliest iteration.
    """
    start = chain.post_burn_in(burn_in).start
    early, late = _halves(_segment(chain, burn_in))
    z, k = _binder_pick(chain.parent, early, late)
    return z, late[k].copy(), start + len(early) + k


def binder_score(assignment, co_prob) -> float:
    """Sum over node pairs sharing a cluster of (P(same cluster) - 1/2)."""
    z = np.asarray(assignment)
    n = len(z)
    onehot = np.zeros((n, z.max() + 1))
    onehot[np.arange(n), z] = 1.0
    within = np.einsum("ik,ik->", onehot, (co_prob - 0.5) @ onehot)
    return float((within - np.trace(co_prob - 0.5)) / 2)


def bayes_factor(chain, rate: RateConfig | None = None, lengths=None, burn_in=None) -> float:
    """Posterior-to-prior odds of at least one jump against none."""
    rate = chain.config.rate if rate is None else rate
    total = float(np.sum(chain.lengths if lengths is None else lengths))
    seg = _segment(chain, burn_in)
    positive = np.any(seg > 0, axis=1).mean() if seg.shape[1] else 0.0
    prior0 = rate.prior_prob_no_jumps(total) if total > 0 else 1.0
    return _odds_ratio(positive, prior0)


def _odds_ratio(positive, prior0) -> float:
    if positive == 1.0:
        return math.inf
    if positive == 0.0:
        return 0.0
    return (positive / (1 - positive)) / ((1 - prior0) / prior0)


def ess(values) -> float:
    """Effective sample size with Geyer's initial positive sequence."""
    x = np.asarray(values, dtype=float)
    M = len(x)
    if M < 10:
        raise ValueError("need at least 10 values")
    x = x - x.mean()
    var = np.dot(x, x) / M
    if var == 0:
        warnings.warn("constant sequence; effective sample size set to its length")
        return float(M)
    nfft = 1 << (2 * M - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:M] / M
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, M - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    if tau <= 0:
        return float(M)
    return float(min(M / tau, M))


def format_float(x) -> float | str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class Summary:
    branch_probabilities: np.ndarray
    co_clustering: np.ndarray
    median_assignment: np.ndarray
    median_jumps: np.ndarray
    median_iteration: int
    bayes_factor: float
    ess_lambda: float
    runtime: float
    acceptance_rate: float
    n_samples: int
    median_chain: int = 0
    n_chains: int = 1

    @property
    def log10_bayes_factor(self) -> float:
        if self.bayes_factor == 0:
            return -math.inf
        return math.log10(self.bayes_factor)

    @property
    def median_jump_branches(self) -> list:
        return [int(i) for i in np.flatnonzero(self.median_jumps > 0)]

    @property
    def ess_per_second(self) -> float:
        return self.ess_lambda / self.runtime if self.runtime > 0 else math.inf

    def to_dict(self) -> dict:
        return {
            "branch_probabilities": {str(i): float(p) for i, p in enumerate(self.branch_probabilities)},
            "median_jump_branches": self.median_jump_branches,
            "median_jumps": [int(x) for x in self.median_jumps],
            "median_iteration": int(self.median_iteration),
            "median_assignment": [int(x) for x in self.median_assignment],
            "bayes_factor": format_float(self.bayes_factor),
            "log10_bayes_factor": format_float(self.log10_bayes_factor),
            "ess_lambda": self.ess_lambda,
            "acceptance_rate": self.acceptance_rate,
            "n_samples": self.n_samples,
            "median_chain": self.median_chain,
            "n_chains": self.n_chains,
        }

    def report(self) -> str:
        """Short human-readable digest, including wall-clock rates."""
        return (f"log10 K: {self.log10_bayes_factor:.4g}\n"
                f"median jump branches: {self.median_jump_branches}\n"
                f"ESS(lambda): {self.ess_lambda:.1f}\n"
                f"ESS/s: {self.ess_per_second:.3g}\n")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_co_clustering(self, path, names=None):
        n = len(self.co_clustering)
        names = names or [str(i) for i in range(n)]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("node," + ",".join(names) + "\n")
            for name, row in zip(names, self.co_clustering):
                fh.write(name + "," + ",".join(repr(float(x)) for x in row) + "\n")


def _lambda_ess(lam) -> float:
    if len(lam) < 10:
        return float(len(lam))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ess(lam)


def summarize(chain, burn_in=None) -> Summary:
    """Summary of one chain.  Wall-clock values are kept out of
    :meth:`Summary.to_json` so that it is reproducible."""
    seg_slice = chain.post_burn_in(burn_in)
    seg = _segment(chain, burn_in)
    z, b_hat, where = binder_median(chain, burn_in)
    ess_lam = _lambda_ess(chain.lam[seg_slice])
    return Summary(
        branch_probabilities=branch_probabilities(chain, burn_in),
        co_clustering=co_clustering(chain.parent, seg),
        median_assignment=z,
        median_jumps=b_hat,
        median_iteration=where,
        bayes_factor=bayes_factor(chain, burn_in=burn_in),
        ess_lambda=ess_lam,
        runtime=chain.runtime,
        acceptance_rate=float(np.mean(chain.accepted[seg_slice])),
        n_samples=len(seg),
    )


def summarize_pooled(chains, burn_in=None) -> Summary:
    """Summary over several chains of the same model.

    Post-burn-in segments are pooled; the Binder estimate uses the first
    halves of all segments and searches the second halves (ties go to the
    earliest chain, then the earliest iteration).  The lambda ESS is the sum
    of per-chain values.
    """
    if not chains:
        raise ValueError("no chains to pool")
    parent = chains[0].parent
    segs, early, late = [], [], []
    for ch in chains:
        if not np.array_equal(ch.parent, parent):
            raise ValueError("chains were run on different trees")
        seg = _segment(ch, burn_in)
        e, l = _halves(seg)
        segs.append(seg)
        early.append(e)
        late.append(l)
    z, k = _binder_pick(parent, np.concatenate(early), np.concatenate(late))
    offsets = np.cumsum([0] + [len(l) for l in late])
    c = int(np.searchsorted(offsets, k, side="right") - 1)
    local = k - offsets[c]
    where = chains[c].post_burn_in(burn_in).start + len(early[c]) + int(local)
    pooled = np.concatenate(segs)
    positive = np.concatenate([np.any(s > 0, axis=1) for s in segs]) if pooled.shape[1] else np.zeros(len(pooled), bool)
    ch0 = chains[0]
    total = ch0.total_length
    prior0 = ch0.config.rate.prior_prob_no_jumps(total) if total > 0 else 1.0
    return Summary(
        branch_probabilities=np.mean(pooled > 0, axis=0),
        co_clustering=co_clustering(parent, pooled),
        median_assignment=z,
        median_jumps=late[c][local].copy(),
        median_iteration=where,
        bayes_factor=_odds_ratio(positive.mean(), prior0),
        ess_lambda=float(sum(_lambda_ess(ch.lam[ch.post_burn_in(burn_in)]) for ch in chains)),
        runtime=float(sum(ch.runtime for ch in chains)),
        acceptance_rate=float(np.mean(np.concatenate(
            [ch.accepted[ch.post_burn_in(burn_in)] for ch in chains]))),
        n_samples=len(pooled),
        median_chain=c,
        n_chains=len(chains),
    )
