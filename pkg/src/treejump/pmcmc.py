"""Pseudo-marginal Metropolis-within-Gibbs sampler over (jumps, rate)."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import jumpmodel, smc
from .crf import BaseMeasure
from .treemodel import Tree, normalize_branches, rescale

MOVES = (jumpmodel.RESAMPLE, jumpmodel.SWAP)


class NumericalError(RuntimeError):
    """The likelihood estimate stayed at zero for the whole run."""


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 50_000
    burn_in: float = 0.5
    particles: int = 100
    discount: float = 0.5
    rate: jumpmodel.RateConfig = field(default_factory=jumpmodel.RateConfig)
    seed: int | None = None
    normalize_branches: bool = False
    ess_threshold: float | None = None

    def __post_init__(self):
        if self.iterations < 2:
            raise ValueError("need at least two iterations")
        if not 0 < self.burn_in < 1:
            raise ValueError("burn-in fraction must lie in (0, 1)")
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.particles < 1:
            raise ValueError("need at least one particle")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "McmcConfig":
        d = dict(d)
        d["rate"] = jumpmodel.RateConfig(**d["rate"])
        return cls(**d)


@dataclass
class Chain:
    """One record per iteration.  ``move`` indexes :data:`MOVES`."""

    lam: np.ndarray
    jumps: np.ndarray
    loglik: np.ndarray
    accepted: np.ndarray
    move: np.ndarray
    config: McmcConfig
    lengths: np.ndarray
    parent: np.ndarray
    tree_digest: str = ""
    runtime: float = 0.0
    smc_calls: int = 0

    def __len__(self):
        return len(self.lam)

    @property
    def total_length(self) -> float:
        return float(np.sum(self.lengths))

    def post_burn_in(self, burn_in: float | None = None) -> slice:
        frac = self.config.burn_in if burn_in is None else burn_in
        return slice(int(math.floor(frac * len(self))), len(self))

    def metadata(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "tree_digest": self.tree_digest,
            "rescaled_lengths": [float(x) for x in self.lengths],
            "parent": [int(x) for x in self.parent],
            "runtime_seconds": self.runtime,
            "smc_calls": self.smc_calls,
        }


def prepare_tree(tree: Tree, config: McmcConfig) -> Tree:
    scaled = rescale(tree)
    return normalize_branches(scaled) if config.normalize_branches else scaled


def run(tree: Tree, config: McmcConfig, rng: np.random.Generator | None = None,
        base: BaseMeasure | None = None, progress=None) -> Chain:
    """Run the sampler; ``progress`` is an optional callable taking the
    iteration number."""
    if tree.n_observations == 0:
        raise ValueError("tree carries no observations")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    started = time.perf_counter()
    scaled = prepare_tree(tree, config)
    lengths = scaled.branch_lengths
    total = float(lengths.sum())
    learned = config.rate.mode == "learned"
    if learned:
        rho = config.rate.resolve_rho(total)
        lam = float(rng.exponential(1.0 / rho))
    else:
        lam = config.rate.resolve_lambda(total)
    b = jumpmodel.sample_jumps(lam, scaled, rng)

    calls = 0

    def loglik_of(jumps):
        nonlocal calls
        calls += 1
        return smc.estimate_log_likelihood(jumps, config.particles, scaled, config.discount,
                                           base, rng, ess_threshold=config.ess_threshold)

    ll = loglik_of(b)

    M = config.iterations
    out_lam = np.empty(M)
    out_b = np.empty((M, tree.n_branches), dtype=np.int16 if tree.n_branches else np.int64)
    out_ll = np.empty(M)
    out_acc = np.zeros(M, dtype=bool)
    out_move = np.zeros(M, dtype=np.int8)
    move_code = {m: i for i, m in enumerate(MOVES)}

    for it in range(M):
        if learned:
            lam = jumpmodel.sample_rate_posterior(b, rho, lengths, rng)
        prop = jumpmodel.propose(b, lam, scaled, rng)
        accepted = False
        if np.array_equal(prop.jumps, b):
            accepted = True
        else:
            prior_new = jumpmodel.prior_log_pmf(prop.jumps, lam, lengths)
            if prior_new > -math.inf:
                ll_new = loglik_of(prop.jumps)
                if ll_new > -math.inf:
                    if ll == -math.inf:
                        accepted = True
                    else:
                        log_a = (ll_new - ll + prior_new - jumpmodel.prior_log_pmf(b, lam, lengths)
                                 + prop.log_q_ratio)
                        accepted = log_a >= 0 or rng.random() < math.exp(log_a)
                if accepted:
                    b, ll = prop.jumps, ll_new
        out_lam[it] = lam
        out_b[it] = b
        out_ll[it] = ll
        out_acc[it] = accepted
        out_move[it] = move_code[prop.move]
        if progress is not None:
            progress(it)
    if ll == -math.inf and np.all(np.isneginf(out_ll)):
        raise NumericalError("likelihood estimate was zero for every visited state")
    return Chain(out_lam, out_b, out_ll, out_acc, out_move, config, lengths.copy(),
                 tree.parent.copy(), tree.digest(), time.perf_counter() - started, calls)


# ---------------------------------------------------------------------------
# Persistence

CHAIN_HEADER = "iteration\tlambda\tjumps\tloglik\taccepted\tmove"


def write_chain(chain: Chain, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CHAIN_HEADER + "\n")
        for it in range(len(chain)):
            fh.write(f"{it}\t{float(chain.lam[it])!r}\t{','.join(map(str, chain.jumps[it].tolist()))}"
                     f"\t{float(chain.loglik[it])!r}\t{int(chain.accepted[it])}"
                     f"\t{MOVES[chain.move[it]]}\n")


class ChainFormatError(ValueError):
    pass


def read_chain(path, metadata: dict) -> Chain:
    """Load a chain written by :func:`write_chain`, with the metadata stored
    alongside it."""
    config = McmcConfig.from_dict(metadata["config"])
    lengths = np.array(metadata["rescaled_lengths"], dtype=float)
    B = len(lengths)
    lam, jumps, ll, acc, move = [], [], [], [], []
    code = {m: i for i, m in enumerate(MOVES)}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CHAIN_HEADER:
            raise ChainFormatError("bad chain header")
        for lineno, line in enumerate(fh, start=2):
            if not line.endswith("\n"):
                raise ChainFormatError(f"line {lineno}: truncated record")
            cols = line.rstrip("\n").split("\t")
            try:
                if len(cols) != 6 or int(cols[0]) != len(lam):
                    raise ValueError
                b = [int(x) for x in cols[2].split(",")] if cols[2] else []
                if len(b) != B:
                    raise ValueError
                lam.append(float(cols[1]))
                jumps.append(b)
                ll.append(float(cols[3]))
                acc.append(cols[4] == "1")
                move.append(code[cols[5]])
            except (ValueError, KeyError):
                raise ChainFormatError(f"line {lineno}: malformed record") from None
    if len(lam) != config.iterations:
        raise ChainFormatError(f"chain has {len(lam)} records, expected {config.iterations}")
    return Chain(np.array(lam), np.array(jumps, dtype=np.int64).reshape(len(lam), B),
                 np.array(ll), np.array(acc, dtype=bool), np.array(move, dtype=np.int8), config,
                 lengths, np.array(metadata["parent"], dtype=np.int64),
                 metadata.get("tree_digest", ""), metadata.get("runtime_seconds", 0.0),
                 metadata.get("smc_calls", 0))


def metadata_json(chain: Chain) -> str:
    return json.dumps(chain.metadata(), indent=2, sort_keys=True)
