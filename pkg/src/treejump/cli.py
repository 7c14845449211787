"""Command-line interface.

Exit codes: 0 success, 1 input/output or parse failure, 2 invalid
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, jumpmodel, oracle, pmcmc, posterior, synth
from .treemodel import (TreeError, attach_observations, read_newick, read_observations,
                        rescale, to_newick, write_observations)

EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 1, 2, 3
OUTPUT_FILES = ("chain.tsv", "summary.json", "cocluster.csv")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc.msg})", EXIT_IO) from None


# ---------------------------------------------------------------------------
# infer

def load_dataset(tree_path, data_path, categories=None, ignore_internal_labels=False):
    try:
        tree = read_newick(tree_path, ignore_internal_labels=ignore_internal_labels)
        records = read_observations(data_path)
        return attach_observations(tree, records, categories)
    except OSError as exc:
        raise CliError(f"cannot read {exc.filename}: {exc.strerror}", EXIT_IO) from None
    except TreeError as exc:
        raise CliError(str(exc), EXIT_IO) from None


def build_config(args) -> pmcmc.McmcConfig:
    try:
        rate = jumpmodel.RateConfig(mode=args.rate_mode, lam=args.lam,
                                    prior_mean_jumps=args.prior_mean_jumps)
        return pmcmc.McmcConfig(iterations=args.iters, burn_in=args.burnin,
                                particles=args.particles, discount=args.discount, rate=rate,
                                seed=args.seed, normalize_branches=args.normalize_branches,
                                ess_threshold=args.ess_threshold)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from None


def chain_seeds(seed: int, k: int) -> list:
    """Seeds for ``k`` chains; a single chain uses ``seed`` itself."""
    if k == 1:
        return [seed]
    return [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1))
            for s in np.random.SeedSequence(seed).spawn(k)]


def _run_chain(tree, config):
    return pmcmc.run(tree, config, np.random.default_rng(config.seed))


def write_run(chain, summary, out_dir, names):
    os.makedirs(out_dir, exist_ok=True)
    pmcmc.write_chain(chain, os.path.join(out_dir, "chain.tsv"))
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(summary.to_json())
    summary.write_co_clustering(os.path.join(out_dir, "cocluster.csv"), names)


def _output_hashes(out_dir, prefix=""):
    return {prefix + f: sha256_file(os.path.join(out_dir, f)) for f in OUTPUT_FILES}


def cmd_infer(args) -> int:
    if args.chains < 1:
        raise CliError("--chains must be at least 1", EXIT_CONFIG)
    if args.jobs < 1:
        raise CliError("--jobs must be at least 1", EXIT_CONFIG)
    config = build_config(args)
    tree = load_dataset(args.tree, args.data, args.categories, args.ignore_internal_labels)
    if tree.n_observations == 0:
        raise CliError("data file holds no observations", EXIT_IO)
    started = time.perf_counter()
    configs = [dataclasses.replace(config, seed=s)
               for s in chain_seeds(args.seed, args.chains)]
    try:
        if args.jobs > 1 and len(configs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                chains = list(pool.map(_run_chain, [tree] * len(configs), configs))
        else:
            chains = [_run_chain(tree, c) for c in configs]
    except pmcmc.NumericalError as exc:
        raise CliError(f"numerical failure: {exc}", EXIT_NUMERIC) from None
    except ValueError as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from None

    names = [tree.node_name(i) for i in range(tree.n_nodes)]
    os.makedirs(args.out, exist_ok=True)
    outputs = {}
    if len(chains) == 1:
        summary = posterior.summarize(chains[0])
        write_run(chains[0], summary, args.out, names)
        outputs.update(_output_hashes(args.out))
        chain_meta = [chains[0].metadata()]
    else:
        for i, ch in enumerate(chains):
            sub = os.path.join(args.out, f"chain_{i}")
            write_run(ch, posterior.summarize(ch), sub, names)
            outputs.update(_output_hashes(sub, f"chain_{i}/"))
        summary = posterior.summarize_pooled(chains)
        with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(summary.to_json())
        summary.write_co_clustering(os.path.join(args.out, "cocluster.csv"), names)
        for f in ("summary.json", "cocluster.csv"):
            outputs[f] = sha256_file(os.path.join(args.out, f))
        chain_meta = [ch.metadata() for ch in chains]

    manifest = {
        "command": "infer",
        "version": __version__,
        "seed": args.seed,
        "chains": args.chains,
        "config": config.to_dict(),
        "inputs": {
            "tree": {"path": os.path.abspath(args.tree), "sha256": sha256_file(args.tree)},
            "data": {"path": os.path.abspath(args.data), "sha256": sha256_file(args.data)},
            "categories": tree.n_categories,
            "ignore_internal_labels": args.ignore_internal_labels,
        },
        "tree": {"newick": to_newick(tree), "digest": tree.digest(), "node_names": names},
        "chain_metadata": chain_meta,
        "outputs": outputs,
        "timings": {
            "wall_seconds": time.perf_counter() - started,
            "chain_seconds": [ch.runtime for ch in chains],
            "ess_per_second": posterior.format_float(summary.ess_per_second),
        },
    }
    _dump_json(manifest, os.path.join(args.out, "manifest.json"))
    sys.stdout.write(summary.report())
    return 0


# ---------------------------------------------------------------------------
# summarize

def _read_run_chain(run_dir, meta):
    path = os.path.join(run_dir, "chain.tsv")
    try:
        return pmcmc.read_chain(path, meta)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", EXIT_IO) from None
    except (pmcmc.ChainFormatError, KeyError, TypeError) as exc:
        raise CliError(f"{path}: corrupt chain ({exc})", EXIT_IO) from None


def load_run(run_dir):
    """Chains and manifest of an ``infer`` output directory."""
    manifest = _load_json(os.path.join(run_dir, "manifest.json"))
    try:
        metas = manifest["chain_metadata"]
        k = manifest["chains"]
    except (KeyError, TypeError):
        raise CliError("manifest lacks chain metadata", EXIT_IO) from None
    if k == 1:
        chains = [_read_run_chain(run_dir, metas[0])]
    else:
        chains = [_read_run_chain(os.path.join(run_dir, f"chain_{i}"), m) for i, m in enumerate(metas)]
    return chains, manifest


def cmd_summarize(args) -> int:
    chains, manifest = load_run(args.run)
    if args.burnin is not None and not 0 < args.burnin < 1:
        raise CliError("--burnin must lie in (0, 1)", EXIT_CONFIG)
    try:
        if len(chains) == 1:
            summary = posterior.summarize(chains[0], args.burnin)
        else:
            summary = posterior.summarize_pooled(chains, args.burnin)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    text = summary.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        if args.cocluster:
            summary.write_co_clustering(args.cocluster, manifest["tree"]["node_names"])
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# simulate / experiment

def _spec_from(args, mcmc=None) -> synth.ExperimentSpec:
    n_jumps = args.jumps if args.jumps is not None else (3 if args.scheme == synth.NESTED else 1)
    try:
        return synth.ExperimentSpec(n_leaves=args.leaves, window=tuple(args.window), p=args.tv,
                                    scheme=args.scheme, replications=getattr(args, "replications", 1),
                                    seed=args.seed, n_jumps=n_jumps,
                                    **({"mcmc": mcmc} if mcmc else {}))
    except ValueError as exc:
        raise CliError(f"invalid experiment: {exc}", EXIT_CONFIG) from None


def cmd_simulate(args) -> int:
    spec = _spec_from(args)
    try:
        data, truth = synth.make_instance(spec, np.random.default_rng(args.seed))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "tree.nwk"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(to_newick(data) + "\n")
    write_observations(data, os.path.join(args.out, "data.tsv"))
    doc = truth.to_dict()
    doc["n_branches"] = data.n_branches
    doc["seed"] = args.seed
    _dump_json(doc, os.path.join(args.out, "truth.json"))
    return 0


def cmd_experiment(args) -> int:
    mcmc = build_config(args)
    spec = _spec_from(args, mcmc)

    def progress(row):
        if not args.quiet:
            print("\t".join(f"{k}={row[k]}" for k in synth.RESULT_FIELDS), flush=True)

    try:
        rows = synth.run_experiment(spec, progress)
    except pmcmc.NumericalError as exc:
        raise CliError(f"numerical failure: {exc}", EXIT_NUMERIC) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    synth.write_results(rows, args.out)
    return 0


# ---------------------------------------------------------------------------
# eval

def read_scores(path) -> dict:
    """Per-branch scores from a two-column text file (tab or comma
    separated, optional header)."""
    scores = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                cols = line.replace(",", "\t").split("\t")
                try:
                    if len(cols) != 2:
                        raise ValueError
                    scores[int(cols[0])] = float(cols[1])
                except ValueError:
                    if lineno == 1:
                        continue
                    raise CliError(f"{path}: line {lineno}: expected 'branch<TAB>score'", EXIT_IO) from None
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", EXIT_IO) from None
    return scores


def cmd_eval(args) -> int:
    truth = _load_json(args.truth)
    try:
        n_branches = int(truth["n_branches"])
        positives = set(int(j) for j in truth["jump_branches"])
    except (KeyError, TypeError, ValueError):
        raise CliError(f"{args.truth}: not a ground-truth document", EXIT_IO) from None
    methods = []
    if args.run:
        summary = _load_json(os.path.join(args.run, "summary.json"))
        try:
            methods.append(("pmcmc", {int(k): float(v) for k, v in summary["branch_probabilities"].items()}))
        except (KeyError, AttributeError, ValueError):
            raise CliError("summary lacks branch probabilities", EXIT_IO) from None
    for item in args.scores or []:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = os.path.splitext(os.path.basename(item))[0], item
        methods.append((name, read_scores(path)))
    if not methods:
        raise CliError("nothing to evaluate: give --run or --scores", EXIT_CONFIG)
    truth_vec = np.array([j in positives for j in range(n_branches)])
    os.makedirs(args.out, exist_ok=True)
    aucs = []
    with open(os.path.join(args.out, "roc.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,fpr,tpr\n")
        for name, scores in methods:
            if sorted(scores) != list(range(n_branches)):
                raise CliError(f"{name}: branch ids do not match the {n_branches} branches of the truth",
                               EXIT_CONFIG)
            try:
                (fpr, tpr), area = synth.roc_auc([scores[j] for j in range(n_branches)], truth_vec)
            except ValueError as exc:
                raise CliError(str(exc), EXIT_CONFIG) from None
            for x, y in zip(fpr, tpr):
                fh.write(f"{name},{float(x)!r},{float(y)!r}\n")
            aucs.append((name, area))
    with open(os.path.join(args.out, "auc.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,auc\n")
        for name, area in aucs:
            fh.write(f"{name},{area!r}\n")
            print(f"{name}\tAUC={area:.4f}")
    return 0


# ---------------------------------------------------------------------------
# oracle (debugging aid)

def cmd_oracle(args) -> int:
    tree = load_dataset(args.tree, args.data, args.categories, args.ignore_internal_labels)
    trunc = oracle.TruncationSpec(b_max=args.b_max, max_observations=args.max_observations,
                                  max_groups=args.max_groups)
    try:
        if args.jumps is not None:
            b = [int(x) for x in args.jumps.split(",")] if args.jumps else []
            print(repr(oracle.exact_likelihood(b, tree, args.discount, None, trunc)))
        else:
            if args.lam is None:
                raise CliError("--lambda is required for the posterior table", EXIT_CONFIG)
            table = oracle.exact_jump_posterior(rescale(tree), args.discount, None, args.lam, trunc)
            for b, p in sorted(table.items(), key=lambda kv: -kv[1]):
                print(",".join(map(str, b)) + f"\t{p!r}")
    except oracle.OracleLimitError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    except TreeError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    return 0


# ---------------------------------------------------------------------------

def _add_data_args(p):
    p.add_argument("--tree", required=True, help="Newick tree file")
    p.add_argument("--data", required=True, help="TSV of node label and integer value")
    p.add_argument("--categories", type=int, default=None,
                   help="alphabet size (default: largest value + 1, at least 2)")
    p.add_argument("--ignore-internal-labels", action="store_true",
                   help="treat internal node labels as support values")


def _add_mcmc_args(p, seed_required=True):
    p.add_argument("--iters", type=int, default=50_000, help="MCMC iterations (default 50000)")
    p.add_argument("--burnin", type=float, default=0.5, help="burn-in fraction (default 0.5)")
    p.add_argument("--particles", type=int, default=100, help="SMC particles (default 100)")
    p.add_argument("--discount", type=float, default=0.5, help="discount parameter (default 0.5)")
    p.add_argument("--rate-mode", choices=("learned", "fixed"), default="learned")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="jump rate for --rate-mode fixed")
    p.add_argument("--prior-mean-jumps", type=float, default=1.0,
                   help="prior mean number of jumps on the rescaled tree (default 1)")
    p.add_argument("--seed", type=int, required=seed_required, help="random seed (required)")
    p.add_argument("--normalize-branches", action="store_true",
                   help="scale rescaled branch lengths to sum to the branch count")
    p.add_argument("--ess-threshold", type=float, default=None,
                   help="resample only when particle ESS falls below this fraction")


def _add_experiment_args(p):
    p.add_argument("--scheme", choices=synth.SCHEMES, default=synth.TWO_GROUP)
    p.add_argument("--leaves", type=int, default=100)
    p.add_argument("--tv", type=float, required=True, help="jump size as total variation")
    p.add_argument("--window", type=float, nargs=2, default=(0.1, 0.5), metavar=("LO", "HI"),
                   help="leaf-fraction window for jump placement")
    p.add_argument("--jumps", type=int, default=None,
                   help="number of jump branches (default 1, or 3 when nested)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treejump",
                                     description="Jump detection on trees with particle MCMC.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{infer,simulate,summarize,eval,experiment}")

    p = sub.add_parser("infer", help="run the sampler on a tree and data file")
    _add_data_args(p)
    p.add_argument("--out", required=True, help="output directory")
    _add_mcmc_args(p)
    p.add_argument("--chains", type=int, default=1, help="independent chains (default 1)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for --chains")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="write a synthetic tree, data and ground truth")
    _add_experiment_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("summarize", help="recompute the summary of an infer run")
    p.add_argument("run", help="infer output directory")
    p.add_argument("--burnin", type=float, default=None, help="override the burn-in fraction")
    p.add_argument("--out", default=None, help="write the summary here instead of stdout")
    p.add_argument("--cocluster", default=None, help="also write the co-clustering CSV here")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("eval", help="ROC curves and AUC against a ground truth")
    p.add_argument("--truth", required=True, help="truth.json written by simulate")
    p.add_argument("--run", default=None, help="infer output directory")
    p.add_argument("--scores", nargs="*", metavar="NAME=PATH",
                   help="external per-branch score files")
    p.add_argument("--out", required=True, help="output directory for roc.csv and auc.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="replicated synthetic study, results as CSV")
    _add_experiment_args(p)
    _add_mcmc_args(p)
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--out", required=True, help="results CSV")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle")
    _add_data_args(p)
    p.add_argument("--discount", type=float, default=0.5)
    p.add_argument("--jumps", default=None, help="comma-separated jump counts")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--b-max", type=int, default=2)
    p.add_argument("--max-observations", type=int, default=8)
    p.add_argument("--max-groups", type=int, default=8)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"treejump {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
