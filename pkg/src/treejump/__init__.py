"""Jump detection on trees: hierarchical Pitman-Yor likelihoods with
particle MCMC."""

__version__ = "0.1.0"

from .treemodel import Tree, parse_newick, prune, rescale  # noqa: E402
from .pmcmc import McmcConfig, run  # noqa: E402
from .posterior import summarize  # noqa: E402

__all__ = ["Tree", "parse_newick", "prune", "rescale", "McmcConfig", "run", "summarize",
           "__version__"]
