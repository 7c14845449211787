import numpy as np
import pytest

from treejump.treemodel import attach_observations, parse_newick

FIGURE_TREE = "((G1,G2)G6,(G3,(G4,G5)G8)G7)G0;"
BALANCED4 = "((A:1,B:1):1,(C:1,D:1):1);"


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def figure_tree():
    return parse_newick(FIGURE_TREE)


@pytest.fixture
def balanced4():
    return parse_newick(BALANCED4)


def with_data(newick, records, n_categories=2):
    return attach_observations(parse_newick(newick), records, n_categories)


def random_ultrametric(rng, n_leaves):
    """Coalescent-style ultrametric tree as (parent, length) arrays."""
    heights = {i: 0.0 for i in range(n_leaves)}
    kids = {}
    active = list(range(n_leaves))
    nxt = n_leaves
    t = 0.0
    while len(active) > 1:
        t += rng.exponential(1.0)
        i, j = rng.choice(len(active), size=2, replace=False)
        a, b = active[i], active[j]
        kids[nxt] = (a, b)
        heights[nxt] = t
        active = [x for k, x in enumerate(active) if k not in (i, j)] + [nxt]
        nxt += 1
    root = active[0]
    order, stack = [], [root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(kids.get(v, ()))
    new = {v: k for k, v in enumerate(order)}
    parent = np.full(len(order), -1)
    length = np.zeros(len(order))
    for p, (a, b) in kids.items():
        for c in (a, b):
            parent[new[c]] = new[p]
            length[new[c]] = heights[p] - heights[c]
    return parent, length, t


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
