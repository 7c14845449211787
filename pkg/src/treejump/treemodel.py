"""Rooted trees with categorical observations at their nodes.

Nodes are numbered so that every parent precedes its children (node 0 is
the root).  Branch ``j`` is the branch above node ``j + 1``; a jump vector
is therefore indexed like ``tree.parent[1:]``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class TreeError(ValueError):
    """Raised when a tree or its observations violate an invariant."""


class NewickError(TreeError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True, eq=False)
class Tree:
    """Immutable rooted tree.

    ``parent[i]`` is the parent of node ``i`` (``-1`` for the root) and must
    be smaller than ``i``.  ``length[i]`` is the length of the branch above
    node ``i``; ``length[0]`` is ignored and stored as 0.
    """

    parent: np.ndarray
    length: np.ndarray
    labels: tuple = ()
    observations: tuple = ()
    n_categories: int = 2

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        length = np.asarray(self.length, dtype=float).copy()
        n = len(parent)
        if n == 0:
            raise TreeError("tree has no nodes")
        if len(length) != n:
            raise TreeError("length array does not match node count")
        if parent[0] != -1:
            raise TreeError("node 0 must be the root")
        if n > 1 and np.any((parent[1:] < 0) | (parent[1:] >= np.arange(1, n))):
            raise TreeError("parents must precede children and only node 0 may be a root")
        length[0] = 0.0
        if not np.all(np.isfinite(length)) or np.any(length < 0):
            raise TreeError("branch lengths must be finite and nonnegative")
        if n > 1 and not np.any(length[1:] > 0):
            raise TreeError("at least one branch length must be positive")
        labels = tuple(self.labels) if self.labels else (None,) * n
        if len(labels) != n:
            raise TreeError("labels do not match node count")
        named = [lab for lab in labels if lab is not None]
        if len(set(named)) != len(named):
            dup = next(lab for lab in named if named.count(lab) > 1)
            raise TreeError(f"duplicate node label {dup!r}")
        obs = tuple(tuple(int(v) for v in o) for o in self.observations) if self.observations else ((),) * n
        if len(obs) != n:
            raise TreeError("observations do not match node count")
        if self.n_categories < 1:
            raise TreeError("alphabet must have at least one category")
        for o in obs:
            for v in o:
                if not 0 <= v < self.n_categories:
                    raise TreeError(f"observation {v} outside alphabet 0..{self.n_categories - 1}")
        parent.setflags(write=False)
        length.setflags(write=False)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "observations", obs)

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def n_branches(self) -> int:
        return len(self.parent) - 1

    @property
    def branch_lengths(self) -> np.ndarray:
        return self.length[1:]

    @property
    def n_observations(self) -> int:
        return sum(len(o) for o in self.observations)

    @cached_property
    def children(self) -> tuple:
        kids = [[] for _ in range(self.n_nodes)]
        for i in range(1, self.n_nodes):
            kids[self.parent[i]].append(i)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def leaves(self) -> tuple:
        return tuple(i for i, k in enumerate(self.children) if not k)

    @cached_property
    def node_times(self) -> np.ndarray:
        """Distance from the root for every node."""
        t = np.zeros(self.n_nodes)
        for i in range(1, self.n_nodes):
            t[i] = t[self.parent[i]] + self.length[i]
        return t

    @cached_property
    def depth(self) -> np.ndarray:
        """Number of branches between each node and the root."""
        dep = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(1, self.n_nodes):
            dep[i] = dep[self.parent[i]] + 1
        return dep

    @cached_property
    def subtree_leaf_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes - 1, -1, -1):
            if not self.children[i]:
                counts[i] = 1
            if i > 0:
                counts[self.parent[i]] += counts[i]
        return counts

    @cached_property
    def adjacent_branch_pairs(self) -> np.ndarray:
        """(parent branch, child branch) index pairs for every node pair
        joined by two consecutive branches."""
        pairs = [(self.parent[i] - 1, i - 1) for i in range(1, self.n_nodes) if self.parent[i] > 0]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def label_index(self) -> dict:
        return {lab: i for i, lab in enumerate(self.labels) if lab is not None}

    def node_id(self, label: str) -> int:
        """Resolve a label, or ``#<id>`` for an unlabeled node."""
        if label in self.label_index:
            return self.label_index[label]
        m = re.fullmatch(r"#(\d+)", label)
        if m and int(m.group(1)) < self.n_nodes:
            return int(m.group(1))
        raise TreeError(f"unknown node label {label!r}")

    def node_name(self, i: int) -> str:
        lab = self.labels[i]
        return lab if lab is not None else f"#{i}"

    def with_lengths(self, length) -> "Tree":
        return Tree(self.parent, length, self.labels, self.observations, self.n_categories)

    def with_observations(self, observations, n_categories=None) -> "Tree":
        return Tree(self.parent, self.length, self.labels, observations,
                    self.n_categories if n_categories is None else n_categories)

    def observation_arrays(self):
        """Observations as CSR arrays ``(ptr, values)``."""
        return self._observation_csr

    @cached_property
    def _observation_csr(self):
        ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(o) for o in self.observations])
        values = np.fromiter((v for o in self.observations for v in o), dtype=np.int64,
                             count=int(ptr[-1]))
        ptr.setflags(write=False)
        values.setflags(write=False)
        return ptr, values

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(to_newick(self).encode())
        h.update(repr(self.observations).encode())
        h.update(str(self.n_categories).encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Newick

_SPECIAL = set("():,;[]'")


class _Scanner:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def skip(self):
        text = self.text
        while self.pos < len(text):
            c = text[self.pos]
            if c.isspace():
                self.pos += 1
            elif c == "[":
                end = text.find("]", self.pos)
                if end < 0:
                    raise NewickError("unterminated comment", self.pos)
                self.pos = end + 1
            else:
                break

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def label(self):
        self.skip()
        text = self.text
        if self.pos < len(text) and text[self.pos] == "'":
            start = self.pos
            self.pos += 1
            out = []
            while True:
                if self.pos >= len(text):
                    raise NewickError("unterminated quoted label", start)
                c = text[self.pos]
                if c == "'":
                    if text[self.pos + 1:self.pos + 2] == "'":
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    return "".join(out)
                out.append(c)
                self.pos += 1
        start = self.pos
        while self.pos < len(text) and text[self.pos] not in _SPECIAL and not text[self.pos].isspace():
            self.pos += 1
        return text[start:self.pos] or None

    def length(self):
        if self.peek() != ":":
            return None
        self.pos += 1
        self.skip()
        start = self.pos
        m = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?").match(self.text, self.pos)
        if not m:
            raise NewickError("bad branch length", start)
        self.pos = m.end()
        return float(m.group(0))


def parse_newick(text: str, *, ignore_internal_labels: bool = False,
                 default_length: float = 1.0) -> Tree:
    """Parse one Newick statement.

    Missing branch lengths default to ``default_length``; comments in square
    brackets are skipped and single-quoted labels may contain any character.
    """
    sc = _Scanner(text)
    parent, labels, lengths = [], [], []

    def new_node(par):
        parent.append(par)
        labels.append(None)
        lengths.append(None)
        return len(parent) - 1

    stack = []
    if sc.peek() == "(":
        sc.pos += 1
        stack.append(new_node(-1))
        expect_child = True
        while stack:
            c = sc.peek()
            if expect_child:
                if c == "(":
                    sc.pos += 1
                    stack.append(new_node(stack[-1]))
                    continue
                if c in ("", ";"):
                    raise NewickError("unexpected end of tree", sc.pos)
                node = new_node(stack[-1])
                labels[node] = sc.label()
                lengths[node] = sc.length()
                expect_child = False
                continue
            if c == ",":
                sc.pos += 1
                expect_child = True
            elif c == ")":
                sc.pos += 1
                node = stack.pop()
                lab = sc.label()
                labels[node] = None if ignore_internal_labels else lab
                lengths[node] = sc.length()
            else:
                raise NewickError("expected ',' or ')'" if c else "missing ')'", sc.pos)
    else:
        node = new_node(-1)
        labels[node] = sc.label()
        sc.length()
    if sc.peek() != ";":
        raise NewickError("missing ';' terminator", sc.pos)
    sc.pos += 1
    if sc.peek():
        raise NewickError("trailing characters after ';'", sc.pos)
    length = [default_length if x is None else x for x in lengths]
    length[0] = 0.0
    if any(x < 0 for x in length):
        raise TreeError("negative branch length")
    return Tree(np.array(parent), np.array(length), tuple(labels))


def _quote(label):
    if label is None:
        return ""
    if label and not any(c in _SPECIAL or c.isspace() for c in label):
        return label
    return "'" + label.replace("'", "''") + "'"


def to_newick(tree: Tree) -> str:
    """Serialize with exact (``repr``) branch lengths."""
    parts = [None] * tree.n_nodes
    for i in range(tree.n_nodes - 1, -1, -1):
        kids = tree.children[i]
        s = "(" + ",".join(parts[k] for k in kids) + ")" if kids else ""
        s += _quote(tree.labels[i])
        if i > 0:
            s += ":" + repr(float(tree.length[i]))
        parts[i] = s
        for k in kids:
            parts[k] = None
    return parts[0] + ";"


def read_newick(path, **kwargs) -> Tree:
    with open(path, encoding="utf-8") as fh:
        return parse_newick(fh.read(), **kwargs)


# ---------------------------------------------------------------------------
# Observations

def attach_observations(tree: Tree, records: Iterable[tuple], n_categories: int | None = None) -> Tree:
    """Append ``(label, value)`` records to the matching nodes."""
    records = list(records)
    if n_categories is None:
        top = max((int(v) for _, v in records), default=-1)
        n_categories = max(tree.n_categories, top + 1)
    obs = [list(o) for o in tree.observations]
    for label, value in records:
        node = tree.node_id(label)
        value = int(value)
        if not 0 <= value < n_categories:
            raise TreeError(f"value {value} for {label!r} outside alphabet 0..{n_categories - 1}")
        obs[node].append(value)
    return tree.with_observations(obs, n_categories)


def read_observations(path) -> list:
    """Read ``label<TAB>value`` records; a header line is skipped when its
    second column is not an integer."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise TreeError(f"line {lineno + 1}: expected two tab-separated columns")
            label, value = cols[0].strip(), cols[1].strip()
            try:
                records.append((label, int(value)))
            except ValueError:
                if lineno == 0 and not records:
                    continue
                raise TreeError(f"line {lineno + 1}: non-integer value {value!r}") from None
    return records


def write_observations(tree: Tree, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node\tvalue\n")
        for i, obs in enumerate(tree.observations):
            for v in obs:
                fh.write(f"{tree.node_name(i)}\t{v}\n")


# ---------------------------------------------------------------------------
# Rescaling and pruning

def lineage_counts(tree: Tree):
    """Event times and the number of branches alive on each interval
    between consecutive events."""
    t = tree.node_times
    events = np.unique(t)
    if tree.n_branches == 0:
        return events, np.zeros(0, dtype=np.int64)
    start = np.searchsorted(events, t[tree.parent[1:]])
    stop = np.searchsorted(events, t[1:])
    diff = np.zeros(len(events) + 1, dtype=np.int64)
    np.add.at(diff, start, 1)
    np.add.at(diff, stop, -1)
    return events, np.cumsum(diff)[:-1]


def rescale(tree: Tree) -> Tree:
    """Replace each branch length by the integral of 1/k(t) over its span,
    k(t) being the number of branches alive at time t."""
    if tree.n_branches == 0:
        return tree
    t = tree.node_times
    events, k = lineage_counts(tree)
    gaps = np.diff(events)
    with np.errstate(divide="ignore", invalid="ignore"):
        per_interval = np.where(k[:-1] > 0, gaps / np.maximum(k[:-1], 1), 0.0)
    cum = np.concatenate([[0.0], np.cumsum(per_interval)])
    start = np.searchsorted(events, t[tree.parent[1:]])
    stop = np.searchsorted(events, t[1:])
    new = np.zeros(tree.n_nodes)
    new[1:] = cum[stop] - cum[start]
    new[1:][tree.length[1:] == 0] = 0.0
    return tree.with_lengths(new)


def normalize_branches(tree: Tree) -> Tree:
    """Scale branch lengths so that they sum to the number of branches."""
    total = tree.branch_lengths.sum()
    if tree.n_branches == 0:
        return tree
    return tree.with_lengths(tree.length * (tree.n_branches / total))


@dataclass(frozen=True, eq=False)
class PrunedTree:
    """Tree contracted along zero-jump branches.

    Group ``g`` is identified by its topmost node; groups are numbered in
    increasing order of that node, so group 0 holds the root and every
    parent group precedes its children.
    """

    group_of: np.ndarray
    group_parent: np.ndarray
    edge_jumps: np.ndarray
    members: tuple
    observations: tuple
    top_node: np.ndarray = field(default=None)

    @property
    def n_groups(self) -> int:
        return len(self.group_parent)

    root_group = 0

    @cached_property
    def children(self) -> tuple:
        kids = [[] for _ in range(self.n_groups)]
        for g in range(1, self.n_groups):
            kids[self.group_parent[g]].append(g)
        return tuple(tuple(k) for k in kids)

    def bfs_order(self) -> list:
        order = [0]
        for g in order:
            order.extend(self.children[g])
        return order


def _check_jumps(tree: Tree, jumps) -> np.ndarray:
    b = np.asarray(jumps, dtype=np.int64)
    if b.shape != (tree.n_branches,):
        raise TreeError(f"jump vector has length {b.size}, tree has {tree.n_branches} branches")
    if np.any(b < 0):
        raise TreeError("jump counts must be nonnegative")
    return b


def prune(tree: Tree, jumps: Sequence[int]) -> PrunedTree:
    b = _check_jumps(tree, jumps)
    group_of = np.zeros(tree.n_nodes, dtype=np.int64)
    tops = [0]
    for i in range(1, tree.n_nodes):
        if b[i - 1] > 0:
            group_of[i] = len(tops)
            tops.append(i)
        else:
            group_of[i] = group_of[tree.parent[i]]
    tops = np.array(tops, dtype=np.int64)
    group_parent = np.full(len(tops), -1, dtype=np.int64)
    group_parent[1:] = group_of[tree.parent[tops[1:]]]
    edge_jumps = np.zeros(len(tops), dtype=np.int64)
    edge_jumps[1:] = b[tops[1:] - 1]
    members = [[] for _ in tops]
    for i, g in enumerate(group_of):
        members[g].append(i)
    pooled = tuple(tuple(v for i in m for v in tree.observations[i]) for m in members)
    return PrunedTree(group_of, group_parent, edge_jumps,
                      tuple(tuple(m) for m in members), pooled, tops)
