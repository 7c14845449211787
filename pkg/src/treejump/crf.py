"""Chinese restaurant franchise on a pruned tree (concentration fixed at 0).

Each group of the pruned tree owns a restaurant.  A restaurant whose group
sits ``b`` jumps below its parent uses discount ``d**b``; the root restaurant
uses ``d`` and draws new cluster labels from the base measure.  Every
cluster in a child restaurant is one customer in the parent restaurant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .treemodel import PrunedTree


@dataclass(frozen=True)
class BaseMeasure:
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("base measure must be a nonnegative vector summing to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def uniform(cls, n_categories: int) -> "BaseMeasure":
        return cls(np.full(n_categories, 1.0 / n_categories))

    @property
    def n_categories(self) -> int:
        return len(self.probabilities)

    def __getitem__(self, value):
        return self.probabilities[value]


@dataclass
class Restaurant:
    discount: float
    labels: list = field(default_factory=list)
    counts: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def n_clusters(self) -> int:
        return len(self.counts)

    def copy(self) -> "Restaurant":
        return Restaurant(self.discount, list(self.labels), list(self.counts))


@dataclass(frozen=True)
class ClusterConfiguration:
    """Seating path of one observation, from its group upwards.

    Every entry but the last created a new cluster.  The last entry joined
    an existing cluster unless ``new_at_root`` is set, in which case it is
    a new root cluster whose label came from the base measure.
    """

    path: tuple
    new_at_root: bool = False


class CrfState:
    def __init__(self, pruned: PrunedTree, discount: float, base: BaseMeasure):
        if not 0 < discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        self.pruned = pruned
        self.discount = discount
        self.base = base
        self.restaurants = [
            Restaurant(discount if g == 0 else discount ** int(pruned.edge_jumps[g]))
            for g in range(pruned.n_groups)
        ]
        self.direct = [dict() for _ in range(pruned.n_groups)]

    def copy(self) -> "CrfState":
        new = object.__new__(CrfState)
        new.pruned = self.pruned
        new.discount = self.discount
        new.base = self.base
        new.restaurants = [r.copy() for r in self.restaurants]
        new.direct = [dict(c) for c in self.direct]
        return new

    def _path(self, group):
        if not 0 <= group < len(self.restaurants):
            raise KeyError(f"unknown group {group}")
        path = []
        while group >= 0:
            path.append(group)
            group = int(self.pruned.group_parent[group])
        return path

    def _check_value(self, value):
        if not 0 <= value < self.base.n_categories:
            raise ValueError(f"value {value} outside alphabet")

    def _predictive_along(self, path, value):
        """Predictive probability at every level of ``path``, bottom first."""
        probs = [0.0] * len(path)
        p = self.base[value]
        for level in range(len(path) - 1, -1, -1):
            r = self.restaurants[path[level]]
            n = r.n
            if n:
                d = r.discount
                matching = [c for lab, c in zip(r.labels, r.counts) if lab == value]
                p = (sum(matching) - d * len(matching)) / n + r.n_clusters * d / n * p
            probs[level] = p
        return probs

    def predictive(self, group: int, value: int) -> float:
        self._check_value(value)
        return self._predictive_along(self._path(group), value)[0]

    def predictive_vector(self, group: int) -> np.ndarray:
        return np.array([self.predictive(group, v) for v in range(self.base.n_categories)])

    def seat(self, group: int, value: int, rng: np.random.Generator) -> ClusterConfiguration:
        """Seat an observation of known value, sampling its path exactly
        from the conditional given the value."""
        self._check_value(value)
        path = self._path(group)
        probs = self._predictive_along(path, value)
        if probs[0] <= 0:
            raise ValueError(f"value {value} has zero predictive probability")
        self.direct[group][value] = self.direct[group].get(value, 0) + 1
        seating = []
        for level, g in enumerate(path):
            r = self.restaurants[g]
            if r.n:
                d = r.discount
                parent_p = probs[level + 1] if level + 1 < len(path) else self.base[value]
                idx = [k for k, lab in enumerate(r.labels) if lab == value]
                weights = [r.counts[k] - d for k in idx] + [r.n_clusters * d * parent_p]
                pick = rng.choice(len(weights), p=np.array(weights) / sum(weights))
                if pick < len(idx):
                    k = idx[pick]
                    r.counts[k] += 1
                    seating.append((g, k))
                    return ClusterConfiguration(tuple(seating))
            seating.append((g, r.n_clusters))
            r.labels.append(value)
            r.counts.append(1)
        return ClusterConfiguration(tuple(seating), new_at_root=True)

    def unseat(self, config: ClusterConfiguration):
        """Undo the most recent ``seat`` that returned ``config``."""
        *created, last = config.path
        origin = config.path[0][0]
        value = self.restaurants[origin].labels[config.path[0][1]]
        self.direct[origin][value] -= 1
        if not self.direct[origin][value]:
            del self.direct[origin][value]
        g, k = last
        r = self.restaurants[g]
        if config.new_at_root:
            created.append(last)
        else:
            r.counts[k] -= 1
        for g, k in reversed(created):
            r = self.restaurants[g]
            if k != r.n_clusters - 1 or r.counts[k] != 1:
                raise ValueError("configuration is not the most recent seating")
            r.labels.pop()
            r.counts.pop()

    def _draw(self, group, rng):
        path = self._path(group)
        opened = []
        value = None
        for g in path:
            r = self.restaurants[g]
            if r.n:
                w = np.array(r.counts + [r.n_clusters * r.discount], dtype=float) - \
                    np.array([r.discount] * r.n_clusters + [0.0])
                pick = rng.choice(len(w), p=w / w.sum())
                if pick < r.n_clusters:
                    r.counts[pick] += 1
                    value = r.labels[pick]
                    break
            opened.append(g)
        if value is None:
            value = int(rng.choice(self.base.n_categories, p=self.base.probabilities))
        for g in opened:
            r = self.restaurants[g]
            r.labels.append(value)
            r.counts.append(1)
        self.direct[group][value] = self.direct[group].get(value, 0) + 1
        return value

    def consistent(self) -> bool:
        """Every restaurant's customers, label by label, are exactly its
        directly seated observations plus its child restaurants' clusters."""
        sent = [dict(c) for c in self.direct]
        for g in range(1, len(self.restaurants)):
            parent = int(self.pruned.group_parent[g])
            for lab in self.restaurants[g].labels:
                sent[parent][lab] = sent[parent].get(lab, 0) + 1
        for g, r in enumerate(self.restaurants):
            if any(c < 1 for c in r.counts):
                return False
            own = {}
            for lab, c in zip(r.labels, r.counts):
                own[lab] = own.get(lab, 0) + c
            if own != {lab: c for lab, c in sent[g].items() if c}:
                return False
        return True


def generate(pruned: PrunedTree, discount: float, base: BaseMeasure, counts, rng) -> list:
    """Draw ``counts[g]`` observations for every group by sequential seating."""
    state = CrfState(pruned, discount, base)
    out = []
    for g in range(pruned.n_groups):
        out.append([state._draw(g, rng) for _ in range(int(counts[g]))])
    return out
