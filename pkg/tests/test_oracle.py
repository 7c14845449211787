import itertools
import math

import numpy as np
import pytest

from treejump.crf import BaseMeasure
from treejump.oracle import (OracleLimitError, TruncationSpec, empirical_distribution,
                             exact_jump_posterior, exact_likelihood, total_variation,
                             unnormalized_jump_mass)
from treejump.treemodel import Tree, attach_observations, parse_newick, prune, rescale
from treejump.smc import observation_order


def collapsed_pair(values, d):
    """Likelihoods at B on root->A->B (one jump per edge) and root->B (d^2)."""
    chain = Tree([-1, 0, 1], [0, 1.0, 1.0], observations=((), (), tuple(values)))
    deep = exact_likelihood([1, 1], chain, d)
    # a single pruned edge whose discount is d**2 is a two-jump edge
    short = Tree([-1, 0], [0, 1.0], observations=((), tuple(values)))
    return deep, exact_likelihood([2], short, d)


class TestExactLikelihood:
    def test_two_ones(self):
        t = Tree([-1], [0], observations=((1, 1),))
        assert exact_likelihood([], t, 0.5) == pytest.approx(0.375, abs=1e-15)

    def test_single_observation(self):
        t = attach_observations(parse_newick("((A,B),C);"), [("B", 2)], 3)
        for b in itertools.product(range(3), repeat=4):
            assert exact_likelihood(b, t, 0.7) == pytest.approx(1 / 3, abs=1e-15)

    @pytest.mark.parametrize("d", [0.5, 0.3, 0.8])
    def test_marginalization(self, d):
        for n in range(1, 5):
            for values in itertools.product([0, 1], repeat=n):
                deep, short = collapsed_pair(values, d)
                assert abs(deep - short) < 1e-10

    def test_order_invariance(self):
        t = attach_observations(parse_newick("((A,B),(C,D));"),
                                [("A", 1), ("A", 0), ("B", 1), ("C", 0), ("D", 1), ("D", 1)])
        b = [1, 0, 0, 2, 0, 1]
        order = observation_order(t, prune(t, b))
        rev = list(reversed(order))
        shuffled = [order[i] for i in np.random.default_rng(1).permutation(len(order))]
        ref = exact_likelihood(b, t, 0.5)
        assert exact_likelihood(b, t, 0.5, order=rev) == pytest.approx(ref, abs=1e-12)
        assert exact_likelihood(b, t, 0.5, order=shuffled) == pytest.approx(ref, abs=1e-12)

    def test_sums_to_one_over_datasets(self):
        t = parse_newick("((A,B),C);")
        b = [1, 0, 0, 1]
        total = 0.0
        for vals in itertools.product(range(3), repeat=3):
            data = attach_observations(t, list(zip("ABC", vals)), 3)
            total += exact_likelihood(b, data, 0.4)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_nonuniform_base(self):
        t = Tree([-1], [0], observations=((1,),), n_categories=2)
        assert exact_likelihood([], t, 0.5, BaseMeasure(np.array([0.2, 0.8]))) == pytest.approx(0.8)

    def test_guard(self):
        t = Tree([-1], [0], observations=(tuple([0] * 9),))
        with pytest.raises(OracleLimitError):
            exact_likelihood([], t, 0.5)
        big = attach_observations(parse_newick("((A,B),(C,D));"), [("A", 0)])
        with pytest.raises(OracleLimitError):
            exact_likelihood([1] * 6, big, 0.5, trunc=TruncationSpec(max_groups=4))


class TestJumpPosterior:
    def tree(self, records):
        return rescale(attach_observations(parse_newick("((A,B),C);"), records, 2))

    def test_normalized(self):
        post = exact_jump_posterior(self.tree([("A", 1), ("B", 0), ("C", 1)]), 0.5, None, 0.5)
        assert abs(math.fsum(post.values()) - 1) < 1e-12
        assert len(post) == 3 ** 4

    def test_identical_data_prefers_no_jumps(self):
        post = exact_jump_posterior(self.tree([("A", 1), ("B", 1), ("C", 1)]), 0.5, None, 0.5)
        assert max(post, key=post.get) == (0, 0, 0, 0)

    def test_small_rate(self):
        post = exact_jump_posterior(self.tree([("A", 1), ("B", 0), ("C", 1)]), 0.5, None, 1e-8)
        assert post[(0, 0, 0, 0)] > 1 - 1e-6

    def test_monotone_truncation(self):
        t = self.tree([("A", 1), ("B", 0), ("C", 1)])
        b = (1, 0, 2, 0)
        m2 = unnormalized_jump_mass(b, t, 0.5, None, 0.7, TruncationSpec(b_max=2))
        m3 = unnormalized_jump_mass(b, t, 0.5, None, 0.7, TruncationSpec(b_max=3))
        assert m3 >= m2

    def test_guard(self):
        t = rescale(attach_observations(parse_newick("(((A,B),(C,D)),((E,F),(G,H)));"), [("A", 0)]))
        with pytest.raises(OracleLimitError):
            exact_jump_posterior(t, 0.5, None, 1.0, TruncationSpec(b_max=2))


class TestHelpers:
    def test_total_variation(self):
        assert total_variation({(0,): 0.5, (1,): 0.5}, {(0,): 1.0}) == pytest.approx(0.5)

    def test_empirical_distribution(self):
        emp = empirical_distribution(np.array([[0, 1], [0, 1], [3, 0], [1, 1]]), b_max=2)
        assert emp == {(0, 1): 2 / 3, (1, 1): 1 / 3}
