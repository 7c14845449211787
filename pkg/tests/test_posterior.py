import math
import warnings

import numpy as np
import pytest

from treejump import posterior
from treejump.jumpmodel import RateConfig
from treejump.pmcmc import Chain, McmcConfig
from treejump.treemodel import parse_newick, prune

FIG = parse_newick("((G1,G2)G6,(G3,(G4,G5)G8)G7)G0;")


def make_chain(jumps, parent=FIG.parent, lengths=None, lam=None, rate=None, burn_in=0.5):
    jumps = np.atleast_2d(np.asarray(jumps, dtype=np.int64))
    M, B = jumps.shape
    lengths = np.ones(B) if lengths is None else np.asarray(lengths, dtype=float)
    lam = np.linspace(0.5, 1.5, M) if lam is None else np.asarray(lam, dtype=float)
    config = McmcConfig(iterations=max(M, 2), burn_in=burn_in, rate=rate or RateConfig())
    return Chain(lam, jumps, np.zeros(M), np.ones(M, bool), np.zeros(M, np.int8), config,
                 lengths, np.asarray(parent), runtime=2.0)


class TestAssignments:
    def test_canonical(self):
        b = np.zeros(8, int)
        b[FIG.node_id("G6") - 1] = 2
        b[FIG.node_id("G8") - 1] = 1
        z = posterior.cluster_assignments(FIG.parent, b)[0]
        p = prune(FIG, b)
        assert np.array_equal(z, p.group_of)
        assert z[0] == 0 and z.max() == 2

    def test_random_matches_prune(self, rng):
        for _ in range(50):
            b = rng.integers(0, 2, size=8)
            z = posterior.cluster_assignments(FIG.parent, b)[0]
            assert np.array_equal(z, prune(FIG, b).group_of)


class TestBranchProbabilities:
    def test_all_zero(self):
        assert np.all(posterior.branch_probabilities(make_chain(np.zeros((10, 8)))) == 0)

    def test_alternating(self):
        b = np.zeros((20, 8), int)
        b[::2, 0] = 1
        assert posterior.branch_probabilities(make_chain(b))[0] == 0.5

    def test_counting_identity(self, rng):
        b = rng.integers(0, 3, size=(40, 8)) * (rng.random((40, 8)) < 0.3)
        ch = make_chain(b)
        probs = posterior.branch_probabilities(ch)
        seg = b[20:]
        assert np.all(probs <= 1)
        assert probs.sum() == pytest.approx(np.mean((seg > 0).sum(axis=1)))

    def test_empty_segment(self):
        ch = make_chain(np.zeros((2, 8)))
        with pytest.raises(ValueError):
            posterior.branch_probabilities(ch, burn_in=1.0)


class TestCoClustering:
    def test_path_identity(self, rng):
        b = rng.integers(0, 2, size=(60, 8)) * (rng.random((60, 8)) < 0.25)
        P = posterior.co_clustering(FIG.parent, b)
        anc = [set() for _ in range(FIG.n_nodes)]
        for i in range(1, FIG.n_nodes):
            anc[i] = anc[FIG.parent[i]] | {i}
        for i in range(FIG.n_nodes):
            for j in range(FIG.n_nodes):
                path = [v - 1 for v in anc[i] ^ anc[j]]
                frac = np.mean(np.all(b[:, path] == 0, axis=1)) if path else 1.0
                assert P[i, j] == pytest.approx(frac, abs=1e-14)
        assert np.allclose(P, P.T) and np.all(np.diag(P) == 1)


class TestBinder:
    def test_score_example(self):
        P = np.array([[1, 0.9, 0.2], [0.9, 1, 0.2], [0.2, 0.2, 1]])
        assert posterior.binder_score([0, 0, 0], P) == pytest.approx(-0.2)
        assert posterior.binder_score([0, 0, 1], P) == pytest.approx(0.4)
        assert posterior.binder_score([0, 1, 2], P) == pytest.approx(0.0)
        candidates = [[0, 0, 0], [0, 0, 1], [0, 1, 2]]
        best = max(candidates, key=lambda z: posterior.binder_score(z, P))
        assert best == [0, 0, 1]

    def test_degenerate_chain(self):
        b = np.zeros((30, 8), int)
        b[:, 3] = 1
        z, bhat, it = posterior.binder_median(make_chain(b))
        assert list(bhat) == list(b[0])
        assert it == 15 + 7

    def test_returns_scanned_candidate(self, rng):
        b = rng.integers(0, 2, size=(80, 8)) * (rng.random((80, 8)) < 0.3)
        z, bhat, it = posterior.binder_median(make_chain(b))
        assert it >= 60
        assert np.array_equal(b[it], bhat)
        assert np.array_equal(z, prune(FIG, bhat).group_of)

    def test_replication_invariance(self, rng):
        b = rng.integers(0, 2, size=(40, 8)) * (rng.random((40, 8)) < 0.3)
        z1, b1, _ = posterior.binder_median(make_chain(b))
        z2, b2, _ = posterior.binder_median(make_chain(np.repeat(b, 3, axis=0)))
        assert np.array_equal(z1, z2) and np.array_equal(b1, b2)

    def test_ties_go_to_earliest(self):
        parent = np.array([-1, 0, 0])
        b = np.array([[0, 0]] * 4 + [[1, 0], [0, 1], [1, 0], [0, 1]])
        _, bhat, it = posterior.binder_median(make_chain(b, parent, burn_in=0.5))
        assert it == 6 and list(bhat) == [1, 0]

    def test_too_short(self):
        with pytest.raises(ValueError):
            posterior.binder_median(make_chain(np.zeros((2, 8)), burn_in=0.6))


class TestBayesFactor:
    def test_example(self):
        b = np.zeros((400, 2), int)
        b[200:380, 0] = 1
        ch = make_chain(b, np.array([-1, 0, 0]), lengths=[1.0, 1.0])
        K = posterior.bayes_factor(ch)
        assert K == pytest.approx(9.0)
        assert math.log10(K) == pytest.approx(0.954, abs=1e-3)

    def test_infinite_and_zero(self):
        parent = np.array([-1, 0, 0])
        assert posterior.bayes_factor(make_chain(np.ones((10, 2)), parent)) == math.inf
        assert posterior.bayes_factor(make_chain(np.zeros((10, 2)), parent)) == 0.0

    def test_fixed_rate(self):
        b = np.zeros((20, 2), int)
        b[10:15, 0] = 1
        ch = make_chain(b, np.array([-1, 0, 0]), lengths=[1.0, 1.0],
                        rate=RateConfig(mode="fixed", lam=0.5))
        prior0 = math.exp(-1.0)
        assert posterior.bayes_factor(ch) == pytest.approx(1.0 / ((1 - prior0) / prior0))

    def test_prior_chain(self):
        # draws from the prior itself give K close to 1
        rng = np.random.default_rng(2)
        lengths = np.array([0.5, 1.5, 1.0])
        total = lengths.sum()
        lam = rng.exponential(1 / total, size=20000)
        b = rng.poisson(lam[:, None] * lengths)
        ch = make_chain(np.concatenate([b, b]), np.array([-1, 0, 0, 2]), lengths=lengths)
        assert posterior.bayes_factor(ch) == pytest.approx(1.0, abs=0.05)

    def test_monotone(self):
        parent = np.array([-1, 0, 0])
        vals = []
        for k in range(1, 10):
            b = np.zeros((20, 2), int)
            b[10:10 + k, 1] = 1
            vals.append(posterior.bayes_factor(make_chain(b, parent)))
        assert all(x < y for x, y in zip(vals, vals[1:]))


class TestEss:
    def test_iid(self, rng):
        M = 10000
        assert 0.8 * M <= posterior.ess(rng.standard_normal(M)) <= 1.2 * M

    def test_ar1(self, rng):
        M = 100_000
        x = np.empty(M)
        x[0] = rng.standard_normal()
        eps = rng.standard_normal(M)
        for i in range(1, M):
            x[i] = 0.5 * x[i - 1] + eps[i]
        assert 0.28 <= posterior.ess(x) / M <= 0.39

    def test_alternating_clamped(self):
        assert posterior.ess(np.tile([1.0, -1.0], 500)) == 1000

    def test_constant(self):
        with pytest.warns(UserWarning):
            assert posterior.ess(np.ones(50)) == 50

    def test_too_short(self):
        with pytest.raises(ValueError):
            posterior.ess(np.arange(5.0))


class TestSummary:
    def test_fields(self, rng):
        b = rng.integers(0, 2, size=(60, 8)) * (rng.random((60, 8)) < 0.3)
        s = posterior.summarize(make_chain(b))
        d = s.to_dict()
        assert set(d["branch_probabilities"]) == {str(i) for i in range(8)}
        assert np.array_equal(prune(FIG, s.median_jumps).group_of, s.median_assignment)
        assert d["n_samples"] == 30
        assert s.ess_per_second == pytest.approx(s.ess_lambda / 2.0)
        assert s.to_json().endswith("\n")

    def test_infinite_k_serialised(self):
        s = posterior.summarize(make_chain(np.ones((20, 8))))
        d = s.to_dict()
        assert d["bayes_factor"] == "inf" and d["log10_bayes_factor"] == "inf"

    def test_zero_k_serialised(self):
        d = posterior.summarize(make_chain(np.zeros((20, 8)))).to_dict()
        assert d["log10_bayes_factor"] == "-inf"

    def test_co_clustering_csv(self, tmp_path):
        s = posterior.summarize(make_chain(np.zeros((20, 8))))
        path = tmp_path / "cc.csv"
        s.write_co_clustering(path, [FIG.node_name(i) for i in range(9)])
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[1:] == [FIG.node_name(i) for i in range(9)]
        assert len(lines) == 10

    def test_pooled(self, rng):
        chains = [make_chain(rng.integers(0, 2, size=(40, 8)) * (rng.random((40, 8)) < 0.3))
                  for _ in range(3)]
        s = posterior.summarize_pooled(chains)
        assert s.n_samples == 60 and s.n_chains == 3
        ch = chains[s.median_chain]
        assert np.array_equal(ch.jumps[s.median_iteration], s.median_jumps)
        single = posterior.summarize_pooled(chains[:1])
        ref = posterior.summarize(chains[0])
        assert single.to_json() == ref.to_json()
