import math

import numpy as np
import pytest
from scipy import stats

from treejump import oracle, pmcmc, smc
from treejump.jumpmodel import RESAMPLE, Proposal, RateConfig
from treejump.pmcmc import ChainFormatError, McmcConfig, read_chain, run, write_chain
from treejump.treemodel import Tree, attach_observations, parse_newick, rescale

FOUR = "((A:1,B:1):1,(C:1,D:1):1);"


def four_leaf(values):
    return attach_observations(parse_newick(FOUR), list(zip("ABCD", values)), 2)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"iterations": 1}, {"burn_in": 0.0}, {"burn_in": 1.0},
                                    {"discount": 1.0}, {"particles": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            McmcConfig(**kw)

    def test_dict_round_trip(self):
        c = McmcConfig(iterations=10, rate=RateConfig(mode="fixed", lam=0.3), seed=4)
        assert McmcConfig.from_dict(c.to_dict()) == c


class TestRun:
    def test_record_count_and_positive_rate(self):
        ch = run(four_leaf([0, 1, 1, 0]), McmcConfig(iterations=300, particles=10, seed=1))
        assert len(ch) == 300 and ch.jumps.shape == (300, 6)
        assert np.all(ch.lam > 0)

    def test_no_branches_gives_prior_rate(self):
        t = Tree([-1], [0], observations=((0, 1, 1),))
        cfg = McmcConfig(iterations=10000, particles=5, rate=RateConfig(rho=2.0), seed=3)
        ch = run(t, cfg)
        assert ch.jumps.shape == (10000, 0)
        assert stats.kstest(ch.lam, stats.expon(scale=0.5).cdf).pvalue > 0.001

    def test_needs_observations(self):
        with pytest.raises(ValueError):
            run(parse_newick(FOUR), McmcConfig(iterations=10, seed=1))

    def test_fixed_rate_constant(self):
        ch = run(four_leaf([0, 1, 1, 0]),
                 McmcConfig(iterations=50, particles=5, rate=RateConfig(mode="fixed", lam=0.7), seed=2))
        assert np.all(ch.lam == 0.7)

    def test_reproducible(self, tmp_path):
        t = four_leaf([0, 0, 1, 1])
        cfg = McmcConfig(iterations=500, particles=20, seed=9)
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_chain(run(t, cfg), a)
        write_chain(run(t, cfg), b)
        assert a.read_bytes() == b.read_bytes()

    def test_pseudo_marginal_discipline(self, monkeypatch):
        calls = []
        real = smc.estimate_log_likelihood

        def counting(*args, **kwargs):
            calls.append(1)
            return real(*args, **kwargs)

        monkeypatch.setattr(pmcmc.smc, "estimate_log_likelihood", counting)
        ch = run(four_leaf([0, 0, 1, 1]), McmcConfig(iterations=2000, particles=10, seed=5))
        assert ch.smc_calls == len(calls)
        # estimates change only when a proposal is accepted with a new state
        same = np.all(ch.jumps[1:] == ch.jumps[:-1], axis=1)
        assert np.all(ch.loglik[1:][same] == ch.loglik[:-1][same])
        moved = ~same
        assert np.all(ch.accepted[1:][moved])
        # one initial call plus at most one per iteration
        assert len(calls) <= 1 + len(ch)

    def test_noop_always_accepted(self, monkeypatch):
        calls = []
        real = smc.estimate_log_likelihood
        monkeypatch.setattr(pmcmc.smc, "estimate_log_likelihood",
                            lambda *a, **k: calls.append(1) or real(*a, **k))
        monkeypatch.setattr(pmcmc.jumpmodel, "propose",
                            lambda b, lam, tree, rng: Proposal(np.array(b), 0.0, RESAMPLE))
        ch = run(four_leaf([0, 0, 1, 1]), McmcConfig(iterations=200, particles=5, seed=6))
        assert ch.accepted.all()
        assert len(calls) == 1 and ch.smc_calls == 1
        assert np.all(ch.loglik == ch.loglik[0])

    def test_normalized_branches(self):
        t = four_leaf([0, 0, 1, 1])
        ch = run(t, McmcConfig(iterations=20, particles=5, seed=1, normalize_branches=True))
        assert ch.lengths.sum() == pytest.approx(6.0)


class TestPersistence:
    def chain(self):
        return run(four_leaf([1, 0, 1, 1]), McmcConfig(iterations=40, particles=5, seed=2))

    def test_round_trip(self, tmp_path):
        ch = self.chain()
        path = tmp_path / "chain.tsv"
        write_chain(ch, path)
        back = read_chain(path, ch.metadata())
        assert np.array_equal(back.lam, ch.lam)
        assert np.array_equal(back.jumps, ch.jumps)
        assert np.array_equal(back.loglik, ch.loglik)
        assert np.array_equal(back.accepted, ch.accepted)
        assert np.array_equal(back.move, ch.move)
        assert back.config == ch.config

    def test_truncated(self, tmp_path):
        ch = self.chain()
        path = tmp_path / "chain.tsv"
        write_chain(ch, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(ChainFormatError):
            read_chain(path, ch.metadata())

    def test_missing_records(self, tmp_path):
        ch = self.chain()
        path = tmp_path / "chain.tsv"
        write_chain(ch, path)
        lines = path.read_text().splitlines(keepends=True)
        path.write_text("".join(lines[:-3]))
        with pytest.raises(ChainFormatError, match="records"):
            read_chain(path, ch.metadata())

    def test_bad_header(self, tmp_path):
        path = tmp_path / "chain.tsv"
        path.write_text("nonsense\n")
        with pytest.raises(ChainFormatError):
            read_chain(path, self.chain().metadata())


@pytest.mark.slow
class TestPosteriorCorrectness:
    """Long chains against the enumeration oracle.  The Monte Carlo part of
    the total-variation distance shrinks with chain length, so a long run
    isolates systematic error."""

    @pytest.mark.parametrize("values", [(0, 0, 1, 1), (1, 1, 1, 1), (0, 0, 0, 1)])
    def test_matches_oracle(self, values):
        t = four_leaf(values)
        scaled = rescale(t)
        lam = 1 / scaled.branch_lengths.sum()
        exact = oracle.exact_jump_posterior(scaled, 0.5, None, lam)
        cfg = McmcConfig(iterations=400_000, particles=100, rate=RateConfig(mode="fixed", lam=lam), seed=11)
        ch = run(t, cfg)
        emp = oracle.empirical_distribution(ch.jumps[ch.post_burn_in()], 2)
        assert oracle.total_variation(exact, emp) < 0.05
