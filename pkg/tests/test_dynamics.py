import numpy as np
import pytest
import scipy.stats

from crtprune.dynamics import (FlatMarks, MarkedTree, grow_step,
                               growth_offspring_law, mark_flat, mark_tree,
                               prune_at, prune_trajectory, pruned_law,
                               pruned_mass_counts)
from crtprune.errors import DomainError, HorizonError
from crtprune.galton_watson import (Exceeded, leaf_counts_chain, sample_flat,
                                    sample_gw, tree_law)
from crtprune.mechanism import Mechanism, evaluate, invert, shift, theta_lambda
from crtprune.newick import serialize
from crtprune.rng import stream
from crtprune.tree import Tree, single_edge

QUAD = Mechanism(beta=1.0)
ATOMIC = Mechanism(beta=1.0, atoms=((1.0, 1.0),))
P_CUT = 1e-3


def chi2_two_sample(x: np.ndarray, y: np.ndarray, min_expect: int = 10) -> float:
    hi = int(max(x.max(), y.max())) + 1
    ox = np.bincount(x, minlength=hi)
    oy = np.bincount(y, minlength=hi)
    keep = (ox + oy) >= min_expect
    res = scipy.stats.chi2_contingency(np.vstack([ox[keep], oy[keep]]))
    return float(res.pvalue)


class TestEdgeMarks:
    def test_quadratic_times_exponential(self):
        # on one edge of length l the first mark time is Exp(2*beta*l)
        t = single_edge(5.0)
        times = []
        for i in range(4000):
            m = mark_tree(t, QUAD, 1.0, horizon=50.0, rng=stream(20, i))
            times.append(m.marks.t_edge[1])
        times = np.asarray(times)
        assert np.isinf(times).mean() < 0.01
        res = scipy.stats.kstest(times[np.isfinite(times)], "expon",
                                 args=(0, 1 / (2 * 5.0)))
        assert res.pvalue > P_CUT

    def test_atom_mechanism_times_match_cdf(self):
        ell = 3.0
        t = single_edge(ell)
        eta = invert(ATOMIC, 1.0)
        base = evaluate(ATOMIC, eta, 1)
        horizon = 20.0
        times = []
        for i in range(3000):
            m = mark_tree(t, ATOMIC, 1.0, horizon=horizon, rng=stream(21, i))
            times.append(m.marks.t_edge[1])
        times = np.asarray(times)

        def cdf(z):
            return 1.0 - np.exp(-ell * (evaluate(ATOMIC, eta + z, 1) - base))

        fin = times[np.isfinite(times)]
        res = scipy.stats.kstest(fin, lambda z: cdf(z) / cdf(horizon))
        assert res.pvalue > P_CUT
        want_inf = np.exp(-ell * (evaluate(ATOMIC, eta + horizon, 1) - base))
        n = times.size
        band = 3 * np.sqrt(want_inf * (1 - want_inf) / n)
        assert abs(np.isinf(times).mean() - want_inf) < band

    def test_positions_uniform_and_independent(self):
        t = single_edge(4.0)
        pos = []
        for i in range(3000):
            m = mark_tree(t, QUAD, 1.0, horizon=100.0, rng=stream(22, i))
            if np.isfinite(m.marks.t_edge[1]):
                pos.append(m.marks.u_edge[1])
        res = scipy.stats.kstest(np.asarray(pos), "uniform", args=(0, 4.0))
        assert res.pvalue > P_CUT

    def test_horizon_required(self):
        with pytest.raises(DomainError):
            mark_tree(single_edge(1.0), QUAD, 1.0, horizon=0.0, rng=stream(23, 0))


class TestNodeKills:
    def test_quadratic_branch_points_never_die(self):
        tl = tree_law(QUAD, 1.0)
        for i in range(50):
            t = sample_gw(tl, stream(24, i), node_cap=4000)
            if isinstance(t, Exceeded):
                continue
            m = mark_tree(t, QUAD, 1.0, horizon=30.0, rng=stream(25, i))
            assert np.all(np.isinf(m.marks.xi))

    def test_atom_kill_times_match_cdf(self):
        # collect kill marks over many sampled binary branch points
        horizon = 12.0
        eta = invert(ATOMIC, 1.0)
        tl = tree_law(ATOMIC, 1.0)
        ff = sample_flat(tl, 3000, stream(26, 0), node_cap=100000)
        mk = mark_flat(ff, ATOMIC, eta, horizon, stream(26, 1))
        two = (ff.child_counts == 2) & (ff.par >= 0)
        xi = mk.xi[two]
        from crtprune.mechanism import deriv_ratio

        def cdf(z):
            return 1.0 - deriv_ratio(ATOMIC, eta + z, eta, 2)

        fin = xi[np.isfinite(xi)]
        res = scipy.stats.kstest(fin, lambda z: cdf(z) / cdf(horizon))
        assert res.pvalue > P_CUT
        # survival past the horizon: ratio of second derivatives
        want = deriv_ratio(ATOMIC, eta + horizon, eta, 2)
        n = xi.size
        band = 3 * np.sqrt(want * (1 - want) / n) + 1e-9
        assert abs(np.isinf(xi).mean() - want) < band

    def test_higher_branch_points_get_marks(self):
        eta = invert(ATOMIC, 1.0)
        tl = tree_law(ATOMIC, 1.0)
        ff = sample_flat(tl, 4000, stream(27, 0), node_cap=100000)
        mk = mark_flat(ff, ATOMIC, eta, 20.0, stream(27, 1))
        three = ff.child_counts >= 3
        assert three.any()
        assert np.isfinite(mk.xi[three]).any()


class TestPrune:
    def make_marked(self, i: int, mech=QUAD, lam=1.0, horizon=10.0):
        tl = tree_law(mech, lam)
        t = sample_gw(tl, stream(28, i), node_cap=100000)
        assert not isinstance(t, Exceeded)
        return mark_tree(t, mech, lam, horizon, stream(29, i))

    def test_zero_is_identity(self):
        m = self.make_marked(0)
        assert prune_at(m, 0.0) is m.tree

    def test_horizon_enforced(self):
        m = self.make_marked(1)
        with pytest.raises(HorizonError):
            prune_at(m, 11.0)
        with pytest.raises(HorizonError):
            prune_at(m, -0.5)

    def test_pruned_tree_wellformed(self):
        for i in range(30):
            m = self.make_marked(i)
            p = prune_at(m, 1.0)
            p.validate()
            assert p.leaf_count() >= 1
            lam_theta = evaluate(QUAD, 1.0 + m.eta) - evaluate(QUAD, 1.0)
            assert p.leaf_mass == pytest.approx(1 / lam_theta)

    def test_trajectory_monotone(self):
        m = self.make_marked(2, horizon=8.0)
        cuts = prune_trajectory(m, [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
        lengths = [c.total_length() for c in cuts]
        leaves = [c.leaf_count() for c in cuts]
        # every further cut swaps a subtree for a single stub leaf
        assert all(a >= b for a, b in zip(lengths, lengths[1:]))
        assert all(a >= b for a, b in zip(leaves, leaves[1:]))
        assert all(c.n >= 2 for c in cuts)

    def test_mass_counts_agree_with_prune_at(self):
        # the flat counting kernel and the tree surgery must match exactly
        for mech in (QUAD, ATOMIC):
            eta = invert(mech, 1.0)
            tl = tree_law(mech, 1.0)
            ff = sample_flat(tl, 60, stream(30, 0), node_cap=50000)
            mk = mark_flat(ff, mech, eta, 6.0, stream(30, 1))
            counts = pruned_mass_counts(ff, mk, 0.8)
            order, starts, local = ff._order
            for r in range(ff.n_rep):
                if ff.exceeded[r]:
                    continue
                rows = order[starts[r]:starts[r + 1]]
                sub = FlatMarks(mk.t_edge[rows], mk.u_edge[rows],
                                mk.xi[rows], mk.horizon)
                mt = MarkedTree(ff.tree(r), mech, 1.0, eta, sub)
                assert prune_at(mt, 0.8).leaf_count() == counts[r]

    def test_pruned_leaf_law(self):
        # cutting the critical quadratic tree at theta gives the recentred
        # subcritical law; compare leaf counts against a direct chain
        theta = 1.0
        eta = invert(QUAD, 1.0)
        tl = tree_law(QUAD, 1.0)
        ff = sample_flat(tl, 6000, stream(31, 0), node_cap=200000)
        mk = mark_flat(ff, QUAD, eta, theta, stream(31, 1))
        counts = pruned_mass_counts(ff, mk, theta)[~ff.exceeded]
        target = pruned_law(QUAD, 1.0, theta)
        ref, exc = leaf_counts_chain(target.offspring, 6000, stream(31, 2))
        assert not exc.any()
        assert chi2_two_sample(counts, ref) > P_CUT

    def test_pruned_leaf_law_atom_mechanism(self):
        theta = 0.7
        eta = invert(ATOMIC, 1.0)
        tl = tree_law(ATOMIC, 1.0)
        ff = sample_flat(tl, 6000, stream(32, 0), node_cap=200000)
        mk = mark_flat(ff, ATOMIC, eta, theta, stream(32, 1))
        counts = pruned_mass_counts(ff, mk, theta)[~ff.exceeded]
        target = pruned_law(ATOMIC, 1.0, theta)
        ref, exc = leaf_counts_chain(target.offspring, 6000, stream(32, 2))
        assert not exc.any()
        assert chi2_two_sample(counts, ref) > P_CUT


class TestGrowthLaw:
    def test_quadratic_graft_counts(self):
        law = growth_offspring_law(QUAD, 1.0, theta=1.0, q=0.0)
        assert law.values.tolist() == [0, 1]
        assert law.probs == pytest.approx([1 / 3, 2 / 3], rel=1e-12)
        assert law.mean == pytest.approx(2 / 3, rel=1e-12)

    def test_matches_numeric_pgf_derivatives(self):
        lam, theta, q = 1.0, 0.9, 0.1
        eta = invert(ATOMIC, lam)
        denom = evaluate(ATOMIC, theta + eta) - evaluate(ATOMIC, theta)

        def pgf(r):
            top = (evaluate(ATOMIC, theta + eta * (1 - r))
                   - evaluate(ATOMIC, theta)
                   - evaluate(ATOMIC, q + eta * (1 - r))
                   + evaluate(ATOMIC, q))
            return 1.0 - top / denom

        law = growth_offspring_law(ATOMIC, lam, theta, q)
        pk = dict(zip(law.values.tolist(), law.probs.tolist()))
        h = 1e-3
        num0 = pgf(0.0)
        num1 = (pgf(h) - pgf(-h)) / (2 * h)
        num2 = (pgf(h) - 2 * pgf(0.0) + pgf(-h)) / h**2 / 2
        assert pk[0] == pytest.approx(num0, rel=1e-6)
        assert pk[1] == pytest.approx(num1, rel=1e-4)
        assert pk[2] == pytest.approx(num2, rel=1e-3)

    def test_rejects_bad_levels(self):
        with pytest.raises(DomainError):
            growth_offspring_law(QUAD, 1.0, theta=0.5, q=0.5)
        tl = theta_lambda(QUAD, 1.0)
        assert tl == pytest.approx(-0.5, abs=1e-9)
        with pytest.raises(DomainError):
            growth_offspring_law(QUAD, 1.0, theta=1.0, q=tl)
        law = growth_offspring_law(QUAD, 1.0, theta=1.0, q=tl + 1e-3)
        assert law.probs[0] < 0.01  # almost every leaf grows


class TestGrowStep:
    def test_grown_tree_law(self):
        # grow the theta-pruned law down to q and compare against sampling
        # the q law directly
        lam, theta, q = 1.0, 1.0, 0.25
        src = pruned_law(QUAD, lam, theta)
        dst = pruned_law(QUAD, lam, q)
        rng = stream(33, 0)
        grown = []
        for t in (sample_gw(src, rng) for _ in range(4000)):
            g = grow_step(t, QUAD, lam, theta, q, rng)
            assert not isinstance(g, Exceeded)
            g.validate()
            assert g.leaf_mass == pytest.approx(dst.leaf_mass)
            grown.append(g.leaf_count())
        ref, exc = leaf_counts_chain(dst.offspring, 4000, stream(33, 1))
        assert not exc.any()
        assert chi2_two_sample(np.asarray(grown), ref) > P_CUT

    def test_growth_to_critical_level(self):
        # q = 0 lands back on the critical base law; compare capped counts
        lam, theta = 1.0, 1.0
        src = pruned_law(QUAD, lam, theta)
        rng = stream(34, 0)
        pool = 50
        grown = []
        for t in (sample_gw(src, rng) for _ in range(3000)):
            g = grow_step(t, QUAD, lam, theta, 0.0, rng, node_cap=100000)
            grown.append(pool if isinstance(g, Exceeded) else min(g.leaf_count(), pool))
        base = tree_law(QUAD, lam)
        ref, exc = leaf_counts_chain(base.offspring, 3000, stream(34, 1))
        ref = np.where(exc, pool, np.minimum(ref, pool))
        assert chi2_two_sample(np.asarray(grown), np.asarray(ref)) > P_CUT

    def test_no_growth_keeps_shape(self):
        lam, theta = 1.0, 2.0
        src = pruned_law(QUAD, lam, theta)
        t = sample_gw(src, stream(35, 0))
        # q close to theta: grafts are rare; shape survives when K = 0
        g = grow_step(t, QUAD, lam, theta, 1.999, stream(35, 1))
        if g.leaf_count() == t.leaf_count():
            assert serialize(g) == serialize(t)

    def test_exceeded_passthrough(self):
        lam, theta = 1.0, 1.0
        src = pruned_law(QUAD, lam, theta)
        rng = stream(36, 0)
        hit = False
        for _ in range(200):
            t = sample_gw(src, rng)
            g = grow_step(t, QUAD, lam, theta, 0.0, rng, node_cap=40)
            hit = hit or isinstance(g, Exceeded)
        assert hit
