import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import gammaln
from scipy.stats import chisquare, gamma, poisson

from nrjump.annealed import UP, AnnealingSchedule, BridgeSpace, forward_bridge, recompute_log_ratio
from nrjump.core import TransDimState, validate_target
from nrjump.diagnostics import empirical_pmf, tv_distance, variance_ratio_upper
from nrjump.kernels import nrj_step
from nrjump.targets.changepoint import (COAL_L, ChangePointBridgeKernel, ChangePointModel,
                                        DataError, StepFunctionParams, bridge_sweep,
                                        engine_log_joint, fast_chain, jstar_step,
                                        jstar_transition_matrix, load_event_data, merge_heights,
                                        param_update_sweep, posterior_model_pmf, propose_height,
                                        read_reference_pmf, split_heights, split_log_jacobian,
                                        split_merge_jump_spec, write_reference_pmf)


def _random_params(model, k, rng):
    s = np.sort(rng.uniform(0, model.L, k))
    h = rng.gamma(2.0, 1.0, k + 1)
    return np.concatenate([s, h])


class TestLikelihood:
    def test_constant_intensity(self, synthetic_model):
        m = synthetic_model
        assert m.log_likelihood(0, np.array([1.7])) == pytest.approx(m.n * math.log(1.7) - 1.7 * m.L)

    def test_no_events(self):
        m = ChangePointModel(np.array([]), 5.0)
        x = np.array([1.0, 3.0, 0.5, 2.0, 4.0])
        assert m.log_likelihood(2, x) == pytest.approx(-(0.5 * 1 + 2.0 * 2 + 4.0 * 2))

    def test_against_quadrature(self, synthetic_model):
        m = synthetic_model
        rng = np.random.default_rng(7)
        x = _random_params(m, 2, rng)
        s, h = x[:2], x[2:]
        intensity = lambda t: h[np.searchsorted(s, t, side="right")]
        integral, _ = integrate.quad(intensity, 0, m.L, points=s, epsabs=1e-12, limit=200)
        events = sum(math.log(intensity(t)) for t in m.times)
        assert m.log_likelihood(2, x) == pytest.approx(events - integral, abs=1e-8)

    def test_times_outside_window(self):
        with pytest.raises(DataError):
            ChangePointModel(np.array([1.0, 11.0]), 10.0)


class TestPrior:
    def test_k_zero(self, synthetic_model):
        m = synthetic_model
        h = np.array([0.8])
        want = m.log_k_prior(0) + gamma.logpdf(0.8, m.alpha, scale=1 / m.beta)
        assert m.log_prior(0, h) == pytest.approx(want, abs=1e-12)

    @given(st.floats(0.01, 9.99))
    def test_single_position_density(self, s):
        m = ChangePointModel(np.array([]), 10.0)
        want = math.log(6 * s * (10 - s) / 1000)
        assert m.log_position_prior(1, np.array([s])) == pytest.approx(want, abs=1e-12)

    def test_truncated_poisson(self, coal):
        total = sum(math.exp(coal.log_k_prior(k)) for k in range(31))
        assert abs(total - 1) < 1e-12
        ratio = math.exp(coal.log_k_prior(4) - coal.log_k_prior(2))
        assert ratio == pytest.approx(poisson.pmf(4, 3) / poisson.pmf(2, 3))

    def test_position_prior_integrates_to_one(self):
        m = ChangePointModel(np.array([]), 3.0)
        one, _ = integrate.quad(lambda s: math.exp(m.log_position_prior(1, np.array([s]))), 0, 3)
        two, _ = integrate.dblquad(lambda s2, s1: math.exp(m.log_position_prior(2, np.array([s1, s2]))),
                                   0, 3, lambda s1: s1, 3)
        assert one == pytest.approx(1, abs=1e-4)
        assert two == pytest.approx(1, abs=1e-4)

    def test_invalid_parameters(self, synthetic_model):
        m = synthetic_model
        assert m.log_joint(1, np.array([11.0, 1.0, 1.0])) == -math.inf
        assert m.log_joint(1, np.array([5.0, -1.0, 1.0])) == -math.inf
        assert m.log_joint(2, np.array([5.0, 4.0, 1.0, 1.0, 1.0])) == -math.inf
        with pytest.raises(ValueError):
            ChangePointModel(np.array([]), 10.0, lam=0.0)

    def test_validates(self, coal):
        assert validate_target(coal).ok

    def test_params_round_trip(self):
        p = StepFunctionParams.from_vector(2, np.array([1.0, 2.0, 0.1, 0.2, 0.3]))
        assert p.k == 2
        assert np.array_equal(p.to_vector(), [1.0, 2.0, 0.1, 0.2, 0.3])


class TestSplitMerge:
    def test_equal_split(self):
        h1, h2 = split_heights(0.7, 0.3, 0.5)
        assert h1 == pytest.approx(0.7) and h2 == pytest.approx(0.7)

    @given(st.floats(1e-3, 1e3), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    def test_constraints_and_inverse(self, h, w, u_p):
        h1, h2 = split_heights(h, w, u_p)
        assert w * math.log(h1) + (1 - w) * math.log(h2) == pytest.approx(math.log(h), abs=1e-10)
        assert h2 / h1 == pytest.approx((1 - u_p) / u_p, rel=1e-10)
        hb, ub = merge_heights(h1, h2, w)
        assert hb == pytest.approx(h, rel=1e-10) and ub == pytest.approx(u_p, abs=1e-10)

    def test_height_jacobian_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            h, w, u = rng.gamma(2.0, 1.0), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)
            J = np.empty((2, 2))
            for c, (dh, du) in enumerate(((1e-6 * h, 0.0), (0.0, 1e-6))):
                hi = np.array(split_heights(h + dh, w, u + du))
                lo = np.array(split_heights(h - dh, w, u - du))
                J[:, c] = (hi - lo) / (2 * (dh + du))
            h1, h2 = split_heights(h, w, u)
            assert abs(np.linalg.det(J)) == pytest.approx(math.exp(split_log_jacobian(h, h1, h2)),
                                                          rel=1e-6)

    @pytest.mark.parametrize("L", [10.0, COAL_L])
    def test_full_map_jacobian_finite_differences(self, L):
        model = ChangePointModel(np.array([]), L)
        jump = split_merge_jump_spec(model)
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = int(rng.integers(0, 4))
            x = _random_params(model, k, rng)
            x[k:] *= 10.0 / L  # heights on the scale of events per unit time
            u = np.array([rng.uniform(0.02, 0.98) * L, rng.uniform(0.05, 0.95)])
            y, j, log_jac = jump.forward(k, x, u)
            v = np.concatenate([x, u])
            step = 1e-6 * np.abs(v)
            J = np.empty((len(v), len(v)))
            for c in range(len(v)):
                e = np.zeros(len(v))
                e[c] = step[c]
                yp, jp, _ = jump.forward(k, (v + e)[:-2], (v + e)[-2:])
                ym, jm, _ = jump.forward(k, (v - e)[:-2], (v - e)[-2:])
                assert jp == jm == j
                J[:, c] = (yp - ym) / (2 * step[c])
            assert abs(np.linalg.det(J)) == pytest.approx(math.exp(log_jac), rel=1e-6)

    @given(st.integers(0, 5), st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_roundtrips(self, k, seed):
        model = ChangePointModel(np.array([]), 10.0, k_max=7)
        jump = split_merge_jump_spec(model)
        rng = np.random.default_rng(seed)
        x = _random_params(model, k, rng)
        u = jump.sample_up(k, x, rng)
        y, j, lj = jump.forward(k, x, u)
        x2, u2, lj_inv = jump.inverse(k, y, j)
        assert np.allclose(x2, x, rtol=1e-10, atol=1e-12) and np.allclose(u2, u, rtol=1e-10)
        assert abs(lj + lj_inv) < 1e-8
        y2, j2, _ = jump.forward(k, x2, u2)
        assert j2 == j and np.allclose(y2, y, rtol=1e-10, atol=1e-12)
        assert model.valid(k + 1, y)
        assert np.all(np.diff(y[:k + 1]) > 0)

    def test_new_position_inside_split_step(self, synthetic_model, rng):
        jump = split_merge_jump_spec(synthetic_model)
        x = np.array([3.0, 6.0, 1.0, 2.0, 3.0])
        y, j, _ = jump.forward(2, x, np.array([4.5, 0.3]))
        assert j == 1 and y[1] == 4.5
        assert jump.log_q_down(2, y, 2) == pytest.approx(-math.log(3))
        assert jump.log_q_down(2, y, 3) == -math.inf

    def test_k_zero_nrj_down_is_forced_rejection(self, coal):
        rng = np.random.default_rng(0)
        before = rng.bit_generator.state
        res = nrj_step(TransDimState(0, coal.initial_params(0), -1), coal,
                       split_merge_jump_spec(coal), 0.0, None, rng)
        assert res.state.k == 0 and res.state.nu == 1 and not res.accepted
        assert rng.bit_generator.state == before


def _conditional_h1_mean(model):
    """Posterior mean of h_1 given k = 1, by quadrature over the change point."""
    a, b, L, t = model.alpha, model.beta, model.L, model.times

    def logw(s):
        n1 = np.searchsorted(t, s)
        n2 = model.n - n1
        return (math.log(s * (L - s)) + gammaln(a + n1) - (a + n1) * math.log(b + s)
                + gammaln(a + n2) - (a + n2) * math.log(b + L - s))

    shift = max(logw(s) for s in np.linspace(0.01, L - 0.01, 500))
    kw = dict(points=list(t), limit=500, epsabs=0, epsrel=1e-11)
    num = integrate.quad(lambda s: math.exp(logw(s) - shift) * (a + np.searchsorted(t, s)) / (b + s),
                         0, L, **kw)[0]
    den = integrate.quad(lambda s: math.exp(logw(s) - shift), 0, L, **kw)[0]
    return num / den


class TestParamUpdates:
    def test_height_proposal_support(self, rng):
        x = np.array([5.0, 1.0, 2.0])
        for _ in range(2000):
            xn, lq = propose_height(1, x, 1, rng)
            assert math.exp(-0.5) <= xn[2] / x[2] <= math.exp(0.5)
            assert lq == pytest.approx(math.log(xn[2] / x[2]))

    def test_positions_stay_ordered(self, synthetic_model, rng):
        x = synthetic_model.initial_params(3)
        for _ in range(3000):
            x = param_update_sweep(3, x, synthetic_model, rng)
            assert synthetic_model.valid(3, x)

    def test_python_sweep_matches_quadrature(self, synthetic_model):
        m = synthetic_model
        want = _conditional_h1_mean(m)
        rng = np.random.default_rng(21)
        x = m.initial_params(1)
        n = 200_000
        h1 = np.empty(n)
        for i in range(n):
            x = param_update_sweep(1, x, m, rng)
            h1[i] = x[1]
        h1 = h1[5000:]
        batches = h1[: len(h1) // 100 * 100].reshape(100, -1).mean(axis=1)
        se = batches.std(ddof=1) / 10
        assert abs(h1.mean() - want) < 3 * se

    def test_compiled_updates_match_quadrature(self, synthetic_model):
        m = synthetic_model
        want = _conditional_h1_mean(m)
        rng = np.random.default_rng(4)
        h1 = np.array([fast_chain(m, "nrj", 300, rng, tau=1.0, k0=1)[2][1] for _ in range(4000)])
        assert abs(h1.mean() - want) < 3 * h1.std(ddof=1) / math.sqrt(len(h1))

    def test_engine_log_joint_agrees(self, coal):
        rng = np.random.default_rng(3)
        for k in range(6):
            x = coal.prior_sample(k, rng)
            assert engine_log_joint(coal, k, x) == pytest.approx(coal.log_joint(k, x), rel=1e-12)


class TestBridges:
    def _space(self, model, k=2):
        return BridgeSpace(model, split_merge_jump_spec(model), k)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 0.8])
    def test_jstar_detailed_balance(self, synthetic_model, lam):
        space = self._space(synthetic_model)
        y = np.array([2.0, 5.0, 8.0, 0.6, 1.2, 0.4, 0.9])
        P = jstar_transition_matrix(space, y, lam)
        logr = np.array([space.from_upper(y, j).log_rho(lam) for j in range(3)])
        pi = np.exp(logr - logr.max())
        pi /= pi.sum()
        assert np.allclose(P.sum(axis=1), 1, atol=1e-12)
        F = pi[:, None] * P
        assert np.allclose(F, F.T, atol=1e-8)
        assert np.allclose(pi @ P, pi, atol=1e-8)

    def test_jstar_uniform_at_upper_end(self, synthetic_model):
        P = jstar_transition_matrix(self._space(synthetic_model), np.array(
            [2.0, 5.0, 8.0, 0.6, 1.2, 0.4, 0.9]), 1.0)
        assert np.allclose(P, 1 / 3)

    def test_jstar_step_follows_matrix(self, synthetic_model):
        space = self._space(synthetic_model)
        y = np.array([2.0, 5.0, 8.0, 0.6, 1.2, 0.4, 0.9])
        P = jstar_transition_matrix(space, y, 0.4)
        rng = np.random.default_rng(0)
        start = space.from_upper(y, 1)
        draws = np.bincount([jstar_step(space, start, 0.4, rng).u_rev for _ in range(30_000)],
                            minlength=3)
        assert chisquare(draws, 30_000 * P[1]).pvalue > 1e-3

    @pytest.mark.parametrize("direction", [1, -1])
    def test_bridge_ratio_recomputes(self, coal, direction):
        space = self._space(coal, 3)
        rng = np.random.default_rng(5)
        params = coal.initial_params(3 if direction == UP else 4)
        path = forward_bridge(space, direction, params, AnnealingSchedule.linear(6),
                              ChangePointBridgeKernel(), rng)
        assert path.log_ratio == pytest.approx(recompute_log_ratio(path, space), rel=1e-9)

    def test_sweep_keeps_support(self, synthetic_model):
        space = self._space(synthetic_model)
        sched = AnnealingSchedule.linear(4)
        rng = np.random.default_rng(2)
        p = space.start(UP, synthetic_model.initial_params(2), rng)
        for t in range(1, 4):
            for _ in range(200):
                p = bridge_sweep(t, p, sched, space, rng)
                assert synthetic_model.valid(3, p.y) and synthetic_model.valid(2, p.x)


class TestData:
    def test_empty_file(self, tmp_path):
        f = tmp_path / "e.txt"
        f.write_text("")
        assert load_event_data(f, 10.0).size == 0

    def test_sorted_with_comments(self):
        out = load_event_data(["# header", "3.5", "", "1.0  # note", "2"], 10.0)
        assert out.tolist() == [1.0, 2.0, 3.5]

    @pytest.mark.parametrize("lines,match", [(["1", "12"], "line 2"), (["-1"], "line 1"),
                                             (["1", "x"], "line 2"), (["nan"], "line 1")])
    def test_rejections(self, lines, match):
        with pytest.raises(DataError, match=match):
            load_event_data(lines, 10.0)

    def test_coal_data(self, coal):
        assert coal.n == 191 and coal.L == COAL_L
        assert coal.times[0] >= 0 and coal.times[-1] <= COAL_L

    def test_reference_fixture(self, tmp_path):
        ref = read_reference_pmf()
        assert len(ref) == 31 and abs(ref.sum() - 1) < 1e-9
        path = tmp_path / "r.csv"
        write_reference_pmf(path, ref)
        assert np.array_equal(read_reference_pmf(path), ref)
        path.write_text("k,probability\n0,0.5\n2,0.5\n")
        with pytest.raises(DataError):
            read_reference_pmf(path)
        path.write_text("k,probability\n0,0.5\n1,0.4\n")
        with pytest.raises(DataError):
            read_reference_pmf(path)


class TestPosterior:
    def test_quadrature_reproduces_fixture(self, coal):
        assert np.abs(posterior_model_pmf(coal, cells=1000) - read_reference_pmf()).max() < 5e-4

    def test_quadrature_on_tiny_model(self):
        # k <= 1 with one event: direct two-dimensional integration.
        m = ChangePointModel(np.array([0.3]), 1.0, lam=1.0, k_max=1, alpha=2.0, beta=1.0)
        a, b = m.alpha, m.beta

        def seg(n, d):
            return math.exp(a * math.log(b) - gammaln(a) + gammaln(a + n) - (a + n) * math.log(b + d))

        z0 = math.exp(m.log_k_prior(0)) * seg(1, 1.0)
        z1 = math.exp(m.log_k_prior(1)) * integrate.quad(
            lambda s: 6 * s * (1 - s) * seg(s > 0.3, s) * seg(s <= 0.3, 1 - s), 0, 1,
            points=[0.3])[0]
        p = posterior_model_pmf(m, cells=4000)
        assert p[1] == pytest.approx(z1 / (z0 + z1), abs=1e-5)

    @pytest.mark.parametrize("sampler,T,N,n", [("nrj", 1, 1, 1_000_000), ("rj", 1, 1, 1_000_000),
                                               ("nrj3", 3, 2, 150_000), ("rj3", 3, 2, 150_000)])
    def test_compiled_chains_reach_reference(self, coal, sampler, T, N, n):
        tr, k, x = fast_chain(coal, sampler, n, np.random.default_rng(1), tau=0.4, k0=3, T=T, N=N,
                              burn_in=n // 20)
        pmf = empirical_pmf(tr.k[tr.post_burn_in()], 0, 30)
        assert tv_distance(pmf, read_reference_pmf()) < 0.03
        assert coal.valid(k, x)

    def test_fast_chain_rejects_invalid_start(self, coal):
        with pytest.raises(ValueError):
            fast_chain(coal, "nrj", 10, np.random.default_rng(0), k0=1, x0=np.array([-1.0, 1.0, 1.0]))

    @pytest.mark.slow
    def test_nrj_variance_does_not_exceed_rj(self, coal):
        # Replicate variance of the P(K = mode) estimate, 50 replicates each.
        mode = int(np.argmax(read_reference_pmf()))
        est = {}
        for s in ("nrj", "rj"):
            vals = []
            for r in range(50):
                tr, _, _ = fast_chain(coal, s, 100_000, np.random.default_rng([r, len(s)]),
                                      tau=0.4, k0=3, burn_in=5000)
                vals.append(np.mean(tr.k[tr.post_burn_in()] == mode))
            est[s] = vals
        # Lower 5% bootstrap quantile of var_nrj / var_rj must not exceed 1.
        _, lower = variance_ratio_upper(est["nrj"], est["rj"], np.random.default_rng(0), level=0.05)
        assert lower <= 1.0
