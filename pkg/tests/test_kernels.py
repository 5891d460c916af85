import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrjump.core import MoveKind, RunConfig, TransDimState, run_chain
from nrjump.diagnostics import asymptotic_ess, empirical_pmf, tv_distance
from nrjump.kernels import (IdealNRJ, IdealRJ, VanillaNRJ, VanillaRJ, ideal_k_endpoints,
                            ideal_k_step, ideal_transition_matrix, informed_g, log_g_ratio,
                            make_g, nrj_step, propose_switch, rj_step, simulate_ideal_k,
                            symmetric_g)
from nrjump.targets.toy import ToyTarget, phi_pmf, toy_jump_spec, uniform_pmf

log_pmfs = st.lists(st.floats(-4, 4), min_size=2, max_size=9).map(np.array)


class TestIdealTransitionMatrix:
    @given(log_pmfs, st.sampled_from(["nrj", "rj_unif", "rj_informed"]))
    @settings(max_examples=60, deadline=None)
    def test_stochastic_and_invariant(self, lp, kind):
        P, pi = ideal_transition_matrix(lp, kind)
        assert np.all(P >= -1e-15)
        assert np.allclose(P.sum(axis=1), 1.0)
        assert np.allclose(pi @ P, pi, atol=1e-12)

    @given(log_pmfs, st.sampled_from(["rj_unif", "rj_informed"]))
    @settings(max_examples=60, deadline=None)
    def test_reversible_chains_satisfy_detailed_balance(self, lp, kind):
        P, pi = ideal_transition_matrix(lp, kind)
        F = pi[:, None] * P
        assert np.allclose(F, F.T, atol=1e-13)

    @given(log_pmfs)
    @settings(max_examples=60, deadline=None)
    def test_lifted_chain_skew_detailed_balance(self, lp):
        P, pi = ideal_transition_matrix(lp, "nrj")
        n = len(pi)
        flip = np.arange(n) ^ 1
        F = pi[:, None] * P
        # pi(i, nu) P((i, nu) -> (j, nu')) = pi(j, -nu') P((j, -nu') -> (i, -nu))
        assert np.allclose(F, F[np.ix_(flip, flip)].T, atol=1e-13)

    def test_uniform_nrj_is_deterministic_sweep(self):
        P, _ = ideal_transition_matrix(np.zeros(5), "nrj")
        assert set(np.unique(P)) <= {0.0, 1.0}

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ideal_k_step(np.zeros(3), 1, 1, "gibbs", np.random.default_rng(0))


class TestIdealSimulation:
    @pytest.mark.parametrize("kind", ["nrj", "rj_unif", "rj_informed"])
    def test_compiled_matches_reference_step(self, kind):
        lp = np.log(phi_pmf(2.0, 9).probs)
        ks, nus = simulate_ideal_k(lp, kind, 400, np.random.default_rng(5), k0=5, nu0=1, k_min=1)
        rng = np.random.default_rng(5)
        k, nu = 5, 1
        for s in range(1, 401):
            k, nu = ideal_k_step(lp, k, nu, kind, rng, k_min=1)
            assert ks[0, s] == k
            if kind == "nrj":
                assert nus[0, s] == nu

    def test_endpoints_match_paths(self):
        lp = np.log(phi_pmf(3.0, 7).probs)
        ks, nus = simulate_ideal_k(lp, "nrj", 50, np.random.default_rng(2), k0=4, n_chains=6, k_min=1)
        ke, ne = ideal_k_endpoints(lp, "nrj", 50, np.random.default_rng(2), k0=4, n_chains=6, k_min=1)
        assert np.array_equal(ks[:, -1], ke) and np.array_equal(nus[:, -1], ne)

    def test_tau_one_freezes_chain(self):
        ks, _ = simulate_ideal_k(np.zeros(5), "nrj", 30, np.random.default_rng(0), k0=2, tau=1.0)
        assert np.all(ks == 2)

    @pytest.mark.parametrize("kind", ["nrj", "rj_unif", "rj_informed"])
    def test_long_run_matches_pmf(self, kind):
        pmf = phi_pmf(2.0, 11)
        ks, _ = simulate_ideal_k(pmf.log_pmf(), kind, 200_000, np.random.default_rng(1), k0=6, k_min=1)
        assert tv_distance(empirical_pmf(ks[0], 1, 11), pmf.probs) < 0.02

    def test_uniform_nrj_has_zero_asymptotic_variance(self):
        P, pi = ideal_transition_matrix(np.zeros(11), "nrj")
        assert asymptotic_ess(P, pi, np.repeat(np.arange(11.0), 2)) == math.inf

    def test_nrj_asymptotic_ess_exceeds_rj(self):
        lp = phi_pmf(2.0, 11).log_pmf()
        k = np.arange(11, dtype=float)
        P, pi = ideal_transition_matrix(lp, "nrj")
        e_nrj = asymptotic_ess(P, pi, np.repeat(k, 2))
        P, pi = ideal_transition_matrix(lp, "rj_unif")
        e_rj = asymptotic_ess(P, pi, k)
        assert e_nrj == pytest.approx(0.2076774, abs=1e-6)
        assert e_rj == pytest.approx(0.0547626, abs=1e-6)
        assert e_nrj > 3 * e_rj


class TestModelProposals:
    def test_symmetric_ratio_is_zero(self):
        assert log_g_ratio(symmetric_g, 4, 5) == 0.0

    @given(st.integers(1, 11), st.floats(1.1, 8))
    def test_informed_probabilities(self, k, phi):
        pmf = phi_pmf(phi, 11)
        lp = lambda j: math.log(pmf(j))
        g = informed_g(k, lp, 1, 11)
        assert g.up + g.down == pytest.approx(1.0)
        if k == 1:
            assert g.down == 0.0
        if k == 11:
            assert g.up == 0.0

    def test_informed_needs_two_models(self):
        with pytest.raises(ValueError):
            informed_g(1, lambda k: 0.0, 1, 1)

    def test_make_g_rejects_unknown(self, toy):
        with pytest.raises(ValueError):
            make_g("greedy", toy)


class TestSwitchProposal:
    @given(st.integers(1, 10), st.floats(0.3, 3.0), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_unit_noise_gives_ideal_ratio(self, k, phi_off, seed):
        target = ToyTarget(phi_pmf(1.0 + phi_off, 11), sigma=1.0)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(k)
        prop = propose_switch(toy_jump_spec(1.0), k, x, k + 1, rng)
        expected = target.log_model_pmf(k + 1) - target.log_model_pmf(k)
        assert prop.log_ratio(target) == pytest.approx(expected, abs=1e-10)

    def test_up_then_down_ratios_are_reciprocal(self, toy, rng):
        jump = toy_jump_spec(2.0)
        x = rng.standard_normal(4)
        up = propose_switch(jump, 4, x, 5, rng)
        down = propose_switch(jump, 5, up.x_to, 4, rng)
        assert np.array_equal(down.x_to, x)
        assert up.log_ratio(toy) == pytest.approx(-down.log_ratio(toy))

    def test_non_neighbour_rejected(self, rng):
        with pytest.raises(ValueError):
            propose_switch(toy_jump_spec(1.0), 3, np.zeros(3), 5, rng)


class TestVanillaSteps:
    def test_nrj_off_support_flips_without_draws(self, toy):
        rng = np.random.default_rng(0)
        before = rng.bit_generator.state
        res = nrj_step(TransDimState(11, np.zeros(11), 1), toy, toy_jump_spec(2.0), 0.0, None, rng)
        assert res.state.k == 11 and res.state.nu == -1 and not res.accepted
        assert res.move == MoveKind.SWITCH_UP
        assert rng.bit_generator.state == before

    def test_rj_off_support_keeps_state(self, toy):
        g = make_g("symmetric", toy)
        rng = np.random.default_rng(4)
        for _ in range(20):
            res = rj_step(TransDimState(1, np.zeros(1), 0), toy, toy_jump_spec(2.0), 0.0, g, None, rng)
            assert res.state.k in (1, 2) and res.state.nu == 0

    def test_param_update_keeps_model(self, toy, rng):
        res = nrj_step(TransDimState(3, np.zeros(3), -1), toy, toy_jump_spec(2.0), 1.0,
                       toy.param_kernel, rng)
        assert res.move == MoveKind.PARAM_UPDATE and res.state.k == 3 and res.state.nu == -1

    @pytest.mark.parametrize("cls,kw", [(VanillaNRJ, {}), (VanillaRJ, {}),
                                        (VanillaRJ, {"g": "informed"})])
    def test_vanilla_stationary(self, cls, kw):
        target = ToyTarget(phi_pmf(2.0, 7), sigma=2.0)
        kernel = cls(target, toy_jump_spec(2.0), target.param_kernel, **kw)
        tr = run_chain(RunConfig(iterations=60_000, burn_in=1000, tau=0.5), target, kernel,
                       TransDimState(4, np.zeros(4), 1), np.random.default_rng(8))
        pmf = empirical_pmf(tr.k[tr.post_burn_in()], 1, 7)
        assert tv_distance(pmf, target.model_pmf()) < 0.03

    @pytest.mark.parametrize("cls", [IdealNRJ, IdealRJ])
    def test_ideal_kernels_stationary(self, cls):
        target = ToyTarget(phi_pmf(3.0, 7))
        tr = run_chain(RunConfig(iterations=40_000), target, cls(target),
                       TransDimState(4, np.zeros(4), 1), np.random.default_rng(9))
        assert tv_distance(empirical_pmf(tr.k, 1, 7), target.model_pmf()) < 0.02

    def test_uniform_pmf_nrj_sweeps(self):
        target = ToyTarget(uniform_pmf(5))
        tr = run_chain(RunConfig(iterations=16), target, IdealNRJ(target),
                       TransDimState(1, np.zeros(1), 1), np.random.default_rng(0))
        assert tr.k.tolist() == [1, 2, 3, 4, 5, 5, 4, 3, 2, 1, 1, 2, 3, 4, 5, 5, 4]
