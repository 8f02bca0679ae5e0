import numpy as np
import pytest

from cfee.alloc import (Action, allocate_antennas, allocate_power, ap_scores,
                        realize, select_aps)
from cfee.config import SystemConfig
from cfee.netgen import Scenario


def make_scenario(beta, gamma, seed=0):
    M, K = beta.shape
    return Scenario(ap_positions=np.zeros((M, 2)),
                    user_positions=np.zeros((K, 2)),
                    beta=np.asarray(beta, dtype=float),
                    pilot_xcorr=np.eye(K),
                    gamma=np.asarray(gamma, dtype=float), seed=seed)


class TestApScores:
    def test_constant_field(self):
        beta = np.full((3, 4), 2.5)
        assert np.allclose(ap_scores(beta), 2.5)

    def test_arithmetic_mean(self):
        assert ap_scores(np.array([[1.0, 3.0]]))[0] == 2.0

    def test_user_permutation_invariant(self):
        rng = np.random.default_rng(0)
        beta = rng.uniform(0.1, 1, size=(5, 6))
        perm = rng.permutation(6)
        assert np.allclose(ap_scores(beta), ap_scores(beta[:, perm]))


class TestSelectAps:
    def test_all(self):
        s = np.array([3.0, 1.0, 2.0])
        assert np.array_equal(select_aps(s, 1.0), [0, 1, 2])

    def test_half_of_40(self):
        rng = np.random.default_rng(1)
        s = rng.uniform(size=40)
        active = select_aps(s, 0.5)
        assert len(active) == 20
        assert set(active) == set(np.argsort(-s)[:20])

    def test_minimum_one(self):
        s = np.random.default_rng(2).uniform(size=40)
        active = select_aps(s, 0.001)
        assert len(active) == 1
        assert active[0] == np.argmax(s)

    def test_tie_break_lower_index(self):
        s = np.array([1.0, 1.0, 1.0, 1.0])
        assert np.array_equal(select_aps(s, 0.5), [0, 1])


class TestAllocateAntennas:
    def test_kappa_zero_uniform(self):
        s = np.array([4.0, 1.0, 2.0])
        n = allocate_antennas(s, np.array([0, 1, 2]), 0.0, 8)
        assert np.array_equal(n, [8, 8, 8])

    def test_best_gets_all(self):
        s = np.array([4.0, 1.0])
        n = allocate_antennas(s, np.array([0, 1]), 3.0, 16)
        assert n[0] == 16

    def test_hand_value(self):
        # I = (4, 1), kappa = 1, N = 20: w = (1, 0.25) -> (20, 5)
        s = np.array([4.0, 1.0])
        n = allocate_antennas(s, np.array([0, 1]), 1.0, 20)
        assert np.array_equal(n, [20, 5])

    def test_inactive_zero(self):
        s = np.array([4.0, 1.0, 2.0])
        n = allocate_antennas(s, np.array([0]), 1.0, 8)
        assert np.array_equal(n, [8, 0, 0])

    def test_large_kappa_winner_take_most(self):
        s = np.array([5.0, 4.0, 3.0, 2.0])
        n = allocate_antennas(s, np.arange(4), 50.0, 12)
        assert n[0] == 12
        assert np.array_equal(n[1:], [1, 1, 1])

    def test_monotone_in_score(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            s = rng.uniform(0.1, 10, size=6)
            kappa = rng.uniform(0, 4)
            n = allocate_antennas(s, np.arange(6), kappa, 9)
            order = np.argsort(-s)
            assert np.all(np.diff(n[order]) <= 0)

    def test_scale_invariance(self):
        s = np.array([3.0, 1.5, 0.5])
        a = allocate_antennas(s, np.arange(3), 2.0, 10)
        b = allocate_antennas(s * 7.3, np.arange(3), 2.0, 10)
        assert np.array_equal(a, b)
        assert np.array_equal(select_aps(s, 0.5), select_aps(s * 7.3, 0.5))


class TestAllocatePower:
    def test_nu_one_uniform_across_users(self):
        gamma = np.array([[0.2, 0.5, 0.3]])
        eta = allocate_power(gamma, np.array([4]), np.array([0]), 1.0)
        assert np.allclose(eta[0], 1.0 / (4 * gamma.sum()))

    def test_nu_zero_channel_inversion(self):
        gamma = np.array([[0.2, 0.5]])
        eta = allocate_power(gamma, np.array([3]), np.array([0]), 0.0)
        expected = 1.0 / (gamma[0] * 3 * 2)
        assert np.allclose(eta[0], expected)

    def test_budget_equality(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            K = int(rng.integers(1, 8))
            gamma = rng.uniform(1e-12, 1e-6, size=(1, K))
            nu = rng.uniform(0, 4)
            nm = int(rng.integers(1, 21))
            eta = allocate_power(gamma, np.array([nm]), np.array([0]), nu)
            load = float((eta[0] * gamma[0]).sum())
            assert abs(load - 1 / nm) * nm <= 1e-12

    def test_inactive_rows_zero(self):
        gamma = np.full((3, 2), 0.5)
        eta = allocate_power(gamma, np.array([2, 0, 0]), np.array([0]), 1.0)
        assert np.all(eta[1:] == 0)


class TestRealize:
    def setup_method(self):
        self.cfg = SystemConfig(M=4, K=2, N=8, tau_p=2)
        beta = np.array([[4.0, 4.0], [1.0, 1.0], [2.0, 2.0], [8.0, 8.0]])
        self.sc = make_scenario(beta, beta / 2.0)

    def test_all_on_defaults(self):
        dec = realize(Action(1.0, 0.0, 1.0), self.sc, self.cfg)
        assert len(dec.active) == 4
        assert np.all(dec.n_active == 8)
        for m in range(4):
            assert np.allclose(dec.eta[m], dec.eta[m][0])
        dec.validate(self.sc.gamma, self.cfg.N)

    def test_half_picks_top_scoring(self):
        dec = realize(Action(0.5, 0.0, 1.0), self.sc, self.cfg)
        assert np.array_equal(dec.active, [0, 3])  # scores 4 and 8

    def test_golden_decision_table(self):
        # scores I = (4, 1, 2, 8); zeta=0.5 -> APs {3, 0}; kappa=1 ->
        # w = (0.5, 1) -> N_m = (floor(1+7*0.5), 8) = (4, 8); nu=1 ->
        # eta = 1/(N_m * sum_j gamma_mj) rows (gamma rows (2,2) and (4,4))
        dec = realize(Action(0.5, 1.0, 1.0), self.sc, self.cfg)
        assert np.array_equal(dec.active, [0, 3])
        assert np.array_equal(dec.n_active, [4, 0, 0, 8])
        assert np.allclose(dec.eta[0], 1.0 / (4 * 4))
        assert np.allclose(dec.eta[3], 1.0 / (8 * 8))
        assert np.all(dec.eta[1:3] == 0)
        dec.validate(self.sc.gamma, self.cfg.N)

    def test_realized_decisions_always_feasible(self):
        rng = np.random.default_rng(5)
        from cfee.netgen import generate_scenario
        cfg = SystemConfig(M=6, K=3, N=5, tau_p=2)
        for seed in range(10):
            sc = generate_scenario(cfg, seed)
            act = Action(float(rng.uniform(0.05, 1)),
                         float(rng.uniform(0, 4)), float(rng.uniform(0, 4)))
            dec = realize(act, sc, cfg)
            dec.validate(sc.gamma, cfg.N)
