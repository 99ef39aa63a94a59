import json

import numpy as np
import pytest

from dnlmm import diffusion as dif
from dnlmm import robust_cost as rc
from dnlmm.network import build_topology, metropolis_weights
from dnlmm.signals import (ContaminatedGaussian, GaussianNoise, NodeSignalProfile,
                           generate_ground_truth, generate_streams, random_profiles)


def _setup(noise=lambda s: GaussianNoise(s), N=6, L=8, Q=2, T=400, trials=3, seed=0):
    topo = build_topology("random-geometric", N, seed=seed, radius=0.5)
    C = metropolis_weights(topo)
    gt = generate_ground_truth(L, Q, seed=seed)
    profs = random_profiles(N, noise, seed=seed)
    streams = [generate_streams(profs, gt, T, np.random.SeedSequence(seed, spawn_key=(r,)))
               for r in range(trials)]
    return C, gt, profs, streams


class TestAdapt:
    def test_hand_example(self):
        psi = dif.adapt(np.zeros(2), np.array([1.0, 0.0]), 1.0,
                        dif.AlgorithmConfig(score=rc.ModifiedHuber(np.inf), mu=1.0))
        np.testing.assert_allclose(psi, [1.0, 0.0], atol=1e-7)

    def test_freeze_on_rejected_sample(self):
        cfg = dif.d_nlmm(mu=1.0, window_length=9)
        th = rc.ThresholdState.from_history(np.full(8, 0.01), 0.01, window_length=9)
        w = np.array([0.3, -0.2, 0.1])
        psi = dif.adapt(w, np.array([1.0, 2.0, -1.0]), 100.0, cfg, threshold=th)
        np.testing.assert_array_equal(psi, w)

    def test_attractor_still_applied_on_rejection(self):
        cfg = dif.d_snlmm(mu=1.0, beta=1e-3, upsilon=20.0)
        th = rc.ThresholdState.from_history(np.full(8, 0.01), 0.01, window_length=9)
        w = np.array([0.02, 0.5])
        psi = dif.adapt(w, np.array([1.0, 2.0]), 100.0, cfg, threshold=th)
        np.testing.assert_allclose(psi, [0.02 - 1e-3 * 12, 0.5])

    def test_accepted_sample_equals_nlms_step(self):
        rng = np.random.default_rng(1)
        w, u = rng.standard_normal(4), rng.standard_normal(4)
        d = u @ w + 0.01
        th = rc.ThresholdState.from_history(np.full(8, 1.0), 1.0, window_length=9)
        psi_mh = dif.adapt(w, u, d, dif.d_nlmm(mu=0.5), threshold=th)
        psi_nlms = dif.adapt(w, u, d, dif.dnlms(mu=0.5))
        np.testing.assert_array_equal(psi_mh, psi_nlms)

    def test_zero_regressor_is_safe(self):
        psi = dif.adapt(np.ones(3), np.zeros(3), 1.0, dif.dnlms(mu=1.0))
        np.testing.assert_array_equal(psi, np.ones(3))

    def test_missing_threshold_state(self):
        with pytest.raises(ValueError):
            dif.adapt(np.zeros(2), np.ones(2), 1.0, dif.d_nlmm())


class TestCombine:
    def test_identity(self):
        psi = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(dif.combine(psi, np.eye(3)), psi)
        np.testing.assert_array_equal(dif.combine(psi, np.ones((3, 3)) / 3, cooperative=False), psi)

    def test_chain_example(self, chain_weights):
        w = dif.combine(np.array([[1.0], [0.0], [0.0]]), chain_weights)
        np.testing.assert_allclose(w.ravel(), [2 / 3, 1 / 3, 0.0], atol=1e-15)

    def test_common_point_is_fixed(self, chain_weights):
        psi = np.tile([0.3, -1.2], (3, 1))
        np.testing.assert_allclose(dif.combine(psi, chain_weights), psi, atol=1e-15)

    def test_convex_hull(self):
        topo = build_topology("random-geometric", 12, seed=2)
        C = metropolis_weights(topo).weights
        psi = np.random.default_rng(2).standard_normal((12, 3))
        w = dif.combine(psi, C)
        assert (w >= psi.min(axis=0) - 1e-12).all() and (w <= psi.max(axis=0) + 1e-12).all()


class TestProximal:
    def test_l1_full_shrinkage(self):
        cfg = dif.prox_l1(mu=0.5, beta=1.0)
        out = dif.proximal_step(np.array([[0.2, -0.4, 0.1]]), cfg)
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_l0_leaves_large_entries(self):
        cfg = dif.prox_l0(mu=0.5, beta=2e-3, upsilon=20.0)
        out = dif.proximal_step(np.array([[0.5, 0.02]]), cfg)
        assert out[0, 0] == 0.5
        assert out[0, 1] == pytest.approx(0.02 - 1e-3 * 12)

    def test_config_consistency(self):
        with pytest.raises(ValueError):
            dif.AlgorithmConfig(attractor=rc.SoftThreshold(), beta=1e-3)
        with pytest.raises(ValueError):
            dif.AlgorithmConfig(attractor=rc.ExpL0(), beta=1e-3, proximal=True)


class TestReductions:
    def test_infinite_threshold_is_dnlms(self):
        C, gt, _, streams = _setup(lambda s: ContaminatedGaussian(0.01, s, 1e4 * s))
        a = dif.run_trials(C, gt, dif.AlgorithmConfig(score=rc.ModifiedHuber(np.inf), mu=0.7),
                           streams)
        b = dif.run_trials(C, gt, dif.dnlms(mu=0.7), streams)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.squared_deviation, y.squared_deviation)

    @pytest.mark.parametrize("factory", [dif.prox_l1, dif.prox_l0])
    def test_prox_with_zero_index_is_d_nlmm(self, factory):
        C, gt, _, streams = _setup(lambda s: ContaminatedGaussian(0.05, s, 1e4 * s))
        a = dif.run_trials(C, gt, factory(mu=0.7, beta=0.0), streams)
        b = dif.run_trials(C, gt, dif.d_nlmm(mu=0.7), streams)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.squared_deviation, y.squared_deviation)

    def test_batch_equals_single_runs(self):
        C, gt, _, streams = _setup(lambda s: ContaminatedGaussian(0.01, s, 1e4 * s))
        batch = dif.run_trials(C, gt, dif.d_snlmm(), streams)
        for s, t in zip(streams, batch):
            single = dif.run_trials(C, gt, dif.d_snlmm(), [s])[0]
            np.testing.assert_array_equal(single.squared_deviation, t.squared_deviation)


class TestRunTrial:
    def test_scalar_one_step_projection(self):
        prof = [NodeSignalProfile(0.0, 1.0, GaussianNoise(1e-300))]
        cfg = dif.dnlms(mu=1.0, eps_norm=0.0)
        traj = dif.run_trial(np.eye(1), np.array([0.8]), prof, cfg, 5, seed=3)
        assert traj.squared_deviation[0, 0] < 1e-28

    def test_deterministic(self):
        C, gt, profs, _ = _setup()
        a = dif.run_trial(C, gt, profs, dif.d_snlmm(), 200, seed=11)
        b = dif.run_trial(C, gt, profs, dif.d_snlmm(), 200, seed=11)
        np.testing.assert_array_equal(a.squared_deviation, b.squared_deviation)
        assert a.iterations == 200 and not a.diverged

    def test_divergence_flagged(self):
        C, gt, profs, _ = _setup(T=10)
        traj = dif.run_trial(C, gt, profs, dif.dlms(mu=50.0), 300, seed=1)
        assert traj.diverged
        assert np.isinf(traj.squared_deviation[traj.diverged_at:]).all()
        assert np.isfinite(traj.squared_deviation[:traj.diverged_at]).all()

    def test_nlms_fails_under_frequent_impulses(self):
        C, gt, profs, _ = _setup(lambda s: ContaminatedGaussian(0.05, s, 1e4 * s), N=10, L=16)
        trajs = [dif.run_trial(C, gt, profs, dif.dnlms(mu=0.7), 1500, seed=r) for r in range(3)]
        for t in trajs:
            assert t.diverged or dif.to_db(t.network_msd()[-100:].mean()) > -5

    def test_cooperation_beats_isolation(self):
        C, gt, profs, streams = _setup(lambda s: ContaminatedGaussian(0.01, s, 1e4 * s),
                                       N=10, L=16, Q=16, T=1500, trials=5)
        coop = dif.run_trials(C, gt, dif.d_nlmm(mu=1.0), streams)
        solo = dif.run_trials(C, gt, dif.d_nlmm(mu=1.0, cooperative=False), streams)
        steady = lambda ts: np.mean([t.network_msd()[-100:].mean() for t in ts])
        assert steady(coop) < steady(solo)

    def test_snapshots_and_export(self, tmp_path):
        C, gt, profs, _ = _setup()
        cfg = dif.d_nlmm()
        traj = dif.run_trial(C, gt, profs, cfg, 50, seed=0, snapshot_at=(9,))
        assert traj.snapshots[9].shape == (6, 8)
        traj.to_csv(tmp_path / "t.csv")
        rows = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
        assert rows.shape == (50 * 6, 3)
        summary = traj.summary(cfg)
        assert summary["config_digest"] == cfg.digest() and not summary["diverged"]
        json.dumps(summary)


def test_config_round_trip():
    for cfg in (dif.d_snlmm(mu=(0.5, 0.7)), dif.prox_l0(), dif.dlmp(), dif.dnhuber(),
                dif.l0_dnlms(), dif.d_slmm()):
        back = dif.AlgorithmConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg and back.digest() == cfg.digest()


def test_to_db_floor():
    assert dif.to_db(0.0) == -320.0
    assert dif.to_db(1.0) == 0.0
