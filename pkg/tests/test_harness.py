import json

import numpy as np
import pytest

from dnlmm import diffusion as dif
from dnlmm import harness as hz
from dnlmm.presets import PRESETS, preset


def tiny_config(**run):
    settings = dict(iterations=120, trials=4, seed=5, batch_size=3)
    settings.update(run)
    return hz.ExperimentConfig(
        "tiny",
        {"kind": "random-geometric", "node_count": 3, "seed": 2, "radius": 0.7},
        {"ground_truth": {"L": 2, "Q": 2, "seed": 1},
         "profiles": {"seed": 4},
         "noise": {"kind": "cg", "p": 0.01, "impulse_ratio": 1e4}},
        [hz.AlgorithmEntry("D-NLMM", dif.d_nlmm(mu=0.5)),
         hz.AlgorithmEntry("D-SNLMM", dif.d_snlmm(mu=0.5, beta=1e-3))],
        hz.RunSettings(**settings))


class TestComputeMsd:
    def test_unit_deviation(self):
        assert np.all(hz.compute_msd(np.ones((3, 5, 4))) == 0.0)

    def test_floor(self):
        assert np.all(hz.compute_msd(np.zeros((2, 5, 3))) == -320.0)

    def test_hand_average(self):
        sd = np.array([[[0.1]], [[0.3]]])
        assert hz.compute_msd(sd)[0] == pytest.approx(10 * np.log10(0.2))
        assert hz.compute_msd(sd)[0] == pytest.approx(-6.99, abs=5e-3)

    def test_accepts_trajectories(self):
        t = [dif.Trajectory(np.full((4, 2), v), np.zeros((2, 1))) for v in (0.1, 0.3)]
        np.testing.assert_allclose(hz.compute_msd(t), 10 * np.log10(0.2))

    def test_errors(self):
        with pytest.raises(ValueError):
            hz.compute_msd([])
        with pytest.raises(ValueError):
            hz.compute_msd(np.zeros((0, 5, 2)))
        with pytest.raises(ValueError):
            hz.compute_msd([dif.Trajectory(np.ones((4, 2)), None),
                            dif.Trajectory(np.ones((5, 2)), None)])


class TestRunExperiment:
    def test_single_trial_equals_run_trial(self):
        cfg = tiny_config(trials=1)
        rs = hz.run_experiment(cfg)
        _, C = hz.build_network(cfg.network)
        sc = hz.build_scenario(cfg.signals, 3)
        traj = dif.run_trial(C, sc.ground_truth, sc.profiles, cfg.algorithms[0].config,
                             cfg.run.iterations, seed=hz.trial_seed(cfg.run.seed, 0))
        np.testing.assert_array_equal(rs["D-NLMM"].msd_db, hz.compute_msd([traj]))

    def test_paired_seeds(self):
        cfg = tiny_config()
        cfg.algorithms.append(hz.AlgorithmEntry("copy", dif.d_nlmm(mu=0.5)))
        rs = hz.run_experiment(cfg)
        np.testing.assert_array_equal(rs["D-NLMM"].msd, rs["copy"].msd)
        cfg.run.paired = False
        rs = hz.run_experiment(cfg)
        assert not np.array_equal(rs["D-NLMM"].msd, rs["copy"].msd)

    def test_batching_does_not_change_results(self):
        a = hz.run_experiment(tiny_config(batch_size=1))
        b = hz.run_experiment(tiny_config(batch_size=10))
        for lab in a.results:
            np.testing.assert_array_equal(a[lab].msd, b[lab].msd)

    def test_workers_do_not_change_results(self):
        a = hz.run_experiment(tiny_config(trials=6))
        b = hz.run_experiment(tiny_config(trials=6, workers=2))
        for lab in a.results:
            np.testing.assert_array_equal(a[lab].msd, b[lab].msd)

    def test_outputs_are_reproducible(self, tmp_path):
        hz.run_experiment(tiny_config(diagnostics_at=50), out_dir=tmp_path / "a")
        hz.run_experiment(tiny_config(diagnostics_at=50), out_dir=tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        assert {"msd_D-NLMM.csv", "nodes_D-NLMM.csv", "diag_D-SNLMM.csv", "summary.json"} <= set(names)
        for n in names:
            x, y = (tmp_path / d / n for d in "ab")
            if n == "summary.json":
                sx, sy = json.loads(x.read_text()), json.loads(y.read_text())
                sx.pop("timestamp"), sy.pop("timestamp")
                assert sx == sy
            else:
                assert x.read_bytes() == y.read_bytes()

    def test_output_schema(self, tmp_path):
        rs = hz.run_experiment(tiny_config(), out_dir=tmp_path)
        rows = (tmp_path / "msd_D-NLMM.csv").read_text().splitlines()
        assert rows[0] == "iteration,msd_db" and len(rows) == 121
        rows = (tmp_path / "nodes_D-NLMM.csv").read_text().splitlines()
        assert rows[0] == "node,steady_msd_db" and len(rows) == 4
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config_digest"] == rs.config_digest
        assert summary["results"]["D-NLMM"]["diverged"] == 0

    def test_steady_state_is_last_window_average(self):
        rs = hz.run_experiment(tiny_config())
        res = rs["D-NLMM"]
        assert res.steady_db == pytest.approx(10 * np.log10(res.msd[-100:].mean()))

    def test_theory_overlay(self, tmp_path):
        cfg = tiny_config(theory=True, theory_samples=5000)
        rs = hz.run_experiment(cfg, out_dir=tmp_path)
        th = rs["D-SNLMM"].theory
        assert th.error is None and th.msd.shape == (120,)
        assert "beta_star" in th.report and th.report["spectral_radius"] < 1
        assert (tmp_path / "theory_msd_D-NLMM.csv").exists()

    def test_theory_errors_are_reported(self):
        cfg = tiny_config(theory=True, theory_samples=5000)
        cfg.algorithms = [hz.AlgorithmEntry("DSE-LMS", dif.dse_lms())]
        rs = hz.run_experiment(cfg)
        assert "CapabilityError" in rs["DSE-LMS"].theory.error

    def test_divergence_counted(self):
        cfg = tiny_config()
        cfg.algorithms = [hz.AlgorithmEntry("unstable", dif.dlms(mu=40.0))]
        res = hz.run_experiment(cfg)["unstable"]
        assert res.diverged == res.trials
        assert res.summary()["steady_msd_db"] is None


class TestConfig:
    def test_json_and_toml_agree(self, tmp_path):
        cfg = tiny_config()
        cfg.save(tmp_path / "c.json")
        toml = """
name = "tiny"
[network]
kind = "random-geometric"
node_count = 3
seed = 2
radius = 0.7
[signals.ground_truth]
L = 2
Q = 2
seed = 1
[signals.profiles]
seed = 4
[signals.noise]
kind = "cg"
p = 0.01
impulse_ratio = 1e4
[[algorithms]]
label = "D-NLMM"
family = "d-nlmm"
params = { mu = 0.5 }
[[algorithms]]
label = "D-SNLMM"
family = "d-snlmm"
params = { mu = 0.5, beta = 1e-3 }
[run]
iterations = 120
trials = 4
seed = 5
batch_size = 3
"""
        (tmp_path / "c.toml").write_text(toml)
        a, b = hz.load_config(tmp_path / "c.json"), hz.load_config(tmp_path / "c.toml")
        assert a.digest() == b.digest() == cfg.digest()

    def test_round_trip(self):
        for name in PRESETS:
            cfg = preset(name)
            back = hz.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
            assert back.digest() == cfg.digest()

    @pytest.mark.parametrize("mutate,match", [
        (lambda d: d["algorithms"].append(dict(d["algorithms"][0])), "duplicate"),
        (lambda d: d["run"].update(trials=0), "trials"),
        (lambda d: d["algorithms"][0].update(family="nope"), "family"),
        (lambda d: d["algorithms"][0].pop("label"), "label"),
    ])
    def test_invalid(self, mutate, match):
        data = tiny_config().to_dict()
        mutate(data)
        with pytest.raises(hz.ConfigError, match=match):
            hz.ExperimentConfig.from_dict(data)

    def test_unparseable_file(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(hz.ConfigError):
            hz.load_config(tmp_path / "bad.json")

    def test_validate_flags_problems(self):
        cfg = tiny_config(theory=True)
        cfg.algorithms.append(hz.AlgorithmEntry("fast", dif.dnlms(mu=2.5)))
        cfg.signals["ground_truth"] = {"L": 50, "Q": 2, "seed": 1}
        problems = hz.validate_config(cfg)
        assert any("step size" in p for p in problems)
        assert any("N*L" in p for p in problems)
        assert hz.validate_config(tiny_config()) == []

    def test_signal_overrides(self):
        cfg = tiny_config()
        cfg.algorithms[1].signals = {"noise": {"kind": "gaussian"}}
        merged = hz.deep_merge(cfg.signals, cfg.algorithms[1].signals)
        assert merged["noise"]["kind"] == "gaussian" and merged["noise"]["p"] == 0.01
        assert merged["ground_truth"] == cfg.signals["ground_truth"]


class TestPresets:
    def test_fig5(self):
        cfg = preset("fig5")
        algs = {a.label: a.config for a in cfg.algorithms}
        sn = algs["D-SNLMM"]
        assert (sn.mu, sn.window_length, sn.zeta, sn.attractor.upsilon, sn.beta) == (
            0.7, 9, 0.99, 20.0, 8.6e-5)
        assert algs["DSE-LMS"].mu == 0.006 and algs["DNLMS"].mu == 0.7
        assert cfg.signals["ground_truth"]["L"] == 32 and cfg.signals["ground_truth"]["Q"] == 2
        assert cfg.signals["noise"] == {"kind": "gaussian"}

    def test_fig8(self):
        cfg = preset("fig8")
        assert cfg.signals["noise"]["alpha"] == 1.3
        assert cfg.signals["noise"]["gamma"] == pytest.approx(2 / 15)
        assert {a.label: a.config for a in cfg.algorithms}["DLMP"].score.p == 1.25

    def test_fig9(self):
        cfg = preset("fig9")
        assert cfg.network["node_count"] == 10 and cfg.run.theory
        assert cfg.signals["ground_truth"]["L"] == 5

    def test_every_preset_builds(self):
        for name in PRESETS:
            cfg = preset(name)
            assert hz.validate_config(cfg) == [] or name == "fig2"

    def test_unknown(self):
        with pytest.raises(ValueError):
            preset("fig99")

    def test_fig5_gaussian_noise_parity(self):
        cfg = preset("fig5")
        cfg.run.trials = 8
        cfg.run.iterations = 1500
        cfg.algorithms = [a for a in cfg.algorithms if a.label in ("DNLMS", "D-NLMM")]
        rs = hz.run_experiment(cfg)
        assert abs(rs["D-NLMM"].steady_db - rs["DNLMS"].steady_db) < 1.0


def test_trial_seeds_are_distinct():
    a = hz.trial_seed(1, 0).generate_state(4)
    b = hz.trial_seed(1, 1).generate_state(4)
    c = hz.trial_seed(1, 0, 1).generate_state(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    np.testing.assert_array_equal(a, hz.trial_seed(1, 0).generate_state(4))
