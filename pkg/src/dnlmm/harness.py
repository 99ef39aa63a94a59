"""Experiment configuration, Monte Carlo orchestration and result export.

A configuration has four sections: ``network``, ``signals``, ``algorithms``
and ``run``.  Each algorithm entry may override part of ``signals`` (noise,
ground truth, profiles), which lets one experiment hold the sub-figures of
a figure-style comparison side by side.

Seeds: trial ``r`` draws its data from ``SeedSequence(seed, spawn_key=(r,))``
when ``run.paired`` is true, so every algorithm sees the same realisations;
otherwise the algorithm index is appended to the spawn key.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import diffusion as dif
from .network import build_topology, metropolis_weights, uniform_weights, validate_combination
from .signals import (AlphaStable, ContaminatedGaussian, GaussianNoise, NodeSignalProfile,
                      generate_ground_truth, generate_streams, ground_truth_from,
                      random_profiles)
from .theory import (MAX_NL, CapabilityError, InstabilityError, TheoryModel, beta_star,
                     estimate_moments, stability_bounds, steady_state_msd, transient_curve)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DB_FLOOR = -320.0
STEADY_WINDOW = 100
DEFAULT_PROFILE_RANGES = {"sigma_eps_sq": [0.5, 1.5], "tau": [0.2, 0.8],
                          "sigma_theta_sq": [0.01, 0.1]}

FAMILIES = {
    "dnlms": dif.dnlms, "dlms": dif.dlms, "d-nlmm": dif.d_nlmm, "d-snlmm": dif.d_snlmm,
    "d-lmm": dif.d_lmm, "d-slmm": dif.d_slmm, "l0-dnlms": dif.l0_dnlms,
    "dse-lms": dif.dse_lms, "dlmp": dif.dlmp, "d-llad": dif.dllad, "dnhuber": dif.dnhuber,
    "prox-l1": dif.prox_l1, "prox-l0": dif.prox_l0,
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class ExperimentError(RuntimeError):
    """A module error raised while running one algorithm of an experiment."""


# ---------------------------------------------------------------------------
# configuration

@dataclass
class AlgorithmEntry:
    label: str
    config: dif.AlgorithmConfig
    signals: dict | None = None

    def to_dict(self) -> dict:
        out = {"label": self.label, **self.config.to_dict()}
        if self.signals:
            out["signals"] = copy.deepcopy(self.signals)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AlgorithmEntry":
        data = copy.deepcopy(data)
        try:
            label = data.pop("label")
        except KeyError:
            raise ConfigError("every algorithm entry needs a label") from None
        overrides = data.pop("signals", None)
        try:
            if "family" in data:
                fam = data.pop("family")
                if fam not in FAMILIES:
                    raise ConfigError(f"unknown family {fam!r}; expected one of {sorted(FAMILIES)}")
                params = data.pop("params", {})
                if data:
                    raise ConfigError(f"unexpected keys next to 'family': {sorted(data)}")
                cfg = FAMILIES[fam](**params)
            else:
                cfg = dif.AlgorithmConfig.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"algorithm {label!r}: {exc}") from exc
        return cls(label, cfg, overrides)


@dataclass
class RunSettings:
    iterations: int = 3000
    trials: int = 100
    seed: int = 2021
    paired: bool = True
    theory: bool = False
    steady_window: int = STEADY_WINDOW
    diagnostics_at: int | None = None
    workers: int = 1
    batch_size: int = 25
    theory_samples: int = 200_000

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.steady_window < 1:
            raise ConfigError("steady_window must be >= 1")
        if self.diagnostics_at is not None and not 1 <= self.diagnostics_at <= self.iterations:
            raise ConfigError("diagnostics_at must lie in [1, iterations]")
        if self.workers < 1 or self.batch_size < 1:
            raise ConfigError("workers and batch_size must be >= 1")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""
    name: str
    network: dict
    signals: dict
    algorithms: list
    run: RunSettings = field(default_factory=RunSettings)
    out: str | None = None

    def __post_init__(self):
        self.algorithms = [a if isinstance(a, AlgorithmEntry) else AlgorithmEntry.from_dict(a)
                           for a in self.algorithms]
        if isinstance(self.run, dict):
            self.run = RunSettings(**self.run)
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        labels = [a.label for a in self.algorithms]
        dup = sorted({x for x in labels if labels.count(x) > 1})
        if dup:
            raise ConfigError(f"duplicate algorithm labels: {dup}")

    def to_dict(self) -> dict:
        run = dict(self.run.__dict__)
        if self.out is not None:
            run["out"] = self.out
        return {"name": self.name, "network": copy.deepcopy(self.network),
                "signals": copy.deepcopy(self.signals),
                "algorithms": [a.to_dict() for a in self.algorithms], "run": run}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        missing = [k for k in ("network", "signals", "algorithms") if k not in data]
        if missing:
            raise ConfigError(f"missing sections: {missing}")
        run = dict(data.get("run", {}))
        out = run.pop("out", None)
        try:
            settings = RunSettings(**run)
        except TypeError as exc:
            raise ConfigError(f"run section: {exc}") from exc
        return cls(data.get("name", "experiment"), data["network"], data["signals"],
                   data["algorithms"], settings, out)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_config(path) -> ExperimentConfig:
    """Read a JSON or TOML experiment file (chosen by extension)."""
    path = Path(path)
    text = path.read_text()
    try:
        data = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def deep_merge(base: dict, override: dict | None) -> dict:
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


# ---------------------------------------------------------------------------
# building the scenario

def build_network(spec: dict):
    """Topology and combination matrix from the ``network`` section."""
    spec = dict(spec)
    rule = spec.pop("weights", "metropolis")
    topo = build_topology(spec.pop("kind", "random-geometric"), spec.pop("node_count", None),
                          **spec)
    if rule == "metropolis":
        C = metropolis_weights(topo)
    elif rule == "uniform":
        C = uniform_weights(topo)
    else:
        raise ConfigError(f"unknown combination rule {rule!r}")
    report = validate_combination(C, topo)
    if not report:
        raise ConfigError(f"combination matrix invalid: {report.message}")
    return topo, C


def build_noise_factory(spec: dict):
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        return GaussianNoise
    if kind in ("cg", "contaminated-gaussian"):
        ratio = float(spec.get("impulse_ratio", 1e4))
        return lambda s: ContaminatedGaussian(float(spec["p"]), s, ratio * s,
                                              spec.get("impulse_shape", "gaussian"))
    if kind in ("alpha-stable", "alpha_stable"):
        background = bool(spec.get("background", False))
        return lambda s: AlphaStable(float(spec["alpha"]), float(spec["gamma"]),
                                     s if background else 0.0)
    raise ConfigError(f"unknown noise kind {kind!r}")


def build_ground_truth(spec: dict):
    if "w_o" in spec:
        return ground_truth_from(spec["w_o"])
    return generate_ground_truth(int(spec["L"]), int(spec.get("Q", spec["L"])), spec.get("seed"))


def build_profiles(spec: dict, node_count: int) -> list[NodeSignalProfile]:
    """Per-node profiles from ``signals``: explicit list or seeded uniform ranges."""
    factory = build_noise_factory(spec.get("noise", {"kind": "gaussian"}))
    prof = spec.get("profiles", {})
    if isinstance(prof, list):
        if len(prof) != node_count:
            raise ConfigError(f"{len(prof)} profiles given for {node_count} nodes")
        return [NodeSignalProfile(float(p.get("tau", 0.0)), float(p["sigma_eps_sq"]),
                                  factory(float(p["sigma_theta_sq"]))) for p in prof]
    ranges = {k: tuple(prof.get(k, v)) for k, v in DEFAULT_PROFILE_RANGES.items()}
    return random_profiles(node_count, factory, prof.get("seed"), white=prof.get("white", False),
                           **ranges)


@dataclass
class Scenario:
    ground_truth: object
    profiles: list
    key: str


def build_scenario(signals: dict, node_count: int) -> Scenario:
    if "ground_truth" not in signals:
        raise ConfigError("signals section needs a ground_truth entry")
    gt = build_ground_truth(signals["ground_truth"])
    profiles = build_profiles(signals, node_count)
    key = hashlib.sha256(json.dumps(signals, sort_keys=True).encode()).hexdigest()[:16]
    return Scenario(gt, profiles, key)


def trial_seed(master: int, trial: int, algorithm: int | None = None) -> np.random.SeedSequence:
    key = (trial,) if algorithm is None else (trial, algorithm)
    return np.random.SeedSequence(master, spawn_key=key)


# ---------------------------------------------------------------------------
# metrics

def compute_msd(trajectories, floor: float = DB_FLOOR) -> np.ndarray:
    """Network MSD in dB: squared deviations averaged over trials and nodes.

    Accepts a list of :class:`~dnlmm.diffusion.Trajectory` or an array of
    shape ``(R, T, N)``.
    """
    if isinstance(trajectories, np.ndarray):
        arr = trajectories
    else:
        if len(trajectories) == 0:
            raise ValueError("no trajectories to average")
        shapes = {t.squared_deviation.shape for t in trajectories}
        if len(shapes) != 1:
            raise ValueError(f"trajectories differ in shape: {sorted(shapes)}")
        arr = np.stack([t.squared_deviation for t in trajectories])
    if arr.size == 0 or arr.shape[0] == 0:
        raise ValueError("no trajectories to average")
    with np.errstate(invalid="ignore"):
        return dif.to_db(arr.mean(axis=(0, 2)), floor)


def steady_value(curve, window: int = STEADY_WINDOW):
    """Average over the last ``window`` iterations (linear scale in, linear out)."""
    return np.mean(np.asarray(curve)[-window:], axis=0)


# ---------------------------------------------------------------------------
# results

@dataclass
class TheoryOverlay:
    msd: np.ndarray | None = None   # linear network MSD
    steady_db: float | None = None
    nodes_db: np.ndarray | None = None
    report: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class AlgorithmResult:
    label: str
    config: dif.AlgorithmConfig
    msd: np.ndarray                 # (T,) linear network MSD, all trials
    node_msd: np.ndarray            # (T, N) linear, all trials
    diverged: int
    trials: int
    steady_window: int = STEADY_WINDOW
    survivor_msd: np.ndarray | None = None
    mean_error: np.ndarray | None = None   # (N, L) trial-average of w_o - w at the end
    diagnostics: np.ndarray | None = None  # (R, N, L) error samples
    theory: TheoryOverlay | None = None

    @property
    def msd_db(self) -> np.ndarray:
        return dif.to_db(self.msd, DB_FLOOR)

    @property
    def steady_db(self) -> float:
        return dif.to_db(steady_value(self.msd, self.steady_window), DB_FLOOR)

    @property
    def node_steady_db(self) -> np.ndarray:
        return dif.to_db(steady_value(self.node_msd, self.steady_window), DB_FLOOR)

    def summary(self) -> dict:
        out = {
            "config_digest": self.config.digest(),
            "trials": self.trials,
            "diverged": self.diverged,
            "steady_msd_db": _finite_or_none(self.steady_db),
            "node_steady_msd_db": [_finite_or_none(x) for x in self.node_steady_db],
        }
        if self.survivor_msd is not None and self.diverged:
            out["survivor_steady_msd_db"] = _finite_or_none(
                dif.to_db(steady_value(self.survivor_msd, self.steady_window)))
        if self.theory is not None:
            out["theory"] = ({"error": self.theory.error} if self.theory.error else
                             {"steady_msd_db": self.theory.steady_db,
                              "node_steady_msd_db": list(map(float, self.theory.nodes_db)),
                              **self.theory.report})
        return out


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def safe_label(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", label).strip("_") or "algorithm"


def _write_curve(path, values_db) -> None:
    lines = ["iteration,msd_db"]
    lines += [f"{i + 1},{v:.6f}" for i, v in enumerate(values_db)]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_nodes(path, values_db) -> None:
    lines = ["node,steady_msd_db"]
    lines += [f"{k},{v:.6f}" for k, v in enumerate(values_db)]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ResultSet:
    config: ExperimentConfig
    results: dict
    timestamp: str = ""

    @property
    def config_digest(self) -> str:
        return self.config.digest()

    def __getitem__(self, label: str) -> AlgorithmResult:
        return self.results[label]

    def summary(self) -> dict:
        body = {
            "name": self.config.name,
            "config_digest": self.config_digest,
            "config": self.config.to_dict(),
            "results": {lab: r.summary() for lab, r in self.results.items()},
        }
        digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
        return {"timestamp": self.timestamp, "digest": digest, **body}

    def write(self, out_dir) -> Path:
        """Write ``msd_<label>.csv``, ``nodes_<label>.csv`` (plus theory files) and ``summary.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for lab, res in self.results.items():
            name = safe_label(lab)
            _write_curve(out / f"msd_{name}.csv", res.msd_db)
            _write_nodes(out / f"nodes_{name}.csv", res.node_steady_db)
            th = res.theory
            if th is not None and th.error is None:
                _write_curve(out / f"theory_msd_{name}.csv", dif.to_db(th.msd))
                _write_nodes(out / f"theory_nodes_{name}.csv", th.nodes_db)
            if res.diagnostics is not None:
                R, N, L = res.diagnostics.shape
                r, k, l = np.meshgrid(np.arange(R), np.arange(N), np.arange(L), indexing="ij")
                rows = np.column_stack([r.ravel(), k.ravel(), l.ravel(), res.diagnostics.ravel()])
                np.savetxt(out / f"diag_{name}.csv", rows, delimiter=",",
                           header="trial,node,coef,error", comments="",
                           fmt=["%d", "%d", "%d", "%.10g"])
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return out


# ---------------------------------------------------------------------------
# running

def _run_batch(C, w_o, profiles, cfg, iterations, seeds, snapshot_at):
    streams = [generate_streams(profiles, w_o, iterations, s) for s in seeds]
    trajs = dif.run_trials(C, w_o, cfg, streams, snapshot_at)
    sd = np.stack([t.squared_deviation for t in trajs])
    div = np.array([t.diverged for t in trajs])
    final = np.stack([t.final_estimate for t in trajs])
    snaps = (np.stack([t.snapshots[next(iter(snapshot_at))] for t in trajs])
             if snapshot_at else None)
    return sd, div, final, snaps


def simulate(C, scenario: Scenario, entry: AlgorithmEntry, run: RunSettings,
             algorithm_index: int = 0, executor=None) -> AlgorithmResult:
    """Monte Carlo trials for one algorithm; reduction is in trial order."""
    w_o = scenario.ground_truth.w_o
    R, T = run.trials, run.iterations
    alg_key = None if run.paired else algorithm_index
    seeds = [trial_seed(run.seed, r, alg_key) for r in range(R)]
    snap = (run.diagnostics_at - 1,) if run.diagnostics_at else ()
    batches = [seeds[i:i + run.batch_size] for i in range(0, R, run.batch_size)]
    args = [(C, w_o, scenario.profiles, entry.config, T, b, snap) for b in batches]
    if executor is not None:
        futures = [executor.submit(_run_batch, *a) for a in args]
        outputs = (f.result() for f in futures)
    else:
        outputs = (_run_batch(*a) for a in args)

    N, L = len(scenario.profiles), w_o.shape[0]
    total = np.zeros((T, N))
    survivors = np.zeros((T, N))
    err_sum = np.zeros((N, L))
    n_div = 0
    diag = []
    start = 0
    for b_idx, out in enumerate(outputs):
        try:
            sd, div, final, snaps = out
        except Exception as exc:  # pragma: no cover - surfaced with context below
            raise ExperimentError(f"{entry.label!r}, trials {start}..: {exc}") from exc
        with np.errstate(invalid="ignore"):
            total += sd.sum(axis=0)
        survivors += sd[~div].sum(axis=0)
        err_sum += (w_o - final[~div]).sum(axis=0)
        n_div += int(div.sum())
        if snaps is not None:
            diag.append(w_o - snaps)
        start += sd.shape[0]
    alive = R - n_div
    node_msd = total / R
    return AlgorithmResult(
        entry.label, entry.config, node_msd.mean(axis=1), node_msd, n_div, R,
        run.steady_window,
        survivor_msd=(survivors / alive).mean(axis=1) if alive else None,
        mean_error=err_sum / alive if alive else None,
        diagnostics=np.concatenate(diag) if diag else None)


def evaluate_theory(C, scenario: Scenario, cfg: dif.AlgorithmConfig, iterations: int,
                    samples: int = 200_000, seed=0, moments=None) -> TheoryOverlay:
    """Transient curve, steady state, bounds and (for sparse variants) beta*.

    Unsupported setups are reported in ``error`` rather than raised.
    """
    try:
        model = TheoryModel.from_setup(C, scenario.profiles, scenario.ground_truth, cfg,
                                       moments=moments, samples=samples, seed=seed)
        curve = transient_curve(model.copy(), iterations)
        bounds = stability_bounds(model)
        report = {
            "steady_probability": model.steady_probabilities().tolist(),
            "mean_bound": bounds.mean_bound.tolist(),
            "ms_bound": bounds.ms_bound.tolist(),
            "combined_bound": bounds.combined.tolist(),
        }
        ss = steady_state_msd(model)
        report["spectral_radius"] = ss.spectral_radius
        if cfg.uses_attractor:
            bs = beta_star(model)
            report["beta_star"] = bs.value if bs.exists else None
            report["beta_a"], report["beta_b"] = bs.beta_a, bs.beta_b
        return TheoryOverlay(curve.msd_network, ss.msd_network_db, ss.msd_nodes_db, report)
    except (CapabilityError, InstabilityError) as exc:
        return TheoryOverlay(error=f"{type(exc).__name__}: {exc}")


def run_experiment(cfg: ExperimentConfig, out_dir=None, theory: bool | None = None,
                   log=None) -> ResultSet:
    """Run every algorithm of ``cfg``; write outputs when ``out_dir`` (or ``cfg.out``) is set."""
    _, C = build_network(cfg.network)
    N = C.node_count
    run = cfg.run
    want_theory = run.theory if theory is None else theory
    scenarios, moments = {}, {}
    results = {}
    executor = ProcessPoolExecutor(run.workers) if run.workers > 1 else None
    try:
        for a_idx, entry in enumerate(cfg.algorithms):
            signals = deep_merge(cfg.signals, entry.signals)
            sc = build_scenario(signals, N)
            sc = scenarios.setdefault(sc.key, sc)
            if log:
                log(f"[{cfg.name}] {entry.label}: {run.trials} trials x {run.iterations} iterations")
            try:
                res = simulate(C.weights, sc, entry, run, a_idx, executor)
            except ExperimentError:
                raise
            except Exception as exc:
                raise ExperimentError(f"algorithm {entry.label!r}: {exc}") from exc
            if want_theory:
                mom = _moments_for(sc, run, moments)
                res.theory = evaluate_theory(C.weights, sc, entry.config, run.iterations,
                                             run.theory_samples, moments=mom)
            results[entry.label] = res
    finally:
        if executor is not None:
            executor.shutdown()
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    rs = ResultSet(cfg, results, stamp)
    target = out_dir or cfg.out
    if target:
        rs.write(target)
    return rs


def _moments_for(sc: Scenario, run: RunSettings, cache: dict):
    """Regressor moments shared by every algorithm of one scenario (``None`` if untractable)."""
    N, L = len(sc.profiles), sc.ground_truth.length
    if N * L > MAX_NL:
        return None
    if any(isinstance(p.noise, AlphaStable) for p in sc.profiles):
        return None
    key = (sc.key, L)
    if key not in cache:
        cache[key] = estimate_moments(sc.profiles, L, run.theory_samples,
                                      np.random.SeedSequence(run.seed, spawn_key=(2 ** 31,)))
    return cache[key]


def run_theory(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Theory-only evaluation of every algorithm in ``cfg``; returns a JSON-ready report."""
    _, C = build_network(cfg.network)
    N = C.node_count
    report, moments = {}, {}
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for entry in cfg.algorithms:
        sc = build_scenario(deep_merge(cfg.signals, entry.signals), N)
        mom = _moments_for(sc, cfg.run, moments)
        th = evaluate_theory(C.weights, sc, entry.config, cfg.run.iterations,
                             cfg.run.theory_samples, moments=mom)
        if th.error:
            report[entry.label] = {"error": th.error}
            continue
        report[entry.label] = {"steady_msd_db": th.steady_db,
                               "node_steady_msd_db": th.nodes_db.tolist(), **th.report}
        if out:
            _write_curve(out / f"theory_msd_{safe_label(entry.label)}.csv", dif.to_db(th.msd))
            _write_nodes(out / f"theory_nodes_{safe_label(entry.label)}.csv", th.nodes_db)
    if out:
        (out / "theory.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Static checks beyond the dataclass invariants; returns a list of problems."""
    problems = []
    try:
        _, C = build_network(cfg.network)
    except (ValueError, TypeError) as exc:
        return [f"network: {exc}"]
    N = C.node_count
    for entry in cfg.algorithms:
        try:
            sc = build_scenario(deep_merge(cfg.signals, entry.signals), N)
        except (ValueError, TypeError, KeyError) as exc:
            problems.append(f"{entry.label}: signals: {exc}")
            continue
        mu = entry.config.step_sizes(N)
        if entry.config.normalized and np.any(mu >= 2):
            problems.append(f"{entry.label}: normalised step size >= 2 is outside the stable range")
        L = sc.ground_truth.length
        if cfg.run.theory and N * L > MAX_NL:
            problems.append(f"{entry.label}: theory requested but N*L = {N * L} > {MAX_NL}")
    return problems
