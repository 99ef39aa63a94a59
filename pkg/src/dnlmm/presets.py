"""Experiment presets, one per figure of the standard benchmark set.

Parameters printed in the figure captions are transcribed as given.
Everything the captions leave open (topology, node profiles, ground-truth
draw, iteration counts, step-size grids) is fixed here once, with seeds,
so runs are comparable across machines.
"""
from __future__ import annotations

import numpy as np

from . import diffusion as dif
from . import robust_cost as rc
from .harness import AlgorithmEntry, ExperimentConfig, RunSettings, build_profiles

NETWORK_SEED = 11
PROFILE_SEED = 2021
TRUTH_SEED = 7
RUN_SEED = 1

NET20 = {"kind": "random-geometric", "node_count": 20, "seed": NETWORK_SEED, "radius": 0.3}
NET10 = {"kind": "random-geometric", "node_count": 10, "seed": NETWORK_SEED, "radius": 0.4}

IMPULSE_RATIO = 1e4
FIG2_T_GRID = (0.25, 0.5, 0.9, 1.1)
FIG4_BETA_GRID = tuple(float(b) for b in np.logspace(-6, -2.5, 15))
FIG4_UPSILON = (10.0, 20.0, 40.0, 80.0)
FIG4_Q = (1, 2, 4, 8, 16, 32)
FIG10_MU = (0.1, 0.5, 1.0)


def cg(p, ratio=IMPULSE_RATIO, shape="gaussian") -> dict:
    return {"kind": "cg", "p": p, "impulse_ratio": ratio, "impulse_shape": shape}


def signals(L=32, Q=2, noise=None, white=False, w_o=None) -> dict:
    gt = {"w_o": list(w_o)} if w_o is not None else {"L": L, "Q": Q, "seed": TRUTH_SEED}
    return {"ground_truth": gt,
            "profiles": {"seed": PROFILE_SEED, "white": white},
            "noise": noise or {"kind": "gaussian"}}


def _entry(label, cfg, **overrides) -> AlgorithmEntry:
    return AlgorithmEntry(label, cfg, overrides or None)


def _config(name, network, sig, algorithms, iterations=3000, trials=100, theory=False,
            **run) -> ExperimentConfig:
    return ExperimentConfig(name, dict(network), sig, algorithms,
                            RunSettings(iterations=iterations, trials=trials, seed=RUN_SEED,
                                        theory=theory, **run))


# ---------------------------------------------------------------------------

def fig2() -> ExperimentConfig:
    """Step-size stability of D-LMM versus D-NLMM, white inputs, non-sparse truth."""
    sig = signals(Q=32, noise=cg(0.01), white=True)
    # D-LMM step sizes are fractions of 2 / max(sigma_eps^2) over the nodes
    s_max = max(p.sigma_eps_sq for p in build_profiles(sig, NET20["node_count"]))
    algs = [_entry(f"D-LMM t={t}", dif.d_lmm(mu=t * 2 / s_max)) for t in FIG2_T_GRID]
    algs += [_entry(f"D-NLMM mu={mu}", dif.d_nlmm(mu=mu)) for mu in (0.5, 1.0, 1.9, 2.0)]
    algs += [_entry(f"D-NLMM non-coop mu={mu}", dif.d_nlmm(mu=mu, cooperative=False))
             for mu in (1.0, 2.0)]
    return _config("fig2", NET20, sig, algs)


def fig3() -> ExperimentConfig:
    """Score functions with adaptive thresholds."""
    algs = [
        _entry("MH", dif.d_nlmm(mu=0.7)),
        _entry("Huber", dif.AlgorithmConfig(score=rc.Huber(), mu=0.7)),
        _entry("Hampel", dif.AlgorithmConfig(score=rc.Hampel(), mu=0.7)),
    ]
    return _config("fig3", NET20, signals(Q=2, noise=cg(0.01)), algs)


def fig4() -> ExperimentConfig:
    """Steady-state MSD versus beta: (a) over upsilon at Q=2, (b) over Q at upsilon=20."""
    algs = [_entry("D-NLMM Q=2", dif.d_nlmm(mu=0.7))]
    for ups in FIG4_UPSILON:
        algs += [_entry(f"a ups={ups:g} beta={b:.3g}", dif.d_snlmm(mu=0.7, beta=b, upsilon=ups))
                 for b in FIG4_BETA_GRID]
    for q in FIG4_Q:
        gt = {"ground_truth": {"L": 32, "Q": q, "seed": TRUTH_SEED}}
        if q != 2:
            algs.append(_entry(f"D-NLMM Q={q}", dif.d_nlmm(mu=0.7), **gt))
        algs += [_entry(f"b Q={q} beta={b:.3g}", dif.d_snlmm(mu=0.7, beta=b), **gt)
                 for b in FIG4_BETA_GRID]
    return _config("fig4", NET20, signals(Q=2, noise=cg(0.01)), algs, trials=50)


def _fig5_family(nw=9, zeta=0.99, mu=0.7):
    return [
        _entry("DNLMS", dif.dnlms(mu=mu)),
        _entry("l0-DNLMS", dif.l0_dnlms(mu=mu, rho=6e-5, upsilon=20)),
        _entry("D-NLMM", dif.d_nlmm(mu=mu, window_length=nw, zeta=zeta)),
        _entry("D-SNLMM", dif.d_snlmm(mu=mu, beta=8.6e-5, upsilon=20, window_length=nw,
                                      zeta=zeta)),
    ]


def fig5() -> ExperimentConfig:
    """Gaussian noise, sparse truth (Q=2)."""
    algs = _fig5_family() + [_entry("DSE-LMS", dif.dse_lms(mu=0.006))]
    return _config("fig5", NET20, signals(Q=2), algs)


def fig6a() -> ExperimentConfig:
    """CG noise with p=0.01."""
    algs = _fig5_family(nw=9) + [
        _entry("DSE-LMS", dif.dse_lms(mu=0.0058)),
        _entry("DLMP", dif.dlmp(mu=0.01, p=1.4)),
        _entry("D-LLAD", dif.dllad(mu=0.042, alpha=0.5)),
        _entry("DNHuber", dif.dnhuber(mu=0.7, b=0.4)),
    ]
    return _config("fig6a", NET20, signals(Q=2, noise=cg(0.01)), algs)


def fig6b() -> ExperimentConfig:
    """CG noise with p=0.05."""
    algs = _fig5_family(nw=16) + [
        _entry("DSE-LMS", dif.dse_lms(mu=0.0058)),
        _entry("DLMP", dif.dlmp(mu=0.005, p=1.4)),
        _entry("D-LLAD", dif.dllad(mu=0.018, alpha=1.4)),
        _entry("DNHuber", dif.dnhuber(mu=0.7, b=0.3)),
    ]
    return _config("fig6b", NET20, signals(Q=2, noise=cg(0.05)), algs)


def fig7() -> ExperimentConfig:
    """Laplacian impulses, p=0.1, variance ratio 1e3 (DEN-LMS is out of scope)."""
    algs = [
        _entry("DNLMS", dif.dnlms(mu=1.0)),
        _entry("l0-DNLMS", dif.l0_dnlms(mu=1.0, rho=1e-4, upsilon=20)),
        _entry("D-NLMM", dif.d_nlmm(mu=1.0, window_length=16, zeta=0.95)),
        _entry("D-SNLMM", dif.d_snlmm(mu=1.0, beta=1e-4, upsilon=20, window_length=16,
                                      zeta=0.95)),
        _entry("DSE-LMS", dif.dse_lms(mu=0.008)),
        _entry("DLMP", dif.dlmp(mu=0.007, p=1.5)),
        _entry("D-LLAD", dif.dllad(mu=0.024, alpha=0.8)),
    ]
    return _config("fig7", NET20, signals(Q=2, noise=cg(0.1, 1e3, "laplacian")), algs)


ALPHA_STABLE = {"kind": "alpha-stable", "alpha": 1.3, "gamma": 2 / 15}


def fig8() -> ExperimentConfig:
    """Alpha-stable noise (alpha=1.3, gamma=2/15)."""
    algs = _fig5_family(nw=16, zeta=0.95) + [
        _entry("DSE-LMS", dif.dse_lms(mu=0.006)),
        _entry("DLMP", dif.dlmp(mu=0.009, p=1.25)),
        _entry("D-LLAD", dif.dllad(mu=0.03, alpha=0.6)),
    ]
    return _config("fig8", NET20, signals(Q=2, noise=dict(ALPHA_STABLE)), algs)


def fig9() -> ExperimentConfig:
    """Theory versus simulation of D-NLMM, N=10, L=5, non-sparse truth."""
    algs = [
        _entry("D-NLMM p=0.01", dif.d_nlmm(mu=0.7, window_length=9)),
        _entry("D-NLMM p=0.05", dif.d_nlmm(mu=0.7, window_length=16), noise=cg(0.05)),
    ]
    return _config("fig9", NET10, signals(L=5, Q=5, noise=cg(0.01)), algs,
                   iterations=1000, theory=True)


def fig10() -> ExperimentConfig:
    """Node-wise steady-state MSD of D-NLMM for several step sizes."""
    algs = []
    for p, nw in ((0.01, 9), (0.05, 16)):
        algs += [_entry(f"D-NLMM p={p} mu={mu}", dif.d_nlmm(mu=mu, window_length=nw),
                        noise=cg(p)) for mu in FIG10_MU]
    return _config("fig10", NET10, signals(L=5, Q=5, noise=cg(0.01)), algs,
                   iterations=3000, theory=True)


def fig11() -> ExperimentConfig:
    """Theory versus simulation of D-SNLMM with a one-hot truth."""
    algs = [_entry("D-SNLMM", dif.d_snlmm(mu=0.2, beta=3e-4, upsilon=20))]
    return _config("fig11", NET10, signals(noise=cg(0.01), w_o=[0, 0, 0, 1, 0]), algs,
                   iterations=2000, theory=True, diagnostics_at=100)


def fig14() -> ExperimentConfig:
    """D-SNLMM against the proximal variants in alpha-stable noise."""
    nw, zeta = 16, 0.95
    algs = [
        _entry("D-SNLMM", dif.d_snlmm(mu=0.7, beta=8.6e-5, upsilon=20, window_length=nw,
                                      zeta=zeta)),
        _entry("prox-l1", dif.prox_l1(mu=0.7, beta=2e-4, window_length=nw, zeta=zeta)),
        _entry("prox-l0", dif.prox_l0(mu=0.7, beta=6e-5, upsilon=20, window_length=nw,
                                      zeta=zeta)),
    ]
    return _config("fig14", NET20, signals(Q=2, noise=dict(ALPHA_STABLE)), algs)


PRESETS = {
    "fig2": fig2, "fig3": fig3, "fig4": fig4, "fig5": fig5, "fig6a": fig6a, "fig6b": fig6b,
    "fig7": fig7, "fig8": fig8, "fig9": fig9, "fig10": fig10, "fig11": fig11, "fig14": fig14,
}


def preset(name: str) -> ExperimentConfig:
    """Configuration of a named figure experiment."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
