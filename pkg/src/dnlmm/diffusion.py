"""Adapt-then-combine engine for the diffusion M-estimate family.

State arrays carry arbitrary leading batch dimensions and end in
``(..., N, L)``: one row per node, optionally stacked over Monte Carlo
trials.  Running many trials as one batch shares the per-iteration Python
overhead, which dominates for the network sizes of interest.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import robust_cost as rc
from .network import CombinationMatrix
from .signals import SampleStream, generate_streams

DIVERGENCE_NORM = 1e12
DEFAULT_EPS_NORM = 1e-8


@dataclass(frozen=True)
class AlgorithmConfig:
    """One member of the family: score, normalisation, sparsity handling.

    ``mu`` is a common step size or a per-node sequence.  With
    ``proximal=True`` the attractor must be a proximal selector and is
    applied after the combination step instead of inside the adaptation.
    """
    score: rc.ScoreFunction = field(default_factory=rc.ModifiedHuber)
    mu: float | tuple = 0.7
    normalized: bool = True
    attractor: rc.AttractorConfig | None = None
    beta: float = 0.0
    proximal: bool = False
    cooperative: bool = True
    eps_norm: float = DEFAULT_EPS_NORM
    window_length: int = 9
    zeta: float = 0.99
    kappa: float = rc.KAPPA_99

    def __post_init__(self):
        if isinstance(self.mu, (list, np.ndarray)):
            object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        if np.any(np.asarray(self.mu) <= 0):
            raise ValueError("step sizes must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.eps_norm < 0:
            raise ValueError("eps_norm must be nonnegative")
        is_prox = isinstance(self.attractor, rc.PROXIMAL_KINDS)
        if self.proximal and not is_prox:
            raise ValueError("proximal variants need a SoftThreshold or WeightedSoftThreshold attractor")
        if not self.proximal and is_prox:
            raise ValueError("proximal attractor selected without proximal=True")

    @property
    def uses_attractor(self) -> bool:
        return self.attractor is not None and self.beta > 0

    @property
    def uses_threshold(self) -> bool:
        return rc.needs_threshold(self.score)

    def step_sizes(self, node_count: int) -> np.ndarray:
        mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (node_count,))
        return mu.copy()

    def new_threshold(self, batch_shape) -> rc.ThresholdState | None:
        if not self.uses_threshold:
            return None
        return rc.ThresholdState(self.window_length, self.zeta, self.kappa, batch_shape)

    def to_dict(self) -> dict:
        return {
            "score": rc.tagged_to_dict(self.score),
            "mu": list(self.mu) if isinstance(self.mu, tuple) else self.mu,
            "normalized": self.normalized,
            "attractor": None if self.attractor is None else rc.tagged_to_dict(self.attractor),
            "beta": self.beta,
            "proximal": self.proximal,
            "cooperative": self.cooperative,
            "eps_norm": self.eps_norm,
            "window_length": self.window_length,
            "zeta": self.zeta,
            "kappa": self.kappa,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AlgorithmConfig":
        data = dict(data)
        data.pop("label", None)
        if "score" in data:
            data["score"] = rc.tagged_from_dict(data["score"], rc.SCORE_KINDS)
        if data.get("attractor") is not None:
            data["attractor"] = rc.tagged_from_dict(data["attractor"], rc.ATTRACTOR_KINDS)
        if isinstance(data.get("mu"), list):
            data["mu"] = tuple(data["mu"])
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# named family members

def dnlms(mu=0.7, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.Identity(), mu=mu, **kw)


def dlms(mu=0.01, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.Identity(), mu=mu, normalized=False, **kw)


def d_nlmm(mu=0.7, window_length=9, zeta=0.99, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.ModifiedHuber(), mu=mu, window_length=window_length,
                           zeta=zeta, **kw)


def d_snlmm(mu=0.7, beta=8.6e-5, upsilon=20.0, window_length=9, zeta=0.99, **kw):
    return AlgorithmConfig(score=rc.ModifiedHuber(), mu=mu, attractor=rc.ExpL0(upsilon),
                           beta=beta, window_length=window_length, zeta=zeta, **kw)


def d_lmm(mu=0.01, window_length=9, zeta=0.99, **kw) -> AlgorithmConfig:
    return d_nlmm(mu, window_length, zeta, normalized=False, **kw)


def d_slmm(mu=0.01, beta=1e-4, upsilon=20.0, window_length=9, zeta=0.99, **kw):
    return d_snlmm(mu, beta, upsilon, window_length, zeta, normalized=False, **kw)


def l0_dnlms(mu=0.7, rho=6e-5, upsilon=20.0, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.Identity(), mu=mu, attractor=rc.ExpL0(upsilon),
                           beta=rho, **kw)


def dse_lms(mu=0.006, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.Sign(), mu=mu, normalized=False, **kw)


def dlmp(mu=0.01, p=1.4, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.LMP(p), mu=mu, normalized=False, **kw)


def dllad(mu=0.042, alpha=0.5, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.LLAD(alpha), mu=mu, normalized=False, **kw)


def dnhuber(mu=0.7, b=0.4, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.Huber(b), mu=mu, **kw)


def prox_l1(mu=0.7, beta=2e-4, window_length=9, zeta=0.99, **kw) -> AlgorithmConfig:
    return AlgorithmConfig(score=rc.ModifiedHuber(), mu=mu, attractor=rc.SoftThreshold(),
                           beta=beta, proximal=True, window_length=window_length,
                           zeta=zeta, **kw)


def prox_l0(mu=0.7, beta=6e-5, upsilon=20.0, window_length=9, zeta=0.99, **kw):
    return AlgorithmConfig(score=rc.ModifiedHuber(), mu=mu,
                           attractor=rc.WeightedSoftThreshold(upsilon), beta=beta,
                           proximal=True, window_length=window_length, zeta=zeta, **kw)


# ---------------------------------------------------------------------------
# single steps

def adapt(w, u, d, cfg: AlgorithmConfig, mu=None, threshold: rc.ThresholdState | None = None):
    """Adaptation step; returns the intermediate estimate ``psi``.

    ``w`` and ``u`` have shape ``(..., L)`` and ``d`` shape ``(...)``;
    ``mu`` broadcasts against ``d`` (defaults to ``cfg.mu``).  The threshold
    state, when the score needs one, is advanced in place.  For proximal
    configurations only the forward (gradient) part is applied here.
    """
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    mu = np.asarray(cfg.mu if mu is None else mu, dtype=float)
    e = d - np.sum(u * w, axis=-1)
    xi = None
    if cfg.uses_threshold:
        if threshold is None:
            raise ValueError("this score function needs a ThresholdState")
        xi = rc.update_threshold(threshold, e)
    phi = rc.score(cfg.score, e, xi)
    gain = mu * phi
    if cfg.normalized:
        gain = gain / (np.sum(u * u, axis=-1) + cfg.eps_norm)
    psi = w + gain[..., None] * u
    if cfg.uses_attractor and not cfg.proximal:
        psi = psi - (mu * cfg.beta)[..., None] * rc.zero_attractor(cfg.attractor, w)
    return psi


def combine(psi, C, cooperative: bool = True):
    """``w_k = sum_m c_{m,k} psi_m`` over the node axis (second to last)."""
    psi = np.asarray(psi, dtype=float)
    if not cooperative:
        return psi.copy()
    c = np.asarray(getattr(C, "weights", C), dtype=float)
    return np.matmul(c.T, psi)


def proximal_step(Psi, cfg: AlgorithmConfig, mu=None):
    """Backward step applied to the aggregated estimates ``Psi`` (``(..., N, L)``)."""
    if not cfg.uses_attractor:
        return Psi
    mu = np.asarray(cfg.mu if mu is None else mu, dtype=float)
    mu_beta = (mu * cfg.beta)[..., None]
    return rc.prox(cfg.attractor, Psi, mu_beta)


def network_step(w, u, d, cfg: AlgorithmConfig, C, mu=None, threshold=None):
    """One full adapt/combine iteration for every node."""
    psi = adapt(w, u, d, cfg, mu, threshold)
    w_next = combine(psi, C, cfg.cooperative)
    if cfg.proximal:
        w_next = proximal_step(w_next, cfg, mu)
    return w_next


# ---------------------------------------------------------------------------
# trials

@dataclass
class Trajectory:
    """Squared deviations of one trial.

    ``squared_deviation[i, k]`` is ``||w_o - w_{k,i+1}||^2``, i.e. the
    deviation after ``i + 1`` iterations.  Rows from the divergence point
    on are ``inf``.
    """
    squared_deviation: np.ndarray
    final_estimate: np.ndarray
    diverged_at: int | None = None
    snapshots: dict = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def iterations(self) -> int:
        return self.squared_deviation.shape[0]

    def network_msd(self) -> np.ndarray:
        return self.squared_deviation.mean(axis=1)

    def to_csv(self, path) -> None:
        T, N = self.squared_deviation.shape
        it, node = np.meshgrid(np.arange(T), np.arange(N), indexing="ij")
        rows = np.column_stack([it.ravel(), node.ravel(), self.squared_deviation.ravel()])
        np.savetxt(path, rows, delimiter=",", header="iteration,node,squared_deviation",
                   comments="", fmt=["%d", "%d", "%.17g"])

    def summary(self, cfg: AlgorithmConfig | None = None, steady_window: int = 100) -> dict:
        tail = self.network_msd()[-steady_window:]
        final = float(np.mean(tail))
        return {
            "config_digest": None if cfg is None else cfg.digest(),
            "diverged": self.diverged,
            "diverged_at": self.diverged_at,
            "final_msd_db": to_db(final),
        }


def to_db(x, floor: float = -320.0):
    with np.errstate(divide="ignore"):
        out = 10 * np.log10(np.asarray(x, dtype=float))
    out = np.maximum(out, floor)
    return float(out) if np.ndim(out) == 0 else out


def stack_streams(streams) -> tuple[np.ndarray, np.ndarray]:
    inputs = np.stack([s.inputs for s in streams])
    desired = np.stack([s.desired for s in streams])
    return inputs, desired


def run_trials(C, w_o, cfg: AlgorithmConfig, streams, snapshot_at=(),
               iterations: int | None = None) -> list[Trajectory]:
    """Run every stream in ``streams`` as one vectorised batch of trials.

    All estimates start at zero.  A trial whose estimate becomes non-finite
    or exceeds ``DIVERGENCE_NORM`` in norm is flagged and its remaining
    deviations are set to ``inf``; the other trials are unaffected.
    """
    w_o = np.asarray(getattr(w_o, "w_o", w_o), dtype=float)
    inputs, desired = stack_streams(streams)
    R, N, T = desired.shape
    L = w_o.shape[0]
    if inputs.shape[2] != T + L - 1:
        raise ValueError("stream input length does not match the parameter length")
    if iterations is not None:
        T = min(T, iterations)
    c = np.asarray(getattr(C, "weights", C), dtype=float)
    if c.shape != (N, N):
        raise ValueError(f"combination matrix {c.shape} does not match {N} nodes")
    mu = cfg.step_sizes(N)
    threshold = cfg.new_threshold((R, N))
    snapshot_at = set(snapshot_at)

    w = np.zeros((R, N, L))
    sq_dev = np.empty((R, T, N))
    diverged_at = np.full(R, -1)
    alive = np.ones(R, dtype=bool)
    snaps = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(T):
            u = inputs[:, :, i:i + L][..., ::-1]
            w = network_step(w, u, desired[:, :, i], cfg, c, mu, threshold)
            dev = w_o - w
            sq_dev[:, i, :] = np.sum(dev * dev, axis=-1)
            norms = np.sum(w * w, axis=-1).max(axis=-1)
            bad = alive & ~(norms <= DIVERGENCE_NORM ** 2)
            if bad.any():
                diverged_at[bad] = i
                alive &= ~bad
                w[bad] = 0.0
                if threshold is not None:
                    threshold.sigma_e_sq_hat[bad] = 0.0
            if not alive.all():
                w[~alive] = 0.0
            if i in snapshot_at:
                snaps[i] = w.copy()
    out = []
    for r in range(R):
        sd = sq_dev[r]
        t_div = int(diverged_at[r])
        if t_div >= 0:
            sd[t_div:] = np.inf
        out.append(Trajectory(sd, w[r].copy(), None if t_div < 0 else t_div,
                              {k: v[r] for k, v in snaps.items()}))
    return out


def run_trial(C, ground_truth, profiles, cfg: AlgorithmConfig, iterations: int,
              seed=None, stream: SampleStream | None = None, snapshot_at=()) -> Trajectory:
    """Generate one trial's data from ``seed`` (unless ``stream`` is given) and run it."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if stream is None:
        stream = generate_streams(profiles, ground_truth, iterations, seed)
    return run_trials(C, ground_truth, cfg, [stream], snapshot_at, iterations)[0]


def non_cooperative(cfg: AlgorithmConfig) -> AlgorithmConfig:
    return replace(cfg, cooperative=False)


def identity_combination(node_count: int) -> CombinationMatrix:
    return CombinationMatrix(np.eye(node_count))
