"""Ground truth, AR(1) regressors and impulsive noise generators.

All generators accept an ``int``, a :class:`numpy.random.SeedSequence` or a
:class:`numpy.random.Generator` as ``seed``.  Per-node streams are spawned
from one seed sequence so that trials are reproducible and nodes are
independent.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.signal import lfilter

SeedLike = Union[int, None, np.random.SeedSequence, np.random.Generator]


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# noise models

@dataclass(frozen=True)
class GaussianNoise:
    sigma_theta_sq: float

    @property
    def variance(self) -> float:
        return self.sigma_theta_sq


@dataclass(frozen=True)
class ContaminatedGaussian:
    """Gaussian background plus Bernoulli-gated impulses.

    ``impulse_shape`` selects a Gaussian or a variance-matched Laplacian
    impulse amplitude.
    """
    p: float
    sigma_theta_sq: float
    sigma_g_sq: float
    impulse_shape: str = "gaussian"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"impulse probability must be in [0, 1], got {self.p}")
        if self.sigma_theta_sq <= 0 or self.sigma_g_sq < 0:
            raise ValueError("noise variances must be positive")
        if self.impulse_shape not in ("gaussian", "laplacian"):
            raise ValueError(f"unknown impulse shape {self.impulse_shape!r}")
        if self.sigma_g_sq < 10 * self.sigma_theta_sq:
            warnings.warn("impulse variance is less than 10x the background variance",
                          stacklevel=2)

    @property
    def sigma_s_sq(self) -> float:
        return self.sigma_g_sq + self.sigma_theta_sq

    @property
    def variance(self) -> float:
        return self.p * self.sigma_s_sq + (1 - self.p) * self.sigma_theta_sq


@dataclass(frozen=True)
class AlphaStable:
    """Symmetric alpha-stable noise with characteristic function exp(-gamma|t|^alpha)."""
    alpha: float
    gamma: float
    sigma_theta_sq: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 2:
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def variance(self) -> float:
        if self.alpha == 2:
            return 2 * self.gamma + self.sigma_theta_sq
        return np.inf


NoiseModel = Union[GaussianNoise, ContaminatedGaussian, AlphaStable]


@dataclass(frozen=True)
class NodeSignalProfile:
    tau: float
    sigma_eps_sq: float
    noise: NoiseModel

    def __post_init__(self):
        if not abs(self.tau) < 1:
            raise ValueError(f"AR(1) coefficient must satisfy |tau| < 1, got {self.tau}")
        if self.sigma_eps_sq <= 0:
            raise ValueError("innovation variance must be positive")

    @property
    def input_variance(self) -> float:
        return self.sigma_eps_sq / (1 - self.tau ** 2)


@dataclass(frozen=True)
class GroundTruth:
    w_o: np.ndarray
    sparsity_Q: int

    @property
    def length(self) -> int:
        return self.w_o.shape[0]


# ---------------------------------------------------------------------------
# generators

def generate_ground_truth(L: int, Q: int, seed: SeedLike = None) -> GroundTruth:
    """Unit-norm vector with ``Q`` Gaussian entries at random positions."""
    if not 1 <= Q <= L:
        raise ValueError(f"need 1 <= Q <= L, got Q={Q}, L={L}")
    rng = as_generator(seed)
    w = np.zeros(L)
    support = rng.choice(L, size=Q, replace=False)
    vals = rng.standard_normal(Q)
    while np.any(vals == 0):
        vals = rng.standard_normal(Q)
    w[support] = vals
    w /= np.linalg.norm(w)
    return GroundTruth(w, Q)


def ground_truth_from(w_o) -> GroundTruth:
    w = np.asarray(w_o, dtype=float)
    return GroundTruth(w, int(np.count_nonzero(w)))


def ar1_stream(profile: NodeSignalProfile, length: int, seed: SeedLike = None) -> np.ndarray:
    """Scalar AR(1) sequence started from its stationary distribution."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = as_generator(seed)
    eps = rng.standard_normal(length) * np.sqrt(profile.sigma_eps_sq)
    eps[0] = rng.standard_normal() * np.sqrt(profile.input_variance)
    if profile.tau == 0:
        return eps
    return lfilter([1.0], [1.0, -profile.tau], eps)


def sample_cg_noise(model: ContaminatedGaussian, length: int, seed: SeedLike = None):
    """Return ``(noise, impulse_flags)`` for contaminated-Gaussian noise."""
    rng = as_generator(seed)
    theta = rng.standard_normal(length) * np.sqrt(model.sigma_theta_sq)
    flags = rng.random(length) < model.p
    if model.impulse_shape == "gaussian":
        g = rng.standard_normal(length) * np.sqrt(model.sigma_g_sq)
    else:
        g = rng.laplace(0.0, np.sqrt(model.sigma_g_sq / 2), size=length)
    return theta + flags * g, flags


def sample_alpha_stable(alpha: float, gamma: float, length: int,
                        seed: SeedLike = None) -> np.ndarray:
    """Symmetric alpha-stable draws via the Chambers-Mallows-Stuck transform."""
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must be in (0, 2], got {alpha}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    rng = as_generator(seed)
    V = rng.uniform(-np.pi / 2, np.pi / 2, size=length)
    W = rng.standard_exponential(length)
    if alpha == 1:
        X = np.tan(V)
    else:
        X = (np.sin(alpha * V) / np.cos(V) ** (1 / alpha)
             * (np.cos((1 - alpha) * V) / W) ** ((1 - alpha) / alpha))
    return gamma ** (1 / alpha) * X


def sample_noise(model: NoiseModel, length: int, seed: SeedLike = None):
    """Dispatch on the noise model; always returns ``(noise, impulse_flags)``."""
    rng = as_generator(seed)
    if isinstance(model, ContaminatedGaussian):
        return sample_cg_noise(model, length, rng)
    if isinstance(model, GaussianNoise):
        return rng.standard_normal(length) * np.sqrt(model.sigma_theta_sq), np.zeros(length, bool)
    if isinstance(model, AlphaStable):
        v = sample_alpha_stable(model.alpha, model.gamma, length, rng)
        if model.sigma_theta_sq > 0:
            v = v + rng.standard_normal(length) * np.sqrt(model.sigma_theta_sq)
        return v, np.zeros(length, bool)
    raise TypeError(f"unsupported noise model {model!r}")


def regressor_windows(u: np.ndarray, L: int) -> np.ndarray:
    """Tapped-delay windows ``[u(i), ..., u(i-L+1)]`` with zero pre-history."""
    padded = np.concatenate([np.zeros(L - 1), u])
    win = np.lib.stride_tricks.sliding_window_view(padded, L)
    return win[:, ::-1]


def synthesize_output(u, w_o, v):
    """Desired output of the linear model ``d = u^T w_o + v``."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(getattr(w_o, "w_o", w_o), dtype=float)
    if u.shape[-1] != w.shape[-1]:
        raise ValueError(f"regressor length {u.shape[-1]} != parameter length {w.shape[-1]}")
    return u @ w + v


@dataclass
class SampleStream:
    """Data seen by all nodes during one trial.

    ``inputs`` holds the scalar input sequences with ``L - 1`` leading zeros,
    so the regressor of node ``k`` at time ``i`` is
    ``inputs[k, i:i+L][::-1]``.
    """
    inputs: np.ndarray      # (N, T + L - 1)
    desired: np.ndarray     # (N, T)
    noise: np.ndarray       # (N, T)
    impulses: np.ndarray    # (N, T) bool

    @property
    def node_count(self) -> int:
        return self.desired.shape[0]

    @property
    def length(self) -> int:
        return self.desired.shape[1]

    @property
    def taps(self) -> int:
        return self.inputs.shape[1] - self.length + 1

    def regressors(self, k: int) -> np.ndarray:
        L = self.taps
        return np.lib.stride_tricks.sliding_window_view(self.inputs[k], L)[:, ::-1]

    def to_csv(self, path) -> None:
        """Dump ``(node, iteration, u0, d, v, impulse)`` rows for debugging."""
        N, T = self.desired.shape
        L = self.taps
        node, it = np.meshgrid(np.arange(N), np.arange(T), indexing="ij")
        rows = np.column_stack([node.ravel(), it.ravel(), self.inputs[:, L - 1:].ravel(),
                                self.desired.ravel(), self.noise.ravel(),
                                self.impulses.ravel().astype(int)])
        np.savetxt(path, rows, delimiter=",", header="node,iteration,u,d,v,impulse",
                   comments="", fmt=["%d", "%d", "%.17g", "%.17g", "%.17g", "%d"])


def generate_streams(profiles, w_o, length: int, seed: SeedLike = None) -> SampleStream:
    """Draw one trial of regressors, noise and desired outputs for every node.

    Node ``k`` uses two independent child streams of ``seed`` (input and
    noise), so changing one node's profile never perturbs another node.
    """
    w = np.asarray(getattr(w_o, "w_o", w_o), dtype=float)
    L = w.shape[0]
    N = len(profiles)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(N)
    inputs = np.zeros((N, length + L - 1))
    desired = np.empty((N, length))
    noise = np.empty((N, length))
    impulses = np.empty((N, length), dtype=bool)
    for k, (prof, child) in enumerate(zip(profiles, children)):
        s_in, s_noise = child.spawn(2)
        inputs[k, L - 1:] = ar1_stream(prof, length, s_in)
        noise[k], impulses[k] = sample_noise(prof.noise, length, s_noise)
        win = np.lib.stride_tricks.sliding_window_view(inputs[k], L)[:, ::-1]
        desired[k] = win @ w + noise[k]
    return SampleStream(inputs, desired, noise, impulses)


def random_profiles(node_count: int, noise_factory, seed: SeedLike = None,
                    sigma_eps_sq=(0.5, 1.5), tau=(0.2, 0.8),
                    sigma_theta_sq=(0.01, 0.1), white: bool = False) -> list[NodeSignalProfile]:
    """Heterogeneous per-node profiles drawn uniformly from the given ranges.

    ``noise_factory(sigma_theta_sq)`` builds the node's noise model from its
    background variance.  ``white=True`` forces ``tau = 0``.
    """
    rng = as_generator(seed)
    s_eps = rng.uniform(*sigma_eps_sq, size=node_count)
    taus = rng.uniform(*tau, size=node_count)
    s_th = rng.uniform(*sigma_theta_sq, size=node_count)
    if white:
        taus = np.zeros(node_count)
    return [NodeSignalProfile(float(t), float(se), noise_factory(float(st)))
            for t, se, st in zip(taus, s_eps, s_th)]
