"""Score functions, adaptive M-estimate thresholds, zero attractors and prox maps.

Everything here is element-wise and vectorised: ``e`` may be a scalar or an
array holding one error per node (and per trial).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

KAPPA_99 = 2.576


# ---------------------------------------------------------------------------
# adaptive threshold

@dataclass
class ThresholdState:
    """Sliding window of squared errors and the running variance estimate.

    The state is batched: ``window`` has shape ``batch_shape + (N_w,)`` so a
    single object can serve every node of a network (and every trial).
    """
    window_length: int = 9
    zeta: float = 0.99
    kappa: float = KAPPA_99
    batch_shape: tuple = ()
    window: np.ndarray = field(default=None, repr=False)
    sigma_e_sq_hat: np.ndarray = field(default=None, repr=False)
    count: int = 0

    def __post_init__(self):
        if self.window_length < 1:
            raise ValueError("window length must be >= 1")
        if not 0 < self.zeta < 1:
            raise ValueError(f"forgetting factor must be in (0, 1), got {self.zeta}")
        self.batch_shape = tuple(self.batch_shape)
        if self.window is None:
            self.window = np.zeros(self.batch_shape + (self.window_length,))
        if self.sigma_e_sq_hat is None:
            self.sigma_e_sq_hat = np.zeros(self.batch_shape)

    @classmethod
    def from_history(cls, squared_errors, sigma_e_sq_hat: float, zeta: float = 0.99,
                     kappa: float = KAPPA_99, window_length: int | None = None):
        """Scalar state whose window already holds ``squared_errors`` (oldest first)."""
        sq = np.asarray(squared_errors, dtype=float)
        n_w = window_length or sq.size
        state = cls(n_w, zeta, kappa)
        for val in sq[-n_w:]:
            state._push(val)
        state.sigma_e_sq_hat = np.asarray(float(sigma_e_sq_hat))
        return state

    def _push(self, e_sq):
        self.window[..., self.count % self.window_length] = e_sq
        self.count += 1

    def median(self) -> np.ndarray:
        filled = min(self.count, self.window_length)
        return np.median(self.window[..., :filled], axis=-1)

    @property
    def threshold(self) -> np.ndarray:
        return self.kappa * np.sqrt(self.sigma_e_sq_hat)


def update_threshold(state: ThresholdState, e) -> np.ndarray:
    """Push ``e**2`` into the window, refresh the variance estimate, return xi.

    The forgetting factor is forced to zero on the very first call.  Mutates
    ``state`` in place.
    """
    first = state.count == 0
    state._push(np.square(e))
    zeta = 0.0 if first else state.zeta
    state.sigma_e_sq_hat = zeta * state.sigma_e_sq_hat + (1 - zeta) * state.median()
    return state.threshold


# ---------------------------------------------------------------------------
# score functions

@dataclass(frozen=True)
class Identity:
    """Plain squared-error score; gives (N)LMS."""

    adaptive = False


@dataclass(frozen=True)
class ModifiedHuber:
    """Identity below the threshold, zero above it.

    ``xi=None`` uses the adaptive threshold; a number fixes it.
    """
    xi: float | None = None

    @property
    def adaptive(self) -> bool:
        return self.xi is None


@dataclass(frozen=True)
class Sign:
    adaptive = False


@dataclass(frozen=True)
class LMP:
    p: float = 1.4

    def __post_init__(self):
        if not 1 <= self.p <= 2:
            raise ValueError(f"LMP order must be in [1, 2], got {self.p}")

    adaptive = False


@dataclass(frozen=True)
class LLAD:
    alpha: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("LLAD alpha must be positive")

    adaptive = False


@dataclass(frozen=True)
class Huber:
    """Huber score with clipping level ``b``; ``b=None`` uses the adaptive xi."""
    b: float | None = None

    @property
    def adaptive(self) -> bool:
        return self.b is None


@dataclass(frozen=True)
class Hampel:
    """Three-part redescending score with breakpoints xi, r1*xi, r2*xi."""
    r1: float = 1.5
    r2: float = 3.0

    def __post_init__(self):
        if not 1 <= self.r1 < self.r2:
            raise ValueError("Hampel breakpoints must satisfy 1 <= r1 < r2")

    adaptive = True


ScoreFunction = Union[Identity, ModifiedHuber, Sign, LMP, LLAD, Huber, Hampel]


def needs_threshold(kind: ScoreFunction) -> bool:
    return bool(getattr(kind, "adaptive", False))


def mh_score(e, xi):
    """Modified Huber score: ``e`` when ``|e| < xi``, else 0."""
    e = np.asarray(e, dtype=float)
    return np.where(np.abs(e) < xi, e, 0.0)


def huber_score(e, b):
    e = np.asarray(e, dtype=float)
    return np.where(np.abs(e) < b, e, b * np.sign(e))


def hampel_score(e, xi, r1=1.5, r2=3.0):
    e = np.asarray(e, dtype=float)
    a = np.abs(e)
    d1 = r1 * xi
    d2 = r2 * xi
    with np.errstate(invalid="ignore", divide="ignore"):
        ramp = xi * (d2 - a) / (d2 - d1)
    mag = np.where(a < xi, a, np.where(a < d1, xi, np.where(a < d2, ramp, 0.0)))
    return np.sign(e) * mag


def score(kind: ScoreFunction, e, xi=None):
    """Evaluate the score ``phi'(e)`` of ``kind``.

    ``xi`` is the adaptive threshold and is only read by adaptive variants.
    """
    e = np.asarray(e, dtype=float)
    if isinstance(kind, Identity):
        return e
    if isinstance(kind, ModifiedHuber):
        return mh_score(e, kind.xi if kind.xi is not None else xi)
    if isinstance(kind, Sign):
        return np.sign(e)
    if isinstance(kind, LMP):
        return np.abs(e) ** (kind.p - 1) * np.sign(e)
    if isinstance(kind, LLAD):
        a = kind.alpha * np.abs(e)
        return a / (1 + a) * np.sign(e)
    if isinstance(kind, Huber):
        return huber_score(e, kind.b if kind.b is not None else xi)
    if isinstance(kind, Hampel):
        return hampel_score(e, xi, kind.r1, kind.r2)
    raise TypeError(f"unknown score function {kind!r}")


# ---------------------------------------------------------------------------
# zero attractors (gradients of sparsity penalties)

@dataclass(frozen=True)
class L1:
    pass


@dataclass(frozen=True)
class ReweightedL1:
    epsilon: float = 0.01

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class ExpL0:
    upsilon: float = 20.0
    taylor: bool = True

    def __post_init__(self):
        if self.upsilon <= 0:
            raise ValueError("upsilon must be positive")


@dataclass(frozen=True)
class PowerLp:
    p: float = 0.5
    epsilon: float = 0.01


@dataclass(frozen=True)
class GaussianL0:
    upsilon: float = 20.0


@dataclass(frozen=True)
class PolynomialL0:
    upsilon: float = 5.0


@dataclass(frozen=True)
class SoftThreshold:
    """Proximal map of the l1 penalty."""


@dataclass(frozen=True)
class WeightedSoftThreshold:
    """Proximal map of the exponential l0 surrogate (Taylor-weighted)."""
    upsilon: float = 20.0

    def __post_init__(self):
        if self.upsilon <= 0:
            raise ValueError("upsilon must be positive")


AttractorConfig = Union[L1, ReweightedL1, ExpL0, PowerLp, GaussianL0, PolynomialL0,
                        SoftThreshold, WeightedSoftThreshold]
PROXIMAL_KINDS = (SoftThreshold, WeightedSoftThreshold)


def exp_l0_taylor(w, upsilon):
    """Low-complexity exponential l0 attractor; zero outside ``[-1/v, 1/v]``."""
    w = np.asarray(w, dtype=float)
    a = np.abs(w)
    return np.where(a <= 1.0 / upsilon, np.sign(w) * upsilon - upsilon ** 2 * w, 0.0)


def zero_attractor(cfg: AttractorConfig, w):
    """Element-wise attractor ``f(w)``; every variant returns 0 at ``w = 0``."""
    w = np.asarray(w, dtype=float)
    s = np.sign(w)
    a = np.abs(w)
    if isinstance(cfg, L1):
        return s
    if isinstance(cfg, ReweightedL1):
        return s / (cfg.epsilon + a)
    if isinstance(cfg, ExpL0):
        if cfg.taylor:
            return exp_l0_taylor(w, cfg.upsilon)
        return cfg.upsilon * s * np.exp(-cfg.upsilon * a)
    if isinstance(cfg, PowerLp):
        return cfg.p * s / (cfg.epsilon + a ** (1 - cfg.p))
    if isinstance(cfg, GaussianL0):
        return cfg.upsilon ** 2 * w * np.exp(-0.5 * cfg.upsilon ** 2 * w ** 2)
    if isinstance(cfg, PolynomialL0):
        v = cfg.upsilon
        inside = a <= 1.0 / (v - 1)
        with np.errstate(invalid="ignore"):
            val = s * (1 - (v - 1) * a) / (1 + a) ** (v + 1)
        return np.where(inside, val, 0.0)
    raise TypeError(f"{cfg!r} is not a gradient-type attractor")


# ---------------------------------------------------------------------------
# proximal operators

def soft_threshold(v, z):
    """``max(|v| - z, 0) * sign(v)``."""
    if np.any(np.asarray(z) < 0):
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.maximum(np.abs(v) - z, 0.0) * np.sign(v)


def taylor_weight(v, upsilon):
    """Weight ``upsilon * (1 - upsilon |v|)`` on ``[-1/v, 1/v]``, zero elsewhere."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    return np.where(a <= 1.0 / upsilon, upsilon - upsilon ** 2 * a, 0.0)


def weighted_soft_threshold(v, mu_beta, upsilon, weight=None):
    """Soft threshold with per-entry level ``mu_beta * f(v)``.

    ``weight`` overrides the Taylor weight (``weight=1`` recovers the plain
    soft threshold with ``z = mu_beta``).
    """
    if np.any(np.asarray(mu_beta) < 0):
        raise ValueError("mu * beta must be nonnegative")
    v = np.asarray(v, dtype=float)
    f = taylor_weight(v, upsilon) if weight is None else weight
    return np.maximum(np.abs(v) - mu_beta * f, 0.0) * np.sign(v)


def prox(cfg: AttractorConfig, v, mu_beta):
    if isinstance(cfg, SoftThreshold):
        return soft_threshold(v, mu_beta)
    if isinstance(cfg, WeightedSoftThreshold):
        return weighted_soft_threshold(v, mu_beta, cfg.upsilon)
    raise TypeError(f"{cfg!r} has no proximal map")


# ---------------------------------------------------------------------------
# config (de)serialisation

SCORE_KINDS = {
    "identity": Identity, "mh": ModifiedHuber, "sign": Sign, "lmp": LMP,
    "llad": LLAD, "huber": Huber, "hampel": Hampel,
}
ATTRACTOR_KINDS = {
    "l1": L1, "rl1": ReweightedL1, "exp-l0": ExpL0, "power-lp": PowerLp,
    "gauss-l0": GaussianL0, "poly-l0": PolynomialL0,
    "soft-threshold": SoftThreshold, "weighted-soft-threshold": WeightedSoftThreshold,
}


def tagged_to_dict(obj) -> dict:
    for registry in (SCORE_KINDS, ATTRACTOR_KINDS):
        for name, cls in registry.items():
            if type(obj) is cls:
                return {"kind": name, **asdict(obj)}
    raise TypeError(f"cannot serialise {obj!r}")


def tagged_from_dict(data: dict, registry: dict):
    data = dict(data)
    kind = data.pop("kind")
    try:
        cls = registry[kind]
    except KeyError:
        raise ValueError(f"unknown kind {kind!r}; expected one of {sorted(registry)}") from None
    return cls(**data)
