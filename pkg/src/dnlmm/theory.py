"""Mean and mean-square models of the diffusion M-estimate algorithms.

The network error covariance ``W`` (``NL x NL``) is propagated in matrix
form.  The Kronecker/vec form, with its ``N^2 L^2`` transition matrix, is
only materialised on request (:func:`dense_transition_matrix`) because it
is quartic in ``NL``; the matrix-free operator gives identical results.

Index conventions: node ``k``, coefficient ``l`` sits at flat index
``k * L + l``; ``C[m, k]`` is the weight node ``k`` assigns to node ``m``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import block_diag
from scipy.sparse.linalg import LinearOperator, eigs, gmres
from scipy.special import erf, ndtr

from .robust_cost import KAPPA_99, ExpL0, Identity, ModifiedHuber, exp_l0_taylor
from .signals import AlphaStable, ContaminatedGaussian, GaussianNoise, as_generator

MAX_NL = 128
SIGMA_FLOOR = 1e-12
FIXED_POINT_TOL = 1e-12
FIXED_POINT_CAP = 100_000


class CapabilityError(RuntimeError):
    """The model is too large to evaluate; use simulation only."""


class InstabilityError(RuntimeError):
    """The mean-square recursion has spectral radius >= 1."""


# ---------------------------------------------------------------------------
# regressor statistics

@dataclass
class RegressorMoments:
    """Per-node regressor statistics used by the models.

    ``EA[k] = E{u u^T / ||u||^2}``, ``EAA[k] = E{A_k kron A_k}``,
    ``B[k] = sigma_theta_k^2 E{u u^T / ||u||^4}``, ``R[k] = E{u u^T}``.
    For the non-normalised algorithms use :meth:`unnormalized`.
    """
    EA: np.ndarray
    EAA: np.ndarray
    B: np.ndarray
    R: np.ndarray
    inv_energy: np.ndarray
    normalized: bool = True

    @property
    def node_count(self) -> int:
        return self.EA.shape[0]

    @property
    def taps(self) -> int:
        return self.EA.shape[1]

    def EA_big(self) -> np.ndarray:
        return block_diag(*self.EA)

    def B_big(self) -> np.ndarray:
        return block_diag(*self.B)

    def R_big(self) -> np.ndarray:
        return block_diag(*self.R)

    def apply_kron(self, W: np.ndarray) -> np.ndarray:
        """``E{A W A}`` for the block-diagonal ``A``; equals ``vec^-1(E{A kron A} vec W)``."""
        N, L = self.node_count, self.taps
        EA = self.EA_big()
        out = EA @ W @ EA
        for k in range(N):
            s = slice(k * L, (k + 1) * L)
            blk = W[s, s].reshape(-1, order="F")
            out[s, s] = (self.EAA[k] @ blk).reshape(L, L, order="F")
        return out

    def kron_matrix(self) -> np.ndarray:
        """Dense ``E{A kron A}`` of size ``N^2 L^2``, for small models and checks."""
        N, L = self.node_count, self.taps
        NL = N * L
        # big[j, i, q, p] = E{A[j, q] A[i, p]}; row index j*NL + i, column q*NL + p
        big = np.zeros((NL, NL, NL, NL))
        for k in range(N):
            sk = slice(k * L, (k + 1) * L)
            for m in range(N):
                sm = slice(m * L, (m + 1) * L)
                if k == m:
                    blk = self.EAA[k].reshape(L, L, L, L)  # [j, i, q, p] within the node
                else:
                    blk = np.einsum("jq,ip->jiqp", self.EA[m], self.EA[k])
                big[sm, sk, sm, sk] = blk
        return big.reshape(NL * NL, NL * NL)

    def unnormalized(self, sigma_theta_sq) -> "RegressorMoments":
        """Substitute raw covariances for the non-normalised algorithms."""
        s2 = np.asarray(sigma_theta_sq, dtype=float)
        EAA = np.stack([np.kron(r, r) for r in self.R])
        return RegressorMoments(self.R.copy(), EAA, s2[:, None, None] * self.R,
                                self.R.copy(), self.inv_energy.copy(), normalized=False)


def _stationary_windows(tau, sigma_eps_sq, L, n, rng):
    var = sigma_eps_sq / (1 - tau ** 2)
    u = np.empty((n, L))
    u[:, 0] = rng.standard_normal(n) * np.sqrt(var)
    for j in range(1, L):
        u[:, j] = tau * u[:, j - 1] + rng.standard_normal(n) * np.sqrt(sigma_eps_sq)
    return u[:, ::-1]


def estimate_moments(profiles, L: int, samples: int = 200_000, seed=None,
                     chunk: int = 50_000) -> RegressorMoments:
    """Monte Carlo regressor moments from freshly drawn stationary windows.

    ``E{A kron A}`` is accumulated from the same samples as ``E{A}``.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    rng = as_generator(seed)
    N = len(profiles)
    EA = np.zeros((N, L, L))
    EAA = np.zeros((N, L * L, L * L))
    B = np.zeros((N, L, L))
    R = np.zeros((N, L, L))
    inv_e = np.zeros(N)
    for k, prof in enumerate(profiles):
        done = 0
        while done < samples:
            n = min(chunk, samples - done)
            u = _stationary_windows(prof.tau, prof.sigma_eps_sq, L, n, rng)
            energy = np.sum(u * u, axis=1)
            a = u / np.sqrt(energy)[:, None]
            aa = (a[:, :, None] * a[:, None, :]).reshape(n, L * L)
            EA[k] += a.T @ a
            EAA[k] += aa.T @ aa
            b = a / np.sqrt(energy)[:, None]
            B[k] += b.T @ b
            R[k] += u.T @ u
            inv_e[k] += np.sum(1.0 / energy)
            done += n
        sig = background_variance(prof.noise)
        EA[k] /= samples
        EAA[k] /= samples
        B[k] *= sig / samples
        R[k] /= samples
        inv_e[k] /= samples
    return RegressorMoments(EA, EAA, B, R, inv_e)


def background_variance(noise) -> float:
    if isinstance(noise, (GaussianNoise, ContaminatedGaussian)):
        return noise.sigma_theta_sq
    if isinstance(noise, AlphaStable):
        raise CapabilityError("no analytical model for alpha-stable noise; simulate instead")
    raise TypeError(f"unsupported noise model {noise!r}")


def noise_parameters(noise) -> tuple[float, float, float]:
    """``(p, sigma_theta^2, sigma_s^2)`` of a Gaussian or contaminated-Gaussian model."""
    if isinstance(noise, ContaminatedGaussian):
        return noise.p, noise.sigma_theta_sq, noise.sigma_s_sq
    if isinstance(noise, GaussianNoise):
        return 0.0, noise.sigma_theta_sq, noise.sigma_theta_sq
    background_variance(noise)
    raise TypeError(f"unsupported noise model {noise!r}")


# ---------------------------------------------------------------------------
# update probability

def update_probability(p, sigma_es, sigma_etheta, kappa=KAPPA_99):
    """Probability that the error falls under the threshold ``kappa * sigma_etheta``."""
    p = np.asarray(p, dtype=float)
    xi = kappa * np.asarray(sigma_etheta, dtype=float)
    with np.errstate(divide="ignore"):
        impulsive = erf(xi / (np.sqrt(2) * np.asarray(sigma_es, dtype=float)))
    return p * impulsive + (1 - p) * erf(xi / (np.sqrt(2) * sigma_etheta))


def steady_update_probability(p, sigma_theta, sigma_s, kappa=KAPPA_99):
    """Steady-state update probability, neglecting the excess error."""
    p = np.asarray(p, dtype=float)
    return (p * erf(kappa * np.asarray(sigma_theta) / (np.sqrt(2) * np.asarray(sigma_s)))
            + (1 - p) * erf(kappa / np.sqrt(2)))


# ---------------------------------------------------------------------------
# attractor moments under a Gaussian coefficient

@dataclass
class MomentTriple:
    Ef: np.ndarray
    Exf: np.ndarray
    Eff: np.ndarray


def _gauss_pdf(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_TAIL_START = 5.0
_NARROW = 12.0


def _weighted_sums(g, upper, lower):
    return (g.sum(axis=1), (g * upper).sum(axis=1), (g * upper * upper).sum(axis=1),
            (g * upper * lower).sum(axis=1))


def _standard_partial_moments(a, b):
    """``int (b-z)^n phi(z) dz`` for n = 0, 1, 2 and ``int (z-a)(b-z) phi(z) dz`` over ``(a, b)``.

    Closed forms lose relative accuracy on narrow intervals and once the
    whole interval sits deep in one tail.  Narrow intervals use
    Gauss-Legendre directly; tail intervals use it in the offset ``t`` from
    the dominant end point ``e``, where the density is
    ``phi(e) exp(-|e| t - t^2 / 2)``.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    a, b = a.ravel(), b.ravel()
    J0 = np.where(a > 0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    pa, pb = _gauss_pdf(a), _gauss_pdf(b)
    J1 = b * J0 + pb - pa
    J2 = (b * b + 1) * J0 + b * pb + (a - 2 * b) * pa
    K = -(1 + a * b) * J0 + b * pa - a * pb
    far = (a > _TAIL_START) | (b < -_TAIL_START)
    narrow = ~far & (b - a <= _NARROW)
    J0, J1, J2, K = (x.copy() for x in (J0, J1, J2, K))
    if np.any(far):
        af, bf = a[far], b[far]
        from_a = af > _TAIL_START
        e = np.where(from_a, af, bf)
        width = bf - af
        T = np.minimum(width, 40.0 / np.abs(e))
        t = 0.5 * T[:, None] * (_GL_NODES + 1)
        g = 0.5 * T[:, None] * _GL_WEIGHTS * np.exp(-np.abs(e)[:, None] * t - 0.5 * t * t)
        g *= _gauss_pdf(e)[:, None]
        rest = width[:, None] - t
        upper = np.where(from_a[:, None], rest, t)    # b - z
        lower = np.where(from_a[:, None], t, rest)    # z - a
        J0[far], J1[far], J2[far], K[far] = _weighted_sums(g, upper, lower)
    if np.any(narrow):
        an, bn = a[narrow], b[narrow]
        half = 0.5 * (bn - an)[:, None]
        lower = half * (_GL_NODES + 1)
        upper = 2 * half - lower
        g = half * _GL_WEIGHTS * _gauss_pdf(an[:, None] + lower)
        J0[narrow], J1[narrow], J2[narrow], K[narrow] = _weighted_sums(g, upper, lower)
    return tuple(x.reshape(shape) for x in (J0, J1, J2, K))


def _positive_piece(x_bar, s, h):
    """Truncated moments of ``X ~ N(x_bar, s^2)`` over ``(0, h)``.

    Returns ``E{h - X}``, ``E{(h - X)^2}`` and ``E{X (h - X)}`` restricted to
    the interval.  Each integrand is written around the interval end where
    it vanishes, which keeps the tails free of catastrophic cancellation.
    """
    _, J1, J2, K = _standard_partial_moments(-x_bar / s, (h - x_bar) / s)
    return s * J1, s * s * J2, s * s * K


def attractor_moments(x_bar, sigma_x, upsilon) -> MomentTriple:
    """``E{f(x)}``, ``E{x f(x)}``, ``E{f(x)^2}`` for ``x ~ N(x_bar, sigma_x^2)``.

    ``f`` is the Taylor form of the exponential zero attractor,
    ``f(x) = v^2 (1/v - |x|) sign(x)`` on ``[-1/v, 1/v]`` and zero elsewhere,
    so every moment reduces to Gaussian partial moments of a polynomial on
    ``(0, 1/v)`` for ``x`` and for ``-x``.
    """
    xb = np.asarray(x_bar, dtype=float)
    s = np.asarray(sigma_x, dtype=float)
    if np.any(s <= 0):
        raise ValueError("sigma_x must be positive")
    v = float(upsilon)
    h = 1.0 / v
    I1p, I2p, Kp = _positive_piece(xb, s, h)
    I1m, I2m, Km = _positive_piece(-xb, s, h)
    Ef = v * v * (I1p - I1m)
    Exf = v * v * (Kp + Km)
    Eff = v ** 4 * (I2p + I2m)
    return MomentTriple(Ef, Exf, np.maximum(Eff, 0.0))


# ---------------------------------------------------------------------------
# the model

@dataclass
class TheoryModel:
    """Mean / mean-square state of the network error.

    ``probability`` selects how the update probabilities are computed each
    step: ``"transient"`` (from the current error covariance),
    ``"steady"`` (excess error neglected) or ``"unit"`` (always 1, i.e. no
    M-estimator).
    """
    C: np.ndarray
    mu: np.ndarray
    moments: RegressorMoments
    w_o: np.ndarray
    p: np.ndarray
    sigma_theta_sq: np.ndarray
    sigma_s_sq: np.ndarray
    kappa: float = KAPPA_99
    beta: float = 0.0
    upsilon: float = 20.0
    probability: str = "transient"
    mean_error: np.ndarray = field(default=None, repr=False)
    W: np.ndarray = field(default=None, repr=False)
    iteration: int = 0
    last_asymmetry: float = 0.0

    def __post_init__(self):
        self.C = np.asarray(getattr(self.C, "weights", self.C), dtype=float)
        N = self.C.shape[0]
        self.w_o = np.asarray(getattr(self.w_o, "w_o", self.w_o), dtype=float)
        L = self.w_o.shape[0]
        if N * L > MAX_NL:
            raise CapabilityError(
                f"N*L = {N * L} exceeds {MAX_NL}; the mean-square model is quartic in N*L, "
                "run the simulation instead")
        if self.moments.node_count != N or self.moments.taps != L:
            raise ValueError("moment dimensions do not match the network / parameter size")
        self.mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (N,)).copy()
        for name in ("p", "sigma_theta_sq", "sigma_s_sq"):
            setattr(self, name, np.broadcast_to(np.asarray(getattr(self, name), float), (N,)).copy())
        if self.probability not in ("transient", "steady", "unit"):
            raise ValueError(f"unknown probability mode {self.probability!r}")
        if self.mean_error is None or self.W is None:
            self.reset()

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_setup(cls, C, profiles, w_o, cfg, moments: RegressorMoments | None = None,
                   samples: int = 200_000, seed=None, **kw) -> "TheoryModel":
        """Model for an :class:`~dnlmm.diffusion.AlgorithmConfig` on given node profiles.

        Supported: MH (or identity) scores with optional Taylor exponential
        attractor, normalised or not.
        """
        w = np.asarray(getattr(w_o, "w_o", w_o), dtype=float)
        if isinstance(cfg.score, ModifiedHuber) and cfg.score.xi is None:
            mode = kw.pop("probability", "transient")
        elif isinstance(cfg.score, Identity):
            mode = "unit"
        else:
            raise CapabilityError(f"no analytical model for score {cfg.score!r}")
        if cfg.proximal:
            raise CapabilityError("proximal variants have no analytical model here")
        if cfg.uses_attractor and not (isinstance(cfg.attractor, ExpL0) and cfg.attractor.taylor):
            raise CapabilityError("the model covers the Taylor exponential attractor only")
        params = np.array([noise_parameters(pr.noise) for pr in profiles])
        if len(profiles) * w.shape[0] > MAX_NL:
            raise CapabilityError(f"N*L = {len(profiles) * w.shape[0]} exceeds {MAX_NL}; "
                                  "run the simulation instead")
        if moments is None:
            moments = estimate_moments(profiles, w.shape[0], samples, seed)
        if not cfg.normalized and moments.normalized:
            moments = moments.unnormalized(params[:, 1])
        C_eff = np.asarray(getattr(C, "weights", C), dtype=float)
        if not cfg.cooperative:
            C_eff = np.eye(C_eff.shape[0])
        upsilon = cfg.attractor.upsilon if cfg.uses_attractor else kw.pop("upsilon", 20.0)
        return cls(C_eff, cfg.step_sizes(len(profiles)), moments, w, params[:, 0], params[:, 1],
                   params[:, 2], kappa=cfg.kappa, beta=cfg.beta if cfg.uses_attractor else 0.0,
                   upsilon=upsilon, probability=mode, **kw)

    def copy(self, **changes) -> "TheoryModel":
        new = replace(self, **changes)
        new.mean_error = self.mean_error.copy()
        new.W = self.W.copy()
        return new

    def reset(self) -> None:
        """Zero initial estimates: the error equals the stacked true vector."""
        wo = np.tile(self.w_o, self.node_count)
        self.mean_error = wo.copy()
        self.W = np.outer(wo, wo)
        self.iteration = 0

    # -- derived quantities ---------------------------------------------------
    @property
    def node_count(self) -> int:
        return self.C.shape[0]

    @property
    def taps(self) -> int:
        return self.w_o.shape[0]

    @property
    def C_big(self) -> np.ndarray:
        return np.kron(self.C, np.eye(self.taps))

    @property
    def mu_big(self) -> np.ndarray:
        return np.repeat(self.mu, self.taps)

    def node_blocks(self, X) -> np.ndarray:
        N, L = self.node_count, self.taps
        return np.stack([X[k * L:(k + 1) * L, k * L:(k + 1) * L] for k in range(N)])

    def excess_error(self) -> np.ndarray:
        """``Tr(W_k R_k)`` per node (the EMSE)."""
        return np.einsum("kij,kji->k", self.node_blocks(self.W), self.moments.R)

    def update_probabilities(self, mode: str | None = None) -> np.ndarray:
        mode = mode or self.probability
        if mode == "unit":
            return np.ones(self.node_count)
        if mode == "steady":
            return steady_update_probability(self.p, np.sqrt(self.sigma_theta_sq),
                                             np.sqrt(self.sigma_s_sq), self.kappa)
        ex = np.maximum(self.excess_error(), 0.0)
        return update_probability(self.p, np.sqrt(ex + self.sigma_s_sq),
                                  np.sqrt(ex + self.sigma_theta_sq), self.kappa)

    def steady_probabilities(self) -> np.ndarray:
        if self.probability == "unit":
            return np.ones(self.node_count)
        return self.update_probabilities("steady")

    def gamma(self, P) -> np.ndarray:
        mp = self.mu_big * np.repeat(P, self.taps)
        return self.C_big.T @ (np.eye(self.C_big.shape[0]) - mp[:, None] * self.moments.EA_big())

    def msd_nodes(self, W=None) -> np.ndarray:
        W = self.W if W is None else W
        return np.trace(self.node_blocks(W), axis1=1, axis2=2)

    def msd_network(self, W=None) -> float:
        return float(np.mean(self.msd_nodes(W)))

    # -- the linear operator of the covariance recursion ----------------------
    def transition(self, W, P) -> np.ndarray:
        """Homogeneous part of the covariance update (``F`` acting on ``W``)."""
        mp = self.mu_big * np.repeat(P, self.taps)
        D = mp[:, None] * self.moments.EA_big()
        inner = W - D @ W - W @ D.T + mp[:, None] * self.moments.apply_kron(W) * mp[None, :]
        Cb = self.C_big
        return Cb.T @ inner @ Cb

    def noise_drive(self, P) -> np.ndarray:
        mp = self.mu_big * np.repeat(P, self.taps)
        Cb = self.C_big
        return Cb.T @ (mp[:, None] * self.moments.B_big() * mp[None, :]) @ Cb

    def attractor_drive(self, P, mean_error=None, W=None) -> tuple[np.ndarray, np.ndarray]:
        """Attractor contributions ``(to W, to the mean)`` for the current state."""
        cm = cross_moment_matrices(self, mean_error, W)
        Gam = self.gamma(P)
        CM = self.C_big.T * self.mu_big[None, :]
        Z = np.outer(np.tile(self.w_o, self.node_count), cm.Ef) - cm.Xi
        b = self.beta
        dW = b * (Gam @ Z @ CM.T + CM @ Z.T @ Gam.T) + b * b * (CM @ cm.Pi @ CM.T)
        dm = b * (CM @ cm.Ef)
        return dW, dm


@dataclass
class CrossMoments:
    Ef: np.ndarray
    Xi: np.ndarray
    Pi: np.ndarray


def coefficient_statistics(model: TheoryModel, mean_error=None, W=None):
    """Mean and standard deviation of every estimated coefficient (Gaussian model)."""
    m = model.mean_error if mean_error is None else mean_error
    W = model.W if W is None else W
    x_bar = np.tile(model.w_o, model.node_count) - m
    var = np.diag(W) - m ** 2
    return x_bar, np.sqrt(np.maximum(var, SIGMA_FLOOR))


def cross_moment_matrices(model: TheoryModel, mean_error=None, W=None) -> CrossMoments:
    """``E{f(w)}``, ``Xi = E{w f(w)^T}`` and ``Pi = E{f(w) f(w)^T}``.

    Distinct coefficients are treated as independent; the same coefficient
    at two different nodes uses the average of the two single-node
    moments.
    """
    x_bar, sig = coefficient_statistics(model, mean_error, W)
    t = attractor_moments(x_bar, sig, model.upsilon)
    Xi = np.outer(x_bar, t.Ef)
    Pi = np.outer(t.Ef, t.Ef)
    N, L = model.node_count, model.taps
    idx = np.arange(N * L).reshape(N, L)
    for l in range(L):
        rows = idx[:, l]
        Xi[np.ix_(rows, rows)] = 0.5 * (t.Exf[rows][:, None] + t.Exf[rows][None, :])
        Pi[np.ix_(rows, rows)] = 0.5 * (t.Eff[rows][:, None] + t.Eff[rows][None, :])
    return CrossMoments(t.Ef, Xi, Pi)


# ---------------------------------------------------------------------------
# recursions

def mean_step(model: TheoryModel, P=None) -> np.ndarray:
    """Advance only the mean error by one iteration; returns the new mean."""
    P = model.update_probabilities() if P is None else P
    new = model.gamma(P) @ model.mean_error
    if model.beta > 0:
        _, dm = model.attractor_drive(P)
        new = new + dm
    model.mean_error = new
    return new


def transient_step(model: TheoryModel, P=None) -> tuple[np.ndarray, float]:
    """Advance mean and covariance together; returns ``(MSD_k, MSD_net)``."""
    P = model.update_probabilities() if P is None else P
    W_next = model.transition(model.W, P) + model.noise_drive(P)
    mean_next = model.gamma(P) @ model.mean_error
    if model.beta > 0:
        dW, dm = model.attractor_drive(P)
        W_next = W_next + dW
        mean_next = mean_next + dm
    scale = max(np.abs(W_next).max(), np.finfo(float).tiny)
    model.last_asymmetry = float(np.abs(W_next - W_next.T).max() / scale)
    model.W = 0.5 * (W_next + W_next.T)
    model.mean_error = mean_next
    model.iteration += 1
    nodes = model.msd_nodes()
    return nodes, float(nodes.mean())


@dataclass
class TransientCurve:
    msd_nodes: np.ndarray       # (T, N)
    probabilities: np.ndarray   # (T, N)
    mean_error: np.ndarray      # (T, NL)

    @property
    def msd_network(self) -> np.ndarray:
        return self.msd_nodes.mean(axis=1)


def transient_curve(model: TheoryModel, iterations: int) -> TransientCurve:
    """Run the model for ``iterations`` steps from its current state.

    Row ``i`` describes the state after ``i + 1`` iterations, matching
    :class:`~dnlmm.diffusion.Trajectory`.
    """
    N = model.node_count
    msd = np.empty((iterations, N))
    probs = np.empty((iterations, N))
    means = np.empty((iterations, N * model.taps))
    for i in range(iterations):
        P = model.update_probabilities()
        probs[i] = P
        msd[i], _ = transient_step(model, P)
        means[i] = model.mean_error
    return TransientCurve(msd, probs, means)


# ---------------------------------------------------------------------------
# steady state

def _operator(model: TheoryModel, P) -> LinearOperator:
    n = model.node_count * model.taps

    def mv(x):
        X = np.asarray(x).reshape(n, n, order="F")
        return model.transition(X, P).reshape(-1, order="F")

    return LinearOperator((n * n, n * n), matvec=mv, dtype=float)


def dense_transition_matrix(model: TheoryModel, P) -> np.ndarray:
    """``F`` in Kronecker form, built term by term from ``E{A kron A}``."""
    n = model.node_count * model.taps
    mp = model.mu_big * np.repeat(P, model.taps)
    MP = np.diag(mp)
    D = MP @ model.moments.EA_big()
    I = np.eye(n)
    CT = model.C_big.T
    inner = (np.eye(n * n) - np.kron(I, D) - np.kron(D, I)
             + np.kron(MP, MP) @ model.moments.kron_matrix())
    return np.kron(CT, CT) @ inner


def spectral_radius(model: TheoryModel, P) -> float:
    op = _operator(model, P)
    n = op.shape[0]
    if n <= 400:
        return float(np.max(np.abs(np.linalg.eigvals(dense_transition_matrix(model, P)))))
    try:
        vals = eigs(op, k=1, which="LM", return_eigenvectors=False, tol=1e-10, maxiter=20000)
        return float(np.max(np.abs(vals)))
    except Exception:  # ARPACK non-convergence: fall back to power iteration
        x = np.random.default_rng(0).standard_normal(n)
        rho = 0.0
        for _ in range(5000):
            y = op.matvec(x)
            rho = np.linalg.norm(y) / np.linalg.norm(x)
            x = y / np.linalg.norm(y)
        return float(rho)


def solve_stationary(model: TheoryModel, P, rhs: np.ndarray) -> np.ndarray:
    """Solve ``X = F(X) + rhs`` for ``X`` (the fixed point of the recursion)."""
    n = rhs.shape[0]
    b = rhs.reshape(-1, order="F")
    if n * n <= 2500:
        F = dense_transition_matrix(model, P)
        x = np.linalg.solve(np.eye(n * n) - F, b)
    else:
        op = _operator(model, P)
        A = LinearOperator(op.shape, matvec=lambda v: v - op.matvec(v), dtype=float)
        x, info = gmres(A, b, rtol=1e-14, atol=0.0, restart=300, maxiter=2000)
        if info != 0:
            raise RuntimeError(f"GMRES did not converge (info={info})")
    return x.reshape(n, n, order="F")


@dataclass
class SteadyState:
    W: np.ndarray
    mean_error: np.ndarray
    probabilities: np.ndarray
    spectral_radius: float
    iterations: int = 0

    @property
    def msd_nodes(self) -> np.ndarray:
        L = self.W.shape[0] // self.probabilities.shape[0]
        return np.array([np.trace(self.W[k * L:(k + 1) * L, k * L:(k + 1) * L])
                         for k in range(self.probabilities.shape[0])])

    @property
    def msd_network(self) -> float:
        return float(self.msd_nodes.mean())

    @property
    def msd_nodes_db(self) -> np.ndarray:
        return 10 * np.log10(self.msd_nodes)

    @property
    def msd_network_db(self) -> float:
        return float(10 * np.log10(self.msd_network))


def _check_stable(model: TheoryModel, P) -> float:
    rho = spectral_radius(model, P)
    if rho >= 1:
        bounds = stability_bounds(model, P)
        bad = np.flatnonzero(model.mu >= bounds.combined)
        detail = (f"step sizes at nodes {bad.tolist()} exceed the combined bound "
                  f"{bounds.combined[bad].round(4).tolist()}" if bad.size
                  else "step sizes are inside the per-node bounds")
        raise InstabilityError(f"spectral radius {rho:.6f} >= 1; {detail}")
    return rho


def steady_state_msd(model: TheoryModel) -> SteadyState:
    """Steady-state covariance using the steady-state update probabilities.

    Closed-form linear solve for ``beta = 0``; otherwise the transient
    recursion is iterated to its fixed point.
    """
    P = model.steady_probabilities()
    rho = _check_stable(model, P)
    if model.beta == 0:
        W = solve_stationary(model, P, model.noise_drive(P))
        W = 0.5 * (W + W.T)
        return SteadyState(W, np.zeros_like(model.mean_error), P, rho)
    m = model.copy()
    prev = m.W.copy()
    for it in range(1, FIXED_POINT_CAP + 1):
        transient_step(m, P)
        change = np.abs(m.W - prev).max() / max(np.abs(m.W).max(), np.finfo(float).tiny)
        if change < FIXED_POINT_TOL:
            break
        prev = m.W.copy()
    return SteadyState(m.W, m.mean_error, P, rho, it)


def iterate_to_steady(model: TheoryModel, P=None, tol: float = FIXED_POINT_TOL,
                      cap: int = FIXED_POINT_CAP) -> SteadyState:
    """Fixed point of the recursion reached by plain iteration (any beta)."""
    P = model.steady_probabilities() if P is None else P
    m = model.copy()
    prev = m.W.copy()
    for it in range(1, cap + 1):
        transient_step(m, P)
        change = np.abs(m.W - prev).max() / max(np.abs(m.W).max(), np.finfo(float).tiny)
        if change < tol:
            break
        prev = m.W.copy()
    return SteadyState(m.W, m.mean_error, P, float("nan"), it)


def steady_mean_bias(model: TheoryModel, state: SteadyState) -> np.ndarray:
    """Steady-state bias ``E{w_inf} - w_o`` per node, shape ``(N, L)``."""
    P = state.probabilities
    Gam = model.gamma(P)
    _, dm = model.attractor_drive(P, state.mean_error, state.W)
    err = np.linalg.solve(np.eye(Gam.shape[0]) - Gam, dm)
    return -err.reshape(model.node_count, model.taps)


# ---------------------------------------------------------------------------
# bounds

@dataclass
class StabilityBounds:
    probabilities: np.ndarray
    lambda_max: np.ndarray
    mean_bound: np.ndarray
    ms_bound: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return np.minimum(self.mean_bound, self.ms_bound)


def stability_bounds(model: TheoryModel, P=None) -> StabilityBounds:
    """Per-node step-size bounds for mean and mean-square convergence.

    Normalised algorithms: ``2 / (P lambda_max(E{A}))`` and ``2 / P``.
    Non-normalised: both bounds become ``2 / (P lambda_max(R))``.
    """
    P = model.steady_probabilities() if P is None else np.asarray(P, dtype=float)
    if model.moments.normalized:
        lam = np.array([np.linalg.eigvalsh(a).max() for a in model.moments.EA])
        return StabilityBounds(P, lam, 2 / (P * lam), 2 / P)
    lam = np.array([np.linalg.eigvalsh(r).max() for r in model.moments.R])
    b = 2 / (P * lam)
    return StabilityBounds(P, lam, b, b.copy())


@dataclass
class BetaStar:
    value: float
    beta_a: float
    beta_b: float
    reference: SteadyState

    @property
    def exists(self) -> bool:
        return self.beta_a > 0 and self.beta_b > 0


def beta_star(model: TheoryModel, average_nodes: bool = False) -> BetaStar:
    """Largest ``beta`` for which the sparse variant lowers the steady-state MSD.

    Attractor statistics are evaluated at the ``beta = 0`` steady state
    (unbiased mean, covariance from the closed form).  ``average_nodes``
    divides by ``N`` as in the printed bound; the MSD-crossing point itself
    has no such factor.
    """
    ref_model = model.copy(beta=0.0)
    ref = steady_state_msd(ref_model)
    P = ref.probabilities
    probe = model.copy(beta=1.0)
    cm = cross_moment_matrices(probe, np.zeros_like(model.mean_error), ref.W)
    Gam = probe.gamma(P)
    CM = probe.C_big.T * probe.mu_big[None, :]
    Z = np.outer(np.tile(model.w_o, model.node_count), cm.Ef) - cm.Xi
    Ya = Gam @ Z @ CM.T + CM @ Z.T @ Gam.T
    Yb = CM @ cm.Pi @ CM.T
    beta_a = -float(np.trace(solve_stationary(probe, P, Ya)))
    beta_b = float(np.trace(solve_stationary(probe, P, Yb)))
    if beta_b <= 0:
        value = 0.0
    else:
        value = beta_a / beta_b / (model.node_count if average_nodes else 1)
    return BetaStar(value, beta_a, beta_b, ref)


def closed_form_network_msd(model: TheoryModel, beta: float) -> float:
    """Steady network MSD as a quadratic in ``beta`` around the ``beta = 0`` reference.

    Uses the attractor statistics of the ``beta = 0`` steady state, i.e. the
    same linearisation as :func:`beta_star`.
    """
    bs = beta_star(model)
    N = model.node_count
    return bs.reference.msd_network + (-beta * bs.beta_a + beta ** 2 * bs.beta_b) / N


def exp_l0_attractor(w, upsilon):
    """Convenience re-export of the Taylor attractor used by the model."""
    return exp_l0_taylor(w, upsilon)
