"""Readout gradients: empirical, closed-form (expected) and finite-difference.

Readout parameters live in the real feature coordinates produced by
``StateTrajectory.features``. The closed-form gradients are evaluated in the
complex modal coordinates, where the expected state covariance is
``<u^2> D_b V V^T D_b`` (``V`` the matrix of eigenvalue powers, ``D_b`` the
coupling), and then mapped back through the linear packing map
``features = states @ K``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .memory import power_matrix
from .spectra import InputCoupling, Spectrum
from .ssm_core import (
    FeatureSource,
    StateTrajectory,
    activation_fn,
    as_features,
    gen_uniform_input,
    readout_groups,
    simulate_batch,
    pack_real,
)

U_VAR = 1.0 / 3.0
PROVENANCES = ("empirical", "analytic", "finite_diff")
REAL_TOL = 1e-10


class UnstableSpectrumError(ArithmeticError):
    """The eigenvalue-power Gram matrix is too ill-conditioned to invert."""


@dataclass
class TargetSpec:
    """Regression target built from delayed copies of the input.

    ``alpha[d]`` weights the input delayed by ``d`` steps; a delay task is the
    one-hot case. ``series`` is the materialized target when an input is known.
    """

    kind: str
    alpha: np.ndarray
    series: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("delay", "combo"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)

    @classmethod
    def delay(cls, tau: int) -> "TargetSpec":
        tau = int(tau)
        if tau < 0:
            raise ValueError("delay must be >= 0")
        alpha = np.zeros(tau + 1)
        alpha[tau] = 1.0
        return cls("delay", alpha)

    @classmethod
    def combo(cls, alpha: Sequence[float]) -> "TargetSpec":
        return cls("combo", np.asarray(alpha, dtype=np.float64))

    @property
    def max_delay(self) -> int:
        nz = np.flatnonzero(self.alpha)
        return int(nz[-1]) if nz.size else 0

    def materialize(self, u: np.ndarray, washout: int, T: int) -> np.ndarray:
        """``sum_d alpha[d] * u[t + washout - d]`` for ``t = 0 .. T-1``."""
        if self.max_delay > washout:
            raise ValueError(f"target needs delay {self.max_delay} > washout {washout}")
        y = np.zeros(T)
        for d in np.flatnonzero(self.alpha):
            y += self.alpha[d] * u[washout - d : washout - d + T]
        return y


@dataclass
class GradientVector:
    """Gradient with respect to the readout vector and where it came from."""

    g: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.g = np.asarray(self.g, dtype=np.float64)
        if not np.all(np.isfinite(self.g)):
            raise ArithmeticError("gradient has non-finite entries")


def _check_dims(x: np.ndarray, theta: np.ndarray, y: np.ndarray):
    if x.shape[1] != theta.shape[0]:
        raise ValueError(f"theta has {theta.shape[0]} entries, features have {x.shape[1]} columns")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"target length {y.shape[0]} != number of rows {x.shape[0]}")


def mse_loss(x: FeatureSource, theta, y, activation: str = "identity", bias: float = 0.0) -> float:
    """Mean squared error ``(1/T) ||f(X theta + bias) - y||^2``."""
    feats = as_features(x)
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(feats, theta, y)
    f, _ = activation_fn(activation)
    r = f(feats @ theta + bias) - y
    return float(r @ r) / feats.shape[0]


def grad_linear(x: FeatureSource, theta, y) -> GradientVector:
    """Gradient of the linear-readout MSE, ``(2/T) X^T (X theta - y)``."""
    feats = as_features(x)
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(feats, theta, y)
    return GradientVector((2.0 / feats.shape[0]) * (feats.T @ (feats @ theta - y)), "empirical")


def grad_nonlinear(x: FeatureSource, theta, y, activation: str = "tanh") -> GradientVector:
    """Gradient of the MSE of ``f(X theta)``, ``(2/T) X^T [(f(X theta) - y) * f'(X theta)]``.

    The identity activation dispatches to :func:`grad_linear` so both agree bitwise.
    """
    if activation == "identity":
        return grad_linear(x, theta, y)
    feats = as_features(x)
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(feats, theta, y)
    f, fp = activation_fn(activation)
    z = feats @ theta
    return GradientVector((2.0 / feats.shape[0]) * (feats.T @ ((f(z) - y) * fp(z))), "empirical")


def finite_diff_grad(loss: Callable[[np.ndarray], float], theta, h: float = 1e-6) -> GradientVector:
    """Central-difference gradient of a scalar loss."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.shape[0]):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (loss(tp) - loss(tm)) / (2.0 * h)
    return GradientVector(g, "finite_diff")


def alpha_estimate(y, u, washout: int, n_delays: int) -> np.ndarray:
    """Least-squares weights of ``y`` on the delayed inputs ``0 .. n_delays-1``.

    ``y`` is aligned with the trajectory rows (length ``T``); ``u`` is the full
    input including the washout.
    """
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    T = y.shape[0]
    if n_delays - 1 > washout:
        raise ValueError("n_delays - 1 must not exceed washout")
    u_hat = np.column_stack([u[washout - d : washout - d + T] for d in range(n_delays)])
    alpha, *_ = np.linalg.lstsq(u_hat, y, rcond=None)
    return alpha


# ---------------------------------------------------------------------------
# Closed-form (expected) gradients


@dataclass(eq=False)
class ModalSystem:
    """Conjugate-completed modal description of a diagonal system.

    ``lam`` and ``b`` list every complex mode whose state enters the features
    (an unpaired mode gets its conjugate partner appended) and ``packing`` is the
    complex matrix ``K`` with ``features = modal_states @ K``.
    """

    lam: np.ndarray
    b: np.ndarray
    packing: np.ndarray

    @property
    def n_features(self) -> int:
        return int(self.packing.shape[1])


def modal_system(s: Spectrum, coupling: Union[InputCoupling, float, None] = None) -> ModalSystem:
    """Build the completed modal system and packing map for a discrete spectrum."""
    if s.domain != "discrete":
        raise ValueError("closed-form gradients need a discrete spectrum")
    if coupling is None or isinstance(coupling, (int, float)):
        coupling = InputCoupling(scale=1.0 if coupling is None else float(coupling))
    lam0 = np.array(s.eigenvalues)
    b0 = coupling.as_vector(s.n)
    groups = readout_groups(lam0, b0)
    lam = list(lam0)
    b = list(b0)
    extra = {}
    for g in groups:
        if g[0] == "unpaired":
            extra[g[1]] = len(lam)
            lam.append(np.conj(lam0[g[1]]))
            b.append(np.conj(b0[g[1]]))
    n_feat = sum(1 if g[0] == "real" else 2 for g in groups)
    k = np.zeros((len(lam), n_feat), dtype=np.complex128)
    col = 0
    for g in groups:
        i = g[1]
        if g[0] == "real":
            k[i, col] = 1.0
            col += 1
            continue
        j = g[2] if g[0] == "pair" else extra[i]
        # Re x_i = (x_i + x_j) / 2 and Im x_i = (x_i - x_j) / (2i) with x_j = conj(x_i)
        k[i, col], k[j, col] = 0.5, 0.5
        k[i, col + 1], k[j, col + 1] = -0.5j, 0.5j
        col += 2
    return ModalSystem(np.array(lam), np.array(b), k)


def _to_real(z: np.ndarray, what: str) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    if np.max(np.abs(z.imag), initial=0.0) > REAL_TOL * scale:
        raise ArithmeticError(f"{what} has a non-negligible imaginary part")
    return z.real.copy()


def _alpha_powers(pm: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """``sum_d alpha[d] * lam ** (d - 1)``; delay ``d`` uses power ``d - 1``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[0] - 1 > pm.shape[1]:
        raise ValueError("alpha is longer than the power window")
    out = np.zeros(pm.shape[0], dtype=np.complex128)
    for d in np.flatnonzero(alpha):
        if d == 0:
            continue  # the state never sees the current input
        out += alpha[d] * pm[:, d - 1]
    return out


@dataclass(eq=False)
class AnalyticTerms:
    """Pieces of the closed-form gradient for one instance.

    ``teacher`` is ``V^T (V V^T)^+ V alpha`` (length T), the part of the target
    visible to the states; ``gram_cond`` is the condition number of ``V V^T``.
    """

    modal: ModalSystem
    powers: np.ndarray
    gram: np.ndarray
    gram_pinv: np.ndarray
    v_alpha: np.ndarray
    teacher: np.ndarray
    gram_cond: float


def analytic_terms(s: Spectrum, coupling, alpha, T: int = 1024) -> AnalyticTerms:
    modal = modal_system(s, coupling)
    pm = power_matrix(modal.lam, T)
    gram = pm @ pm.T
    gram_pinv = np.linalg.pinv(gram)
    v_alpha = _alpha_powers(pm, alpha)
    teacher = pm.T @ (gram_pinv @ v_alpha)
    return AnalyticTerms(modal, pm, gram, gram_pinv, v_alpha, teacher, float(np.linalg.cond(gram)))


def grad_combo_analytic(
    s: Spectrum, coupling, theta, alpha, u_var: float = U_VAR, T: int = 1024
) -> GradientVector:
    """Expected readout gradient for the target ``sum_d alpha[d] U_d``.

    Complex modal form ``2 <u^2> D_b V (V^T D_b K theta - V^T (V V^T)^+ V alpha)``,
    mapped to the real features with ``K^T``.
    """
    terms = analytic_terms(s, coupling, alpha, T)
    return _grad_from_terms(terms, theta, u_var)


def _grad_from_terms(terms: AnalyticTerms, theta, u_var: float) -> GradientVector:
    modal = terms.modal
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[0] != modal.n_features:
        raise ValueError(f"theta has {theta.shape[0]} entries, expected {modal.n_features}")
    theta_c = modal.b * (modal.packing @ theta)
    resid = terms.powers.T @ theta_c - terms.teacher
    g_c = 2.0 * u_var * modal.b * (terms.powers @ resid)
    return GradientVector(_to_real(modal.packing.T @ g_c, "gradient"), "analytic")


def grad_delay_analytic(
    s: Spectrum, coupling, theta, tau: int, u_var: float = U_VAR, T: int = 1024
) -> GradientVector:
    """Expected readout gradient for the delay target ``U_tau``."""
    return grad_combo_analytic(s, coupling, theta, TargetSpec.delay(tau).alpha, u_var, T)


def expected_hessian(s: Spectrum, coupling, u_var: float = U_VAR, T: int = 1024) -> np.ndarray:
    """Hessian of the expected MSE in feature coordinates, ``2 <u^2> K^T D_b V V^T D_b K``."""
    modal = modal_system(s, coupling)
    pm = power_matrix(modal.lam, T)
    db_k = modal.b[:, None] * modal.packing
    h = 2.0 * u_var * db_k.T @ (pm @ pm.T) @ db_k
    h = _to_real(h, "Hessian")
    return 0.5 * (h + h.T)


def theta_star(
    s: Spectrum, coupling, alpha, T: int = 1024, max_cond: float = 1e12
) -> np.ndarray:
    """Readout that zeroes the expected gradient, ``K^{-1} D_b^{-1} (V V^T)^{-1} V alpha``.

    Raises
    ------
    UnstableSpectrumError
        If ``cond(V V^T)`` exceeds ``max_cond`` or round-off leaves a visible
        imaginary part in the solution.
    """
    modal = modal_system(s, coupling)
    pm = power_matrix(modal.lam, T)
    gram = pm @ pm.T
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > max_cond:
        raise UnstableSpectrumError(f"cond(V V^T) = {cond:.3g} exceeds {max_cond:.3g}")
    if np.any(modal.b == 0):
        raise UnstableSpectrumError("coupling has zero entries")
    theta_c = np.linalg.solve(gram, _alpha_powers(pm, alpha)) / modal.b
    try:
        return _to_real(np.linalg.solve(modal.packing, theta_c), "theta_star")
    except ArithmeticError as err:
        raise UnstableSpectrumError(f"{err} (cond(V V^T) = {cond:.3g})") from err


def fixed_point_residual(s: Spectrum, coupling, theta, alpha, u_var: float = U_VAR, T: int = 1024) -> float:
    """``||G(theta)|| / ||2 <u^2> K^T D_b V V^T D_b K theta||``."""
    g = grad_combo_analytic(s, coupling, theta, alpha, u_var, T).g
    scale = expected_hessian(s, coupling, u_var, T) @ np.asarray(theta, dtype=np.float64)
    return float(np.linalg.norm(g) / np.linalg.norm(scale))


def mc_empirical_gradient(
    s: Spectrum,
    coupling,
    theta,
    alpha,
    T: int = 2048,
    n_draws: int = 100,
    seed: int = 0,
    washout: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo mean and standard error of :func:`grad_linear` over input draws.

    Each draw simulates the system on fresh uniform input (seed ``seed + k``)
    and evaluates the empirical gradient against the materialized target.
    """
    if isinstance(coupling, (int, float)) or coupling is None:
        coupling = InputCoupling(scale=1.0 if coupling is None else float(coupling))
    target = TargetSpec.combo(alpha)
    washout = 2 * T if washout is None else int(washout)
    washout = max(washout, target.max_delay)
    u = np.stack([gen_uniform_input(T + washout, seed + k) for k in range(n_draws)])
    states = simulate_batch(s, coupling, u, washout)
    groups = readout_groups(np.array(s.eigenvalues), coupling.as_vector(s.n))
    grads = np.empty((n_draws, sum(1 if g[0] == "real" else 2 for g in groups)))
    for k in range(n_draws):
        feats = pack_real(states[k], groups)
        y = target.materialize(u[k], washout, T)
        grads[k] = grad_linear(feats, theta, y).g
    mean = grads.mean(axis=0)
    se = grads.std(axis=0, ddof=1) / np.sqrt(n_draws)
    return mean, se
