"""Memory functions, memory capacity and Vandermonde diagnostics.

The memory function at delay ``tau`` is the fraction of the variance of the
delayed input ``u[t - tau]`` that a linear readout of the state can recover.
It is estimated numerically by projecting the delayed input onto the span of
the state trajectory, and (for well-conditioned spectra) analytically from the
Vandermonde matrix of eigenvalue powers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import signal

from .spectra import Spectrum
from .ssm_core import StateTrajectory

logger = logging.getLogger(__name__)

METHODS = ("numerical", "analytical", "numerical_untruncated")
NUMERICAL_EPS = 1e-6
PINV_RTOL = 1e-12
ANALYTIC_RANGE = (-0.01, 1.01)
ANALYTIC_IMAG_TOL = 0.01
SCAN_START_LEVEL = 0.01


@dataclass(eq=False)
class MFCurve:
    """Memory function values for ``tau = 0 .. tau_max``.

    Attributes
    ----------
    values : ndarray
        Reported values. Numerical curves are clipped to [0, 1]; analytical
        curves keep raw values and set ``flags["unstable"]`` when out of range.
    truncation_index : int
        First delay zeroed by surrogate truncation, or ``tau_max + 1``.
    method : {"numerical", "analytical", "numerical_untruncated"}
    raw : ndarray or None
        Values before clipping/truncation.
    flags : dict
        ``degenerate`` (all-zero states) and ``unstable`` (analytical range check).
    surrogate_sup : ndarray or None
        Pointwise supremum of the surrogate curves (truncated curves only).
    """

    values: np.ndarray
    truncation_index: int
    method: str
    raw: Optional[np.ndarray] = None
    flags: dict = field(default_factory=dict)
    surrogate_sup: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def tau_max(self) -> int:
        return int(self.values.shape[0] - 1)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "truncation_index": int(self.truncation_index),
            "values": self.values.tolist(),
            "flags": {k: bool(v) for k, v in self.flags.items()},
        }


@dataclass(eq=False)
class VandermondeDiag:
    """Singular values of a Vandermonde matrix and its effective rank."""

    singular_values: np.ndarray
    truncation_threshold: float
    effective_rank: int

    def to_dict(self) -> dict:
        return {
            "singular_values": self.singular_values.tolist(),
            "truncation_threshold": float(self.truncation_threshold),
            "effective_rank": int(self.effective_rank),
        }


def state_basis(states: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Orthonormal basis of the column span of the state matrix.

    Singular directions with ``sigma**2 <= rtol * sigma_max**2`` are dropped, which
    is the same cutoff as a relative pseudo-inverse of ``X^H X``.
    """
    x = np.asarray(states)
    if x.size == 0 or not np.any(x):
        return np.zeros((x.shape[0], 0), dtype=x.dtype)
    q, sig, _ = np.linalg.svd(x, full_matrices=False)
    keep = sig**2 > rtol * sig[0] ** 2
    return q[:, keep]


def _delay_projections(basis: np.ndarray, u: np.ndarray, washout: int, T: int, tau_max: int) -> np.ndarray:
    """Squared norms ``||basis^H U_tau||^2`` for ``tau = 0..tau_max``.

    The inner products for all delays are a cross-correlation of each basis
    column with the input, evaluated with FFTs.
    """
    out = np.zeros(tau_max + 1)
    if basis.shape[1] == 0:
        return out
    window = u[washout - tau_max : washout + T]
    for col in basis.T:
        corr = signal.correlate(window, col, mode="valid")  # sum_t window[t+k] conj(col[t])
        out += np.abs(corr[::-1]) ** 2
    return out


def _delay_norms(u: np.ndarray, washout: int, T: int, tau_max: int) -> np.ndarray:
    sq = np.concatenate(([0.0], np.cumsum(u * u)))
    taus = np.arange(tau_max + 1)
    start = washout - taus
    return sq[start + T] - sq[start]


def _raw_mf(basis: np.ndarray, u: np.ndarray, washout: int, T: int, tau_max: int) -> np.ndarray:
    proj = _delay_projections(basis, u, washout, T, tau_max)
    norms = _delay_norms(u, washout, T, tau_max)
    return np.divide(proj, norms, out=np.zeros_like(proj), where=norms > 0)


def _check_tau_max(traj: StateTrajectory, tau_max: Optional[int]) -> int:
    if tau_max is None:
        tau_max = min(traj.washout, 4 * traj.n)
    tau_max = int(tau_max)
    if tau_max < 0:
        raise ValueError("tau_max must be >= 0")
    if tau_max > traj.washout:
        raise ValueError(f"tau_max={tau_max} exceeds washout={traj.washout}")
    return tau_max


def mf_numerical(traj: StateTrajectory, tau_max: Optional[int] = None) -> MFCurve:
    """Numerical memory function by least-squares projection onto the states.

    For each delay the value is ``||P U_tau||^2 / ||U_tau||^2`` where ``P`` is the
    orthogonal projector onto the column span of the (complex) state matrix.

    Parameters
    ----------
    traj : StateTrajectory
        Must carry its full input so that every delayed target exists.
    tau_max : int, optional
        Largest delay, at most the washout. Defaults to ``min(washout, 4 n)``.
    """
    tau_max = _check_tau_max(traj, tau_max)
    basis = state_basis(traj.states)
    degenerate = basis.shape[1] == 0
    raw = _raw_mf(basis, traj.u, traj.washout, traj.T, tau_max)
    out_of_range = (raw < -NUMERICAL_EPS) | (raw > 1.0 + NUMERICAL_EPS)
    if np.any(out_of_range):
        logger.debug("raw MF outside [0, 1] at delays %s", np.flatnonzero(out_of_range).tolist())
    values = np.clip(raw, 0.0, 1.0)
    return MFCurve(values, tau_max + 1, "numerical_untruncated", raw=raw, flags={"degenerate": degenerate})


def surrogate_sup(
    traj: StateTrajectory, tau_max: int, n_surrogates: int = 20, seed: int = 0
) -> np.ndarray:
    """Pointwise supremum of memory functions computed against shuffled inputs."""
    if n_surrogates < 1:
        raise ValueError("n_surrogates must be >= 1")
    rng = np.random.default_rng(seed)
    basis = state_basis(traj.states)
    sup = np.zeros(tau_max + 1)
    for _ in range(int(n_surrogates)):
        shuffled = rng.permutation(traj.u)
        sup = np.maximum(sup, _raw_mf(basis, shuffled, traj.washout, traj.T, tau_max))
    return sup


def apply_truncation(values: np.ndarray, sup: np.ndarray, threshold: float) -> tuple[np.ndarray, int]:
    """Zero insignificant memory-function values.

    A value is eliminated when it falls below ``threshold * sup``. The delay
    ``tau = 0`` is judged on its own because the state never sees the current
    input. For ``tau >= 1`` the scan starts at the first delay whose value exceeds
    0.01; values before it are judged individually, and from the start onward the
    first eliminated delay zeroes itself and every later delay.

    Returns
    -------
    (values, truncation_index)
    """
    values = np.array(values, dtype=np.float64)
    eliminated = values < threshold * sup
    tau_max = values.shape[0] - 1
    if eliminated[0]:
        values[0] = 0.0
    above = np.flatnonzero(values[1:] > SCAN_START_LEVEL)
    start = int(above[0]) + 1 if above.size else tau_max + 1
    values[1:start][eliminated[1:start]] = 0.0
    hits = np.flatnonzero(eliminated[start:])
    if hits.size:
        cut = start + int(hits[0])
        values[cut:] = 0.0
        return values, cut
    return values, tau_max + 1


def surrogate_truncate(
    traj: StateTrajectory,
    curve: MFCurve,
    n_surrogates: int = 20,
    threshold: float = 1.2,
    seed: int = 0,
) -> MFCurve:
    """Remove memory-function values that do not beat shuffled-input surrogates.

    Parameters
    ----------
    traj : StateTrajectory
        Trajectory the curve was computed from.
    curve : MFCurve
        Untruncated numerical curve.
    n_surrogates : int
        Number of time-shuffled inputs.
    threshold : float
        Multiplier applied to the surrogate supremum.
    seed : int
        Seed of the shuffles.
    """
    if n_surrogates < 1:
        raise ValueError("n_surrogates must be >= 1")
    sup = surrogate_sup(traj, curve.tau_max, n_surrogates, seed)
    values, cut = apply_truncation(curve.values, sup, threshold)
    return MFCurve(values, cut, "numerical", raw=curve.raw, flags=dict(curve.flags), surrogate_sup=sup)


def memory_function(
    traj: StateTrajectory,
    tau_max: Optional[int] = None,
    n_surrogates: int = 20,
    threshold: float = 1.2,
    seed: int = 0,
) -> MFCurve:
    """Numerical memory function followed by surrogate truncation."""
    return surrogate_truncate(traj, mf_numerical(traj, tau_max), n_surrogates, threshold, seed)


def mc_sum(curve: MFCurve) -> float:
    """Memory capacity: the sum of the memory function over all delays."""
    return float(np.sum(curve.values))


def _stack(curves: Sequence[MFCurve]) -> np.ndarray:
    if not curves:
        raise ValueError("need at least one curve")
    lengths = {c.values.shape[0] for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"curves have different lengths {sorted(lengths)}")
    return np.stack([c.values for c in curves])


def layer_sup_mf(curves: Sequence[MFCurve]) -> MFCurve:
    """Pointwise maximum of the member curves of a layer."""
    vals = _stack(curves)
    return MFCurve(vals.max(axis=0), max(c.truncation_index for c in curves), curves[0].method)


def layer_avg_mf(curves: Sequence[MFCurve]) -> MFCurve:
    """Pointwise mean of the member curves of a layer."""
    vals = _stack(curves)
    return MFCurve(vals.mean(axis=0), max(c.truncation_index for c in curves), curves[0].method)


def _eigenvalues(s: Union[Spectrum, np.ndarray]) -> np.ndarray:
    if isinstance(s, Spectrum):
        if s.domain != "discrete":
            raise ValueError("Vandermonde analysis needs a discrete spectrum")
        return np.array(s.eigenvalues)
    return np.asarray(s, dtype=np.complex128).reshape(-1)


def vandermonde(s: Union[Spectrum, np.ndarray], T: int) -> np.ndarray:
    """Matrix of eigenvalue powers, ``V[i, j] = lam_i ** (T - 1 - j)``.

    Column ``T - 1 - p`` holds the powers ``lam ** p``; powers come from repeated
    multiplication so results do not depend on the ``pow`` implementation.
    """
    T = int(T)
    if T < 1:
        raise ValueError("T must be >= 1")
    lam = _eigenvalues(s)
    v = np.empty((lam.shape[0], T), dtype=np.complex128)
    cur = np.ones_like(lam)
    for p in range(T):
        v[:, T - 1 - p] = cur
        cur = cur * lam
    return v


def power_matrix(s: Union[Spectrum, np.ndarray], T: int) -> np.ndarray:
    """Vandermonde matrix with columns in ascending power order (``lam ** p`` in column p)."""
    return vandermonde(s, T)[:, ::-1]


def singular_diagnostics(v: np.ndarray) -> VandermondeDiag:
    """Singular values of ``v`` with the rank cutoff ``max(T, N) * sigma_max * eps``."""
    v = np.asarray(v)
    if v.size == 0:
        raise ValueError("empty matrix")
    sig = np.linalg.svd(v, compute_uv=False)
    thresh = max(v.shape) * float(sig[0]) * np.finfo(np.float64).eps
    return VandermondeDiag(sig, thresh, int(np.sum(sig > thresh)))


def mf_analytical(s: Union[Spectrum, np.ndarray], T: int = 1024, tau_max: Optional[int] = None) -> MFCurve:
    """Memory function from eigenvalue powers, ``V_p^T (V V^T)^+ V_p``.

    The transpose (not the conjugate transpose) matches the expectation over
    real inputs for conjugate-closed spectra. The curve is shifted to the
    trajectory convention: delay ``tau`` corresponds to power ``tau - 1`` and the
    value at ``tau = 0`` is zero. Values outside [-0.01, 1.01], or with an
    imaginary part above 0.01, set ``flags["unstable"]``; they are not clipped.
    """
    lam = _eigenvalues(s)
    n = lam.shape[0]
    if T < n:
        raise ValueError("T must be >= N")
    tau_max = 4 * n if tau_max is None else int(tau_max)
    if tau_max > T:
        raise ValueError("tau_max must not exceed T")
    pm = power_matrix(lam, T)
    gram_pinv = np.linalg.pinv(pm @ pm.T)
    cols = pm[:, :tau_max]
    vals = np.einsum("ip,ij,jp->p", cols, gram_pinv, cols)
    curve = np.zeros(tau_max + 1, dtype=np.complex128)
    curve[1:] = vals
    unstable = bool(
        np.any(~np.isfinite(curve))
        or np.any(curve.real < ANALYTIC_RANGE[0])
        or np.any(curve.real > ANALYTIC_RANGE[1])
        or np.any(np.abs(curve.imag) > ANALYTIC_IMAG_TOL)
    )
    return MFCurve(curve.real, tau_max + 1, "analytical", raw=curve.real.copy(), flags={"unstable": unstable})


def vvvv_numerical(traj: StateTrajectory, tau_window: int) -> np.ndarray:
    """Numerical estimate of ``V^T (V V^T)^{-1} V`` over a window of delays.

    Entry ``[i, j]`` is ``U_i^T P U_j / (||U_i|| ||U_j||)`` for delays ``i, j`` in
    ``0 .. tau_window - 1`` (ascending delay order), where ``P`` projects onto the
    state span. Normalizing each delayed input by its own norm makes the
    diagonal identical to :func:`mf_numerical`.
    """
    tau_window = int(tau_window)
    if tau_window < 1:
        raise ValueError("tau_window must be >= 1")
    if tau_window - 1 > traj.washout:
        raise ValueError(f"window of {tau_window} delays needs washout >= {tau_window - 1}")
    basis = state_basis(traj.states)
    u_hat = traj.delay_matrix(range(tau_window))
    u_hat = u_hat / np.linalg.norm(u_hat, axis=0)
    coeff = basis.conj().T @ u_hat
    m = (coeff.conj().T @ coeff).real
    return 0.5 * (m + m.T)


def vvvv_analytical(s: Union[Spectrum, np.ndarray], T: int) -> np.ndarray:
    """``V^T (V V^T)^+ V`` in ascending power order (real part)."""
    pm = power_matrix(s, T)
    return (pm.T @ np.linalg.pinv(pm @ pm.T) @ pm).real
