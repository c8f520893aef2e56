"""Simulation of diagonal and dense linear recurrences and the linear readout.

Indexing convention used throughout the package: the state starts at zero,
``x[k+1] = lam * x[k] + b * u[k]``, the first ``washout`` states are
discarded and row ``t`` of a trajectory holds ``x[t + washout]``. The state
in row ``t`` therefore depends on ``u[t + washout - 1]`` and earlier inputs,
and the target "input delayed by tau" for that row is ``u[t + washout - tau]``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .spectra import PAIR_TOL, InputCoupling, Spectrum, discretize, pair_structure

RADIUS_TOL = 1e-12


class DivergenceError(ArithmeticError):
    """Raised when a recurrence cannot be simulated stably."""


def gen_uniform_input(length: int, seed: int) -> np.ndarray:
    """I.i.d. inputs uniform on [-1, 1] (variance 1/3)."""
    length = int(length)
    if length < 1:
        raise ValueError("length must be >= 1")
    return np.random.default_rng(seed).uniform(-1.0, 1.0, length)


def readout_groups(lam: np.ndarray, b: np.ndarray, tol: float = PAIR_TOL) -> list[tuple]:
    """Pair structure of the trajectory, taking the coupling into account.

    A conjugate eigenvalue pair only yields conjugate states when its couplings
    are conjugate too; otherwise both members are treated as unpaired. A real
    eigenvalue with a complex coupling is likewise unpaired.
    """
    groups = []
    for g in pair_structure(lam, tol):
        if g[0] == "pair":
            i, j = g[1], g[2]
            if abs(b[j] - np.conj(b[i])) <= tol * max(1.0, abs(b[i])):
                groups.append(g)
            else:
                groups.extend([("unpaired", i), ("unpaired", j)])
        elif g[0] == "real" and abs(b[g[1]].imag) > tol * max(1.0, abs(b[g[1]])):
            groups.append(("unpaired", g[1]))
        else:
            groups.append(g)
    return groups


def pack_real(states: np.ndarray, groups: Sequence[tuple]) -> np.ndarray:
    """Real feature matrix from complex states.

    A real mode contributes its real part; a conjugate pair or an unpaired
    mode contributes the real and imaginary parts of its first member.
    """
    cols = []
    for g in groups:
        x = states[..., g[1]]
        if g[0] == "real":
            cols.append(x.real)
        else:
            cols.append(x.real)
            cols.append(x.imag)
    return np.stack(cols, axis=-1)


@dataclass(eq=False)
class StateTrajectory:
    """States of one simulated system after the washout.

    Attributes
    ----------
    states : ndarray, shape (T, n)
        Complex for diagonal systems, real for dense ones.
    u : ndarray, shape (washout + T,)
        Full input sequence including the washout part.
    washout : int
    eigenvalues, coupling : ndarray or None
        Diagonal system parameters (None for dense systems).
    """

    states: np.ndarray
    u: np.ndarray
    washout: int
    eigenvalues: Optional[np.ndarray] = None
    coupling: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return int(self.states.shape[0])

    @property
    def n(self) -> int:
        return int(self.states.shape[1])

    def delayed(self, tau: int) -> np.ndarray:
        """Input delayed by ``tau`` steps, aligned with the state rows."""
        tau = int(tau)
        if not (0 <= tau <= self.washout):
            raise ValueError(f"delay {tau} outside [0, washout={self.washout}]")
        start = self.washout - tau
        return self.u[start : start + self.T]

    def delay_matrix(self, taus: Sequence[int]) -> np.ndarray:
        return np.column_stack([self.delayed(t) for t in taus])

    def features(self) -> np.ndarray:
        """Real feature matrix used by the readout (shape ``(T, F)``)."""
        if self.eigenvalues is None:
            return np.asarray(self.states, dtype=np.float64)
        return pack_real(self.states, readout_groups(self.eigenvalues, self.coupling))


def _check_input(u, washout) -> np.ndarray:
    u = np.ascontiguousarray(u, dtype=np.float64).reshape(-1)
    washout = int(washout)
    if washout < 0:
        raise ValueError("washout must be >= 0")
    if u.shape[0] <= washout:
        raise ValueError(f"input length {u.shape[0]} must exceed washout {washout}")
    if not np.all(np.isfinite(u)):
        raise ValueError("input contains non-finite values")
    return u


def simulate(
    s: Spectrum, coupling: Optional[InputCoupling], u: np.ndarray, washout: int
) -> StateTrajectory:
    """Run the diagonal recurrence driven by ``u``.

    Raises
    ------
    ValueError
        If the spectrum is not in the discrete domain or the input is too short.
    DivergenceError
        If the spectral radius exceeds one or the states overflow.
    """
    if s.domain != "discrete":
        raise ValueError("simulate needs a discrete spectrum; call discretize first")
    radius = float(np.max(np.abs(s.eigenvalues)))
    if radius > 1.0 + RADIUS_TOL:
        raise DivergenceError(f"spectral radius {radius:.6g} exceeds 1")
    u = _check_input(u, washout)
    coupling = coupling if coupling is not None else InputCoupling()
    b = np.ascontiguousarray(coupling.as_vector(s.n))
    lam = np.ascontiguousarray(s.eigenvalues)
    states = kernels.diag_recurrence(lam, b, u, int(washout))
    if not np.all(np.isfinite(states)):
        raise DivergenceError("state trajectory overflowed")
    return StateTrajectory(states, u, int(washout), np.array(lam), b)


def simulate_batch(
    s: Spectrum, coupling: Optional[InputCoupling], u: np.ndarray, washout: int
) -> np.ndarray:
    """Diagonal recurrence for several input sequences (rows of ``u``) at once.

    Returns the complex state array of shape ``(draws, len - washout, n)``.
    """
    if s.domain != "discrete":
        raise ValueError("simulate_batch needs a discrete spectrum")
    if float(np.max(np.abs(s.eigenvalues))) > 1.0 + RADIUS_TOL:
        raise DivergenceError("spectral radius exceeds 1")
    u = np.ascontiguousarray(np.atleast_2d(u), dtype=np.float64)
    if u.shape[1] <= washout:
        raise ValueError("input length must exceed washout")
    coupling = coupling if coupling is not None else InputCoupling()
    b = np.ascontiguousarray(coupling.as_vector(s.n))
    lam = np.ascontiguousarray(s.eigenvalues)
    return kernels.diag_recurrence_batch(lam, b, u, int(washout))


def _real_block_form(s: Spectrum, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Real block-diagonal matrix with the spectrum's eigenvalues and its coupling.

    A pair ``a +/- ib`` becomes the block ``[[a, b], [-b, a]]`` with coupling
    ``(scale, 0)``. Its two coordinates equal ``Re x`` and ``-Im x`` of the
    diagonal mode with eigenvalue ``a + ib`` driven by ``scale``.
    """
    n = s.n
    d = np.zeros((n, n))
    bb = np.zeros(n)
    pos = 0
    for g in pair_structure(s.eigenvalues):
        if g[0] == "unpaired":
            raise ValueError("dense equivalent needs a conjugate-closed spectrum")
        z = s.eigenvalues[g[1]]
        if g[0] == "real":
            d[pos, pos] = z.real
            bb[pos] = scale
            pos += 1
        else:
            a, w = z.real, z.imag
            d[pos : pos + 2, pos : pos + 2] = [[a, w], [-w, a]]
            bb[pos] = scale
            pos += 2
    return d, bb


def block_coordinates(traj: StateTrajectory, s: Spectrum) -> np.ndarray:
    """Map a diagonal trajectory onto the coordinates of the real block form."""
    cols = []
    for g in pair_structure(s.eigenvalues):
        x = traj.states[:, g[1]]
        if g[0] == "real":
            cols.append(x.real)
        else:
            cols.extend([x.real, -x.imag])
    return np.column_stack(cols)


def dense_equivalent(
    s: Spectrum,
    coupling: Optional[InputCoupling] = None,
    seed: int = 0,
    max_cond: float = 1e3,
    basis: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense real system similar to a conjugate-closed diagonal spectrum.

    Builds ``A = P D P^{-1}`` where ``D`` is the real block form and ``P`` is a
    Gaussian matrix whose condition number is at most ``max_cond`` (or the
    given ``basis``).

    Returns
    -------
    (A, b_vec, P)
        The dense state matrix, its input vector ``P @ b_block`` and the basis.
        The dense trajectory equals ``block_coordinates(diag) @ P.T``.
    """
    if s.domain != "discrete":
        raise ValueError("dense_equivalent needs a discrete spectrum")
    coupling = coupling if coupling is not None else InputCoupling()
    if coupling.vector is not None:
        vec = coupling.as_vector(s.n)
        if not np.allclose(vec, vec[0]) or abs(vec[0].imag) > 0:
            raise ValueError("dense_equivalent supports a uniform real coupling only")
        scale = float(vec[0].real)
    else:
        scale = float(coupling.scale)
    d, bb = _real_block_form(s, scale)
    if basis is not None:
        p = np.asarray(basis, dtype=np.float64)
        if p.shape != (s.n, s.n):
            raise ValueError("basis must be n x n")
    else:
        rng = np.random.default_rng(seed)
        for _ in range(100):
            p = rng.standard_normal((s.n, s.n))
            if np.linalg.cond(p) <= max_cond:
                break
        else:
            p, _ = np.linalg.qr(rng.standard_normal((s.n, s.n)))
    a = p @ d @ np.linalg.inv(p)
    return a, p @ bb, p


def simulate_dense(a: np.ndarray, b_vec: np.ndarray, u: np.ndarray, washout: int) -> StateTrajectory:
    """Run a dense real recurrence ``x[k+1] = A x[k] + b u[k]``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b_vec = np.ascontiguousarray(b_vec, dtype=np.float64).reshape(-1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != b_vec.shape[0]:
        raise ValueError("A must be square and match the input vector")
    radius = float(np.max(np.abs(np.linalg.eigvals(a))))
    if radius > 1.0 + 1e-9:
        raise DivergenceError(f"spectral radius {radius:.6g} exceeds 1")
    u = _check_input(u, washout)
    states = kernels.dense_recurrence(a, b_vec, u, int(washout))
    if not np.all(np.isfinite(states)):
        raise DivergenceError("state trajectory overflowed")
    return StateTrajectory(states, u, int(washout))


@dataclass(eq=False)
class LayerConfig:
    """Several diagonal systems driven by the same input.

    Attributes
    ----------
    spectra : list of Spectrum
        Discrete spectra, one per member.
    couplings : list of InputCoupling or InputCoupling
        Per-member couplings; a single coupling is shared by every member.
    T, washout : int
        Kept length and washout length of every member trajectory.
    """

    spectra: list
    couplings: list
    T: int
    washout: int

    def __post_init__(self):
        if not self.spectra:
            raise ValueError("a layer needs at least one spectrum")
        if isinstance(self.couplings, InputCoupling):
            self.couplings = [self.couplings] * len(self.spectra)
        self.spectra = list(self.spectra)
        self.couplings = list(self.couplings)
        if len({s.n for s in self.spectra}) != 1:
            raise ValueError("all layer members must have the same state dimension")
        if self.T < self.spectra[0].n:
            warnings.warn("T is smaller than the state dimension", stacklevel=2)
        if len(self.couplings) != len(self.spectra):
            raise ValueError("one coupling per spectrum is required")
        if any(s.domain != "discrete" for s in self.spectra):
            raise ValueError("layer members must be discrete spectra")

    @property
    def input_length(self) -> int:
        return int(self.T + self.washout)


def make_layer(
    base: Spectrum,
    deltas: Sequence[float],
    T: int,
    washout: Optional[int] = None,
    coupling: Optional[InputCoupling] = None,
) -> LayerConfig:
    """Layer of one spectrum discretized at several step sizes.

    A discrete ``base`` yields a single-member layer and ``deltas`` is ignored.
    """
    washout = 2 * int(T) if washout is None else int(washout)
    if base.domain == "discrete":
        return LayerConfig([base], [coupling or InputCoupling()], int(T), washout)
    members = [discretize(base, d, coupling) for d in deltas]
    return LayerConfig([m[0] for m in members], [m[1] for m in members], int(T), washout)


def layer_simulate(cfg: LayerConfig, u: np.ndarray) -> list[StateTrajectory]:
    """Simulate every member of a layer on the same input."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != cfg.input_length:
        raise ValueError(f"input length {u.shape[0]} != T + washout = {cfg.input_length}")
    return [simulate(s, c, u, cfg.washout) for s, c in zip(cfg.spectra, cfg.couplings)]


def layer_features(trajs: Sequence[StateTrajectory]) -> np.ndarray:
    """Concatenated real features of all members (the joint readout input)."""
    return np.concatenate([t.features() for t in trajs], axis=1)


ACTIVATIONS = ("identity", "tanh")


def activation_fn(name: str):
    """Return ``(f, f_prime)`` for a named readout activation."""
    if name == "identity":
        return (lambda z: z), (lambda z: np.ones_like(z))
    if name == "tanh":
        return np.tanh, (lambda z: 1.0 - np.tanh(z) ** 2)
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


@dataclass
class ReadoutParams:
    """Linear readout ``f(X theta + bias)``."""

    theta: np.ndarray
    bias: float = 0.0
    activation: str = "identity"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        activation_fn(self.activation)


FeatureSource = Union[StateTrajectory, Sequence[StateTrajectory], np.ndarray]


def as_features(x: FeatureSource) -> np.ndarray:
    """Real feature matrix from a trajectory, a list of trajectories or an array."""
    if isinstance(x, StateTrajectory):
        return x.features()
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            raise ValueError("feature matrices must be real; use StateTrajectory.features()")
        return x
    return layer_features(x)


def readout_forward(x: FeatureSource, params: ReadoutParams) -> np.ndarray:
    """Readout output for every row of the feature matrix."""
    feats = as_features(x)
    if feats.shape[1] != params.theta.shape[0]:
        raise ValueError(
            f"theta has {params.theta.shape[0]} entries but there are {feats.shape[1]} features"
        )
    f, _ = activation_fn(params.activation)
    return f(feats @ params.theta + params.bias)
