"""Eigenvalue spectra for diagonal state-space models.

A :class:`Spectrum` is an immutable list of eigenvalues together with the
domain it lives in. Continuous-domain spectra (the S4D families) must be
discretized with a step size before they can drive a recurrence; discrete
spectra (random, lin, step, custom) are used directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

REALIZATIONS = ("s4dinv", "s4dlin", "random", "lin", "step", "custom")
CONTINUOUS_TAGS = ("s4dinv", "s4dlin")
DISCRETE_TAGS = ("random", "lin", "step")

# Relative tolerance used to decide that two eigenvalues are conjugates.
PAIR_TOL = 1e-10


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues of a diagonal state matrix.

    Attributes
    ----------
    eigenvalues : ndarray of complex128, shape (n,)
        Read-only eigenvalue array.
    domain : {"continuous", "discrete"}
    delta : float or None
        Step size, set when the spectrum came out of :func:`discretize`.
    tag : str
        Name of the realization that produced the spectrum.
    """

    eigenvalues: np.ndarray
    domain: str
    delta: Optional[float] = None
    tag: str = "custom"

    def __post_init__(self):
        if self.domain not in ("continuous", "discrete"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.tag not in REALIZATIONS:
            raise ValueError(f"unknown realization tag {self.tag!r}")
        eig = _frozen_array(self.eigenvalues, np.complex128)
        if eig.size == 0:
            raise ValueError("a spectrum needs at least one eigenvalue")
        if not np.all(np.isfinite(eig)):
            raise ValueError("eigenvalues must be finite")
        object.__setattr__(self, "eigenvalues", eig)
        if self.delta is not None:
            object.__setattr__(self, "delta", float(self.delta))

    @property
    def n(self) -> int:
        return int(self.eigenvalues.shape[0])

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "domain": self.domain,
            "delta": self.delta,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Spectrum":
        eig = np.array([complex(re, im) for re, im in data["eigenvalues"]], dtype=np.complex128)
        return cls(eig, data["domain"], data.get("delta"), data.get("tag", "custom"))

    def to_json(self) -> str:
        # repr of a Python float round-trips exactly
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Spectrum":
        return cls.from_dict(json.loads(text))

    def allclose(self, other: "Spectrum", atol: float = 0.0) -> bool:
        return (
            self.domain == other.domain
            and self.tag == other.tag
            and self.delta == other.delta
            and self.n == other.n
            and bool(np.allclose(self.eigenvalues, other.eigenvalues, rtol=0.0, atol=atol))
        )


@dataclass(frozen=True, eq=False)
class InputCoupling:
    """Input vector ``b`` of the recurrence.

    Either a scalar ``scale`` applied to every mode (the default ``b = scale * 1``)
    or an explicit per-mode ``vector``.
    """

    scale: float = 1.0
    vector: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.vector is not None:
            object.__setattr__(self, "vector", _frozen_array(self.vector, np.complex128))

    def as_vector(self, n: int) -> np.ndarray:
        if self.vector is None:
            return np.full(n, self.scale, dtype=np.complex128)
        if self.vector.shape[0] != n:
            raise ValueError(f"coupling has {self.vector.shape[0]} entries, spectrum has {n}")
        return np.array(self.vector)


@dataclass(frozen=True)
class DeltaGrid:
    """Geometric grid of discretization step sizes."""

    values: tuple = field(default_factory=tuple)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


def make_spectrum(tag: str, n: int, seed: int = 0, radius_target: float = 0.99) -> Spectrum:
    """Build one of the named spectral realizations.

    Parameters
    ----------
    tag : {"s4dinv", "s4dlin", "random", "lin", "step"}
    n : int
        State dimension.
    seed : int
        Seed for the ``random`` realization; ignored by the deterministic ones.
    radius_target : float
        Largest eigenvalue magnitude for the discrete-domain realizations.

    Returns
    -------
    Spectrum
        Continuous-domain for the two S4D families, discrete otherwise.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (0.0 < radius_target <= 1.0):
        raise ValueError("radius_target must lie in (0, 1]")
    m = np.arange(n)
    if tag == "s4dinv":
        eig = -0.5 + 1j * (n / np.pi) * (n / (2 * m + 1) - 1)
        return Spectrum(eig, "continuous", None, tag)
    if tag == "s4dlin":
        eig = -0.5 + 1j * np.pi * m
        return Spectrum(eig, "continuous", None, tag)
    if tag == "random":
        rng = np.random.default_rng(seed)
        pairs = n // 2
        mags = radius_target * np.sqrt(rng.uniform(0.0, 1.0, pairs))
        phases = rng.uniform(0.0, np.pi, pairs)
        z = mags * np.exp(1j * phases)
        eig = np.empty(n, dtype=np.complex128)
        eig[0 : 2 * pairs : 2] = z
        eig[1 : 2 * pairs : 2] = np.conj(z)
        if n % 2:
            eig[-1] = rng.uniform(-radius_target, radius_target)
        return Spectrum(eig, "discrete", None, tag)
    if tag == "lin":
        eig = np.linspace(radius_target / n, radius_target, n)
        return Spectrum(eig.astype(np.complex128), "discrete", None, tag)
    if tag == "step":
        pairs = n // 2
        eig = np.empty(n, dtype=np.complex128)
        if pairs:
            mags = np.linspace(radius_target / pairs, radius_target, pairs)
            phases = np.pi * np.arange(1, pairs + 1) / n
            z = mags * np.exp(1j * phases)
            eig[0 : 2 * pairs : 2] = z
            eig[1 : 2 * pairs : 2] = np.conj(z)
        if n % 2:
            eig[-1] = radius_target / n
        return Spectrum(eig, "discrete", None, tag)
    if tag == "custom":
        raise ValueError("custom spectra are built directly with Spectrum(eigenvalues, domain)")
    raise ValueError(f"unknown realization tag {tag!r}; expected one of {REALIZATIONS}")


def _phi1(z: np.ndarray) -> np.ndarray:
    """``(exp(z) - 1) / z`` with the removable singularity at zero filled in."""
    z = np.asarray(z, dtype=np.complex128)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-5
    zs = z[small]
    out[small] = 1.0 + zs / 2.0 + zs * zs / 6.0 + zs * zs * zs / 24.0
    zl = z[~small]
    out[~small] = (np.exp(zl) - 1.0) / zl
    return out


def discretize(
    s: Spectrum, delta: float, coupling: Optional[InputCoupling] = None
) -> tuple[Spectrum, InputCoupling]:
    """Zero-order-hold discretization of a continuous spectrum.

    Each eigenvalue maps to ``exp(lam * delta)`` and each coupling entry to
    ``(exp(lam * delta) - 1) / lam * b``, which tends to ``delta * b`` as
    ``lam -> 0``.

    Returns
    -------
    (Spectrum, InputCoupling)
        Discrete spectrum tagged with ``delta`` and the per-mode coupling.
    """
    if s.domain != "continuous":
        raise ValueError("discretize expects a continuous-domain spectrum")
    delta = float(delta)
    if not (delta > 0.0 and np.isfinite(delta)):
        raise ValueError("delta must be a positive finite number")
    coupling = coupling if coupling is not None else InputCoupling()
    lam = s.eigenvalues
    b_cont = coupling.as_vector(s.n)
    lam_d = np.exp(lam * delta)
    b_d = delta * _phi1(lam * delta) * b_cont
    return Spectrum(lam_d, "discrete", delta, s.tag), InputCoupling(vector=b_d)


def spectral_radius(s: Spectrum) -> float:
    """Largest eigenvalue magnitude of a discrete spectrum."""
    if s.domain != "discrete":
        raise ValueError("spectral radius is only defined here for discrete spectra")
    return float(np.max(np.abs(s.eigenvalues)))


def delta_grid(dt_min: float, dt_max: float, count: int) -> DeltaGrid:
    """Geometrically spaced step sizes from ``dt_min`` to ``dt_max`` inclusive."""
    if not (0.0 < dt_min <= dt_max):
        raise ValueError("need 0 < dt_min <= dt_max")
    count = int(count)
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return DeltaGrid((float(dt_min),))
    return DeltaGrid(tuple(float(v) for v in np.geomspace(dt_min, dt_max, count)))


def pair_structure(eigenvalues: Sequence[complex], tol: float = PAIR_TOL) -> list[tuple]:
    """Group eigenvalues into real modes, conjugate pairs and unpaired modes.

    Returns a list of ``("real", i)``, ``("pair", i, j)`` and ``("unpaired", i)``
    entries ordered by their first index. For a pair, ``i`` is the earlier index.
    """
    eig = np.asarray(eigenvalues, dtype=np.complex128)
    used = np.zeros(eig.shape[0], dtype=bool)
    groups = []
    for i, z in enumerate(eig):
        if used[i]:
            continue
        used[i] = True
        scale = max(1.0, abs(z))
        if abs(z.imag) <= tol * scale:
            groups.append(("real", i))
            continue
        candidates = np.flatnonzero(~used & (np.abs(eig - np.conj(z)) <= tol * scale))
        if candidates.size:
            j = int(candidates[0])
            used[j] = True
            groups.append(("pair", i, j))
        else:
            groups.append(("unpaired", i))
    return groups


def is_conjugate_closed(s: Spectrum, tol: float = PAIR_TOL) -> bool:
    """True when every complex eigenvalue has its conjugate in the spectrum."""
    return all(g[0] != "unpaired" for g in pair_structure(s.eigenvalues, tol))


def feature_count(s: Spectrum) -> int:
    """Number of real readout features produced by the packing in ``real_features``."""
    count = 0
    for g in pair_structure(s.eigenvalues):
        count += 1 if g[0] == "real" else 2
    return count
