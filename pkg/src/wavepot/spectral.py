"""Periodic 1-D spectral grids, complex wave fields, and physical observables.

Conventions used throughout the package:

  * grid points  x_j = a + j*h,  h = (b-a)/M,  j = 0..M-1  (x_M aliases x_0
    by periodicity and is never stored),
  * Fourier modes mu_l = 2*pi*l/(b-a) for l = -M/2..M/2-1, stored in the
    standard FFT layout  l = 0, 1, .., M/2-1, -M/2, .., -1  so that mode
    arrays line up index-by-index with ``numpy.fft`` coefficient arrays,
  * forward transform is the unnormalized sum  sum_j psi_j e^{-i mu_l (x_j-a)},
    the inverse carries the 1/M factor.

Since x_j - a = j*h, the phase e^{-i mu_l (x_j-a)} equals e^{-2 pi i l j / M}
and the transform pair is exactly ``numpy.fft.fft`` / ``numpy.fft.ifft``.
Every kinetic multiplier in the package is built from :func:`fourier_modes`
so the mode layout is fixed in one place.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "SpectralGrid",
    "WaveField",
    "PotentialField",
    "QuadratureRule",
    "make_grid",
    "fourier_modes",
    "forward_transform",
    "inverse_transform",
    "position_density",
    "current_density",
    "l2_norm",
    "gamma_norm",
    "save_field_csv",
    "load_field_csv",
    "save_field_json",
    "load_field_json",
]


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform periodic grid on [a, b) with an even number of cells."""

    a: float
    b: float
    M: int

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.M

    @cached_property
    def points(self) -> np.ndarray:
        x = self.a + self.h * np.arange(self.M)
        x.flags.writeable = False
        return x


@dataclass(frozen=True)
class WaveField:
    """Complex wave amplitude sampled on a grid."""

    grid: SpectralGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != (self.grid.M,):
            raise ValueError(
                f"field has {vals.shape} values, grid expects ({self.grid.M},)"
            )
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class PotentialField:
    """Real-valued external potential sampled on a grid."""

    grid: SpectralGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.grid.M,):
            raise ValueError(
                f"potential has {vals.shape} values, grid expects ({self.grid.M},)"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("potential values must be finite")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights on [-1, 1]; weights sum to 2, nodes symmetric about 0."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-D of equal length")
        if np.any(weights <= 0.0):
            raise ValueError("quadrature weights must be positive")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("quadrature nodes must be strictly increasing")
        if abs(weights.sum() - 2.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 2")
        if np.max(np.abs(nodes + nodes[::-1])) > 1e-12:
            raise ValueError("quadrature nodes must be symmetric about 0")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.nodes.size


def make_grid(a: float, b: float, M: int) -> SpectralGrid:
    """Build the uniform periodic grid x_j = a + j*(b-a)/M, j = 0..M-1."""
    if b <= a:
        raise ValueError(f"need b > a, got a={a}, b={b}")
    if M < 4 or M % 2 != 0:
        raise ValueError(f"M must be an even integer >= 4, got {M}")
    return SpectralGrid(float(a), float(b), int(M))


def fourier_modes(grid: SpectralGrid) -> np.ndarray:
    """Mode frequencies mu_l = 2*pi*l/(b-a) in FFT layout.

    Index i of the returned array corresponds to index i of
    ``numpy.fft.fft`` output: l runs 0, 1, .., M/2-1, -M/2, .., -1.
    """
    l = np.fft.fftfreq(grid.M, d=1.0 / grid.M)
    return 2.0 * np.pi * l / (grid.b - grid.a)


def forward_transform(f: WaveField) -> np.ndarray:
    """Unnormalized Fourier coefficients sum_j psi_j e^{-i mu_l (x_j - a)}."""
    return np.fft.fft(f.values)


def inverse_transform(grid: SpectralGrid, coeffs: np.ndarray) -> WaveField:
    """Inverse of :func:`forward_transform`; carries the 1/M factor."""
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    if coeffs.shape != (grid.M,):
        raise ValueError(f"expected {grid.M} coefficients, got {coeffs.shape}")
    return WaveField(grid, np.fft.ifft(coeffs))


def position_density(psi: WaveField) -> np.ndarray:
    """Position density n_j = |psi_j|^2."""
    return np.abs(psi.values) ** 2


def current_density(psi: WaveField, eps: float) -> np.ndarray:
    """Current density J_j = eps * Im(conj(psi_j) * (d_x psi)_j).

    The spatial derivative is spectral: i*mu multiplication in mode space.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    mu = fourier_modes(psi.grid)
    dpsi = np.fft.ifft(1j * mu * np.fft.fft(psi.values))
    return eps * np.imag(np.conj(psi.values) * dpsi)


def l2_norm(psi: WaveField) -> float:
    """Discrete L2 norm sqrt(h * sum_j |psi_j|^2)."""
    return float(np.sqrt(psi.grid.h * np.sum(np.abs(psi.values) ** 2)))


def gamma_norm(fields, rule: QuadratureRule) -> float:
    """L2 norm averaged over the random parameter with uniform density 1/2.

    ``fields[k]`` is the wave field at quadrature node ``rule.nodes[k]``;
    returns sqrt( sum_k (w_k/2) * l2_norm(fields[k])^2 ).
    """
    fields = list(fields)
    if len(fields) != len(rule):
        raise ValueError(
            f"got {len(fields)} fields for {len(rule)} quadrature nodes"
        )
    acc = 0.0
    for w, f in zip(rule.weights, fields):
        acc += 0.5 * w * l2_norm(f) ** 2
    return float(np.sqrt(acc))


# -- serialization ----------------------------------------------------------
#
# Floats are written with repr(), which numpy/python round-trip exactly
# (shortest string that parses back to the same double).


def save_field_csv(f: WaveField, path) -> None:
    """Write rows (j, x_j, re, im)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "x", "re", "im"])
        for j, (x, v) in enumerate(zip(f.grid.points, f.values)):
            w.writerow([j, repr(float(x)), repr(float(v.real)), repr(float(v.imag))])


def load_field_csv(path, grid: SpectralGrid | None = None) -> WaveField:
    """Read a field written by :func:`save_field_csv`.

    If ``grid`` is omitted it is reconstructed from the x column (left
    endpoint, spacing, count), which is exact only up to the printed digits.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    x = np.array([float(r[1]) for r in rows])
    vals = np.array([float(r[2]) + 1j * float(r[3]) for r in rows])
    if grid is None:
        h = x[1] - x[0]
        grid = SpectralGrid(float(x[0]), float(x[0] + h * len(x)), len(x))
    elif grid.M != len(x) or np.max(np.abs(grid.points - x)) > 1e-12:
        raise ValueError("grid does not match the x column")
    return WaveField(grid, vals)


def save_field_json(f: WaveField, path) -> None:
    """Write the record {a, b, M, values: [[re, im], ...]}; bit-exact."""
    rec = {
        "a": f.grid.a,
        "b": f.grid.b,
        "M": f.grid.M,
        "values": [[v.real, v.imag] for v in f.values],
    }
    with open(path, "w") as fh:
        json.dump(rec, fh)


def load_field_json(path) -> WaveField:
    with open(path) as fh:
        rec = json.load(fh)
    grid = make_grid(rec["a"], rec["b"], rec["M"])
    vals = np.array([re + 1j * im for re, im in rec["values"]])
    return WaveField(grid, vals)
