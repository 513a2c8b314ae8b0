"""First-order time-splitting spectral propagator and its discrete adjoint.

One step from t_n to t_{n+1} = t_n + k:

    Psi*   = ifft( exp(-i eps k mu^2 / 2) * fft(Psi^n) )   kinetic, exact in
                                                           mode space
    Psi^{n+1}_j = exp(-i V_j k / eps) * Psi*_j             potential, exact
                                                           pointwise

Both substeps are unitary, so the discrete L2 norm is conserved to rounding.
The control loss

    L(V) = sum_{s in sensors} |Psi^{N_t}_s - d_s|^2  +  lam * h * sum_j V_j^2

is differentiated exactly w.r.t. the sampled potential by a reverse sweep
over the stored trajectory: the terminal cotangent is the sensor misfit,
each reverse step undoes the potential phase and the kinetic multiplier with
their complex conjugates (the scheme is unitary, so adjoint = inverse), and
the V-derivative of each step pairs the cotangent with (-i k / eps) Psi^n.
The finite-difference oracle :func:`fd_gradient` pins all sign conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import PotentialField, SpectralGrid, WaveField, fourier_modes, l2_norm

__all__ = [
    "SolveConfig",
    "Trajectory",
    "gaussian_packet",
    "kinetic_phase",
    "potential_phase",
    "tssp_step",
    "tssp_solve",
    "loss_and_adjoint_gradient",
    "fd_gradient",
    "z_sensitivity",
]


@dataclass(frozen=True)
class SolveConfig:
    """Time discretization: step k = T / n_steps, scaled Planck constant eps."""

    eps: float = 0.1
    T: float = 0.6
    n_steps: int = 640

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        if self.T <= 0.0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def k(self) -> float:
        return self.T / self.n_steps


@dataclass(frozen=True)
class Trajectory:
    """All N_t + 1 snapshots of a solve, Psi^0 .. Psi^{N_t}."""

    grid: SpectralGrid
    states: np.ndarray  # complex, shape (n_steps + 1, M)

    def __len__(self) -> int:
        return self.states.shape[0]

    def field(self, n: int) -> WaveField:
        return WaveField(self.grid, self.states[n])

    @property
    def terminal(self) -> WaveField:
        return WaveField(self.grid, self.states[-1])


def gaussian_packet(
    grid: SpectralGrid,
    delta: float = 0.2,
    x0: float = 0.0,
    p0: float = 0.0,
    eps: float = 0.1,
) -> WaveField:
    """Normalized Gaussian packet (pi delta^2)^{-1/4} e^{-(x-x0)^2/(2 delta^2)} e^{i p0 (x-x0)/eps}.

    With delta well inside the domain the tails decay below rounding at the
    endpoints, so the periodic wrap is harmless and the discrete L2 norm is
    1 to quadrature accuracy.
    """
    x = grid.points
    env = (np.pi * delta**2) ** (-0.25) * np.exp(-((x - x0) ** 2) / (2.0 * delta**2))
    return WaveField(grid, env * np.exp(1j * p0 * (x - x0) / eps))


def kinetic_phase(grid: SpectralGrid, eps: float, k: float) -> np.ndarray:
    """Mode-space multiplier exp(-i eps k mu_l^2 / 2), FFT layout."""
    mu = fourier_modes(grid)
    return np.exp(-0.5j * eps * k * mu**2)


def potential_phase(v: np.ndarray, eps: float, k: float) -> np.ndarray:
    """Pointwise multiplier exp(-i V_j k / eps)."""
    return np.exp(-1j * v * k / eps)


def _check_same_grid(psi: WaveField, V: PotentialField) -> None:
    if psi.grid != V.grid:
        raise ValueError("wave field and potential live on different grids")


def tssp_step(psi: WaveField, V: PotentialField, cfg: SolveConfig) -> WaveField:
    """Advance one time step: kinetic substep then potential substep."""
    _check_same_grid(psi, V)
    kin = kinetic_phase(psi.grid, cfg.eps, cfg.k)
    pot = potential_phase(V.values, cfg.eps, cfg.k)
    out = pot * np.fft.ifft(kin * np.fft.fft(psi.values))
    return WaveField(psi.grid, out)


def tssp_solve(
    psi0: WaveField,
    V: PotentialField,
    cfg: SolveConfig,
    keep_trajectory: bool = False,
):
    """Apply n_steps splitting steps; returns the terminal field, or the
    full :class:`Trajectory` when ``keep_trajectory`` (needed by the adjoint)."""
    _check_same_grid(psi0, V)
    grid = psi0.grid
    kin = kinetic_phase(grid, cfg.eps, cfg.k)
    pot = potential_phase(V.values, cfg.eps, cfg.k)
    vals = psi0.values
    if keep_trajectory:
        states = np.empty((cfg.n_steps + 1, grid.M), dtype=np.complex128)
        states[0] = vals
        for n in range(cfg.n_steps):
            vals = pot * np.fft.ifft(kin * np.fft.fft(vals))
            states[n + 1] = vals
        return Trajectory(grid, states)
    for _ in range(cfg.n_steps):
        vals = pot * np.fft.ifft(kin * np.fft.fft(vals))
    return WaveField(grid, vals)


def _misfit_loss(
    terminal: np.ndarray,
    V: PotentialField,
    sensors: np.ndarray,
    obs_values: np.ndarray,
    lam_reg: float,
) -> float:
    resid = terminal[sensors] - obs_values
    reg = lam_reg * V.grid.h * float(np.sum(V.values**2))
    return float(np.sum(np.abs(resid) ** 2)) + reg


def _check_sensors(sensors: np.ndarray, obs_values: np.ndarray, M: int) -> tuple:
    sensors = np.asarray(sensors, dtype=np.intp)
    obs_values = np.asarray(obs_values, dtype=np.complex128)
    if sensors.ndim != 1 or sensors.shape != obs_values.shape:
        raise ValueError("sensors and observations must be 1-D of equal length")
    if sensors.size and (sensors.min() < 0 or sensors.max() >= M):
        raise ValueError(f"sensor index out of range 0..{M - 1}")
    return sensors, obs_values


def loss_and_adjoint_gradient(
    psi0: WaveField,
    V: PotentialField,
    cfg: SolveConfig,
    sensors: np.ndarray,
    obs_values: np.ndarray,
    lam_reg: float = 0.0,
):
    """Control loss and its exact gradient w.r.t. the sampled potential.

    Parameters
    ----------
    sensors : int indices into the grid where the terminal state is observed
    obs_values : complex observations d_s, one per sensor
    lam_reg : weight of the Tikhonov term lam * h * sum_j V_j^2

    Returns
    -------
    (loss, grad) : float and real array of length M with grad_j = dL/dV_j.
    """
    _check_same_grid(psi0, V)
    grid = psi0.grid
    sensors, obs_values = _check_sensors(sensors, obs_values, grid.M)

    traj = tssp_solve(psi0, V, cfg, keep_trajectory=True)
    terminal = traj.states[-1]
    loss = _misfit_loss(terminal, V, sensors, obs_values, lam_reg)

    # cotangent w = dL/d(conj Psi); total differential is 2 Re(conj(w) dPsi)
    w = np.zeros(grid.M, dtype=np.complex128)
    w[sensors] = terminal[sensors] - obs_values

    kin_adj = np.conj(kinetic_phase(grid, cfg.eps, cfg.k))
    pot_adj = np.conj(potential_phase(V.values, cfg.eps, cfg.k))
    dphase = -1j * cfg.k / cfg.eps

    grad = np.zeros(grid.M, dtype=np.float64)
    for n in range(cfg.n_steps, 0, -1):
        # V enters step n through Psi^n_j = e^{-i V_j k/eps} Psi*_j
        grad += 2.0 * np.real(np.conj(w) * dphase * traj.states[n])
        w = w * pot_adj
        w = np.fft.ifft(kin_adj * np.fft.fft(w))
    grad += 2.0 * lam_reg * grid.h * V.values
    return loss, grad


def fd_gradient(
    psi0: WaveField,
    V: PotentialField,
    cfg: SolveConfig,
    sensors: np.ndarray,
    obs_values: np.ndarray,
    lam_reg: float = 0.0,
    delta: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of the same loss; 2M solves. Test oracle."""
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    grid = psi0.grid
    sensors, obs_values = _check_sensors(sensors, obs_values, grid.M)

    def loss_of(vals: np.ndarray) -> float:
        Vp = PotentialField(grid, vals)
        term = tssp_solve(psi0, Vp, cfg).values
        return _misfit_loss(term, Vp, sensors, obs_values, lam_reg)

    grad = np.zeros(grid.M)
    for j in range(grid.M):
        vp = V.values.copy()
        vm = V.values.copy()
        vp[j] += delta
        vm[j] -= delta
        grad[j] = (loss_of(vp) - loss_of(vm)) / (2.0 * delta)
    return grad


def z_sensitivity(
    psi0: WaveField,
    potential,
    z: float,
    delta_z: float,
    cfg: SolveConfig,
) -> float:
    """Central-difference estimate of ||d_z psi(T)|| at fixed z.

    ``potential(x, z)`` evaluates the parameterized potential on the grid.
    Solves at z +/- delta_z and returns l2_norm((psi_+ - psi_-) / (2 delta_z)).
    """
    if not (-1.0 <= z - delta_z and z + delta_z <= 1.0):
        raise ValueError(f"z +/- delta_z must stay inside [-1, 1], got z={z}")
    grid = psi0.grid
    x = grid.points
    plus = tssp_solve(psi0, PotentialField(grid, potential(x, z + delta_z)), cfg)
    minus = tssp_solve(psi0, PotentialField(grid, potential(x, z - delta_z)), cfg)
    diff = WaveField(grid, (plus.values - minus.values) / (2.0 * delta_z))
    return l2_norm(diff)
