"""Loss assembly through the solver, samplers, and the training loop.

Gradient chain: the adjoint sweep of :mod:`wavepot.tssp` gives dL/dV at the
grid points, and the surrogate's reverse mode turns that upstream vector
into dL/dtheta in one pass.

Sign conventions. The loop minimizes the loss; the Langevin samplers ascend
the log posterior

    log p(theta | data) ~ -|theta|^2 / (2 prior_std^2) - loss / (2 sigma^2),

where sigma is the likelihood standard deviation (``likelihood_std``; None
means 2 sigma^2 = 1, under which the noise-free Langevin step is exactly the
descent step plus the prior pull). Minibatch losses are pre-scaled to
estimate the full-dataset loss, so no extra factor appears here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nets
from .data import ObservationSet, StochasticDataset
from .spectral import PotentialField, SpectralGrid, WaveField
from .tssp import SolveConfig, loss_and_adjoint_gradient

__all__ = [
    "TrainConfig",
    "LossParts",
    "PosteriorSamples",
    "TrainProblem",
    "TrainResult",
    "TrainingDivergedError",
    "loss_deterministic",
    "loss_stochastic",
    "sgd_step",
    "sgld_step",
    "psgld_step",
    "run_training",
    "posterior_stats",
]


@dataclass
class TrainConfig:
    optimizer: str = "sgd"  # sgd | sgld | psgld
    eta0: float = 1e-3  # step size eta_k = eta0 / (1 + decay * k)
    decay: float = 1e-4
    tau: float = 1.0  # inverse temperature; math.inf disables noise
    lam_reg: float = 1e-4  # Tikhonov weight on the sampled potential
    lam_pre: float = 1e-5  # preconditioner regularization constant
    omega: float = 0.01  # moving-average weight of squared gradients
    prior_std: float = 1.0
    batch_size: int = 1
    epochs: int = 1
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    likelihood_std: float | None = None
    weights: tuple = (1.0, 1.0, 1e-4)  # (w_mis, w_bc, w_reg)

    def __post_init__(self):
        if self.optimizer not in ("sgd", "sgld", "psgld"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.eta0 <= 0 or self.decay < 0:
            raise ValueError("need eta0 > 0 and decay >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.omega < 1.0:
            raise ValueError("omega must lie in (0, 1)")
        if self.lam_pre <= 0 or self.prior_std <= 0:
            raise ValueError("lam_pre and prior_std must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("bad loop sizes")


@dataclass
class LossParts:
    """Weighted loss components (summing to total) and the flat gradient."""

    total: float
    misfit: float
    bc: float
    reg: float
    grad: np.ndarray


@dataclass
class PosteriorSamples:
    """Thinned parameter vectors collected after burn-in."""

    samples: np.ndarray  # (S, P)
    burn_in: int
    stride: int

    def __len__(self) -> int:
        return self.samples.shape[0]


class TrainingDivergedError(RuntimeError):
    """Non-finite loss; carries the iteration index and partial history."""

    def __init__(self, iteration: int, loss: float, history: list):
        super().__init__(f"non-finite loss {loss} at iteration {iteration}")
        self.iteration = iteration
        self.history = history


def loss_deterministic(
    params: nets.NetParams,
    psi0: WaveField,
    obs: ObservationSet,
    grid: SpectralGrid,
    cfg: SolveConfig,
    lam_reg: float,
) -> LossParts:
    """Sensor misfit plus Tikhonov term for the MLP-parameterized potential."""
    x = grid.points
    v = nets.mlp_eval(params, x)
    sensors, observed = obs.for_node(0)
    total, grad_v = loss_and_adjoint_gradient(
        psi0, PotentialField(grid, v), cfg, sensors, observed, lam_reg
    )
    reg = lam_reg * grid.h * float(np.sum(v**2))
    grad_theta, _ = nets.mlp_backward(params, x, grad_v)
    return LossParts(total=total, misfit=total - reg, bc=0.0, reg=reg, grad=grad_theta)


def loss_stochastic(
    params: nets.NetParams,
    batch_nodes,
    psi0: WaveField,
    obs: ObservationSet,
    dataset: StochasticDataset,
    cfg: SolveConfig,
    lam_reg: float,
    weights: tuple = (1.0, 1.0, 1e-4),
    n_total: int | None = None,
) -> LossParts:
    """Three-part operator-network loss over a minibatch of z-nodes.

    Per node: (1) sensor misfit of the wave computed from the predicted
    potential, (2) squared mismatch of the predicted potential against its
    known endpoint values, (3) Tikhonov term lam_reg * h * sum V^2. The
    weighted per-node sums are scaled by n_total / batch so the result is an
    unbiased estimate of the full-dataset loss.
    """
    batch_nodes = list(batch_nodes)
    if not batch_nodes:
        raise ValueError("empty batch")
    w_mis, w_bc, w_reg = weights
    grid = psi0.grid
    x = grid.points
    if n_total is None:
        n_total = dataset.nodes_z.size
    scale = n_total / len(batch_nodes)

    misfit = bc = reg = 0.0
    grad = np.zeros_like(params.flat)
    for k in batch_nodes:
        u = dataset.u_table[k]
        v_grid = nets.deeponet_eval(params, u, x)
        v_b = nets.deeponet_eval(params, u, grid.b)
        sensors, observed = obs.for_node(k)
        mis_k, grad_v = loss_and_adjoint_gradient(
            psi0, PotentialField(grid, v_grid), cfg, sensors, observed, 0.0
        )
        bc_a = v_grid[0] - dataset.boundary[k, 0]  # x_0 is the left endpoint
        bc_b = v_b - dataset.boundary[k, 1]
        reg_k = grid.h * float(np.sum(v_grid**2))

        misfit += w_mis * mis_k
        bc += w_bc * (bc_a**2 + bc_b**2)
        reg += w_reg * lam_reg * reg_k

        up_grid = w_mis * grad_v + w_reg * lam_reg * grid.h * 2.0 * v_grid
        up_grid[0] += w_bc * 2.0 * bc_a
        y_all = np.concatenate([x, [grid.b]])
        up_all = np.concatenate([up_grid, [w_bc * 2.0 * bc_b]])
        g_flat, _, _ = nets.deeponet_backward(params, u, y_all, up_all)
        grad += g_flat

    total = scale * (misfit + bc + reg)
    return LossParts(
        total=total,
        misfit=scale * misfit,
        bc=scale * bc,
        reg=scale * reg,
        grad=scale * grad,
    )


# -- parameter updates -------------------------------------------------------


def sgd_step(theta: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """Plain descent theta - eta * grad."""
    if theta.shape != grad.shape:
        raise ValueError("theta and grad shapes differ")
    return theta - eta * grad


def sgld_step(
    theta: np.ndarray,
    grad_logpost: np.ndarray,
    eta: float,
    tau: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Langevin ascent theta + eta * grad_logpost + N(0, 2 eta / tau).

    tau = math.inf disables the noise (and leaves the generator untouched).
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    out = theta + eta * grad_logpost
    if not math.isinf(tau):
        out = out + rng.standard_normal(theta.size) * math.sqrt(2.0 * eta / tau)
    return out


def psgld_step(
    theta: np.ndarray,
    grad_logpost: np.ndarray,
    state: np.ndarray,
    eta: float,
    tau: float,
    lam_pre: float,
    omega: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Diagonally preconditioned Langevin step.

    state' = (1 - omega) state + omega g*g keeps a moving average of squared
    stochastic gradients; P = 1 / (lam_pre + sqrt(state')) preconditions both
    the drift and the noise covariance 2 eta P / tau. The preconditioner is
    frozen within the step, so no curvature correction term appears.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if state.shape != theta.shape or np.any(state < 0):
        raise ValueError("state must be a nonnegative vector matching theta")
    new_state = (1.0 - omega) * state + omega * grad_logpost**2
    precond = 1.0 / (lam_pre + np.sqrt(new_state))
    out = theta + eta * precond * grad_logpost
    if not math.isinf(tau):
        out = out + rng.standard_normal(theta.size) * np.sqrt(
            2.0 * eta * precond / tau
        )
    return out, new_state


# -- training loop -----------------------------------------------------------


@dataclass
class TrainProblem:
    """Everything the loop needs: initial parameters, dataset size, and a
    callback (flat_params, batch_indices) -> LossParts estimating the
    full-dataset loss."""

    params0: nets.NetParams
    n_data: int
    loss_grad: Callable[[np.ndarray, np.ndarray], LossParts]


@dataclass
class TrainResult:
    params: nets.NetParams
    samples: PosteriorSamples | None
    history: list  # rows (iter, epoch, loss, misfit, bc, reg, eta)


def run_training(problem: TrainProblem, cfg: TrainConfig) -> TrainResult:
    """Minibatch loop with per-purpose RNG streams (batch order, noise).

    sgd descends on the loss; sgld/psgld ascend the log posterior and
    collect thinned posterior samples after ``burn_in`` iterations.
    """
    if cfg.batch_size > problem.n_data:
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds dataset size {problem.n_data}"
        )
    sampler = cfg.optimizer in ("sgld", "psgld")
    iters_per_epoch = -(-problem.n_data // cfg.batch_size)
    total_iters = cfg.epochs * iters_per_epoch
    if sampler and total_iters > 0 and cfg.burn_in >= total_iters:
        raise ValueError(
            f"burn_in {cfg.burn_in} must be < total iterations {total_iters}"
        )

    batch_ss, noise_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    rng_batch = np.random.default_rng(batch_ss)
    rng_noise = np.random.default_rng(noise_ss)

    theta = problem.params0.flat.copy()
    state = np.zeros_like(theta)
    sigma2x2 = 1.0 if cfg.likelihood_std is None else 2.0 * cfg.likelihood_std**2
    history: list = []
    collected: list = []
    it = 0
    for epoch in range(cfg.epochs):
        order = rng_batch.permutation(problem.n_data)
        for lo in range(0, problem.n_data, cfg.batch_size):
            batch_ids = order[lo : lo + cfg.batch_size]
            parts = problem.loss_grad(theta, batch_ids)
            if not np.isfinite(parts.total):
                raise TrainingDivergedError(it, parts.total, history)
            eta = cfg.eta0 / (1.0 + cfg.decay * it)
            if cfg.optimizer == "sgd":
                theta = sgd_step(theta, parts.grad, eta)
            else:
                glp = -theta / cfg.prior_std**2 - parts.grad / sigma2x2
                if cfg.optimizer == "sgld":
                    theta = sgld_step(theta, glp, eta, cfg.tau, rng_noise)
                else:
                    theta, state = psgld_step(
                        theta, glp, state, eta, cfg.tau, cfg.lam_pre, cfg.omega,
                        rng_noise,
                    )
            history.append(
                (it, epoch, parts.total, parts.misfit, parts.bc, parts.reg, eta)
            )
            it += 1
            done = it - cfg.burn_in
            if sampler and done > 0 and done % cfg.thin == 0:
                collected.append(theta.copy())

    params = nets.NetParams(problem.params0.spec, theta, problem.params0.rng_seed)
    samples = None
    if sampler:
        stacked = (
            np.stack(collected)
            if collected
            else np.zeros((0, theta.size))
        )
        samples = PosteriorSamples(stacked, cfg.burn_in, cfg.thin)
    return TrainResult(params=params, samples=samples, history=history)


def posterior_stats(
    samples: PosteriorSamples,
    eval_points: np.ndarray,
    surrogate_eval: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and population std of surrogate outputs over samples.

    ``surrogate_eval(flat, eval_points)`` maps one parameter vector to the
    curve values.
    """
    if len(samples) == 0:
        raise ValueError("no posterior samples")
    curves = np.stack([surrogate_eval(s, eval_points) for s in samples.samples])
    return curves.mean(axis=0), curves.std(axis=0)
