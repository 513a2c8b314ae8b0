"""Recover the external potential of a semiclassical Schrodinger equation
from terminal-time wave observations, via a split-step spectral solver with
exact adjoint gradients and neural-network potential surrogates."""

from .spectral import (
    PotentialField,
    QuadratureRule,
    SpectralGrid,
    WaveField,
    current_density,
    forward_transform,
    fourier_modes,
    gamma_norm,
    inverse_transform,
    l2_norm,
    make_grid,
    position_density,
)
from .tssp import (
    SolveConfig,
    Trajectory,
    fd_gradient,
    gaussian_packet,
    loss_and_adjoint_gradient,
    tssp_solve,
    tssp_step,
    z_sensitivity,
)
from .nets import (
    DeepOnetSpec,
    MlpSpec,
    NetParams,
    backward,
    deeponet_eval,
    init_params,
    mlp_eval,
    param_count,
)
from .data import (
    ObservationSet,
    StochasticDataset,
    assemble_stochastic_dataset,
    gauss_legendre,
    generate_observations,
    place_sensors,
    potential_quadratic,
    potential_stochastic,
)
from .train import (
    PosteriorSamples,
    TrainConfig,
    TrainingDivergedError,
    loss_deterministic,
    loss_stochastic,
    posterior_stats,
    psgld_step,
    run_training,
    sgd_step,
    sgld_step,
)

__version__ = "0.1.0"
