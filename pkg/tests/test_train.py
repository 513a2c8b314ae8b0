import math

import numpy as np
import pytest

from wavepot.data import (
    assemble_stochastic_dataset,
    gauss_legendre,
    generate_observations,
    place_sensors,
    potential_quadratic,
    potential_stochastic,
)
from wavepot.nets import DeepOnetSpec, MlpSpec, NetParams, init_params, mlp_eval
from wavepot.spectral import make_grid
from wavepot.tssp import SolveConfig, gaussian_packet
from wavepot.train import (
    PosteriorSamples,
    TrainConfig,
    TrainingDivergedError,
    TrainProblem,
    loss_deterministic,
    loss_stochastic,
    posterior_stats,
    psgld_step,
    run_training,
    sgd_step,
    sgld_step,
)

GRID = make_grid(-np.pi / 2, np.pi / 2, 64)
CFG = SolveConfig(eps=0.1, T=0.2, n_steps=8)
PSI0 = gaussian_packet(GRID, eps=CFG.eps)
SENSORS = place_sensors(GRID, 16)


def _det_obs(sigma=0.0, seed=0):
    return generate_observations(
        lambda x, z: potential_quadratic(x),
        PSI0, CFG, GRID, gauss_legendre(1), SENSORS, sigma, seed,
    )


def _sto_obs(sigma=0.0, seed=0, n_nodes=3):
    obs = generate_observations(
        potential_stochastic,
        PSI0, CFG, GRID, gauss_legendre(n_nodes), SENSORS, sigma, seed,
    )
    ds = assemble_stochastic_dataset(obs, GRID, GRID.M, potential_stochastic)
    return obs, ds


# -- deterministic loss -------------------------------------------------------


def _mlp_matching_truth():
    # one tanh unit cannot represent x^2; fit a tiny net to the truth by
    # construction instead: use a net evaluating to x^2 is impossible, so
    # tests that need "theta reproducing the true V" use the identity below.
    raise NotImplementedError


def test_loss_deterministic_end_to_end_fd():
    spec = MlpSpec((1, 10, 10, 1))
    params = init_params(spec, 5)
    obs = _det_obs()
    lam = 1e-3
    parts = loss_deterministic(params, PSI0, obs, GRID, CFG, lam)
    assert parts.total == pytest.approx(parts.misfit + parts.reg, rel=1e-12)

    rng = np.random.default_rng(9)
    coords = rng.choice(params.flat.size, 10, replace=False)
    d = 1e-5
    for i in coords:
        fp, fm = params.flat.copy(), params.flat.copy()
        fp[i] += d
        fm[i] -= d
        lp = loss_deterministic(NetParams(spec, fp, 0), PSI0, obs, GRID, CFG, lam).total
        lm = loss_deterministic(NetParams(spec, fm, 0), PSI0, obs, GRID, CFG, lam).total
        gfd = (lp - lm) / (2 * d)
        if abs(parts.grad[i]) > 1e-8:
            assert abs(parts.grad[i] - gfd) / abs(parts.grad[i]) < 1e-4


def test_loss_deterministic_zero_at_truth():
    # observations generated from the surrogate itself: zero misfit, and with
    # lam = 0 the gradient vanishes identically
    spec = MlpSpec((1, 6, 1))
    params = init_params(spec, 2)
    from wavepot.spectral import PotentialField
    from wavepot.tssp import tssp_solve

    v = mlp_eval(params, GRID.points)
    obs = _det_obs()
    exact = tssp_solve(PSI0, PotentialField(GRID, v), CFG).values[SENSORS]
    obs.per_z[0][:] = exact
    parts = loss_deterministic(params, PSI0, obs, GRID, CFG, 0.0)
    assert parts.total == pytest.approx(0.0, abs=1e-25)
    assert np.max(np.abs(parts.grad)) < 1e-11


def test_loss_deterministic_reg_linear():
    spec = MlpSpec((1, 6, 1))
    params = init_params(spec, 2)
    obs = _det_obs()
    a = loss_deterministic(params, PSI0, obs, GRID, CFG, 1e-3)
    b = loss_deterministic(params, PSI0, obs, GRID, CFG, 2e-3)
    assert b.reg == pytest.approx(2 * a.reg, rel=1e-12)


# -- stochastic loss ----------------------------------------------------------


def test_loss_stochastic_parts_and_fd():
    obs, ds = _sto_obs()
    spec = DeepOnetSpec((2 * SENSORS.size, 12, 6), (1, 12, 6))
    params = init_params(spec, 1)
    w = (1.0, 0.7, 0.3)
    lam = 1e-2
    parts = loss_stochastic(params, [0, 2], PSI0, obs, ds, CFG, lam, w)
    assert parts.total == pytest.approx(parts.misfit + parts.bc + parts.reg, rel=1e-12)

    rng = np.random.default_rng(3)
    coords = rng.choice(params.flat.size, 8, replace=False)
    d = 1e-5
    for i in coords:
        fp, fm = params.flat.copy(), params.flat.copy()
        fp[i] += d
        fm[i] -= d
        lp = loss_stochastic(NetParams(spec, fp, 0), [0, 2], PSI0, obs, ds, CFG, lam, w).total
        lm = loss_stochastic(NetParams(spec, fm, 0), [0, 2], PSI0, obs, ds, CFG, lam, w).total
        gfd = (lp - lm) / (2 * d)
        if abs(parts.grad[i]) > 1e-8:
            assert abs(parts.grad[i] - gfd) / abs(parts.grad[i]) < 1e-4


def test_loss_stochastic_singleton_batches_average_to_full():
    obs, ds = _sto_obs()
    spec = DeepOnetSpec((2 * SENSORS.size, 10, 5), (1, 10, 5))
    params = init_params(spec, 4)
    K = ds.nodes_z.size
    full = loss_stochastic(params, list(range(K)), PSI0, obs, ds, CFG, 1e-3)
    singles = [
        loss_stochastic(params, [k], PSI0, obs, ds, CFG, 1e-3) for k in range(K)
    ]
    avg_grad = np.mean([s.grad for s in singles], axis=0)
    avg_total = np.mean([s.total for s in singles])
    assert np.allclose(avg_grad, full.grad, rtol=1e-12, atol=1e-14)
    assert avg_total == pytest.approx(full.total, rel=1e-12)


def test_loss_stochastic_empty_batch():
    obs, ds = _sto_obs()
    spec = DeepOnetSpec((2 * SENSORS.size, 10, 5), (1, 10, 5))
    with pytest.raises(ValueError):
        loss_stochastic(init_params(spec, 0), [], PSI0, obs, ds, CFG, 0.0)


def test_loss_stochastic_boundary_part_zero_when_matching():
    # zero potential surrogate (zeroed output layers) against boundary
    # targets forced to zero: part 2 vanishes
    obs, ds = _sto_obs()
    spec = DeepOnetSpec((2 * SENSORS.size, 8, 4), (1, 8, 4))
    params = init_params(spec, 0)
    flat = params.flat.copy()
    # zero the trunk output layer -> t = 0 -> V = 0 everywhere
    flat[-(8 * 4 + 4):] = 0.0
    params = NetParams(spec, flat, 0)
    ds.boundary[:] = 0.0
    parts = loss_stochastic(params, [0, 1, 2], PSI0, obs, ds, CFG, 0.0)
    assert parts.bc == 0.0
    assert parts.reg == 0.0


# -- step rules ---------------------------------------------------------------


def test_sgd_step():
    theta = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(sgd_step(theta, np.zeros(3), 0.5), theta)
    assert np.array_equal(sgd_step(theta, theta, 1.0), np.zeros(3))
    g = np.array([0.3, 0.1, -0.2])
    two_half = sgd_step(sgd_step(theta, g, 0.25), g, 0.25)
    assert np.allclose(two_half, sgd_step(theta, g, 0.5), atol=1e-15)


def test_sgld_reduces_to_ascent_without_noise():
    theta = np.linspace(-1, 1, 5)
    g = np.array([0.5, -0.2, 0.0, 0.1, 0.9])
    rng = np.random.default_rng(0)
    out = sgld_step(theta, g, 0.01, math.inf, rng)
    assert np.array_equal(out, theta + 0.01 * g)


def test_sgld_noise_variance():
    eta, tau = 1e-3, 2.0
    n = 100_000
    rng = np.random.default_rng(42)
    inc = sgld_step(np.zeros(n), np.zeros(n), eta, tau, rng)
    assert inc.var() == pytest.approx(2 * eta / tau, rel=0.05)


def test_sgld_deterministic_under_seed():
    theta = np.ones(10)
    g = np.full(10, 0.3)
    a = sgld_step(theta, g, 1e-2, 1.0, np.random.default_rng(7))
    b = sgld_step(theta, g, 1e-2, 1.0, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_sgld_rejects_bad_eta():
    with pytest.raises(ValueError):
        sgld_step(np.zeros(2), np.zeros(2), 0.0, 1.0, np.random.default_rng(0))


def test_psgld_identity_preconditioner_equals_sgld():
    # omega -> state' = 0 path with lam_pre = 1 gives P = I
    theta = np.linspace(0, 1, 8)
    g = np.zeros(8)
    a = psgld_step(theta, g, np.zeros(8), 1e-2, 1.0, 1.0, 0.5,
                   np.random.default_rng(3))[0]
    b = sgld_step(theta, g, 1e-2, 1.0, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_psgld_preconditioner_arithmetic():
    # omega = 1, g = 3 elementwise, lam_pre = 1 -> P_ii = 1/(1+3)
    theta = np.zeros(4)
    g = np.full(4, 3.0)
    out, state = psgld_step(theta, g, np.zeros(4), 0.1, math.inf, 1.0, 1.0 - 1e-15,
                            np.random.default_rng(0))
    assert np.allclose(state, 9.0, rtol=1e-12)
    assert np.allclose(out, 0.1 * 3.0 / 4.0, rtol=1e-9)


def test_psgld_diagonal_structure():
    # scaling one gradient coordinate leaves the other coordinates alone
    theta = np.zeros(3)
    g1 = np.array([1.0, 1.0, 1.0])
    g2 = np.array([1.0, 10.0, 1.0])
    s1 = psgld_step(theta, g1, np.zeros(3), 0.1, math.inf, 0.1, 0.5,
                    np.random.default_rng(0))[1]
    s2 = psgld_step(theta, g2, np.zeros(3), 0.1, math.inf, 0.1, 0.5,
                    np.random.default_rng(0))[1]
    assert s1[0] == s2[0] and s1[2] == s2[2] and s2[1] != s1[1]


def test_psgld_noise_covariance():
    eta, tau, lam_pre = 1e-3, 1.5, 0.5
    n = 100_000
    g = np.full(n, 2.0)
    rng = np.random.default_rng(1)
    out, state = psgld_step(np.zeros(n), np.zeros(n) + 0.0, state=np.full(n, 4.0),
                            eta=eta, tau=tau, lam_pre=lam_pre, omega=0.5, rng=rng)
    # state' = 2.0 elementwise (g = 0 here), P = 1/(0.5 + sqrt(2))
    P = 1.0 / (lam_pre + np.sqrt(2.0))
    assert out.var() == pytest.approx(2 * eta * P / tau, rel=0.05)


def test_psgld_validates_state():
    with pytest.raises(ValueError):
        psgld_step(np.zeros(3), np.zeros(3), np.array([-1.0, 0, 0]), 0.1, 1.0,
                   0.1, 0.5, np.random.default_rng(0))


# -- training loop ------------------------------------------------------------


def _quadratic_problem(n_data=6, dim=4):
    # synthetic quadratic target: loss = |theta - 1|^2 restricted to batch rows
    spec = MlpSpec((1, 1, 1))
    params0 = NetParams(spec, np.zeros(4), 0)

    def loss_grad(theta, batch):
        from wavepot.train import LossParts

        r = theta - 1.0
        total = float(r @ r) * n_data / batch.size
        return LossParts(total, total, 0.0, 0.0, 2 * r * n_data / batch.size)

    return TrainProblem(params0, n_data, loss_grad)


def test_run_training_zero_epochs():
    prob = _quadratic_problem()
    res = run_training(prob, TrainConfig(optimizer="sgd", epochs=0))
    assert np.array_equal(res.params.flat, prob.params0.flat)
    assert res.history == []


def test_run_training_sgd_descends():
    prob = _quadratic_problem()
    res = run_training(
        prob, TrainConfig(optimizer="sgd", eta0=0.2, decay=0.0, epochs=60,
                          batch_size=6)
    )
    assert res.history[-1][2] < 1e-6
    assert res.samples is None


def test_run_training_bitwise_reproducible():
    prob = _quadratic_problem()
    cfg = TrainConfig(optimizer="sgld", eta0=1e-3, epochs=10, batch_size=2,
                      burn_in=5, thin=2, seed=11, likelihood_std=0.5)
    a = run_training(prob, cfg)
    b = run_training(prob, cfg)
    assert np.array_equal(a.params.flat, b.params.flat)
    assert np.array_equal(a.samples.samples, b.samples.samples)
    assert a.history == b.history


def test_run_training_sample_count():
    prob = _quadratic_problem(n_data=4)
    # 4 data, batch 2 -> 2 iters/epoch; 10 epochs -> 20 iters
    cfg = TrainConfig(optimizer="sgld", eta0=1e-4, epochs=10, batch_size=2,
                      burn_in=6, thin=3, seed=0)
    res = run_training(prob, cfg)
    assert len(res.samples) == (20 - 6) // 3


def test_run_training_burn_in_validation():
    prob = _quadratic_problem(n_data=4)
    with pytest.raises(ValueError):
        run_training(prob, TrainConfig(optimizer="sgld", epochs=1, batch_size=4,
                                       burn_in=5))


def test_run_training_batch_size_validation():
    prob = _quadratic_problem(n_data=4)
    with pytest.raises(ValueError):
        run_training(prob, TrainConfig(optimizer="sgd", batch_size=5))


def test_run_training_aborts_on_nonfinite():
    spec = MlpSpec((1, 1, 1))
    params0 = NetParams(spec, np.zeros(4), 0)

    def bad(theta, batch):
        from wavepot.train import LossParts

        return LossParts(math.nan, math.nan, 0.0, 0.0, np.zeros(4))

    with pytest.raises(TrainingDivergedError) as exc:
        run_training(TrainProblem(params0, 2, bad),
                     TrainConfig(optimizer="sgd", epochs=1, batch_size=2))
    assert exc.value.iteration == 0


def test_sgld_with_infinite_prior_and_unit_scaling_equals_sgd():
    # noise off, prior_std -> inf, likelihood_std None (2 sigma^2 = 1):
    # the ascent step equals plain descent on the loss
    prob = _quadratic_problem()
    cfg_sgld = TrainConfig(optimizer="sgld", eta0=0.01, decay=0.0, epochs=3,
                           batch_size=6, tau=math.inf, prior_std=1e12,
                           burn_in=0, seed=5)
    cfg_sgd = TrainConfig(optimizer="sgd", eta0=0.01, decay=0.0, epochs=3,
                          batch_size=6, seed=5)
    a = run_training(prob, cfg_sgld)
    b = run_training(prob, cfg_sgd)
    assert np.allclose(a.params.flat, b.params.flat, rtol=1e-9, atol=1e-12)


# -- posterior stats ----------------------------------------------------------


def test_posterior_stats_basic():
    spec = MlpSpec((1, 1, 1))
    pts = np.array([0.0, 0.5])

    def ev(flat, x):
        return mlp_eval(NetParams(spec, flat, 0), x)

    one = PosteriorSamples(np.array([[0.0, 0.0, 0.0, 1.5]]), 0, 1)
    mean, std = posterior_stats(one, pts, ev)
    assert np.allclose(mean, 1.5)
    assert np.allclose(std, 0.0)

    # two samples with outputs +c and -c: mean 0, std |c| (population)
    two = PosteriorSamples(
        np.array([[0.0, 0.0, 0.0, 2.0], [0.0, 0.0, 0.0, -2.0]]), 0, 1
    )
    mean, std = posterior_stats(two, pts, ev)
    assert np.allclose(mean, 0.0)
    assert np.allclose(std, 2.0)

    dup = PosteriorSamples(np.vstack([two.samples, two.samples]), 0, 1)
    mean2, std2 = posterior_stats(dup, pts, ev)
    assert np.allclose(mean2, mean) and np.allclose(std2, std)


def test_posterior_stats_empty():
    with pytest.raises(ValueError):
        posterior_stats(PosteriorSamples(np.zeros((0, 3)), 0, 1), np.zeros(2),
                        lambda f, x: x)
