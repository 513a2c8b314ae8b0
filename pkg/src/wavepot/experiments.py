"""Experiment drivers behind the CLI verbs.

Each run writes into its output directory: the resolved config echo
(config.json), plot-ready CSV tables, metrics.json, and manifest.json with
status "complete" or "partial". Nothing time-dependent goes into the files,
so identical configs and seeds reproduce every artifact byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import nets
from .config import ExperimentConfig
from .data import (
    assemble_stochastic_dataset,
    gauss_legendre,
    generate_observations,
    place_sensors,
    potential_quadratic,
    potential_stochastic,
    save_dataset,
    save_observations,
)
from .spectral import (
    PotentialField,
    QuadratureRule,
    WaveField,
    fourier_modes,
    gamma_norm,
    l2_norm,
    make_grid,
    position_density,
    save_field_csv,
    save_field_json,
)
from .train import (
    TrainConfig,
    TrainingDivergedError,
    TrainProblem,
    loss_deterministic,
    loss_stochastic,
    posterior_stats,
    run_training,
)
from .tssp import SolveConfig, gaussian_packet, tssp_solve, z_sensitivity

__all__ = [
    "RunReport",
    "run_test1",
    "run_test2",
    "run_convergence",
    "run_regularity",
    "run_solve",
    "run_generate_data",
    "summarize_run",
    "TEST1_METRIC_KEYS",
    "TEST2_METRIC_KEYS",
]

TEST1_METRIC_KEYS = (
    "problem",
    "optimizer",
    "final_loss",
    "sensor_rms_misfit",
    "sensor_rms_misfit_true",
    "rel_l2_error_potential",
    "rel_l2_error_wave",
    "median_pointwise_std",
)

TEST2_METRIC_KEYS = (
    "problem",
    "optimizer",
    "final_loss",
    "heldout",
    "threshold_two_sigma",
    "rel_l2_mean_potential",
)


@dataclass
class RunReport:
    out_dir: str
    metrics: dict
    extras: dict


# -- artifact helpers ---------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, header, columns) -> None:
    columns = [np.asarray(c) for c in columns]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(out_dir, problem, status, error=None, artifacts=None) -> None:
    _write_json(
        os.path.join(out_dir, "manifest.json"),
        {
            "problem": problem,
            "status": status,
            "error": error,
            "artifacts": sorted(artifacts or []),
        },
    )


def _start_run(cfg: ExperimentConfig, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cfg.echo(os.path.join(out_dir, "config.json"))


def _write_history(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("iter,epoch,loss,misfit,bc,reg,eta\n")
        for it, ep, loss, mis, bc, reg, eta in history:
            fh.write(
                f"{it},{ep},{_fmt(loss)},{_fmt(mis)},{_fmt(bc)},{_fmt(reg)},{_fmt(eta)}\n"
            )


# -- shared experiment pieces -------------------------------------------------


def _grid_of(cfg) -> "make_grid":
    g = cfg["grid"]
    return make_grid(g["a"], g["b"], g["M"])


def _solve_of(cfg) -> SolveConfig:
    return SolveConfig(cfg["epsilon"], cfg["solve"]["T"], cfg["solve"]["n_steps"])


def _psi0_of(cfg, grid) -> WaveField:
    p = cfg["psi0"]
    return gaussian_packet(grid, p["delta"], p["x0"], p["p0"], cfg["epsilon"])


def _train_config(cfg, optimizer, sigma_data) -> TrainConfig:
    tb = cfg["train"]
    sigma_lik = tb["likelihood_std"]
    if sigma_lik is None:
        # tie to the data noise; clean data falls back to a sharp likelihood
        sigma_lik = sigma_data if sigma_data > 0 else 0.01
    return TrainConfig(
        optimizer=optimizer,
        eta0=tb["eta0"],
        decay=tb["decay"],
        tau=tb["tau"],
        lam_reg=tb["lam_reg"],
        lam_pre=tb["lam_pre"],
        omega=tb["omega"],
        prior_std=tb["prior_std"],
        batch_size=tb["batch_size"],
        epochs=tb["epochs"],
        burn_in=tb["burn_in"],
        thin=tb["thin"],
        seed=cfg["seed"],
        likelihood_std=sigma_lik,
        weights=tuple(tb["weights"]),
    )


def _train_or_flush(problem, tcfg, out_dir, problem_name):
    try:
        return run_training(problem, tcfg)
    except TrainingDivergedError as e:
        _write_history(os.path.join(out_dir, "loss_history.csv"), e.history)
        _manifest(out_dir, problem_name, "partial", error=str(e),
                  artifacts=["config.json", "loss_history.csv"])
        raise


def _rel_l2(pred, true) -> float:
    return float(np.linalg.norm(pred - true) / np.linalg.norm(true))


def _sensor_rms(a, b) -> float:
    return float(np.sqrt(np.mean(np.abs(a - b) ** 2)))


# -- Test I: deterministic potential ------------------------------------------


def run_test1(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Recover V(x) = x^2 from terminal sensor data with an MLP surrogate.

    Variants: sgd on clean data, sgld on clean data, sgld on noisy data.
    Emits true-vs-predicted potential (with a posterior std band for the
    samplers), terminal wave and position density under the predicted
    potential, loss history, and metrics.
    """
    _start_run(cfg, out_dir)
    problem = cfg["problem"]
    optimizer, sigma = {
        "test1_sgd_clean": ("sgd", 0.0),
        "test1_sgld_clean": ("sgld", 0.0),
        "test1_sgld_noisy": ("sgld", cfg["sigma"]),
        "custom": (cfg["train"]["optimizer"], cfg["sigma"]),
    }[problem]

    grid = _grid_of(cfg)
    solve_cfg = _solve_of(cfg)
    psi0 = _psi0_of(cfg, grid)
    sensors = place_sensors(grid, cfg["sensors"])
    x = grid.points

    obs = generate_observations(
        lambda xx, z: potential_quadratic(xx),
        psi0, solve_cfg, grid, gauss_legendre(1), sensors, sigma, cfg["seed"],
    )
    save_observations(obs, os.path.join(out_dir, "observations.csv"))

    tb = cfg["train"]
    spec = nets.MlpSpec(tuple(tb["mlp_widths"]))
    params0 = nets.init_params(spec, cfg["seed"])
    lam = tb["lam_reg"]

    def loss_grad(flat, batch):
        return loss_deterministic(
            nets.NetParams(spec, flat, 0), psi0, obs, grid, solve_cfg, lam
        )

    tcfg = _train_config(cfg, optimizer, sigma)
    res = _train_or_flush(TrainProblem(params0, 1, loss_grad), tcfg, out_dir, problem)
    _write_history(os.path.join(out_dir, "loss_history.csv"), res.history)

    std_v = None
    if res.samples is not None and len(res.samples) > 0:
        v_pred, std_v = posterior_stats(
            res.samples, x, lambda f, xx: nets.mlp_eval(nets.NetParams(spec, f, 0), xx)
        )
    else:
        v_pred = nets.mlp_eval(res.params, x)
    v_true = potential_quadratic(x)

    psi_true = tssp_solve(psi0, PotentialField(grid, v_true), solve_cfg)
    psi_pred = tssp_solve(psi0, PotentialField(grid, v_pred), solve_cfg)

    if std_v is None:
        _write_csv(
            os.path.join(out_dir, "potential_fit.csv"),
            ["x", "v_true", "v_pred"], [x, v_true, v_pred],
        )
    else:
        _write_csv(
            os.path.join(out_dir, "potential_fit.csv"),
            ["x", "v_true", "v_pred", "v_std"], [x, v_true, v_pred, std_v],
        )
    _write_csv(
        os.path.join(out_dir, "wave_terminal.csv"),
        ["x", "re_true", "im_true", "re_pred", "im_pred", "n_true", "n_pred"],
        [
            x,
            psi_true.values.real, psi_true.values.imag,
            psi_pred.values.real, psi_pred.values.imag,
            position_density(psi_true), position_density(psi_pred),
        ],
    )

    metrics = {
        "problem": problem,
        "optimizer": optimizer,
        "final_loss": res.history[-1][2] if res.history else None,
        "sensor_rms_misfit": _sensor_rms(psi_pred.values[sensors], obs.per_z[0]),
        "sensor_rms_misfit_true": _sensor_rms(
            psi_pred.values[sensors], psi_true.values[sensors]
        ),
        "rel_l2_error_potential": _rel_l2(v_pred, v_true),
        "rel_l2_error_wave": _rel_l2(psi_pred.values, psi_true.values),
        "median_pointwise_std": (
            float(np.median(std_v)) if std_v is not None else None
        ),
    }
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    _manifest(out_dir, problem, "complete", artifacts=[
        "config.json", "observations.csv", "loss_history.csv",
        "potential_fit.csv", "wave_terminal.csv", "metrics.json",
    ])
    return RunReport(str(out_dir), metrics, {
        "x": x, "v_pred": v_pred, "v_std": std_v, "result": res,
    })


# -- Test II: stochastic potential --------------------------------------------


def run_test2(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Learn V(x, z) = (1 + 0.5 z) x^2 from per-node sensor data with the
    branch/trunk operator surrogate and the three-part loss, then evaluate
    generalization at held-out z values fed only noisy observations."""
    _start_run(cfg, out_dir)
    problem = cfg["problem"]
    grid = _grid_of(cfg)
    solve_cfg = _solve_of(cfg)
    psi0 = _psi0_of(cfg, grid)
    sensors = place_sensors(grid, cfg["sensors"])
    rule = gauss_legendre(cfg["quad_n"])
    sigma = cfg["sigma"]
    x = grid.points

    obs = generate_observations(
        potential_stochastic, psi0, solve_cfg, grid, rule, sensors, sigma,
        cfg["seed"],
    )
    m_eval = cfg["m_eval"] if cfg["m_eval"] is not None else grid.M
    dataset = assemble_stochastic_dataset(obs, grid, m_eval, potential_stochastic)
    save_observations(obs, os.path.join(out_dir, "observations.csv"))
    save_dataset(dataset, os.path.join(out_dir, "dataset.jsonl"))

    tb = cfg["train"]
    n_in = 2 * sensors.size
    spec = nets.DeepOnetSpec(
        (n_in, *tb["branch_hidden"], tb["q"]),
        (1, *tb["trunk_hidden"], tb["q"]),
    )
    params0 = nets.init_params(spec, cfg["seed"])
    lam = tb["lam_reg"]
    weights = tuple(tb["weights"])

    def loss_grad(flat, batch):
        return loss_stochastic(
            nets.NetParams(spec, flat, 0), list(batch), psi0, obs, dataset,
            solve_cfg, lam, weights,
        )

    tcfg = _train_config(cfg, tb["optimizer"], sigma)
    K = rule.nodes.size
    res = _train_or_flush(TrainProblem(params0, K, loss_grad), tcfg, out_dir, problem)
    _write_history(os.path.join(out_dir, "loss_history.csv"), res.history)

    sample_flats = (
        res.samples.samples
        if res.samples is not None and len(res.samples) > 0
        else res.params.flat[None, :]
    )

    def predict_v(u, pts):
        curves = [
            nets.deeponet_eval(nets.NetParams(spec, f, 0), u, pts)
            for f in sample_flats
        ]
        return np.mean(curves, axis=0)

    # per-node curves at the display nodes (the positive quadrature nodes,
    # largest first) and the quadrature average over z
    display = np.argsort(-rule.nodes)[: (rule.nodes > 0).sum()]
    cols_z, cols_x, cols_vt, cols_vp = [], [], [], []
    wave_rows = {k: [] for k in ("z", "x", "re_true", "im_true", "re_pred", "im_pred")}
    v_pred_by_node = {}
    for k in range(K):
        v_pred_by_node[k] = predict_v(obs.packed_input(k), x)
    for k in display:
        z = float(rule.nodes[k])
        v_t = potential_stochastic(x, z)
        v_p = v_pred_by_node[k]
        cols_z.append(np.full(grid.M, z))
        cols_x.append(x)
        cols_vt.append(v_t)
        cols_vp.append(v_p)
        psi_t = tssp_solve(psi0, PotentialField(grid, v_t), solve_cfg).values
        psi_p = tssp_solve(psi0, PotentialField(grid, v_p), solve_cfg).values
        wave_rows["z"].append(np.full(grid.M, z))
        wave_rows["x"].append(x)
        wave_rows["re_true"].append(psi_t.real)
        wave_rows["im_true"].append(psi_t.imag)
        wave_rows["re_pred"].append(psi_p.real)
        wave_rows["im_pred"].append(psi_p.imag)
    _write_csv(
        os.path.join(out_dir, "potential_by_node.csv"),
        ["z", "x", "v_true", "v_pred"],
        [np.concatenate(c) for c in (cols_z, cols_x, cols_vt, cols_vp)],
    )
    _write_csv(
        os.path.join(out_dir, "wave_by_node.csv"),
        list(wave_rows),
        [np.concatenate(wave_rows[k]) for k in wave_rows],
    )

    half_w = 0.5 * rule.weights
    mean_pred = sum(w * v_pred_by_node[k] for k, w in enumerate(half_w))
    mean_true = sum(
        w * potential_stochastic(x, float(z))
        for z, w in zip(rule.nodes, half_w)
    )
    _write_csv(
        os.path.join(out_dir, "potential_mean.csv"),
        ["x", "mean_pred", "mean_true"], [x, mean_pred, mean_true],
    )

    # held-out generalization: noisy observations at unseen z
    single = QuadratureRule(np.array([0.0]), np.array([2.0]))
    heldout = []
    for i, z in enumerate(cfg["test_z"]):
        obs_z = generate_observations(
            lambda xx, _zz, _z=z: potential_stochastic(xx, _z),
            psi0, solve_cfg, grid, single, sensors, sigma,
            cfg["seed"] + 10007 + i,
        )
        v_p = predict_v(obs_z.packed_input(0), x)
        psi_p = tssp_solve(psi0, PotentialField(grid, v_p), solve_cfg).values
        psi_t = tssp_solve(
            psi0, PotentialField(grid, potential_stochastic(x, z)), solve_cfg
        ).values
        heldout.append(
            {
                "z": z,
                "sensor_rms_misfit": _sensor_rms(psi_p[sensors], psi_t[sensors]),
                "sensor_rms_misfit_obs": _sensor_rms(
                    psi_p[sensors], obs_z.per_z[0]
                ),
            }
        )
    _write_csv(
        os.path.join(out_dir, "heldout.csv"),
        ["z", "sensor_rms_misfit", "sensor_rms_misfit_obs", "threshold"],
        [
            [h["z"] for h in heldout],
            [h["sensor_rms_misfit"] for h in heldout],
            [h["sensor_rms_misfit_obs"] for h in heldout],
            [2 * sigma] * len(heldout),
        ],
    )

    metrics = {
        "problem": problem,
        "optimizer": tb["optimizer"],
        "final_loss": res.history[-1][2] if res.history else None,
        "heldout": heldout,
        "threshold_two_sigma": 2 * sigma,
        "rel_l2_mean_potential": _rel_l2(mean_pred, mean_true),
    }
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    _manifest(out_dir, problem, "complete", artifacts=[
        "config.json", "observations.csv", "dataset.jsonl", "loss_history.csv",
        "potential_by_node.csv", "potential_mean.csv", "wave_by_node.csv",
        "heldout.csv", "metrics.json",
    ])
    return RunReport(str(out_dir), metrics, {
        "x": x, "v_pred_by_node": v_pred_by_node, "result": res,
        "predict_v": predict_v, "obs": obs,
    })


# -- diagnostics --------------------------------------------------------------


def run_convergence(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Temporal self-convergence study against a refined reference solve."""
    _start_run(cfg, out_dir)
    grid = _grid_of(cfg)
    cb = cfg["convergence"]
    T = cfg["solve"]["T"]
    eps = cfg["epsilon"]
    if cb["case"] == "plane_wave":
        mu = fourier_modes(grid)
        psi0 = WaveField(grid, np.exp(1j * mu[1] * (grid.points - grid.a)))
        V = PotentialField(grid, np.full(grid.M, 0.7))
    else:
        psi0 = _psi0_of(cfg, grid)
        V = PotentialField(grid, potential_quadratic(grid.points))

    n_list = sorted(cb["n_steps_list"])
    ref = tssp_solve(psi0, V, SolveConfig(eps, T, n_list[-1] * cb["refine"])).values
    ks, errs = [], []
    for n in n_list:
        out = tssp_solve(psi0, V, SolveConfig(eps, T, n)).values
        ks.append(T / n)
        errs.append(float(np.sqrt(grid.h * np.sum(np.abs(out - ref) ** 2))))
    ks = np.array(ks)[::-1]
    errs = np.array(errs)[::-1]  # largest k first
    orders = np.full(ks.size, np.nan)
    for i in range(ks.size - 1):
        if errs[i + 1] > 0:
            orders[i] = np.log(errs[i] / errs[i + 1]) / np.log(ks[i] / ks[i + 1])
    fitted = (
        float(np.polyfit(np.log(ks), np.log(errs), 1)[0])
        if np.all(np.array(errs) > 0)
        else float("nan")
    )
    _write_csv(
        os.path.join(out_dir, "convergence.csv"),
        ["k", "error", "observed_order"], [ks, errs, orders],
    )
    metrics = {
        "case": cb["case"],
        "fitted_order": fitted,
        "k": [float(v) for v in ks],
        "errors": [float(v) for v in errs],
        "max_error": float(np.max(errs)),
    }
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    _manifest(out_dir, "convergence", "complete",
              artifacts=["config.json", "convergence.csv", "metrics.json"])
    return RunReport(str(out_dir), metrics, {"k": ks, "errors": errs})


def run_regularity(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Scaling of the z-derivative of the terminal state with eps.

    Aggregates central-difference z-sensitivities over the quadrature nodes
    into the averaged norm and fits the log-log slope against eps. The probe
    packet starts displaced from the origin: the z-dependence of the
    classical motion is what produces the 1/eps growth, and a packet at rest
    at the center barely feels it.
    """
    _start_run(cfg, out_dir)
    rb = cfg["regularity"]
    eps_list = rb["eps_list"]
    if len(eps_list) < 3:
        raise ValueError("regularity study needs at least 3 eps values")
    grid = _grid_of(cfg)
    rule = gauss_legendre(cfg["quad_n"])
    gamma_dz, gamma_psi = [], []
    for eps in eps_list:
        scfg = SolveConfig(eps, rb["T"], rb["n_steps"])
        psi0 = gaussian_packet(grid, rb["delta"], rb["x0"], 0.0, eps)
        sens = [
            z_sensitivity(psi0, potential_stochastic, float(z), rb["delta_z"], scfg)
            for z in rule.nodes
        ]
        gamma_dz.append(float(np.sqrt(np.sum(0.5 * rule.weights * np.square(sens)))))
        fields = [
            tssp_solve(
                psi0,
                PotentialField(grid, potential_stochastic(grid.points, float(z))),
                scfg,
            )
            for z in rule.nodes
        ]
        gamma_psi.append(gamma_norm(fields, rule))
    gamma_dz = np.array(gamma_dz)
    if np.all(gamma_dz > 1e-8):
        slope = float(np.polyfit(np.log(eps_list), np.log(gamma_dz), 1)[0])
    else:
        slope = float("nan")  # z-independent dynamics: slope undefined
    _write_csv(
        os.path.join(out_dir, "regularity.csv"),
        ["epsilon", "gamma_dz_psi", "gamma_psi", "fitted_slope"],
        [eps_list, gamma_dz, gamma_psi, [slope] * len(eps_list)],
    )
    metrics = {
        "eps_list": [float(e) for e in eps_list],
        "gamma_dz": [float(v) for v in gamma_dz],
        "gamma_psi": [float(v) for v in gamma_psi],
        "slope": slope,
    }
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    _manifest(out_dir, "regularity", "complete",
              artifacts=["config.json", "regularity.csv", "metrics.json"])
    return RunReport(str(out_dir), metrics, {"gamma_dz": gamma_dz})


# -- plain verbs --------------------------------------------------------------


def run_solve(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Forward solve under the reference potential at the configured z."""
    _start_run(cfg, out_dir)
    grid = _grid_of(cfg)
    solve_cfg = _solve_of(cfg)
    psi0 = _psi0_of(cfg, grid)
    V = PotentialField(grid, potential_stochastic(grid.points, cfg["z"]))
    out = tssp_solve(psi0, V, solve_cfg)
    save_field_csv(out, os.path.join(out_dir, "terminal.csv"))
    save_field_json(out, os.path.join(out_dir, "terminal.json"))
    _write_csv(
        os.path.join(out_dir, "density.csv"),
        ["x", "n"], [grid.points, position_density(out)],
    )
    metrics = {
        "z": cfg["z"],
        "l2_initial": l2_norm(psi0),
        "l2_final": l2_norm(out),
        "mass_drift": abs(l2_norm(out) - l2_norm(psi0)) / l2_norm(psi0),
    }
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    _manifest(out_dir, "solve", "complete", artifacts=[
        "config.json", "terminal.csv", "terminal.json", "density.csv",
        "metrics.json",
    ])
    return RunReport(str(out_dir), metrics, {"terminal": out})


def run_generate_data(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Write the observation set (and, for the stochastic problem, the
    operator-learning dataset) implied by the config."""
    _start_run(cfg, out_dir)
    grid = _grid_of(cfg)
    solve_cfg = _solve_of(cfg)
    psi0 = _psi0_of(cfg, grid)
    sensors = place_sensors(grid, cfg["sensors"])
    problem = cfg["problem"]
    artifacts = ["config.json", "observations.csv", "metrics.json"]
    if problem == "test2":
        rule = gauss_legendre(cfg["quad_n"])
        potential = potential_stochastic
    else:
        rule = gauss_legendre(1)
        potential = lambda xx, z: potential_quadratic(xx)  # noqa: E731
    sigma = 0.0 if problem.endswith("_clean") else cfg["sigma"]
    obs = generate_observations(
        potential, psi0, solve_cfg, grid, rule, sensors, sigma, cfg["seed"]
    )
    save_observations(obs, os.path.join(out_dir, "observations.csv"))
    if problem == "test2":
        m_eval = cfg["m_eval"] if cfg["m_eval"] is not None else grid.M
        ds = assemble_stochastic_dataset(obs, grid, m_eval, potential_stochastic)
        save_dataset(ds, os.path.join(out_dir, "dataset.jsonl"))
        artifacts.append("dataset.jsonl")
    metrics = {
        "nodes": int(rule.nodes.size),
        "sensors": int(sensors.size),
        "sigma": sigma,
    }
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    _manifest(out_dir, problem, "complete", artifacts=artifacts)
    return RunReport(str(out_dir), metrics, {"obs": obs})


def summarize_run(run_dir) -> str:
    """Compact text summary of a finished run directory."""
    lines = []
    man_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(man_path):
        raise FileNotFoundError(f"no manifest.json in {run_dir}")
    with open(man_path) as fh:
        man = json.load(fh)
    lines.append(f"run: {run_dir}")
    lines.append(f"problem: {man['problem']}  status: {man['status']}")
    if man.get("error"):
        lines.append(f"error: {man['error']}")
    met_path = os.path.join(run_dir, "metrics.json")
    if os.path.exists(met_path):
        with open(met_path) as fh:
            metrics = json.load(fh)
        for key in sorted(metrics):
            lines.append(f"  {key}: {metrics[key]}")
    return "\n".join(lines)
