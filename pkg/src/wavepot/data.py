"""Reference potentials, z-quadrature, sensor layout, synthetic observations.

Observation noise convention: independent Normal(0, sigma^2) draws are added
to the real part and to the imaginary part of each sensor value. Draws come
from per-node substreams spawned off the dataset seed, so generation is
reproducible no matter in which order the nodes are processed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .spectral import QuadratureRule, SpectralGrid, make_grid
from .tssp import SolveConfig, tssp_solve
from .spectral import PotentialField, WaveField

__all__ = [
    "ObservationSet",
    "StochasticDataset",
    "potential_quadratic",
    "potential_stochastic",
    "gauss_legendre",
    "place_sensors",
    "apply_observation_noise",
    "generate_observations",
    "assemble_stochastic_dataset",
    "save_observations",
    "load_observations",
    "save_dataset",
    "load_dataset",
]


def potential_quadratic(x):
    """Harmonic reference potential V(x) = x^2."""
    return np.asarray(x, dtype=np.float64) ** 2


def potential_stochastic(x, z: float):
    """Stochastic reference potential V(x, z) = (1 + 0.5 z) x^2."""
    return (1.0 + 0.5 * z) * np.asarray(x, dtype=np.float64) ** 2


def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1, 1]."""
    if not 1 <= n <= 64:
        raise ValueError(f"n must lie in 1..64, got {n}")
    nodes, weights = np.polynomial.legendre.leggauss(n)
    # leggauss weights sum to 2 - O(1e-15); renormalize so the rule's
    # exactness invariants hold at the documented 1e-12
    weights = weights * (2.0 / weights.sum())
    return QuadratureRule(nodes, weights)


def place_sensors(grid: SpectralGrid, n: int) -> np.ndarray:
    """Indices of the grid points nearest to n equally spaced coordinates.

    The coordinates run from a to b inclusive; the right endpoint snaps to
    the last stored point (no periodic wrap), and collisions are removed.
    n = M returns the whole grid.
    """
    if not 1 <= n <= grid.M:
        raise ValueError(f"need 1 <= n <= M={grid.M}, got {n}")
    if n == grid.M:
        return np.arange(grid.M)
    targets = np.linspace(grid.a, grid.b, n)
    idx = np.rint((targets - grid.a) / grid.h).astype(np.intp)
    return np.unique(np.minimum(idx, grid.M - 1))


@dataclass(frozen=True)
class ObservationSet:
    """Noisy terminal-time sensor readings, one record per z-node."""

    sensors: np.ndarray  # (N,) int grid indices, ascending
    sensor_x: np.ndarray  # (N,) coordinates
    nodes: np.ndarray  # (K,) z values
    per_z: np.ndarray  # (K, N) complex observations
    rule: QuadratureRule
    sigma: float
    seed: int
    solve_meta: SolveConfig

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("sigma must be nonnegative")
        if np.any(np.diff(self.sensors) <= 0):
            raise ValueError("sensor indices must be strictly ascending")
        if self.per_z.shape != (self.nodes.size, self.sensors.size):
            raise ValueError("per_z must have one row of N values per node")

    @property
    def n_sensors(self) -> int:
        return self.sensors.size

    def for_node(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(sensor indices, complex observations) at node k."""
        return self.sensors, self.per_z[k]

    def packed_input(self, k: int) -> np.ndarray:
        """Observations at node k packed as 2N reals: all Re, then all Im."""
        row = self.per_z[k]
        return np.concatenate([row.real, row.imag])


def apply_observation_noise(clean: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add Normal(0, sigma^2) to Re and Im of each entry, row k drawing from
    the k-th substream of ``seed``."""
    clean = np.atleast_2d(np.asarray(clean, dtype=np.complex128))
    if sigma == 0.0:
        return clean.copy()
    out = np.empty_like(clean)
    streams = np.random.SeedSequence(seed).spawn(clean.shape[0])
    for k, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        re = rng.normal(0.0, sigma, clean.shape[1])
        im = rng.normal(0.0, sigma, clean.shape[1])
        out[k] = clean[k] + re + 1j * im
    return out


def generate_observations(
    potential,
    psi0: WaveField,
    cfg: SolveConfig,
    grid: SpectralGrid,
    rule: QuadratureRule,
    sensors: np.ndarray,
    sigma: float,
    seed: int,
) -> ObservationSet:
    """Solve the forward problem at every z-node and read noisy sensors.

    ``potential(x, z)`` evaluates the true potential on the grid; the
    deterministic problem is the single-node rule (node 0, weight 2).
    """
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    sensors = np.asarray(sensors, dtype=np.intp)
    clean = np.empty((len(rule), sensors.size), dtype=np.complex128)
    for k, z in enumerate(rule.nodes):
        V = PotentialField(grid, potential(grid.points, float(z)))
        clean[k] = tssp_solve(psi0, V, cfg).values[sensors]
    noisy = apply_observation_noise(clean, sigma, seed)
    return ObservationSet(
        sensors=sensors,
        sensor_x=grid.points[sensors].copy(),
        nodes=rule.nodes,
        per_z=noisy,
        rule=rule,
        sigma=float(sigma),
        seed=int(seed),
        solve_meta=cfg,
    )


@dataclass(frozen=True)
class StochasticDataset:
    """Operator-learning records: one (z-node, evaluation point) pair each.

    ``u_table[k]`` is the packed 2N-real input shared by all records of node
    k; ``boundary[k]`` holds the known potential values at x = a and x = b.
    """

    node_ids: np.ndarray  # (R,) int, R = K * m_eval
    y: np.ndarray  # (R,) evaluation coordinates
    u_table: np.ndarray  # (K, 2N)
    boundary: np.ndarray  # (K, 2) known V(a, z_k), V(b, z_k)
    nodes_z: np.ndarray  # (K,)
    eval_idx: np.ndarray  # (m_eval,) grid indices of the evaluation points

    def __post_init__(self):
        K = self.nodes_z.size
        if self.node_ids.size != K * self.eval_idx.size:
            raise ValueError("record count must equal m_eval * number of nodes")
        if self.node_ids.size != self.y.size:
            raise ValueError("node_ids and y must align")

    @property
    def n_records(self) -> int:
        return self.node_ids.size

    @property
    def m_eval(self) -> int:
        return self.eval_idx.size

    def record(self, i: int) -> tuple[int, np.ndarray, float]:
        """(z-node id, packed input u, coordinate y) of record i."""
        k = int(self.node_ids[i])
        return k, self.u_table[k], float(self.y[i])


def assemble_stochastic_dataset(
    obs: ObservationSet,
    grid: SpectralGrid,
    m_eval: int,
    potential,
) -> StochasticDataset:
    """Cross every z-node with m_eval grid-point evaluation coordinates."""
    eval_idx = place_sensors(grid, m_eval)
    K = obs.nodes.size
    ys = grid.points[eval_idx]
    u_table = np.stack([obs.packed_input(k) for k in range(K)])
    boundary = np.stack(
        [
            [
                float(potential(np.float64(grid.a), float(z))),
                float(potential(np.float64(grid.b), float(z))),
            ]
            for z in obs.nodes
        ]
    )
    node_ids = np.repeat(np.arange(K), eval_idx.size)
    y = np.tile(ys, K)
    return StochasticDataset(
        node_ids=node_ids,
        y=y,
        u_table=u_table,
        boundary=boundary,
        nodes_z=obs.nodes.copy(),
        eval_idx=eval_idx,
    )


# -- persistence ------------------------------------------------------------
#
# Observation sets: one JSON header line, then CSV rows
# (node_idx, sensor_idx, x, re_obs, im_obs). Floats via repr() round-trip
# exactly.


def save_observations(obs: ObservationSet, path) -> None:
    header = {
        "sigma": obs.sigma,
        "seed": obs.seed,
        "sensors": obs.sensors.tolist(),
        "sensor_x": obs.sensor_x.tolist(),
        "nodes": obs.nodes.tolist(),
        "weights": obs.rule.weights.tolist(),
        "solve_meta": {
            "eps": obs.solve_meta.eps,
            "T": obs.solve_meta.T,
            "n_steps": obs.solve_meta.n_steps,
        },
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        fh.write("node_idx,sensor_idx,x,re_obs,im_obs\n")
        for k in range(obs.nodes.size):
            for s, x, v in zip(obs.sensors, obs.sensor_x, obs.per_z[k]):
                fh.write(
                    f"{k},{s},{float(x)!r},{float(v.real)!r},{float(v.imag)!r}\n"
                )


def load_observations(path) -> ObservationSet:
    with open(path) as fh:
        header = json.loads(fh.readline())
        next(fh)  # column names
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    nodes = np.array(header["nodes"])
    sensors = np.array(header["sensors"], dtype=np.intp)
    per_z = np.zeros((nodes.size, sensors.size), dtype=np.complex128)
    pos = {int(s): i for i, s in enumerate(sensors)}
    for k, s, _x, re, im in rows:
        per_z[int(k), pos[int(s)]] = float(re) + 1j * float(im)
    meta = header["solve_meta"]
    return ObservationSet(
        sensors=sensors,
        sensor_x=np.array(header["sensor_x"]),
        nodes=nodes,
        per_z=per_z,
        rule=QuadratureRule(nodes, np.array(header["weights"])),
        sigma=float(header["sigma"]),
        seed=int(header["seed"]),
        solve_meta=SolveConfig(meta["eps"], meta["T"], meta["n_steps"]),
    )


def save_dataset(ds: StochasticDataset, path) -> None:
    """JSON-lines: a header line, then one record per line."""
    with open(path, "w") as fh:
        fh.write(
            json.dumps(
                {
                    "kind": "header",
                    "nodes_z": ds.nodes_z.tolist(),
                    "boundary": ds.boundary.tolist(),
                    "eval_idx": ds.eval_idx.tolist(),
                }
            )
            + "\n"
        )
        for i in range(ds.n_records):
            k, u, y = ds.record(i)
            fh.write(json.dumps({"node": k, "u": u.tolist(), "y": y}) + "\n")


def load_dataset(path) -> StochasticDataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        recs = [json.loads(line) for line in fh if line.strip()]
    nodes_z = np.array(header["nodes_z"])
    eval_idx = np.array(header["eval_idx"], dtype=np.intp)
    node_ids = np.array([r["node"] for r in recs], dtype=np.intp)
    y = np.array([r["y"] for r in recs])
    u_table = np.zeros((nodes_z.size, len(recs[0]["u"])))
    for r in recs:
        u_table[r["node"]] = r["u"]
    return StochasticDataset(
        node_ids=node_ids,
        y=y,
        u_table=u_table,
        boundary=np.array(header["boundary"]),
        nodes_z=nodes_z,
        eval_idx=eval_idx,
    )
