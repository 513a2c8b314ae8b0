"""Potential surrogates: a plain MLP and a branch/trunk operator network.

Both are small enough that forward evaluation and exact reverse-mode
gradients are written directly in numpy. Parameters live in one flat
float64 vector with a fixed canonical layout:

    layer 0 weights (fan_in x fan_out, row-major), layer 0 biases,
    layer 1 weights, layer 1 biases, ...

and for the operator network all branch layers come before all trunk
layers. Hidden layers are activated, the final layer of every stack is
affine. The operator network's output is the plain dot product of the
branch and trunk feature vectors, with no extra bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MlpSpec",
    "DeepOnetSpec",
    "NetParams",
    "param_count",
    "init_params",
    "mlp_eval",
    "mlp_backward",
    "deeponet_eval",
    "deeponet_backward",
    "branch_features",
    "trunk_features",
    "combine_features",
    "backward",
    "save_params",
    "load_params",
]

_ACTIVATIONS = {
    # name -> (f, f' expressed through the activated value y = f(z))
    "tanh": (np.tanh, lambda y: 1.0 - y**2),
}


def _check_widths(widths, what: str) -> tuple:
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"{what} must list >= 2 positive layer widths, got {widths}")
    return widths


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected scalar-to-scalar network x -> V(x)."""

    layer_widths: tuple = (1, 50, 50, 50, 50, 50, 1)
    activation: str = "tanh"

    def __post_init__(self):
        widths = _check_widths(self.layer_widths, "layer_widths")
        if widths[0] != 1 or widths[-1] != 1:
            raise ValueError("MLP maps one coordinate to one value: widths 1 .. 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_widths", widths)


@dataclass(frozen=True)
class DeepOnetSpec:
    """Branch/trunk operator network (u, y) -> dot(branch(u), trunk(y)).

    The branch encodes the 2N sensor reals, the trunk the evaluation
    coordinate; both end in q features.
    """

    branch_widths: tuple = (100, 100, 100, 50)
    trunk_widths: tuple = (1, 100, 100, 50)
    activation: str = "tanh"

    def __post_init__(self):
        bw = _check_widths(self.branch_widths, "branch_widths")
        tw = _check_widths(self.trunk_widths, "trunk_widths")
        if tw[0] != 1:
            raise ValueError("trunk input width must be 1 (the coordinate)")
        if bw[-1] != tw[-1]:
            raise ValueError(
                f"branch and trunk must emit equally many features, "
                f"got {bw[-1]} vs {tw[-1]}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "branch_widths", bw)
        object.__setattr__(self, "trunk_widths", tw)

    @property
    def q(self) -> int:
        return self.branch_widths[-1]


@dataclass
class NetParams:
    """Flat parameter vector plus its architecture."""

    spec: MlpSpec | DeepOnetSpec
    flat: np.ndarray
    rng_seed: int

    def __post_init__(self):
        flat = np.asarray(self.flat, dtype=np.float64)
        if flat.shape != (param_count(self.spec),):
            raise ValueError(
                f"flat vector has {flat.shape}, spec implies "
                f"({param_count(self.spec)},)"
            )
        self.flat = flat


def _stack_count(widths) -> int:
    return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1))


def param_count(spec) -> int:
    if isinstance(spec, MlpSpec):
        return _stack_count(spec.layer_widths)
    return _stack_count(spec.branch_widths) + _stack_count(spec.trunk_widths)


def _init_stack(widths, rng) -> np.ndarray:
    # Glorot-uniform weights, zero biases, drawn layer by layer
    chunks = []
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        r = np.sqrt(6.0 / (w_in + w_out))
        chunks.append(rng.uniform(-r, r, size=w_in * w_out))
        chunks.append(np.zeros(w_out))
    return np.concatenate(chunks)


def init_params(spec, seed: int) -> NetParams:
    """Deterministic Glorot-style initialization."""
    rng = np.random.default_rng(seed)
    if isinstance(spec, MlpSpec):
        flat = _init_stack(spec.layer_widths, rng)
    else:
        flat = np.concatenate(
            [_init_stack(spec.branch_widths, rng), _init_stack(spec.trunk_widths, rng)]
        )
    return NetParams(spec, flat, int(seed))


def _unflatten(flat: np.ndarray, widths) -> list:
    layers = []
    pos = 0
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        W = flat[pos : pos + w_in * w_out].reshape(w_in, w_out)
        pos += w_in * w_out
        b = flat[pos : pos + w_out]
        pos += w_out
        layers.append((W, b))
    return layers


def _forward(layers, X: np.ndarray, act):
    """Run the stack on rows of X; returns (output, post-activation cache)."""
    f = _ACTIVATIONS[act][0]
    a = X
    acts = [a]
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        a = f(z) if i < last else z
        acts.append(a)
    return a, acts


def _vjp(layers, acts, delta: np.ndarray, act):
    """Reverse sweep; returns (flat gradient for this stack, dL/dX)."""
    df = _ACTIVATIONS[act][1]
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads[i] = np.concatenate([gW.ravel(), gb])
        delta = delta @ W.T
        if i > 0:
            delta = delta * df(acts[i])
    return np.concatenate(grads), delta


def _as_column(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    return arr.reshape(-1, 1), scalar


def mlp_eval(params: NetParams, x):
    """Evaluate the MLP at a coordinate or an array of coordinates."""
    if not isinstance(params.spec, MlpSpec):
        raise ValueError("mlp_eval needs MLP parameters")
    X, scalar = _as_column(x)
    out, _ = _forward(_unflatten(params.flat, params.spec.layer_widths), X,
                      params.spec.activation)
    out = out[:, 0]
    return float(out[0]) if scalar else out


def mlp_backward(params: NetParams, x, upstream):
    """Gradients of sum_i upstream_i * mlp(x_i) w.r.t. parameters and x."""
    if not isinstance(params.spec, MlpSpec):
        raise ValueError("mlp_backward needs MLP parameters")
    X, scalar = _as_column(x)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (X.shape[0],))
    layers = _unflatten(params.flat, params.spec.layer_widths)
    _, acts = _forward(layers, X, params.spec.activation)
    grad_flat, dX = _vjp(layers, acts, up.reshape(-1, 1), params.spec.activation)
    gx = dX[:, 0]
    return grad_flat, (float(gx[0]) if scalar else gx)


def _split_flat(params: NetParams):
    spec = params.spec
    nb = _stack_count(spec.branch_widths)
    return params.flat[:nb], params.flat[nb:]


def branch_features(params: NetParams, u) -> np.ndarray:
    """Feature vector b(u) of the branch stack, shape (q,)."""
    spec = params.spec
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (spec.branch_widths[0],):
        raise ValueError(
            f"branch input has shape {u.shape}, expected ({spec.branch_widths[0]},)"
        )
    bflat, _ = _split_flat(params)
    out, _ = _forward(_unflatten(bflat, spec.branch_widths), u.reshape(1, -1),
                      spec.activation)
    return out[0]


def trunk_features(params: NetParams, y) -> np.ndarray:
    """Feature rows t(y_i), shape (n, q); a scalar y gives shape (1, q)."""
    spec = params.spec
    Y, _ = _as_column(y)
    _, tflat = _split_flat(params)
    out, _ = _forward(_unflatten(tflat, spec.trunk_widths), Y, spec.activation)
    return out


def combine_features(b: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Dot product of branch features with each trunk feature row."""
    return t @ b


def deeponet_eval(params: NetParams, u, y):
    """G(u)(y) = dot(branch(u), trunk(y)) at one or many coordinates y."""
    if not isinstance(params.spec, DeepOnetSpec):
        raise ValueError("deeponet_eval needs operator-network parameters")
    _, scalar = _as_column(y)
    out = combine_features(branch_features(params, u), trunk_features(params, y))
    return float(out[0]) if scalar else out


def deeponet_backward(params: NetParams, u, y, upstream):
    """Gradients of sum_i upstream_i * G(u)(y_i).

    Returns (grad_flat, grad_u, grad_y) with grad_flat in the canonical
    branch-then-trunk layout.
    """
    spec = params.spec
    if not isinstance(spec, DeepOnetSpec):
        raise ValueError("deeponet_backward needs operator-network parameters")
    u = np.asarray(u, dtype=np.float64)
    Y, scalar = _as_column(y)
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (Y.shape[0],))

    bflat, tflat = _split_flat(params)
    blayers = _unflatten(bflat, spec.branch_widths)
    tlayers = _unflatten(tflat, spec.trunk_widths)
    b, bacts = _forward(blayers, u.reshape(1, -1), spec.activation)
    t, tacts = _forward(tlayers, Y, spec.activation)

    # out_i = sum_q b_q t_iq  =>  dL/dt = up b^T, dL/db = sum_i up_i t_i
    dt = up[:, None] * b
    db = (up[:, None] * t).sum(axis=0, keepdims=True)
    gb_flat, du = _vjp(blayers, bacts, db, spec.activation)
    gt_flat, dY = _vjp(tlayers, tacts, dt, spec.activation)
    gy = dY[:, 0]
    return (
        np.concatenate([gb_flat, gt_flat]),
        du[0],
        float(gy[0]) if scalar else gy,
    )


def backward(params: NetParams, inputs, upstream):
    """Reverse-mode gradients of output * upstream for either architecture.

    For an MLP ``inputs`` is the coordinate (or coordinates); for the
    operator network it is the pair (u, y). Returns (grad_params, grad_inputs).
    """
    if isinstance(params.spec, MlpSpec):
        return mlp_backward(params, inputs, upstream)
    u, y = inputs
    grad_flat, gu, gy = deeponet_backward(params, u, y, upstream)
    return grad_flat, (gu, gy)


def _spec_to_dict(spec) -> dict:
    if isinstance(spec, MlpSpec):
        return {
            "kind": "mlp",
            "layer_widths": list(spec.layer_widths),
            "activation": spec.activation,
        }
    return {
        "kind": "deeponet",
        "branch_widths": list(spec.branch_widths),
        "trunk_widths": list(spec.trunk_widths),
        "activation": spec.activation,
    }


def _spec_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "mlp":
        return MlpSpec(tuple(d["layer_widths"]), d["activation"])
    if kind == "deeponet":
        return DeepOnetSpec(
            tuple(d["branch_widths"]), tuple(d["trunk_widths"]), d["activation"]
        )
    raise ValueError(f"unknown spec kind {kind!r}")


def save_params(params: NetParams, path) -> None:
    rec = {
        "spec": _spec_to_dict(params.spec),
        "seed": params.rng_seed,
        "flat": params.flat.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(rec, fh)


def load_params(path) -> NetParams:
    with open(path) as fh:
        rec = json.load(fh)
    spec = _spec_from_dict(rec["spec"])
    return NetParams(spec, np.array(rec["flat"], dtype=np.float64), int(rec["seed"]))
