"""Small numpy networks with hand-written backward passes.

Three architectures are supported:

``pgac_policy``
    conv (1x3 over time, m -> m channels) -> act -> conv (1x(d-2), m -> 1)
    -> act -> concat previous weights -> dense 2n -> n -> tanh.
``pgac_value``
    same convolutional trunk -> dense n -> 1 (linear output).
``es_mlp``
    flatten(state) ++ previous weights -> dense H -> act -> dense n -> tanh.

Inputs are amplified state tensors of shape ``(n, d, m)`` (or a batch of
them, ``(B, n, d, m)``). The network subtracts ``input_offset`` (the
amplification scale K) before the first layer so that a flat market maps
to zero input.
"""

from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

ARCH_TAGS = ("pgac_policy", "pgac_value", "es_mlp")
ACTIVATIONS = ("tanh", "relu", "identity")
CONV_WIDTH = 3
CHECKPOINT_FORMAT = "portfolio_rl.netparams"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Arch:
    tag: str
    n_assets: int
    horizon: int
    n_features: int
    hidden: int = 32
    activation: str = "tanh"
    input_offset: float = 100.0

    def __post_init__(self):
        if self.tag not in ARCH_TAGS:
            raise ValueError(f"unknown arch tag {self.tag!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.tag != "es_mlp" and self.horizon < CONV_WIDTH:
            raise ValueError(f"CNN needs horizon >= {CONV_WIDTH}")

    @property
    def state_shape(self) -> tuple[int, int, int]:
        return (self.n_assets, self.horizon, self.n_features)

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return list(_layout(self)[0])

    def _shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        n, d, m = self.state_shape
        if self.tag == "es_mlp":
            inputs = n * d * m + n
            return [("w1", (inputs, self.hidden)), ("b1", (self.hidden,)),
                    ("w2", (self.hidden, n)), ("b2", (n,))]
        L = d - CONV_WIDTH + 1
        trunk = [("conv1_w", (CONV_WIDTH, m, m)), ("conv1_b", (m,)),
                 ("conv2_w", (L, m)), ("conv2_b", (1,))]
        if self.tag == "pgac_policy":
            return trunk + [("fc_w", (2 * n, n)), ("fc_b", (n,))]
        return trunk + [("fc_w", (n, 1)), ("fc_b", (1,))]


@lru_cache(maxsize=64)
def _layout(arch: Arch):
    shapes = tuple(arch._shapes())
    return shapes, {name: i for i, (name, _) in enumerate(shapes)}


@dataclass(frozen=True)
class NetworkParams:
    arch: Arch
    arrays: tuple[np.ndarray, ...]

    def __post_init__(self):
        shapes = _layout(self.arch)[0]
        if len(shapes) != len(self.arrays):
            raise ValueError("wrong number of parameter blocks")
        frozen = []
        for (name, shape), arr in zip(shapes, self.arrays):
            arr = np.array(arr, dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape} != {shape}")
            # a finite sum implies finite entries; only scan when it is not
            if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
                raise ValueError(f"{name}: non-finite parameters")
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "arrays", tuple(frozen))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[_layout(self.arch)[1][name]]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    @classmethod
    def unflatten(cls, arch: Arch, flat) -> "NetworkParams":
        flat = np.asarray(flat, dtype=np.float64)
        arrays, pos = [], 0
        for _, shape in _layout(arch)[0]:
            size = int(np.prod(shape))
            arrays.append(flat[pos : pos + size].reshape(shape))
            pos += size
        if pos != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, arch needs {pos}")
        return cls(arch, tuple(arrays))

    @classmethod
    def zeros(cls, arch: Arch) -> "NetworkParams":
        return cls(arch, tuple(np.zeros(s) for _, s in arch.layer_shapes()))

    def with_flat(self, flat) -> "NetworkParams":
        return NetworkParams.unflatten(self.arch, flat)


def _fans(arch: Arch, name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if name == "conv1_w":
        k, cin, cout = shape
        return k * cin, k * cout
    if name == "conv2_w":
        L, cin = shape
        return L * cin, L
    return shape[0], shape[1]


def init_params(arch: Arch, seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = make_rng(seed, ARCH_TAGS.index(arch.tag))
    arrays = []
    for name, shape in arch.layer_shapes():
        if len(shape) == 1:
            arrays.append(np.zeros(shape))
            continue
        fan_in, fan_out = _fans(arch, name, shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        arrays.append(rng.uniform(-bound, bound, size=shape))
    return NetworkParams(arch, tuple(arrays))


def _act(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    return x


def _act_grad(kind: str, out: np.ndarray) -> np.ndarray:
    """Derivative of the activation expressed through its output."""
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "relu":
        return (out > 0).astype(np.float64)
    return np.ones_like(out)


@dataclass
class ForwardRecord:
    params: NetworkParams
    batched: bool
    cache: dict = field(default_factory=dict)
    output: np.ndarray = None


def _as_batch(arch: Arch, states, prev):
    x = states.entries if hasattr(states, "entries") else states
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    if x.shape[1:] != arch.state_shape:
        raise ValueError(f"state shape {x.shape[1:]} != {arch.state_shape}")
    if prev is not None:
        prev = np.asarray(prev, dtype=np.float64)
        prev = prev.reshape(x.shape[0], arch.n_assets) if batched else prev[None]
        if prev.shape != (x.shape[0], arch.n_assets):
            raise ValueError(f"prev_weights shape {prev.shape} does not match batch")
    return x - arch.input_offset, prev, batched


def _trunk(params: NetworkParams, x: np.ndarray, cache: dict) -> np.ndarray:
    kind = params.arch.activation
    L = x.shape[2] - CONV_WIDTH + 1
    w1 = params["conv1_w"]
    h1 = params["conv1_b"] + sum(x[:, :, k : k + L, :] @ w1[k] for k in range(CONV_WIDTH))
    a1 = _act(kind, h1)
    B, n = x.shape[:2]
    h2 = (a1.reshape(B, n, -1) @ params["conv2_w"].ravel()) + params["conv2_b"][0]
    a2 = _act(kind, h2)
    cache.update(x=x, a1=a1, a2=a2)
    return a2


def policy_cnn_forward(params: NetworkParams, state, prev_weights) -> tuple[np.ndarray, ForwardRecord]:
    """Mean action in (-1, 1)^n for one state or a batch of states."""
    if params.arch.tag != "pgac_policy":
        raise ValueError("params are not a pgac_policy network")
    x, prev, batched = _as_batch(params.arch, state, prev_weights)
    if prev is None:
        raise ValueError("policy network needs prev_weights")
    rec = ForwardRecord(params, batched)
    a2 = _trunk(params, x, rec.cache)
    z = np.stack([a2, prev], axis=-1).reshape(len(x), -1)
    out = np.tanh(z @ params["fc_w"] + params["fc_b"])
    rec.cache["z"] = z
    rec.output = out
    return (out if batched else out[0]), rec


def value_cnn_forward(params: NetworkParams, state) -> tuple[np.ndarray | float, ForwardRecord]:
    """Scalar state value (array of them for a batch)."""
    if params.arch.tag != "pgac_value":
        raise ValueError("params are not a pgac_value network")
    x, _, batched = _as_batch(params.arch, state, None)
    rec = ForwardRecord(params, batched)
    a2 = _trunk(params, x, rec.cache)
    out = (a2 @ params["fc_w"] + params["fc_b"])[:, 0]
    rec.output = out
    return (out if batched else float(out[0])), rec


def es_mlp_forward(params: NetworkParams, state, prev_weights) -> tuple[np.ndarray, ForwardRecord]:
    if params.arch.tag != "es_mlp":
        raise ValueError("params are not an es_mlp network")
    x, prev, batched = _as_batch(params.arch, state, prev_weights)
    if prev is None:
        raise ValueError("es_mlp needs prev_weights")
    inp = np.concatenate([x.reshape(len(x), -1), prev], axis=1)
    a = _act(params.arch.activation, inp @ params["w1"] + params["b1"])
    out = np.tanh(a @ params["w2"] + params["b2"])
    rec = ForwardRecord(params, batched, {"inp": inp, "a": a}, out)
    return (out if batched else out[0]), rec


def forward(params: NetworkParams, state, prev_weights=None):
    """Dispatch to the forward pass for ``params.arch.tag``."""
    tag = params.arch.tag
    if tag == "pgac_policy":
        return policy_cnn_forward(params, state, prev_weights)
    if tag == "pgac_value":
        return value_cnn_forward(params, state)
    return es_mlp_forward(params, state, prev_weights)


def _trunk_backward(params: NetworkParams, cache: dict, g_a2: np.ndarray) -> list[np.ndarray]:
    kind = params.arch.activation
    x, a1, a2 = cache["x"], cache["a1"], cache["a2"]
    L = a1.shape[2]
    g_h2 = g_a2 * _act_grad(kind, a2)
    m = a1.shape[3]
    d_conv2_w = (g_h2.reshape(1, -1) @ a1.reshape(-1, L * m)).reshape(L, m)
    d_conv2_b = np.array([g_h2.sum()])
    g_h1 = (g_h2[:, :, None, None] * params["conv2_w"] * _act_grad(kind, a1)).reshape(-1, m)
    d_conv1_w = np.stack([x[:, :, k : k + L, :].reshape(-1, x.shape[3]).T @ g_h1 for k in range(CONV_WIDTH)])
    d_conv1_b = g_h1.sum(axis=0)
    return [d_conv1_w, d_conv1_b, d_conv2_w, d_conv2_b]


def backward(record: ForwardRecord, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * output)`` w.r.t. the flat parameter vector.

    For a batched record the gradient is summed over the batch.
    """
    params, cache = record.params, record.cache
    tag = params.arch.tag
    g = np.asarray(upstream, dtype=np.float64)
    if tag == "pgac_value":
        g = g.reshape(-1)
    elif not record.batched:
        g = g[None]
    if g.shape[0] != record.output.shape[0]:
        raise ValueError("upstream gradient does not match the recorded batch")

    if tag == "es_mlp":
        g_u = g * (1.0 - record.output**2)
        a, inp = cache["a"], cache["inp"]
        g_h = (g_u @ params["w2"].T) * _act_grad(params.arch.activation, a)
        grads = [inp.T @ g_h, g_h.sum(0), a.T @ g_u, g_u.sum(0)]
    elif tag == "pgac_policy":
        g_u = g * (1.0 - record.output**2)
        z = cache["z"]
        g_z = (g_u @ params["fc_w"].T).reshape(len(z), -1, 2)
        grads = _trunk_backward(params, cache, g_z[:, :, 0]) + [z.T @ g_u, g_u.sum(0)]
    else:
        g_u = g[:, None]
        a2 = cache["a2"]
        g_a2 = g_u @ params["fc_w"].T
        grads = _trunk_backward(params, cache, g_a2) + [a2.T @ g_u, g_u.sum(0)]
    return np.concatenate([gr.ravel() for gr in grads])


def params_to_dict(params: NetworkParams, seed_lineage: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": asdict(params.arch),
        "shapes": [[name, list(shape)] for name, shape in params.arch.layer_shapes()],
        "params": [float(v) for v in params.flatten()],
        "seed_lineage": seed_lineage or {},
    }


def params_from_dict(payload: dict) -> NetworkParams:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a network parameter checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    arch = Arch(**payload["arch"])
    expected = [[name, list(shape)] for name, shape in arch.layer_shapes()]
    if payload["shapes"] != expected:
        raise ValueError("checkpoint shapes do not match architecture")
    return NetworkParams.unflatten(arch, payload["params"])


def dumps(payload: dict) -> str:
    """Byte-stable JSON (sorted keys, shortest round-trip float repr)."""
    return json.dumps(payload, sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_params(params: NetworkParams, path, seed_lineage: dict | None = None) -> None:
    Path(path).write_text(dumps(params_to_dict(params, seed_lineage)))


def load_params(path) -> NetworkParams:
    return params_from_dict(json.loads(Path(path).read_text()))
