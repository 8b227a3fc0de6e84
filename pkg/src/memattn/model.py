"""Attention-recurrent memorability head.

A forward pass initializes the LSTM state from the mean feature vector,
then runs T steps of soft attention over the L spatial locations; each
step regresses one partial score from the hidden state and the total
score is their sum. Attention can be disabled, which makes every step
see the plain location mean.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag
from .autograd import DimensionError, Param, Tensor

CHECKPOINT_MAGIC = b"AMWT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    w: int = 14
    h: int = 14
    d: int = 1024
    b: int = 1024
    t: int = 3
    fm_hidden: int = 512
    dropout_rate: float = 0.5   # regression hidden layer
    dropout_z: float = 0.5      # context vector before the LSTM
    attention_enabled: bool = True
    seed: int = 0

    @property
    def num_locations(self) -> int:
        return self.w * self.h

    def validate(self) -> None:
        if self.w < 1 or self.h < 1:
            raise ValueError(f"grid {self.w}x{self.h} must be at least 1x1")
        if min(self.d, self.b, self.t, self.fm_hidden) < 1:
            raise ValueError("d, b, t and fm_hidden must all be >= 1")
        for rate in (self.dropout_rate, self.dropout_z):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate {rate} outside [0, 1)")


def _param_shapes(cfg: ModelConfig):
    L, D, B, H = cfg.num_locations, cfg.d, cfg.b, cfg.fm_hidden
    shapes = [
        ("att_M", (L, D)),
        ("att_U", (D, B)),
        ("att_K", (D, D)),
        ("att_b", (D,)),
        ("init_h_W", (B, D)),
        ("init_h_b", (B,)),
        ("init_c_W", (B, D)),
        ("init_c_b", (B,)),
    ]
    for gate in ("i", "f", "o", "g"):
        shapes.append((f"lstm_W{gate}", (B, D + B)))
        shapes.append((f"lstm_b{gate}", (B,)))
    shapes += [
        ("fm_w1", (B, H)),
        ("fm_b1", (H,)),
        ("fm_w2", (H,)),
        ("fm_b2", ()),
    ]
    return shapes


class ModelParams:
    """All learnable weights, addressable by name in a stable order."""

    def __init__(self, config: ModelConfig, params: dict[str, Param]):
        self.config = config
        self._params = params
        expected = [name for name, _ in _param_shapes(config)]
        if list(params) != expected:
            raise ValueError("parameter set does not match config")
        for name, shape in _param_shapes(config):
            if params[name].value.shape != shape:
                raise ValueError(
                    f"param {name}: shape {params[name].value.shape}, expected {shape}"
                )

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def params(self) -> list[Param]:
        return list(self._params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.data.copy() for name, p in self._params.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            p.value.data[...] = values[name]


def init_params(config: ModelConfig) -> ModelParams:
    """Uniform Glorot weights, zero biases; deterministic given the seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in _param_shapes(config):
        if len(shape) == 2:
            fan_in, fan_out = shape[1], shape[0]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values = rng.uniform(-limit, limit, size=shape)
        elif name == "fm_w2":
            limit = np.sqrt(6.0 / (shape[0] + 1))
            values = rng.uniform(-limit, limit, size=shape)
        else:
            values = np.zeros(shape)
        params[name] = Param(name, values)
    return ModelParams(config, params)


@dataclass
class ForwardTrace:
    """Per-step intermediates kept as graph nodes so losses can reuse them."""

    alpha: list[Tensor]
    z: list[Tensor]
    h: list[Tensor]
    m: list[Tensor]
    y: Tensor

    def alpha_values(self) -> np.ndarray:
        return np.stack([a.data for a in self.alpha])

    def m_values(self) -> list[float]:
        return [m.item() for m in self.m]

    def y_value(self) -> float:
        return self.y.item()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else ag.constant(x)


def init_state(x, params: ModelParams):
    x = _as_tensor(x)
    cfg = params.config
    if x.shape != (cfg.num_locations, cfg.d):
        raise DimensionError(
            f"features shape {x.shape}, expected {(cfg.num_locations, cfg.d)}"
        )
    xbar = ag.mean_rows(x)
    h0 = ag.tanh(ag.add(ag.matvec(params["init_h_W"].value, xbar), params["init_h_b"].value))
    c0 = ag.tanh(ag.add(ag.matvec(params["init_c_W"].value, xbar), params["init_c_b"].value))
    return h0, c0


def attention_scores(x, h_prev: Tensor, params: ModelParams) -> Tensor:
    """Per-location logits; all ones when attention is disabled."""
    cfg = params.config
    if not cfg.attention_enabled:
        return ag.constant(np.ones(cfg.num_locations))
    x = _as_tensor(x)
    # U h_prev + b is shared by all locations; K x_i comes in as rows of x K^T.
    shared = ag.add(ag.matvec(params["att_U"].value, h_prev), params["att_b"].value)
    pre = ag.add(ag.matmul(x, ag.transpose(params["att_K"].value)), shared)
    return ag.row_sums(ag.mul(params["att_M"].value, ag.tanh(pre)))


def attend(x, alpha: Tensor) -> Tensor:
    """Attention-weighted sum of the location feature vectors."""
    return ag.vecmat(alpha, _as_tensor(x))


def lstm_step(z: Tensor, h_prev: Tensor, c_prev: Tensor, params: ModelParams):
    """Standard forget-gate LSTM without peepholes."""
    zh = ag.concat(z, h_prev)

    def gate(name, activation):
        return activation(
            ag.add(ag.matvec(params[f"lstm_W{name}"].value, zh), params[f"lstm_b{name}"].value)
        )

    i = gate("i", ag.sigmoid)
    f = gate("f", ag.sigmoid)
    o = gate("o", ag.sigmoid)
    g = gate("g", ag.tanh)
    c = ag.add(ag.mul(f, c_prev), ag.mul(i, g))
    h = ag.mul(o, ag.tanh(c))
    return h, c


def discrete_score(h: Tensor, params: ModelParams, training: bool = False, rng=None) -> Tensor:
    """Two-layer regression head with a single linear output neuron."""
    cfg = params.config
    hidden = ag.relu(ag.add(ag.vecmat(h, params["fm_w1"].value), params["fm_b1"].value))
    hidden = ag.dropout(hidden, cfg.dropout_rate, rng, training)
    return ag.add(ag.dot(hidden, params["fm_w2"].value), params["fm_b2"].value)


def forward(x, params: ModelParams, training: bool = False, rng=None) -> ForwardTrace:
    """Run the full T-step loop and collect the trace."""
    cfg = params.config
    x = _as_tensor(x)
    h, c = init_state(x, params)
    alphas, zs, hs, ms = [], [], [], []
    y = None
    for _ in range(cfg.t):
        e = attention_scores(x, h, params)
        alpha = ag.softmax_vec(e)
        z = attend(x, alpha)
        z = ag.dropout(z, cfg.dropout_z, rng, training)
        h, c = lstm_step(z, h, c, params)
        m = discrete_score(h, params, training=training, rng=rng)
        alphas.append(alpha)
        zs.append(z)
        hs.append(h)
        ms.append(m)
        y = m if y is None else ag.add(y, m)
    return ForwardTrace(alpha=alphas, z=zs, h=hs, m=ms, y=y)


def attention_penalty(alphas: list[Tensor]) -> Tensor:
    """Coverage penalty: sum_i (1 - sum_t alpha_t,i)^2 over locations."""
    acc = alphas[0]
    for a in alphas[1:]:
        acc = ag.add(acc, a)
    s = ag.add(ag.constant(np.ones(acc.shape)), ag.scale(acc, -1.0))
    return ag.dot(s, s)


def save_checkpoint(path, params: ModelParams, norm: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON meta block, named f64 params."""
    meta = {"config": asdict(params.config), "norm": norm}
    meta_bytes = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        for p in params.params():
            name = p.name.encode("utf-8")
            f.write(struct.pack("<I", len(name)))
            f.write(name)
            shape = p.value.shape
            f.write(struct.pack("<I", len(shape)))
            for dim in shape:
                f.write(struct.pack("<I", dim))
            f.write(p.value.data.astype("<f8").tobytes())


class CheckpointFormatError(ValueError):
    pass


def load_checkpoint(path):
    """Returns (ModelParams, norm dict or None)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    meta = json.loads(blob[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    config = ModelConfig(**meta["config"])
    params = {}
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        params[name] = Param(name, values.copy())
    return ModelParams(config, params), meta.get("norm")
