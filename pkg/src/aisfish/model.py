"""Three-layer recurrent encoders (Elman, GRU, LSTM) with a temporal MLP decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from . import nncore as nn
from .nncore import Parameter, Tensor

Cell = Literal["elman", "gru", "lstm"]
GATES = {"elman": 1, "gru": 3, "lstm": 4}
N_LAYERS = 3
N_ATTRIBUTES = 4  # lat, lon, cog, sog
# The published parameter totals all carry +8 beyond the network itself:
# two class centers in a 4-dimensional space.
AUX_PARAMS = 8


@dataclass(frozen=True)
class ModelConfig:
    cell: Cell = "elman"
    w: int = 10
    s: int = 64
    v: int = N_ATTRIBUTES
    layers: int = N_LAYERS
    dropout_rate: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.cell not in GATES:
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.w < 2 or self.s < 1:
            raise ValueError(f"need w >= 2 and s >= 1, got w={self.w}, s={self.s}")
        if self.v != N_ATTRIBUTES or self.layers != N_LAYERS:
            raise ValueError("the architecture is fixed at 4 inputs and 3 layers")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ParamCount:
    recurrent: int
    decoder: int
    aux: int
    centers: int  # trainable center parameters actually allocated (2 x s)

    @property
    def total(self) -> int:
        """Count as tabulated: recurrent + decoder + aux."""
        return self.recurrent + self.decoder + self.aux

    @property
    def trainable(self) -> int:
        return self.recurrent + self.decoder + self.centers


def count_params(config: ModelConfig) -> ParamCount:
    g, s, v, w = GATES[config.cell], config.s, config.v, config.w
    recurrent = 0
    for layer in range(config.layers):
        fan_in = v if layer == 0 else s
        recurrent += g * (fan_in * s + s * s + 2 * s)
    return ParamCount(recurrent=recurrent, decoder=w * s + 3 * s, aux=AUX_PARAMS, centers=2 * s)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    g, s = GATES[config.cell], config.s
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(1, config.layers + 1):
        fan_in = config.v if layer == 1 else s
        shapes[f"l{layer}.W_ih"] = (fan_in, g * s)
        shapes[f"l{layer}.W_hh"] = (s, g * s)
        shapes[f"l{layer}.b_ih"] = (g * s,)
        shapes[f"l{layer}.b_hh"] = (g * s,)
    shapes["dec.W_h"] = (config.w, s)
    shapes["dec.b_h"] = (s,)
    shapes["dec.W_v"] = (s,)
    shapes["dec.W_w"] = (s,)
    shapes["loss.centers"] = (2, s)
    return shapes


def init(config: ModelConfig, seed: int | None = None) -> dict[str, Parameter]:
    """Uniform(-1/sqrt(s), 1/sqrt(s)) for weights and biases, zero centers."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    bound = 1.0 / np.sqrt(config.s)
    weights = {}
    for name, shape in param_shapes(config).items():
        if name == "loss.centers":
            data = np.zeros(shape)
        else:
            data = rng.uniform(-bound, bound, size=shape)
        weights[name] = Parameter(data, name=name)
    return weights


def _elman_step(x, h, W_ih, W_hh, b_ih, b_hh, s, state):
    return nn.tanh(x @ W_ih + b_ih + (h @ W_hh + b_hh)), state


def _gru_step(x, h, W_ih, W_hh, b_ih, b_hh, s, state):
    gi = x @ W_ih + b_ih
    gh = h @ W_hh + b_hh
    r = nn.sigmoid(nn.cols(gi, 0, s) + nn.cols(gh, 0, s))
    z = nn.sigmoid(nn.cols(gi, s, 2 * s) + nn.cols(gh, s, 2 * s))
    n = nn.tanh(nn.cols(gi, 2 * s, 3 * s) + r * nn.cols(gh, 2 * s, 3 * s))
    return (1.0 - z) * n + z * h, state


def _lstm_step(x, h, W_ih, W_hh, b_ih, b_hh, s, c):
    gates = x @ W_ih + b_ih + (h @ W_hh + b_hh)
    i = nn.sigmoid(nn.cols(gates, 0, s))
    f = nn.sigmoid(nn.cols(gates, s, 2 * s))
    g = nn.tanh(nn.cols(gates, 2 * s, 3 * s))
    o = nn.sigmoid(nn.cols(gates, 3 * s, 4 * s))
    c = f * c + i * g
    return o * nn.tanh(c), c


_STEPS = {"elman": _elman_step, "gru": _gru_step, "lstm": _lstm_step}


def _run_layer(config, weights, layer, inputs):
    p = [weights[f"l{layer}.{k}"] for k in ("W_ih", "W_hh", "b_ih", "b_hh")]
    b, s = inputs[0].shape[0], config.s
    h = Tensor(np.zeros((b, s)))
    state = Tensor(np.zeros((b, s))) if config.cell == "lstm" else None
    step = _STEPS[config.cell]
    out = []
    for x in inputs:
        h, state = step(x, h, *p, s, state)
        out.append(h)
    return out


def forward(config: ModelConfig, weights, x, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """Logits (b,) and decoder embedding (b, s) for a window batch x of shape (b, w, v).

    Dropout hits the layer-1 input and the layer-1 output feeding layer 2.
    The decoder contracts the top layer's w hidden states per feature with
    W_h, scales by W_v, applies ReLU and sums with W_w into one logit.
    """
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != (config.w, config.v):
        raise ValueError(f"expected input (b, {config.w}, {config.v}), got {x.shape}")
    if training and config.dropout_rate > 0:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    rate = config.dropout_rate
    steps = [nn.dropout(Tensor(x[:, t, :]), rate, training, rng) for t in range(config.w)]
    h1 = _run_layer(config, weights, 1, steps)
    h2 = _run_layer(config, weights, 2, [nn.dropout(h, rate, training, rng) for h in h1])
    h3 = _run_layer(config, weights, 3, h2)

    W_h = weights["dec.W_h"]
    enc = weights["dec.b_h"]
    for t, h in enumerate(h3):
        enc = h * nn.row(W_h, t) + enc
    emb = nn.relu(enc * weights["dec.W_v"])
    logits = emb @ weights["dec.W_w"]
    return logits, emb


def parameters(weights) -> list[Parameter]:
    return list(weights.values())
