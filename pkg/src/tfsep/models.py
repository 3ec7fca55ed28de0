"""Mask-estimation and embedding networks.

Three architectures share one bidirectional gated-recurrent trunk,
unrolled explicitly over time on the autodiff ops:

  "upit"    trunk -> linear -> sigmoid -> (B, T, F, S) stacked masks
  "dc"      trunk -> linear -> tanh -> per-bin L2 norm -> (B, T*F, D)
  "chimera" shared trunk with both heads -> [V, mask_1, .., mask_S]

Every forward takes a single-element ``inputs`` list holding the
(B, T, F) log-magnitude features and returns a list of output tensors,
so any compatible loss can consume the result unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .seeding import stream_rng
from .tensor import Parameter, Tensor


@dataclass
class ModelConfig:
    input_dim: int = 129
    output_dim: int = 129
    hidden_dim: int = 300
    num_layers: int = 3
    dropout: float = 0.3
    num_speakers: int = 2
    embedding_dim: int = 20
    cell: str = "gru"

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("input_dim and output_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.num_layers < 1 or self.hidden_dim < 1:
            raise ValueError("need num_layers >= 1 and hidden_dim >= 1")
        if self.num_speakers < 1 or self.embedding_dim < 1:
            raise ValueError("need num_speakers >= 1 and embedding_dim >= 1")
        if self.cell != "gru":
            raise ValueError(f"unsupported recurrent cell {self.cell!r}")

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers,
            "dropout": self.dropout,
            "num_speakers": self.num_speakers,
            "embedding_dim": self.embedding_dim,
            "cell": self.cell,
        }


def uniform_fan_in(rng, shape, fan_in):
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """Parameter registry plus train/eval mode switching."""

    has_mask_head = False
    has_embedding_head = False

    def __init__(self, config):
        self.config = config
        self._params = {}
        self.training = True
        self._dropout_rng = None

    def add_param(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def parameters(self):
        return list(self._params.values())

    def num_parameters(self):
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.grad = None

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def set_dropout_rng(self, rng):
        self._dropout_rng = rng

    def state_dict(self):
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch; missing={sorted(missing)}, extra={sorted(extra)}"
            )
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self._params[name].data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {value.shape}, "
                    f"model {self._params[name].data.shape}"
                )
            self._params[name].data = value.copy()

    def forward(self, inputs):
        raise NotImplementedError

    def __call__(self, inputs):
        return self.forward(inputs)


class _BiGruTrunk:
    """Stack of bidirectional GRU layers registered on a host model."""

    def __init__(self, model, rng, input_dim, hidden_dim, num_layers, dropout):
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.dropout = dropout
        self.layers = []
        in_dim = input_dim
        for layer in range(num_layers):
            directions = {}
            for direction in ("fwd", "bwd"):
                prefix = f"rnn.l{layer}.{direction}"
                directions[direction] = {
                    "w_ih": model.add_param(
                        f"{prefix}.w_ih", uniform_fan_in(rng, (in_dim, 3 * hidden_dim), in_dim)),
                    "w_hh": model.add_param(
                        f"{prefix}.w_hh", uniform_fan_in(rng, (hidden_dim, 3 * hidden_dim), hidden_dim)),
                    "b_ih": model.add_param(
                        f"{prefix}.b_ih", uniform_fan_in(rng, (3 * hidden_dim,), in_dim)),
                    "b_hh": model.add_param(
                        f"{prefix}.b_hh", uniform_fan_in(rng, (3 * hidden_dim,), hidden_dim)),
                }
            self.layers.append(directions)
            in_dim = 2 * hidden_dim
        self.output_dim = in_dim

    def run(self, x, training, dropout_rng):
        out = x
        for layer_idx, directions in enumerate(self.layers):
            fwd = self._direction(out, directions["fwd"], reverse=False)
            bwd = self._direction(out, directions["bwd"], reverse=True)
            out = T.concat([fwd, bwd], axis=2)
            last = layer_idx == self.num_layers - 1
            if training and self.dropout > 0.0 and not last:
                if dropout_rng is None:
                    raise RuntimeError("training with dropout requires a dropout RNG")
                keep = (dropout_rng.random(out.shape) >= self.dropout) / (1.0 - self.dropout)
                out = out * keep
        return out

    def _direction(self, x, p, reverse):
        batch, frames, _ = x.shape
        h_dim = self.hidden_dim
        gi_all = x @ p["w_ih"].tensor + p["b_ih"].tensor  # (B, T, 3H)
        h = Tensor(np.zeros((batch, h_dim)))
        steps = range(frames - 1, -1, -1) if reverse else range(frames)
        outputs = [None] * frames
        for t in steps:
            gi = gi_all[:, t, :]
            gh = h @ p["w_hh"].tensor + p["b_hh"].tensor
            gates = gi + gh  # r and z share it; n gates the hidden part with r
            r = T.sigmoid(gates[:, :h_dim])
            z = T.sigmoid(gates[:, h_dim : 2 * h_dim])
            n = T.tanh(gi[:, 2 * h_dim :] + r * gh[:, 2 * h_dim :])
            h = (1.0 - z) * n + z * h
            outputs[t] = h
        return T.stack(outputs, axis=1)  # (B, T, H)


class _Linear:
    def __init__(self, model, rng, name, in_dim, out_dim):
        self.w = model.add_param(f"{name}.w", uniform_fan_in(rng, (in_dim, out_dim), in_dim))
        self.b = model.add_param(f"{name}.b", uniform_fan_in(rng, (out_dim,), in_dim))

    def __call__(self, x):
        return x @ self.w.tensor + self.b.tensor


class UPitNet(Model):
    """Recurrent mask estimator: log magnitude in, stacked T-F masks out."""

    has_mask_head = True

    def __init__(self, config, seed=0):
        super().__init__(config)
        rng = stream_rng(seed, "init")
        self.trunk = _BiGruTrunk(self, rng, config.input_dim, config.hidden_dim,
                                 config.num_layers, config.dropout)
        self.fc_mi = _Linear(self, rng, "fc_mi", self.trunk.output_dim,
                             config.output_dim * config.num_speakers)

    def forward(self, inputs):
        assert len(inputs) == 1, "mask estimator expects exactly 1 input tensor"
        x = T.as_tensor(inputs[0])
        assert x.ndim == 3 and x.shape[2] == self.config.input_dim, (
            f"expected (B, T, {self.config.input_dim}) features, got {x.shape}"
        )
        batch, frames, _ = x.shape
        hidden = self.trunk.run(x, self.training, self._dropout_rng)
        masks = T.sigmoid(self.fc_mi(hidden))
        masks = masks.reshape(
            (batch, frames, self.config.output_dim, self.config.num_speakers))
        return [masks]


class DCNet(Model):
    """Embedding network: one unit-norm D-vector per T-F bin."""

    has_embedding_head = True

    def __init__(self, config, seed=0):
        super().__init__(config)
        rng = stream_rng(seed, "init")
        self.trunk = _BiGruTrunk(self, rng, config.input_dim, config.hidden_dim,
                                 config.num_layers, config.dropout)
        self.fc_dc = _Linear(self, rng, "fc_dc", self.trunk.output_dim,
                             config.output_dim * config.embedding_dim)

    def forward(self, inputs):
        assert len(inputs) == 1, "embedding network expects exactly 1 input tensor"
        x = T.as_tensor(inputs[0])
        assert x.ndim == 3 and x.shape[2] == self.config.input_dim, (
            f"expected (B, T, {self.config.input_dim}) features, got {x.shape}"
        )
        hidden = self.trunk.run(x, self.training, self._dropout_rng)
        return [_embedding_head(hidden, self.fc_dc, x.shape, self.config)]


class ChimeraNet(Model):
    """Shared trunk with an embedding head and a mask head."""

    has_mask_head = True
    has_embedding_head = True

    def __init__(self, config, seed=0):
        super().__init__(config)
        rng = stream_rng(seed, "init")
        self.trunk = _BiGruTrunk(self, rng, config.input_dim, config.hidden_dim,
                                 config.num_layers, config.dropout)
        self.fc_dc = _Linear(self, rng, "fc_dc", self.trunk.output_dim,
                             config.output_dim * config.embedding_dim)
        self.fc_mi = _Linear(self, rng, "fc_mi", self.trunk.output_dim,
                             config.output_dim * config.num_speakers)

    def forward(self, inputs):
        assert len(inputs) == 1, "chimera network expects exactly 1 input tensor"
        x = T.as_tensor(inputs[0])
        assert x.ndim == 3 and x.shape[2] == self.config.input_dim, (
            f"expected (B, T, {self.config.input_dim}) features, got {x.shape}"
        )
        batch, frames, _ = x.shape
        hidden = self.trunk.run(x, self.training, self._dropout_rng)
        embedding = _embedding_head(hidden, self.fc_dc, x.shape, self.config)
        masks = T.sigmoid(self.fc_mi(hidden)).reshape(
            (batch, frames, self.config.output_dim, self.config.num_speakers))
        outputs = [embedding]
        outputs.extend(masks[:, :, :, c] for c in range(self.config.num_speakers))
        return outputs


def _embedding_head(hidden, fc, input_shape, config):
    batch, frames, _ = input_shape
    e = T.tanh(fc(hidden))
    v = e.reshape((batch, frames * config.output_dim, config.embedding_dim))
    norm_sq = (v * v).sum(axis=2, keepdims=True)
    return v * ((norm_sq + 1e-24) ** -0.5)


MODEL_KEYS = ("dc", "upit", "chimera")

_MODEL_CLASSES = {"dc": DCNet, "upit": UPitNet, "chimera": ChimeraNet}


def build_model(model_key, config, seed=0):
    """Instantiate a model with fan-in-scaled init from the seed's stream."""
    if model_key not in _MODEL_CLASSES:
        raise ValueError(f"unknown model key {model_key!r}; known: {MODEL_KEYS}")
    return _MODEL_CLASSES[model_key](config, seed=seed)


def trunk_parameter_count(model):
    return sum(p.data.size for p in model.parameters() if p.name.startswith("rnn."))
