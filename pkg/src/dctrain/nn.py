"""MLP models on the autodiff graph.

The activation family includes the integrated ReLU, ``IRelu(x) =
0.5 * max(0, x)**2``, the antiderivative of ReLU. Its first derivative is
ReLU and its second is the Heaviside step, so derivative-constrained losses
(which differentiate the network w.r.t. its inputs before the parameter
update) still receive a non-vanishing curvature signal.

Batch normalization is optional; a model without it is "denormalized".
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Graph, Ref, evaluate, grad


class Activation(str, Enum):
    TANH = "Tanh"
    RELU = "Relu"
    IRELU = "IRelu"
    SOFTPLUS = "Softplus"
    SHIFTED_SOFTPLUS = "ShiftedSoftplus"
    SILU = "Silu"

    @classmethod
    def parse(cls, value: "str | Activation") -> "Activation":
        if isinstance(value, Activation):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise ValueError(f"unknown activation {value!r}; choose from {[m.value for m in cls]}")


_LN2 = math.log(2.0)


def activation_apply(kind: Activation | str, x: float) -> float:
    """Closed-form scalar activation value."""
    kind = Activation.parse(kind)
    if kind is Activation.TANH:
        return math.tanh(x)
    if kind is Activation.RELU:
        return max(x, 0.0)
    if kind is Activation.IRELU:
        return 0.5 * max(x, 0.0) ** 2
    if kind is Activation.SOFTPLUS:
        return float(np.logaddexp(0.0, x))
    if kind is Activation.SHIFTED_SOFTPLUS:
        return float(np.logaddexp(0.0, x)) - _LN2
    return x * 0.5 * (1.0 + math.tanh(0.5 * x))  # Silu


def activation_node(g: Graph, kind: Activation | str, x: Ref) -> Ref:
    """Graph counterpart of :func:`activation_apply`."""
    kind = Activation.parse(kind)
    return {
        Activation.TANH: g.tanh,
        Activation.RELU: g.relu,
        Activation.IRELU: g.irelu,
        Activation.SOFTPLUS: g.softplus,
        Activation.SHIFTED_SOFTPLUS: g.shifted_softplus,
        Activation.SILU: g.silu,
    }[kind](x)


def activation_derivatives(kind: Activation | str, z: float) -> tuple[float, float]:
    """(sigma'(z), sigma''(z)) obtained by differentiating the activation graph."""
    g = Graph()
    x = g.var("z")
    g.output("s", activation_node(g, kind, x))
    g = grad(grad(g, "s", ["z"]), "ds/dz", ["z"])
    vals = evaluate(g, {"z": z}, ["ds/dz", "dds/dz/dz"])
    return float(vals["ds/dz"]), float(vals["dds/dz/dz"])


class UndefinedRatioError(ValueError):
    pass


def update_ratio(kind: Activation | str, z: float, g: float) -> float:
    """Ratio of a standard update to a derivative-constrained update.

    Computes ``1 / (2 + sigma''(z) / sigma'(z) * g)`` where ``z`` is the
    pre-activation and ``g`` the derivative of the layer w.r.t. its input.
    Raises :class:`UndefinedRatioError` when ``sigma'(z) == 0``.
    """
    d1, d2 = activation_derivatives(kind, z)
    if d1 == 0.0:
        raise UndefinedRatioError(f"{Activation.parse(kind).value}'({z}) is zero; ratio undefined")
    denom = 2.0 + d2 / d1 * g
    if denom == 0.0:
        raise UndefinedRatioError("ratio denominator vanishes")
    return 1.0 / denom


@dataclass
class MLPConfig:
    input_dim: int
    hidden: list[int]
    output_dim: int = 1
    activation: Activation = Activation.TANH
    use_batchnorm: bool = False
    seed: int = 0
    # per hidden layer override; None entries fall back to ``activation``
    activation_overrides: list[str | None] | None = None

    def __post_init__(self) -> None:
        self.activation = Activation.parse(self.activation)
        self.hidden = [int(h) for h in self.hidden]
        if self.input_dim <= 0 or self.output_dim <= 0 or any(h <= 0 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.activation_overrides is not None and len(self.activation_overrides) != len(self.hidden):
            raise ValueError("activation_overrides must have one entry per hidden layer")

    def layer_activation(self, i: int) -> Activation:
        if self.activation_overrides and self.activation_overrides[i] is not None:
            return Activation.parse(self.activation_overrides[i])
        return self.activation

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = self.activation.value
        return d


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class MLP:
    """Weights ``W{i}`` (out x in), biases ``b{i}``, optional BN blocks.

    ``params`` holds trainable arrays and ``buffers`` the BN running
    statistics. Both are keyed by local names such as ``"W0"`` or
    ``"bn1.gamma"``.
    """

    config: MLPConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden) + 1

    def copy(self) -> "MLP":
        return MLP(self.config, {k: v.copy() for k, v in self.params.items()},
                   {k: v.copy() for k, v in self.buffers.items()})


def build_mlp(config: MLPConfig) -> MLP:
    """Glorot-uniform weights from ``config.seed``, zero biases."""
    rng = np.random.default_rng(config.seed)
    sizes = [config.input_dim, *config.hidden, config.output_dim]
    model = MLP(config)
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        model.params[f"W{i}"] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        model.params[f"b{i}"] = np.zeros(fan_out)
        if config.use_batchnorm and i < len(config.hidden):
            model.params[f"bn{i}.gamma"] = np.ones(fan_out)
            model.params[f"bn{i}.beta"] = np.zeros(fan_out)
            model.buffers[f"bn{i}.running_mean"] = np.zeros(fan_out)
            model.buffers[f"bn{i}.running_var"] = np.ones(fan_out)
    return model


def bn_stat_outputs(prefix: str, model: MLP) -> list[tuple[str, str, str]]:
    """(graph mean output, graph var output, layer tag) for every BN block."""
    if not model.config.use_batchnorm:
        return []
    return [(f"{prefix}bn{i}.batch_mean", f"{prefix}bn{i}.batch_var", f"bn{i}")
            for i in range(len(model.config.hidden))]


def forward(model: MLP, g: Graph, x: Ref, *, train: bool = False, prefix: str = "",
            record_stats: bool = True) -> Ref:
    """Emit nodes computing ``model(x)`` for ``x`` of shape (batch, input_dim).

    Parameters become graph variables named ``prefix + local_name`` so that
    :func:`~dctrain.autodiff.grad` can target them. In training mode BN
    blocks normalize with batch statistics and expose them as outputs
    (see :func:`bn_stat_outputs`) unless ``record_stats`` is false; in eval
    mode running statistics are bound as variables.
    """
    cfg = model.config
    if len(x.shape) != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected input of shape (batch, {cfg.input_dim}), got {x.shape}")
    n = x.shape[0]
    h = x
    for i in range(model.n_layers):
        W = g.var(f"{prefix}W{i}", model.params[f"W{i}"].shape)
        b = g.var(f"{prefix}b{i}", model.params[f"b{i}"].shape)
        h = g.matmul(h, W, trans_b=True) + b
        if i == model.n_layers - 1:
            break
        if cfg.use_batchnorm:
            width = h.shape[1]
            gamma = g.var(f"{prefix}bn{i}.gamma", (width,))
            beta = g.var(f"{prefix}bn{i}.beta", (width,))
            if train:
                mean = g.mul(g.sum_axis(h), 1.0 / n)
                centered = h - mean
                var = g.mul(g.sum_axis(g.square(centered)), 1.0 / n)
                if record_stats:
                    g.output(f"{prefix}bn{i}.batch_mean", mean)
                    g.output(f"{prefix}bn{i}.batch_var", var)
            else:
                mean = g.var(f"{prefix}bn{i}.running_mean", (width,))
                var = g.var(f"{prefix}bn{i}.running_var", (width,))
                centered = h - mean
            h = centered * g.reciprocal(g.sqrt(var + BN_EPS)) * gamma + beta
        h = activation_node(g, cfg.layer_activation(i), h)
    return h


def bindings(model: MLP, prefix: str = "", *, train: bool = False) -> dict[str, np.ndarray]:
    out = {prefix + k: v for k, v in model.params.items()}
    if not train:
        out.update({prefix + k: v for k, v in model.buffers.items()})
    return out


def update_running_stats(model: MLP, stats: Mapping[str, np.ndarray], prefix: str, batch_size: int) -> None:
    """Momentum update of BN running statistics from one training batch."""
    for mean_key, var_key, tag in bn_stat_outputs(prefix, model):
        m = BN_MOMENTUM
        unbiased = stats[var_key] * batch_size / max(batch_size - 1, 1)
        model.buffers[f"{tag}.running_mean"] = (1 - m) * model.buffers[f"{tag}.running_mean"] + m * stats[mean_key]
        model.buffers[f"{tag}.running_var"] = (1 - m) * model.buffers[f"{tag}.running_var"] + m * unbiased


def predict(model: MLP, x: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass on concrete inputs."""
    x = np.asarray(x, dtype=np.float64)
    g = Graph()
    xv = g.var("x", x.shape)
    g.output("y", forward(model, g, xv))
    return evaluate(g, {"x": x, **bindings(model)})["y"]


# -- checkpoints --------------------------------------------------------------

def model_to_dict(model: MLP) -> dict:
    return {
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in model.params.items()},
        "buffers": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in model.buffers.items()},
    }


def model_from_dict(data: Mapping) -> MLP:
    def arrays(section: Mapping) -> dict[str, np.ndarray]:
        return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in section.items()}

    return MLP(MLPConfig(**data["config"]), arrays(data["params"]), arrays(data.get("buffers", {})))


def save_checkpoint(path: str | Path, models: Mapping[str, MLP]) -> None:
    """Write one or more named models as JSON (floats via repr, exact)."""
    payload = {name: model_to_dict(m) for name, m in models.items()}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> dict[str, MLP]:
    payload = json.loads(Path(path).read_text())
    return {name: model_from_dict(d) for name, d in payload.items()}


def count_params(model: MLP) -> int:
    return sum(v.size for v in model.params.values())


def layer_shapes(model: MLP) -> Sequence[tuple[int, int]]:
    return [model.params[f"W{i}"].shape for i in range(model.n_layers)]
