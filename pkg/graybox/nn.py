"""
Graybox NLP - Neural Network Engine
Sequential dense networks with value, Jacobian and Lagrangian-Hessian oracles,
plus the GBNN weight-file codec.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from .errors import (
    DimensionInconsistencyError,
    DimensionMismatchError,
    MalformedHeaderError,
    NumericError,
    StructuralError,
    TruncatedPayloadError,
)
from .linalg import RealMat, RealVec

logger = logging.getLogger(__name__)

MAGIC = b"GBNN"
FORMAT_VERSION = 1
_FILE_HEADER = struct.Struct("<4sII")
_LAYER_HEADER = struct.Struct("<IIB")


class ActivationKind(str, Enum):
    """Activation applied after each affine map."""
    LINEAR = "linear"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"

    @property
    def code(self) -> int:
        return _ACTIVATION_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "ActivationKind":
        for kind, value in _ACTIVATION_CODES.items():
            if value == code:
                return kind
        raise MalformedHeaderError(f"unknown activation code {code}")

    @property
    def elementwise(self) -> bool:
        return self is not ActivationKind.SOFTMAX

    @property
    def label(self) -> str:
        return _ACTIVATION_LABELS[self]


_ACTIVATION_CODES = {
    ActivationKind.LINEAR: 0,
    ActivationKind.TANH: 1,
    ActivationKind.SIGMOID: 2,
    ActivationKind.SOFTMAX: 3,
}

_ACTIVATION_LABELS = {
    ActivationKind.LINEAR: "Linear",
    ActivationKind.TANH: "Tanh",
    ActivationKind.SIGMOID: "Sigmoid",
    ActivationKind.SOFTMAX: "SoftMax",
}


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Layer:
    """Affine map followed by an activation: sigma(W y + b)."""
    weight: RealMat
    bias: RealVec
    activation: ActivationKind

    def __post_init__(self):
        weight = _frozen(self.weight)
        bias = _frozen(self.bias)
        if weight.ndim != 2 or bias.ndim != 1:
            raise StructuralError("layer weight must be 2-D and bias 1-D")
        if weight.shape[0] != bias.shape[0]:
            raise StructuralError(
                f"weight has {weight.shape[0]} rows but bias has {bias.shape[0]} entries"
            )
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise NumericError("layer parameters contain NaN or Inf")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "activation", ActivationKind(self.activation))

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size


@dataclass(frozen=True)
class NeuralNet:
    """An ordered stack of dense layers; immutable once built."""
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise StructuralError("a network needs at least one layer")
        for index in range(1, len(layers)):
            if layers[index].n_in != layers[index - 1].n_out:
                raise StructuralError(
                    f"layer {index} expects {layers[index].n_in} inputs, "
                    f"previous layer produces {layers[index - 1].n_out}"
                )
        for layer in layers[:-1]:
            if layer.activation is ActivationKind.SOFTMAX:
                raise StructuralError("softmax is only allowed on the final layer")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.n_out for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def n_neurons(self) -> int:
        return sum(layer.n_out for layer in self.layers)


@dataclass(frozen=True)
class NetworkSummary:
    """Model-structure row: inputs, outputs, neurons, parameters, activations."""
    n_inputs: int
    n_outputs: int
    n_neurons: int
    n_params: int
    activation_label: str

    def to_dict(self) -> dict:
        return {
            "n_inputs": self.n_inputs,
            "n_outputs": self.n_outputs,
            "n_neurons": self.n_neurons,
            "n_params": self.n_params,
            "activation_label": self.activation_label,
        }


def network_summary(nn: NeuralNet) -> NetworkSummary:
    """Summarize a network the way model-structure tables report it (e.g. 'Tanh+SoftMax')."""
    labels: list[str] = []
    for layer in nn.layers:
        if layer.activation is ActivationKind.LINEAR:
            continue
        label = layer.activation.label
        if label not in labels:
            labels.append(label)
    return NetworkSummary(
        n_inputs=nn.input_dim,
        n_outputs=nn.output_dim,
        n_neurons=nn.n_neurons,
        n_params=nn.n_params,
        activation_label="+".join(labels) if labels else "Linear",
    )


# ============================================================================
# Activations
# ============================================================================

def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = np.exp(z - np.max(z))
    return shifted / np.sum(shifted)


def activate(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.LINEAR:
        return z.copy()
    if kind is ActivationKind.TANH:
        return np.tanh(z)
    if kind is ActivationKind.SIGMOID:
        # 0.5 * (1 + tanh(z/2)) does not overflow for large |z|
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return _softmax(z)


def elementwise_derivatives(kind: ActivationKind, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of an elementwise activation, written in terms of its output."""
    if kind is ActivationKind.LINEAR:
        return np.ones_like(y), np.zeros_like(y)
    if kind is ActivationKind.TANH:
        d1 = 1.0 - y * y
        return d1, -2.0 * y * d1
    if kind is ActivationKind.SIGMOID:
        d1 = y * (1.0 - y)
        return d1, d1 * (1.0 - 2.0 * y)
    raise StructuralError("softmax is not an elementwise activation")


def _softmax_jacobian(y: np.ndarray) -> np.ndarray:
    return np.diag(y) - np.outer(y, y)


def softmax_lagrangian_hessian(y: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """sum_i lam_i Hess(softmax_i) at softmax output y, in O(k^2)."""
    centred = lam - float(y @ lam)
    yy = np.outer(y, y)
    return np.diag(y * centred) - yy * (centred[:, None] + centred[None, :])


def activation_value_jac_hess(
    kind: ActivationKind, z
) -> tuple[RealVec, RealMat, np.ndarray]:
    """
    Value, Jacobian and third-order second-derivative array of one activation.

    hess[i, j, k] = d^2 sigma_i / (dz_j dz_k). Elementwise kinds only fill the
    (i, i, i) entries; softmax fills the dense tensor.
    """
    kind = ActivationKind(kind)
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("activation input contains NaN or Inf")
    k = z.shape[0]
    y = activate(kind, z)
    if kind.elementwise:
        d1, d2 = elementwise_derivatives(kind, y)
        hess = np.zeros((k, k, k))
        idx = np.arange(k)
        hess[idx, idx, idx] = d2
        return y, np.diag(d1), hess

    jac = _softmax_jacobian(y)
    eye = np.eye(k)
    hess = (
        eye[:, :, None] * jac[:, None, :]
        - jac[:, None, :] * y[None, :, None]
        - y[:, None, None] * jac[None, :, :]
    )
    return y, jac, hess


# ============================================================================
# Oracles
# ============================================================================

@dataclass
class _Tape:
    """Per-call record of pre- and post-activation values."""
    zs: list[np.ndarray] = field(default_factory=list)
    ys: list[np.ndarray] = field(default_factory=list)


def _check_input(nn: NeuralNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != nn.input_dim:
        raise DimensionMismatchError(
            f"network expects {nn.input_dim} inputs, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("network input contains NaN or Inf")
    return x


def _record(nn: NeuralNet, x: np.ndarray) -> _Tape:
    tape = _Tape(ys=[x])
    y = x
    for layer in nn.layers:
        z = layer.weight @ y + layer.bias
        y = activate(layer.activation, z)
        tape.zs.append(z)
        tape.ys.append(y)
    return tape


def _pullback(kind: ActivationKind, y: np.ndarray, bar: np.ndarray) -> np.ndarray:
    """Row-vector product bar @ J_sigma for a batch of cotangent rows (or a single vector)."""
    if kind.elementwise:
        d1, _ = elementwise_derivatives(kind, y)
        return bar * d1
    # J is symmetric: bar @ J = bar * y - (bar @ y) y^T
    return bar * y - np.multiply.outer(bar @ y, y)


def forward(nn: NeuralNet, x) -> RealVec:
    """Evaluate y_L = sigma_L(W_L(... sigma_1(W_1 x + b_1) ...) + b_L)."""
    x = _check_input(nn, x)
    return _record(nn, x).ys[-1]


def jacobian(nn: NeuralNet, x) -> RealMat:
    """d NN_i / d x_j by one batched reverse sweep seeded with the identity on the outputs."""
    x = _check_input(nn, x)
    tape = _record(nn, x)
    bar = np.eye(nn.output_dim)
    for layer, y in zip(reversed(nn.layers), reversed(tape.ys[1:])):
        bar = _pullback(layer.activation, y, bar) @ layer.weight
    return bar


def _check_multipliers(nn: NeuralNet, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 1 or lam.shape[0] != nn.output_dim:
        raise DimensionMismatchError(
            f"expected {nn.output_dim} multipliers, got shape {lam.shape}"
        )
    return lam


def lagrangian_gradient(nn: NeuralNet, x, lam) -> RealVec:
    """Gradient of the scalar lambda^T NN(x): one reverse sweep."""
    x = _check_input(nn, x)
    lam = _check_multipliers(nn, lam)
    tape = _record(nn, x)
    g = lam
    for layer, y in zip(reversed(nn.layers), reversed(tape.ys[1:])):
        g = layer.weight.T @ _pullback(layer.activation, y, g)
    return g


def lagrangian_hessian(nn: NeuralNet, x, lam) -> RealMat:
    """
    sum_i lam_i * Hess(NN_i)(x), without forming the m x n x n tensor.

    The fixed map lam^T(.) is treated as one more linear layer on top of the
    network; the resulting scalar is differentiated forward-over-reverse with
    all n unit directions carried as one tangent matrix, i.e. n batched
    Hessian-vector products.
    """
    x = _check_input(nn, x)
    lam = _check_multipliers(nn, lam)
    tape = _record(nn, x)
    n = nn.input_dim

    # forward tangents dz_l / dx for every layer (columns are directions)
    tangents: list[np.ndarray] = []
    ydot = np.eye(n)
    for layer, y in zip(nn.layers, tape.ys[1:]):
        zdot = layer.weight @ ydot
        tangents.append(zdot)
        if layer.activation.elementwise:
            d1, _ = elementwise_derivatives(layer.activation, y)
            ydot = d1[:, None] * zdot
        else:
            ydot = y[:, None] * zdot - np.outer(y, y @ zdot)

    # reverse sweep of the gradient and of its tangent
    g = lam
    gdot = np.zeros((nn.output_dim, n))
    for index in reversed(range(nn.depth)):
        layer = nn.layers[index]
        y = tape.ys[index + 1]
        zdot = tangents[index]
        if layer.activation.elementwise:
            d1, d2 = elementwise_derivatives(layer.activation, y)
            gz = d1 * g
            gzdot = d1[:, None] * gdot + (d2 * g)[:, None] * zdot
        else:
            s = float(y @ g)
            gz = y * g - y * s
            ydot = y[:, None] * zdot - np.outer(y, y @ zdot)
            gzdot = (
                y[:, None] * gdot
                - np.outer(y, y @ gdot)
                + ydot * g[:, None]
                - ydot * s
                - np.outer(y, g @ ydot)
            )
        g = layer.weight.T @ gz
        gdot = layer.weight.T @ gzdot

    return 0.5 * (gdot + gdot.T)


# ============================================================================
# Construction helpers
# ============================================================================

def random_network(
    widths: Sequence[int],
    activation: Union[ActivationKind, str] = ActivationKind.TANH,
    final: Union[ActivationKind, str, None] = None,
    seed: int = 0,
    output_scale: float = 1.0,
) -> NeuralNet:
    """
    Seeded network with weights and biases uniform on +-1/sqrt(fan_in).

    `activation` applies to hidden layers, `final` to the output layer
    (defaults to `activation`). `output_scale` multiplies the last layer's
    weights, e.g. to make a softmax classifier confident.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise StructuralError(f"need at least input and output widths, got {widths}")
    activation = ActivationKind(activation)
    final = ActivationKind(final) if final is not None else activation
    rng = np.random.default_rng(seed)
    layers = []
    for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        bias = rng.uniform(-bound, bound, size=fan_out)
        last = index == len(widths) - 2
        if last:
            weight = weight * output_scale
        layers.append(Layer(weight, bias, final if last else activation))
    return NeuralNet(tuple(layers))


# ============================================================================
# Weight files
# ============================================================================

class _LayerRecord(BaseModel):
    rows: int
    cols: int
    activation: Union[int, str]
    weights: list[list[float]]
    biases: list[float]


class _WeightDocument(BaseModel):
    version: int = FORMAT_VERSION
    layers: list[_LayerRecord]


def _activation_from_json(value: Union[int, str]) -> ActivationKind:
    if isinstance(value, int):
        return ActivationKind.from_code(value)
    try:
        return ActivationKind(value.lower())
    except ValueError as exc:
        raise MalformedHeaderError(f"unknown activation '{value}'") from exc


def _build_layers(records: Iterable[tuple[int, int, ActivationKind, np.ndarray, np.ndarray]]):
    layers = []
    previous_rows: Optional[int] = None
    for index, (rows, cols, kind, weight, bias) in enumerate(records):
        if weight.shape != (rows, cols) or bias.shape != (rows,):
            raise DimensionInconsistencyError(
                f"layer {index}: header says {rows}x{cols}, payload has weights "
                f"{weight.shape} and {bias.shape[0]} biases"
            )
        if previous_rows is not None and cols != previous_rows:
            raise DimensionInconsistencyError(
                f"layer {index} takes {cols} inputs but layer {index - 1} "
                f"has {previous_rows} outputs"
            )
        previous_rows = rows
        try:
            layers.append(Layer(weight, bias, kind))
        except StructuralError as exc:
            raise DimensionInconsistencyError(f"layer {index}: {exc}") from exc
    if not layers:
        raise MalformedHeaderError("weight file declares zero layers")
    try:
        return NeuralNet(tuple(layers))
    except StructuralError as exc:
        raise DimensionInconsistencyError(str(exc)) from exc


def _load_json(path: Path) -> NeuralNet:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise MalformedHeaderError(f"{path} is empty")
    try:
        document = _WeightDocument.model_validate_json(text)
    except ValidationError as exc:
        raise MalformedHeaderError(f"{path}: {exc.errors()[0]['msg']}") from exc
    if document.version != FORMAT_VERSION:
        raise MalformedHeaderError(f"unsupported weight-file version {document.version}")

    def records():
        for record in document.layers:
            if len({len(row) for row in record.weights}) > 1:
                raise DimensionInconsistencyError("weight rows have unequal lengths")
            weight = np.array(record.weights, dtype=np.float64).reshape(
                len(record.weights), -1 if record.weights and record.weights[0] else 0
            )
            yield (
                record.rows,
                record.cols,
                _activation_from_json(record.activation),
                weight,
                np.array(record.biases, dtype=np.float64),
            )

    return _build_layers(records())


def _load_binary(path: Path) -> NeuralNet:
    data = path.read_bytes()
    if len(data) < _FILE_HEADER.size:
        raise MalformedHeaderError(f"{path} is too short for a GBNN header ({len(data)} bytes)")
    magic, version, n_layers = _FILE_HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"unsupported weight-file version {version}")

    def records():
        offset = _FILE_HEADER.size
        for index in range(n_layers):
            if offset + _LAYER_HEADER.size > len(data):
                raise TruncatedPayloadError(f"layer {index} header is cut off")
            rows, cols, code = _LAYER_HEADER.unpack_from(data, offset)
            offset += _LAYER_HEADER.size
            kind = ActivationKind.from_code(code)
            n_weights = rows * cols
            needed = 8 * (n_weights + rows)
            if offset + needed > len(data):
                raise TruncatedPayloadError(
                    f"layer {index} needs {needed} payload bytes, {len(data) - offset} left"
                )
            weight = np.frombuffer(data, dtype="<f8", count=n_weights, offset=offset)
            offset += 8 * n_weights
            bias = np.frombuffer(data, dtype="<f8", count=rows, offset=offset)
            offset += 8 * rows
            yield rows, cols, kind, weight.reshape(rows, cols).astype(np.float64), bias.astype(
                np.float64
            )
        if offset != len(data):
            raise MalformedHeaderError(f"{len(data) - offset} trailing bytes after last layer")

    return _build_layers(records())


def load_weights(path: Union[str, Path]) -> NeuralNet:
    """Read a GBNN v1 binary file, or its JSON mirror when the path ends in .json."""
    path = Path(path)
    nn = _load_json(path) if path.suffix.lower() == ".json" else _load_binary(path)
    logger.info("[NN] Loaded %s: widths=%s params=%d", path.name, nn.widths, nn.n_params)
    return nn


def save_weights(nn: NeuralNet, path: Union[str, Path]) -> None:
    """Write a network as GBNN v1 (or the JSON mirror for .json paths)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        document = {
            "version": FORMAT_VERSION,
            "layers": [
                {
                    "rows": layer.n_out,
                    "cols": layer.n_in,
                    "activation": layer.activation.value,
                    "weights": layer.weight.tolist(),
                    "biases": layer.bias.tolist(),
                }
                for layer in nn.layers
            ],
        }
        path.write_text(json.dumps(document), encoding="utf-8")
        return

    chunks = [_FILE_HEADER.pack(MAGIC, FORMAT_VERSION, nn.depth)]
    for layer in nn.layers:
        chunks.append(_LAYER_HEADER.pack(layer.n_out, layer.n_in, layer.activation.code))
        chunks.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))
