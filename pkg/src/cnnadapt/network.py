"""Network architecture, forward evaluation, and the flat weight layout.

The network maps a 2-D input matrix (stacked sensor history) through a
stack of full-width, stride-1, valid cross-correlation layers, flattens
the result, and finishes with fully connected layers.  Bias handling is
uniform: each FC input vector is augmented with a trailing constant 1 so
biases live inside the weight matrices, while each convolution layer
carries one scalar bias per filter.

All trainable values are kept in one flat vector ``theta`` with a fixed
segment order: FC matrices first (each flattened row by row), then every
convolution filter (layer-major, filter index within a layer, each
flattened row by row), then the convolution bias vectors layer by layer.
The Jacobian columns in :mod:`cnnadapt.jacobian` follow the same order.

An empty convolution stack is a valid architecture: the input matrix is
squashed through ``alpha1 * tanh(X / alpha2)`` and fed straight to the
FC layers.  This is the dense-only baseline configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError
from .matops import vec_rowmajor


@dataclass(frozen=True)
class ConvLayerSpec:
    """One convolution layer: ``count`` filters of shape (rows, cols)."""

    rows: int
    cols: int
    count: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.count < 1:
            raise ConfigError(f"conv layer dims must be positive, got {self}")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: input shape, conv stack, FC widths.

    ``fc_widths`` lists the widths of every FC layer output, ending with
    the network output dimension.  ``alpha1`` scales the first (bounded)
    activation, ``alpha2`` is the input scaling already applied to the
    stacked samples.
    """

    input_rows: int
    input_cols: int
    conv_layers: tuple[ConvLayerSpec, ...]
    fc_widths: tuple[int, ...]
    alpha1: float
    alpha2: float
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_rows < 1 or self.input_cols < 1:
            raise ConfigError("input matrix dimensions must be positive")
        if not self.fc_widths:
            raise ConfigError("at least one FC layer is required")
        if any(w < 1 for w in self.fc_widths):
            raise ConfigError(f"FC widths must be positive, got {self.fc_widths}")
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ConfigError("alpha1 and alpha2 must be positive")
        if self.activation != "tanh":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        self.conv_shapes()  # raises on a broken dimension chain

    def conv_shapes(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        """Per conv layer: ((in_rows, in_cols), (out_rows, out_cols))."""
        shapes = []
        rows, cols = self.input_rows, self.input_cols
        for j, layer in enumerate(self.conv_layers):
            if layer.cols != cols:
                raise ConfigError(
                    f"conv layer {j}: filter width {layer.cols} != input width {cols}"
                )
            if layer.rows > rows:
                raise ConfigError(
                    f"conv layer {j}: filter height {layer.rows} > input height {rows}"
                )
            out = (rows - layer.rows + 1, layer.count)
            shapes.append(((rows, cols), out))
            rows, cols = out
        return shapes

    def flat_shape(self) -> tuple[int, int]:
        """Shape of the matrix that gets flattened into the FC input."""
        if self.conv_layers:
            return self.conv_shapes()[-1][1]
        return (self.input_rows, self.input_cols)

    @property
    def dense_only(self) -> bool:
        return not self.conv_layers

    @property
    def output_dim(self) -> int:
        return self.fc_widths[-1]

    def fc_dims(self) -> list[int]:
        """FC width chain [l0, l1, ..., l_out], l0 = flattened conv output."""
        r, c = self.flat_shape()
        return [r * c, *self.fc_widths]

    def fc_weight_count(self) -> int:
        dims = self.fc_dims()
        return sum((dims[j] + 1) * dims[j + 1] for j in range(len(dims) - 1))

    def conv_weight_count(self) -> int:
        return sum((l.rows * l.cols + 1) * l.count for l in self.conv_layers)

    def weight_count(self) -> int:
        """Total number of trainable values."""
        return self.fc_weight_count() + self.conv_weight_count()

    def fc_slices(self) -> list[slice]:
        """Flat-vector slice of each FC matrix, in layer order."""
        dims = self.fc_dims()
        out, off = [], 0
        for j in range(len(dims) - 1):
            n = (dims[j] + 1) * dims[j + 1]
            out.append(slice(off, off + n))
            off += n
        return out

    def filter_slices(self) -> list[list[slice]]:
        """Flat-vector slice of each filter, [layer][filter index]."""
        out, off = [], self.fc_weight_count()
        for layer in self.conv_layers:
            per_layer = []
            for _ in range(layer.count):
                n = layer.rows * layer.cols
                per_layer.append(slice(off, off + n))
                off += n
            out.append(per_layer)
        return out

    def bias_slices(self) -> list[slice]:
        """Flat-vector slice of each conv bias vector, in layer order."""
        off = self.fc_weight_count() + sum(
            l.rows * l.cols * l.count for l in self.conv_layers
        )
        out = []
        for layer in self.conv_layers:
            out.append(slice(off, off + layer.count))
            off += layer.count
        return out


@dataclass
class ForwardTrace:
    """Every intermediate of one forward pass, kept for the Jacobians.

    conv_inputs[j] is the matrix the j-th convolution consumed (already
    activated), conv_preacts[j] its raw output.  fc_inputs[j] is the
    augmented vector multiplied by the j-th FC matrix (fc_inputs[0] is
    the flattened-and-augmented conv output), fc_preacts[j] the result.
    The network output is fc_preacts[-1]; no activation follows it.
    """

    X: np.ndarray
    conv_inputs: list[np.ndarray]
    conv_preacts: list[np.ndarray]
    concat: np.ndarray
    fc_inputs: list[np.ndarray]
    fc_preacts: list[np.ndarray]
    output: np.ndarray
    theta: np.ndarray  # snapshot of the weights this trace was built from


def cnn_operator(
    X: np.ndarray, filters: Sequence[np.ndarray], biases: np.ndarray
) -> np.ndarray:
    """Full-width valid cross-correlation, one output column per filter.

    Entry (i, j) is the total elementwise product of filter j with the
    window of rows i..i+p-1 of X, plus bias j.  Output has
    (X.rows - p + 1) rows and one column per filter.
    """
    X = np.asarray(X, dtype=float)
    stack = np.stack([np.asarray(w, dtype=float) for w in filters])
    biases = np.asarray(biases, dtype=float).reshape(-1)
    q, p, m = stack.shape
    if m != X.shape[1]:
        raise ValueError(f"filter width {m} != input width {X.shape[1]}")
    if p > X.shape[0]:
        raise ValueError(f"filter height {p} > input height {X.shape[0]}")
    if biases.size != q:
        raise ValueError(f"{q} filters but {biases.size} biases")
    windows = sliding_window_view(X, (p, m))[:, 0]  # (rows-p+1, p, m)
    return np.tensordot(windows, stack, axes=([1, 2], [1, 2])) + biases


def unpack_weights(
    theta: np.ndarray, spec: NetworkSpec
) -> tuple[list[np.ndarray], list[list[np.ndarray]], list[np.ndarray]]:
    """Split the flat vector into (FC matrices, filters, conv biases).

    Returned arrays are views into ``theta`` where possible; matrices are
    rebuilt row by row, matching the layout contract.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != spec.weight_count():
        raise ConfigError(
            f"weight vector has {theta.size} entries, architecture needs "
            f"{spec.weight_count()}"
        )
    dims = spec.fc_dims()
    Vs = [
        theta[s].reshape(dims[j] + 1, dims[j + 1])
        for j, s in enumerate(spec.fc_slices())
    ]
    Ws = [
        [theta[s].reshape(layer.rows, layer.cols) for s in per_layer]
        for layer, per_layer in zip(spec.conv_layers, spec.filter_slices())
    ]
    Bs = [theta[s] for s in spec.bias_slices()]
    return Vs, Ws, Bs


def pack_weights(
    Vs: Sequence[np.ndarray],
    Ws: Sequence[Sequence[np.ndarray]],
    Bs: Sequence[np.ndarray],
    spec: NetworkSpec,
) -> np.ndarray:
    """Inverse of :func:`unpack_weights`; lossless round trip."""
    parts = [np.asarray(V, dtype=float).reshape(-1) for V in Vs]
    for per_layer in Ws:
        parts.extend(np.asarray(W, dtype=float).reshape(-1) for W in per_layer)
    parts.extend(np.asarray(B, dtype=float).reshape(-1) for B in Bs)
    theta = np.concatenate(parts) if parts else np.zeros(0)
    if theta.size != spec.weight_count():
        raise ConfigError(
            f"packed {theta.size} values, architecture needs {spec.weight_count()}"
        )
    return theta


def init_weights(
    spec: NetworkSpec, rng: np.random.Generator, low: float = -0.1, high: float = 0.1
) -> np.ndarray:
    """Uniform init over (low, high) for every trainable value."""
    return rng.uniform(low, high, spec.weight_count())


def forward(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray) -> ForwardTrace:
    """Evaluate the network on input matrix X, keeping all intermediates."""
    X = np.asarray(X, dtype=float)
    if X.shape != (spec.input_rows, spec.input_cols):
        raise ConfigError(
            f"input matrix is {X.shape}, expected "
            f"{(spec.input_rows, spec.input_cols)}"
        )
    Vs, Ws, Bs = unpack_weights(theta, spec)

    conv_inputs: list[np.ndarray] = []
    conv_preacts: list[np.ndarray] = []
    if spec.dense_only:
        flat_mat = spec.alpha1 * np.tanh(X / spec.alpha2)
    else:
        act = spec.alpha1 * np.tanh(X)
        for j in range(len(spec.conv_layers)):
            conv_inputs.append(act)
            pre = cnn_operator(act, Ws[j], Bs[j])
            conv_preacts.append(pre)
            act = np.tanh(pre)
        flat_mat = conv_preacts[-1]

    # Column-major flatten (rows of the transpose), then the constant 1.
    concat = np.append(vec_rowmajor(flat_mat.T), 1.0)

    fc_inputs: list[np.ndarray] = []
    fc_preacts: list[np.ndarray] = []
    vec = concat
    for j, V in enumerate(Vs):
        fc_inputs.append(vec)
        pre = V.T @ vec
        fc_preacts.append(pre)
        if j + 1 < len(Vs):
            vec = np.append(np.tanh(pre), 1.0)

    return ForwardTrace(
        X=X,
        conv_inputs=conv_inputs,
        conv_preacts=conv_preacts,
        concat=concat,
        fc_inputs=fc_inputs,
        fc_preacts=fc_preacts,
        output=fc_preacts[-1],
        theta=np.array(theta, dtype=float, copy=True).reshape(-1),
    )


class HistoryBuffer:
    """Ring buffer of time-stamped feature samples, one per simulator step.

    The closed loop appends one sample per step; the input matrix pulls
    the stored samples nearest to the requested lookback times.  Times
    before the first recorded sample read back as zeros (cold start).
    """

    def __init__(self, dim: int, sample_dt: float, depth: int):
        if dim < 1 or depth < 1 or sample_dt <= 0:
            raise ConfigError("HistoryBuffer needs dim >= 1, depth >= 1, dt > 0")
        self.dim = dim
        self.sample_dt = float(sample_dt)
        self.depth = depth
        self._data = np.zeros((depth, dim))
        self._head = -1
        self._count = 0
        self._t_latest = -np.inf

    def append(self, t: float, sample: np.ndarray) -> None:
        sample = np.asarray(sample, dtype=float).reshape(-1)
        if sample.size != self.dim:
            raise ValueError(f"sample has {sample.size} entries, buffer dim {self.dim}")
        self._head = (self._head + 1) % self.depth
        self._data[self._head] = sample
        self._count = min(self._count + 1, self.depth)
        self._t_latest = float(t)

    def sample_at(self, t: float) -> np.ndarray:
        """Stored sample nearest to time t; zeros if t predates history."""
        if self._count == 0:
            return np.zeros(self.dim)
        back = int(round((self._t_latest - t) / self.sample_dt))
        if back < 0:
            raise ValueError(f"buffer queried at t={t} past latest {self._t_latest}")
        if back >= self._count:
            return np.zeros(self.dim)
        return self._data[(self._head - back) % self.depth].copy()


def build_input_matrix(
    buffer: HistoryBuffer, t: float, spec: NetworkSpec, stack_dt: float
) -> np.ndarray:
    """Stack the newest sample and its ``stack_dt``-spaced predecessors.

    Row k (0-based) holds the sample at time t - k*stack_dt; rows beyond
    the recorded history are zero.
    """
    if buffer.dim != spec.input_cols:
        raise ConfigError(
            f"buffer sample dim {buffer.dim} != input matrix width {spec.input_cols}"
        )
    X = np.zeros((spec.input_rows, spec.input_cols))
    for k in range(spec.input_rows):
        X[k] = buffer.sample_at(t - k * stack_dt)
    return X
