"""Closed-form Jacobians of the network output w.r.t. every weight.

The result is one matrix with a row per network output and a column per
entry of the flat weight vector, column blocks in the exact layout of
:mod:`cnnadapt.network` (FC matrices, then filters, then conv biases).

FC blocks come from the chain rule through the remaining layers: with
``D_l = V_l[:-1].T * diag(sigma'(pre_{l-1}))`` the derivative w.r.t. the
row-by-row flattening of ``V_j`` is ``kron(input_j^T, U_{j+1})`` where
``U_{j+1} = D_{kf} ... D_{j+1}`` (empty product = identity).  The rows
of ``V_l`` that multiply the appended constant 1 contribute no gradient
and are dropped from ``D_l`` by construction.

Conv blocks are backpropagated one output row at a time: the flattened
FC entry gradient is folded back into a matrix (column-major, matching
the flattening of the transpose used by the forward pass), pushed down
through each layer as a superposition of shifted filters, and turned
into filter/bias gradients by summing the input windows each output
entry saw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import StaleTraceError
from .matops import reshape_colmajor
from .network import ForwardTrace, NetworkSpec, unpack_weights


def _check_fresh(trace: ForwardTrace, theta: np.ndarray) -> None:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if trace.theta.shape != theta.shape or not np.array_equal(trace.theta, theta):
        raise StaleTraceError(
            "forward trace was built from a different weight vector"
        )


def _fc_chain_factors(trace: ForwardTrace, Vs: list[np.ndarray]) -> list[np.ndarray]:
    """D_l for l = 1..k_f, each of shape (width_{l+1}, width_l)."""
    Ds = []
    for l in range(1, len(Vs)):
        act = trace.fc_inputs[l][:-1]  # tanh of the previous pre-activation
        Ds.append(Vs[l][:-1, :].T * (1.0 - act * act)[None, :])
    return Ds


def _upstream_chains(Ds: list[np.ndarray], out_dim: int) -> list[np.ndarray]:
    """U[j] = D_{kf} ... D_j for j = 1..kf+1 (U[kf+1] = identity).

    Index 0 is unused padding so U[j] reads naturally.
    """
    k_f = len(Ds)
    U: list[np.ndarray] = [np.empty(0)] * (k_f + 2)
    U[k_f + 1] = np.eye(out_dim)
    for j in range(k_f, 0, -1):
        U[j] = U[j + 1] @ Ds[j - 1]
    return U


def fc_jacobians(
    trace: ForwardTrace, theta: np.ndarray, spec: NetworkSpec
) -> list[np.ndarray]:
    """Jacobian block of each FC matrix, in layer order.

    Block j has shape (output_dim, (width_j + 1) * width_{j+1}) with
    columns ordered like the row-by-row flattening of the matrix.
    """
    _check_fresh(trace, theta)
    Vs, _, _ = unpack_weights(theta, spec)
    Ds = _fc_chain_factors(trace, Vs)
    U = _upstream_chains(Ds, spec.output_dim)
    return [
        np.kron(trace.fc_inputs[j][None, :], U[j + 1]) for j in range(len(Vs))
    ]


@dataclass
class BackpropState:
    """Per-output gradients flowing backward through the conv stack.

    ``flat_grad`` holds the gradient of each output w.r.t. the flattened
    conv output (including its trailing constant-1 slot).  ``pre_grads``
    and ``act_grads`` map layer index -> one matrix per network output,
    shaped like that layer's raw output / activated input respectively.
    """

    flat_grad: np.ndarray
    pre_grads: dict[int, list[np.ndarray]] = field(default_factory=dict)
    act_grads: dict[int, list[np.ndarray]] = field(default_factory=dict)


def conv_backprop_seed(
    trace: ForwardTrace, theta: np.ndarray, spec: NetworkSpec
) -> BackpropState:
    """Seed the conv backprop from the FC side.

    The gradient w.r.t. the flattened conv output is the FC chain times
    the first FC matrix; the constant-1 slot is dropped and the rest is
    folded back column by column into the conv output's shape.
    """
    _check_fresh(trace, theta)
    Vs, _, _ = unpack_weights(theta, spec)
    Ds = _fc_chain_factors(trace, Vs)
    U = _upstream_chains(Ds, spec.output_dim)
    flat_grad = U[1] @ Vs[0].T
    state = BackpropState(flat_grad=flat_grad)
    if spec.conv_layers:
        rows, cols = spec.flat_shape()
        last = len(spec.conv_layers) - 1
        state.pre_grads[last] = [
            reshape_colmajor(flat_grad[i, : rows * cols], rows, cols)
            for i in range(spec.output_dim)
        ]
    return state


def conv_layer_backprop(
    state: BackpropState,
    trace: ForwardTrace,
    theta: np.ndarray,
    spec: NetworkSpec,
    layer: int,
) -> BackpropState:
    """Propagate output gradients through conv layer ``layer``.

    Fills ``act_grads[layer]`` (gradient w.r.t. the layer's activated
    input) as the superposition of shifted filters weighted by the
    layer-output gradient, and for layer > 0 also ``pre_grads[layer-1]``
    via the activation derivative (1 - tanh^2, from stored activations).
    """
    _, Ws, _ = unpack_weights(theta, spec)
    p = spec.conv_layers[layer].rows
    in_shape = trace.conv_inputs[layer].shape
    act_grads = []
    for G in state.pre_grads[layer]:
        dact = np.zeros(in_shape)
        out_rows, q = G.shape
        for li in range(out_rows):
            for k in range(q):
                dact[li : li + p, :] += G[li, k] * Ws[layer][k]
        act_grads.append(dact)
    state.act_grads[layer] = act_grads
    if layer > 0:
        deriv = 1.0 - trace.conv_inputs[layer] ** 2
        state.pre_grads[layer - 1] = [dact * deriv for dact in act_grads]
    return state


def conv_weight_jacobians(
    state: BackpropState, trace: ForwardTrace, spec: NetworkSpec
) -> tuple[dict[int, list[list[np.ndarray]]], dict[int, list[np.ndarray]]]:
    """Filter and bias gradients for every conv layer in ``state``.

    filter_grads[layer][output][filter] is a (p, m) matrix: the sum of
    the input windows weighted by that filter's output-column gradient.
    bias_grads[layer][output] is the column sum of the output gradient.
    """
    filter_grads: dict[int, list[list[np.ndarray]]] = {}
    bias_grads: dict[int, list[np.ndarray]] = {}
    for layer, per_out in state.pre_grads.items():
        lspec = spec.conv_layers[layer]
        windows = sliding_window_view(
            trace.conv_inputs[layer], (lspec.rows, lspec.cols)
        )[:, 0]
        filter_grads[layer] = [
            [np.tensordot(G[:, k], windows, axes=(0, 0)) for k in range(lspec.count)]
            for G in per_out
        ]
        bias_grads[layer] = [G.sum(axis=0) for G in per_out]
    return filter_grads, bias_grads


def assemble_full_jacobian(
    trace: ForwardTrace, theta: np.ndarray, spec: NetworkSpec
) -> np.ndarray:
    """Full (output_dim x weight_count) Jacobian in weight-layout order."""
    _check_fresh(trace, theta)
    jac = np.zeros((spec.output_dim, spec.weight_count()))
    blocks = fc_jacobians(trace, theta, spec)
    for block, s in zip(blocks, spec.fc_slices()):
        jac[:, s] = block
    if spec.conv_layers:
        state = conv_backprop_seed(trace, theta, spec)
        for layer in range(len(spec.conv_layers) - 1, -1, -1):
            conv_layer_backprop(state, trace, theta, spec, layer)
        filter_grads, bias_grads = conv_weight_jacobians(state, trace, spec)
        fslices = spec.filter_slices()
        bslices = spec.bias_slices()
        for layer in range(len(spec.conv_layers)):
            for i in range(spec.output_dim):
                for k, s in enumerate(fslices[layer]):
                    jac[i, s] = filter_grads[layer][i][k].reshape(-1)
                jac[i, bslices[layer]] = bias_grads[layer][i]
    return jac
