"""Propagation (P), transformation (T) and graph-convolution operators, with
their adaptive-initial-residual (AIR) variants and plain skip combinators."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {
    "relu": ad.relu,
    "identity": lambda t: t,
}


def _activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


class AirGate:
    """Learnable gate ``u`` (length ``2 * width``) for one AIR-equipped operation.

    ``pinned`` fixes every alpha to a constant; it exists for tests only.
    """

    def __init__(self, u: Tensor, layer_index: int, pinned: float | None = None):
        if u.shape[1] != 1:
            raise ValueError(f"gate vector must be a column, got shape {u.shape}")
        if layer_index < 2:
            raise ValueError("AIR gates exist only for operations with index l >= 2")
        self.u = u
        self.layer_index = layer_index
        self.pinned = pinned

    @classmethod
    def zeros(cls, width: int, layer_index: int, dtype=np.float64, name=None):
        u = Tensor(np.zeros((2 * width, 1), dtype=dtype), requires_grad=True, name=name)
        return cls(u, layer_index)

    @property
    def width(self) -> int:
        return self.u.shape[0] // 2


def p_op(adj, h: Tensor) -> Tensor:
    return ad.spmm(adj, h)


def t_op(h: Tensor, w: Tensor, activation: str = "relu", bias: Tensor | None = None) -> Tensor:
    if h.shape[1] != w.shape[0]:
        raise ValueError(f"t_op: input shape {h.shape} does not match weight shape {w.shape}")
    z = ad.matmul(h, w)
    if bias is not None:
        z = ad.add(z, bias)
    return _activation(activation)(z)


def graph_conv(adj, h: Tensor, w: Tensor, activation: str = "relu", bias: Tensor | None = None) -> Tensor:
    return t_op(p_op(adj, h), w, activation, bias)


def air_alpha(gate: AirGate, h_prev: Tensor, h0: Tensor) -> Tensor:
    """Per-node mixing fraction, an N x 1 column of values in (0, 1)."""
    if h_prev.shape != h0.shape:
        raise ValueError(f"air_alpha: h_prev {h_prev.shape} and h0 {h0.shape} differ in shape")
    if gate.u.shape[0] != 2 * h_prev.shape[1]:
        raise ValueError(
            f"air_alpha: gate length {gate.u.shape[0]} does not match 2 x width {2 * h_prev.shape[1]}"
        )
    if gate.pinned is not None:
        return Tensor._wrap(np.full((h_prev.shape[0], 1), gate.pinned, dtype=h_prev.dtype))
    return ad.sigmoid(ad.pair_row_dot(h_prev, h0, gate.u))


def air_mix(h_prev: Tensor, h0: Tensor, alpha: Tensor) -> Tensor:
    """``(1 - alpha) * h_prev + alpha * h0`` with ``alpha`` broadcast across columns."""
    return ad.mix_rows(h_prev, h0, alpha)


def gated_input(h_prev: Tensor, h0: Tensor, gate: AirGate) -> Tensor:
    """The mixture fed to the l-th propagation: ``air_mix`` with ``air_alpha``'s fractions."""
    if gate.pinned is not None:
        return air_mix(h_prev, h0, air_alpha(gate, h_prev, h0))
    if h_prev.shape != h0.shape:
        raise ValueError(f"air_alpha: h_prev {h_prev.shape} and h0 {h0.shape} differ in shape")
    if gate.u.shape[0] != 2 * h_prev.shape[1]:
        raise ValueError(
            f"air_alpha: gate length {gate.u.shape[0]} does not match 2 x width {2 * h_prev.shape[1]}"
        )
    return ad.gated_mix(h_prev, h0, gate.u)


def p_with_air(adj, h_prev: Tensor, h0: Tensor, gate: AirGate) -> Tensor:
    return p_op(adj, gated_input(h_prev, h0, gate))


def t_with_air(
    h_prev: Tensor,
    h0: Tensor,
    w: Tensor,
    activation: str = "relu",
    bias: Tensor | None = None,
    input_projection=None,
) -> Tensor:
    """``act((h_prev + project(h0)) @ w + bias)`` with a fixed unit residual weight.

    ``input_projection`` is a callable mapping ``h0`` to ``h_prev``'s width;
    it is required when the widths differ.
    """
    if input_projection is not None:
        h0 = input_projection(h0)
    elif h0.shape[1] != h_prev.shape[1]:
        raise ValueError(
            f"t_with_air: h0 width {h0.shape[1]} differs from h_prev width {h_prev.shape[1]} "
            "and no input_projection was given"
        )
    return t_op(ad.add(h_prev, h0), w, activation, bias)


def gc_with_air(adj, h_prev: Tensor, h0: Tensor, gate: AirGate, w: Tensor, activation="relu", bias=None) -> Tensor:
    return t_op(p_with_air(adj, h_prev, h0, gate), w, activation, bias)


def residual_combine(h_prev: Tensor, f_out: Tensor) -> Tensor:
    if h_prev.shape != f_out.shape:
        raise ValueError(f"residual_combine: shapes {h_prev.shape} and {f_out.shape} differ")
    return ad.add(h_prev, f_out)


def dense_combine(hs) -> Tensor:
    hs = list(hs)
    if not hs:
        raise ValueError("dense_combine needs at least one representation")
    out = hs[0]
    for h in hs[1:]:
        out = ad.concat_cols(out, h)
    return out
