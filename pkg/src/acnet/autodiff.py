"""Reverse-mode differentiation over the tensor kernels.

A :class:`Tape` is a Wengert list: every op appends a record naming its
inputs and output, and :func:`backward` walks the records in reverse,
accumulating adjoints. :class:`Eager` exposes the same op methods without
recording, so model code can be written once and run either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import tensor as T

REDUCTIONS = ("paper", "per_pixel")


def _loss_denominator(pred: np.ndarray, reduction: str) -> float:
    if reduction not in REDUCTIONS:
        raise ValueError(f"unknown loss reduction {reduction!r}")
    s = pred.shape[0]
    if reduction == "paper":
        return float(s)
    return float(s * int(np.prod(pred.shape[1:])))


def mse_loss(pred: np.ndarray, target: np.ndarray, reduction: str = "per_pixel") -> float:
    """Half mean squared error over the batch.

    ``paper`` sums squared errors over each image and divides by ``2 * S``;
    ``per_pixel`` additionally divides by the per-image element count.
    """
    if pred.shape != target.shape:
        raise T.ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.sum(diff * diff) / (2.0 * _loss_denominator(pred, reduction)))


def mse_loss_grad(pred: np.ndarray, target: np.ndarray, reduction: str = "per_pixel") -> np.ndarray:
    if pred.shape != target.shape:
        raise T.ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    return ((pred - target) / _loss_denominator(pred, reduction)).astype(pred.dtype)


@dataclass(eq=False)
class Var:
    """A value recorded on a tape."""

    value: Any
    index: int
    name: str | None = None

    @property
    def shape(self):
        return np.shape(self.value)


@dataclass
class Record:
    op: str
    inputs: tuple[int, ...]
    output: int
    attrs: dict = field(default_factory=dict)


def _conv_sum_forward(x, *wb):
    out = T.conv2d_raw(x, wb[0], wb[1])
    for k in range(2, len(wb), 2):
        out += T.conv2d_raw(x, wb[k], wb[k + 1])
    return out


def _fold(wb):
    """Embed parallel same-padded kernels into one kernel covering them all."""
    ws, bs = wb[0::2], wb[1::2]
    kh = max(w.shape[2] for w in ws)
    kw = max(w.shape[3] for w in ws)
    folded = np.zeros(ws[0].shape[:2] + (kh, kw), dtype=ws[0].dtype)
    for w in ws:
        dy, dx = (kh - w.shape[2]) // 2, (kw - w.shape[3]) // 2
        folded[:, :, dy:dy + w.shape[2], dx:dx + w.shape[3]] += w
    bias = bs[0].copy()
    for b in bs[1:]:
        bias += b
    return folded, bias


def _conv_folded_forward(x, *wb):
    if len(wb) == 2:
        return T.conv2d_raw(x, *wb)
    return T.conv2d_raw(x, *_fold(wb))


def _add_n_forward(*ts):
    out = ts[0].copy()
    for t in ts[1:]:
        if t.shape != out.shape:
            raise T.ShapeError(f"cannot add shapes {out.shape} and {t.shape}")
        out += t
    return out


_FORWARD: dict[str, Callable] = {
    "conv_sum": lambda attrs, x, *wb: _conv_folded_forward(x, *wb),
    "relu": lambda attrs, x: T.relu(x),
    "add": lambda attrs, a, b: T.add(a, b),
    "add_n": lambda attrs, *ts: _add_n_forward(*ts),
    "pixel_shuffle": lambda attrs, x: T.pixel_shuffle(x, attrs["r"]),
    "mse_loss": lambda attrs, p, t: mse_loss(p, t, attrs["reduction"]),
}


def _conv_sum_backward(attrs, g, needs, x, *wb):
    folded, _ = _fold(wb) if len(wb) > 2 else wb
    gx, gw, gb = T.conv2d_backward_raw(x, folded, g, need_input_grad=needs[0])
    kh, kw = folded.shape[2:]
    grads = [gx]
    for w in wb[0::2]:
        dy, dx = (kh - w.shape[2]) // 2, (kw - w.shape[3]) // 2
        grads += [np.ascontiguousarray(gw[:, :, dy:dy + w.shape[2], dx:dx + w.shape[3]]), gb]
    return grads


_BACKWARD: dict[str, Callable] = {
    "conv_sum": _conv_sum_backward,
    "relu": lambda attrs, g, needs, x: [T.relu_backward(x, g)],
    "add": lambda attrs, g, needs, a, b: [g, g],
    "add_n": lambda attrs, g, needs, *ts: [g] * len(ts),
    "pixel_shuffle": lambda attrs, g, needs, x: [T.pixel_unshuffle(g, attrs["r"])],
    "mse_loss": lambda attrs, g, needs, p, t: [g * mse_loss_grad(p, t, attrs["reduction"]), None],
}


class Tape:
    """Records op applications for reverse-mode differentiation."""

    def __init__(self):
        self.vars: list[Var] = []
        self.records: list[Record] = []
        self.params: dict[str, Var] = {}
        self._trainable: set[int] = set()

    def _new(self, value, name=None) -> Var:
        v = Var(value, len(self.vars), name)
        self.vars.append(v)
        return v

    def param(self, name: str, value: np.ndarray) -> Var:
        """Leaf that receives a gradient; repeated names return the same leaf."""
        if name in self.params:
            return self.params[name]
        v = self._new(value, name)
        self.params[name] = v
        self._trainable.add(v.index)
        return v

    def constant(self, value: np.ndarray) -> Var:
        return self._new(value)

    def kernel(self, name: str, kernel: T.ConvKernel):
        return self.param(f"{name}.weight", kernel.weight), self.param(f"{name}.bias", kernel.bias)

    def _apply(self, op: str, inputs: list[Var], **attrs) -> Var:
        value = _FORWARD[op](attrs, *[v.value for v in inputs])
        out = self._new(value)
        self.records.append(Record(op, tuple(v.index for v in inputs), out.index, attrs))
        return out

    def conv2d(self, x: Var, kernel) -> Var:
        return self.conv_sum(x, [kernel])

    def conv_sum(self, x: Var, kernels) -> Var:
        """Sum of several same-padded convolutions of one input.

        Recorded as a single convolution with the branches folded into one
        kernel; the weight gradient is sliced back out per branch.
        """
        flat = [x]
        for w, b in kernels:
            flat += [w, b]
        return self._apply("conv_sum", flat)

    def relu(self, x: Var) -> Var:
        return self._apply("relu", [x])

    def add(self, a: Var, b: Var) -> Var:
        return self._apply("add", [a, b])

    def add_n(self, ts: list[Var]) -> Var:
        return self._apply("add_n", list(ts))

    def pixel_shuffle(self, x: Var, r: int) -> Var:
        return self._apply("pixel_shuffle", [x], r=r)

    def mse_loss(self, pred: Var, target: Var, reduction: str = "per_pixel") -> Var:
        return self._apply("mse_loss", [pred, target], reduction=reduction)

    @property
    def output(self) -> Var:
        return self.vars[self.records[-1].output] if self.records else self.vars[-1]

    def replay(self) -> Any:
        """Recompute every record from the leaf values; returns the output value."""
        values = {v.index: v.value for v in self.vars}
        produced = {r.output for r in self.records}
        values = {i: val for i, val in values.items() if i not in produced}
        for r in self.records:
            values[r.output] = _FORWARD[r.op](r.attrs, *[values[i] for i in r.inputs])
        return values[self.output.index]

    def _requires_grad(self) -> set[int]:
        needed = set(self._trainable)
        for r in self.records:
            if any(i in needed for i in r.inputs):
                needed.add(r.output)
        return needed


def backward(tape: Tape, output: Var | None = None) -> dict[str, np.ndarray]:
    """Adjoint of a scalar output w.r.t. every named parameter on ``tape``."""
    out = tape.output if output is None else output
    if np.ndim(out.value) != 0:
        raise T.ShapeError(f"backward needs a scalar output, got shape {np.shape(out.value)}")
    live = tape._requires_grad()
    grads: dict[int, Any] = {out.index: 1.0}
    for r in reversed(tape.records):
        g = grads.pop(r.output, None)
        if g is None:
            continue
        ins = [tape.vars[i].value for i in r.inputs]
        needs = [i in live for i in r.inputs]
        in_grads = _BACKWARD[r.op](r.attrs, g, needs, *ins)
        for i, need, gi in zip(r.inputs, needs, in_grads):
            if not need or gi is None:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi
    result = {}
    for name, v in tape.params.items():
        g = grads.get(v.index)
        result[name] = np.zeros_like(v.value) if g is None else np.asarray(g, dtype=v.value.dtype)
    return result


class Eager:
    """Same op surface as :class:`Tape` on bare arrays, without recording."""

    def param(self, name, value):
        return value

    def constant(self, value):
        return value

    def kernel(self, name, kernel: T.ConvKernel):
        return kernel.weight, kernel.bias

    def conv2d(self, x, kernel):
        return T.conv2d_raw(x, *kernel)

    def conv_sum(self, x, kernels):
        flat = []
        for w, b in kernels:
            flat += [w, b]
        return _conv_sum_forward(x, *flat)

    def relu(self, x):
        return T.relu(x)

    def add(self, a, b):
        return T.add(a, b)

    def add_n(self, ts):
        return _add_n_forward(*ts)

    def pixel_shuffle(self, x, r):
        return T.pixel_shuffle(x, r)

    def mse_loss(self, pred, target, reduction="per_pixel"):
        return mse_loss(pred, target, reduction)


EAGER = Eager()
