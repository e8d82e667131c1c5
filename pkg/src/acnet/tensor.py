"""Dense NCHW tensor kernels.

Tensors are plain 4-D numpy arrays in ``(n, c, h, w)`` order. Everything here
is a pure function of its arguments; dtype follows the input (float32 for
training and inference, float64 for gradient checking).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

Tensor = np.ndarray

SUPPORTED_KERNEL_DIMS = (1, 3)

_debug = os.environ.get("ACNET_DEBUG", "") not in ("", "0")


class ShapeError(ValueError):
    pass


class UnsupportedKernelError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def set_debug(flag: bool) -> None:
    """Toggle finiteness checks on every kernel output."""
    global _debug
    _debug = bool(flag)


def _checked(t: np.ndarray, op: str) -> np.ndarray:
    if _debug and not np.all(np.isfinite(t)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return t


def as_tensor(data, dtype=np.float32) -> Tensor:
    t = np.ascontiguousarray(data, dtype=dtype)
    check_tensor(t)
    return t


def check_tensor(t: np.ndarray, name: str = "tensor") -> None:
    if t.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {t.shape}")
    if min(t.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {t.shape}")


@dataclass
class ConvKernel:
    """Weight ``(out_c, in_c, kh, kw)``, bias ``(out_c,)`` and "same" padding."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"kernel weight must be rank 4, got {self.weight.shape}")
        kh, kw = self.weight.shape[2:]
        if kh not in SUPPORTED_KERNEL_DIMS or kw not in SUPPORTED_KERNEL_DIMS:
            raise UnsupportedKernelError(f"kernel size {kh}x{kw} not supported")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match out channels {self.weight.shape[0]}"
            )

    @property
    def pad(self) -> tuple[int, int]:
        kh, kw = self.weight.shape[2:]
        return kh // 2, kw // 2

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size

    @classmethod
    def zeros(cls, out_c: int, in_c: int, kh: int, kw: int, dtype=np.float32) -> "ConvKernel":
        return cls(np.zeros((out_c, in_c, kh, kw), dtype), np.zeros(out_c, dtype))

    def copy(self) -> "ConvKernel":
        return ConvKernel(self.weight.copy(), self.bias.copy())

    def astype(self, dtype) -> "ConvKernel":
        return ConvKernel(self.weight.astype(dtype), self.bias.astype(dtype))


def _check_conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> None:
    check_tensor(x, "input")
    if weight.ndim != 4:
        raise ShapeError(f"kernel weight must be rank 4, got {weight.shape}")
    kh, kw = weight.shape[2:]
    if kh not in SUPPORTED_KERNEL_DIMS or kw not in SUPPORTED_KERNEL_DIMS:
        raise UnsupportedKernelError(f"kernel size {kh}x{kw} not supported")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match kernel {weight.shape}")


def _padded_flat(x: np.ndarray, ph: int, pw: int) -> tuple[np.ndarray, int]:
    # Zero-padded copy with one spare bottom row, so that every tap's window
    # of h * wp flat elements stays in bounds. Returns (n, c, rows * wp), wp.
    n, c, h, w = x.shape
    wp = w + 2 * pw
    xp = np.zeros((n, c, h + 2 * ph + 1, wp), dtype=x.dtype)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    return xp.reshape(n, c, -1), wp


def _taps(kh: int, kw: int, wp: int):
    for dy in range(kh):
        for dx in range(kw):
            yield dy, dx, dy * wp + dx


def conv2d_raw(x: Tensor, weight: np.ndarray, bias: np.ndarray) -> Tensor:
    """Stride-1 zero-padded "same" convolution (cross-correlation).

    Each kernel tap is one GEMM against a shifted flat view of the padded
    input; outputs are computed on the padded row pitch and the pad columns
    dropped afterwards.
    """
    _check_conv(x, weight, bias)
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    out = np.empty((n, o, h, w), dtype=x.dtype)
    weight = weight.astype(x.dtype, copy=False)
    if kh == 1 and kw == 1:
        wmat = weight.reshape(o, c)
        for i in range(n):
            np.matmul(wmat, x[i].reshape(c, h * w), out=out[i].reshape(o, h * w))
    else:
        xf, wp = _padded_flat(x, kh // 2, kw // 2)
        wt = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))
        span = h * wp
        acc = np.empty((o, span), dtype=x.dtype)
        tmp = np.empty_like(acc)
        for i in range(n):
            first = True
            for dy, dx, off in _taps(kh, kw, wp):
                if first:
                    np.matmul(wt[dy, dx], xf[i, :, off:off + span], out=acc)
                    first = False
                else:
                    np.matmul(wt[dy, dx], xf[i, :, off:off + span], out=tmp)
                    acc += tmp
            out[i] = acc.reshape(o, h, wp)[:, :, :w]
    out += bias.astype(x.dtype, copy=False)[None, :, None, None]
    return _checked(out, "conv2d")


def conv2d(x: Tensor, kernel: ConvKernel) -> Tensor:
    return conv2d_raw(x, kernel.weight, kernel.bias)


def conv2d_backward_raw(
    x: Tensor, weight: np.ndarray, grad_out: Tensor, need_input_grad: bool = True
) -> tuple[Tensor | None, np.ndarray, np.ndarray]:
    check_tensor(x, "input")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"input has {c} channels, kernel expects {ci}")
    if grad_out.shape != (n, o, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape}, expected {(n, o, h, w)}")
    weight = weight.astype(x.dtype, copy=False)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    if kh == 1 and kw == 1:
        wmat = weight.reshape(o, c)
        grad_w = np.zeros((o, c), dtype=x.dtype)
        grad_x = np.empty_like(x) if need_input_grad else None
        for i in range(n):
            g = grad_out[i].reshape(o, h * w)
            grad_w += g @ x[i].reshape(c, h * w).T
            if need_input_grad:
                np.matmul(wmat.T, g, out=grad_x[i].reshape(c, h * w))
        return grad_x, _checked(grad_w.reshape(weight.shape), "conv2d_backward"), grad_b

    ph, pw = kh // 2, kw // 2
    xf, wp = _padded_flat(x, ph, pw)
    span = h * wp
    wt = np.ascontiguousarray(weight.transpose(2, 3, 1, 0))  # (kh, kw, c, o)
    grad_wt = np.zeros((kh, kw, o, c), dtype=x.dtype)
    gxf = np.zeros_like(xf) if need_input_grad else None
    gpad = np.zeros((o, h, wp), dtype=x.dtype)
    tmp = np.empty((c, span), dtype=x.dtype)
    for i in range(n):
        gpad[:, :, :w] = grad_out[i]
        g = gpad.reshape(o, span)
        for dy, dx, off in _taps(kh, kw, wp):
            grad_wt[dy, dx] += g @ xf[i, :, off:off + span].T
            if need_input_grad:
                np.matmul(wt[dy, dx], g, out=tmp)
                gxf[i, :, off:off + span] += tmp
    grad_w = np.ascontiguousarray(grad_wt.transpose(2, 3, 0, 1))
    grad_x = None
    if need_input_grad:
        grad_x = gxf.reshape(n, c, h + 2 * ph + 1, wp)[:, :, ph:ph + h, pw:pw + w]
        grad_x = _checked(np.ascontiguousarray(grad_x), "conv2d_backward")
    return grad_x, _checked(grad_w, "conv2d_backward"), grad_b


def conv2d_backward(
    x: Tensor, kernel: ConvKernel, grad_out: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Adjoints of :func:`conv2d` w.r.t. input, weight and bias."""
    return conv2d_backward_raw(x, kernel.weight, grad_out)


def relu(t: Tensor) -> Tensor:
    return np.maximum(t, 0)


def relu_backward(t: Tensor, grad_out: Tensor) -> Tensor:
    # subgradient at exactly zero is taken as 0
    if t.shape != grad_out.shape:
        raise ShapeError(f"relu_backward shapes differ: {t.shape} vs {grad_out.shape}")
    return np.where(t > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    return _checked(a + b, "add")


def pixel_shuffle(t: Tensor, r: int) -> Tensor:
    """(n, c*r*r, h, w) -> (n, c, h*r, w*r) with channel-major (c, r, r) grouping."""
    check_tensor(t)
    n, c, h, w = t.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"{c} channels not divisible by r^2 = {r * r}")
    oc = c // (r * r)
    out = t.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, oc, h * r, w * r))


def pixel_unshuffle(t: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`; also its adjoint."""
    check_tensor(t)
    n, c, h, w = t.shape
    if r < 1 or h % r or w % r:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by {r}")
    out = t.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * r * r, h // r, w // r))
