"""Small dense-tensor engine with tape-based reverse-mode differentiation.

Only the operations the 3D convolutional VAE needs are provided. Arrays are
float64 numpy arrays; 5-D tensors use the (batch, channel, x, y, energy) layout.

Usage::

    with Tape() as tape:
        loss = cross_entropy(y, conv3d(x, w, stride=2, padding=1))
    tape.backward(loss)
    w.grad  # accumulated gradient
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation, DimensionError

_AXES = ("x", "y", "energy")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_active: list["Tape"] = []


class Tape:
    """Ordered log of executed operations.

    A tape records only while it is the innermost active context. Outside any
    tape, operations run forward-only (inference).
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def reset(self) -> None:
        self.records.clear()

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(.) to every leaf tensor with ``requires_grad``.

        Gradients are added to ``.grad`` (accumulation); the tape is cleared.
        """
        if loss.data.size != 1 or loss.data.ndim != 0:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(r.output) for r in self.records}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = inp
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g
        self.reset()


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    out = Tensor(out_data)
    if _active and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _active[-1].records.append(_Record(op, tuple(inputs), out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero where the clamp is active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _record("clip", (a,), np.clip(a.data, lo, hi), lambda g: (g * inside,))


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ContractViolation(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope)
    return _record("leaky_relu", (a,), a.data * scale, lambda g: (g * scale,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    return _record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _record("sum", (a,), np.asarray(a.data.sum()),
                   lambda g: (np.broadcast_to(g, a.shape).copy(),))


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"dot operands differ in shape: {a.shape} vs {b.shape}")
    return _record("dot", (a, b), np.asarray(np.vdot(a.data, b.data)),
                   lambda g: (g * b.data, g * a.data))


# ---------------------------------------------------------------- dense layers

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """out[b, g] = sum_f x[b, f] * weight[g, f] + bias[g]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError(f"linear expects 2-D input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear inner dimension mismatch: input has {x.shape[1]} features, "
            f"weight expects {weight.shape[1]}")
    out = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
        inputs.append(bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _record("linear", inputs, out, backward)


# ---------------------------------------------------------------- 3-D convolution

def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise DimensionError(f"expected 3 values (x, y, energy), got {v}")
    return v


def conv_output_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _check_conv(xshape, wshape, stride, padding, cin_axis: int):
    if len(xshape) != 5:
        raise DimensionError(f"expected 5-D input (batch, channel, x, y, energy), got {xshape}")
    if len(wshape) != 5:
        raise DimensionError(f"expected 5-D kernel, got {wshape}")
    if xshape[1] != wshape[cin_axis]:
        raise DimensionError(
            f"channel axis mismatch: input has {xshape[1]} channels, "
            f"kernel expects {wshape[cin_axis]}")
    for name, s in zip(_AXES, stride):
        if s < 1:
            raise DimensionError(f"stride along {name} must be >= 1, got {s}")
    for name, p in zip(_AXES, padding):
        if p < 0:
            raise DimensionError(f"padding along {name} must be >= 0, got {p}")


def _pad(x: np.ndarray, p) -> np.ndarray:
    if not any(p):
        return x
    return np.pad(x, ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2])))


def _windows(xp: np.ndarray, k, s) -> np.ndarray:
    win = sliding_window_view(xp, k, axis=(2, 3, 4))
    return win[:, :, ::s[0], ::s[1], ::s[2]]


def _conv_forward(x: np.ndarray, w: np.ndarray, s, p) -> np.ndarray:
    k = w.shape[2:]
    xp = _pad(x, p)
    for name, n, kk in zip(_AXES, xp.shape[2:], k):
        if kk > n:
            raise DimensionError(f"kernel extent {kk} along {name} exceeds padded input extent {n}")
    win = _windows(xp, k, s)
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    return np.ascontiguousarray(np.moveaxis(out, 4, 1))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, s, p, in_shape) -> np.ndarray:
    """Adjoint of ``_conv_forward`` with respect to its input."""
    B, _, Xo, Yo, Eo = g.shape
    cin = w.shape[1]
    kx, ky, ke = w.shape[2:]
    X, Y, E = in_shape[2:]
    # channel-major scratch keeps each kernel-offset slab contiguous
    cols = np.tensordot(w, g, axes=([0], [1]))  # Cin, kx, ky, ke, B, Xo, Yo, Eo
    gxp = np.zeros((cin, B, X + 2 * p[0], Y + 2 * p[1], E + 2 * p[2]))
    for i in range(kx):
        xs = slice(i, i + s[0] * (Xo - 1) + 1, s[0])
        for j in range(ky):
            ys = slice(j, j + s[1] * (Yo - 1) + 1, s[1])
            for m in range(ke):
                es = slice(m, m + s[2] * (Eo - 1) + 1, s[2])
                gxp[:, :, xs, ys, es] += cols[:, i, j, m]
    gxp = gxp[:, :, p[0]:p[0] + X, p[1]:p[1] + Y, p[2]:p[2] + E]
    return np.ascontiguousarray(gxp.transpose(1, 0, 2, 3, 4))


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, k, s, p) -> np.ndarray:
    win = _windows(_pad(x, p), k, s)
    Xo, Yo, Eo = g.shape[2:]
    win = win[:, :, :Xo, :Yo, :Eo]
    return np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))


def conv3d(x: Tensor, kernels: Tensor, stride=1, padding=0, bias: Tensor | None = None) -> Tensor:
    """Strided 3-D cross-correlation.

    x: (B, Cin, X, Y, E); kernels: (Cout, Cin, kx, ky, ke); optional bias (Cout,).
    Output extent per axis is ``floor((n + 2p - k) / s) + 1``.
    """
    s, p = _triple(stride), _triple(padding)
    _check_conv(x.shape, kernels.shape, s, p, cin_axis=1)
    w = kernels.data
    out = _conv_forward(x.data, w, s, p)
    inputs = [x, kernels]
    if bias is not None:
        out += bias.data[None, :, None, None, None]
        inputs.append(bias)

    def backward(g):
        grads = [_conv_input_grad(g, w, s, p, x.shape) if x.requires_grad else None,
                 _conv_weight_grad(x.data, g, w.shape[2:], s, p) if kernels.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    return _record("conv3d", inputs, out, backward)


def transpose_output_extents(in_extents, kernel, stride=1, padding=0):
    s, p = _triple(stride), _triple(padding)
    return tuple((n - 1) * ss - 2 * pp + k for n, k, ss, pp in zip(in_extents, kernel, s, p))


def conv3d_transpose(x: Tensor, kernels: Tensor, stride=1, padding=0,
                     output_shape: Sequence[int] | None = None,
                     bias: Tensor | None = None) -> Tensor:
    """Adjoint of :func:`conv3d` with the same kernels, stride and padding.

    x: (B, C, X, Y, E) with C == kernels.shape[0]; output has kernels.shape[1]
    channels. ``output_shape`` picks the spatial/energy extents when several
    map onto the input extents (stride > 1); it must be one of those.
    """
    s, p = _triple(stride), _triple(padding)
    _check_conv(x.shape, kernels.shape, s, p, cin_axis=0)
    w = kernels.data
    k = w.shape[2:]
    if output_shape is None:
        target = transpose_output_extents(x.shape[2:], k, s, p)
    else:
        target = tuple(int(n) for n in output_shape)[-3:]
    for name, n, kk, ss, pp, have in zip(_AXES, target, k, s, p, x.shape[2:]):
        if n < 1 or n + 2 * pp < kk or conv_output_extent(n, kk, ss, pp) != have:
            raise DimensionError(
                f"transposed convolution cannot reach extent {n} along {name} "
                f"from {have} with kernel {kk}, stride {ss}, padding {pp}")
    full = (x.shape[0], w.shape[1]) + target
    out = _conv_input_grad(x.data, w, s, p, full)
    inputs = [x, kernels]
    if bias is not None:
        out = out + bias.data[None, :, None, None, None]
        inputs.append(bias)

    def backward(g):
        grads = [_conv_forward(g, w, s, p) if x.requires_grad else None,
                 _conv_weight_grad(g, x.data, k, s, p) if kernels.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    return _record("conv3d_transpose", inputs, np.ascontiguousarray(out), backward)


# ---------------------------------------------------------------- probabilistic terms

def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_energy(logits: Tensor) -> Tensor:
    """Softmax along the last (energy) axis, max-subtracted."""
    if logits.data.ndim == 0 or logits.shape[-1] < 1:
        raise DimensionError("softmax_energy needs at least one energy channel")
    out = np.exp(_log_softmax(logits.data))

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record("softmax_energy", (logits,), out, backward)


def cross_entropy(y, logits: Tensor, tol: float = 1e-6) -> Tensor:
    """Sum over spectra of -sum_e y_e log softmax(logits)_e.

    ``y`` holds normalized spectra (non-negative, unit sum along the last axis)
    and is treated as a constant target.
    """
    y = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if y.shape != logits.shape:
        raise DimensionError(f"target shape {y.shape} != logits shape {logits.shape}")
    if np.any(y < 0):
        raise ContractViolation("cross_entropy target has negative intensities")
    sums = y.sum(axis=-1)
    worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if worst > tol:
        raise ContractViolation(
            f"cross_entropy target spectra must sum to 1 (worst deviation {worst:.3g})")
    logp = _log_softmax(logits.data)
    value = -np.sum(y * logp)

    def backward(g):
        return (g * (np.exp(logp) * sums[..., None] - y),)

    return _record("cross_entropy", (logits,), np.asarray(value), backward)


def entropy(y: np.ndarray) -> float:
    """Summed Shannon entropy (nats) of the spectra in ``y``; 0 log 0 = 0."""
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(y > 0, y * np.log(y), 0.0)
    return float(-terms.sum())


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dims, averaged over batch."""
    if mu.shape != logvar.shape:
        raise DimensionError(f"mu shape {mu.shape} != logvar shape {logvar.shape}")
    batch = mu.shape[0] if mu.data.ndim > 1 else 1
    var = np.exp(logvar.data)
    terms = 1.0 + logvar.data - mu.data ** 2 - var
    value = -0.5 * terms.sum() / batch

    def backward(g):
        return (g * mu.data / batch, g * 0.5 * (var - 1.0) / batch)

    return _record("kl_standard_normal", (mu, logvar), np.asarray(value), backward)


# ---------------------------------------------------------------- gradient oracle

def numerical_gradient(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` w.r.t. ``t.data`` (in place)."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f().data)
        flat[i] = orig - eps
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).

    The floor sits above finite-difference roundoff (~1e-16 |f| / step), so
    gradients that are exactly zero are compared on an absolute scale.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
              floor: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences."""
    for t in params:
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    worst = 0.0
    for t in params:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(f, t, eps)
        worst = max(worst, relative_error(analytic, numeric, floor))
    return worst
