"""Dense layer kernels with explicit backward passes.

Tensors are plain ``numpy.ndarray`` objects in NCHW layout. Every forward
function is pure; every ``*_backward`` returns a :class:`LayerGrad` holding
the gradient w.r.t. the layer input plus one entry per learnable parameter.

float32 is the working precision. Kernels preserve float64 when handed
float64 arrays, which is what the gradient checks rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


@dataclass
class LayerGrad:
    input_grad: np.ndarray
    param_grads: Dict[str, np.ndarray] = field(default_factory=dict)


def _arr(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(DTYPE)
    return a


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 array with all extents >= 1."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim and min(arr.shape) < 1:
        raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
    return arr


def _check_rank4(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (N, C, H, W), got shape {x.shape}")


def _conv_geometry(x, kernels, stride, padding):
    _check_rank4(x, "input")
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be rank 4 (Cout, Cin, k, k), got {kernels.shape}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernels.shape
    if kcin != cin:
        raise ShapeError(f"channel mismatch: input has {cin} channels, kernels expect {kcin}")
    if kh != kw:
        raise ShapeError(f"kernels must be square, got {kh}x{kw}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp:
        raise ShapeError(f"height: kernel {kh} exceeds padded input height {hp}")
    if kw > wp:
        raise ShapeError(f"width: kernel {kw} exceeds padded input width {wp}")
    if (hp - kh) % stride:
        raise ShapeError(f"height: stride {stride} does not divide padded extent {hp - kh}")
    if (wp - kw) % stride:
        raise ShapeError(f"width: stride {stride} does not divide padded extent {wp - kw}")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x, kernels, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (N, Cin, H, W) with ``kernels`` (Cout, Cin, k, k).

    Zero padding is applied symmetrically. Output extent along each spatial
    axis is ``(H + 2*padding - k) // stride + 1``.
    """
    x = _arr(x)
    kernels = _arr(kernels)
    bias = _arr(bias)
    ho, wo = _conv_geometry(x, kernels, stride, padding)
    cout, _, k, _ = kernels.shape
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    n = x.shape[0]
    if k == 1 and stride == 1 and padding == 0:
        out = np.tensordot(kernels[:, :, 0, 0], x, axes=([1], [1]))  # (Cout, N, H, W)
        out = out.transpose(1, 0, 2, 3)
    else:
        win = sliding_window_view(_pad(x, padding), (k, k), axis=(2, 3))
        win = win[:, :, ::stride, ::stride]  # (N, Cin, Ho, Wo, k, k)
        out = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, Cout)
        out = out.transpose(0, 3, 1, 2)
    out = out + bias.reshape(1, cout, 1, 1)
    assert out.shape == (n, cout, ho, wo)
    return np.ascontiguousarray(out)


def conv2d_backward(x, kernels, stride: int, padding: int, upstream) -> LayerGrad:
    """Gradients of :func:`conv2d` w.r.t. input, kernels (``"weight"``) and bias."""
    x = _arr(x)
    kernels = _arr(kernels)
    g = _arr(upstream)
    ho, wo = _conv_geometry(x, kernels, stride, padding)
    n, cin, h, w = x.shape
    cout, _, k, _ = kernels.shape
    if g.shape != (n, cout, ho, wo):
        raise ShapeError(f"upstream grad shape {g.shape} != forward output {(n, cout, ho, wo)}")

    db = g.sum(axis=(0, 2, 3), dtype=g.dtype)
    if k == 1 and stride == 1 and padding == 0:
        w2 = kernels[:, :, 0, 0]
        dw = np.tensordot(g, x, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        dx = np.tensordot(w2, g, axes=([0], [1])).transpose(1, 0, 2, 3)
    else:
        xp = _pad(x, padding)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (Cout, Cin, k, k)
        cols = np.tensordot(g, kernels, axes=([1], [0]))  # (N, Ho, Wo, Cin, k, k)
        cols = cols.transpose(0, 3, 4, 5, 1, 2)  # (N, Cin, k, k, Ho, Wo)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
    return LayerGrad(
        np.ascontiguousarray(dx),
        {"weight": np.ascontiguousarray(dw), "bias": db},
    )


def _check_transpose(x, kernels):
    _check_rank4(x, "input")
    if kernels.ndim != 4 or kernels.shape[2:] != (2, 2):
        raise ShapeError(f"transposed-conv kernels must be (Cin, Cout, 2, 2), got {kernels.shape}")
    if kernels.shape[0] != x.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[1]} channels, kernels expect {kernels.shape[0]}"
        )


def conv_transpose2d(x, kernels, bias=None) -> np.ndarray:
    """Stride-2, 2x2 transposed convolution; doubles both spatial extents.

    ``kernels`` has shape (Cin, Cout, 2, 2). Because the windows do not
    overlap, each input pixel paints one 2x2 output block.
    """
    x = _arr(x)
    kernels = _arr(kernels)
    _check_transpose(x, kernels)
    n, _, h, w = x.shape
    cout = kernels.shape[1]
    out = np.tensordot(x, kernels, axes=([1], [0]))  # (N, H, W, Cout, 2, 2)
    out = out.transpose(0, 3, 1, 4, 2, 5).reshape(n, cout, 2 * h, 2 * w)
    if bias is not None:
        bias = _arr(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
        out = out + bias.reshape(1, cout, 1, 1)
    return np.ascontiguousarray(out)


def conv_transpose2d_backward(x, kernels, upstream) -> LayerGrad:
    x = _arr(x)
    kernels = _arr(kernels)
    g = _arr(upstream)
    _check_transpose(x, kernels)
    n, _, h, w = x.shape
    cout = kernels.shape[1]
    if g.shape != (n, cout, 2 * h, 2 * w):
        raise ShapeError(f"upstream grad shape {g.shape} != forward output {(n, cout, 2 * h, 2 * w)}")
    g6 = g.reshape(n, cout, h, 2, w, 2)
    dx = np.tensordot(g6, kernels, axes=([1, 3, 5], [1, 2, 3]))  # (N, H, W, Cin)
    dk = np.tensordot(x, g6, axes=([0, 2, 3], [0, 2, 4]))  # (Cin, Cout, 2, 2)
    db = g.sum(axis=(0, 2, 3))
    return LayerGrad(
        np.ascontiguousarray(dx.transpose(0, 3, 1, 2)),
        {"weight": np.ascontiguousarray(dk), "bias": db},
    )


def maxpool2d(x):
    """2x2 / stride-2 max pooling.

    Returns ``(output, argmax)`` where ``argmax`` holds the flat index (0..3,
    row-major) of the winning element inside each window. Ties go to the
    first element in scan order.
    """
    x = _arr(x)
    _check_rank4(x, "input")
    n, c, h, w = x.shape
    if h % 2:
        raise ShapeError(f"height must be even for 2x2 pooling, got {h}")
    if w % 2:
        raise ShapeError(f"width must be even for 2x2 pooling, got {w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2d_backward(argmax, upstream) -> LayerGrad:
    g = _arr(upstream)
    if g.shape != argmax.shape:
        raise ShapeError(f"upstream grad shape {g.shape} != pooled shape {argmax.shape}")
    n, c, ho, wo = g.shape
    onehot = argmax[..., None] == np.arange(4, dtype=np.int8)
    scattered = np.where(onehot, g[..., None], 0)  # (N, C, Ho, Wo, 4)
    dx = scattered.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return LayerGrad(np.ascontiguousarray(dx.reshape(n, c, 2 * ho, 2 * wo)))


def relu(x) -> np.ndarray:
    x = _arr(x)
    return np.maximum(x, 0)


def relu_backward(x, upstream) -> LayerGrad:
    x = _arr(x)
    g = _arr(upstream)
    if g.shape != x.shape:
        raise ShapeError(f"upstream grad shape {g.shape} != input shape {x.shape}")
    # subgradient at exactly 0 is 0
    return LayerGrad(np.where(x > 0, g, 0))


def concat_channels(a, b) -> np.ndarray:
    a = _arr(a)
    b = _arr(b)
    _check_rank4(a, "a")
    _check_rank4(b, "b")
    for axis, label in ((0, "batch"), (2, "height"), (3, "width")):
        if a.shape[axis] != b.shape[axis]:
            raise ShapeError(f"{label} mismatch: {a.shape[axis]} vs {b.shape[axis]}")
    return np.concatenate([a, b], axis=1)


def concat_channels_backward(channels_a: int, upstream):
    """Split ``upstream`` into the gradients for ``a`` and ``b``."""
    g = _arr(upstream)
    if not 0 < channels_a < g.shape[1]:
        raise ShapeError(f"cannot split {g.shape[1]} channels at {channels_a}")
    return (LayerGrad(np.ascontiguousarray(g[:, :channels_a])),
            LayerGrad(np.ascontiguousarray(g[:, channels_a:])))


def sigmoid(x) -> np.ndarray:
    """Logistic function; never exponentiates a positive argument."""
    x = _arr(x)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + z), z / (1 + z)).astype(x.dtype)


def _check_targets(logits, targets):
    if logits.shape != targets.shape:
        raise ShapeError(f"logits shape {logits.shape} != targets shape {targets.shape}")
    if not np.all((targets == 0) | (targets == 1)):
        raise ValueError("targets must be binary (0 or 1)")


def bce_with_logits(logits, targets) -> float:
    """Mean binary cross entropy on raw logits, in the overflow-safe form."""
    x = _arr(logits)
    t = _arr(targets)
    _check_targets(x, t)
    terms = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    return float(terms.sum(dtype=np.float64) / x.size)


def bce_with_logits_backward(logits, targets) -> np.ndarray:
    x = _arr(logits)
    t = _arr(targets)
    _check_targets(x, t)
    return ((sigmoid(x) - t) / x.size).astype(x.dtype)


def he_init(shape, fan_in: int, rng_seed) -> np.ndarray:
    """Draw from N(0, 2 / fan_in).

    ``rng_seed`` may be an int or an existing ``numpy.random.Generator``.
    """
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(DTYPE)


@dataclass
class GradCheckReport:
    max_rel_error: Dict[str, float]
    tolerance: float

    @property
    def failed(self):
        return sorted(k for k, v in self.max_rel_error.items() if not v <= self.tolerance)

    @property
    def passed(self) -> bool:
        return not self.failed

    def __str__(self):
        lines = []
        for name, err in self.max_rel_error.items():
            status = "ok" if err <= self.tolerance else "FAIL"
            lines.append(f"{name:<32s} max_rel_err={err:.3e}  {status}")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 1e-3) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps near-zero gradients from turning float32 round-off into
    huge relative errors.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


def finite_difference_check(
    loss_and_grads: Callable[[Mapping[str, np.ndarray]], tuple],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-3,
    tolerance: float = 1e-3,
    indices: Mapping[str, np.ndarray] | None = None,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_and_grads(params)`` must return ``(loss, grads)`` where ``grads``
    maps every name in ``params`` to an array of the same shape. Inputs that
    should be checked are simply passed as additional entries of ``params``.
    ``indices`` optionally restricts each tensor to a subset of flat positions.
    Failures are reported, never raised.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    work = {k: np.array(v, copy=True) for k, v in params.items()}
    _, analytic = loss_and_grads(work)
    report = {}
    for name, value in work.items():
        flat = value.reshape(-1)
        positions = range(flat.size) if indices is None or name not in indices else indices[name]
        a_flat = np.asarray(analytic[name]).reshape(-1)
        errs = []
        for i in positions:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = loss_and_grads(work)[0]
            flat[i] = orig - epsilon
            f_minus = loss_and_grads(work)[0]
            flat[i] = orig
            # the step actually taken after rounding to the storage dtype
            step = float(np.float64(value.dtype.type(orig + epsilon)) - np.float64(value.dtype.type(orig - epsilon)))
            numeric = (f_plus - f_minus) / step
            errs.append(float(relative_error(a_flat[i], numeric, floor)))
        report[name] = max(errs) if errs else 0.0
    return GradCheckReport(report, tolerance)
