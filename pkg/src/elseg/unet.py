"""Multi-label U-Net assembled from the kernels in :mod:`elseg.tensor`.

The head is a 1x1 convolution producing one logit map per class. Probabilities
come from an independent sigmoid per channel, so a pixel can be active in
several classes at once.
"""
from __future__ import annotations

import struct
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T

WEIGHTS_MAGIC = b"MSSW"
WEIGHTS_VERSION = 1
_DTYPE_F32 = 1
_DTYPE_U32 = 2
_CONFIG_NAME = "__config"
_CONFIG_FIELDS = ("in_channels", "out_channels", "depth", "base_width", "input_size")


class WeightsFormatError(ValueError):
    """The weights file is truncated, corrupt, or not a weights file."""


class ShapeAuditError(ValueError):
    """Parameter tensors do not match the shapes implied by a config."""


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 4
    depth: int = 4
    base_width: int = 64
    input_size: int = 256

    def __post_init__(self):
        for name in _CONFIG_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.input_size % (2 ** self.depth):
            raise ValueError(
                f"input_size {self.input_size} must be divisible by 2**depth = {2 ** self.depth}"
            )

    def width(self, stage: int) -> int:
        return self.base_width * 2 ** stage


def parameter_shapes(config: UNetConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Every parameter name and shape, in the canonical storage order."""
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()

    def conv(prefix, cin, cout, k=3):
        shapes[f"{prefix}.weight"] = (cout, cin, k, k)
        shapes[f"{prefix}.bias"] = (cout,)

    cin = config.in_channels
    for i in range(config.depth):
        w = config.width(i)
        conv(f"enc{i}.conv0", cin, w)
        conv(f"enc{i}.conv1", w, w)
        cin = w
    wb = config.width(config.depth)
    conv("bottleneck.conv0", cin, wb)
    conv("bottleneck.conv1", wb, wb)
    for i in reversed(range(config.depth)):
        w = config.width(i)
        shapes[f"dec{i}.up.weight"] = (2 * w, w, 2, 2)
        shapes[f"dec{i}.up.bias"] = (w,)
        conv(f"dec{i}.conv0", 2 * w, w)
        conv(f"dec{i}.conv1", w, w)
    conv("head", config.base_width, config.out_channels, k=1)
    return shapes


@dataclass
class UNetModel:
    config: UNetConfig
    params: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def copy(self) -> "UNetModel":
        return UNetModel(self.config, OrderedDict((k, v.copy()) for k, v in self.params.items()))


def audit_shapes(model: UNetModel, config: UNetConfig | None = None) -> None:
    """Raise :class:`ShapeAuditError` naming the first tensor that disagrees."""
    expected = parameter_shapes(config or model.config)
    for name, shape in expected.items():
        got = model.params.get(name)
        if got is None:
            raise ShapeAuditError(f"missing tensor {name!r} (expected shape {shape})")
        if tuple(got.shape) != shape:
            raise ShapeAuditError(f"tensor {name!r} has shape {tuple(got.shape)}, expected {shape}")
    extra = [k for k in model.params if k not in expected]
    if extra:
        raise ShapeAuditError(f"unexpected tensor {extra[0]!r}")


def build_unet(config: UNetConfig, seed=0) -> UNetModel:
    """He-initialise every kernel (biases zero), deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=T.DTYPE)
        elif ".up." in name:
            # transposed conv: each output pixel sees Cin inputs through one tap
            params[name] = T.he_init(shape, shape[0], rng)
        else:
            params[name] = T.he_init(shape, int(np.prod(shape[1:])), rng)
    return UNetModel(config, params)


def count_parameters(model: UNetModel) -> int:
    return int(sum(p.size for p in model.params.values()))


def _check_batch(model: UNetModel, x: np.ndarray) -> None:
    cfg = model.config
    if x.ndim != 4:
        raise T.ShapeError(f"batch must be rank 4 (N, C, S, S), got shape {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise T.ShapeError(f"batch has {x.shape[1]} channels, model expects {cfg.in_channels}")
    if x.shape[2:] != (cfg.input_size, cfg.input_size):
        raise T.ShapeError(
            f"batch spatial size {x.shape[2:]} != configured input_size {cfg.input_size}"
        )


def _conv_relu(p, prefix, x, tape):
    z = T.conv2d(x, p[prefix + ".weight"], p[prefix + ".bias"], 1, 1)
    tape.append(("conv", prefix, x))
    tape.append(("relu", prefix, z))
    return T.relu(z)


def _forward(model: UNetModel, x: np.ndarray, tape: list | None, trace: list | None = None):
    p = model.params
    depth = model.config.depth
    rec = tape if tape is not None else []
    note = trace.append if trace is not None else (lambda item: None)
    skips = []
    h = x
    for i in range(depth):
        h = _conv_relu(p, f"enc{i}.conv0", h, rec)
        h = _conv_relu(p, f"enc{i}.conv1", h, rec)
        skips.append(h)
        note((f"enc{i}", h.shape))
        h, idx = T.maxpool2d(h)
        rec.append(("pool", f"enc{i}", idx))
    h = _conv_relu(p, "bottleneck.conv0", h, rec)
    h = _conv_relu(p, "bottleneck.conv1", h, rec)
    note(("bottleneck", h.shape))
    for i in reversed(range(depth)):
        up = T.conv_transpose2d(h, p[f"dec{i}.up.weight"], p[f"dec{i}.up.bias"])
        rec.append(("up", f"dec{i}.up", h))
        h = T.concat_channels(up, skips[i])
        rec.append(("concat", f"dec{i}", up.shape[1]))
        h = _conv_relu(p, f"dec{i}.conv0", h, rec)
        h = _conv_relu(p, f"dec{i}.conv1", h, rec)
        note((f"dec{i}", h.shape))
    out = T.conv2d(h, p["head.weight"], p["head.bias"], 1, 0)
    rec.append(("head", "head", h))
    note(("head", out.shape))
    return out


def forward(model: UNetModel, batch) -> np.ndarray:
    """Logits of shape (N, out_channels, S, S); no activation applied."""
    x = np.asarray(batch)
    if x.dtype != np.float64:
        x = x.astype(T.DTYPE, copy=False)
    _check_batch(model, x)
    return _forward(model, x, None)


def predict_probabilities(model: UNetModel, batch) -> np.ndarray:
    """Independent per-channel sigmoid of the logits (no softmax)."""
    return T.sigmoid(forward(model, batch))


def _backward(model: UNetModel, tape: list, upstream: np.ndarray) -> Dict[str, np.ndarray]:
    p = model.params
    grads: Dict[str, np.ndarray] = {}
    g = upstream
    skip_grads: Dict[str, np.ndarray] = {}
    for kind, name, saved in reversed(tape):
        if kind == "head":
            lg = T.conv2d_backward(saved, p["head.weight"], 1, 0, g)
            g = lg.input_grad
        elif kind == "relu":
            g = T.relu_backward(saved, g).input_grad
            continue
        elif kind == "conv":
            lg = T.conv2d_backward(saved, p[name + ".weight"], 1, 1, g)
            g = lg.input_grad
        elif kind == "concat":
            ga, gb = T.concat_channels_backward(saved, g)
            g = ga.input_grad
            stage = name[len("dec"):]
            skip_grads[stage] = gb.input_grad
            continue
        elif kind == "up":
            lg = T.conv_transpose2d_backward(saved, p[name + ".weight"], g)
            g = lg.input_grad
        elif kind == "pool":
            g = T.maxpool2d_backward(saved, g).input_grad
            # the encoder output also fed the skip connection
            g = g + skip_grads.pop(name[len("enc"):])
            continue
        else:  # pragma: no cover
            raise RuntimeError(kind)
        grads[name + ".weight"] = lg.param_grads["weight"]
        grads[name + ".bias"] = lg.param_grads["bias"]
    grads["__input__"] = g
    return grads


def loss_and_grads(model: UNetModel, batch, targets):
    """Mean BCE-with-logits loss and its gradient for every parameter.

    The returned dict also carries the gradient w.r.t. the batch under the
    key ``"__input__"``.
    """
    x = np.asarray(batch)
    if x.dtype != np.float64:
        x = x.astype(T.DTYPE, copy=False)
    _check_batch(model, x)
    tape: list = []
    logits = _forward(model, x, tape)
    loss = T.bce_with_logits(logits, targets)
    grads = _backward(model, tape, T.bce_with_logits_backward(logits, targets))
    return loss, grads


def feature_schedule(config: UNetConfig) -> List[Tuple[str, Tuple[int, int]]]:
    """Closed-form (name, (channels, spatial extent)) for every stage output."""
    s = config.input_size
    out = []
    for i in range(config.depth):
        out.append((f"enc{i}", (config.width(i), s // 2 ** i)))
    out.append(("bottleneck", (config.width(config.depth), s // 2 ** config.depth)))
    for i in reversed(range(config.depth)):
        out.append((f"dec{i}", (config.width(i), s // 2 ** i)))
    out.append(("head", (config.out_channels, s)))
    return out


def trace_feature_shapes(model: UNetModel, batch) -> List[Tuple[str, Tuple[int, ...]]]:
    """Run a forward pass and record the actual output shape of each stage."""
    x = np.asarray(batch, dtype=T.DTYPE)
    _check_batch(model, x)
    trace: list = []
    _forward(model, x, None, trace)
    return trace


# -- persistence -------------------------------------------------------------

def _pack_tensor(name: str, arr: np.ndarray, dtype_code: int) -> bytes:
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", dtype_code)
    np_dtype = "<f4" if dtype_code == _DTYPE_F32 else "<u4"
    return head + np.ascontiguousarray(arr, dtype=np_dtype).tobytes()


def weights_to_bytes(model: UNetModel) -> bytes:
    cfg = np.array([getattr(model.config, f) for f in _CONFIG_FIELDS], dtype=np.uint32)
    body = [WEIGHTS_MAGIC, struct.pack("<BI", WEIGHTS_VERSION, len(model.params) + 1)]
    body.append(_pack_tensor(_CONFIG_NAME, cfg, _DTYPE_U32))
    for name, arr in model.params.items():
        body.append(_pack_tensor(name, arr, _DTYPE_F32))
    blob = b"".join(body)
    return blob + struct.pack("<I", zlib.crc32(blob))


def save_weights(model: UNetModel, path) -> None:
    Path(path).write_bytes(weights_to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsFormatError(f"truncated file while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def weights_from_bytes(data: bytes, expected: UNetConfig | None = None) -> UNetModel:
    if len(data) < 4 + 1 + 4 + 4:
        raise WeightsFormatError("truncated file: shorter than the fixed header")
    if data[:4] != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"bad magic {data[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise WeightsFormatError("CRC32 mismatch: file is truncated or corrupt")
    r = _Reader(data[:-4])
    r.take(4, "magic")
    version, count = r.unpack("<BI", "header")
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"unsupported version {version}")
    tensors = []
    for i in range(count):
        (nlen,) = r.unpack("<H", f"name length of tensor {i}")
        try:
            name = r.take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightsFormatError(f"tensor {i} name is not UTF-8") from exc
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        shape = r.unpack(f"<{rank}I", f"extents of {name!r}")
        (code,) = r.unpack("<B", f"dtype of {name!r}")
        if code not in (_DTYPE_F32, _DTYPE_U32):
            raise WeightsFormatError(f"unknown dtype code {code} for {name!r}")
        size = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * size, f"payload of {name!r}")
        arr = np.frombuffer(raw, dtype="<f4" if code == _DTYPE_F32 else "<u4").reshape(shape)
        tensors.append((name, arr))
    if r.pos != len(r.data):
        raise WeightsFormatError("trailing bytes after last tensor")
    if not tensors or tensors[0][0] != _CONFIG_NAME:
        raise WeightsFormatError(f"first tensor must be {_CONFIG_NAME!r}")
    cfg_arr = tensors[0][1]
    if cfg_arr.shape != (len(_CONFIG_FIELDS),):
        raise WeightsFormatError(f"{_CONFIG_NAME} has shape {cfg_arr.shape}")
    try:
        config = UNetConfig(**{f: int(v) for f, v in zip(_CONFIG_FIELDS, cfg_arr)})
    except ValueError as exc:
        raise WeightsFormatError(f"embedded config invalid: {exc}") from exc
    params = OrderedDict((n, a.astype(T.DTYPE)) for n, a in tensors[1:])
    model = UNetModel(config, params)
    audit_shapes(model)
    if expected is not None:
        audit_shapes(model, expected)
        model = UNetModel(expected, params)
    return model


def load_weights(path, expected: UNetConfig | None = None) -> UNetModel:
    """Read a weights file; if ``expected`` is given, audit against it too."""
    return weights_from_bytes(Path(path).read_bytes(), expected)


def config_dict(config: UNetConfig) -> dict:
    return asdict(config)
