"""Annotations, multi-hot masks, image preprocessing, augmentation and splits.

Coordinate convention: a point ``(x, y)`` is (column, row) and pixel
``(r, c)`` has its centre at ``x = c, y = r``. The image area spans
``[-0.5, W - 0.5] x [-0.5, H - 0.5]``.
"""
from __future__ import annotations

import base64
import json
import math
import struct
import warnings
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from PIL import Image

DEFAULT_CLASSES = ("dark", "busbar", "crack", "non-cell")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
VARIANTS = ("none", "flip_x", "flip_y", "flip_xy")

MASK_MAGIC = b"MSSM"
MASK_VERSION = 1


class AnnotationError(ValueError):
    """Annotation text failed to parse or validate."""


class UnknownClassError(AnnotationError):
    pass


class GeometryError(AnnotationError):
    pass


class MaskFormatError(ValueError):
    """A mask container is truncated, corrupt, or inconsistent."""


class ClassNameMismatchWarning(UserWarning):
    pass


# -- class set / masks -------------------------------------------------------

@dataclass(frozen=True)
class ClassSet:
    names: Tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError("class set must not be empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"class names must be unique: {self.names}")

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownClassError(f"unknown class {name!r}; expected one of {list(self.names)}") from None


@dataclass
class MultiHotMask:
    """Binary (C, H, W) label volume; planes are not mutually exclusive."""

    data: np.ndarray
    classes: Tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask must be (C, H, W), got shape {data.shape}")
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("mask values must be 0 or 1")
        self.data = np.ascontiguousarray(data, dtype=np.uint8)
        self.classes = tuple(self.classes)
        if len(self.classes) != self.data.shape[0]:
            raise ValueError(f"{len(self.classes)} class names for {self.data.shape[0]} planes")

    @property
    def shape(self):
        return self.data.shape

    def plane(self, name: str) -> np.ndarray:
        return self.data[self.classes.index(name)]

    def __eq__(self, other):
        return (isinstance(other, MultiHotMask) and self.classes == other.classes
                and np.array_equal(self.data, other.data))


# -- annotation schema -------------------------------------------------------

@dataclass
class Polygon:
    points: np.ndarray  # (K, 2) as (x, y)


@dataclass
class Polyline:
    points: np.ndarray
    thickness: float


@dataclass
class Bitmap:
    origin: Tuple[int, int]  # (x, y) of the top-left pixel
    patch: np.ndarray  # (h, w) uint8


@dataclass
class AnnotatedObject:
    cls: str
    geometry: object


@dataclass
class Annotation:
    image: str
    height: int
    width: int
    objects: List[AnnotatedObject] = field(default_factory=list)

    def to_dict(self) -> dict:
        objs = []
        for obj in self.objects:
            g = obj.geometry
            if isinstance(g, Polygon):
                objs.append({"class": obj.cls, "polygon": g.points.tolist()})
            elif isinstance(g, Polyline):
                objs.append({"class": obj.cls, "polyline": g.points.tolist(),
                             "thickness": g.thickness})
            else:
                h, w = g.patch.shape
                packed = np.packbits(g.patch.reshape(-1).astype(np.uint8))
                objs.append({"class": obj.cls, "bitmap": {
                    "origin": [int(g.origin[0]), int(g.origin[1])],
                    "height": int(h), "width": int(w),
                    "data": base64.b64encode(packed.tobytes()).decode("ascii"),
                }})
        return {"image": self.image, "height": self.height, "width": self.width, "objects": objs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise AnnotationError(f"{where}: missing field {key!r}")
    return obj[key]


def _int_field(obj, key, where) -> int:
    v = _field(obj, key, where)
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise AnnotationError(f"{where}.{key}: expected positive integer, got {v!r}")
    return v


def _points(raw, where: str, h: int, w: int) -> np.ndarray:
    try:
        pts = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise AnnotationError(f"{where}: points must be a list of [x, y] pairs") from None
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise AnnotationError(f"{where}: points must be a non-empty list of [x, y] pairs")
    if not np.all(np.isfinite(pts)):
        raise GeometryError(f"{where}: non-finite coordinate")
    # more than one full extent outside the frame is a labelling error, not jitter
    if (np.any(pts[:, 0] < -w) or np.any(pts[:, 0] > 2 * w)
            or np.any(pts[:, 1] < -h) or np.any(pts[:, 1] > 2 * h)):
        raise GeometryError(f"{where}: coordinate far outside the {w}x{h} image")
    pts[:, 0] = np.clip(pts[:, 0], -0.5, w - 0.5)
    pts[:, 1] = np.clip(pts[:, 1], -0.5, h - 0.5)
    return pts


def annotation_from_dict(doc: dict, class_set: ClassSet = ClassSet()) -> Annotation:
    image = _field(doc, "image", "annotation")
    if not isinstance(image, str):
        raise AnnotationError("annotation.image: expected a string")
    h = _int_field(doc, "height", "annotation")
    w = _int_field(doc, "width", "annotation")
    raw_objects = _field(doc, "objects", "annotation")
    if not isinstance(raw_objects, list):
        raise AnnotationError("annotation.objects: expected a list")
    objects = []
    for i, raw in enumerate(raw_objects):
        where = f"objects[{i}]"
        cls = _field(raw, "class", where)
        class_set.index(cls)
        kinds = [k for k in ("polygon", "polyline", "bitmap") if k in raw]
        if len(kinds) != 1:
            raise AnnotationError(f"{where}: exactly one of polygon/polyline/bitmap required")
        kind = kinds[0]
        if kind == "polygon":
            pts = _points(raw["polygon"], f"{where}.polygon", h, w)
            if len(pts) < 3:
                raise GeometryError(f"{where}.polygon: needs at least 3 points")
            geom = Polygon(pts)
        elif kind == "polyline":
            pts = _points(raw["polyline"], f"{where}.polyline", h, w)
            thickness = _field(raw, "thickness", where)
            if isinstance(thickness, bool) or not isinstance(thickness, (int, float)) \
                    or not math.isfinite(thickness) or thickness < 1:
                raise GeometryError(f"{where}.thickness: must be >= 1, got {thickness!r}")
            geom = Polyline(pts, float(thickness))
        else:
            bm = raw["bitmap"]
            origin = _field(bm, "origin", f"{where}.bitmap")
            if (not isinstance(origin, list) or len(origin) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in origin)):
                raise AnnotationError(f"{where}.bitmap.origin: expected [x, y] integers")
            bh = _int_field(bm, "height", f"{where}.bitmap")
            bw = _int_field(bm, "width", f"{where}.bitmap")
            ox, oy = origin
            if ox < 0 or oy < 0 or ox + bw > w or oy + bh > h:
                raise GeometryError(f"{where}.bitmap: {bw}x{bh} patch at {origin} exceeds {w}x{h} image")
            try:
                packed = np.frombuffer(base64.b64decode(_field(bm, "data", f"{where}.bitmap"),
                                                        validate=True), dtype=np.uint8)
            except (ValueError, TypeError):
                raise AnnotationError(f"{where}.bitmap.data: invalid base64") from None
            bits = np.unpackbits(packed)
            if bits.size < bh * bw or bits.size - bh * bw >= 8:
                raise AnnotationError(f"{where}.bitmap.data: {bits.size} bits for {bh}x{bw} patch")
            geom = Bitmap((ox, oy), bits[:bh * bw].reshape(bh, bw))
        objects.append(AnnotatedObject(cls, geom))
    return Annotation(image, h, w, objects)


def parse_annotation(text: str, class_set: ClassSet = ClassSet()) -> Annotation:
    """Parse and validate one JSON annotation document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return annotation_from_dict(doc, class_set)


# -- rasterisation -----------------------------------------------------------

def _fill_polygon(pts: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nonzero-winding fill sampled at pixel centres."""
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    winding = np.zeros((h, w), dtype=np.int32)
    nxt = np.roll(pts, -1, axis=0)
    for (x0, y0), (x1, y1) in zip(pts, nxt):
        if y0 == y1:
            continue
        cross = (x1 - x0) * (ys - y0) - (xs - x0) * (y1 - y0)
        if y0 <= y1:
            winding += ((y0 <= ys) & (ys < y1) & (cross > 0)).astype(np.int32)
        else:
            winding -= ((y1 <= ys) & (ys < y0) & (cross < 0)).astype(np.int32)
    return winding != 0


def _stroke_polyline(pts: np.ndarray, thickness: float, h: int, w: int) -> np.ndarray:
    """Round brush of diameter ``thickness`` swept along the polyline."""
    r = thickness / 2.0
    out = np.zeros((h, w), dtype=bool)
    segs = list(zip(pts[:-1], pts[1:])) if len(pts) > 1 else [(pts[0], pts[0])]
    for a, b in segs:
        x_lo = max(int(math.floor(min(a[0], b[0]) - r)), 0)
        x_hi = min(int(math.ceil(max(a[0], b[0]) + r)), w - 1)
        y_lo = max(int(math.floor(min(a[1], b[1]) - r)), 0)
        y_hi = min(int(math.ceil(max(a[1], b[1]) + r)), h - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        px = np.arange(x_lo, x_hi + 1, dtype=np.float64)[None, :]
        py = np.arange(y_lo, y_hi + 1, dtype=np.float64)[:, None]
        dx, dy = b[0] - a[0], b[1] - a[1]
        len2 = dx * dx + dy * dy
        if len2 == 0:
            t = 0.0
        else:
            t = np.clip(((px - a[0]) * dx + (py - a[1]) * dy) / len2, 0.0, 1.0)
        ex = px - (a[0] + t * dx)
        ey = py - (a[1] + t * dy)
        out[y_lo:y_hi + 1, x_lo:x_hi + 1] |= ex * ex + ey * ey <= r * r
    return out


def rasterize(annotation: Annotation, class_set: ClassSet = ClassSet()) -> MultiHotMask:
    h, w = annotation.height, annotation.width
    data = np.zeros((len(class_set), h, w), dtype=np.uint8)
    for obj in annotation.objects:
        plane = data[class_set.index(obj.cls)]
        g = obj.geometry
        if isinstance(g, Polygon):
            plane[_fill_polygon(g.points, h, w)] = 1
        elif isinstance(g, Polyline):
            plane[_stroke_polyline(g.points, g.thickness, h, w)] = 1
        else:
            ox, oy = g.origin
            ph, pw = g.patch.shape
            plane[oy:oy + ph, ox:ox + pw] |= g.patch.astype(np.uint8)
    return MultiHotMask(data, class_set.names)


# -- images ------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PNG and scale to [0, 1] float32."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            scale = 65535.0
        elif im.mode == "L":
            arr = np.asarray(im, dtype=np.float64)
            scale = 255.0
        else:
            raise ValueError(f"{path}: expected grayscale PNG, got mode {im.mode}")
    return (arr / scale).astype(np.float32)


def save_image(image: np.ndarray, path, bits: int = 8) -> None:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(path, optimize=False)
    elif bits == 16:
        Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def _bilinear_axis(n_in: int, n_out: int):
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_image(image, target: int = 256) -> np.ndarray:
    """Bilinear (half-pixel centres) resize of a (H, W) or (C, H, W) image."""
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[-2:]
    if (h, w) == (target, target):
        return img.copy()
    y0, y1, fy = _bilinear_axis(h, target)
    x0, x1, fx = _bilinear_axis(w, target)
    fy = fy.astype(np.float32)[:, None]
    fx = fx.astype(np.float32)[None, :]
    top = img[..., y0, :][..., :, x0] * (1 - fx) + img[..., y0, :][..., :, x1] * fx
    bot = img[..., y1, :][..., :, x0] * (1 - fx) + img[..., y1, :][..., :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def resize_mask(mask: MultiHotMask, target: int) -> MultiHotMask:
    """Nearest-neighbour resize; keeps every plane binary."""
    c, h, w = mask.shape
    ys = np.minimum(((np.arange(target) + 0.5) * h / target).astype(np.intp), h - 1)
    xs = np.minimum(((np.arange(target) + 0.5) * w / target).astype(np.intp), w - 1)
    return MultiHotMask(mask.data[:, ys][:, :, xs], mask.classes)


def to_channels(gray: np.ndarray, channels: int) -> np.ndarray:
    """Replicate a (H, W) gray image into (channels, H, W)."""
    g = np.asarray(gray, dtype=np.float32)
    return np.repeat(g[None], channels, axis=0)


def normalize_image(image, mean: Sequence[float] = IMAGENET_MEAN,
                    std: Sequence[float] = IMAGENET_STD) -> np.ndarray:
    """Channel-wise ``(x - mean) / std`` on a (C, H, W) image in [0, 1]."""
    img = np.asarray(image, dtype=np.float32)
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    if img.ndim != 3:
        raise ValueError(f"image must be (C, H, W), got shape {img.shape}")
    if mean.shape != (img.shape[0],) or std.shape != (img.shape[0],):
        raise ValueError(
            f"mean/std lengths ({mean.size}, {std.size}) must equal channel count {img.shape[0]}"
        )
    if np.any(std <= 0):
        raise ValueError("std must be positive")
    return ((img - mean[:, None, None]) / std[:, None, None]).astype(np.float32)


# -- records, augmentation, splitting ----------------------------------------

@dataclass
class SampleRecord:
    id: str
    source: str
    base_id: str
    variant: str
    image: np.ndarray  # (C, H, W) or (H, W)
    mask: MultiHotMask


def flip_array(a: np.ndarray, variant: str) -> np.ndarray:
    if variant == "none":
        return a.copy()
    if variant == "flip_x":
        return a[..., :, ::-1].copy()
    if variant == "flip_y":
        return a[..., ::-1, :].copy()
    if variant == "flip_xy":
        return a[..., ::-1, ::-1].copy()
    raise ValueError(f"unknown variant {variant!r}")


def flip_augment(record: SampleRecord) -> List[SampleRecord]:
    """The base record plus its x, y and xy mirror images."""
    if record.variant != "none":
        raise ValueError(f"record {record.id!r} is already an augmented variant ({record.variant})")
    out = []
    for v in VARIANTS:
        out.append(replace(
            record,
            id=f"{record.base_id}:{v}",
            variant=v,
            image=flip_array(record.image, v),
            mask=MultiHotMask(flip_array(record.mask.data, v), record.mask.classes),
        ))
    return out


def augment_all(records: Iterable[SampleRecord]) -> List[SampleRecord]:
    return [r for rec in records for r in flip_augment(rec)]


def split_dataset(base_ids: Sequence[str], ratio: Tuple[int, int] = (4, 1), seed: int = 0):
    """Shuffle base ids with ``seed`` and cut them ``ratio[0] : ratio[1]``.

    Returns ``(train_ids, val_ids)``. Operates on base images only; augment
    afterwards so every variant follows its base.
    """
    ids = sorted(set(base_ids))
    if len(ids) != len(base_ids):
        raise ValueError("base ids must be unique")
    if len(ids) < 5:
        raise ValueError(f"need at least 5 base images to split, got {len(ids)}")
    a, b = ratio
    if a < 1 or b < 1:
        raise ValueError(f"invalid ratio {ratio}")
    n_val = max(1, min(len(ids) - 1, int(round(len(ids) * b / (a + b)))))
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return shuffled[n_val:], shuffled[:n_val]


# -- statistics --------------------------------------------------------------

@dataclass
class DatasetStats:
    classes: Tuple[str, ...]
    n_images: int
    n_pixels: int
    cardinality: float
    density: float
    single_label_fraction: float
    image_frequency: Dict[str, float]
    pixel_frequency: Dict[str, float]
    imbalance_ratio: Dict[str, float]
    mean_imbalance_ratio: float

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def imbalance_ratios(pixel_frequency: Dict[str, float]) -> Dict[str, float]:
    """Each class's pixel frequency over that of the most frequent class."""
    top = max(pixel_frequency.values())
    if top <= 0:
        raise ValueError("no class is active anywhere; imbalance ratio undefined")
    return {k: float(v) / top for k, v in pixel_frequency.items()}


def compute_dataset_stats(masks: Iterable, class_set: ClassSet = ClassSet()) -> DatasetStats:
    """Label statistics over a corpus of masks (or records carrying masks)."""
    c = len(class_set)
    class_pixels = np.zeros(c, dtype=np.int64)
    class_images = np.zeros(c, dtype=np.int64)
    single = 0
    n_pix = 0
    n_img = 0
    for m in masks:
        m = m.mask if isinstance(m, SampleRecord) else m
        data = m.data if isinstance(m, MultiHotMask) else np.asarray(m)
        if data.shape[0] != c:
            raise ValueError(f"mask has {data.shape[0]} planes, class set has {c}")
        per_class = data.reshape(c, -1).sum(axis=1, dtype=np.int64)
        class_pixels += per_class
        class_images += per_class > 0
        single += int(np.count_nonzero(data.sum(axis=0, dtype=np.int64) == 1))
        n_pix += data[0].size
        n_img += 1
    if n_img == 0:
        raise ValueError("empty corpus")
    card = float(class_pixels.sum()) / n_pix
    pix_freq = {name: float(class_pixels[i]) / n_pix for i, name in enumerate(class_set)}
    # ratio from the integer counts: one rounding instead of three
    ratios = imbalance_ratios({name: int(class_pixels[i]) for i, name in enumerate(class_set)})
    return DatasetStats(
        classes=class_set.names,
        n_images=n_img,
        n_pixels=n_pix,
        cardinality=card,
        density=card / c,
        single_label_fraction=single / n_pix,
        image_frequency={name: float(class_images[i]) / n_img for i, name in enumerate(class_set)},
        pixel_frequency=pix_freq,
        imbalance_ratio=ratios,
        mean_imbalance_ratio=float(np.mean(list(ratios.values()))),
    )


# -- mask container ----------------------------------------------------------

def mask_to_bytes(mask: MultiHotMask) -> bytes:
    c, h, w = mask.shape
    if c > 255:
        raise MaskFormatError(f"too many planes for container: {c}")
    parts = [MASK_MAGIC, struct.pack("<BIIB", MASK_VERSION, h, w, c)]
    for name in mask.classes:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(mask.data.tobytes())
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob))


def mask_from_bytes(blob: bytes, class_set: ClassSet | None = None) -> MultiHotMask:
    header = 4 + struct.calcsize("<BIIB")
    if len(blob) < header + 4:
        raise MaskFormatError("truncated mask container")
    if blob[:4] != MASK_MAGIC:
        raise MaskFormatError(f"bad magic {blob[:4]!r}, expected {MASK_MAGIC!r}")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise MaskFormatError("CRC32 mismatch: container is truncated or corrupt")
    body = blob[:-4]
    version, h, w, c = struct.unpack("<BIIB", body[4:header])
    if version != MASK_VERSION:
        raise MaskFormatError(f"unsupported mask version {version}")
    if h < 1 or w < 1 or c < 1:
        raise MaskFormatError(f"invalid dimensions C={c} H={h} W={w}")
    pos = header
    names = []
    for _ in range(c):
        if pos + 2 > len(body):
            raise MaskFormatError("truncated class-name table")
        (n,) = struct.unpack("<H", body[pos:pos + 2])
        pos += 2
        if pos + n > len(body):
            raise MaskFormatError("truncated class name")
        try:
            names.append(body[pos:pos + n].decode("utf-8"))
        except UnicodeDecodeError:
            raise MaskFormatError("class name is not UTF-8") from None
        pos += n
    payload = len(body) - pos
    if payload != c * h * w:
        raise MaskFormatError(f"payload has {payload} bytes, header implies {c}*{h}*{w} = {c * h * w}")
    data = np.frombuffer(body[pos:], dtype=np.uint8).reshape(c, h, w)
    if np.any(data > 1):
        raise MaskFormatError("payload contains values other than 0 and 1")
    if class_set is not None and tuple(names) != class_set.names:
        warnings.warn(f"mask class names {names} differ from expected {list(class_set.names)}",
                      ClassNameMismatchWarning, stacklevel=3)
    return MultiHotMask(data.copy(), tuple(names))


def save_mask(mask: MultiHotMask, path) -> None:
    Path(path).write_bytes(mask_to_bytes(mask))


def load_mask(path, class_set: ClassSet | None = None) -> MultiHotMask:
    return mask_from_bytes(Path(path).read_bytes(), class_set)


def import_npy_mask(path, class_set: ClassSet = ClassSet()) -> MultiHotMask:
    """Adapter for masks stored as (C, H, W) ``.npy`` arrays."""
    arr = np.load(path, allow_pickle=False)
    if arr.ndim == 3 and arr.shape[0] != len(class_set) and arr.shape[-1] == len(class_set):
        arr = np.moveaxis(arr, -1, 0)
    return MultiHotMask((arr > 0).astype(np.uint8), class_set.names)


def preprocess(gray, mask: MultiHotMask, size: int, in_channels: int = 3,
               mean: Sequence[float] = IMAGENET_MEAN, std: Sequence[float] = IMAGENET_STD):
    """Resize, replicate the gray channel and normalise; resize the mask to match."""
    g = resize_image(gray, size)
    return normalize_image(to_channels(g, in_channels), mean, std), resize_mask(mask, size)


def make_record(base_id: str, gray, mask: MultiHotMask, size: int, source: str = "corpus",
                in_channels: int = 3, mean: Sequence[float] = IMAGENET_MEAN,
                std: Sequence[float] = IMAGENET_STD) -> SampleRecord:
    """A network-ready, unaugmented record."""
    image, m = preprocess(gray, mask, size, in_channels, mean, std)
    return SampleRecord(f"{base_id}:none", source, base_id, "none", image, m)
