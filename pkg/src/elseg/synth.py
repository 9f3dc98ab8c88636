"""Deterministic EL-like cell images with overlapping multi-hot ground truth."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from scipy import ndimage

from . import data as D


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    busbar_count: int = 3
    busbar_width: int = 3
    crack_count: Tuple[int, int] = (1, 3)
    crack_step: float = 3.0
    crack_turn_std: float = 0.25
    crack_thickness: float = 1.5
    dark_probability: float = 0.3
    dark_radius: Tuple[float, float] = (4.0, 8.0)
    corner_radius: float = 6.0
    noise_std: float = 0.02
    background: float = 0.75
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "crack_count", tuple(int(v) for v in self.crack_count))
        object.__setattr__(self, "dark_radius", tuple(float(v) for v in self.dark_radius))
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.busbar_count < 0 or self.busbar_width < 1:
            raise ValueError("busbar_count must be >= 0 and busbar_width >= 1")
        if self.busbar_count * (self.busbar_width + 1) > self.image_size:
            raise ValueError("busbars do not fit in the image")
        lo, hi = self.crack_count
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid crack_count range {self.crack_count}")
        if self.crack_step <= 0 or self.crack_turn_std < 0 or self.crack_thickness < 1:
            raise ValueError("crack_step > 0, crack_turn_std >= 0, crack_thickness >= 1 required")
        if not 0 <= self.dark_probability <= 1:
            raise ValueError("dark_probability must lie in [0, 1]")
        if not 0 < self.dark_radius[0] <= self.dark_radius[1]:
            raise ValueError(f"invalid dark_radius range {self.dark_radius}")
        if self.dark_probability > 0 and 2 * self.dark_radius[1] >= self.image_size - 1:
            raise ValueError(f"dark_radius {self.dark_radius[1]} too large for image_size {self.image_size}")
        if self.corner_radius < 0 or 2 * self.corner_radius > self.image_size:
            raise ValueError("corner_radius out of range")
        if self.noise_std < 0 or not 0 <= self.background <= 1:
            raise ValueError("noise_std >= 0 and background in [0, 1] required")


@dataclass
class SynthSample:
    name: str
    image: np.ndarray  # (H, W) float32 in [0, 1]
    mask: D.MultiHotMask
    annotation: D.Annotation
    component_counts: Dict[str, int]
    pixel_counts: Dict[str, int]  # generator bookkeeping, per class
    label_histogram: Tuple[int, ...]  # number of pixels with 0, 1, 2, ... active labels


# intensity multipliers; a pixel covered by several features takes the product
_BUSBAR_GAIN = 0.35
_CRACK_GAIN = 0.3
_DARK_GAIN = 0.3
_NONCELL_LEVEL = 0.03

_MAX_CRACK_TRIES = 200


def busbar_columns(cfg: SynthConfig):
    """Left column of each busbar band, evenly spaced."""
    s, n, bw = cfg.image_size, cfg.busbar_count, cfg.busbar_width
    return [int(round((k + 1) * s / (n + 1) - bw / 2)) for k in range(n)]


def _noncell_region(s: int, radius: float) -> np.ndarray:
    """Pixels outside a rounded square whose corners have ``radius``."""
    if radius == 0:
        return np.zeros((s, s), dtype=bool)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    # distance into the corner zone measured from the arc centres
    cx = np.clip(xx, radius - 0.5, s - 0.5 - radius)
    cy = np.clip(yy, radius - 0.5, s - 0.5 - radius)
    return (xx - cx) ** 2 + (yy - cy) ** 2 > radius ** 2


def _in_corner(x: float, y: float, s: int, radius: float) -> bool:
    # keep a one-pixel margin so strokes stay on the active cell
    r = radius + 1.0
    cx = min(max(x, r - 0.5), s - 0.5 - r)
    cy = min(max(y, r - 0.5), s - 0.5 - r)
    return (x - cx) ** 2 + (y - cy) ** 2 > (r - 1.0) ** 2 if radius > 0 else False


def _random_walk(rng, cfg: SynthConfig) -> np.ndarray:
    s = cfg.image_size
    x = rng.uniform(min(cfg.corner_radius, s * 0.25), s * 0.25)
    y = rng.uniform(s * 0.15, s * 0.85)
    heading = rng.normal(0.0, 0.3)
    length = rng.uniform(0.6, 0.95) * s
    pts = [(x, y)]
    travelled = 0.0
    while travelled < length:
        heading += rng.normal(0.0, cfg.crack_turn_std)
        heading = float(np.clip(heading, -1.0, 1.0))
        nx = x + cfg.crack_step * math.cos(heading)
        ny = y + cfg.crack_step * math.sin(heading)
        if not (0 <= nx <= s - 1 and 0 <= ny <= s - 1) or _in_corner(nx, ny, s, cfg.corner_radius):
            break
        x, y = nx, ny
        pts.append((x, y))
        travelled += cfg.crack_step
    return np.round(np.asarray(pts), 2)


def generate_sample(cfg: SynthConfig, index: int) -> SynthSample:
    """Sample ``index`` of the corpus defined by ``cfg``; pure in (seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    s = cfg.image_size
    classes = D.ClassSet()
    objects = []

    for x0 in busbar_columns(cfg):
        x1 = x0 + cfg.busbar_width
        poly = [[x0 - 0.5, -0.5], [x1 - 0.5, -0.5], [x1 - 0.5, s - 0.5], [x0 - 0.5, s - 0.5]]
        objects.append(D.AnnotatedObject("busbar", D.Polygon(np.asarray(poly))))

    lo, hi = cfg.crack_count
    n_cracks = int(rng.integers(lo, hi + 1))
    crack_plane = np.zeros((s, s), dtype=bool)
    for _ in range(n_cracks):
        for _attempt in range(_MAX_CRACK_TRIES):
            pts = _random_walk(rng, cfg)
            if len(pts) < 2:
                continue
            stroke = D._stroke_polyline(pts, cfg.crack_thickness, s, s)
            # cracks must stay separate 8-connected components
            if not np.any(stroke & ndimage.binary_dilation(crack_plane, np.ones((3, 3), bool))):
                break
        else:
            raise RuntimeError(f"could not place {n_cracks} separate cracks in sample {index}")
        crack_plane |= stroke
        objects.append(D.AnnotatedObject(
            "crack", D.Polyline(pts, cfg.crack_thickness)))

    n_dark = int(rng.random() < cfg.dark_probability)
    for _ in range(n_dark):
        r = rng.uniform(*cfg.dark_radius)
        cx, cy = rng.uniform(r, s - 1 - r, size=2)
        yy, xx = np.mgrid[0:s, 0:s]
        disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        rows, cols = np.nonzero(disc)
        oy, ox = rows.min(), cols.min()
        patch = disc[oy:rows.max() + 1, ox:cols.max() + 1].astype(np.uint8)
        objects.append(D.AnnotatedObject("dark", D.Bitmap((int(ox), int(oy)), patch)))

    noncell = _noncell_region(s, cfg.corner_radius)
    if noncell.any():
        objects.append(D.AnnotatedObject(
            "non-cell", D.Bitmap((0, 0), noncell.astype(np.uint8))))

    name = f"synth_{cfg.seed}_{index:05d}"
    annotation = D.Annotation(name, s, s, objects)
    mask = D.rasterize(annotation, classes)

    # bookkeeping tallied from the drawing primitives, not from the mask
    pixel_counts = {"busbar": cfg.busbar_count * cfg.busbar_width * s,
                    "crack": int(crack_plane.sum()),
                    "dark": 0,
                    "non-cell": int(noncell.sum())}
    label_count = np.zeros((s, s), dtype=np.int64)
    busbar_plane = np.zeros((s, s), dtype=bool)
    for x0 in busbar_columns(cfg):
        busbar_plane[:, x0:x0 + cfg.busbar_width] = True
    dark_plane = np.zeros((s, s), dtype=bool)
    for obj in objects:
        if obj.cls == "dark":
            g = obj.geometry
            ph, pw = g.patch.shape
            dark_plane[g.origin[1]:g.origin[1] + ph, g.origin[0]:g.origin[0] + pw] |= g.patch.astype(bool)
    pixel_counts["dark"] = int(dark_plane.sum())
    for plane in (busbar_plane, crack_plane, dark_plane, noncell):
        label_count += plane
    histogram = tuple(int(v) for v in np.bincount(label_count.ravel(), minlength=len(classes) + 1))

    gain = np.full((s, s), cfg.background, dtype=np.float64)
    gain[busbar_plane] *= _BUSBAR_GAIN
    gain[crack_plane] *= _CRACK_GAIN
    gain[dark_plane] *= _DARK_GAIN
    gain[noncell] = _NONCELL_LEVEL
    if cfg.noise_std > 0:
        gain = gain + rng.normal(0.0, cfg.noise_std, size=(s, s))
    image = np.clip(gain, 0.0, 1.0).astype(np.float32)

    counts = {"dark": n_dark, "busbar": cfg.busbar_count, "crack": n_cracks,
              "non-cell": _count_components(noncell)}
    return SynthSample(name, image, mask, annotation, counts, pixel_counts, histogram)


def _count_components(plane: np.ndarray) -> int:
    return int(ndimage.label(plane, structure=np.ones((3, 3), bool))[1]) if plane.any() else 0


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_corpus(cfg: SynthConfig, n: int, out_dir) -> dict:
    """Write ``n`` samples as PNG images, JSON annotations and mask containers.

    Returns the manifest, which is also written to ``manifest.json``. The
    manifest digest covers every emitted file, so equal seeds give equal
    digests.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = Path(out_dir)
    for sub in ("images", "annotations", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        smp = generate_sample(cfg, i)
        img_path = out / "images" / f"{smp.name}.png"
        ann_path = out / "annotations" / f"{smp.name}.json"
        mask_path = out / "masks" / f"{smp.name}.mssm"
        D.save_image(smp.image, img_path)
        ann_path.write_text(smp.annotation.to_json() + "\n")
        D.save_mask(smp.mask, mask_path)
        entries.append({
            "name": smp.name,
            "image": f"images/{img_path.name}",
            "annotation": f"annotations/{ann_path.name}",
            "mask": f"masks/{mask_path.name}",
            "sha256": {k: _sha256(p) for k, p in
                       (("image", img_path), ("annotation", ann_path), ("mask", mask_path))},
            "component_counts": smp.component_counts,
            "pixel_counts": smp.pixel_counts,
        })
    digest = hashlib.sha256(
        json.dumps([e["sha256"] for e in entries], sort_keys=True).encode()).hexdigest()
    manifest = {"config": asdict(cfg), "n": n, "source": "synthetic",
                "classes": list(D.DEFAULT_CLASSES), "samples": entries, "digest": digest}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
