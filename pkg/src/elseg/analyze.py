"""Crack connected components, per-component geometry and count summaries."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np
from scipy import ndimage

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass
class Component:
    label: int
    area: int
    perimeter: int
    bbox: Tuple[int, int, int, int]  # (row_min, col_min, row_max, col_max), inclusive
    centroid: Tuple[float, float]  # (row, col)
    slope: float  # radians in [-pi/2, pi/2)


def connected_components(plane, connectivity: int = 8):
    """Label the foreground of a binary plane.

    Labels are dense from 1 and ordered by each component's first pixel in a
    row-major scan. Returns ``(labels, components)``.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 4 or 8")
    p = np.asarray(plane)
    if p.ndim != 2:
        raise ValueError(f"plane must be 2-D, got shape {p.shape}")
    if not np.all((p == 0) | (p == 1)):
        raise ValueError("plane must be binary")
    labels, n = ndimage.label(p.astype(bool), structure=_STRUCTURES[connectivity])
    # scipy already labels in raster order; relabel defensively by first pixel
    if n:
        flat = labels.ravel()
        nz = np.flatnonzero(flat)
        _, first = np.unique(flat[nz], return_index=True)
        order = np.argsort(nz[first])
        remap = np.zeros(n + 1, dtype=labels.dtype)
        remap[order + 1] = np.arange(1, n + 1)
        labels = remap[labels]
    comps = []
    if n:
        for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
            rr, cc = np.nonzero(labels[sl] == lab)
            comps.append(component_geometry(rr + sl[0].start, cc + sl[1].start, label=lab))
    return labels, comps


def principal_angle(rows, cols) -> float:
    """Orientation of the first principal axis, with x = column and y = row."""
    x = np.asarray(cols, dtype=np.float64)
    y = np.asarray(rows, dtype=np.float64)
    if x.size < 2:
        return 0.0
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    sxy = float(dx @ dy)
    scale = max(sxx, syy)
    if scale == 0 or (abs(sxx - syy) <= 1e-12 * scale and abs(sxy) <= 1e-12 * scale):
        return 0.0
    theta = 0.5 * math.atan2(2 * sxy, sxx - syy)
    if theta >= math.pi / 2:
        theta -= math.pi
    return theta


def component_geometry(rows, cols, label: int = 1) -> Component:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("component has no pixels")
    r0, c0 = int(rows.min()), int(cols.min())
    local = np.zeros((int(rows.max()) - r0 + 3, int(cols.max()) - c0 + 3), dtype=bool)
    local[rows - r0 + 1, cols - c0 + 1] = True
    # exposed 4-neighbour edges; image border counts as background
    perim = int(np.count_nonzero(local[1:, :] != local[:-1, :])
                + np.count_nonzero(local[:, 1:] != local[:, :-1]))
    return Component(
        label=label,
        area=int(rows.size),
        perimeter=perim,
        bbox=(r0, c0, int(rows.max()), int(cols.max())),
        centroid=(float(rows.mean()), float(cols.mean())),
        slope=principal_angle(rows, cols),
    )


def filter_components(components: List[Component], min_area: int = 1) -> List[Component]:
    return [c for c in components if c.area >= min_area]


@dataclass
class CrackSummary:
    counts: Dict[str, Dict[str, int]]  # source -> image id -> count
    stats: Dict[str, Dict[str, float]]  # source -> distribution statistics
    rows: List[dict]

    def to_dict(self) -> dict:
        return {"counts": self.counts, "stats": self.stats}


def distribution_stats(values) -> Dict[str, float]:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "median": float(med),
        "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "q1": float(q1),
        "q3": float(q3),
        "min": float(v.min()),
        "max": float(v.max()),
    }


def crack_count_summary(gt: Mapping[str, np.ndarray], predictions: Mapping[str, Mapping[str, np.ndarray]],
                        connectivity: int = 8, min_area: int = 1) -> CrackSummary:
    """Count crack components per image for the ground truth and each model.

    ``gt`` maps image id to a crack plane; ``predictions`` maps a source name
    to another such dict with exactly the same ids.
    """
    sources = {"gt": gt}
    for name, preds in predictions.items():
        if name == "gt":
            raise ValueError("'gt' is reserved for the ground-truth source")
        if set(preds) != set(gt):
            diff = sorted(set(preds) ^ set(gt))
            raise ValueError(f"source {name!r} is misaligned with ground truth, e.g. {diff[:3]}")
        sources[name] = preds
    counts: Dict[str, Dict[str, int]] = {}
    rows = []
    for src, planes in sources.items():
        counts[src] = {}
        for image_id in sorted(planes):
            _, comps = connected_components(planes[image_id], connectivity)
            comps = filter_components(comps, min_area)
            counts[src][image_id] = len(comps)
            rows.append({
                "image": image_id,
                "source": src,
                "count": len(comps),
                "areas": ";".join(str(c.area) for c in comps),
                "perimeters": ";".join(str(c.perimeter) for c in comps),
                "slopes": ";".join(f"{c.slope:.6f}" for c in comps),
            })
    stats = {src: distribution_stats(c.values()) for src, c in counts.items()}
    return CrackSummary(counts, stats, rows)


EXPORT_FIELDS = ("image", "source", "count", "areas", "perimeters", "slopes")


def write_rows(rows: List[dict], path) -> None:
    """One row per (image, source); component lists are ';'-joined."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EXPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
