# %% [markdown]
# # From annotations to multi-hot masks
#
# Labels arrive as JSON with polygons, polylines and bitmaps. Each class owns
# one mask plane, and a pixel may be set in several planes at once. That is
# the point of a multi-label mask: a crack running over a busbar is both.

# %%
import json

import numpy as np

from elseg import data as D

doc = {
    "image": "cell.png", "height": 12, "width": 12,
    "objects": [
        {"class": "busbar", "polygon": [[4.5, -0.5], [6.5, -0.5], [6.5, 11.5], [4.5, 11.5]]},
        {"class": "crack", "polyline": [[0, 3], [11, 8]], "thickness": 1.5},
    ],
}
ann = D.parse_annotation(json.dumps(doc))
mask = D.rasterize(ann)
print("planes:", mask.classes)
both = mask.plane("busbar") & mask.plane("crack")
print("pixels in both busbar and crack:", int(both.sum()))
print(both.astype(int))

# %% [markdown]
# Validation errors are typed, so callers can tell a bad class from bad
# geometry.

# %%
for bad in ({"class": "hotspot", "polygon": [[0, 0], [3, 0], [3, 3]]},
            {"class": "crack", "polyline": [[0, 0], [5, 5]], "thickness": 0}):
    try:
        D.parse_annotation(json.dumps({**doc, "objects": [bad]}))
    except D.AnnotationError as exc:
        print(type(exc).__name__, "-", exc)

# %% [markdown]
# ## Preparing network inputs
#
# Gray images are resized bilinearly, replicated to the model's channel count
# and normalised per channel. Masks are resized nearest-neighbour so they
# stay binary.

# %%
gray = np.linspace(0, 1, 144, dtype=np.float32).reshape(12, 12)
rec = D.make_record("cell", gray, mask, size=16)
print(rec.id, rec.image.shape, rec.mask.shape, rec.image.dtype)

# %% [markdown]
# Four flip variants per base image. Splitting happens on base ids first, so
# no mirrored copy of a validation image can leak into training.

# %%
ids = [f"img{i:03d}" for i in range(585)]
train_ids, val_ids = D.split_dataset(ids, ratio=(4, 1), seed=0)
print("bases", len(ids), "->", len(train_ids), "/", len(val_ids))
print("records", 4 * len(ids), "->", 4 * len(train_ids), "/", 4 * len(val_ids))
print([r.id for r in D.flip_augment(rec)])

# %% [markdown]
# ## Label statistics
#
# The imbalance ratio divides each class's pixel frequency by that of the
# most frequent class. Feeding in published per-pixel frequencies gives the
# published ratios back.

# %%
freq = {"dark": 0.01031, "busbar": 0.20259, "crack": 0.03569, "non-cell": 0.07813}
ratios = D.imbalance_ratios(freq)
print({k: round(v, 3) for k, v in ratios.items()}, "mean", round(np.mean(list(ratios.values())), 3))
