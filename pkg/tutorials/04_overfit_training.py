# %% [markdown]
# # Overfitting a small batch
#
# A quick sanity check for any segmentation network is to memorise a handful
# of images. Here four synthetic 32x32 cells are fitted with Adam, and the
# pixels that are both crack and busbar are watched to see whether the
# sigmoid head predicts two labels at once.

# %%
import time

import numpy as np

from elseg import data as D
from elseg import evaluate as E
from elseg import synth as S
from elseg import train as TR
from elseg import unet as U

syn = S.SynthConfig(image_size=32, crack_count=(2, 2), corner_radius=4, dark_radius=(2, 4), seed=3)
samples = [S.generate_sample(syn, i) for i in range(4)]
records = [D.make_record(s.name, s.image, s.mask, 32, "synthetic") for s in samples]
x, t = TR.stack_records(records)

cfg = U.UNetConfig(in_channels=3, out_channels=4, depth=2, base_width=8, input_size=32)
model = U.build_unet(cfg, seed=0)
print("parameters:", U.count_parameters(model))

# %% [markdown]
# Batch size 1 and lr 1e-3. The loss printed is the mean BCE over the whole
# set, recomputed after each epoch.

# %%
tc = TR.TrainConfig(lr=1e-3, batch_size=1, seed=0)
opt = TR.make_optimizer(tc)
rng = np.random.default_rng(0)
t0 = time.perf_counter()
for epoch in range(1, 121):
    TR.train_epoch(model, (x, t), tc, rng, opt)
    if epoch % 20 == 0:
        print(f"epoch {epoch:3d}  bce {TR.dataset_loss(model, x, t):.4f}")
print(f"{time.perf_counter() - t0:.1f}s")

# %% [markdown]
# ## Multi-label pixels
#
# Crack-on-busbar pixels should come out with both probabilities above one
# half.

# %%
probs = U.predict_probabilities(model, x)
pred = E.binarize(probs)
names = list(D.DEFAULT_CLASSES)
ib, ic = names.index("busbar"), names.index("crack")
both_gt = (t[:, ib] > 0) & (t[:, ic] > 0)
both_pred = (pred[:, ib] > 0) & (pred[:, ic] > 0)
print("overlap pixels:", int(both_gt.sum()), " recovered:", int((both_gt & both_pred).sum()))

# %%
result = E.evaluate_corpus(model, records)
print(result.suite.table())
