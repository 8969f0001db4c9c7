# %% [markdown]
# # Losses and segmentation scores
#
# Training minimises pixel-mean binary cross-entropy plus a soft Jaccard
# loss. Evaluation thresholds the probabilities and scores the binary mask.

# %%
import numpy as np

from lssfnet import aggregate, bce_loss, combined_loss, confusion, jaccard_loss, metrics, predict_mask
from lssfnet.metrics import ConfusionCounts
from lssfnet.tensor import Tensor

p = Tensor(np.array([0.9, 0.2]), dtype=np.float64)
g = np.array([1.0, 0.0])
print("BCE", round(bce_loss(p, g).item(), 4))

g16 = (np.arange(16) % 2).astype(float)
print("soft Jaccard loss, fully wrong:", round(jaccard_loss(Tensor(1 - g16, dtype=np.float64), g16).item(), 4))
parts = {}
combined_loss(Tensor(np.full(16, 0.6), dtype=np.float64), g16, parts=parts)
print("combined parts", parts)

# %% [markdown]
# Scores from a confusion table. Dice and Jaccard are tied by D = 2J/(1+J).

# %%
r = metrics(ConfusionCounts(tp=6, tn=6, fp=2, fn=2))
print(r.jaccard, r.dice, 2 * r.jaccard / (1 + r.jaccard))

# %% [markdown]
# An empty prediction against an empty ground truth scores 1.0 and is flagged.

# %%
print(metrics(ConfusionCounts(0, 16, 0, 0)).degenerate)

# %% [markdown]
# Corpus scores average the per-image metrics by default.

# %%
rng = np.random.default_rng(0)
prob = rng.random((3, 8, 8, 1))
gt = (rng.random((3, 8, 8)) > 0.5).astype(np.uint8)
pred = predict_mask(prob)
print(aggregate([confusion(pred[i], gt[i]) for i in range(3)]).to_json())
