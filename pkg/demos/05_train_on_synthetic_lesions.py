# %% [markdown]
# # Training end to end on synthetic lesions
#
# Eight 64x64 images with elliptical lesions, the tiny width schedule and
# 300 Adam steps are enough to overfit the set. The run is then saved,
# reloaded and resumed. Finally one mask is predicted and written as a PNG.
# Expect roughly two minutes on one CPU core.

# %%
import tempfile
from pathlib import Path

import numpy as np

from lssfnet import (
    NetworkConfig, TrainConfig, evaluate, forward, load_checkpoint, load_dataset, predict_mask,
    save_checkpoint, synth_lesions, train,
)
from lssfnet.data import save_mask

work = Path(tempfile.mkdtemp(prefix="lssf_demo_"))
manifest = synth_lesions(8, 64, seed=0, out_dir=work / "synth")
images, masks = load_dataset(manifest)
print("mask coverage per image:", masks.mean(axis=(1, 2, 3)).round(3))

# %%
cfg = NetworkConfig.tiny(64)
tc = TrainConfig(epochs=150, batch_size=4, lr=3e-3, max_steps=300, patience=1000)
result = train(cfg, (images, masks), train_cfg=tc)
for row in result.history[::25]:
    print(row)
print("training-set Jaccard:", round(evaluate(result.last, (images, masks)).jaccard, 4))

# %% [markdown]
# Save, reload and resume. Resuming replays the same data order, so the
# first new batch loss matches the probe stored with the checkpoint.

# %%
path = save_checkpoint(result.last, work / "last.ckpt")
resumed = train(cfg, (images, masks), init=load_checkpoint(path, cfg),
                train_cfg=TrainConfig(epochs=1, batch_size=4, lr=3e-3))
print("stored probe", result.last.meta["final_loss"], "first resumed batch", resumed.batch_losses[0])

# %%
params = result.last.to_params()
mask = predict_mask(forward(images[:1], params, cfg))[0]
save_mask(mask, work / "pred.png")
print("wrote", work / "pred.png", "foreground pixels:", int(mask.sum()), "of", mask.size)
