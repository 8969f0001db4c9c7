# %% [markdown]
# # Network assembly and its cost
#
# The default width schedule is (6, 12, 24, 72). Parameter totals come from
# the live tensor registry. FLOPs come from an analytic layer table in which
# a multiply-add counts as two FLOPs.

# %%
import time

import numpy as np

from lssfnet import NetworkConfig, complexity_report, count_flops, count_params, forward, init_params

cfg = NetworkConfig()
params = init_params(cfg)
print(f"learnable parameters: {count_params(params):,}")
print(f"forward FLOPs at 256x256: {count_flops(cfg) / 1e9:.2f} G")

# %% [markdown]
# The ten most expensive rows of the layer table.

# %%
rows = complexity_report(cfg, params)["layers"]
for row in sorted(rows, key=lambda r: -r["flops"])[:10]:
    print(f"{row['name']:<36} {row['flops'] / 1e6:9.1f} MFLOPs {row['params']:>8} params")

# %% [markdown]
# Convolutions dominate, so halving the side length roughly quarters the cost.

# %%
print("128/256 FLOP ratio:", round(count_flops(NetworkConfig(input_size=128)) / count_flops(cfg), 3))

# %% [markdown]
# One full-resolution forward pass on the CPU.

# %%
x = np.random.default_rng(0).random((1, 256, 256, 3)).astype(np.float32)
start = time.perf_counter()
prob = forward(x, params, cfg)
print(prob.shape, f"{time.perf_counter() - start:.2f}s", "range", float(prob.data.min()), float(prob.data.max()))
