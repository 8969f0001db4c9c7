# %% [markdown]
# # Bottleneck attention, channel shuffle and the focal-modulation skip block
#
# The deepest feature map passes through two attention branches. Spatial
# attention (GSA) mixes positions. Channel attention (SAB) mixes channels.
# Their outputs are concatenated, channel-shuffled and fused back to the
# input width. Each skip connection is refined by a CFMA block on the way to
# the decoder.

# %%
import numpy as np

from lssfnet.attention import (
    BottleneckParams, GsaParams, SabParams, bottleneck, channel_shuffle, gsa, sab, shuffle_permutation,
)
from lssfnet.cfma import CfmaParams, cfma
from lssfnet.params import ConvParams, registry
from lssfnet.tensor import Tensor

rng = np.random.default_rng(1)
x = Tensor(rng.normal(size=(1, 4, 4, 8)).astype(np.float32))

# %% [markdown]
# ## Channel shuffle
# Reshape the channel axis to (groups, n/groups), transpose, flatten.

# %%
print(shuffle_permutation(8, 2))  # [0 4 1 5 2 6 3 7]
print(channel_shuffle(Tensor(np.arange(8.0).reshape(1, 1, 1, 8)), 2).data.ravel())

# %% [markdown]
# ## SAB: channel attention
# The attention map is C x C and each row is a softmax.

# %%
out, att = sab(x, SabParams.init(rng, 8), return_attention=True)
print("SAB map", att.shape, "row sums", att.data.sum(-1).round(6))

# %% [markdown]
# ## GSA: spatial attention with a learned HW x HW mixing matrix
# With the value projection zeroed, the residual makes GSA the identity.

# %%
g = GsaParams.init(rng, 8, spatial=4)
out, att = gsa(x, g, return_attention=True)
print("GSA map", att.shape)
g.value_conv.kernel.data[:] = 0
print("identity with zero value:", np.array_equal(gsa(x, g).data, x.data))

# %% [markdown]
# ## The assembled bottleneck keeps the shape.

# %%
p = BottleneckParams(SabParams.init(rng, 8), GsaParams.init(rng, 8, 4), ConvParams.init(rng, 1, 16, 8))
print(bottleneck(x, p).shape)

# %% [markdown]
# ## CFMA
# Two residual steps: focal modulation then 3x3 conv and layer norm, then a
# channel MLP. Zero weights give back the input exactly.

# %%
c = CfmaParams.init(rng, 8)
print("CFMA output", cfma(x, c).shape)
for t in registry(c).values():
    t.data = np.zeros_like(t.data)
print("zero-weight identity:", np.array_equal(cfma(x, c).data, x.data))
