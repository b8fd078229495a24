# %% [markdown]
# # Binary depthwise expansion, step by step
#
# A light binary CNN never trains its convolution kernels.  Each macro-layer
# is a 3x3 depthwise convolution with +/-1 weights followed by a 4x4 max-pool
# with stride 2, and the flattened result goes straight into a linear
# classifier.  This script walks one MNIST-sized input through the stack and
# checks the bookkeeping: shapes, feature count and parameter bits.

# %%
import numpy as np

from lbcnn import Architecture, generate_kernels, depthwise_conv3x3, maxpool_coverall, param_bits
from lbcnn.tensor_ops import feature_expand, pool_out_size

arch = Architecture((28, 28, 1), (16, 20), n_classes=10)
print("per-layer output shapes:", arch.layer_shapes())
print("features:", arch.n_features, " expansion factor:", arch.expansion_factor)

# %% [markdown]
# The pool emits a final partial window whenever the stride leaves cells
# uncovered, so 7 pixels pool to 4 rather than 3.

# %%
for n in (28, 14, 7, 4):
    print(f"{n:>2} -> {pool_out_size(n)}")

# %% [markdown]
# Kernels come from a seeded counter-based generator; the same seed always
# gives the same kernel set.

# %%
kernels = generate_kernels(arch, seed=2024)
print("binary weights:", kernels.n_weights)
print("first layer, kernel 0:\n", kernels[0].weights[0, 0])

# %% [markdown]
# Depthwise means every input channel gets its own M kernels; output channel
# `c*M + m` holds kernel m applied to channel c.  A stroke-like toy image:

# %%
img = np.zeros((1, 28, 28, 1), dtype=np.float32)
img[0, 6:22, 13:15, 0] = 1.0
x = img
for i, layer in enumerate(kernels):
    x = depthwise_conv3x3(x, layer)
    print(f"layer {i}: conv {x.shape[1:]}", end="")
    x = maxpool_coverall(x)
    print(f", pooled {x.shape[1:]}")

# %% [markdown]
# `feature_expand` does the same for a batch and returns the features-by-
# samples matrix the solver consumes (row-major H, W, C flattening).

# %%
H = feature_expand(img, arch, kernels)
print("H:", H.shape, "equals manual flatten:", np.array_equal(H[:, 0], x.reshape(-1)))

# %% [markdown]
# Parameter accounting: one bit per conv weight, eight bits per output
# weight.

# %%
for mults in [(40, 2, 2), (40, 4), (16, 20)]:
    conv, out = param_bits(Architecture((28, 28, 1), mults, 10))
    print(f"{str(mults):<12} conv {conv / 1000:g} kbit  output {out / 1000:g} kbit")
