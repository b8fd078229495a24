# %% [markdown]
# # From a closed-form fit to a stored 8-bit model
#
# The closed-form fit only sees a training subset.  Refinement keeps the
# binary kernels frozen and trains the output layer on every sample with
# Adam on softmax cross-entropy; quantization then shrinks the output layer
# to 8-bit integers, and the model file stores it all bit-exactly.

# %%
import os
import tempfile
import time
from pathlib import Path

import numpy as np

from lbcnn import (
    Architecture,
    RefineConfig,
    SearchConfig,
    inspect,
    load_idx,
    load_model,
    quantize,
    random_search,
    refine_output,
    save_model,
)

root = Path(os.environ.get("LBCNN_DATA", "/root/data")) / "mnist"
train = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
test = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte")

# %%
cfg = SearchConfig(Architecture((28, 28, 1), (8, 8), 10), train, test, trials=2,
                   master_seed=1, max_train_samples=5000)
model, report = random_search(cfg)
print("closed form on 5000 samples:", report.best_accuracy)

# %% [markdown]
# Features for 60000 images at 3136 dimensions are about 750 MB in float32;
# a smaller memory budget spills them to a temporary file instead.

# %%
t = time.perf_counter()
result = refine_output(model, train, RefineConfig(epochs=3, memory_budget=256 << 20))
print(f"refined in {time.perf_counter() - t:.0f} s, epoch losses", np.round(result.epoch_losses, 4))
model.out_weights = result.weights
refined = model.evaluate(test.images, test.labels)
print("refined on 60000 samples:", refined)

# %%
model.out_weights = quantize(result.weights, bits=8)
print("8-bit:", model.evaluate(test.images, test.labels), "scale", model.out_weights.scale)

# %%
path = Path(tempfile.mkdtemp()) / "mnist_8_8.lbcn"
save_model(model, path)
info = inspect(path)
print(info["summary"], f"({info['file_bytes']} bytes on disk)")
back = load_model(path)
same = np.array_equal(back.predict(test.images[:2000]), model.predict(test.images[:2000]))
print("reloaded predictions identical:", same)
