# %% [markdown]
# # Preparing the ORL faces at 64x64
#
# The loaders only read binary netpbm, and resizing is left to the user.
# This script takes the original ORL archive layout (`s1/ .. s40/`, ten
# 92x112 PGM files each) and writes a 64x64 copy with the same tree shape.
#
#     python notebooks/prepare_orl.py SRC DST
#
# Pillow does the resampling (Lanczos).  Class directories keep their names,
# so class indices follow the lexicographic order `s1, s10, s11, ..., s9`.

# %%
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from lbcnn.data import load_pnm_dir, read_pnm, write_pnm

SIZE = 64


def resize_tree(src: Path, dst: Path, size: int = SIZE) -> int:
    count = 0
    for cdir in sorted(p for p in src.iterdir() if p.is_dir()):
        out = dst / cdir.name
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(cdir.glob("*.pgm")):
            img = Image.fromarray(read_pnm(f)[..., 0])
            small = np.asarray(img.resize((size, size), Image.LANCZOS), dtype=np.uint8)
            write_pnm(out / f.name, small)
            count += 1
    return count


# %%
if __name__ == "__main__":
    src = Path(sys.argv[1] if len(sys.argv) > 1 else "/root/data/orl_raw")
    dst = Path(sys.argv[2] if len(sys.argv) > 2 else "/root/data/orl64")
    n = resize_tree(src, dst)
    ds = load_pnm_dir(dst)
    print(f"wrote {n} images; reloaded {ds.summary()} with {ds.n_classes} classes")
