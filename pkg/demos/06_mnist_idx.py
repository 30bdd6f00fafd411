"""Reading MNIST IDX files and building the odd-vs-even PU split.

Pass the directory holding the four standard IDX files (``.gz`` is fine).
Without an argument a small fake dataset is written and read back.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from selfpu import datapipe

if len(sys.argv) > 1:
    root = Path(sys.argv[1])
else:
    root = Path(tempfile.mkdtemp())
    rng = np.random.default_rng(0)
    for prefix, n in (("train", 6000), ("t10k", 1000)):
        datapipe.write_idx(root / f"{prefix}-images-idx3-ubyte.gz", rng.integers(0, 256, (n, 28, 28)))
        datapipe.write_idx(root / f"{prefix}-labels-idx1-ubyte.gz", rng.integers(0, 10, n))

files = datapipe.find_mnist_files(root)
train = datapipe.load_mnist_idx(*files["train"])
test = datapipe.load_mnist_idx(*files["test"])
print("train", train.features.shape, "test", test.features.shape, "pixel range",
      train.features.min(), train.features.max())

val, rest = datapipe.carve_holdout(train, "odd", 250, seed=0)
n_p = min(1000, len(rest) // 10)
n_pos = int(np.sum(datapipe.oracle_labels(rest, "odd") == 1))
prior = (n_pos - n_p) / (len(rest) - n_p)      # positive share of D_U once D_P is removed
ds = datapipe.make_pu_split(rest, "odd", n_p, seed=0, pi_p=round(prior, 2), holdout_ids=val.ids)
for k, v in ds.manifest.items():
    print(f"  {k} = {v}")
