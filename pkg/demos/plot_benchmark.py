"""
How decode time grows with resolution
=====================================

The decoder is fully convolutional, so its cost should grow in proportion
to the pixel count.  Fit the exponent of time against pixels on this machine.
"""

import torch

from _common import OUT
from mtx import bench, mgan
from mtx.encoder import VGG19_BLOCKS, Encoder

torch.manual_seed(0)
enc = Encoder(VGG19_BLOCKS)  # full-size encoder; timings do not depend on the weights
g = mgan.build_generator().eval()

records = bench.run_benchmark(g, enc, sizes=(128, 256, 512), trials=5)
for r in records:
    print(f"{r.resolution:4d}^2  {r.median_ms:8.1f} ms   ({r.device})")
print("fitted exponent:", round(bench.scaling_exponent(records), 3), "(1.0 = linear in pixels)")
print("reference TitanX timings (ms):", bench.REFERENCE_ANCHORS_MS)
bench.write_csv(records, OUT / "benchmark.csv")
