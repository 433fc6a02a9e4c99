"""
Unguided texture synthesis by pixel optimization
================================================

Start from uniform noise and push the pixels until a patch discriminator,
trained alongside, can no longer tell the image's neural patches from those
of an example texture.
"""

import torch

from _common import OUT, get_encoder
from mtx import data, mdan, synthetic
from mtx.losses import MDANWeights

enc = get_encoder()
texture = synthetic.stripes(64, 64, period=12)

# k=8 patches of relu3_1 at stride 2; the default stride 1 is slower on a CPU
cfg = mdan.MDANConfig(iterations=200, patch_k=8, stride=2, size=(64, 96), seed=0)
state = mdan.init_state(enc, texture, None, cfg)
start = state.x.detach().clone()

for i in range(cfg.iterations):
    mdan.step(enc, state, texture)
    if i % 50 == 0:
        print(f"step {i:4d}  energy {state.energies[-1]:.3f}")

# The discriminator keeps learning, so the running energy is not a fair
# progress bar.  Judge the start and the end with the same, final D instead.
judge = mdan.MDANConfig(**{**cfg.__dict__, "weights": MDANWeights(0, 0)})
e0 = float(mdan.energy_and_gradient(enc, state.d, start, texture, None, judge)[0])
e1 = float(mdan.energy_and_gradient(enc, state.d, state.x, texture, None, judge)[0])
print(f"texture loss under the final D: noise {e0:.3f} -> result {e1:.3f}")

data.save_image(texture, OUT / "unguided_texture.png")
data.save_image(state.x.detach().clamp(0, 255), OUT / "unguided_result.png")
print("wrote", OUT / "unguided_result.png")
