"""
Decoding structured noise
=========================

A decoder does not need a photo: feeding it brown noise (power falling off
with frequency) yields texture-like images.  Perlin noise can also be mixed
into a photo to add variation.
"""

import numpy as np

from _common import OUT, get_encoder
from mtx import data, mgan, synthetic
from mtx.noise import NoiseSpec, generate, radial_power

enc = get_encoder()
g = mgan.build_generator(mgan.MGANConfig(channels=(512, 64, 32, 16, 3)))  # swap in a trained one

brown = generate(NoiseSpec("brown", width=128, height=128, seed=3))
bands = [(2 ** i / 128, 2 ** (i + 1) / 128) for i in range(5)]
print("brown noise power per octave:", np.round(radial_power(brown[0].numpy(), bands), 1))
data.save_image(brown, OUT / "brown_noise.png")
data.save_image(mgan.decode(g, enc, brown), OUT / "brown_decoded.png")

photo = synthetic.blobs(128, 128, seed=4)
perlin = generate(NoiseSpec("perlin", width=128, height=128, octaves=4, seed=4))
for a in (0.0, 0.2, 0.5):
    data.save_image(mgan.decode(g, enc, photo, perlin, a), OUT / f"perlin_blend_{a:.1f}.png")
print("wrote noise decodes to", OUT)
