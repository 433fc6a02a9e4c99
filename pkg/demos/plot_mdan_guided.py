"""
Guided synthesis: a photo repainted with a texture
==================================================

With a content image the optimization starts from the photo and a content
term keeps its layout, while the adversarial patch term pulls local
statistics towards the texture.  Reusing the discriminator from one photo
gives the next photo a head start.
"""

from _common import OUT, get_encoder
from mtx import data, mdan, synthetic
from mtx.losses import MDANWeights

enc = get_encoder()
texture = synthetic.stripes(64, 64, period=10)
photos = [synthetic.blobs(96, 96, seed=s) for s in (1, 2)]

cfg = mdan.MDANConfig(weights=MDANWeights(content=1.0, smoothness=1e-4), iterations=120,
                      patch_k=8, stride=2, content_layer="relu4_1")
outputs, states = mdan.transfer_batch(enc, photos, texture, cfg, reuse_d=True, return_states=True)

# how confused is a fresh discriminator on photo 2, compared with the one carried over?
fresh = mdan.init_state(enc, texture, photos[1], cfg).d
print("initial D loss on photo 2, random init:",
      round(float(mdan.discriminator_loss(enc, fresh, photos[1], texture, cfg).detach()), 3))
print("initial D loss on photo 2, reused D:  ",
      round(float(mdan.discriminator_loss(enc, states[0].d, photos[1], texture, cfg).detach()), 3))

for i, (photo, out) in enumerate(zip(photos, outputs)):
    data.save_image(photo, OUT / f"guided_photo{i}.png")
    data.save_image(out, OUT / f"guided_result{i}.png")
