"""
From slow optimization to a feed-forward decoder
================================================

Pixel optimization is slow, so we use it only to make training targets.
A generator learns to map relu4_1 features of a photo straight to the
stylized pixels, and then decodes new images of any size in one pass.
"""

import copy

import torch
import torch.nn.functional as F

from _common import OUT, get_encoder
from mtx import data, mdan, mgan, synthetic

enc = get_encoder()
texture = synthetic.stripes(64, 64, period=10)

# 1. a small paired corpus: photos, their slow stylizations, co-located 128px crops
photos = [synthetic.blobs(160, 160, seed=s) for s in range(4)]
spec = data.CorpusSpec(max_dim=160, augment_copies=1, crop_size=128, crop_stride=32)
corpus = data.build_style_corpus(enc, photos, texture,
                                 mdan.MDANConfig(iterations=30, patch_k=8, stride=4, d_channels=32), spec)
print(len(corpus), "training pairs")

# 2. initialize the decoder as an inverse of the encoder, then train it adversarially
cfg = mgan.MGANConfig(channels=(512, 64, 32, 16, 3), epochs=10, batch_size=8, lr=1e-3, d_lr=1e-3,
                      reconstruction_weight=1e-2, patch_k=8, patch_stride=4, d_channels=32)
g = mgan.build_generator(cfg)
mgan.pretrain_autoencoder(g, enc, [p for p, _ in corpus], 100)
result = mgan.train(copy.deepcopy(g), None, enc, corpus, cfg)
for row in result.history[:: max(1, len(result.history) // 5)]:
    print(f"epoch {row['epoch']}  loss_d {row['loss_d']:.3f}  loss_g {row['loss_g']:.3f}")

# the pixel-space baseline, trained the same way, for comparison
vae = mgan.train_vae_baseline(copy.deepcopy(g), enc, corpus, "pixel", cfg).generator
targets = torch.stack([t for _, t in corpus])
for name, gen in (("adversarial", result.generator), ("pixel VAE", vae)):
    out = mgan.decode(gen, enc, torch.stack([p for p, _ in corpus]))
    print(f"{name:12s} pixel MSE to targets {float(F.mse_loss(out, targets)):8.1f}")

# 3. trained on 128px crops, decoding a larger non-square photo
big = synthetic.blobs(256, 384, seed=99)
out = mgan.decode(result.generator, enc, big)
print("decoded", tuple(big.shape[-2:]), "->", tuple(out.shape[-2:]))
data.save_image(out, OUT / "mgan_decoded.png")
