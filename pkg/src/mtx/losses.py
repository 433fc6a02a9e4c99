"""Scalar objectives for patch-adversarial synthesis.

All losses take and return torch tensors so they can sit inside autograd graphs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .encoder import FeatureMap, encode_many, extract_patches


@dataclass(frozen=True)
class MDANWeights:
    content: float = 1.0  # alpha1
    smoothness: float = 1e-4  # alpha2

    def __post_init__(self):
        for name in ("content", "smoothness"):
            v = float(getattr(self, name))
            if not (v >= 0 and v < float("inf")):
                raise ValueError(f"{name} weight must be finite and non-negative, got {v}")


def _scores(s):
    s = torch.as_tensor(s, dtype=torch.get_default_dtype()) if not isinstance(s, torch.Tensor) else s
    s = s.reshape(-1)
    if s.numel() == 0:
        raise ValueError("empty score list")
    return s


def hinge_texture_loss(s) -> torch.Tensor:
    """Mean of ``max(0, 1 - s_i)``: every patch is pushed towards the real label."""
    s = _scores(s)
    return F.relu(1 - s).mean()


def discriminator_hinge_loss(s_real, s_fake) -> torch.Tensor:
    s_real, s_fake = _scores(s_real), _scores(s_fake)
    return F.relu(1 - s_real).mean() + F.relu(1 + s_fake).mean()


def content_loss(a: FeatureMap, b: FeatureMap) -> torch.Tensor:
    if a.layer != b.layer:
        raise ValueError(f"layer mismatch: {a.layer} vs {b.layer}")
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {tuple(a.data.shape)} vs {tuple(b.data.shape)}")
    return F.mse_loss(a.data, b.data)


def smoothness_prior(img: torch.Tensor) -> torch.Tensor:
    """Squared differences of neighbouring pixels, summed over channels, per pixel.

    Accepts ``C x H x W`` or ``B x C x H x W`` (batch is averaged).
    """
    if img.dim() < 3:
        raise ValueError("expected a C x H x W image")
    h, w = img.shape[-2:]
    if h * w < 2:
        raise ValueError("smoothness prior needs at least two pixels")
    dy = (img[..., 1:, :] - img[..., :-1, :]).pow(2).sum(dim=(-3, -2, -1))
    dx = (img[..., :, 1:] - img[..., :, :-1]).pow(2).sum(dim=(-3, -2, -1))
    return ((dx + dy) / (h * w)).mean()


def score_patches(d, real: torch.Tensor, fake: torch.Tensor):
    """Score real and fake patches in one discriminator batch.

    The discriminator normalizes with batch statistics, so both sets share a batch
    to keep their scores on a common scale.
    """
    s = d(torch.cat([real, fake], dim=0))
    return s[: real.shape[0]], s[real.shape[0]:]


def total_energy(enc, d, x, x_t, x_c=None, weights=MDANWeights(), layer="relu3_1",
                 content_layer="relu5_1", patch_k=8, stride=1) -> torch.Tensor:
    """Texture + content + smoothness energy of image ``x``.

    ``d`` scores neural patches of ``x`` against patches of the example ``x_t``.
    Without ``x_c`` the content term is dropped.
    """
    layers = (layer,) if x_c is None else (layer, content_layer)
    feats = encode_many(enc, x, layers)
    with torch.no_grad():
        real = extract_patches(encode_many(enc, x_t, (layer,))[layer], patch_k, stride).patches
    fake = extract_patches(feats[layer], patch_k, stride).patches
    _, s_fake = score_patches(d, real, fake)
    energy = hinge_texture_loss(s_fake)
    if x_c is not None and weights.content:
        with torch.no_grad():
            target = encode_many(enc, x_c, (content_layer,))[content_layer]
        energy = energy + weights.content * content_loss(feats[content_layer], target)
    if weights.smoothness:
        energy = energy + weights.smoothness * smoothness_prior(x)
    return energy
