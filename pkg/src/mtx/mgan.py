"""Feed-forward decoder from relu4_1 features to pixels, trained against a patch discriminator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import LAYERS, check_layer, encode, extract_patches
from .losses import content_loss, discriminator_hinge_loss, hinge_texture_loss, score_patches
from .mdan import PatchDiscriminator

INPUT_LAYER = "relu4_1"
DEFAULT_CHANNELS = (512, 256, 128, 64, 3)


class Generator(nn.Module):
    """3x3 conv followed by three 4x4 stride-2 transposed convs; output is 8x the input grid.

    The last layer is squashed by tanh and mapped to [0, 255].
    """

    def __init__(self, channels=DEFAULT_CHANNELS):
        super().__init__()
        channels = tuple(int(c) for c in channels)
        if len(channels) != 5 or channels[0] != LAYERS[INPUT_LAYER][0] or channels[-1] != 3:
            raise ValueError(f"channel schedule must be 512 -> a -> b -> c -> 3, got {channels}")
        if min(channels) < 1:
            raise ValueError("channel counts must be positive")
        self.channels = channels
        c = channels
        self.net = nn.Sequential(
            nn.Conv2d(c[0], c[1], 3, padding=1), nn.BatchNorm2d(c[1]), nn.ReLU(),
            nn.ConvTranspose2d(c[1], c[2], 4, stride=2, padding=1), nn.BatchNorm2d(c[2]), nn.ReLU(),
            nn.ConvTranspose2d(c[2], c[3], 4, stride=2, padding=1), nn.BatchNorm2d(c[3]), nn.ReLU(),
            nn.ConvTranspose2d(c[3], c[4], 4, stride=2, padding=1),
        )

    def config(self):
        return {"channels": list(self.channels)}

    @classmethod
    def from_config(cls, config):
        return cls(config["channels"])

    def reset_parameters(self, generator=None):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.normal_(m.weight, 0.0, 0.02, generator=generator)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.normal_(m.weight, 1.0, 0.02, generator=generator)
                nn.init.zeros_(m.bias)
        return self

    def forward(self, features):
        squeeze = features.dim() == 3
        h = features.unsqueeze(0) if squeeze else features
        out = 127.5 * (torch.tanh(self.net(h)) + 1.0)
        return out[0] if squeeze else out


@dataclass
class MGANConfig:
    channels: tuple = DEFAULT_CHANNELS
    epochs: int = 5
    batch_size: int = 16
    lr: float = 2e-4
    beta1: float = 0.5
    d_lr: float = 2e-4
    d_beta1: float = 0.5
    adversarial_weight: float = 1.0
    reconstruction_weight: float = 0.0
    reconstruction_layer: str = "relu5_1"
    layer: str = "relu3_1"
    patch_k: int = 8
    patch_stride: int = 1
    d_channels: int = 64
    d_depth: int = 1
    seed: int = 0

    def __post_init__(self):
        check_layer(self.layer)
        check_layer(self.reconstruction_layer)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class StylePair(NamedTuple):
    photo: torch.Tensor
    target: torch.Tensor


class TrainResult(NamedTuple):
    generator: Generator
    discriminator: PatchDiscriminator | None
    history: list


def build_generator(cfg: MGANConfig | None = None, seed=None, dtype=torch.float32) -> Generator:
    cfg = cfg or MGANConfig()
    g = torch.Generator().manual_seed(cfg.seed if seed is None else seed)
    return Generator(cfg.channels).reset_parameters(g).to(dtype)


def build_discriminator(cfg: MGANConfig | None = None, seed=None, dtype=torch.float32) -> PatchDiscriminator:
    cfg = cfg or MGANConfig()
    g = torch.Generator().manual_seed((cfg.seed if seed is None else seed) + 1)
    d = PatchDiscriminator(cfg.layer, cfg.patch_k, cfg.d_channels, cfg.d_depth)
    return d.reset_parameters(g).to(dtype)


def _input_features(enc, photos):
    with torch.no_grad():
        return encode(enc, photos, INPUT_LAYER).data


def _check_corpus(corpus):
    if not corpus:
        raise ValueError("empty corpus")
    shape = tuple(corpus[0][0].shape)
    for i, (photo, target) in enumerate(corpus):
        if photo.shape != target.shape:
            raise ValueError(f"pair {i}: photo {tuple(photo.shape)} and target {tuple(target.shape)} differ")
        if tuple(photo.shape) != shape:
            raise ValueError(f"pair {i}: all pairs must share one size, got {tuple(photo.shape)} vs {shape}")


def _batches(n, batch_size, generator):
    order = torch.randperm(n, generator=generator).tolist()
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _stack(corpus, idx):
    return (torch.stack([corpus[i][0] for i in idx]), torch.stack([corpus[i][1] for i in idx]))


def generator_loss(g, d, enc, photos, targets, cfg: MGANConfig | None = None, features=None):
    """Adversarial hinge loss of G's output patches, plus the optional feature reconstruction term."""
    cfg = cfg or MGANConfig()
    if features is None:
        features = _input_features(enc, photos)
    out = g(features)
    with torch.no_grad():
        real = extract_patches(encode(enc, targets, cfg.layer), cfg.patch_k, cfg.patch_stride).patches
    fake = extract_patches(encode(enc, out, cfg.layer), cfg.patch_k, cfg.patch_stride).patches
    _, s_fake = score_patches(d, real, fake)
    loss = cfg.adversarial_weight * hinge_texture_loss(s_fake)
    if cfg.reconstruction_weight:
        with torch.no_grad():
            ref = encode(enc, targets, cfg.reconstruction_layer)
        loss = loss + cfg.reconstruction_weight * content_loss(encode(enc, out, cfg.reconstruction_layer), ref)
    return loss


def patch_scores(d, enc, outputs, targets, cfg: MGANConfig | None = None):
    """Discriminator scores ``(s_real, s_fake)`` for target patches vs. patches of ``outputs``."""
    cfg = cfg or MGANConfig()
    with torch.no_grad():
        real = extract_patches(encode(enc, targets, cfg.layer), cfg.patch_k, cfg.patch_stride).patches
        fake = extract_patches(encode(enc, outputs, cfg.layer), cfg.patch_k, cfg.patch_stride).patches
        return score_patches(d, real, fake)


def train(g, d, enc, corpus, cfg: MGANConfig | None = None) -> TrainResult:
    """Alternate one D and one G update per mini-batch, for ``cfg.epochs`` seeded shuffles."""
    cfg = cfg or MGANConfig()
    _check_corpus(corpus)
    d = d if d is not None else build_discriminator(cfg, dtype=corpus[0][0].dtype)
    g_opt = torch.optim.Adam(g.parameters(), lr=cfg.lr, betas=(cfg.beta1, 0.999))
    d_opt = torch.optim.Adam(d.parameters(), lr=cfg.d_lr, betas=(cfg.d_beta1, 0.999))
    shuffle = torch.Generator().manual_seed(cfg.seed)
    history = []
    g.train()
    for epoch in range(cfg.epochs):
        for b, idx in enumerate(_batches(len(corpus), cfg.batch_size, shuffle)):
            photos, targets = _stack(corpus, idx)
            features = _input_features(enc, photos)
            with torch.no_grad():
                real = extract_patches(encode(enc, targets, cfg.layer), cfg.patch_k, cfg.patch_stride).patches
                fake = extract_patches(encode(enc, g(features), cfg.layer), cfg.patch_k, cfg.patch_stride).patches
            d_opt.zero_grad()
            loss_d = discriminator_hinge_loss(*score_patches(d, real, fake))
            loss_d.backward()
            d_opt.step()

            g_opt.zero_grad()
            loss_g = generator_loss(g, d, enc, photos, targets, cfg, features=features)
            loss_g.backward()
            g_opt.step()
            history.append({"epoch": epoch, "batch": b, "loss_d": float(loss_d.detach()), "loss_g": float(loss_g.detach())})
    g.eval()
    return TrainResult(g, d, history)


def baseline_loss(g, enc, photos, targets, mode, features=None):
    if mode not in ("pixel", "neural"):
        raise ValueError(f"unknown baseline mode {mode!r}; expected 'pixel' or 'neural'")
    if features is None:
        features = _input_features(enc, photos)
    out = g(features)
    if mode == "pixel":
        return F.mse_loss(out, targets)
    with torch.no_grad():
        ref = encode(enc, targets, "relu3_1")
    return content_loss(encode(enc, out, "relu3_1"), ref)


def train_vae_baseline(g, enc, corpus, mode="pixel", cfg: MGANConfig | None = None) -> TrainResult:
    """Non-adversarial decoder training: pixel MSE or relu3_1 feature MSE to the targets."""
    if mode not in ("pixel", "neural"):
        raise ValueError(f"unknown baseline mode {mode!r}; expected 'pixel' or 'neural'")
    cfg = cfg or MGANConfig()
    _check_corpus(corpus)
    opt = torch.optim.Adam(g.parameters(), lr=cfg.lr, betas=(cfg.beta1, 0.999))
    shuffle = torch.Generator().manual_seed(cfg.seed)
    history = []
    g.train()
    for epoch in range(cfg.epochs):
        for b, idx in enumerate(_batches(len(corpus), cfg.batch_size, shuffle)):
            photos, targets = _stack(corpus, idx)
            opt.zero_grad()
            loss = baseline_loss(g, enc, photos, targets, mode)
            loss.backward()
            opt.step()
            history.append({"epoch": epoch, "batch": b, "loss_g": float(loss.detach())})
    g.eval()
    return TrainResult(g, None, history)


def pretrain_autoencoder(g, enc, photos, steps, lr=1e-3, beta1=0.5, log=None):
    """Fit G to invert the encoder: decode(photo) -> photo under pixel MSE."""
    if not photos:
        raise ValueError("no photos")
    if steps <= 0:
        return g
    same = len({tuple(p.shape) for p in photos}) == 1
    batches = [torch.stack(photos)] if same else [p.unsqueeze(0) for p in photos]
    features = [_input_features(enc, b) for b in batches]
    opt = torch.optim.Adam(g.parameters(), lr=lr, betas=(beta1, 0.999))
    g.train()
    for i in range(steps):
        j = i % len(batches)
        target = batches[j]
        out = g(features[j])
        target = target[..., : out.shape[-2], : out.shape[-1]]
        loss = F.mse_loss(out, target)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log is not None:
            log.append(float(loss.detach()))
    g.eval()
    return g


def add_noise(photo, noise, amplitude):
    """Blend ``noise`` into ``photo``: ``(1 - a) * photo + a * noise``."""
    if noise.shape != photo.shape:
        raise ValueError(f"noise {tuple(noise.shape)} does not match photo {tuple(photo.shape)}")
    return (1.0 - amplitude) * photo + amplitude * noise


@torch.no_grad()
def decode(g, enc, photo, noise=None, noise_amplitude=0.0):
    """Stylize ``photo`` in one forward pass; output is ``8 * floor(size / 8)`` pixels."""
    if min(photo.shape[-2:]) < 8:
        raise ValueError(f"photo {tuple(photo.shape[-2:])} is smaller than 8x8")
    if noise is not None and noise_amplitude:
        photo = add_noise(photo, noise, noise_amplitude)
    g.eval()
    return g(encode(enc, photo, INPUT_LAYER).data)


@torch.no_grad()
def visualize_decoder_features(g, channel_index, n=4):
    """Decode a constant one-hot feature map (``None`` decodes all zeros)."""
    c = g.channels[0]
    features = torch.zeros(c, n, n, dtype=next(g.parameters()).dtype)
    if channel_index is not None:
        if not 0 <= channel_index < c:
            raise IndexError(f"channel index {channel_index} out of range [0, {c})")
        features[channel_index] = 1.0
    g.eval()
    return g(features)
