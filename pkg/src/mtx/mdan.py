"""Pixel-space synthesis driven by a neural-patch discriminator trained on the fly."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch
from torch import nn

from .encoder import LAYERS, check_layer, encode_many, extract_patches, fold_patch_gradients
from .losses import (MDANWeights, content_loss, discriminator_hinge_loss, hinge_texture_loss,
                     score_patches, smoothness_prior)


class PatchDiscriminator(nn.Module):
    """Scores each ``C x k x k`` neural patch with one real number (positive = real).

    ``depth`` hidden 3x3 conv + BatchNorm + LeakyReLU layers followed by a linear map
    of the whole patch to a score.  BatchNorm always uses batch statistics.
    """

    def __init__(self, layer="relu3_1", patch_k=8, channels=64, depth=1, slope=0.2):
        super().__init__()
        check_layer(layer)
        self.layer, self.patch_k, self.channels, self.depth = layer, patch_k, channels, depth
        c_in = LAYERS[layer][0]
        body = []
        for _ in range(depth):
            body += [
                nn.Conv2d(c_in, channels, 3, padding=1),
                nn.BatchNorm2d(channels, track_running_stats=False),
                nn.LeakyReLU(slope),
            ]
            c_in = channels
        self.body = nn.Sequential(*body)
        self.head = nn.Linear(c_in * patch_k * patch_k, 1)

    def config(self):
        return {"layer": self.layer, "patch_k": self.patch_k, "channels": self.channels, "depth": self.depth}

    @classmethod
    def from_config(cls, config):
        return cls(**config)

    def reset_parameters(self, generator=None):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.normal_(m.weight, 0.0, 0.02, generator=generator)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.normal_(m.weight, 1.0, 0.02, generator=generator)
                nn.init.zeros_(m.bias)
        if self.depth == 0:
            # raw encoder activations are O(100); keep initial scores O(1)
            with torch.no_grad():
                self.head.weight.mul_(0.01)
        return self

    def forward(self, patches):
        if patches.shape[-1] != self.patch_k or patches.shape[-2] != self.patch_k:
            raise ValueError(f"expected {self.patch_k}x{self.patch_k} patches, got {tuple(patches.shape[-2:])}")
        return self.head(self.body(patches).flatten(1)).squeeze(1)


@dataclass
class MDANConfig:
    weights: MDANWeights = field(default_factory=MDANWeights)
    layer: str = "relu3_1"
    content_layer: str = "relu5_1"
    patch_k: int = 8
    stride: int = 1
    lr: float = 0.02
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    # ADAM treats the image in units of pixel_scale (255: optimize x/255 in [0, 1])
    pixel_scale: float = 255.0
    iterations: int = 500
    d_updates_per_step: int = 1
    d_lr: float = 0.02
    d_beta1: float = 0.5
    d_channels: int = 64
    d_depth: int = 1
    size: tuple[int, int] | None = None  # output (H, W) for unguided runs; defaults to the texture size
    blend: bool = True
    seed: int = 0

    def __post_init__(self):
        check_layer(self.layer)
        check_layer(self.content_layer)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not self.pixel_scale > 0:
            raise ValueError("pixel_scale must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.d_updates_per_step < 0:
            raise ValueError("d_updates_per_step must be non-negative")


@dataclass
class SynthesisState:
    x: torch.Tensor
    d: PatchDiscriminator
    pixel_opt: torch.optim.Adam
    d_opt: torch.optim.Adam | None
    config: MDANConfig
    step: int = 0
    energies: list = field(default_factory=list)


def new_discriminator(cfg: MDANConfig, generator=None, dtype=torch.float32):
    d = PatchDiscriminator(cfg.layer, cfg.patch_k, cfg.d_channels, cfg.d_depth)
    return d.reset_parameters(generator).to(dtype)


def _feature_size(h, w, layer):
    f = LAYERS[layer][1]
    return h // f, w // f


def init_state(enc, x_t, x_c=None, cfg: MDANConfig | None = None, d_init=None) -> SynthesisState:
    cfg = cfg or MDANConfig()
    fh, fw = _feature_size(*x_t.shape[-2:], cfg.layer)
    if min(fh, fw) < cfg.patch_k:
        raise ValueError(f"texture {tuple(x_t.shape[-2:])} too small for one {cfg.patch_k}-cell patch at {cfg.layer}")
    g = torch.Generator().manual_seed(cfg.seed)
    if x_c is not None:
        x = x_c.detach().clone()
    else:
        h, w = cfg.size or tuple(x_t.shape[-2:])
        x = torch.rand(3, h, w, generator=g, dtype=x_t.dtype) * 255.0
    if min(_feature_size(*x.shape[-2:], cfg.layer)) < cfg.patch_k:
        raise ValueError(f"output {tuple(x.shape[-2:])} too small for one patch at {cfg.layer}")
    d = copy.deepcopy(d_init) if d_init is not None else new_discriminator(cfg, g, x_t.dtype)
    x.requires_grad_(True)
    # identical to ADAM on x / pixel_scale with (lr, eps)
    pixel_opt = torch.optim.Adam([x], lr=cfg.lr * cfg.pixel_scale, betas=(cfg.beta1, cfg.beta2),
                                 eps=cfg.eps / cfg.pixel_scale)
    params = list(d.parameters())
    d_opt = torch.optim.Adam(params, lr=cfg.d_lr, betas=(cfg.d_beta1, 0.999)) if params else None
    return SynthesisState(x=x, d=d, pixel_opt=pixel_opt, d_opt=d_opt, config=cfg)


def _check_finite(t, what):
    if not torch.isfinite(t).all():
        raise FloatingPointError(f"non-finite {what}")


def _real_patches(enc, x_t, cfg):
    with torch.no_grad():
        return extract_patches(encode_many(enc, x_t, (cfg.layer,))[cfg.layer], cfg.patch_k, cfg.stride).patches


def energy_and_gradient(enc, d, x, x_t, x_c=None, cfg: MDANConfig | None = None, blend=None):
    """Return ``(energy, pixel_gradient, terms)`` for image ``x``.

    With ``blend`` the texture gradient of overlapping patches is averaged per
    feature cell before back-propagating to pixels; without it the result is the
    exact gradient of the energy.
    """
    cfg = cfg or MDANConfig()
    blend = cfg.blend if blend is None else blend
    w = cfg.weights
    guided = x_c is not None and w.content > 0
    layers = (cfg.layer, cfg.content_layer) if guided else (cfg.layer,)

    x = x.detach().requires_grad_(True)
    feats = encode_many(enc, x, layers)
    fm = feats[cfg.layer].data
    fm_leaf = fm.detach().requires_grad_(True)
    ps = extract_patches(fm_leaf, cfg.patch_k, cfg.stride)
    _, s_fake = score_patches(d, _real_patches(enc, x_t, cfg), ps.patches)
    e_t = hinge_texture_loss(s_fake)
    (g_patches,) = torch.autograd.grad(e_t, ps.patches)
    g_fm = fold_patch_gradients(g_patches, ps.origins, fm.shape[-2], fm.shape[-1], normalize=blend)
    (grad,) = torch.autograd.grad(fm, x, g_fm, retain_graph=guided)
    _check_finite(grad, "gradient in texture term")
    terms = {"texture": e_t.detach()}

    if guided:
        with torch.no_grad():
            target = encode_many(enc, x_c, (cfg.content_layer,))[cfg.content_layer]
        e_c = content_loss(feats[cfg.content_layer], target)
        (g_c,) = torch.autograd.grad(w.content * e_c, x)
        _check_finite(g_c, "gradient in content term")
        grad = grad + g_c
        terms["content"] = e_c.detach()

    if w.smoothness:
        xs = x.detach().requires_grad_(True)
        e_s = smoothness_prior(xs)
        (g_s,) = torch.autograd.grad(w.smoothness * e_s, xs)
        _check_finite(g_s, "gradient in smoothness term")
        grad = grad + g_s
        terms["smoothness"] = e_s.detach()

    energy = terms["texture"] + w.content * terms.get("content", 0.0) + w.smoothness * terms.get("smoothness", 0.0)
    return energy, grad, terms


def discriminator_loss(enc, d, x, x_t, cfg: MDANConfig):
    """Hinge loss of ``d`` separating texture patches from patches of ``x``."""
    with torch.no_grad():
        fake = extract_patches(encode_many(enc, x.detach(), (cfg.layer,))[cfg.layer], cfg.patch_k, cfg.stride).patches
    s_real, s_fake = score_patches(d, _real_patches(enc, x_t, cfg), fake)
    return discriminator_hinge_loss(s_real, s_fake)


def score_gap(enc, d, x, x_t, cfg: MDANConfig) -> float:
    """mean(real scores) - mean(fake scores) under ``d``."""
    with torch.no_grad():
        fake = extract_patches(encode_many(enc, x.detach(), (cfg.layer,))[cfg.layer], cfg.patch_k, cfg.stride).patches
        s_real, s_fake = score_patches(d, _real_patches(enc, x_t, cfg), fake)
    return float(s_real.mean() - s_fake.mean())


def step(enc, state: SynthesisState, x_t, x_c=None) -> SynthesisState:
    """One deconvolution update of the pixels, then the discriminator updates."""
    cfg = state.config
    energy, grad, _ = energy_and_gradient(enc, state.d, state.x, x_t, x_c, cfg)
    state.energies.append(float(energy))
    state.pixel_opt.zero_grad()
    state.x.grad = grad
    state.pixel_opt.step()
    _check_finite(state.x, "pixels after update")

    for _ in range(cfg.d_updates_per_step):
        update_discriminator(enc, state, x_t)
    state.step += 1
    return state


def update_discriminator(enc, state: SynthesisState, x_t):
    """One hinge update of D: texture patches real, current synthesis fake."""
    if state.d_opt is None:
        return None
    loss = discriminator_loss(enc, state.d, state.x, x_t, state.config)
    _check_finite(loss, "discriminator loss")
    state.d_opt.zero_grad()
    loss.backward()
    state.d_opt.step()
    for p in state.d.parameters():
        _check_finite(p, "discriminator parameters")
    return float(loss.detach())


def run(enc, x_t, x_c=None, cfg: MDANConfig | None = None, d_init=None, iterations=None) -> SynthesisState:
    cfg = cfg or MDANConfig()
    state = init_state(enc, x_t, x_c, cfg, d_init)
    for _ in range(cfg.iterations if iterations is None else iterations):
        step(enc, state, x_t, x_c)
    return state


def synthesize(enc, x_t, x_c=None, cfg: MDANConfig | None = None, d_init=None):
    """Run the full optimization and return the image clamped to [0, 255]."""
    state = run(enc, x_t, x_c, cfg, d_init)
    return state.x.detach().clamp(0, 255)


def transfer_batch(enc, photos, x_t, cfg: MDANConfig | None = None, reuse_d=False, return_states=False):
    """Stylize ``photos`` one after another; with ``reuse_d`` each run starts from the previous discriminator."""
    if not photos:
        raise ValueError("no photos to transfer")
    cfg = cfg or MDANConfig()
    outputs, states = [], []
    d = None
    for photo in photos:
        state = run(enc, x_t, photo, cfg, d_init=d if reuse_d else None)
        outputs.append(state.x.detach().clamp(0, 255))
        states.append(state)
        d = state.d
    return (outputs, states) if return_states else outputs
