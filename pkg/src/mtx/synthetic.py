"""Procedural stand-ins for example textures and photos (tests, demos)."""

import math

import torch


def stripes(h=64, w=64, period=8.0, seed=0, noise=10.0):
    """Diagonal coloured stripes with a little pixel noise."""
    g = torch.Generator().manual_seed(seed)
    yy, xx = torch.meshgrid(torch.arange(h), torch.arange(w), indexing="ij")
    base = 127.5 + 100 * torch.sin(2 * math.pi * (xx + yy) / period)
    img = torch.stack([base, 255 - base, 0.5 * base + 60])
    return (img + noise * torch.randn(3, h, w, generator=g)).clamp(0, 255)


def blobs(h=128, w=128, seed=0, count=6):
    """Smooth 'photo': a colour gradient with a few soft discs."""
    g = torch.Generator().manual_seed(seed)
    yy, xx = torch.meshgrid(torch.linspace(0, 1, h), torch.linspace(0, 1, w), indexing="ij")
    c0, c1 = torch.rand(3, 1, 1, generator=g) * 255, torch.rand(3, 1, 1, generator=g) * 255
    img = c0 * (1 - yy) + c1 * yy
    for _ in range(count):
        cy, cx, r = torch.rand(3, generator=g)
        colour = torch.rand(3, 1, 1, generator=g) * 255
        mask = torch.sigmoid((0.08 + 0.2 * r - torch.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)) * 40)
        img = img * (1 - mask) + colour * mask
    return img.clamp(0, 255)
