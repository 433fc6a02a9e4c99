"""Perlin and brown (1/f^beta spectrum) noise images for unguided decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "brown"
    width: int = 256
    height: int = 256
    octaves: int = 4
    spectral_exponent: float = 2.0
    seed: int = 0
    # lattice period of the coarsest Perlin octave, in pixels
    period: int = 32

    def __post_init__(self):
        if self.kind not in ("perlin", "brown"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.width < 8 or self.height < 8:
            raise ValueError("noise images must be at least 8x8")
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")


def _to_byte_range(a):
    lo, hi = a.min(), a.max()
    if hi - lo < 1e-12:
        return np.full_like(a, 127.5)
    return 255.0 * (a - lo) / (hi - lo)


def brown_channel(h, w, exponent, rng):
    """White Gaussian noise shaped to power ~ 1/f^exponent (DC removed)."""
    white = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fy ** 2 + fx ** 2)
    amp = np.zeros_like(f)
    amp[f > 0] = f[f > 0] ** (-exponent / 2.0)
    return np.fft.irfft2(np.fft.rfft2(white) * amp, s=(h, w))


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def perlin_octave(h, w, period, rng):
    gh, gw = h // period + 2, w // period + 2
    angles = rng.uniform(0, 2 * np.pi, (gh, gw))
    grad = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    y = np.arange(h) / period
    x = np.arange(w) / period
    yi, xi = np.floor(y).astype(int), np.floor(x).astype(int)
    yf, xf = (y - yi)[:, None], (x - xi)[None, :]
    Y, X = np.meshgrid(yi, xi, indexing="ij")

    def corner(dy, dx):
        g = grad[Y + dy, X + dx]
        return g[..., 0] * (yf - dy) + g[..., 1] * (xf - dx)

    u, v = _fade(xf), _fade(yf)
    top = corner(0, 0) + u * (corner(0, 1) - corner(0, 0))
    bottom = corner(1, 0) + u * (corner(1, 1) - corner(1, 0))
    return top + v * (bottom - top)


def perlin_channel(h, w, octaves, period, rng):
    out = np.zeros((h, w))
    amplitude = 1.0
    for _ in range(octaves):
        out += amplitude * perlin_octave(h, w, max(period, 1), rng)
        period //= 2
        amplitude *= 0.5
        if period < 1:
            break
    return out


def generate(spec: NoiseSpec) -> torch.Tensor:
    """3 x H x W float image in [0, 255]; each channel drawn from its own seeded stream."""
    streams = np.random.SeedSequence(spec.seed).spawn(3)
    channels = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        if spec.kind == "brown":
            a = brown_channel(spec.height, spec.width, spec.spectral_exponent, rng)
        else:
            a = perlin_channel(spec.height, spec.width, spec.octaves, spec.period, rng)
        channels.append(_to_byte_range(a))
    return torch.from_numpy(np.stack(channels)).float()


def radial_power(channel: np.ndarray, bands):
    """Mean spectral power within each ``(f_lo, f_hi)`` radial band (cycles/pixel)."""
    h, w = channel.shape
    p = np.abs(np.fft.fft2(channel - channel.mean())) ** 2
    f = np.sqrt(np.fft.fftfreq(h)[:, None] ** 2 + np.fft.fftfreq(w)[None, :] ** 2)
    return np.array([p[(f >= lo) & (f < hi)].mean() for lo, hi in bands])
