"""Decode-latency benchmark across resolutions."""

from __future__ import annotations

import csv
import platform
import statistics
import time
from dataclasses import dataclass

import numpy as np
import torch

from .mgan import decode

# reported TitanX timings (ms) for the feed-forward decoder; recorded, never asserted
REFERENCE_ANCHORS_MS = {256: 10.0, 512: 40.0, 1024: 160.0}

CSV_COLUMNS = ["resolution", "trials", "median_ms", "device"]


@dataclass
class BenchmarkRecord:
    resolution: int  # pixels per side; the image is resolution x resolution
    trials: int
    median_ms: float
    device: str

    def __post_init__(self):
        if self.trials < 5:
            raise ValueError("a benchmark record needs at least 5 trials")
        if not self.median_ms > 0:
            raise ValueError("median_ms must be positive")

    @property
    def pixels(self):
        return self.resolution * self.resolution


def device_descriptor():
    name = platform.processor() or platform.machine()
    return f"cpu:{name}:threads={torch.get_num_threads()}"


def time_decode(g, enc, size, trials=5, warmup=1, seed=0):
    gen = torch.Generator().manual_seed(seed)
    dtype = next(g.parameters()).dtype
    img = torch.rand(3, size, size, generator=gen, dtype=dtype) * 255
    for _ in range(warmup):
        decode(g, enc, img)
    times = []
    for _ in range(trials):
        t0 = time.perf_counter()
        decode(g, enc, img)
        times.append((time.perf_counter() - t0) * 1000.0)
    return times


def run_benchmark(g, enc, sizes=(128, 256, 512), trials=5, warmup=1) -> list[BenchmarkRecord]:
    device = device_descriptor()
    return [
        BenchmarkRecord(size, trials, statistics.median(time_decode(g, enc, size, trials, warmup)), device)
        for size in sizes
    ]


def scaling_exponent(records) -> float:
    """Least-squares slope of log(median_ms) against log(pixel count)."""
    if len(records) < 2:
        raise ValueError("need at least two resolutions to fit an exponent")
    x = np.log([r.pixels for r in records])
    y = np.log([r.median_ms for r in records])
    return float(np.polyfit(x, y, 1)[0])


def write_csv(records, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.resolution, r.trials, f"{r.median_ms:.3f}", r.device])
