"""Photo ingestion, augmentation, regular cropping and (photo, stylized) pair corpora."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torchvision.transforms.functional as TF
from PIL import Image, UnidentifiedImageError

from . import mdan
from .mgan import StylePair

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}
ROTATIONS = (0.0, -15.0, 15.0)
SCALES = (1.0, 0.85, 1.15)


@dataclass
class CorpusSpec:
    photo_dir: str = "."
    max_dim: int = 384
    augment_copies: int = 9
    crop_size: int = 128
    crop_stride: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.crop_size > self.max_dim:
            raise ValueError("crop_size must not exceed max_dim")
        if self.augment_copies < 1:
            raise ValueError("augment_copies must be >= 1")
        if self.crop_stride < 1:
            raise ValueError("crop_stride must be >= 1")


def load_image(path) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).contiguous()


def to_uint8(img: torch.Tensor) -> np.ndarray:
    return img.detach().float().clamp(0, 255).round().to(torch.uint8).permute(1, 2, 0).cpu().numpy()


def save_image(img: torch.Tensor, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.is_file())


def resize_max_dim(img: torch.Tensor, max_dim: int) -> torch.Tensor:
    h, w = img.shape[-2:]
    s = max_dim / max(h, w)
    size = [max(1, round(h * s)), max(1, round(w * s))]
    if size == [h, w]:
        return img.clone()
    return TF.resize(img, size, interpolation=TF.InterpolationMode.BICUBIC, antialias=True).clamp(0, 255)


def ingest(spec: CorpusSpec) -> list[torch.Tensor]:
    """Load every decodable image under ``spec.photo_dir`` resized so its long side is ``max_dim``."""
    images = []
    for path in list_images(spec.photo_dir):
        try:
            img = load_image(path)
        except (UnidentifiedImageError, OSError) as e:
            log.warning("skipping %s: %s", path, e)
            continue
        images.append(resize_max_dim(img, spec.max_dim))
    if not images:
        raise ValueError(f"no decodable images in {spec.photo_dir}")
    return images


def inscribed_size(h, w, degrees):
    """Largest axis-aligned (h, w) rectangle inside an h x w image rotated by ``degrees``."""
    a = math.radians(degrees)
    sin_a, cos_a = abs(math.sin(a)), abs(math.cos(a))
    if sin_a < 1e-12:
        return h, w
    long_side, short_side = max(h, w), min(h, w)
    if short_side <= 2 * sin_a * cos_a * long_side or abs(sin_a - cos_a) < 1e-10:
        x = 0.5 * short_side
        wr, hr = (x / sin_a, x / cos_a) if w >= h else (x / cos_a, x / sin_a)
    else:
        cos_2a = cos_a * cos_a - sin_a * sin_a
        wr, hr = (w * cos_a - h * sin_a) / cos_2a, (h * cos_a - w * sin_a) / cos_2a
    # one pixel margin against interpolation bleed from the fill region
    return max(1, int(hr) - 2), max(1, int(wr) - 2)


def augment_params(copies=9, seed=0):
    """``(rotation_degrees, scale)`` per copy; identity first, then the 3x3 grid, then seeded draws."""
    grid = [(r, s) for r in ROTATIONS for s in SCALES]
    params = grid[:copies]
    rng = np.random.default_rng(seed)
    while len(params) < copies:
        params.append((float(rng.uniform(-15, 15)), float(rng.uniform(0.85, 1.15))))
    return params


def transform(img, degrees, scale):
    if degrees == 0 and scale == 1:
        return img.clone()
    out = img
    if degrees:
        h, w = img.shape[-2:]
        out = TF.rotate(img, degrees, interpolation=TF.InterpolationMode.BILINEAR)
        ch, cw = inscribed_size(h, w, degrees)
        out = TF.center_crop(out, [ch, cw])
    if scale != 1:
        h, w = out.shape[-2:]
        out = TF.resize(out, [max(1, round(h * scale)), max(1, round(w * scale))],
                        interpolation=TF.InterpolationMode.BICUBIC, antialias=True)
    return out.clamp(0, 255)


def augment(img, copies=9, seed=0) -> list[torch.Tensor]:
    if copies < 1:
        raise ValueError("copies must be >= 1")
    return [transform(img, r, s) for r, s in augment_params(copies, seed)]


def crop_origins(h, w, size=128, stride=128):
    if size > h or size > w:
        raise ValueError(f"image {h}x{w} smaller than crop {size}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return [(r, c) for r in range(0, h - size + 1, stride) for c in range(0, w - size + 1, stride)]


def crop_count(h, w, size=128, stride=128):
    return ((h - size) // stride + 1) * ((w - size) // stride + 1)


def crop_regular(img, size=128, stride=128) -> list[torch.Tensor]:
    return [img[..., r:r + size, c:c + size].clone() for r, c in crop_origins(*img.shape[-2:], size, stride)]


def build_style_corpus(enc, photos, x_t, mdan_cfg: mdan.MDANConfig, spec: CorpusSpec,
                       reuse_d=False, records=None) -> list[StylePair]:
    """Stylize every augmented photo with MDAN and cut both into co-located crops.

    ``records`` (if given) receives one dict per pair with its source photo index, copy and crop origin.
    """
    if not photos:
        raise ValueError("no photos")
    jobs = []
    for i, photo in enumerate(photos):
        params = augment_params(spec.augment_copies, spec.seed + i)
        for j, img in enumerate(augment(photo, spec.augment_copies, spec.seed + i)):
            if min(img.shape[-2:]) < spec.crop_size:
                log.warning("photo %d copy %d (%s) is smaller than the crop; skipped", i, j, tuple(img.shape[-2:]))
                continue
            jobs.append((i, j, params[j], img))
    if not jobs:
        raise ValueError("no augmented photo is large enough for one crop")
    targets = mdan.transfer_batch(enc, [img for *_, img in jobs], x_t, mdan_cfg, reuse_d=reuse_d)
    pairs = []
    for (i, j, (deg, scale), img), target in zip(jobs, targets):
        for r, c in crop_origins(*img.shape[-2:], spec.crop_size, spec.crop_stride):
            s = spec.crop_size
            pairs.append(StylePair(img[:, r:r + s, c:c + s].clone(), target[:, r:r + s, c:c + s].clone()))
            if records is not None:
                records.append({"source": i, "copy": j, "rotation": deg, "scale": scale, "origin": [r, c]})
    return pairs


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_corpus(pairs, out_dir, spec: CorpusSpec | None = None, config: dict | None = None, records=None) -> dict:
    """Write ``pairs/{index}_photo.png``, ``pairs/{index}_target.png`` and ``manifest.json``."""
    out = Path(out_dir)
    (out / "pairs").mkdir(parents=True, exist_ok=True)
    files = []
    for i, (photo, target) in enumerate(pairs):
        entry = {"index": i}
        for half, img in (("photo", photo), ("target", target)):
            rel = f"pairs/{i:05d}_{half}.png"
            save_image(img, out / rel)
            entry[half] = {"file": rel, "sha256": _sha256(out / rel)}
        if records is not None:
            entry.update(records[i])
        files.append(entry)
    manifest = {
        "spec": asdict(spec) if spec is not None else None,
        "seed": spec.seed if spec is not None else None,
        "augment_grid": {"rotations": list(ROTATIONS), "scales": list(SCALES)},
        "config": config or {},
        "pairs": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return manifest


def load_corpus(corpus_dir) -> list[StylePair]:
    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no corpus manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    pairs = []
    for entry in manifest["pairs"]:
        pairs.append(StylePair(load_image(root / entry["photo"]["file"]), load_image(root / entry["target"]["file"])))
    if not pairs:
        raise ValueError(f"corpus {root} has no pairs")
    return pairs
