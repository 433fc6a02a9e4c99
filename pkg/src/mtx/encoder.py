"""Fixed VGG-19 feature extractor and neural-patch sampling.

Images are float tensors ``3 x H x W`` (or batched ``B x 3 x H x W``) holding RGB
values in ``[0, 255]``.  The encoder subtracts the per-channel mean itself, so
callers never preprocess.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .persistence import CheckpointError, load_into, load_tensors

# layer name -> (channels, downsample factor)
LAYERS = {
    "relu2_1": (128, 2),
    "relu3_1": (256, 4),
    "relu4_1": (512, 8),
    "relu5_1": (512, 16),
}

VGG19_BLOCKS = [[64, 64], [128, 128], [256, 256, 256, 256], [512, 512, 512, 512], [512, 512, 512, 512]]
# one conv per block, same channel contract at every exposed layer
TINY_BLOCKS = [[16], [128], [256], [512], [512]]

# ImageNet RGB means on the 0-255 scale used by the original Caffe model
VGG_MEAN = (123.68, 116.779, 103.939)

_CONV_NAME = re.compile(r"^conv(\d)_(\d)\.(weight|bias)$")


def check_layer(layer: str):
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}; expected one of {sorted(LAYERS)}")


@dataclass
class FeatureMap:
    layer: str
    data: torch.Tensor  # C x fh x fw, or B x C x fh x fw

    @property
    def channels(self):
        return self.data.shape[-3]

    @property
    def fh(self):
        return self.data.shape[-2]

    @property
    def fw(self):
        return self.data.shape[-1]


@dataclass
class PatchSet:
    k: int
    stride: int
    patches: torch.Tensor  # n x C x k x k (batched maps contribute n per image, image-major)
    origins: torch.Tensor  # n_per_image x 2 (row, col), row-major

    @property
    def n(self):
        return self.patches.shape[0]


class Encoder(nn.Module):
    """VGG-style convolution stack truncated at any of relu2_1 .. relu5_1.

    ``blocks`` lists the conv widths of each pooling block; the first conv of
    block ``b`` (for ``b >= 2``) produces layer ``relu{b}_1``.
    """

    def __init__(self, blocks=VGG19_BLOCKS, mean=VGG_MEAN):
        super().__init__()
        self.blocks = [list(b) for b in blocks]
        self.convs = nn.ModuleDict()
        c_in = 3
        for b, widths in enumerate(self.blocks, start=1):
            for i, c_out in enumerate(widths, start=1):
                self.convs[f"conv{b}_{i}"] = nn.Conv2d(c_in, c_out, 3, padding=1)
                c_in = c_out
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(3, 1, 1))
        for b in range(2, len(self.blocks) + 1):
            layer = f"relu{b}_1"
            if layer in LAYERS and self.blocks[b - 1][0] != LAYERS[layer][0]:
                raise CheckpointError(
                    f"shape mismatch: conv{b}_1 has {self.blocks[b - 1][0]} channels, "
                    f"{layer} requires {LAYERS[layer][0]}")
        self.requires_grad_(False)
        self.eval()

    def config(self):
        return {"blocks": self.blocks}

    @classmethod
    def from_config(cls, config):
        return cls(blocks=config["blocks"])

    def state_dict(self, *args, **kwargs):
        # flat conv names (conv3_1.weight), matching the on-disk format
        sd = super().state_dict(*args, **kwargs)
        return type(sd)((k.removeprefix("convs."), v) for k, v in sd.items())

    def load_state_dict(self, state_dict, strict=True, assign=False):
        prefixed = {(k if k == "mean" else f"convs.{k}"): v for k, v in state_dict.items()}
        return super().load_state_dict(prefixed, strict=strict, assign=assign)

    def train(self, mode=True):
        # weights are frozen and there is no dropout/BN; keep the module in eval
        return super().train(False)

    @property
    def available_layers(self):
        return [f"relu{b}_1" for b in range(2, len(self.blocks) + 1) if f"relu{b}_1" in LAYERS]

    def forward(self, x, layers):
        """Return ``{layer: activation}`` for every requested layer name."""
        for layer in layers:
            check_layer(layer)
            if layer not in self.available_layers:
                raise ValueError(f"encoder is truncated before {layer}")
        deepest = max(int(layer[4]) for layer in layers)
        factor = LAYERS[f"relu{deepest}_1"][1]
        if min(x.shape[-2:]) < factor:
            raise ValueError(
                f"image {tuple(x.shape[-2:])} is smaller than one feature cell ({factor} px) at relu{deepest}_1")
        squeeze = x.dim() == 3
        h = (x if not squeeze else x.unsqueeze(0)) - self.mean.to(x.dtype)
        out = {}
        for b, widths in enumerate(self.blocks, start=1):
            if b > deepest:
                break
            if b > 1:
                h = F.max_pool2d(h, 2)
            for i in range(1, len(widths) + 1):
                h = F.relu(self.convs[f"conv{b}_{i}"](h))
                if i == 1 and f"relu{b}_1" in layers:
                    out[f"relu{b}_1"] = h[0] if squeeze else h
        return out


def tiny_encoder(seed=0, dtype=torch.float32):
    """Randomly initialized encoder with the full layer contract, for fast tests."""
    enc = Encoder(TINY_BLOCKS)
    g = torch.Generator().manual_seed(seed)
    for conv in enc.convs.values():
        nn.init.kaiming_normal_(conv.weight, nonlinearity="relu", generator=g)
        nn.init.zeros_(conv.bias)
    return enc.to(dtype)


def infer_blocks(tensors) -> list[list[int]]:
    convs = {}
    for name, arr in tensors.items():
        if name == "mean":
            continue
        m = _CONV_NAME.match(name)
        if not m:
            raise CheckpointError(f"unexpected tensor {name!r} in encoder checkpoint")
        b, i, kind = int(m[1]), int(m[2]), m[3]
        convs.setdefault((b, i), {})[kind] = arr
    blocks: list[list[int]] = []
    c_in = 3
    for b in range(1, 6):
        widths = []
        i = 1
        while (b, i) in convs:
            entry = convs.pop((b, i))
            if set(entry) != {"weight", "bias"}:
                raise CheckpointError(f"conv{b}_{i} needs both weight and bias")
            w, bias = entry["weight"], entry["bias"]
            if w.ndim != 4 or w.shape[1] != c_in or w.shape[2:] != (3, 3) or bias.shape != (w.shape[0],):
                raise CheckpointError(f"shape mismatch for conv{b}_{i}: weight {w.shape}, bias {bias.shape}")
            widths.append(int(w.shape[0]))
            c_in = w.shape[0]
            i += 1
        if not widths:
            break
        blocks.append(widths)
    if convs:
        raise CheckpointError(f"non-contiguous conv layers: {sorted(convs)}")
    if len(blocks) < 2:
        raise CheckpointError("encoder checkpoint must reach at least relu2_1")
    return blocks


def load_encoder(weights_path) -> Encoder:
    """Load an encoder from a named-tensor checkpoint (architecture inferred from tensor names)."""
    path = Path(weights_path)
    if not path.exists():
        raise FileNotFoundError(f"encoder weights not found: {path}")
    tensors = load_tensors(path)
    mean = tensors.get("mean")
    enc = Encoder(infer_blocks(tensors), mean=tuple(mean.reshape(-1).tolist()) if mean is not None else VGG_MEAN)
    if "mean" not in tensors:
        tensors = {**tensors, "mean": enc.mean.numpy()}
    else:
        tensors = {**tensors, "mean": tensors["mean"].reshape(3, 1, 1)}
    return load_into(enc, tensors)


# torchvision vgg19().features indices of the 16 convolutions
_TV_CONV_INDEX = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]


def convert_torchvision_vgg19(state_dict) -> dict:
    """Map a torchvision ``vgg19`` state dict to encoder tensors.

    torchvision expects ``(x/255 - mean)/std``; the per-channel std is folded into
    conv1_1 so the encoder only needs a mean subtraction on 0-255 input.
    """
    tv_mean = torch.tensor([0.485, 0.456, 0.406])
    tv_std = torch.tensor([0.229, 0.224, 0.225])
    names = [f"conv{b}_{i}" for b, widths in enumerate(VGG19_BLOCKS, 1) for i in range(1, len(widths) + 1)]
    out = {}
    for name, idx in zip(names, _TV_CONV_INDEX):
        w = state_dict[f"features.{idx}.weight"].float()
        if name == "conv1_1":
            w = w / (255.0 * tv_std.view(1, 3, 1, 1))
        out[f"{name}.weight"] = w
        out[f"{name}.bias"] = state_dict[f"features.{idx}.bias"].float()
    out["mean"] = 255.0 * tv_mean
    return out


def encode(enc: Encoder, img: torch.Tensor, layer: str) -> FeatureMap:
    check_layer(layer)
    return FeatureMap(layer, enc(img, (layer,))[layer])


def encode_many(enc: Encoder, img: torch.Tensor, layers) -> dict[str, FeatureMap]:
    layers = tuple(dict.fromkeys(layers))
    return {k: FeatureMap(k, v) for k, v in enc(img, layers).items()}


def patch_grid(fh, fw, k, stride):
    if k < 1 or stride < 1:
        raise ValueError("patch size and stride must be >= 1")
    if k > min(fh, fw):
        raise ValueError(f"patch size {k} larger than feature map {fh}x{fw}")
    rows = torch.arange(0, fh - k + 1, stride)
    cols = torch.arange(0, fw - k + 1, stride)
    r, c = torch.meshgrid(rows, cols, indexing="ij")
    return torch.stack([r.reshape(-1), c.reshape(-1)], dim=1)


def extract_patches(fm: FeatureMap | torch.Tensor, k: int, stride: int = 1) -> PatchSet:
    data = fm.data if isinstance(fm, FeatureMap) else fm
    origins = patch_grid(data.shape[-2], data.shape[-1], k, stride)
    batched = data if data.dim() == 4 else data.unsqueeze(0)
    c = batched.shape[1]
    cols = F.unfold(batched, k, stride=stride)  # B x (C*k*k) x L
    patches = cols.transpose(1, 2).reshape(-1, c, k, k)
    return PatchSet(k, stride, patches, origins)


def fold_patch_gradients(grads, origins, fh, fw, normalize=True):
    """Scatter-add per-patch gradients back onto a ``C x fh x fw`` map.

    With ``normalize`` each cell is divided by the number of patches covering it,
    which blends overlapping patch gradients instead of summing them.
    """
    origins = torch.as_tensor(origins, dtype=torch.long).reshape(-1, 2)
    n, c, k, k2 = grads.shape
    if k != k2 or n != origins.shape[0]:
        raise ValueError("gradients and origins disagree")
    r0, c0 = origins[:, 0], origins[:, 1]
    if (r0 < 0).any() or (c0 < 0).any() or (r0 + k > fh).any() or (c0 + k > fw).any():
        raise ValueError(f"patch origin out of bounds for a {fh}x{fw} map")
    dr = torch.arange(k).view(1, k, 1)
    idx = (r0.view(n, 1, 1) + dr) * fw + (c0.view(n, 1, 1) + dr.view(1, 1, k))  # n x k x k
    idx = idx.reshape(-1)
    out = grads.new_zeros(c, fh * fw)
    out.index_add_(1, idx, grads.permute(1, 0, 2, 3).reshape(c, -1))
    if normalize:
        count = torch.bincount(idx, minlength=fh * fw).to(grads.dtype)
        out = out / count.clamp(min=1)
    return out.view(c, fh, fw)
