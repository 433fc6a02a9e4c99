"""Command-line entry point: ``mtx <verb> [flags]``.

Flag values resolve as: command line > ``--config`` file (``key = value`` lines) > built-in default.
Every command writes the effective configuration next to its output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import torch

from . import bench, data, mdan, mgan, noise, persistence
from .encoder import VGG19_BLOCKS, Encoder, load_encoder
from .losses import MDANWeights

log = logging.getLogger("mtx")

ENCODER_ENV = "MTX_ENCODER_WEIGHTS"


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _int_list(s):
    return [int(v) for v in str(s).replace("x", ",").split(",") if v.strip()]


def _size(s):
    v = _int_list(s)
    if len(v) != 2:
        raise argparse.ArgumentTypeError(f"expected HxW, got {s!r}")
    return tuple(v)


def _bool(s):
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


# ---------------------------------------------------------------- argument plumbing

def _add(p, *flags, default=None, **kw):
    """Register a flag whose default is resolved later (so config files can override it)."""
    action = p.add_argument(*flags, default=argparse.SUPPRESS, **kw)
    p.set_defaults(**{f"_default_{action.dest}": default})
    return action


def _common(p):
    _add(p, "--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="key = value file; command-line flags take precedence")
    _add(p, "--out", help="output path")
    _add(p, "--encoder", help=f"encoder checkpoint (default: ${ENCODER_ENV})")


def _mdan_flags(p):
    _add(p, "--texture", help="example texture image")
    _add(p, "--iterations", type=int, default=500)
    _add(p, "--lr", type=float, default=0.02)
    _add(p, "--beta1", type=float, default=0.5)
    _add(p, "--alpha1", type=float, default=1.0, help="content weight")
    _add(p, "--alpha2", type=float, default=1e-4, help="smoothness weight")
    _add(p, "--layer", default="relu3_1")
    _add(p, "--content-layer", default="relu5_1")
    _add(p, "--patch-k", type=int, default=8)
    _add(p, "--stride", type=int, default=1)
    _add(p, "--d-channels", type=int, default=64)
    _add(p, "--d-depth", type=int, default=1)
    _add(p, "--d-updates", type=int, default=1)
    _add(p, "--d-lr", type=float, default=0.02)


def _resolve(parser, args):
    ns = vars(args)
    defaults = {k[len("_default_"):]: v for k, v in ns.items() if k.startswith("_default_")}
    cli = {k: v for k, v in ns.items() if not k.startswith("_") and k not in ("config", "command")}
    from_file = {}
    if ns.get("config"):
        types = {a.dest: a.type for a in parser._actions}
        path = Path(ns["config"])
        if not path.is_file():
            raise CommandError("E_INPUT", f"config file not found: {path}")
        for n, line in enumerate(path.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CommandError("E_CONFIG", f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.lstrip("-").replace("-", "_")
            if key not in defaults:
                raise CommandError("E_CONFIG", f"{path}:{n}: unknown key {key!r}")
            conv = types.get(key)
            try:
                from_file[key] = conv(value) if conv else value
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise CommandError("E_CONFIG", f"{path}:{n}: {e}") from None
    return {**defaults, **from_file, **cli}


def _jsonable(cfg):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(_jsonable(obj) if isinstance(obj, dict) else obj, sort_keys=True, indent=2))


def _require(parser, cfg, *keys):
    for key in keys:
        if cfg.get(key) is None:
            parser.error(f"the following arguments are required: --{key.replace('_', '-')}")


def _encoder(cfg):
    path = cfg.get("encoder") or os.environ.get(ENCODER_ENV)
    if not path:
        raise CommandError("E_ENCODER", f"no encoder weights: pass --encoder or set {ENCODER_ENV}")
    try:
        return load_encoder(path)
    except FileNotFoundError as e:
        raise CommandError("E_ENCODER", str(e)) from None


def _image(path, what):
    try:
        return data.load_image(path)
    except (FileNotFoundError, OSError) as e:
        raise CommandError("E_INPUT", f"cannot read {what} {path}: {e}") from None


def _generator(path):
    if not path:
        raise CommandError("E_USAGE", "a --generator checkpoint is required")
    if not Path(path).is_file():
        raise CommandError("E_INPUT", f"generator checkpoint not found: {path}")
    g = persistence.load(path)
    if not isinstance(g, mgan.Generator):
        raise CommandError("E_CHECKPOINT", f"{path} is not a generator checkpoint")
    return g


def _mdan_config(cfg, size=None):
    return mdan.MDANConfig(
        weights=MDANWeights(cfg["alpha1"], cfg["alpha2"]), layer=cfg["layer"], content_layer=cfg["content_layer"],
        patch_k=cfg["patch_k"], stride=cfg["stride"], lr=cfg["lr"], beta1=cfg["beta1"],
        iterations=cfg["iterations"], d_updates_per_step=cfg["d_updates"], d_lr=cfg["d_lr"],
        d_channels=cfg["d_channels"], d_depth=cfg["d_depth"], size=size, seed=cfg["seed"])


# ---------------------------------------------------------------- commands

def cmd_train_mdan(parser, cfg):
    _require(parser, cfg, "texture", "out")
    enc = _encoder(cfg)
    x_t = _image(cfg["texture"], "texture")
    x_c = _image(cfg["content"], "content image") if cfg.get("content") else None
    mcfg = _mdan_config(cfg, size=cfg.get("size"))
    d_init = persistence.load(cfg["d_init"]) if cfg.get("d_init") else None
    state = mdan.run(enc, x_t, x_c, mcfg, d_init=d_init)
    data.save_image(state.x.detach().clamp(0, 255), cfg["out"])
    if cfg.get("save_d"):
        persistence.save(state.d, cfg["save_d"])
    _write_json(f"{cfg['out']}.json", {"command": "train-mdan", "config": cfg, "energies": state.energies})
    print(cfg["out"])


def cmd_build_corpus(parser, cfg):
    _require(parser, cfg, "photos", "texture", "out")
    enc = _encoder(cfg)
    spec = data.CorpusSpec(photo_dir=cfg["photos"], max_dim=cfg["max_dim"], augment_copies=cfg["copies"],
                           crop_size=cfg["crop_size"], crop_stride=cfg["crop_stride"], seed=cfg["seed"])
    try:
        photos = data.ingest(spec)
    except (NotADirectoryError, ValueError) as e:
        raise CommandError("E_INPUT", str(e)) from None
    x_t = _image(cfg["texture"], "texture")
    records = []
    pairs = data.build_style_corpus(enc, photos, x_t, _mdan_config(cfg), spec, reuse_d=cfg["reuse_d"],
                                    records=records)
    data.save_corpus(pairs, cfg["out"], spec, config=_jsonable(cfg), records=records)
    print(f"{len(pairs)} pairs -> {cfg['out']}")


def cmd_train_mgan(parser, cfg):
    _require(parser, cfg, "corpus", "out")
    enc = _encoder(cfg)
    try:
        corpus = data.load_corpus(cfg["corpus"])
    except (FileNotFoundError, ValueError, KeyError) as e:
        raise CommandError("E_INPUT", f"invalid corpus {cfg['corpus']}: {e}") from None
    mcfg = mgan.MGANConfig(
        channels=tuple(cfg["channels"]), epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        d_lr=cfg["d_lr"], reconstruction_weight=cfg["reconstruction_weight"], patch_k=cfg["patch_k"],
        patch_stride=cfg["patch_stride"], d_channels=cfg["d_channels"], d_depth=cfg["d_depth"], seed=cfg["seed"])
    g = mgan.build_generator(mcfg)
    if cfg["pretrain_steps"]:
        mgan.pretrain_autoencoder(g, enc, [p for p, _ in corpus], cfg["pretrain_steps"], lr=cfg["lr"])
    if cfg["baseline"] == "none":
        result = mgan.train(g, None, enc, corpus, mcfg)
    else:
        result = mgan.train_vae_baseline(g, enc, corpus, cfg["baseline"], mcfg)
    out = cfg["out"]
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    persistence.save(result.generator, out)
    if result.discriminator is not None:
        persistence.save(result.discriminator, f"{out}.disc")
    with open(f"{out}.losses.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["epoch", "batch", "loss_d", "loss_g"])
        w.writeheader()
        for row in result.history:
            w.writerow(row)
    _write_json(f"{out}.run.json", {"command": "train-mgan", "config": cfg, "batches": len(result.history)})
    print(out)


def _noise_blend(cfg, photo):
    if not cfg["noise_amplitude"]:
        return None
    spec = noise.NoiseSpec("perlin", width=photo.shape[-1], height=photo.shape[-2], seed=cfg["seed"])
    return noise.generate(spec)


def cmd_decode(parser, cfg):
    _require(parser, cfg, "out")
    if bool(cfg.get("input")) == bool(cfg.get("noise")):
        parser.error("exactly one of --input or --noise is required")
    enc = _encoder(cfg)
    g = _generator(cfg.get("generator"))
    if cfg.get("noise"):
        photo = noise.generate(noise.NoiseSpec(cfg["noise"], width=cfg["width"], height=cfg["height"],
                                               spectral_exponent=cfg["spectral_exponent"], seed=cfg["seed"]))
    else:
        photo = _image(cfg["input"], "input")
    out = mgan.decode(g, enc, photo, _noise_blend(cfg, photo), cfg["noise_amplitude"])
    data.save_image(out, cfg["out"])
    _write_json(f"{cfg['out']}.json", {"command": "decode", "config": cfg})
    print(cfg["out"])


def cmd_decode_video(parser, cfg):
    _require(parser, cfg, "frames", "out")
    enc = _encoder(cfg)
    g = _generator(cfg.get("generator"))
    try:
        files = data.list_images(cfg["frames"])
    except NotADirectoryError as e:
        raise CommandError("E_INPUT", str(e)) from None
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    written, elapsed = [], 0.0
    for path in files:
        if path.suffix.lower() not in data.IMAGE_SUFFIXES:
            log.warning("skipping non-image file %s", path.name)
            continue
        try:
            frame = data.load_image(path)
        except OSError as e:
            log.warning("skipping %s: %s", path.name, e)
            continue
        t0 = time.perf_counter()
        out = mgan.decode(g, enc, frame, _noise_blend(cfg, frame), cfg["noise_amplitude"])
        elapsed += time.perf_counter() - t0
        data.save_image(out, out_dir / path.name)
        written.append(path.name)
    if not written:
        raise CommandError("E_INPUT", f"no decodable frames in {cfg['frames']}")
    hz = len(written) / elapsed if elapsed > 0 else float("inf")
    _write_json(out_dir / "decode.json", {"command": "decode-video", "config": cfg, "frames": written, "hz": hz})
    print(f"{len(written)} frames, {hz:.2f} Hz")


def _bench_generator(cfg):
    if cfg.get("generator"):
        return _generator(cfg["generator"])
    return mgan.build_generator(mgan.MGANConfig(channels=tuple(cfg["channels"]), seed=cfg["seed"])).eval()


def cmd_benchmark(parser, cfg):
    _require(parser, cfg, "out")
    if cfg["trials"] < 5:
        parser.error("--trials must be at least 5")
    enc = _encoder(cfg)
    g = _bench_generator(cfg)
    with torch.no_grad():
        records = bench.run_benchmark(g, enc, cfg["sizes"], cfg["trials"], cfg["warmup"])
    bench.write_csv(records, cfg["out"])
    exponent = bench.scaling_exponent(records) if len(records) > 1 else None
    _write_json(f"{cfg['out']}.json", {
        "command": "benchmark", "config": cfg, "scaling_exponent": exponent,
        "reference_anchors_ms": {f"{k}x{k}": v for k, v in bench.REFERENCE_ANCHORS_MS.items()},
    })
    for r in records:
        print(f"{r.resolution}x{r.resolution}: {r.median_ms:.2f} ms (median of {r.trials})")
    if exponent is not None:
        print(f"scaling exponent: {exponent:.3f}")


def cmd_visualize_features(parser, cfg):
    _require(parser, cfg, "out")
    g = _generator(cfg.get("generator"))
    tiles = []
    for c in cfg["channel_list"]:
        try:
            tiles.append(mgan.visualize_decoder_features(g, c, cfg["n"]))
        except IndexError as e:
            raise CommandError("E_USAGE", str(e)) from None
    cols = min(cfg["cols"], len(tiles))
    rows = math.ceil(len(tiles) / cols)
    _, th, tw = tiles[0].shape
    grid = torch.zeros(3, rows * th, cols * tw)
    for i, t in enumerate(tiles):
        r, c = divmod(i, cols)
        grid[:, r * th:(r + 1) * th, c * tw:(c + 1) * tw] = t
    data.save_image(grid, cfg["out"])
    _write_json(f"{cfg['out']}.json", {"command": "visualize-features", "config": cfg})
    print(cfg["out"])


def parameter_report(g=None, enc=None):
    """Parameter bytes of a generator plus the encoder stack up to relu4_1."""
    g = g if g is not None else mgan.Generator()
    enc = enc if enc is not None else Encoder(VGG19_BLOCKS)
    # conv{b}_{i}: everything before relu4_1 plus conv4_1 itself
    enc_bytes = sum(4 * p.numel() for name, p in enc.convs.named_parameters()
                    if (int(name[4]), int(name[6])) <= (4, 1))
    gen_bytes = persistence.parameter_bytes(g)
    return {
        "generator_bytes": gen_bytes,
        "encoder_to_relu4_1_bytes": enc_bytes,
        "total_bytes": gen_bytes + enc_bytes,
        "total_mb": (gen_bytes + enc_bytes) / 2**20,
        "reference_mb": 70,
    }


def cmd_info(parser, cfg):
    g = _generator(cfg["generator"]) if cfg.get("generator") else None
    enc = None
    path = cfg.get("encoder") or os.environ.get(ENCODER_ENV)
    if path:
        enc = load_encoder(path)
    report = parameter_report(g, enc)
    if cfg.get("out"):
        _write_json(cfg["out"], {"command": "info", "config": cfg, **report})
    print(json.dumps(report, indent=2))


COMMANDS = {
    "train-mdan": cmd_train_mdan,
    "build-corpus": cmd_build_corpus,
    "train-mgan": cmd_train_mgan,
    "decode": cmd_decode,
    "decode-video": cmd_decode_video,
    "benchmark": cmd_benchmark,
    "visualize-features": cmd_visualize_features,
    "info": cmd_info,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mtx", description="Markovian patch-adversarial texture synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-mdan", help="optimize one image against the texture")
    _common(p)
    _mdan_flags(p)
    _add(p, "--content", help="guidance photo (omit for unguided synthesis)")
    _add(p, "--size", type=_size, help="HxW of unguided output (default: texture size)")
    _add(p, "--d-init", help="discriminator checkpoint to start from")
    _add(p, "--save-d", help="write the final discriminator here")

    p = sub.add_parser("build-corpus", help="stylize photos with MDAN and cut paired crops")
    _common(p)
    _mdan_flags(p)
    _add(p, "--photos", help="directory of photos")
    _add(p, "--max-dim", type=int, default=384)
    _add(p, "--copies", type=int, default=9)
    _add(p, "--crop-size", type=int, default=128)
    _add(p, "--crop-stride", type=int, default=64)
    _add(p, "--reuse-d", type=_bool, nargs="?", const=True, default=False)

    p = sub.add_parser("train-mgan", help="train the feed-forward generator on a corpus")
    _common(p)
    _add(p, "--corpus", help="corpus directory from build-corpus")
    _add(p, "--epochs", type=int, default=5)
    _add(p, "--batch-size", type=int, default=16)
    _add(p, "--lr", type=float, default=2e-4)
    _add(p, "--d-lr", type=float, default=2e-4)
    _add(p, "--baseline", choices=["none", "pixel", "neural"], default="none")
    _add(p, "--pretrain-steps", type=int, default=0)
    _add(p, "--reconstruction-weight", type=float, default=0.0)
    _add(p, "--patch-k", type=int, default=8)
    _add(p, "--patch-stride", type=int, default=1)
    _add(p, "--channels", type=_int_list, default=list(mgan.DEFAULT_CHANNELS))
    _add(p, "--d-channels", type=int, default=64)
    _add(p, "--d-depth", type=int, default=1)

    for name in ("decode", "decode-video"):
        p = sub.add_parser(name, help="stylize an image" if name == "decode" else "stylize a directory of frames")
        _common(p)
        _add(p, "--generator", help="generator checkpoint")
        _add(p, "--noise-amplitude", type=float, default=0.0, help="Perlin noise blended into the input")
        if name == "decode":
            _add(p, "--input", help="photo to decode")
            _add(p, "--noise", choices=["brown", "perlin"], help="decode generated noise instead of a photo")
            _add(p, "--width", type=int, default=256)
            _add(p, "--height", type=int, default=256)
            _add(p, "--spectral-exponent", type=float, default=2.0)
        else:
            _add(p, "--frames", help="directory of frames, decoded in filename order")

    p = sub.add_parser("benchmark", help="decode latency at several resolutions")
    _common(p)
    _add(p, "--generator", help="generator checkpoint (default: untrained default architecture)")
    _add(p, "--channels", type=_int_list, default=list(mgan.DEFAULT_CHANNELS))
    _add(p, "--sizes", type=_int_list, default=[128, 256, 512])
    _add(p, "--trials", type=int, default=5)
    _add(p, "--warmup", type=int, default=1)

    p = sub.add_parser("visualize-features", help="decode one-hot feature maps")
    _common(p)
    _add(p, "--generator", help="generator checkpoint")
    _add(p, "--channel-list", type=_int_list, default=list(range(8)))
    _add(p, "--n", type=int, default=4, help="feature grid side; tiles are 8n pixels")
    _add(p, "--cols", type=int, default=4)

    p = sub.add_parser("info", help="parameter memory of generator + encoder to relu4_1")
    _common(p)
    _add(p, "--generator", help="generator checkpoint (default: untrained default architecture)")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="mtx: warning: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        cfg = _resolve(sub, args)
        torch.manual_seed(cfg.get("seed", 0))
        COMMANDS[args.command](sub, cfg)
    except CommandError as e:
        print(f"mtx: error[{e.code}]: {e}", file=sys.stderr)
        return 1
    except persistence.CheckpointError as e:
        print(f"mtx: error[E_CHECKPOINT]: {e}", file=sys.stderr)
        return 1
    except FloatingPointError as e:
        print(f"mtx: error[E_NUMERIC]: {e}", file=sys.stderr)
        return 1
    except (ValueError, IndexError, OSError) as e:
        print(f"mtx: error[E_INPUT]: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
