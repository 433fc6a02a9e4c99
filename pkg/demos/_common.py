"""Shared setup for the demo scripts: an encoder and an output folder."""

import os
from pathlib import Path

from mtx.encoder import load_encoder, tiny_encoder

OUT = Path(os.environ.get("MTX_DEMO_OUT", "demo_output"))
OUT.mkdir(exist_ok=True)


def get_encoder():
    # real VGG19 weights if the user has converted some, else the seeded test stack
    path = os.environ.get("MTX_ENCODER_WEIGHTS")
    if path:
        print("encoder:", path)
        return load_encoder(path)
    print("encoder: tiny random stack (set MTX_ENCODER_WEIGHTS for VGG19)")
    return tiny_encoder(0)
