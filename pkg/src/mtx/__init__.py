"""Markovian patch-adversarial texture synthesis: MDAN pixel optimization and MGAN feed-forward decoders."""

from .encoder import (LAYERS, Encoder, FeatureMap, PatchSet, encode, extract_patches, fold_patch_gradients,
                      load_encoder, tiny_encoder)
from .losses import (MDANWeights, content_loss, discriminator_hinge_loss, hinge_texture_loss, smoothness_prior,
                     total_energy)
from .mdan import MDANConfig, PatchDiscriminator, SynthesisState, init_state, step, synthesize, transfer_batch
from .mgan import Generator, MGANConfig, StylePair, build_generator, decode

__version__ = "0.1.0"
