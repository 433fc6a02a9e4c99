import pytest
import torch

from mtx import mdan, synthetic
from mtx.losses import MDANWeights

FAST = dict(patch_k=4, stride=2, d_channels=16)


class ConstantD(torch.nn.Module):
    def forward(self, patches):
        return torch.full((patches.shape[0],), 0.3, dtype=patches.dtype) + 0 * patches.sum()


@pytest.fixture(scope="module")
def texture():
    return synthetic.stripes(32, 32)


@pytest.fixture(scope="module")
def photo():
    return synthetic.blobs(32, 32, seed=1)


def test_discriminator_one_score_per_patch():
    d = mdan.PatchDiscriminator(patch_k=8, channels=64).reset_parameters(torch.Generator().manual_seed(0))
    assert d(torch.randn(5, 256, 8, 8)).shape == (5,)
    assert mdan.PatchDiscriminator(depth=0, patch_k=2)(torch.randn(3, 256, 2, 2)).shape == (3,)
    with pytest.raises(ValueError):
        d(torch.randn(2, 256, 4, 4))


def test_config_validation():
    with pytest.raises(ValueError):
        mdan.MDANConfig(lr=0)
    with pytest.raises(ValueError):
        mdan.MDANConfig(layer="relu9_1")


def test_texture_too_small(enc):
    with pytest.raises(ValueError, match="too small"):
        mdan.init_state(enc, torch.zeros(3, 16, 16), None, mdan.MDANConfig(patch_k=8))


def test_guided_init_has_zero_content_term(enc, texture, photo):
    cfg = mdan.MDANConfig(content_layer="relu4_1", **FAST)
    state = mdan.init_state(enc, texture, photo, cfg)
    assert torch.equal(state.x.detach(), photo)
    _, _, terms = mdan.energy_and_gradient(enc, state.d, state.x, texture, photo, cfg)
    assert float(terms["content"]) == 0


def test_unguided_init_deterministic(enc, texture):
    cfg = mdan.MDANConfig(seed=11, size=(40, 48), **FAST)
    a = mdan.init_state(enc, texture, None, cfg).x.detach()
    b = mdan.init_state(enc, texture, None, cfg).x.detach()
    assert a.shape == (3, 40, 48)
    assert torch.equal(a, b)
    assert 0 <= float(a.min()) and float(a.max()) <= 255


def test_zero_gradient_leaves_pixels(enc, texture, photo):
    cfg = mdan.MDANConfig(weights=MDANWeights(0, 0), **FAST)
    state = mdan.init_state(enc, texture, photo, cfg, d_init=ConstantD())
    before = state.x.detach().clone()
    for _ in range(3):
        mdan.step(enc, state, texture, photo)
    assert torch.equal(state.x.detach(), before)
    assert state.step == 3


def test_no_discriminator_updates(enc, texture):
    cfg = mdan.MDANConfig(d_updates_per_step=0, **FAST)
    state = mdan.init_state(enc, texture, None, cfg)
    before = [p.detach().clone() for p in state.d.parameters()]
    for _ in range(3):
        mdan.step(enc, state, texture)
    assert all(torch.equal(a, b) for a, b in zip(before, state.d.parameters()))


def test_energy_decreases_50_steps(enc):
    """50 steps, 64x64 unguided: energy of the final image below the initial noise (same judge D)."""
    xt = synthetic.stripes(64, 64)
    cfg = mdan.MDANConfig(patch_k=8, stride=2, d_channels=32, seed=0)
    state = mdan.init_state(enc, xt, None, cfg)
    x0 = state.x.detach().clone()
    for _ in range(50):
        mdan.step(enc, state, xt)
    e0, _, _ = mdan.energy_and_gradient(enc, state.d, x0, xt, None, cfg)
    e1, _, _ = mdan.energy_and_gradient(enc, state.d, state.x, xt, None, cfg)
    assert float(e1) < float(e0)


def test_discriminator_separates_fixed_image(enc, texture, photo):
    cfg = mdan.MDANConfig(**FAST)
    state = mdan.init_state(enc, texture, photo, cfg)
    for _ in range(100):
        mdan.update_discriminator(enc, state, texture)
    assert mdan.score_gap(enc, state.d, state.x, texture, cfg) > 0


def test_reused_discriminator_larger_gap(enc, texture):
    photos = [synthetic.blobs(32, 32, seed=s) for s in (3, 4)]
    cfg = mdan.MDANConfig(iterations=40, **FAST)
    first = mdan.run(enc, texture, photos[0], cfg)
    fresh = mdan.init_state(enc, texture, photos[1], cfg)
    reused = mdan.init_state(enc, texture, photos[1], cfg, d_init=first.d)
    gap_fresh = mdan.score_gap(enc, fresh.d, photos[1], texture, cfg)
    gap_reused = mdan.score_gap(enc, reused.d, photos[1], texture, cfg)
    assert gap_reused > gap_fresh
    # the previous run's discriminator is copied, not shared
    assert reused.d is not first.d


def test_synthesize_zero_iterations_returns_content(enc, texture, photo):
    out = mdan.synthesize(enc, texture, photo, mdan.MDANConfig(iterations=0, **FAST))
    assert torch.equal(out, photo)


def test_synthesize_bitwise_deterministic(enc, texture):
    cfg = mdan.MDANConfig(iterations=5, seed=3, **FAST)
    a = mdan.synthesize(enc, texture, None, cfg)
    b = mdan.synthesize(enc, texture, None, cfg)
    assert torch.equal(a, b)
    assert 0 <= float(a.min()) and float(a.max()) <= 255


def test_synthesize_reduces_texture_loss(enc):
    xt = synthetic.stripes(64, 64)
    cfg = mdan.MDANConfig(iterations=200, patch_k=8, stride=2, d_channels=32, seed=1)
    state = mdan.init_state(enc, xt, None, cfg)
    x0 = state.x.detach().clone()
    for _ in range(cfg.iterations):
        mdan.step(enc, state, xt)
    judge = mdan.MDANConfig(**{**cfg.__dict__, "weights": MDANWeights(0, 0)})
    e0, _, _ = mdan.energy_and_gradient(enc, state.d, x0, xt, None, judge)
    e1, _, _ = mdan.energy_and_gradient(enc, state.d, state.x, xt, None, judge)
    assert float(e1) < float(e0)


def test_nan_guard(enc, texture):
    cfg = mdan.MDANConfig(**FAST)
    state = mdan.init_state(enc, texture, None, cfg)
    with torch.no_grad():
        state.x[0, 0, 0] = float("nan")
    with pytest.raises(FloatingPointError, match="texture term"):
        mdan.step(enc, state, texture)


def test_updates_stay_finite(enc, texture, photo):
    state = mdan.run(enc, texture, photo, mdan.MDANConfig(iterations=10, **FAST))
    assert torch.isfinite(state.x).all()
    assert all(torch.isfinite(p).all() for p in state.d.parameters())


def test_transfer_batch(enc, texture):
    cfg = mdan.MDANConfig(iterations=3, **FAST)
    one = synthetic.blobs(32, 32, seed=5)
    a = mdan.transfer_batch(enc, [one], texture, cfg, reuse_d=True)
    b = mdan.transfer_batch(enc, [one], texture, cfg, reuse_d=False)
    assert torch.equal(a[0], b[0])
    with pytest.raises(ValueError):
        mdan.transfer_batch(enc, [], texture, cfg)


def test_transfer_batch_reuse_lowers_initial_loss(enc, texture):
    photos = [synthetic.blobs(32, 32, seed=s) for s in (6, 7)]
    cfg = mdan.MDANConfig(iterations=30, **FAST)
    _, states = mdan.transfer_batch(enc, photos, texture, cfg, reuse_d=True, return_states=True)
    reused = float(mdan.discriminator_loss(enc, states[0].d, photos[1], texture, cfg).detach())
    fresh_d = mdan.init_state(enc, texture, photos[1], cfg).d
    fresh = float(mdan.discriminator_loss(enc, fresh_d, photos[1], texture, cfg).detach())
    assert reused <= fresh
