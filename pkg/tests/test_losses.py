import itertools

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mtx.encoder import FeatureMap
from mtx.losses import (MDANWeights, content_loss, discriminator_hinge_loss, hinge_texture_loss,
                        smoothness_prior, total_energy)
from mtx.mdan import MDANConfig, new_discriminator

floats = st.floats(-50, 50, allow_nan=False)
# squared differences of subnormals underflow to zero; keep values on a dyadic grid
grid = st.integers(-400, 400).map(lambda v: v / 8)


@pytest.mark.parametrize("s,expected", [([1, 2, 5], 0.0), ([-1], 2.0), ([0.5, -0.5, 1.5], 2 / 3)])
def test_hinge_texture_examples(s, expected):
    assert float(hinge_texture_loss(s)) == pytest.approx(expected, abs=1e-6)


def test_hinge_texture_empty():
    with pytest.raises(ValueError):
        hinge_texture_loss([])


@pytest.mark.parametrize("real,fake,expected", [([1], [-1], 0.0), ([0], [0], 2.0), ([2, 0], [-2], 0.5)])
def test_discriminator_hinge_examples(real, fake, expected):
    assert float(discriminator_hinge_loss(real, fake)) == pytest.approx(expected, abs=1e-6)


def test_discriminator_hinge_empty():
    with pytest.raises(ValueError):
        discriminator_hinge_loss([1.0], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(floats, min_size=1, max_size=20), st.floats(0, 1), st.lists(floats, min_size=1, max_size=20))
def test_hinge_nonnegative_convex_lipschitz(s, t, other):
    a = torch.tensor(s, dtype=torch.float64)
    b = torch.tensor((other * len(s))[: len(s)], dtype=torch.float64)
    la, lb = hinge_texture_loss(a), hinge_texture_loss(b)
    assert la >= 0
    assert (la == 0) == bool((a >= 1).all())
    assert hinge_texture_loss(t * a + (1 - t) * b) <= t * la + (1 - t) * lb + 1e-9
    # per-coordinate Lipschitz constant 1 (of the sum; the mean divides by N)
    assert abs(la - lb) * len(s) <= (a - b).abs().sum() + 1e-9


def _fm(values, layer="relu3_1"):
    return FeatureMap(layer, torch.tensor(values, dtype=torch.float64).view(1, 1, -1))


def test_content_examples():
    a = torch.randn(4, 3, 3)
    assert float(content_loss(FeatureMap("relu3_1", a), FeatureMap("relu3_1", a))) == 0
    assert float(content_loss(FeatureMap("relu3_1", torch.ones(2, 2, 2)), FeatureMap("relu3_1", torch.zeros(2, 2, 2)))) == 1
    assert float(content_loss(_fm([1, 3]), _fm([0, 1]))) == pytest.approx(2.5)


def test_content_mismatch():
    with pytest.raises(ValueError, match="layer"):
        content_loss(_fm([1.0]), _fm([1.0], "relu5_1"))
    with pytest.raises(ValueError, match="shape"):
        content_loss(_fm([1.0]), _fm([1.0, 2.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(grid, min_size=1, max_size=12), st.lists(grid, min_size=1, max_size=12))
def test_content_symmetric(xs, ys):
    n = min(len(xs), len(ys))
    a, b = _fm(xs[:n]), _fm(ys[:n])
    ab, ba = float(content_loss(a, b)), float(content_loss(b, a))
    assert ab == ba >= 0
    assert (ab == 0) == (xs[:n] == ys[:n])


def test_smoothness_examples():
    assert float(smoothness_prior(torch.full((3, 5, 4), 77.0))) == 0
    assert float(smoothness_prior(torch.tensor([[[0.0, 1.0]]]))) == pytest.approx(0.5)


def test_smoothness_degenerate():
    with pytest.raises(ValueError):
        smoothness_prior(torch.zeros(3, 1, 1))


def test_checkerboard_is_maximal():
    """Enumerate all 2x2 binary (0/255) grey images; the checkerboards score highest."""
    scores = {}
    for bits in itertools.product([0.0, 255.0], repeat=4):
        img = torch.tensor(bits).view(1, 2, 2).expand(3, 2, 2)
        scores[bits] = float(smoothness_prior(img))
    best = max(scores.values())
    winners = {b for b, v in scores.items() if v == best}
    assert winners == {(0.0, 255.0, 255.0, 0.0), (255.0, 0.0, 0.0, 255.0)}


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.floats(-100, 100), st.integers(0, 2**16))
def test_smoothness_invariances(h, w, c, seed):
    img = torch.rand(3, h, w, generator=torch.Generator().manual_seed(seed), dtype=torch.float64) * 255
    v = smoothness_prior(img)
    assert torch.isclose(smoothness_prior(img + c), v, rtol=1e-9)
    assert torch.isclose(smoothness_prior(img.flip(-1)), v, rtol=1e-12)
    assert torch.isclose(smoothness_prior(img.flip(-2)), v, rtol=1e-12)


def test_weights_validation():
    with pytest.raises(ValueError):
        MDANWeights(-1.0, 0.0)
    with pytest.raises(ValueError):
        MDANWeights(1.0, float("nan"))


class ConstantD(torch.nn.Module):
    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, patches):
        return torch.full((patches.shape[0],), self.value, dtype=patches.dtype) + 0 * patches.sum()


def test_energy_zero_when_scores_high(enc, rng):
    x, xt = torch.rand(3, 32, 32, generator=rng) * 255, torch.rand(3, 32, 32, generator=rng) * 255
    e = total_energy(enc, ConstantD(3.0), x, xt, None, MDANWeights(0, 0), patch_k=4)
    assert float(e) == 0


def test_energy_unguided_constant_image_is_texture_term(enc, rng):
    x, xt = torch.full((3, 32, 32), 100.0), torch.rand(3, 32, 32, generator=rng) * 255
    e = total_energy(enc, ConstantD(0.25), x, xt, None, MDANWeights(1.0, 1e-4), patch_k=4)
    assert float(e) == pytest.approx(0.75)


def test_energy_guided_identity_leaves_smoothness(enc, rng):
    xc, xt = torch.rand(3, 32, 32, generator=rng) * 255, torch.rand(3, 32, 32, generator=rng) * 255
    w = MDANWeights(1.0, 1e-4)
    e = total_energy(enc, ConstantD(1.0), xc.clone(), xt, xc, w, content_layer="relu4_1", patch_k=4)
    assert float(e) == pytest.approx(1e-4 * float(smoothness_prior(xc)), rel=1e-6)


def test_energy_gradient_finite_differences(enc64):
    """Exact (unblended) pixel gradient vs. central differences on an 8x8 image, all three terms live."""
    from mtx.mdan import energy_and_gradient

    g = torch.Generator().manual_seed(7)
    xt = torch.rand(3, 16, 16, generator=g, dtype=torch.float64) * 255
    xc = torch.rand(3, 8, 8, generator=g, dtype=torch.float64) * 255
    x = torch.rand(3, 8, 8, generator=g, dtype=torch.float64) * 255
    cfg = MDANConfig(patch_k=1, content_layer="relu4_1", weights=MDANWeights(1e-3, 1e-4))
    d = new_discriminator(cfg, torch.Generator().manual_seed(3), torch.float64)
    _, grad, _ = energy_and_gradient(enc64, d, x, xt, xc, cfg, blend=False)

    def energy(z):
        with torch.no_grad():
            return float(total_energy(enc64, d, z, xt, xc, cfg.weights, cfg.layer, cfg.content_layer, 1, 1))

    for i in torch.randint(0, x.numel(), (20,), generator=g).tolist():
        h = 1e-3
        xp, xm = x.clone().view(-1), x.clone().view(-1)
        xp[i] += h
        xm[i] -= h
        fd = (energy(xp.view_as(x)) - energy(xm.view_as(x))) / (2 * h)
        a = float(grad.view(-1)[i])
        assert abs(a - fd) <= 1e-3 * max(abs(a), abs(fd), 1e-10)
