import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from crackrestore.errors import ConfigError, DimensionError, NumericError
from crackrestore.losses import (
    LossWeights,
    VGGStyleExtractor,
    adversarial_losses,
    gaussian_window,
    gms_map,
    gram_matrix,
    mae_loss,
    msgms_loss,
    ssim_loss,
    ssim_map,
    style_loss,
    total_generator_loss,
)

import oracles


def _pair(seed, shape=(1, 3, 16, 16)):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g, dtype=torch.float64), torch.rand(shape, generator=g, dtype=torch.float64)


def test_gaussian_window_normalized():
    w = gaussian_window(dtype=torch.float64)
    assert w.shape == (11, 11)
    assert float(w.sum()) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(w.numpy(), oracles.gaussian_weights(), rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_oracle(seed):
    a, b = _pair(seed)
    np.testing.assert_allclose(ssim_map(a, b)[0].numpy(), oracles.ssim_map(a[0].numpy(), b[0].numpy()), rtol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_msgms_matches_oracle(seed):
    a, b = _pair(seed)
    np.testing.assert_allclose(gms_map(a, b)[0, 0].numpy(), oracles.gms_map(a[0].numpy(), b[0].numpy()), rtol=1e-9)
    assert float(msgms_loss(a, b)) == pytest.approx(oracles.msgms_loss(a[0].numpy(), b[0].numpy()), rel=1e-9)


def test_ssim_is_symmetric_and_bounded():
    a, b = _pair(7)
    s = ssim_map(a, b)
    assert torch.allclose(s, ssim_map(b, a))
    assert s.max() <= 1 + 1e-12 and s.min() >= -1 - 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_identity_losses_vanish(seed):
    x, _ = _pair(seed)
    assert float(mae_loss(x, x)) == 0
    assert float(ssim_loss(x, x)) < 1e-8
    assert float(msgms_loss(x, x)) < 1e-8


def test_msgms_detects_structure_not_flat_shift():
    a, _ = _pair(1)
    assert float(msgms_loss(a, a + 0.1)) < 1e-8
    assert float(msgms_loss(a, a.flip(-1))) > 0.01


def test_shape_checks():
    a = torch.zeros(1, 3, 16, 16)
    with pytest.raises(DimensionError):
        mae_loss(a, torch.zeros(1, 3, 8, 8))
    with pytest.raises(DimensionError):
        ssim_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 8))
    with pytest.raises(DimensionError):
        msgms_loss(torch.zeros(1, 3, 12, 12), torch.zeros(1, 3, 12, 12))


def _grad_check(fn, seed, n_coords=12, eps=1e-6):
    a, b = _pair(seed)
    a.requires_grad_(True)
    fn(a, b).backward()
    analytic = a.grad.clone()
    rng = np.random.default_rng(seed)
    flat = a.detach().clone().reshape(-1)
    errs = []
    for idx in rng.choice(flat.numel(), n_coords, replace=False):
        plus, minus = flat.clone(), flat.clone()
        plus[idx] += eps
        minus[idx] -= eps
        num = (float(fn(plus.view_as(a), b)) - float(fn(minus.view_as(a), b))) / (2 * eps)
        ana = float(analytic.reshape(-1)[idx])
        errs.append(abs(num - ana) / max(abs(num), abs(ana), 1e-12))
    return max(errs)


@pytest.mark.parametrize("fn", [ssim_loss, msgms_loss], ids=["ssim", "msgms"])
def test_gradients_match_finite_differences(fn):
    assert _grad_check(fn, 0) < 1e-3


def test_gram_matches_loops():
    f = torch.randn(1, 4, 5, 6, dtype=torch.float64)
    np.testing.assert_allclose(gram_matrix(f)[0].numpy(), oracles.gram(f[0].numpy()), rtol=1e-12)


def test_style_loss_with_toy_extractor():
    torch.manual_seed(0)
    conv1 = torch.nn.Conv2d(3, 4, 3, padding=1).double()
    conv2 = torch.nn.Conv2d(4, 5, 3, stride=2, padding=1).double()

    def extractor(x):
        h1 = torch.relu(conv1(x))
        return [h1, torch.relu(conv2(h1))]

    a, b = _pair(3, (1, 3, 8, 8))
    with torch.no_grad():
        got = float(style_loss(a, b, extractor))
        fa = [f[0].numpy() for f in extractor(a)]
        fb = [f[0].numpy() for f in extractor(b)]
        same = float(style_loss(a, a, extractor))
    assert got == pytest.approx(oracles.style_loss(fa, fb), rel=1e-9)
    assert same == 0


def test_vgg_extractor_requires_weights(tmp_path):
    with pytest.raises(ConfigError, match="no-style"):
        VGGStyleExtractor(None)
    with pytest.raises(ConfigError):
        VGGStyleExtractor(tmp_path / "missing.pth")


def test_adversarial_at_zero_logits():
    g, d = adversarial_losses(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 4))
    assert float(g) == pytest.approx(math.log(2))
    assert float(d) == pytest.approx(2 * math.log(2))


def test_adversarial_matches_oracle():
    real, fake = torch.randn(2, 1, 5, 5, dtype=torch.float64) * 3, torch.randn(2, 1, 5, 5, dtype=torch.float64) * 3
    g, d = adversarial_losses(real, fake)
    og, od = oracles.adversarial(real.numpy(), fake.numpy())
    assert float(g) == pytest.approx(og, rel=1e-12)
    assert float(d) == pytest.approx(od, rel=1e-12)


def test_adversarial_is_stable_for_large_logits():
    g, d = adversarial_losses(torch.full((1, 1, 2, 2), 200.0), torch.full((1, 1, 2, 2), -200.0))
    assert math.isfinite(float(g)) and math.isfinite(float(d))
    assert float(g) == pytest.approx(200.0)


def test_total_loss_combination():
    w = LossWeights()
    out = total_generator_loss({"mae": 0.1, "ssim": 0.2, "msgms": 0.3, "style": 0.01, "adversarial_g": 0.7}, w)
    assert out.restoration == pytest.approx(0.1 + 0.2 + 0.3 + 10 * 0.01)
    assert out.total == pytest.approx(100 * 0.7 + 0.7)


def test_zero_weight_terms_are_skipped_exactly():
    w = LossWeights(lambda_style=0.0)
    with_style = total_generator_loss({"mae": 0.1, "ssim": 0.2, "msgms": 0.3, "style": 123.0}, w)
    without = total_generator_loss({"mae": 0.1, "ssim": 0.2, "msgms": 0.3}, w)
    assert with_style.total == without.total


def test_non_finite_component_raises():
    with pytest.raises(NumericError) as info:
        total_generator_loss({"mae": float("nan")}, LossWeights())
    assert info.value.component == "mae"


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(lambda_mae=-1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_nonnegative_and_gms_bounded(seed):
    a, b = _pair(seed)
    g = gms_map(a, b)
    assert g.min() > 0 and g.max() <= 1 + 1e-12
    assert float(mae_loss(a, b)) >= 0
    assert float(ssim_loss(a, b)) >= 0
    assert float(msgms_loss(a, b)) >= 0


def test_mae_gradient_matches_finite_differences():
    assert _grad_check(mae_loss, 3) < 1e-3


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=5, max_size=5),
       st.lists(st.floats(0, 100), min_size=6, max_size=6))
def test_breakdown_arithmetic(values, lams):
    comps = dict(zip(("mae", "ssim", "msgms", "style", "adversarial_g"), values))
    w = LossWeights(*lams)
    out = total_generator_loss(comps, w)
    expected_res = (w.lambda_mae * comps["mae"] + w.lambda_ssim * comps["ssim"]
                    + w.lambda_gms * comps["msgms"] + w.lambda_style * comps["style"])
    assert out.restoration == pytest.approx(expected_res, rel=1e-12, abs=1e-12)
    assert out.total == pytest.approx(w.lambda_res * expected_res + w.lambda_adv * comps["adversarial_g"],
                                      rel=1e-12, abs=1e-12)
