"""Resampling, blurring, fusion convs, matting band, and cut losses."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyfit.tailoring import (
    ConvSpec,
    apply_cut,
    bilinear_downsample,
    bilinear_upsample_x2,
    boundary_mask,
    default_boundary_radius,
    fdf,
    fpf,
    gaussian_blur,
    gaussian_blur_then_down16,
    kl_divergence,
    loss_cloth,
    loss_cm,
    loss_cut,
    loss_edge,
    ssim_mean,
)
from oracles import (
    boundary_mask_naive,
    conv2d_naive,
    downsample_naive,
    gaussian_blur_naive,
    kl_naive,
    ssim_mean_naive,
    upsample2_naive,
)


def disk(h, w, cy, cx, r):
    yy, xx = np.mgrid[:h, :w]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float64)


# ---------------------------------------------------------------------------
# resampling


def test_downsample_constant_exact():
    img = np.full((32, 32), 0.7)
    for f in (2, 4, 8, 16):
        out = bilinear_downsample(img, f)
        assert out.shape == (32 // f, 32 // f)
        assert np.abs(out - 0.7).max() < 1e-12


def test_downsample_ramp_exact():
    # a linear ramp resamples to the ramp evaluated at the new sample points
    h = w = 16
    img = np.arange(w, dtype=np.float64)[None, :].repeat(h, axis=0)
    out = bilinear_downsample(img, 2)
    expected_cols = (np.arange(8) + 0.5) * 2 - 0.5
    assert np.abs(out - expected_cols[None, :]).max() < 1e-12


def test_downsample_matches_naive_oracle():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (8, 8))
    assert np.abs(bilinear_downsample(img, 2) - downsample_naive(img, 2)).max() < 1e-12


def test_downsample_multichannel_matches_oracle():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (16, 8, 3))
    got = bilinear_downsample(img, 4)
    want = np.stack([downsample_naive(img[:, :, c], 4) for c in range(3)], axis=2)
    assert np.abs(got - want).max() < 1e-12


def test_downsample_validation():
    with pytest.raises(ValueError):
        bilinear_downsample(np.zeros((8, 8)), 3)
    with pytest.raises(ValueError):
        bilinear_downsample(np.zeros((9, 8)), 2)


def test_upsample_one_pixel_replicates():
    out = bilinear_upsample_x2(np.array([[0.4]]))
    assert np.array_equal(out, np.full((2, 2), 0.4))


def test_upsample_matches_naive_oracle():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, (5, 7))
    assert np.abs(bilinear_upsample_x2(img) - upsample2_naive(img)).max() < 1e-12


def test_upsample_constant_exact():
    out = bilinear_upsample_x2(np.full((4, 4), 0.3))
    assert np.abs(out - 0.3).max() < 1e-12


# ---------------------------------------------------------------------------
# gaussian blur


def test_blur_preserves_constant():
    img = np.ones((24, 24))
    assert np.abs(gaussian_blur(img, sigma=8.0) - 1.0).max() < 1e-9


def test_blur_matches_dense_oracle_small():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, (12, 10))
    got = gaussian_blur(img, sigma=1.5)
    want = gaussian_blur_naive(img, sigma=1.5)
    assert np.abs(got - want).max() < 1e-9


def test_blur_disk_matches_oracle():
    img = disk(40, 40, 20, 20, 9)
    got = gaussian_blur(img, sigma=2.0)
    want = gaussian_blur_naive(img, sigma=2.0)
    assert np.abs(got - want).max() < 1e-6


def test_blur_then_down16_shape_and_range():
    img = disk(64, 64, 32, 30, 20)
    out = gaussian_blur_then_down16(img)
    assert out.shape == (4, 4)
    assert out.min() >= 0.0 and out.max() <= 1.0
    with pytest.raises(ValueError):
        gaussian_blur_then_down16(np.zeros((60, 64)))


# ---------------------------------------------------------------------------
# boundary band


def test_boundary_square_perimeter_ring():
    a = np.zeros((10, 10))
    a[3:7, 3:7] = 1.0
    band = boundary_mask(a, 1)
    expected = np.zeros((10, 10))
    expected[2:8, 2:8] = 1.0  # dilation of the square
    expected[4:6, 4:6] = 0.0  # erosion survives in the middle
    assert np.array_equal(band, expected)


def test_boundary_matches_naive_oracle():
    rng = np.random.default_rng(4)
    a = (rng.uniform(0, 1, (14, 14)) > 0.6).astype(np.float64)
    for r in (1, 2, 3):
        assert np.array_equal(boundary_mask(a, r), boundary_mask_naive(a, r))


def test_boundary_band_monotone_in_radius():
    a = disk(24, 24, 12, 12, 6)
    sums = [boundary_mask(a, r).sum() for r in (1, 2, 3, 4)]
    assert all(x <= y for x, y in zip(sums, sums[1:]))


def test_boundary_radius_larger_than_image():
    a = np.zeros((10, 10))
    a[4:6, 4:6] = 1.0
    band = boundary_mask(a, 50)
    # dilation floods everything; erosion dies (border counts as background)
    assert np.array_equal(band, np.ones((10, 10)))


def test_boundary_validation():
    with pytest.raises(ValueError):
        boundary_mask(np.zeros((8, 8)), 0)
    with pytest.raises(ValueError):
        boundary_mask(np.zeros((8, 8, 2)), 1)


def test_default_boundary_radius_scales():
    assert default_boundary_radius(512) == 5
    assert default_boundary_radius(1024) == 10
    assert default_boundary_radius(64) == 1
    assert default_boundary_radius(8) == 1  # clamped up to 1


# ---------------------------------------------------------------------------
# fusion convolutions


def conv_spec(rng, k, cin, cout):
    return ConvSpec(kernel=rng.normal(size=(k, k, cin, cout)), bias=rng.normal(size=cout))


def test_fpf_zero_weights_zero_output():
    spec = ConvSpec(kernel=np.zeros((3, 3, 3, 2)), bias=np.zeros(2))
    out = fpf(np.ones((8, 8, 1)), np.ones((8, 8)), np.ones((8, 8, 1)), spec)
    assert np.array_equal(out, np.zeros((8, 8, 2)))


def test_fdf_delta_kernel_selects_channel():
    # identity on channel 1 of a 2-channel concat (one channel per input)
    kernel = np.zeros((1, 1, 2, 1))
    kernel[0, 0, 1, 0] = 1.0
    spec = ConvSpec(kernel=kernel, bias=np.zeros(1))
    edge = np.random.default_rng(5).uniform(0, 1, (8, 8))
    up = np.random.default_rng(6).uniform(0, 1, (8, 8))
    out = fdf(edge, up, spec)
    assert np.abs(out[:, :, 0] - up).max() < 1e-12


def test_fpf_matches_naive_conv():
    rng = np.random.default_rng(7)
    spec = conv_spec(rng, 3, 4, 3)
    prev = rng.uniform(0, 1, (16, 16, 2))
    img = rng.uniform(0, 1, (16, 16))
    enc = rng.uniform(0, 1, (16, 16, 1))
    got = fpf(prev, img, enc, spec)
    x = np.concatenate([prev, img[:, :, None], enc], axis=2)
    want = conv2d_naive(x, spec.kernel, spec.bias, pad_mode="reflect")
    assert np.abs(got - want).max() < 1e-6


def test_fdf_matches_naive_conv():
    rng = np.random.default_rng(8)
    spec = conv_spec(rng, 1, 3, 2)
    edge = rng.uniform(0, 1, (16, 16, 2))
    up = rng.uniform(0, 1, (16, 16, 1))
    got = fdf(edge, up, spec)
    x = np.concatenate([edge, up], axis=2)
    want = conv2d_naive(x, spec.kernel, spec.bias, pad_mode=None)
    assert np.abs(got - want).max() < 1e-6


def test_fusion_kernel_size_enforced():
    rng = np.random.default_rng(9)
    with pytest.raises(ValueError):
        fpf(np.ones((8, 8, 1)), np.ones((8, 8)), np.ones((8, 8, 1)), conv_spec(rng, 1, 3, 1))
    with pytest.raises(ValueError):
        fdf(np.ones((8, 8, 1)), np.ones((8, 8)), conv_spec(rng, 3, 2, 1))


def test_fusion_channel_mismatch_rejected():
    rng = np.random.default_rng(10)
    spec = conv_spec(rng, 3, 5, 1)  # expects 5 input channels, concat gives 3
    with pytest.raises(ValueError):
        fpf(np.ones((8, 8, 1)), np.ones((8, 8)), np.ones((8, 8, 1)), spec)


def test_fusion_size_mismatch_rejected():
    rng = np.random.default_rng(11)
    spec = conv_spec(rng, 3, 3, 1)
    with pytest.raises(ValueError):
        fpf(np.ones((8, 8, 1)), np.ones((9, 8)), np.ones((8, 8, 1)), spec)


def test_conv_output_nonnegative():
    rng = np.random.default_rng(12)
    spec = conv_spec(rng, 3, 3, 4)
    out = fpf(
        rng.uniform(-1, 1, (12, 12, 1)),
        rng.uniform(-1, 1, (12, 12)),
        rng.uniform(-1, 1, (12, 12, 1)),
        spec,
    )
    assert out.min() >= 0.0


# ---------------------------------------------------------------------------
# apply_cut


def test_apply_cut_identity_matte():
    rng = np.random.default_rng(13)
    img = rng.uniform(0, 1, (8, 8, 3))
    assert np.array_equal(apply_cut(np.ones((8, 8)), img), img)


def test_apply_cut_zero_matte_blacks_out():
    img = np.random.default_rng(14).uniform(0, 1, (8, 8, 3))
    assert np.array_equal(apply_cut(np.zeros((8, 8)), img), np.zeros((8, 8, 3)))


def test_apply_cut_checkerboard():
    img = np.ones((4, 4))
    matte = np.indices((4, 4)).sum(axis=0) % 2.0
    out = apply_cut(matte, img)
    assert np.array_equal(out, matte)


def test_apply_cut_shape_checked():
    with pytest.raises(ValueError):
        apply_cut(np.ones((4, 5)), np.ones((4, 4, 3)))


# ---------------------------------------------------------------------------
# losses


def test_loss_cm_identical_is_zero():
    a = disk(32, 32, 16, 16, 9)
    target = gaussian_blur_then_down16(a)
    assert loss_cm(target, a) == 0.0


def test_loss_cm_unit_offset_is_half():
    a = disk(32, 32, 16, 16, 9)
    target = gaussian_blur_then_down16(a)
    assert abs(loss_cm(target + 1.0, a) - 0.5) < 1e-12


def test_loss_edge_identical_is_zero():
    a = disk(24, 24, 12, 12, 7)
    assert loss_edge(a, a, radius=2) == 0.0


def test_loss_edge_empty_band_is_zero():
    a = np.zeros((16, 16))  # no foreground: dilation and erosion both empty
    h = np.full((16, 16), 0.25)
    assert loss_edge(h, a, radius=1) == 0.0


def test_loss_edge_counts_only_band_pixels():
    a = np.zeros((10, 10))
    a[3:7, 3:7] = 1.0
    h = a.copy()
    h[0, 0] = 1.0  # far from the band: invisible to the edge loss
    assert loss_edge(h, a, radius=1) == 0.0
    h2 = a.copy()
    h2[3, 3] = 0.0  # inside the band
    band = boundary_mask(a, 1)
    assert abs(loss_edge(h2, a, radius=1) - 1.0 / band.sum()) < 1e-12


def test_ssim_identical_is_one():
    a = np.random.default_rng(15).uniform(0, 1, (16, 16))
    assert abs(ssim_mean(a, a) - 1.0) < 1e-12


def test_ssim_matches_naive_oracle():
    rng = np.random.default_rng(16)
    a = rng.uniform(0, 1, (16, 16))
    b = np.clip(a + rng.normal(0, 0.1, (16, 16)), 0, 1)
    assert abs(ssim_mean(a, b) - ssim_mean_naive(a, b)) < 1e-9


def test_ssim_window_shrinks_for_small_images():
    a = np.random.default_rng(17).uniform(0, 1, (6, 6))
    assert abs(ssim_mean(a, a, window=11) - 1.0) < 1e-12


def test_kl_matches_naive_and_zero_on_identical():
    rng = np.random.default_rng(18)
    p = rng.uniform(0, 1, (12, 12))
    q = rng.uniform(0, 1, (12, 12))
    assert abs(kl_divergence(p, q) - kl_naive(p, q)) < 1e-12
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence(p, q) >= 0.0


def test_loss_cut_identical_near_zero():
    a = disk(24, 24, 12, 12, 7)
    assert abs(loss_cut(a, a)) < 1e-9


def test_loss_cut_uniform_pair_closed_form():
    # two constant mattes: KL of equal normalized maps is 0, L1 is the gap,
    # and the SSIM of two constants has the closed luminance-only form.
    a = np.full((16, 16), 0.6)
    c = np.full((16, 16), 0.4)
    l1 = 0.2
    c1 = 0.01**2
    c2 = 0.03**2
    ssim = ((2 * 0.4 * 0.6 + c1) * c2) / ((0.4**2 + 0.6**2 + c1) * c2)
    expected = l1 + (1.0 - ssim) + 0.0
    assert abs(loss_cut(c, a) - expected) < 1e-9


def test_loss_cloth_combination():
    a = disk(32, 32, 16, 16, 9)
    target = gaussian_blur_then_down16(a)
    # edge and cut terms vanish on identical mattes; the coarse term is 0.5
    # for a unit offset and carries weight 2
    got = loss_cloth(target + 1.0, a, a, a)
    assert abs(got - 2.0 * 0.5) < 1e-9


def test_loss_cloth_nonnegative_random():
    rng = np.random.default_rng(19)
    a = disk(32, 32, 16, 15, 8)
    c_m = rng.uniform(0, 1, (2, 2))
    h_r = rng.uniform(0, 1, (32, 32))
    c_r = rng.uniform(0.01, 1, (32, 32))
    assert loss_cloth(c_m, h_r, c_r, a) >= 0.0


@given(delta=st.floats(min_value=0.0, max_value=0.5, allow_nan=False))
@settings(max_examples=20, deadline=None)
def test_loss_edge_monotone_in_error(delta):
    a = disk(20, 20, 10, 10, 6)
    h = np.clip(a - delta * boundary_mask(a, 1), 0, 1)
    small = loss_edge(np.clip(a - 0.5 * delta * boundary_mask(a, 1), 0, 1), a, radius=1)
    big = loss_edge(h, a, radius=1)
    assert big >= small - 1e-12
