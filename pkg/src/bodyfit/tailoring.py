"""Deterministic image mathematics of the cut-generation pipeline.

Images are float64 arrays, H×W or H×W×C, channels last. Mattes live in
[0,1]; feature maps are unbounded. Resampling uses the align-corners-false
grid (source coordinate = (i + 0.5) * scale - 0.5, edges clamped) in both
directions, so constants are preserved exactly and affine ramps to 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class ConvSpec:
    """Weights of one fused convolution: kernel (k, k, Cin, Cout) + bias."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 4 or self.kernel.shape[0] != self.kernel.shape[1]:
            raise ValueError("kernel must be (k, k, Cin, Cout), got %r" % (self.kernel.shape,))
        if self.kernel.shape[0] not in (1, 3):
            raise ValueError("kernel size must be 1 or 3, got %d" % self.kernel.shape[0])
        if self.bias.shape != (self.kernel.shape[3],):
            raise ValueError("bias must be (Cout,), got %r" % (self.bias.shape,))
        if not (np.all(np.isfinite(self.kernel)) and np.all(np.isfinite(self.bias))):
            raise ValueError("conv weights must be finite")

    @property
    def size(self):
        return self.kernel.shape[0]

    @property
    def cin(self):
        return self.kernel.shape[2]


def _as_hwc(img):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        return a[:, :, None], True
    if a.ndim == 3:
        return a, False
    raise ValueError("image must be H×W or H×W×C, got %r" % (a.shape,))


def _axis_weights(n_out, scale, n_src):
    """Align-corners-false sample positions along one axis, edge-clamped."""
    x = (np.arange(n_out) + 0.5) * scale - 0.5
    x0 = np.floor(x).astype(np.int64)
    frac = x - x0
    i0 = np.clip(x0, 0, n_src - 1)
    i1 = np.clip(x0 + 1, 0, n_src - 1)
    return i0, i1, frac


def _resample(img, out_h, out_w, scale_y, scale_x):
    a, squeeze = _as_hwc(img)
    h, w = a.shape[:2]
    r0, r1, fy = _axis_weights(out_h, scale_y, h)
    c0, c1, fx = _axis_weights(out_w, scale_x, w)
    top = a[r0][:, c0] * (1 - fx)[None, :, None] + a[r0][:, c1] * fx[None, :, None]
    bot = a[r1][:, c0] * (1 - fx)[None, :, None] + a[r1][:, c1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return out[:, :, 0] if squeeze else out


def bilinear_downsample(img, factor):
    """Downsample by an integer factor in {2, 4, 8, 16}; dims must divide."""
    if factor not in (2, 4, 8, 16):
        raise ValueError("factor must be one of 2, 4, 8, 16, got %r" % factor)
    a, squeeze = _as_hwc(img)
    h, w = a.shape[:2]
    if h % factor or w % factor:
        raise ValueError("dims %r not divisible by %d" % ((h, w), factor))
    out = _resample(a, h // factor, w // factor, float(factor), float(factor))
    return out[:, :, 0] if squeeze else out


def bilinear_upsample_x2(img):
    """Upsample by 2 with edge clamping; a 1×1 image replicates to 2×2."""
    a, squeeze = _as_hwc(img)
    h, w = a.shape[:2]
    out = _resample(a, 2 * h, 2 * w, 0.5, 0.5)
    return out[:, :, 0] if squeeze else out


def _gaussian_kernel(sigma, radius):
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(k**2) / (2.0 * sigma**2))
    return g / g.sum()


def gaussian_blur(img, sigma=8.0, radius=None):
    """Separable Gaussian with symmetric (edge-inclusive) borders."""
    if radius is None:
        radius = int(round(3 * sigma))
    a, squeeze = _as_hwc(img)
    g = _gaussian_kernel(sigma, radius)
    pad = np.pad(a, ((radius, radius), (0, 0), (0, 0)), mode="symmetric")
    rows = np.zeros_like(a)
    for i, gk in enumerate(g):
        rows += gk * pad[i : i + a.shape[0]]
    pad = np.pad(rows, ((0, 0), (radius, radius), (0, 0)), mode="symmetric")
    out = np.zeros_like(a)
    for i, gk in enumerate(g):
        out += gk * pad[:, i : i + a.shape[1]]
    return out[:, :, 0] if squeeze else out


def gaussian_blur_then_down16(alpha_g):
    """Anti-aliased 16× reduction of a matte: blur (sigma 8) then resample."""
    a = np.asarray(alpha_g, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("matte must be single-channel H×W")
    if a.shape[0] % 16 or a.shape[1] % 16:
        raise ValueError("dims %r not divisible by 16" % (a.shape,))
    return bilinear_downsample(gaussian_blur(a, sigma=8.0), 16)


def default_boundary_radius(height):
    """5 px at 512-height images, scaled proportionally, at least 1."""
    return max(1, int(round(5.0 * height / 512.0)))


def boundary_mask(alpha_g, radius):
    """Transition band of a matte: dilate(bin) AND NOT erode(bin).

    The matte is binarized at 0.5; the structuring element is a square of
    side 2*radius + 1; outside the image counts as background.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1, got %r" % radius)
    a = np.asarray(alpha_g, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("matte must be single-channel H×W")
    binary = (a > 0.5).astype(np.float64)
    size = 2 * int(radius) + 1
    dil = ndimage.maximum_filter(binary, size=size, mode="constant", cval=0.0)
    ero = ndimage.minimum_filter(binary, size=size, mode="constant", cval=0.0)
    return ((dil > 0.5) & ~(ero > 0.5)).astype(np.float64)


def _conv2d(x, spec):
    k = spec.size
    if x.shape[2] != spec.cin:
        raise ValueError("input has %d channels, conv expects %d" % (x.shape[2], spec.cin))
    if k == 1:
        out = np.einsum("hwi,io->hwo", x, spec.kernel[0, 0])
    else:
        if x.shape[0] < 2 or x.shape[1] < 2:
            raise ValueError("3x3 convolution needs at least 2x2 input for reflect padding")
        pad = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="reflect")
        h, w = x.shape[:2]
        out = np.zeros((h, w, spec.kernel.shape[3]))
        for dy in range(3):
            for dx in range(3):
                out += np.einsum("hwi,io->hwo", pad[dy : dy + h, dx : dx + w], spec.kernel[dy, dx])
    return np.maximum(out + spec.bias, 0.0)


def _concat(planes):
    parts = []
    base = None
    for p in planes:
        a, _ = _as_hwc(p)
        if base is None:
            base = a.shape[:2]
        elif a.shape[:2] != base:
            raise ValueError("fusion inputs disagree on size: %r vs %r" % (a.shape[:2], base))
        parts.append(a)
    return np.concatenate(parts, axis=2)


def fpf(prev_feat, image_at_scale, enc_feat, conv):
    """Pyramid feature fusion: concat three inputs, 3×3 conv, ReLU."""
    if conv.size != 3:
        raise ValueError("pyramid fusion uses a 3x3 kernel, got %d" % conv.size)
    return _conv2d(_concat([prev_feat, image_at_scale, enc_feat]), conv)


def fdf(edge_feat, upsampled_cut_feat, conv):
    """Decoder feature fusion: concat two inputs, 1×1 conv, ReLU."""
    if conv.size != 1:
        raise ValueError("decoder fusion uses a 1x1 kernel, got %d" % conv.size)
    return _conv2d(_concat([edge_feat, upsampled_cut_feat]), conv)


def apply_cut(cut_matte, image):
    """B = C_r ⊙ I, broadcasting the matte over channels."""
    c = np.asarray(cut_matte, dtype=np.float64)
    i, squeeze = _as_hwc(image)
    if c.ndim != 2 or c.shape != i.shape[:2]:
        raise ValueError("matte %r does not match image %r" % (c.shape, i.shape[:2]))
    out = i * c[:, :, None]
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# Losses


def loss_cm(c_m, alpha_g):
    """Half mean squared error against the blurred, 16×-reduced matte."""
    target = gaussian_blur_then_down16(alpha_g)
    c = np.asarray(c_m, dtype=np.float64)
    if c.shape != target.shape:
        raise ValueError("coarse matte %r vs target %r" % (c.shape, target.shape))
    return float(0.5 * np.mean((c - target) ** 2))


def loss_edge(h_r, alpha_g, radius=None):
    """Mean absolute matte error restricted to the boundary band."""
    a = np.asarray(alpha_g, dtype=np.float64)
    h = np.asarray(h_r, dtype=np.float64)
    if h.shape != a.shape:
        raise ValueError("shapes differ: %r vs %r" % (h.shape, a.shape))
    if radius is None:
        radius = default_boundary_radius(a.shape[0])
    band = boundary_mask(a, radius)
    return float((band * np.abs(h - a)).sum() / max(1.0, band.sum()))


def _box_sums(a, win):
    """Sum of each win×win window (valid positions) via an integral image."""
    s = np.cumsum(np.cumsum(a, axis=0), axis=1)
    s = np.pad(s, ((1, 0), (1, 0)))
    return s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]


def ssim_mean(a, b, window=11, k1=0.01, k2=0.03, data_range=1.0):
    """Mean structural similarity over valid (fully inside) uniform windows.

    The window shrinks to the largest odd size that fits small images.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError("ssim expects two H×W maps of equal shape")
    win = min(window, x.shape[0], x.shape[1])
    if win % 2 == 0:
        win -= 1
    n = win * win
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x = _box_sums(x, win) / n
    mu_y = _box_sums(y, win) / n
    var_x = _box_sums(x * x, win) / n - mu_x**2
    var_y = _box_sums(y * y, win) / n - mu_y**2
    cov = _box_sums(x * y, win) / n - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def kl_divergence(p_img, q_img, eps=1e-6):
    """KL(norm(p) ‖ norm(q)) with norm(x) = (x + eps) / sum(x + eps)."""
    p = np.asarray(p_img, dtype=np.float64) + eps
    q = np.asarray(q_img, dtype=np.float64) + eps
    if p.shape != q.shape:
        raise ValueError("shapes differ: %r vs %r" % (p.shape, q.shape))
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def loss_cut(c_r, alpha_g):
    """Mean L1 + (1 − SSIM) + KL(norm(α_g) ‖ norm(C_r))."""
    c = np.asarray(c_r, dtype=np.float64)
    a = np.asarray(alpha_g, dtype=np.float64)
    if c.shape != a.shape:
        raise ValueError("shapes differ: %r vs %r" % (c.shape, a.shape))
    l1 = float(np.mean(np.abs(c - a)))
    sl = 1.0 - ssim_mean(c, a)
    kl = kl_divergence(a, c)
    return l1 + sl + kl


def loss_cloth(c_m, h_r, c_r, alpha_g, radius=None):
    """4·edge + 4·cut + 2·coarse, the full cut-supervision objective."""
    return (
        4.0 * loss_edge(h_r, alpha_g, radius)
        + 4.0 * loss_cut(c_r, alpha_g)
        + 2.0 * loss_cm(c_m, alpha_g)
    )
