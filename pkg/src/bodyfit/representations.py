"""Target-side intermediate representations and their providers.

A RepBundle carries the three targets the fitter consumes: 2D joints (as
coordinates with confidences, or as heatmaps), a normalized depth map with a
polarity tag, and a silhouette. Bundles come either from the synthetic
oracle (rendering known parameters) or from files on disk.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fileio
from .body_model import BodyParams
from .rendering import render_body

HEATMAP_CHANNELS = 24
POLARITY_NEAR_ZERO = "near_zero"
_KNOWN_POLARITIES = (POLARITY_NEAR_ZERO, "near_one")


class MissingBundleFile(FileNotFoundError):
    """A required bundle file is absent."""


class DimensionMismatch(ValueError):
    """Maps within one bundle disagree on (H, W)."""


class PolarityTagError(ValueError):
    """Depth polarity tag missing or not a recognized value."""


@dataclass
class RepBundle:
    """Fitting targets sharing one image size.

    joints_xy/joints_conf and heatmaps are alternative carriers of the same
    information; at least one must be present. Depth is in [0,1] with its
    polarity recorded; silhouette is in [0,1].
    """

    depth: np.ndarray
    silhouette: np.ndarray
    joints_xy: Optional[np.ndarray] = None
    joints_conf: Optional[np.ndarray] = None
    heatmaps: Optional[np.ndarray] = None
    depth_polarity: str = POLARITY_NEAR_ZERO

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.silhouette = np.asarray(self.silhouette, dtype=np.float64)
        if self.depth.ndim != 2 or self.silhouette.ndim != 2:
            raise ValueError("depth and silhouette must be 2-D maps")
        if self.depth.shape != self.silhouette.shape:
            raise DimensionMismatch(
                "depth %r vs silhouette %r" % (self.depth.shape, self.silhouette.shape)
            )
        if self.depth_polarity not in _KNOWN_POLARITIES:
            raise PolarityTagError("unknown polarity %r" % self.depth_polarity)
        for name, arr in (("depth", self.depth), ("silhouette", self.silhouette)):
            if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
                raise ValueError("%s values must lie in [0,1]" % name)
        if self.heatmaps is not None:
            self.heatmaps = np.asarray(self.heatmaps, dtype=np.float64)
            if self.heatmaps.ndim != 3 or self.heatmaps.shape[2] != HEATMAP_CHANNELS:
                raise ValueError(
                    "heatmaps must be (H, W, %d), got %r"
                    % (HEATMAP_CHANNELS, self.heatmaps.shape)
                )
            if self.heatmaps.shape[:2] != self.depth.shape:
                raise DimensionMismatch(
                    "heatmaps %r vs depth %r" % (self.heatmaps.shape[:2], self.depth.shape)
                )
        if self.joints_xy is not None:
            self.joints_xy = np.asarray(self.joints_xy, dtype=np.float64)
            if self.joints_xy.ndim != 2 or self.joints_xy.shape[1] != 2:
                raise ValueError("joints_xy must be (J, 2)")
            if self.joints_conf is None:
                self.joints_conf = np.ones(self.joints_xy.shape[0])
            self.joints_conf = np.asarray(self.joints_conf, dtype=np.float64)
            if self.joints_conf.shape != (self.joints_xy.shape[0],):
                raise ValueError("joints_conf must be (J,) matching joints_xy")
            if self.joints_conf.min() < 0 or self.joints_conf.max() > 1:
                raise ValueError("confidences must lie in [0,1]")
        if self.joints_xy is None and self.heatmaps is None:
            raise ValueError("bundle needs joints_xy or heatmaps")

    @property
    def image_size(self):
        return self.depth.shape

    def coordinates(self):
        """Joint coordinates and confidences, decoding heatmaps if needed."""
        if self.joints_xy is not None:
            return self.joints_xy, self.joints_conf
        return decode_heatmaps(self.heatmaps)


def soft_argmax(heatmap, temperature=1.0):
    """Peak coordinate (x, y) and confidence of one activation map.

    The map is min-max normalized and sharpened by exponent 1/temperature;
    the returned point is the weighted mean of pixel indices (x = column,
    y = row). A constant map gives the image center with confidence 0;
    anything else carries confidence 1 (the max of the normalized map).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError("heatmap must be 2-D")
    rows, cols = h.shape
    mn = h.min()
    mx = h.max()
    if mx == mn:
        return (cols - 1) / 2.0, (rows - 1) / 2.0, 0.0
    hn = (h - mn) / (mx - mn)
    w = hn ** (1.0 / temperature)
    z = w.sum()
    ys = w.sum(axis=1) @ np.arange(rows)
    xs = w.sum(axis=0) @ np.arange(cols)
    return xs / z, ys / z, 1.0


def encode_heatmaps(joints_xy, joints_conf, image_size, std=2.0):
    """Gaussian activation maps for pixel-space joints: (H, W, 24).

    Joint j's blob peaks at array index (y - 0.5, x - 0.5) — the index whose
    pixel center is (x, y). Channels beyond J, and channels whose confidence
    is 0, stay identically zero.
    """
    h, w = image_size
    xy = np.asarray(joints_xy, dtype=np.float64)
    conf = np.asarray(joints_conf, dtype=np.float64)
    if xy.shape[0] > HEATMAP_CHANNELS:
        raise ValueError("more joints (%d) than heatmap channels" % xy.shape[0])
    maps = np.zeros((h, w, HEATMAP_CHANNELS))
    rr = np.arange(h)[:, None]
    cc = np.arange(w)[None, :]
    for j in range(xy.shape[0]):
        if conf[j] <= 0:
            continue
        cx = xy[j, 0] - 0.5
        cy = xy[j, 1] - 0.5
        maps[:, :, j] = conf[j] * np.exp(-((cc - cx) ** 2 + (rr - cy) ** 2) / (2.0 * std**2))
    return maps


def decode_heatmaps(heatmaps, temperature=1.0):
    """Per-channel soft_argmax back to pixel coordinates: (24, 2), (24,)."""
    maps = np.asarray(heatmaps, dtype=np.float64)
    n = maps.shape[2]
    xy = np.zeros((n, 2))
    conf = np.zeros(n)
    for j in range(n):
        x, y, c = soft_argmax(maps[:, :, j], temperature)
        xy[j] = (x + 0.5, y + 0.5)
        conf[j] = c
    return xy, conf


def synthesize_targets(model, gt_params, image_size, with_heatmaps=False, heatmap_std=2.0):
    """Render ground-truth parameters into a target bundle.

    Joints are carried as coordinates with confidence 1, or converted to
    Gaussian heatmaps when with_heatmaps is set.
    """
    out, _ = render_body(model, gt_params, image_size)
    if with_heatmaps:
        conf = np.ones(out.joints2d.shape[0])
        return RepBundle(
            depth=out.depth,
            silhouette=out.silhouette,
            heatmaps=encode_heatmaps(out.joints2d, conf, image_size, std=heatmap_std),
        )
    return RepBundle(
        depth=out.depth,
        silhouette=out.silhouette,
        joints_xy=out.joints2d,
        joints_conf=np.ones(out.joints2d.shape[0]),
    )


# ---------------------------------------------------------------------------
# Directory layout: joints.json, depth.pfm, depth.meta.json, mask.pgm,
# optional heatmaps.bin + heatmaps.meta.json. All little-endian.


def _require(path):
    if not os.path.exists(path):
        raise MissingBundleFile(path)
    return path


def save_bundle(bundle, dir_path):
    os.makedirs(dir_path, exist_ok=True)
    fileio.write_pfm(os.path.join(dir_path, "depth.pfm"), bundle.depth)
    with open(os.path.join(dir_path, "depth.meta.json"), "w") as fh:
        json.dump({"polarity": bundle.depth_polarity, "normalized": True}, fh, sort_keys=True)
        fh.write("\n")
    fileio.write_pgm(os.path.join(dir_path, "mask.pgm"), bundle.silhouette)
    if bundle.joints_xy is not None:
        doc = {
            "joints": [[float(x), float(y)] for x, y in bundle.joints_xy],
            "confidence": [float(c) for c in bundle.joints_conf],
        }
        with open(os.path.join(dir_path, "joints.json"), "w") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    if bundle.heatmaps is not None:
        hm = bundle.heatmaps.astype("<f4")
        hm.tofile(os.path.join(dir_path, "heatmaps.bin"))
        meta = {
            "height": hm.shape[0],
            "width": hm.shape[1],
            "channels": hm.shape[2],
            "dtype": "float32",
            "layout": "HWC",
        }
        with open(os.path.join(dir_path, "heatmaps.meta.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True)
            fh.write("\n")


def load_bundle(dir_path):
    depth = fileio.read_pfm(_require(os.path.join(dir_path, "depth.pfm")))
    meta_path = os.path.join(dir_path, "depth.meta.json")
    if not os.path.exists(meta_path):
        raise PolarityTagError("missing depth.meta.json (no polarity tag) in %s" % dir_path)
    with open(meta_path) as fh:
        meta = json.load(fh)
    polarity = meta.get("polarity")
    if polarity is None:
        raise PolarityTagError("depth.meta.json lacks a polarity tag in %s" % dir_path)
    if polarity not in _KNOWN_POLARITIES:
        raise PolarityTagError("unrecognized polarity %r in %s" % (polarity, dir_path))
    silhouette = fileio.read_pgm(_require(os.path.join(dir_path, "mask.pgm")))
    if silhouette.shape != depth.shape:
        raise DimensionMismatch(
            "mask %r vs depth %r in %s" % (silhouette.shape, depth.shape, dir_path)
        )

    joints_xy = joints_conf = heatmaps = None
    joints_path = os.path.join(dir_path, "joints.json")
    if os.path.exists(joints_path):
        with open(joints_path) as fh:
            doc = json.load(fh)
        try:
            joints_xy = np.asarray(doc["joints"], dtype=np.float64)
            joints_conf = np.asarray(
                doc.get("confidence", np.ones(len(doc["joints"]))), dtype=np.float64
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise fileio.MalformedFile("%s: %s" % (joints_path, exc)) from exc
    hm_bin = os.path.join(dir_path, "heatmaps.bin")
    if os.path.exists(hm_bin):
        hm_meta_path = _require(os.path.join(dir_path, "heatmaps.meta.json"))
        with open(hm_meta_path) as fh:
            hm_meta = json.load(fh)
        try:
            shape = (int(hm_meta["height"]), int(hm_meta["width"]), int(hm_meta["channels"]))
            if hm_meta["dtype"] != "float32" or hm_meta["layout"] != "HWC":
                raise ValueError("unsupported dtype/layout %r/%r" % (hm_meta["dtype"], hm_meta["layout"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise fileio.MalformedFile("%s: %s" % (hm_meta_path, exc)) from exc
        raw = np.fromfile(hm_bin, dtype="<f4")
        if raw.size != shape[0] * shape[1] * shape[2]:
            raise fileio.MalformedFile(
                "%s: %d values, header says %r" % (hm_bin, raw.size, shape)
            )
        heatmaps = raw.reshape(shape).astype(np.float64)
        if heatmaps.shape[:2] != depth.shape:
            raise DimensionMismatch(
                "heatmaps %r vs depth %r in %s" % (heatmaps.shape[:2], depth.shape, dir_path)
            )
    if joints_xy is None and heatmaps is None:
        raise MissingBundleFile(joints_path)
    return RepBundle(
        depth=depth,
        silhouette=silhouette,
        joints_xy=joints_xy,
        joints_conf=joints_conf,
        heatmaps=heatmaps,
        depth_polarity=polarity,
    )


def save_params(path, params):
    params.save(path)


def load_params(path):
    return BodyParams.load(path)
