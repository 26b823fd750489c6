"""Readers and writers for the interchange formats used by the pipeline.

Formats kept deliberately plain so other tools can consume them:
PFM (float32 depth), binary PGM/PPM (masks and images), Wavefront OBJ
(fitted meshes), and a JSON-manifest-plus-raw-blob layout for small
convolution weight sets.
"""

from __future__ import annotations

import json
import os

import numpy as np


class UnsupportedFormat(ValueError):
    """Raised for files whose header is recognized but not supported."""


class MalformedFile(ValueError):
    """Raised when a file does not parse as its claimed format."""


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, data):
    """Write a single-channel float32 PFM (little-endian, bottom-up rows)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a 2-d array, got shape %r" % (arr.shape,))
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(("%d %d\n" % (w, h)).encode("ascii"))
        fh.write(b"-1.0\n")
        # PFM scanlines run bottom-to-top.
        fh.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path):
    """Read a single-channel PFM into a float32 array (top-down rows)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic == b"PF":
            raise UnsupportedFormat("%s: 3-channel PFM not supported" % path)
        if magic != b"Pf":
            raise MalformedFile("%s: bad PFM magic %r" % (path, magic))
        dims = fh.readline().split()
        if len(dims) != 2:
            raise MalformedFile("%s: bad PFM dimension line" % path)
        w, h = int(dims[0]), int(dims[1])
        try:
            scale = float(fh.readline())
        except ValueError as exc:
            raise MalformedFile("%s: bad PFM scale line" % path) from exc
        endian = "<" if scale < 0 else ">"
        count = w * h
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise MalformedFile("%s: truncated PFM payload" % path)
        arr = np.frombuffer(raw, dtype=endian + "f4").reshape(h, w)
    return np.flipud(arr).astype(np.float32)


# ---------------------------------------------------------------------------
# PGM / PPM (binary variants only)


def _read_netpbm_header(fh, path, magic_wanted):
    def next_token():
        tok = b""
        while True:
            ch = fh.read(1)
            if not ch:
                raise MalformedFile("%s: truncated header" % path)
            if ch == b"#":  # comment to end of line
                while ch not in (b"\n", b""):
                    ch = fh.read(1)
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            tok += ch

    magic = next_token()
    if magic != magic_wanted:
        raise MalformedFile("%s: expected %s, got %r" % (path, magic_wanted.decode(), magic))
    w = int(next_token())
    h = int(next_token())
    maxval = int(next_token())
    return w, h, maxval


def write_pgm(path, data):
    """Write an 8-bit binary PGM from values in [0, 1]."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PGM writer expects a 2-d array, got shape %r" % (arr.shape,))
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(("P5\n%d %d\n255\n" % (w, h)).encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path):
    """Read an 8-bit binary PGM into floats in [0, 1]."""
    with open(path, "rb") as fh:
        w, h, maxval = _read_netpbm_header(fh, path, b"P5")
        if maxval != 255:
            raise UnsupportedFormat("%s: PGM maxval %d not supported (only 255)" % (path, maxval))
        raw = fh.read(w * h)
        if len(raw) != w * h:
            raise MalformedFile("%s: truncated PGM payload" % path)
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return arr.astype(np.float64) / 255.0


def write_ppm(path, data):
    """Write an 8-bit binary PPM from an (H, W, 3) array in [0, 1]."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("PPM writer expects (H, W, 3), got shape %r" % (arr.shape,))
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = q.shape
    with open(path, "wb") as fh:
        fh.write(("P6\n%d %d\n255\n" % (w, h)).encode("ascii"))
        fh.write(q.tobytes())


def read_ppm(path):
    """Read an 8-bit binary PPM into an (H, W, 3) float array in [0, 1]."""
    with open(path, "rb") as fh:
        w, h, maxval = _read_netpbm_header(fh, path, b"P6")
        if maxval != 255:
            raise UnsupportedFormat("%s: PPM maxval %d not supported (only 255)" % (path, maxval))
        raw = fh.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise MalformedFile("%s: truncated PPM payload" % path)
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(np.float64) / 255.0


def read_image(path):
    """Read a PGM or PPM by extension; grayscale comes back as (H, W)."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".ppm":
        return read_ppm(path)
    raise UnsupportedFormat("%s: unknown image extension %r" % (path, ext))


# ---------------------------------------------------------------------------
# OBJ


def write_obj(path, vertices, faces):
    """Write a triangle mesh as Wavefront OBJ (1-based face indices)."""
    verts = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(faces, dtype=np.int64)
    lines = []
    for v in verts:
        lines.append("v %.9g %.9g %.9g" % (v[0], v[1], v[2]))
    for f in tris:
        lines.append("f %d %d %d" % (f[0] + 1, f[1] + 1, f[2] + 1))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Convolution weight manifests


def save_conv_weights(manifest_path, layers):
    """Save conv layers as a JSON manifest plus raw float32 blobs.

    `layers` is a list of dicts with keys: name, kind ("fpf"|"fdf"),
    inputs (list of plane names), kernel (ndarray, k x k x cin x cout),
    bias (ndarray, cout). Blobs live next to the manifest.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = []
    for layer in layers:
        kernel = np.asarray(layer["kernel"], dtype=np.float32)
        bias = np.asarray(layer["bias"], dtype=np.float32)
        blob_name = "%s.bin" % layer["name"]
        with open(os.path.join(base, blob_name), "wb") as fh:
            fh.write(kernel.astype("<f4").tobytes())
            fh.write(bias.astype("<f4").tobytes())
        entries.append(
            {
                "name": layer["name"],
                "kind": layer["kind"],
                "inputs": list(layer.get("inputs", [])),
                "kernel_shape": list(kernel.shape),
                "bias_shape": list(bias.shape),
                "blob": blob_name,
            }
        )
    doc = {"version": 1, "layers": entries}
    if "output" in (layers[-1] if layers else {}):
        doc["output"] = layers[-1]["output"]
    with open(manifest_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_conv_weights(manifest_path):
    """Load a conv weight manifest; returns the parsed layer list."""
    try:
        with open(manifest_path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedFile("%s: not valid JSON" % manifest_path) from exc
    base = os.path.dirname(os.path.abspath(manifest_path))
    layers = []
    for entry in doc.get("layers", []):
        kshape = tuple(int(x) for x in entry["kernel_shape"])
        bshape = tuple(int(x) for x in entry["bias_shape"])
        blob_path = os.path.join(base, entry["blob"])
        n_kernel = int(np.prod(kshape))
        n_bias = int(np.prod(bshape))
        with open(blob_path, "rb") as fh:
            raw = fh.read()
        if len(raw) != 4 * (n_kernel + n_bias):
            raise MalformedFile("%s: blob size does not match manifest shapes" % blob_path)
        kernel = np.frombuffer(raw[: 4 * n_kernel], dtype="<f4").reshape(kshape)
        bias = np.frombuffer(raw[4 * n_kernel :], dtype="<f4").reshape(bshape)
        layers.append(
            {
                "name": entry["name"],
                "kind": entry["kind"],
                "inputs": list(entry.get("inputs", [])),
                "kernel": kernel.astype(np.float64),
                "bias": bias.astype(np.float64),
            }
        )
    return layers
