"""On-disk formats: PFM/PGM/PPM, OBJ, conv manifests, bundle directories."""

import json
import os

import numpy as np
import pytest

from bodyfit.body_model import BodyParams
from bodyfit.fileio import (
    MalformedFile,
    UnsupportedFormat,
    load_conv_weights,
    read_image,
    read_pfm,
    read_pgm,
    read_ppm,
    save_conv_weights,
    write_obj,
    write_pfm,
    write_pgm,
    write_ppm,
)
from bodyfit.representations import (
    DimensionMismatch,
    MissingBundleFile,
    PolarityTagError,
    RepBundle,
    load_bundle,
    load_params,
    save_bundle,
    save_params,
)


def make_bundle(rng, h=32, w=32, with_heatmaps=False):
    depth = np.round(rng.uniform(0, 1, (h, w)), 3)
    sil = (rng.uniform(0, 1, (h, w)) > 0.5).astype(np.float64)
    joints = rng.uniform(2, min(h, w) - 2, (8, 2))
    conf = np.round(rng.uniform(0, 1, 8) * 255) / 255
    kwargs = dict(depth=depth, silhouette=sil)
    if with_heatmaps:
        from bodyfit.representations import encode_heatmaps

        kwargs["heatmaps"] = encode_heatmaps(joints, conf, (h, w))
    else:
        kwargs["joints_xy"] = joints
        kwargs["joints_conf"] = conf
    return RepBundle(**kwargs)


# ---------------------------------------------------------------------------
# PFM


def test_pfm_round_trip_float32(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.uniform(0, 1, (24, 17))
    p = str(tmp_path / "d.pfm")
    write_pfm(p, data)
    back = read_pfm(p)
    assert back.shape == (24, 17)
    assert np.abs(back - data).max() <= 2.0**-20


def test_pfm_exact_for_float32_values(tmp_path):
    data = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8)
    p = str(tmp_path / "d.pfm")
    write_pfm(p, data)
    assert np.array_equal(read_pfm(p), data)


def test_pfm_rejects_three_channel(tmp_path):
    p = tmp_path / "c.pfm"
    p.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
    with pytest.raises(UnsupportedFormat):
        read_pfm(str(p))


def test_pfm_rejects_truncated(tmp_path):
    p = tmp_path / "t.pfm"
    p.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 10)
    with pytest.raises(MalformedFile):
        read_pfm(str(p))


def test_pfm_big_endian_scale(tmp_path):
    data = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "b.pfm"
    p.write_bytes(b"Pf\n3 2\n1.0\n" + np.flipud(data).astype(">f4").tobytes())
    assert np.array_equal(read_pfm(str(p)), data)


# ---------------------------------------------------------------------------
# PGM / PPM


def test_pgm_round_trip_exact_when_quantized(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.integers(0, 256, (20, 30)) / 255.0
    p = str(tmp_path / "m.pgm")
    write_pgm(p, data)
    assert np.array_equal(read_pgm(p), data)


def test_pgm_sixteen_bit_rejected(tmp_path):
    p = tmp_path / "wide.pgm"
    p.write_bytes(b"P5\n2 2\n65535\n" + b"\x00" * 8)
    with pytest.raises(UnsupportedFormat):
        read_pgm(str(p))


def test_pgm_header_comments_skipped(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff")
    img = read_pgm(str(p))
    assert np.array_equal(img, np.array([[0, 64], [128, 255]]) / 255.0)


def test_pgm_bad_magic(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(MalformedFile):
        read_pgm(str(p))


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    data = rng.integers(0, 256, (6, 7, 3)) / 255.0
    p = str(tmp_path / "c.ppm")
    write_ppm(p, data)
    assert np.array_equal(read_ppm(p), data)


def test_read_image_dispatch(tmp_path):
    g = np.zeros((16, 16))
    c = np.zeros((16, 16, 3))
    write_pgm(str(tmp_path / "a.pgm"), g)
    write_ppm(str(tmp_path / "a.ppm"), c)
    assert read_image(str(tmp_path / "a.pgm")).shape == (16, 16)
    assert read_image(str(tmp_path / "a.ppm")).shape == (16, 16, 3)
    with pytest.raises(UnsupportedFormat):
        read_image(str(tmp_path / "a.png"))


# ---------------------------------------------------------------------------
# OBJ


def test_obj_export_one_based_indices(tmp_path):
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    faces = np.array([[0, 1, 2]])
    p = tmp_path / "tri.obj"
    write_obj(str(p), verts, faces)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "v 0 0 0"
    assert lines[-1] == "f 1 2 3"
    assert sum(1 for ln in lines if ln.startswith("v ")) == 3


# ---------------------------------------------------------------------------
# Conv weight manifests


def test_conv_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    layers = [
        {
            "name": "mix",
            "kind": "fpf",
            "inputs": ["depth", "mask"],
            "kernel": rng.normal(size=(3, 3, 2, 4)).astype(np.float32),
            "bias": rng.normal(size=4).astype(np.float32),
        },
        {
            "name": "head",
            "kind": "fdf",
            "inputs": ["mix"],
            "kernel": rng.normal(size=(1, 1, 4, 1)).astype(np.float32),
            "bias": np.zeros(1, dtype=np.float32),
        },
    ]
    manifest = str(tmp_path / "net.json")
    save_conv_weights(manifest, layers)
    back = load_conv_weights(manifest)
    assert [l["name"] for l in back] == ["mix", "head"]
    assert [l["kind"] for l in back] == ["fpf", "fdf"]
    assert back[0]["inputs"] == ["depth", "mask"]
    for orig, got in zip(layers, back):
        assert np.array_equal(got["kernel"], orig["kernel"].astype(np.float64))
        assert np.array_equal(got["bias"], orig["bias"].astype(np.float64))


def test_conv_manifest_blob_size_checked(tmp_path):
    layers = [
        {
            "name": "mix",
            "kind": "fpf",
            "inputs": [],
            "kernel": np.zeros((3, 3, 1, 1), dtype=np.float32),
            "bias": np.zeros(1, dtype=np.float32),
        }
    ]
    manifest = str(tmp_path / "net.json")
    save_conv_weights(manifest, layers)
    blob = tmp_path / "mix.bin"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(MalformedFile):
        load_conv_weights(manifest)


def test_conv_manifest_bad_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(MalformedFile):
        load_conv_weights(str(p))


# ---------------------------------------------------------------------------
# Bundle directories


def test_bundle_round_trip_coordinates(tmp_path):
    bundle = make_bundle(np.random.default_rng(4))
    d = str(tmp_path / "bundle")
    save_bundle(bundle, d)
    back = load_bundle(d)
    assert np.abs(back.depth - bundle.depth).max() <= 2.0**-20
    assert np.array_equal(back.silhouette, bundle.silhouette)
    assert np.array_equal(back.joints_xy, bundle.joints_xy)
    assert np.array_equal(back.joints_conf, bundle.joints_conf)
    assert back.depth_polarity == bundle.depth_polarity


def test_bundle_round_trip_heatmaps(tmp_path):
    bundle = make_bundle(np.random.default_rng(5), with_heatmaps=True)
    d = str(tmp_path / "bundle")
    save_bundle(bundle, d)
    back = load_bundle(d)
    assert back.joints_xy is None
    assert np.abs(back.heatmaps - bundle.heatmaps).max() <= 2.0**-20


def test_bundle_missing_mask_raises(tmp_path):
    bundle = make_bundle(np.random.default_rng(6))
    d = str(tmp_path / "bundle")
    save_bundle(bundle, d)
    os.remove(os.path.join(d, "mask.pgm"))
    with pytest.raises(MissingBundleFile) as err:
        load_bundle(d)
    assert "mask.pgm" in str(err.value)


def test_bundle_missing_polarity_tag_raises(tmp_path):
    bundle = make_bundle(np.random.default_rng(7))
    d = str(tmp_path / "bundle")
    save_bundle(bundle, d)
    os.remove(os.path.join(d, "depth.meta.json"))
    with pytest.raises(PolarityTagError):
        load_bundle(d)


def test_bundle_unknown_polarity_raises(tmp_path):
    bundle = make_bundle(np.random.default_rng(8))
    d = str(tmp_path / "bundle")
    save_bundle(bundle, d)
    with open(os.path.join(d, "depth.meta.json"), "w") as fh:
        json.dump({"polarity": "diagonal", "normalized": True}, fh)
    with pytest.raises(PolarityTagError):
        load_bundle(d)


def test_bundle_dimension_mismatch_raises(tmp_path):
    d = str(tmp_path / "bundle")
    os.makedirs(d)
    write_pfm(os.path.join(d, "depth.pfm"), np.zeros((256, 256)))
    with open(os.path.join(d, "depth.meta.json"), "w") as fh:
        json.dump({"polarity": "near_zero", "normalized": True}, fh)
    write_pgm(os.path.join(d, "mask.pgm"), np.zeros((240, 320)))
    with open(os.path.join(d, "joints.json"), "w") as fh:
        json.dump({"joints": [[1.0, 1.0]], "confidence": [1.0]}, fh)
    with pytest.raises(DimensionMismatch):
        load_bundle(d)


def test_bundle_without_any_joint_carrier_raises(tmp_path):
    bundle = make_bundle(np.random.default_rng(9))
    d = str(tmp_path / "bundle")
    save_bundle(bundle, d)
    os.remove(os.path.join(d, "joints.json"))
    with pytest.raises(MissingBundleFile):
        load_bundle(d)


def test_bundle_truncated_heatmap_blob_raises(tmp_path):
    bundle = make_bundle(np.random.default_rng(10), with_heatmaps=True)
    d = str(tmp_path / "bundle")
    save_bundle(bundle, d)
    blob = os.path.join(d, "heatmaps.bin")
    raw = open(blob, "rb").read()
    with open(blob, "wb") as fh:
        fh.write(raw[:-8])
    with pytest.raises(MalformedFile):
        load_bundle(d)


def test_bundle_malformed_joints_json_raises(tmp_path):
    bundle = make_bundle(np.random.default_rng(11))
    d = str(tmp_path / "bundle")
    save_bundle(bundle, d)
    with open(os.path.join(d, "joints.json"), "w") as fh:
        json.dump({"confidence": [1.0]}, fh)
    with pytest.raises(MalformedFile):
        load_bundle(d)


# ---------------------------------------------------------------------------
# Parameter files


def test_params_round_trip_exact(tmp_path):
    rng = np.random.default_rng(12)
    params = BodyParams(
        beta=rng.normal(size=4),
        theta=rng.normal(0, 0.2, (16, 3)),
        scale=123.456,
        translation=np.array([12.25, -3.5]),
    )
    p = str(tmp_path / "params.json")
    save_params(p, params)
    back = load_params(p)
    assert np.array_equal(back.beta, params.beta)
    assert np.array_equal(back.theta, params.theta)
    assert back.scale == params.scale
    assert np.array_equal(back.translation, params.translation)
