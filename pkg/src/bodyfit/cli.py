"""Command-line driver for the body-fitting pipeline.

Subcommands cover the full loop: synthesize test scenes, fit parameters to a
target bundle, render parameters back out, evaluate predictions against
ground truth, run the clothing-cut image ops, and gradient-check the fitting
objective.

Conventions shared by all subcommands:
  * options resolve as flags > --config JSON > built-in defaults, and every
    run with an output directory writes the fully resolved set to
    resolved_config.json inside it;
  * all randomness flows from one generator seeded by --seed (default 0);
  * exit codes: 0 ok, 2 invalid input or configuration, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import body_model as bm
from . import fileio, metrics, representations, tailoring
from .fitting import (
    FDSteps,
    FitConfig,
    InitError,
    NumericError,
    fit,
    initialize_params,
    objective_gradient,
)
from .body_model import BodyParams, pose_body
from .losses import LossWeights
from .metrics import AlignmentError
from .rendering import EmptyRender, project_jacobian

_DEFAULT_RENDER = (128, 128)


# ---------------------------------------------------------------------------
# Option resolution


def _parse_render_size(text):
    """'HxW' or a single integer for a square image."""
    s = str(text).lower().replace("×", "x")
    parts = s.split("x")
    try:
        if len(parts) == 1:
            n = int(parts[0])
            return (n, n)
        if len(parts) == 2:
            return (int(parts[0]), int(parts[1]))
    except ValueError:
        pass
    raise ValueError("render size must be 'HxW' or a single integer, got %r" % text)


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config file %s must hold a JSON object" % path)
    return doc


def _resolve_options(args, defaults):
    """Merge CLI flags over config-file values over defaults.

    Flags parse with default None so an unset flag is distinguishable from
    an explicit value. Config keys outside `defaults` are rejected to catch
    typos early.
    """
    config = _load_config(getattr(args, "config", None))
    unknown = set(config) - set(defaults)
    if unknown:
        raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    resolved = {}
    for key, fallback in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in config:
            resolved[key] = config[key]
        else:
            resolved[key] = fallback
    return resolved


def _write_resolved(out_dir, subcommand, resolved):
    os.makedirs(out_dir, exist_ok=True)
    doc = {"subcommand": subcommand}
    for key, value in resolved.items():
        if isinstance(value, tuple):
            value = list(value)
        doc[key] = value
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _fit_config_from(resolved):
    fd = resolved["fd_steps"]
    if not isinstance(fd, dict):
        raise ValueError("fd_steps must be an object of step sizes")
    stages = resolved["stages"]
    if stages is not None:
        stages = [(tuple(groups), int(count)) for groups, count in stages]
    return FitConfig(
        iterations=int(resolved["iters"]),
        optimizer=resolved["optimizer"],
        step_size=float(resolved["step_size"]),
        beta1=float(resolved["beta1"]),
        beta2=float(resolved["beta2"]),
        fd_steps=FDSteps(**{k: float(v) for k, v in fd.items()}),
        stages=stages,
        soft_sigma=float(resolved["soft_sigma"]),
        weights=LossWeights(
            lambda_d=float(resolved["lambda_d"]),
            lambda_m=float(resolved["lambda_m"]),
            lambda_j=float(resolved["lambda_j"]),
        ),
    )


_FIT_OPTION_DEFAULTS = {
    "iters": 40,
    "optimizer": "adam",
    "step_size": 0.01,
    "beta1": 0.9,
    "beta2": 0.999,
    "fd_steps": {"beta": 1e-3, "theta": 1e-3, "scale_rel": 1e-4, "translation": 0.25},
    "stages": None,
    "soft_sigma": 1.0,
    "lambda_d": 5.0,
    "lambda_m": 5.0,
    "lambda_j": 10.0,
}


# ---------------------------------------------------------------------------
# synth


def _sample_gt_params(rng, model, image_size):
    """Random ground-truth parameters that keep the body inside the frame."""
    h, w = image_size
    base_scale = 0.75 * min(h, w) / model.rest_height()
    return BodyParams(
        beta=rng.normal(0.0, 0.3, model.num_shape_coeffs),
        theta=rng.normal(0.0, 0.08, (model.num_joints, 3)),
        scale=base_scale * rng.uniform(0.9, 1.1),
        translation=np.array([w / 2.0, h / 2.0])
        + rng.uniform(-0.05, 0.05, 2) * min(h, w),
    )


def cmd_synth(args):
    resolved = _resolve_options(
        args,
        {
            "out": None,
            "count": 1,
            "seed": 0,
            "render_size": "%dx%d" % _DEFAULT_RENDER,
            "jobs": 1,
        },
    )
    if resolved["out"] is None:
        raise ValueError("synth requires --out")
    out_dir = resolved["out"]
    size = _parse_render_size(resolved["render_size"])
    count = int(resolved["count"])
    if count < 1:
        raise ValueError("--count must be >= 1, got %d" % count)
    rng = np.random.default_rng(int(resolved["seed"]))

    model = bm.make_toy_model()
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.json")
    bm.save_model(model_path, model)
    _write_resolved(out_dir, "synth", resolved)

    # Draw every sample's parameters from the single run generator first so
    # the scene set is identical no matter how rendering is distributed.
    gts = [_sample_gt_params(rng, model, size) for _ in range(count)]
    tasks = []
    for i, gt in enumerate(gts):
        sample_dir = os.path.join(out_dir, "sample_%03d" % i)
        tasks.append((model_path, gt.to_dict(), size, sample_dir))
    _map_jobs(_synth_one, tasks, int(resolved["jobs"]))
    print("wrote %d sample(s) under %s" % (count, out_dir))
    return 0


def _synth_one(task):
    model_path, gt_doc, size, sample_dir = task
    model = bm.load_model(model_path)
    gt = BodyParams.from_dict(gt_doc)
    bundle = representations.synthesize_targets(model, gt, size)
    representations.save_bundle(bundle, sample_dir)
    gt.save(os.path.join(sample_dir, "gt_params.json"))
    return sample_dir


def _map_jobs(fn, tasks, jobs):
    """Order-preserving map, optionally across processes (samples only)."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args):
    defaults = dict(_FIT_OPTION_DEFAULTS)
    defaults.update(
        {"model": None, "bundle": None, "out": None, "init": None, "seed": 0}
    )
    resolved = _resolve_options(args, defaults)
    for key in ("model", "bundle", "out"):
        if resolved[key] is None:
            raise ValueError("fit requires --%s" % key)
    model = bm.load_model(resolved["model"])
    bundle = representations.load_bundle(resolved["bundle"])
    cfg = _fit_config_from(resolved)
    if resolved["init"] is not None:
        init = representations.load_params(resolved["init"])
    else:
        init = initialize_params(bundle, model)

    report = fit(model, bundle, init, cfg)

    out_dir = resolved["out"]
    os.makedirs(out_dir, exist_ok=True)
    _write_resolved(out_dir, "fit", resolved)
    report.final_params.save(os.path.join(out_dir, "params.json"))
    report.initial_params.save(os.path.join(out_dir, "initial_params.json"))
    _write_json(os.path.join(out_dir, "report.json"), report.to_dict())
    posed = pose_body(model, report.final_params)
    fileio.write_obj(os.path.join(out_dir, "body.obj"), posed.vertices, model.faces)
    print(
        "fit: loss %.6g -> %.6g (best at iteration %d%s)"
        % (
            report.loss_trace[0],
            min(report.loss_trace),
            report.best_iteration,
            ", converged" if report.converged else "",
        )
    )
    return 0


# ---------------------------------------------------------------------------
# render


def cmd_render(args):
    resolved = _resolve_options(
        args,
        {
            "model": None,
            "params": None,
            "out": None,
            "render_size": "%dx%d" % _DEFAULT_RENDER,
            "seed": 0,
        },
    )
    for key in ("model", "params", "out"):
        if resolved[key] is None:
            raise ValueError("render requires --%s" % key)
    model = bm.load_model(resolved["model"])
    params = representations.load_params(resolved["params"])
    size = _parse_render_size(resolved["render_size"])
    bundle = representations.synthesize_targets(model, params, size)
    representations.save_bundle(bundle, resolved["out"])
    # The rendered params are this bundle's ground truth; saving them makes
    # the output directory a complete eval target.
    representations.save_params(
        os.path.join(resolved["out"], "gt_params.json"), params
    )
    _write_resolved(resolved["out"], "render", resolved)
    print("rendered %dx%d bundle to %s" % (size[0], size[1], resolved["out"]))
    return 0


# ---------------------------------------------------------------------------
# eval


def _find_params_file(directory, preferred):
    for name in preferred:
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    return None


def _collect_samples(root, preferred):
    """(name, params_path) pairs: the directory itself or its subdirectories."""
    direct = _find_params_file(root, preferred)
    if direct is not None:
        return [(os.path.basename(os.path.normpath(root)), direct)]
    if not os.path.isdir(root):
        raise FileNotFoundError(root)
    out = []
    for entry in sorted(os.listdir(root)):
        sub = os.path.join(root, entry)
        if os.path.isdir(sub):
            found = _find_params_file(sub, preferred)
            if found is not None:
                out.append((entry, found))
    if not out:
        raise FileNotFoundError(
            "no %s under %s" % (" or ".join(preferred), root)
        )
    return out


def _eval_one(task):
    model_path, pred_path, gt_path, size, name = task
    model = bm.load_model(model_path)
    pred = representations.load_params(pred_path)
    gt = representations.load_params(gt_path)
    posed_p = pose_body(model, pred)
    posed_g = pose_body(model, gt)
    mask_p = representations.synthesize_targets(model, pred, size).silhouette
    mask_g = representations.synthesize_targets(model, gt, size).silhouette
    return {
        "name": name,
        "mpjpe": metrics.mpjpe(posed_p.joints3d, posed_g.joints3d),
        "pa_mpjpe": metrics.pa_mpjpe(posed_p.joints3d, posed_g.joints3d),
        "mvpe": metrics.mvpe(
            posed_p.vertices,
            posed_g.vertices,
            pred_root=posed_p.joints3d[0],
            gt_root=posed_g.joints3d[0],
        ),
        "miou": metrics.miou(mask_p > 0.5, mask_g > 0.5),
    }


def cmd_eval(args):
    resolved = _resolve_options(
        args,
        {
            "pred": None,
            "gt": None,
            "model": None,
            "out": None,
            "render_size": "%dx%d" % _DEFAULT_RENDER,
            "jobs": 1,
            "seed": 0,
        },
    )
    for key in ("pred", "gt", "model", "out"):
        if resolved[key] is None:
            raise ValueError("eval requires --%s" % key)
    size = _parse_render_size(resolved["render_size"])
    preds = _collect_samples(resolved["pred"], ("params.json", "gt_params.json"))
    gts = _collect_samples(resolved["gt"], ("gt_params.json", "params.json"))
    if len(preds) != len(gts):
        raise ValueError(
            "prediction/ground-truth sample counts differ: %d vs %d"
            % (len(preds), len(gts))
        )
    tasks = [
        (resolved["model"], p_path, g_path, size, p_name)
        for (p_name, p_path), (_, g_path) in zip(preds, gts)
    ]
    rows = _map_jobs(_eval_one, tasks, int(resolved["jobs"]))

    per_sample = [{k: row[k] for k in ("mpjpe", "pa_mpjpe", "mvpe", "miou")} for row in rows]
    report = metrics.aggregate_metrics(per_sample)
    doc = {
        "units": "model_units",
        "mpjpe": report.mpjpe,
        "pa_mpjpe": report.pa_mpjpe,
        "mvpe": report.mvpe,
        "miou": report.miou,
        "count": report.count,
        "per_sample": rows,
    }
    out_path = resolved["out"]
    out_dir = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(out_dir, exist_ok=True)
    _write_json(out_path, doc)
    csv_path = os.path.splitext(out_path)[0] + ".csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "mpjpe", "pa_mpjpe", "mvpe", "miou"])
        for row in rows:
            writer.writerow(
                [row["name"]]
                + ["%.9g" % row[k] for k in ("mpjpe", "pa_mpjpe", "mvpe", "miou")]
            )
        writer.writerow(
            ["mean"]
            + ["%.9g" % getattr(report, k) for k in ("mpjpe", "pa_mpjpe", "mvpe", "miou")]
        )
    _write_resolved(out_dir, "eval", resolved)
    print(
        "eval over %d sample(s): mpjpe %.6g  pa_mpjpe %.6g  mvpe %.6g  miou %.4f"
        % (report.count, report.mpjpe, report.pa_mpjpe, report.mvpe, report.miou)
    )
    return 0


# ---------------------------------------------------------------------------
# tailor


def _clip01(x):
    return np.clip(x, 0.0, 1.0)


def cmd_tailor(args):
    resolved = _resolve_options(
        args,
        {"image": None, "matte": None, "weights": None, "out": None, "seed": 0},
    )
    for key in ("image", "matte", "out"):
        if resolved[key] is None:
            raise ValueError("tailor requires --%s" % key)
    image = fileio.read_image(resolved["image"])
    matte = fileio.read_pgm(resolved["matte"])
    if matte.shape != image.shape[:2]:
        raise ValueError(
            "matte %r does not match image %r" % (matte.shape, image.shape[:2])
        )

    if resolved["weights"] is None:
        # No learned refinement: pass the matte through unchanged, which
        # makes every loss in the breakdown identically zero by definition.
        c_m = tailoring.gaussian_blur_then_down16(matte)
        h_r = matte
        c_r = matte
    else:
        layers = fileio.load_conv_weights(resolved["weights"])
        convs = {
            layer["kind"]: tailoring.ConvSpec(kernel=layer["kernel"], bias=layer["bias"])
            for layer in layers
        }
        for name in ("fpf", "fdf"):
            if name not in convs:
                raise ValueError("weights manifest lacks the %r layer" % name)
        a16 = tailoring.gaussian_blur_then_down16(matte)[:, :, None]
        if image.ndim == 2:
            i16 = tailoring.gaussian_blur_then_down16(image)[:, :, None]
        else:
            i16 = np.dstack(
                [
                    tailoring.gaussian_blur_then_down16(image[:, :, c])
                    for c in range(image.shape[2])
                ]
            )
        c_m = _clip01(tailoring.fpf(a16, i16, a16, convs["fpf"])[:, :, 0])
        up = c_m
        for _ in range(4):
            up = tailoring.bilinear_upsample_x2(up)
        h_r = _clip01(
            tailoring.fdf(matte[:, :, None], up[:, :, None], convs["fdf"])[:, :, 0]
        )
        c_r = h_r

    cut = tailoring.apply_cut(c_r, image)
    breakdown = {
        "edge": tailoring.loss_edge(h_r, matte),
        "cut": tailoring.loss_cut(c_r, matte),
        "cm": tailoring.loss_cm(c_m, matte),
        "cloth": tailoring.loss_cloth(c_m, h_r, c_r, matte),
    }

    out_dir = resolved["out"]
    os.makedirs(out_dir, exist_ok=True)
    if cut.ndim == 3:
        fileio.write_ppm(os.path.join(out_dir, "cut.ppm"), _clip01(cut))
    else:
        fileio.write_pgm(os.path.join(out_dir, "cut.pgm"), _clip01(cut))
    fileio.write_pgm(os.path.join(out_dir, "cut_matte.pgm"), _clip01(c_r))
    _write_json(os.path.join(out_dir, "losses.json"), breakdown)
    _write_resolved(out_dir, "tailor", resolved)
    print(
        "tailor: cloth %.6g (edge %.6g, cut %.6g, cm %.6g)"
        % (breakdown["cloth"], breakdown["edge"], breakdown["cut"], breakdown["cm"])
    )
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _secant_check(model, bundle, params, cfg, rng, step=1e-4):
    """Directional-derivative secant vs the frozen objective's gradient.

    Both sides live in the optimizer's normalized coordinates; the frozen
    functional keeps depth/mask signs and supports fixed while the probe
    moves, matching what the gradient estimator differentiates.
    """
    from . import fitting as F

    cam_size = bundle.image_size
    t_norm = float(max(cam_size))
    b_dim, j_dim = model.num_shape_coeffs, model.num_joints
    grad, info = objective_gradient(params, model, bundle, cam_size, cfg)
    frozen = info["frozen"]
    g_u = F._grad_to_internal(grad, params, t_norm)
    g_norm = float(np.linalg.norm(g_u))
    direction = rng.normal(size=g_u.shape)
    direction /= np.linalg.norm(direction)
    # Redraw directions nearly orthogonal to the gradient: the directional
    # derivative vanishes there, so the relative comparison divides finite-step
    # noise by a near-zero number and stops measuring estimator quality.  The
    # optimizer only ever steps along directions with substantial gradient
    # overlap, which is what this check validates.
    if g_norm > 0.0:
        for _ in range(64):
            if abs(float(g_u @ direction)) >= 0.15 * g_norm:
                break
            direction = rng.normal(size=g_u.shape)
            direction /= np.linalg.norm(direction)
    u0 = F._encode(params, t_norm)

    def frozen_at(u):
        p = F._decode(u, b_dim, j_dim, t_norm)
        return frozen.value(p.beta, p.theta, p.scale, p.translation)

    secant = (frozen_at(u0 + step * direction) - frozen_at(u0 - step * direction)) / (
        2.0 * step
    )
    predicted = float(g_u @ direction)
    denom = max(abs(secant), abs(predicted), 1e-12)
    return abs(secant - predicted) / denom, secant, predicted


def _joint_term_grad_check(model, bundle, params, cfg):
    """Analytic d L_J / d(s, t) against central finite differences."""
    cam_size = bundle.image_size
    _, info = objective_gradient(
        params, model, bundle, cam_size, cfg, active_groups=()
    )
    frozen = info["frozen"]
    posed = info["posed"]
    dirs = frozen.residual_dirs

    def l_j(scale, translation):
        p_xy = scale * posed.joints3d[:, :2] + translation
        dist = np.linalg.norm(p_xy - frozen.target_xy, axis=1)
        return float((np.linalg.norm(dirs, axis=1) * dist).sum())

    jac = project_jacobian(posed.joints3d)
    analytic = np.einsum("jc,jcs->s", dirs, jac)
    fd = np.zeros(3)
    hs = 1e-4 * params.scale
    fd[0] = (l_j(params.scale + hs, params.translation) - l_j(params.scale - hs, params.translation)) / (2 * hs)
    for i in range(2):
        dt = np.zeros(2)
        dt[i] = 1e-3
        fd[i + 1] = (l_j(params.scale, params.translation + dt) - l_j(params.scale, params.translation - dt)) / (2e-3)
    denom = max(float(np.linalg.norm(fd)), 1e-12)
    return float(np.linalg.norm(analytic - fd)) / denom, analytic, fd


def cmd_gradcheck(args):
    defaults = dict(_FIT_OPTION_DEFAULTS)
    defaults.update(
        {"model": None, "bundle": None, "out": None, "init": None, "seed": 0, "configs": 10}
    )
    resolved = _resolve_options(args, defaults)
    for key in ("model", "bundle"):
        if resolved[key] is None:
            raise ValueError("gradcheck requires --%s" % key)
    model = bm.load_model(resolved["model"])
    bundle = representations.load_bundle(resolved["bundle"])
    cfg = _fit_config_from(resolved)
    if resolved["init"] is not None:
        base = representations.load_params(resolved["init"])
    else:
        base = initialize_params(bundle, model)
    rng = np.random.default_rng(int(resolved["seed"]))

    rel_j, analytic, fd = _joint_term_grad_check(model, bundle, base, cfg)
    ok_j = rel_j < 1e-6
    print(
        "%s joint-term (s, t) gradient: rel err %.3g (analytic %s vs FD %s)"
        % ("✅" if ok_j else "❌", rel_j, np.round(analytic, 6), np.round(fd, 6))
    )

    worst = 0.0
    n_cfg = int(resolved["configs"])
    for i in range(n_cfg):
        probe = BodyParams(
            beta=base.beta + rng.normal(0.0, 0.3, model.num_shape_coeffs),
            theta=base.theta + rng.normal(0.0, 0.1, (model.num_joints, 3)),
            scale=base.scale * rng.uniform(0.9, 1.1),
            translation=base.translation + rng.uniform(-3.0, 3.0, 2),
        )
        try:
            rel, secant, predicted = _secant_check(model, bundle, probe, cfg, rng)
        except EmptyRender:
            continue
        worst = max(worst, rel)
        print(
            "  config %2d: secant %.6g vs gradient %.6g (rel %.3g)"
            % (i, secant, predicted, rel)
        )
    ok_s = worst < 0.05
    print(
        "%s directional secant over %d configs: worst rel err %.3g"
        % ("✅" if ok_s else "❌", n_cfg, worst)
    )

    if resolved["out"] is not None:
        os.makedirs(resolved["out"], exist_ok=True)
        _write_json(
            os.path.join(resolved["out"], "gradcheck.json"),
            {"joint_term_rel_err": rel_j, "secant_worst_rel_err": worst,
             "passed": bool(ok_j and ok_s)},
        )
        _write_resolved(resolved["out"], "gradcheck", resolved)
    if ok_j and ok_s:
        return 0
    raise NumericError(
        "gradient check failed (joint-term rel %.3g, secant worst rel %.3g)"
        % (rel_j, worst)
    )


# ---------------------------------------------------------------------------
# Parser and entry point


def _add_common(sub, *names):
    if "model" in names:
        sub.add_argument("--model", help="body model JSON file")
    if "bundle" in names:
        sub.add_argument("--bundle", help="target bundle directory")
    if "out" in names:
        sub.add_argument("--out", help="output directory (or file for eval)")
    if "seed" in names:
        sub.add_argument("--seed", type=int, help="run seed (default 0)")
    if "jobs" in names:
        sub.add_argument("--jobs", type=int, help="parallel workers across samples")
    if "render_size" in names:
        sub.add_argument("--render-size", dest="render_size", help="HxW (default 128x128)")
    sub.add_argument("--config", help="JSON file of option defaults (flags win)")


def _add_fit_options(sub):
    sub.add_argument("--iters", type=int, help="optimization iterations (default 40)")
    sub.add_argument("--lambda-d", dest="lambda_d", type=float, help="depth weight (default 5)")
    sub.add_argument("--lambda-m", dest="lambda_m", type=float, help="mask weight (default 5)")
    sub.add_argument("--lambda-j", dest="lambda_j", type=float, help="joint weight (default 10)")
    sub.add_argument("--init", help="initial parameters JSON (default: silhouette init)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bodyfit",
        description="Parametric body fitting against image-space targets.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("synth", help="generate a toy model and target bundles")
    p.add_argument("--count", type=int, help="number of scenes (default 1)")
    _add_common(p, "out", "seed", "jobs", "render_size")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("fit", help="fit body parameters to a bundle")
    _add_common(p, "model", "bundle", "out", "seed")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("render", help="render parameters to a bundle directory")
    p.add_argument("--params", help="parameters JSON file")
    _add_common(p, "model", "out", "seed", "render_size")
    p.set_defaults(func=cmd_render)

    p = subs.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", help="directory of predicted params (or of sample subdirs)")
    p.add_argument("--gt", help="directory of ground-truth params (or of sample subdirs)")
    _add_common(p, "model", "out", "seed", "jobs", "render_size")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("tailor", help="run the clothing-cut ops on an image + matte")
    p.add_argument("--image", help="input image (PGM or PPM)")
    p.add_argument("--matte", help="clothed-body matte (PGM)")
    p.add_argument("--weights", help="conv weights manifest JSON (optional)")
    _add_common(p, "out", "seed")
    p.set_defaults(func=cmd_tailor)

    p = subs.add_parser("gradcheck", help="finite-difference and secant gradient checks")
    _add_common(p, "model", "bundle", "out", "seed")
    _add_fit_options(p)
    p.add_argument("--configs", type=int, help="number of random secant configs (default 10)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NumericError, EmptyRender, AlignmentError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print("invalid input: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
