"""Evaluation metrics and report writing.

3D errors are reported in millimeters on the toy model's metric convention
(1 model unit = 1 m). MPJPE root-aligns at joint 0; PA-MPJPE aligns with the
best similarity transform (rotation, uniform scale, translation); PVE-T
compares T-pose surfaces so it isolates shape error from pose error.
Segmentation scores compare part-label images (0 background, 1..6 parts).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body_model import MeshParams, forward, tpose_vertices
from .camera import CameraParams, project
from .errors import DataError, DimensionError, IoError
from .renderer import N_PARTS, RenderConfig, rasterize_hard_labels

MM = 1000.0

REPORT_COLUMNS = (
    "mpjpe_mm", "pa_mpjpe_mm", "pve_t_mm",
    "pve_t_torso_mm", "pve_t_legs_mm", "pve_t_arms_mm", "pve_t_head_mm",
    "miou", "fb_acc", "fb_f1", "part_acc", "part_f1",
)

# part ids 1..6 grouped into reporting regions
PART_GROUPS = {"torso": (2,), "head": (1,), "arms": (3, 4), "legs": (5, 6)}


def _check_joints(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise DimensionError(f"joint arrays must both be (K, 3), got {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred_joints, gt_joints):
    """Mean per-joint position error (mm) after root alignment at joint 0."""
    pred, gt = _check_joints(pred_joints, gt_joints)
    pred = pred - pred[0]
    gt = gt - gt[0]
    return float(np.linalg.norm(pred - gt, axis=1).mean() * MM)


def similarity_align(source, target):
    """Best-fit similarity transform of ``source`` onto ``target`` (least squares)."""
    src, tgt = _check_joints(source, target)
    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    xs = src - mu_s
    xt = tgt - mu_t
    cov = xt.T @ xs / src.shape[0]
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    flip = np.array([1.0, 1.0, d])
    rot = (u * flip) @ vt
    var_s = (xs**2).sum() / src.shape[0]
    if var_s <= 0:
        return np.broadcast_to(mu_t, src.shape).copy()
    scale = (s * flip).sum() / var_s
    return scale * (src - mu_s) @ rot.T + mu_t


def pa_mpjpe(pred_joints, gt_joints):
    """MPJPE (mm) after Procrustes (similarity) alignment."""
    pred, gt = _check_joints(pred_joints, gt_joints)
    aligned = similarity_align(pred, gt)
    return float(np.linalg.norm(aligned - gt, axis=1).mean() * MM)


def pve_t(model, beta_pred, beta_gt):
    """Mean T-pose per-vertex error (mm) between two shape coefficient sets."""
    vp = tpose_vertices(model, np.asarray(beta_pred, dtype=np.float64))
    vg = tpose_vertices(model, np.asarray(beta_gt, dtype=np.float64))
    return float(np.linalg.norm(vp - vg, axis=1).mean() * MM)


def vertex_parts(model):
    """Per-vertex part id: majority label of the faces touching each vertex."""
    counts = np.zeros((model.n_vertices, N_PARTS + 1), dtype=np.int64)
    for f in range(model.n_faces):
        p = int(model.face_part[f])
        for v in model.faces[f]:
            counts[v, p] += 1
    # ties resolve to the lowest part id; unused vertices get part 0
    return counts.argmax(axis=1)


def per_part_pve_t(model, beta_pred, beta_gt):
    """PVE-T (mm) split by body region; regions without vertices are omitted."""
    vp = tpose_vertices(model, np.asarray(beta_pred, dtype=np.float64))
    vg = tpose_vertices(model, np.asarray(beta_gt, dtype=np.float64))
    err = np.linalg.norm(vp - vg, axis=1)
    parts = vertex_parts(model)
    out = {}
    for name, ids in PART_GROUPS.items():
        sel = np.isin(parts, ids)
        if sel.any():
            out[name] = float(err[sel].mean() * MM)
    return out


def _check_labels(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"label images must share an (H, W) shape, got {a.shape} vs {b.shape}")
    return a, b


def miou(pred_labels, gt_labels):
    """Mean IoU over part classes 1..6; classes empty in both images are skipped."""
    pred, gt = _check_labels(pred_labels, gt_labels)
    ious = []
    for d in range(1, N_PARTS + 1):
        p = pred == d
        g = gt == d
        union = np.logical_or(p, g).sum()
        if union == 0:
            continue
        ious.append(np.logical_and(p, g).sum() / union)
    return float(np.mean(ious)) if ious else 1.0


def fb_accuracy(pred_labels, gt_labels):
    """Pixel accuracy of the binary foreground/background decision."""
    pred, gt = _check_labels(pred_labels, gt_labels)
    return float(((pred > 0) == (gt > 0)).mean())


def fb_f1(pred_labels, gt_labels):
    """F1 of the foreground class; defined as 1 when neither image has foreground."""
    pred, gt = _check_labels(pred_labels, gt_labels)
    p = pred > 0
    g = gt > 0
    tp = np.logical_and(p, g).sum()
    denom = 2 * tp + np.logical_and(p, ~g).sum() + np.logical_and(~p, g).sum()
    return float(2 * tp / denom) if denom > 0 else 1.0


def part_accuracy(pred_labels, gt_labels):
    """Pixel accuracy over all seven classes (background included)."""
    pred, gt = _check_labels(pred_labels, gt_labels)
    return float((pred == gt).mean())


def part_f1(pred_labels, gt_labels):
    """Macro F1 over part classes 1..6; classes absent from both are skipped."""
    pred, gt = _check_labels(pred_labels, gt_labels)
    scores = []
    for d in range(1, N_PARTS + 1):
        p = pred == d
        g = gt == d
        tp = np.logical_and(p, g).sum()
        denom = 2 * tp + np.logical_and(p, ~g).sum() + np.logical_and(~p, g).sum()
        if denom == 0:
            continue
        scores.append(2 * tp / denom)
    return float(np.mean(scores)) if scores else 1.0


def extreme_shape_filter(model, samples, threshold_mm=22.5):
    """Samples whose ground-truth T-pose deviates from the mean shape by
    at least ``threshold_mm`` (inclusive) in PVE-T."""
    zero = np.zeros(model.n_shape)
    kept = []
    for obs in samples:
        if obs.gt_params is None:
            raise DataError(f"sample {obs.sample_id!r} has no ground truth for shape filtering")
        if pve_t(model, obs.gt_params.beta, zero) >= threshold_mm:
            kept.append(obs)
    return kept


@dataclass
class MetricReport:
    per_sample: dict = field(default_factory=dict)  # sample_id -> column dict
    aggregate: dict = field(default_factory=dict)

    def to_json(self, path):
        doc = {"version": "omrfit-report/1", "per_sample": self.per_sample, "mean": self.aggregate}
        try:
            Path(path).write_text(json.dumps(doc, indent=1), "ascii")
        except OSError as e:
            raise IoError(f"cannot write report {path}: {e}") from e

    def to_csv(self, path):
        try:
            with open(path, "w", newline="", encoding="ascii") as f:
                writer = csv.writer(f)
                writer.writerow(("sample_id",) + REPORT_COLUMNS)
                for sid in sorted(self.per_sample):
                    row = self.per_sample[sid]
                    writer.writerow([sid] + [_fmt(row.get(c)) for c in REPORT_COLUMNS])
                writer.writerow(["mean"] + [_fmt(self.aggregate.get(c)) for c in REPORT_COLUMNS])
        except OSError as e:
            raise IoError(f"cannot write report {path}: {e}") from e


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def evaluate_sample(model, obs, pred_params, resolution=None):
    """All metric columns for one sample; segmentation needs ``obs.mask``."""
    if obs.gt_params is None:
        raise DataError(f"sample {obs.sample_id!r} has no ground truth to evaluate against")
    gt = obs.gt_params
    verts_p, joints_p = forward(model, pred_params)
    _, joints_g = forward(model, gt)
    row = {
        "mpjpe_mm": mpjpe(joints_p, joints_g),
        "pa_mpjpe_mm": pa_mpjpe(joints_p, joints_g),
        "pve_t_mm": pve_t(model, pred_params.beta, gt.beta),
    }
    for name, val in per_part_pve_t(model, pred_params.beta, gt.beta).items():
        row[f"pve_t_{name}_mm"] = val
    if obs.mask is not None:
        res = resolution or obs.mask.shape[0]
        cam = CameraParams(pred_params.scale, pred_params.trans)
        pred_labels = rasterize_hard_labels(
            project(verts_p, cam), verts_p[:, 2], model.faces, model.face_part,
            RenderConfig(resolution=res),
        )
        row.update({
            "miou": miou(pred_labels, obs.mask),
            "fb_acc": fb_accuracy(pred_labels, obs.mask),
            "fb_f1": fb_f1(pred_labels, obs.mask),
            "part_acc": part_accuracy(pred_labels, obs.mask),
            "part_f1": part_f1(pred_labels, obs.mask),
        })
    return row


def evaluate_fits(model, dataset, fits):
    """Evaluate predicted parameters against a dataset's ground truth.

    ``fits`` maps sample_id -> MeshParams; every id must exist in the dataset.
    Returns a MetricReport with per-sample rows and column means.
    """
    if not fits:
        raise DataError("no fits to evaluate")
    by_id = {s.sample_id: s for s in dataset.samples}
    report = MetricReport()
    for sid, params in fits.items():
        obs = by_id.get(sid)
        if obs is None:
            raise DataError(f"fit {sid!r} does not match any dataset sample")
        if isinstance(params, dict):
            params = MeshParams.from_dict(params)
        report.per_sample[sid] = evaluate_sample(model, obs, params)
    for col in REPORT_COLUMNS:
        vals = [row[col] for row in report.per_sample.values() if col in row]
        if vals:
            report.aggregate[col] = float(np.mean(vals))
    return report
