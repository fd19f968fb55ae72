"""Reproducible comparison runs: one spec in, one metrics table out.

A bench spec (JSON) pins everything except the master seed: model geometry,
pretraining data, the evaluation set, loss settings, and a list of fitting
cells (method + budget). ``run_compare`` derives per-role seeds from the
master seed, generates data, pretrains the regressor once, fits every cell
on the same evaluation samples, and reports per-cell means.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .body_model import MeshParams, forward, make_toy_model
from .data_synth import sample_pose, sample_shape, synth_observation
from .errors import ConfigError, FormatError, IoError
from .fitting import FitConfig, default_pose_prior, run_fit
from .losses import LossWeights
from .metrics import mpjpe, pa_mpjpe, pve_t
from .regressor import RegressorArch, pretrain

BENCH_FORMAT = "omrfit-bench/1"
_ROLES = ("train", "eval", "pretrain", "fit")


def derive_seed(master_seed, role):
    """Stable per-role seed from one master seed (sha256 of 'master:role')."""
    digest = hashlib.sha256(f"{int(master_seed)}:{role}".encode("ascii")).digest()
    return int.from_bytes(digest[:4], "big")


def default_spec():
    """The packaged bench spec."""
    text = resources.files("omrfit").joinpath("data/bench_default.json").read_text("ascii")
    return json.loads(text)


def load_spec(path):
    try:
        raw = Path(path).read_text("ascii")
    except OSError as e:
        raise IoError(f"cannot read bench spec {path}: {e}") from e
    try:
        spec = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"bench spec is not valid JSON: {e.msg}", offset=e.pos) from e
    if spec.get("version") != BENCH_FORMAT:
        raise FormatError(f"expected bench version {BENCH_FORMAT!r}, got {spec.get('version')!r}")
    return spec


def _cell_config(spec, cell):
    fit = spec.get("fit", {})
    weights = LossWeights(
        lambda_theta=fit.get("lambda_theta", 1e-2),
        lambda_beta=fit.get("lambda_beta", 1e-3),
        lambda_shape=cell.get("lambda_shape", fit.get("lambda_shape", 0.0)),
        sigma=fit.get("sigma", 0.78),
    )
    method = cell.get("method")
    if method not in ("smplify", "eft", "omr"):
        raise ConfigError(f"bench cell {cell.get('name')!r} has unknown method {method!r}")
    return FitConfig(
        method=method,
        schedule=cell.get("schedule", "5P4Q"),
        iters=int(cell.get("iters", 20)),
        iters_per_phase=int(cell.get("iters_per_phase", 20)),
        lr_q=fit.get("lr_q", 1e-3),
        lr_p=fit.get("lr_p", 1e-6),
        gamma=fit.get("gamma", 1600.0),
        weights=weights,
    )


@dataclass
class CompareResult:
    spec: dict
    master_seed: int
    rows: list = field(default_factory=list)  # per-cell aggregate dicts
    columns = ("cell", "method", "mean_final_l2d", "mean_mpjpe_mm", "mean_pa_mpjpe_mm", "mean_pve_t_mm")

    def row(self, cell_name):
        for r in self.rows:
            if r["cell"] == cell_name:
                return r
        raise ConfigError(f"no bench cell named {cell_name!r}")

    def to_csv(self, path):
        try:
            with open(path, "w", newline="", encoding="ascii") as f:
                writer = csv.writer(f)
                writer.writerow(self.columns)
                for r in self.rows:
                    writer.writerow([
                        r["cell"], r["method"],
                        f"{r['mean_final_l2d']:.6f}", f"{r['mean_mpjpe_mm']:.6f}",
                        f"{r['mean_pa_mpjpe_mm']:.6f}", f"{r['mean_pve_t_mm']:.6f}",
                    ])
        except OSError as e:
            raise IoError(f"cannot write compare table {path}: {e}") from e


def _spec_model(spec):
    m = spec.get("model", {})
    return make_toy_model(
        seed=m.get("seed", 0),
        n_vertices=m.get("n_vertices", 602),
        n_joints=m.get("n_joints", 16),
        n_shape=m.get("n_shape", 10),
    )


def _draw_observations(model, n, seed, noise, resolution, distribution):
    rng = np.random.default_rng(seed)
    return [
        synth_observation(model, rng, f"e{i:04d}", distribution, noise, resolution)
        for i in range(n)
    ]


def run_compare(spec, master_seed, progress=None):
    """Execute every cell of a bench spec; returns a CompareResult.

    The same pretrained regressor and evaluation observations are shared by
    all cells, so rows differ only in the fitting method and budget.
    """
    model = _spec_model(spec)
    pre = spec.get("pretrain", {})
    ev = spec.get("eval", {})

    class _ListDataset:
        def __init__(self, samples):
            self.samples = samples

    train = _ListDataset(_draw_observations(
        model, pre.get("n", 500), derive_seed(master_seed, "train"),
        pre.get("noise", 0.01), pre.get("resolution", 32), pre.get("distribution", "normal"),
    ))
    arch = RegressorArch.for_model(model, hidden=tuple(pre.get("hidden", (64, 64))))
    arch, alpha, _ = pretrain(
        model, train, arch=arch,
        epochs=pre.get("epochs", 60), lr=pre.get("lr", 1e-3),
        seed=derive_seed(master_seed, "pretrain"), batch_size=pre.get("batch_size", 16),
    )
    eval_obs = _draw_observations(
        model, ev.get("n", 50), derive_seed(master_seed, "eval"),
        ev.get("noise", 0.01), ev.get("resolution", 32), ev.get("distribution", "normal"),
    )
    prior = default_pose_prior(model, derive_seed(master_seed, "fit"))
    result = CompareResult(spec=spec, master_seed=int(master_seed))
    for cell in spec.get("cells", []):
        config = _cell_config(spec, cell).with_(seed=derive_seed(master_seed, "fit"))
        l2d, mp, pa, pv = [], [], [], []
        for obs in eval_obs:
            fit = run_fit(model, obs, config, arch=arch, alpha=alpha, prior=prior)
            _, joints_p = forward(model, fit.params)
            _, joints_g = forward(model, obs.gt_params)
            l2d.append(fit.final_losses["l2d"])
            mp.append(mpjpe(joints_p, joints_g))
            pa.append(pa_mpjpe(joints_p, joints_g))
            pv.append(pve_t(model, fit.params.beta, obs.gt_params.beta))
        row = {
            "cell": cell.get("name", config.method),
            "method": config.method,
            "mean_final_l2d": float(np.mean(l2d)),
            "mean_mpjpe_mm": float(np.mean(mp)),
            "mean_pa_mpjpe_mm": float(np.mean(pa)),
            "mean_pve_t_mm": float(np.mean(pv)),
        }
        result.rows.append(row)
        if progress:
            progress(row)
    return result


def suite_meshes(n=10, seed=0):
    """Deterministic single-layer six-part scenes for renderer tests and benchmarks.

    Each scene lays six disjoint two-triangle blocks on a tilted 3x2 grid
    (one per part label, order shuffled per scene) with one constant depth
    per block. Single-layer disjoint geometry keeps the scenes in the regime
    where thresholded soft masks converge to the z-buffered hard masks as
    gamma grows; stacked front/back surfaces of a closed body mesh do not,
    and near soft-mask corners where edges of two faces meet, the union
    aggregation widens the 0.5 level set by a fixed subpixel halo. Large
    block areas keep that halo below a percent of each part.

    Returns a list of (verts2d, depth, faces, face_part) tuples.
    """
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(n):
        verts, depth, faces, parts = [], [], [], []
        order = rng.permutation(6) + 1
        # a few degrees of tilt keep long edges off the pixel-row grid, where
        # an aligned edge would put a whole row of centers on the 0.5 level set
        tilt = rng.choice([-1.0, 1.0]) * rng.uniform(0.04, 0.1)
        rot = np.array(
            [[np.cos(tilt), -np.sin(tilt)], [np.sin(tilt), np.cos(tilt)]]
        )
        # 3x2 grid of near-square blocks: block diagonals stay steep relative
        # to both edge families, which keeps the soft-union halo confined to
        # small corner bumps instead of long wedges along the boundary
        grid = [(gx, gy) for gy in (0.46, -0.46) for gx in (-0.62, 0.0, 0.62)]
        for k, part in enumerate(order):
            gx, gy = grid[k]
            cx = gx + rng.uniform(-0.02, 0.02)
            cy = gy + rng.uniform(-0.02, 0.02)
            half_w = rng.uniform(0.24, 0.27)
            half_h = rng.uniform(0.36, 0.40)
            corners = np.array(
                [
                    (-half_w, half_h),
                    (-half_w, -half_h),
                    (half_w, -half_h),
                    (half_w, half_h),
                ]
            )
            corners = corners @ rot.T + np.array([cx, cy])
            v0 = len(verts)
            verts.extend(corners)
            depth.extend([0.1 * float(part)] * 4)
            if rng.integers(2):
                tris = ((v0, v0 + 1, v0 + 2), (v0, v0 + 2, v0 + 3))
            else:
                tris = ((v0 + 1, v0 + 2, v0 + 3), (v0 + 1, v0 + 3, v0))
            faces.extend(tris)
            parts.extend([part, part])
        scenes.append(
            (
                np.asarray(verts, dtype=np.float64),
                np.asarray(depth, dtype=np.float64),
                np.asarray(faces, dtype=np.int32),
                np.asarray(parts, dtype=np.int32),
            )
        )
    return scenes
