"""Synthetic observation generation and dataset (de)serialization.

A dataset directory holds ``model.json``, per-sample JSON files under
``samples/``, part-label masks under ``masks/`` (PGM, values 0..6), and a
``manifest.json`` with a content hash over every file it references, written
last. Loading verifies the hash so silent corruption or manual edits surface
as :class:`DataError`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body_model import BodyModel, MeshParams, forward, load_model, save_model
from .camera import CameraParams, project
from .errors import ConfigError, DataError, FormatError, IoError
from .renderer import RenderConfig, rasterize_hard_labels
from .renderer.io import load_labels, save_labels

DATASET_FORMAT = "omrfit-ds/1"
SAMPLE_FORMAT = "omrfit-sample/1"
ANNOTATION_FORMAT = "omrfit-ann/1"


@dataclass
class Observation:
    """One training/eval item: noisy 2D keypoints plus a part-label mask."""

    sample_id: str
    keypoints2d: np.ndarray  # (K, 2) normalized image coords
    visibility: np.ndarray  # (K,) bool
    mask: np.ndarray | None = None  # (H, W) uint8 labels 0..6
    gt_params: MeshParams | None = None
    ann_params: MeshParams | None = None
    noise: float = 0.0


@dataclass
class Dataset:
    manifest: dict
    model: BodyModel
    samples: list = field(default_factory=list)
    root: Path | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self):
        return [s.sample_id for s in self.samples]

    def sample(self, sample_id):
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise DataError(f"dataset has no sample {sample_id!r}")


@dataclass(frozen=True)
class Annotation:
    """Fitted parameters recorded for a dataset sample."""

    sample_id: str
    params: MeshParams
    method: str
    schedule: str | None
    seed: int
    final_losses: dict


def truncated_normal(rng, size, bound=2.5):
    """Standard normal samples, resampling anything outside [-bound, bound]."""
    out = np.atleast_1d(rng.normal(size=size))
    while True:
        bad = np.abs(out) > bound
        if not bad.any():
            return out
        out[bad] = rng.normal(size=int(bad.sum()))


def sample_shape(rng, model, distribution="normal"):
    """Truncated-normal shape coefficients; 'obese' shifts the girth axis +3."""
    beta = truncated_normal(rng, model.n_shape)
    if distribution == "obese":
        beta = beta.copy()
        beta[0] += 3.0
    elif distribution != "normal":
        raise ConfigError(f"unknown shape distribution {distribution!r}")
    return beta


def spine_joints(model):
    """Root plus every joint with two or more children (torso chain)."""
    n_children = np.zeros(model.n_joints, dtype=int)
    for j in range(1, model.n_joints):
        n_children[model.parents[j]] += 1
    spine = {0} | {j for j in range(model.n_joints) if n_children[j] >= 2}
    return spine


def sample_pose(rng, model, limb_range=0.6, spine_range=0.3):
    """Bounded-uniform axis-angle pose; spine joints get the tighter range."""
    spine = spine_joints(model)
    theta = np.empty(3 * model.n_joints)
    for j in range(model.n_joints):
        r = spine_range if j in spine else limb_range
        theta[3 * j : 3 * j + 3] = rng.uniform(-r, r, size=3)
    return theta


def sample_camera(rng):
    return CameraParams(
        scale=float(rng.uniform(0.6, 1.1)),
        trans=rng.uniform(-0.2, 0.2, size=2),
    )


def synth_observation(model, rng, sample_id, distribution="normal", noise=0.01, resolution=64):
    """Draw parameters, render the ground-truth mask, perturb the keypoints."""
    beta = sample_shape(rng, model, distribution)
    theta = sample_pose(rng, model)
    cam = sample_camera(rng)
    params = MeshParams(beta=beta, theta=theta, scale=cam.scale, trans=cam.trans.copy())
    verts, joints = forward(model, params)
    kp = project(joints, cam)
    if noise > 0:
        kp = kp + rng.normal(size=kp.shape) * noise
    labels = rasterize_hard_labels(
        project(verts, cam), verts[:, 2], model.faces, model.face_part,
        RenderConfig(resolution=resolution),
    )
    return Observation(
        sample_id=sample_id,
        keypoints2d=kp,
        visibility=np.ones(model.n_joints, dtype=bool),
        mask=labels,
        gt_params=params,
        noise=float(noise),
    )


def _sample_doc(obs):
    return {
        "version": SAMPLE_FORMAT,
        "sample_id": obs.sample_id,
        "keypoints2d": obs.keypoints2d.tolist(),
        "visibility": obs.visibility.astype(int).tolist(),
        "noise": obs.noise,
        "gt_params": obs.gt_params.to_dict() if obs.gt_params is not None else None,
    }


def _hash_files(root, rel_paths):
    h = hashlib.sha256()
    for rel in rel_paths:
        h.update(rel.encode("ascii") + b"\0")
        h.update((root / rel).read_bytes())
    return h.hexdigest()


def _content_files(ids):
    files = ["model.json"]
    for sid in ids:
        files.append(f"samples/{sid}.json")
        files.append(f"masks/{sid}_labels.pgm")
    return files


def synth_dataset(model, n, out_dir, *, distribution="normal", noise=0.01, seed=0,
                  resolution=64, split="train"):
    """Generate ``n`` samples into ``out_dir`` and return the loaded dataset."""
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    root = Path(out_dir)
    try:
        (root / "samples").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create dataset directory {root}: {e}") from e
    save_model(model, root / "model.json")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        obs = synth_observation(model, rng, f"s{i:04d}", distribution, noise, resolution)
        samples.append(obs)
        doc = _sample_doc(obs)
        try:
            (root / "samples" / f"{obs.sample_id}.json").write_text(json.dumps(doc), "ascii")
        except OSError as e:
            raise IoError(f"cannot write sample {obs.sample_id}: {e}") from e
        save_labels(root / "masks" / f"{obs.sample_id}_labels.pgm", obs.mask)
    ids = [s.sample_id for s in samples]
    manifest = {
        "version": DATASET_FORMAT,
        "split": split,
        "distribution": distribution,
        "seed": seed,
        "noise": noise,
        "resolution": resolution,
        "n": n,
        "model_file": "model.json",
        "samples": ids,
        "content_hash": _hash_files(root, _content_files(ids)),
    }
    try:
        (root / "manifest.json").write_text(json.dumps(manifest, indent=1), "ascii")
    except OSError as e:
        raise IoError(f"cannot write manifest: {e}") from e
    return Dataset(manifest=manifest, model=model, samples=samples, root=root)


def _load_sample(root, sid):
    path = root / "samples" / f"{sid}.json"
    try:
        raw = path.read_text("ascii")
    except OSError as e:
        raise IoError(f"cannot read sample {sid}: {e}") from e
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"sample {sid} is not valid JSON: {e.msg}", offset=e.pos) from e
    if doc.get("version") != SAMPLE_FORMAT:
        raise FormatError(f"sample {sid}: expected version {SAMPLE_FORMAT!r}, got {doc.get('version')!r}")
    mask = load_labels(root / "masks" / f"{sid}_labels.pgm")
    gt = doc.get("gt_params")
    return Observation(
        sample_id=doc["sample_id"],
        keypoints2d=np.asarray(doc["keypoints2d"], dtype=np.float64),
        visibility=np.asarray(doc["visibility"], dtype=bool),
        mask=mask,
        gt_params=MeshParams.from_dict(gt) if gt is not None else None,
        noise=float(doc.get("noise", 0.0)),
    )


def load_dataset(path, verify=True):
    """Load a dataset directory; ``verify`` checks the manifest content hash."""
    root = Path(path)
    try:
        raw = (root / "manifest.json").read_text("ascii")
    except OSError as e:
        raise IoError(f"cannot read dataset manifest in {root}: {e}") from e
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"dataset manifest is not valid JSON: {e.msg}", offset=e.pos) from e
    if manifest.get("version") != DATASET_FORMAT:
        raise FormatError(
            f"expected dataset version {DATASET_FORMAT!r}, got {manifest.get('version')!r}"
        )
    ids = manifest.get("samples", [])
    if verify:
        actual = _hash_files(root, _content_files(ids))
        if actual != manifest.get("content_hash"):
            raise DataError(
                f"dataset content hash mismatch in {root}: files were modified after generation"
            )
    model = load_model(root / manifest.get("model_file", "model.json"))
    samples = [_load_sample(root, sid) for sid in ids]
    return Dataset(manifest=manifest, model=model, samples=samples, root=root)


def _annotation_doc(ann):
    return {
        "version": ANNOTATION_FORMAT,
        "sample_id": ann.sample_id,
        "beta": ann.params.beta.tolist(),
        "theta": ann.params.theta.tolist(),
        "scale": float(ann.params.scale),
        "trans": ann.params.trans.tolist(),
        "method": ann.method,
        "schedule": ann.schedule,
        "seed": int(ann.seed),
        "final_losses": {k: float(v) for k, v in ann.final_losses.items()},
    }


def save_annotations(annotations, out_dir):
    """Write one JSON per annotation into ``out_dir``."""
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create annotation directory {root}: {e}") from e
    for ann in annotations:
        path = root / f"{ann.sample_id}.json"
        try:
            path.write_text(json.dumps(_annotation_doc(ann)), "ascii")
        except OSError as e:
            raise IoError(f"cannot write annotation {ann.sample_id}: {e}") from e


def load_annotations(path):
    """Read every annotation JSON in a directory, sorted by sample id."""
    root = Path(path)
    if not root.is_dir():
        raise IoError(f"annotation directory {root} does not exist")
    anns = []
    for f in sorted(root.glob("*.json")):
        if f.name == "manifest.json":
            continue
        try:
            doc = json.loads(f.read_text("ascii"))
        except OSError as e:
            raise IoError(f"cannot read annotation {f}: {e}") from e
        except json.JSONDecodeError as e:
            raise FormatError(f"annotation {f.name} is not valid JSON: {e.msg}", offset=e.pos) from e
        if doc.get("version") != ANNOTATION_FORMAT:
            raise FormatError(
                f"annotation {f.name}: expected version {ANNOTATION_FORMAT!r}, got {doc.get('version')!r}"
            )
        try:
            params = MeshParams(
                beta=np.asarray(doc["beta"], dtype=np.float64),
                theta=np.asarray(doc["theta"], dtype=np.float64),
                scale=float(doc["scale"]),
                trans=np.asarray(doc["trans"], dtype=np.float64),
            )
            anns.append(Annotation(
                sample_id=doc["sample_id"],
                params=params,
                method=doc["method"],
                schedule=doc.get("schedule"),
                seed=int(doc.get("seed", 0)),
                final_losses=doc.get("final_losses", {}),
            ))
        except KeyError as e:
            raise FormatError(f"annotation {f.name} missing field {e.args[0]!r}") from e
    return anns


def merge_annotations(dataset, annotations, force=False):
    """Attach annotations to dataset samples in place; returns the count.

    Unknown sample ids raise DataError. Re-annotating a sample that already
    carries annotations requires ``force=True``.
    """
    by_id = {s.sample_id: s for s in dataset.samples}
    count = 0
    for ann in annotations:
        obs = by_id.get(ann.sample_id)
        if obs is None:
            raise DataError(f"annotation {ann.sample_id!r} does not match any dataset sample")
        if obs.ann_params is not None and not force:
            raise DataError(
                f"sample {ann.sample_id!r} already annotated; pass force=True to overwrite"
            )
        obs.ann_params = ann.params
        count += 1
    return count
