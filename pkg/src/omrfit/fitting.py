"""Mesh fitting: direct optimization, regressor fine-tuning, and alternation.

Three methods share one Adam phase runner:

* ``smplify`` - optimize mesh parameters directly against one observation.
* ``eft``     - optimize the regressor weights so its prediction fits the
  observation (the mesh is always the network output).
* ``omr``     - alternate the two: a pure-reprojection regressor phase (P0),
  then mesh phases (Q) and regressor phases (P) per a schedule such as
  ``5P4Q``. Each Q result anchors the following P phase; the fit returns
  whatever the final phase produced.

Schedules are written ``<a>P<b>Q`` with ``a`` P-phases (counting P0) and
``b`` Q-phases; alternation requires ``a`` equal to ``b`` or ``b + 1``.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .body_model import MeshParams
from .data_synth import Annotation, sample_pose, save_annotations
from .errors import ConfigError, DataError, FormatError, IoError, NumericsError, ScheduleError
from .losses import LossWeights, PosePrior, loss_components, p_objective, q_objective
from .optim import AdamState, adam_step
from .regressor import featurize, predict
from .renderer import RenderConfig

FIT_FORMAT = "omrfit-fit/1"
_SCHEDULE_RE = re.compile(r"^(\d+)P(\d+)Q$")
_MIN_SCALE = 1e-4  # mesh-phase camera scale is projected onto [_MIN_SCALE, inf)


@dataclass(frozen=True)
class Schedule:
    text: str
    n_p: int
    n_q: int
    phases: tuple

    def __str__(self):
        return self.text


def parse_schedule(text):
    """Parse ``"<a>P<b>Q"`` into the phase sequence P0, Q, P, Q, ..."""
    if isinstance(text, Schedule):
        return text
    m = _SCHEDULE_RE.match(str(text).strip())
    if not m:
        raise ScheduleError(f"schedule must look like '5P4Q', got {text!r}")
    a, b = int(m.group(1)), int(m.group(2))
    if a < 1 or b < 1:
        raise ScheduleError(f"schedule counts must be >= 1, got {a}P{b}Q")
    if a not in (b, b + 1):
        raise ScheduleError(
            f"alternation needs the P count in {{Q, Q+1}}, got {a}P{b}Q"
        )
    phases = ["P0"]
    for i in range(b):
        phases.append("Q")
        if i < a - 1:
            phases.append("P")
    return Schedule(text=f"{a}P{b}Q", n_p=a, n_q=b, phases=tuple(phases))


@dataclass(frozen=True)
class FitConfig:
    method: str = "omr"  # smplify | eft | omr
    schedule: str = "5P4Q"  # omr only
    iters: int = 20  # smplify/eft iteration budget
    iters_per_phase: int = 20  # omr iterations per phase
    lr_q: float = 1e-3  # mesh-phase learning rate
    lr_p: float = 1e-6  # regressor-phase learning rate
    gamma: float = 40.0  # silhouette sharpness when the shape term is active
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    freeze_cam: bool = False  # mesh phases leave (scale, trans) untouched
    p_restart: bool = False  # every P phase restarts from the pretrained weights

    def __post_init__(self):
        if self.method not in ("smplify", "eft", "omr"):
            raise ConfigError(f"method must be smplify, eft or omr, got {self.method!r}")
        if self.iters < 0 or self.iters_per_phase < 1:
            raise ConfigError("iteration counts must be non-negative (>= 1 per phase)")
        if self.lr_q <= 0 or self.lr_p <= 0:
            raise ConfigError("learning rates must be positive")
        if self.method == "omr":
            parse_schedule(self.schedule)

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        d = {
            "method": self.method,
            "schedule": self.schedule if self.method == "omr" else None,
            "iters": self.iters,
            "iters_per_phase": self.iters_per_phase,
            "lr_q": self.lr_q,
            "lr_p": self.lr_p,
            "gamma": self.gamma,
            "seed": self.seed,
            "freeze_cam": self.freeze_cam,
            "p_restart": self.p_restart,
            "weights": {
                "lambda_2d": self.weights.lambda_2d,
                "lambda_theta": self.weights.lambda_theta,
                "lambda_beta": self.weights.lambda_beta,
                "lambda_shape": self.weights.lambda_shape,
                "lambda_anchor": self.weights.lambda_anchor,
                "sigma": self.weights.sigma,
                "gm_per": self.weights.gm_per,
            },
        }
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("ascii")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PhaseTrace:
    kind: str  # P0 | Q | P | smplify | eft
    losses: list  # objective before each step (length = iterations run)
    final_loss: float  # objective after the last step

    def to_dict(self):
        return {
            "kind": self.kind,
            "losses": [float(v) for v in self.losses],
            "final_loss": float(self.final_loss),
        }


@dataclass
class FitResult:
    params: MeshParams
    phases: list
    final_losses: dict
    provenance: dict
    flags: list = field(default_factory=list)
    sample_id: str | None = None
    wall_time: float = 0.0  # seconds; informational only, never serialized

    def to_dict(self):
        return {
            "version": FIT_FORMAT,
            "sample_id": self.sample_id,
            "params": self.params.to_dict(),
            "final_losses": {k: float(v) for k, v in self.final_losses.items()},
            "phases": [p.to_dict() for p in self.phases],
            "flags": list(self.flags),
            "provenance": self.provenance,
        }


def default_pose_prior(model, seed=0, n_samples=512, latent_dim=12):
    """Whitened prior fitted to the synthetic pose distribution."""
    rng = np.random.default_rng(seed)
    thetas = np.stack([sample_pose(rng, model) for _ in range(n_samples)])
    return PosePrior.fit(thetas, latent_dim=latent_dim)


def _theta_vector(params, n_shape, n_joints):
    layout = ad.ParamLayout((
        ("beta", (n_shape,)),
        ("theta", (3 * n_joints,)),
        ("scale", (1,)),
        ("trans", (2,)),
    ))
    values = np.concatenate([params.beta, params.theta, [params.scale], params.trans])
    return ad.ParamVector(values.astype(np.float64), layout)


def _vector_params(pv):
    return MeshParams(
        beta=pv.segment("beta").copy(),
        theta=pv.segment("theta").copy(),
        scale=float(pv.segment("scale")[0]),
        trans=pv.segment("trans").copy(),
    )


def _run_phase(kind, objective, pv, lr, iters, freeze=(), clamp_scale=False):
    """Adam minimization of ``objective`` over ``pv``; returns (pv, PhaseTrace)."""
    state = AdamState.init(pv.values.size, lr=lr)
    losses = []
    frozen = [pv.layout.segment_slice(name) for name in freeze]
    scale_slice = pv.layout.segment_slice("scale") if clamp_scale else None
    for it in range(int(iters)):
        try:
            val, grad = ad.value_and_grad(objective, pv)
        except NumericsError as e:
            raise NumericsError(str(e), primitive=e.primitive, iteration=it) from e
        losses.append(float(val))
        for sl in frozen:
            grad[sl] = 0.0
        new_vals, state = adam_step(state, pv.values, grad)
        if scale_slice is not None:
            new_vals[scale_slice] = np.maximum(new_vals[scale_slice], _MIN_SCALE)
        pv = pv.replace(new_vals)
    final = ad.evaluate(objective, pv)
    trace = PhaseTrace(kind=kind, losses=losses, final_loss=float(final))
    return pv, trace


def _render_cfg(obs, config):
    if getattr(obs, "mask", None) is None:
        return None
    return RenderConfig(resolution=obs.mask.shape[0], gamma=config.gamma)


def _provenance(model, config, extra=None):
    prov = {
        "model": model.name,
        "method": config.method,
        "schedule": config.schedule if config.method == "omr" else None,
        "seed": config.seed,
        "config_hash": config.config_hash(),
    }
    if extra:
        prov.update(extra)
    return prov


def _flags_from(traces):
    flags = []
    for i, t in enumerate(traces):
        if t.losses and t.final_loss > t.losses[0] + 1e-9:
            flags.append(f"phase{i}:{t.kind}:non-monotone")
    return flags


def fit_smplify(model, obs, config, init=None, prior=None):
    """Direct mesh-parameter optimization against one observation."""
    t0 = time.perf_counter()
    prior = prior or default_pose_prior(model, config.seed)
    init = init or MeshParams.neutral(model.n_shape, model.n_joints)
    cfg = _render_cfg(obs, config)
    pv = _theta_vector(init, model.n_shape, model.n_joints)

    def objective(segs):
        return q_objective(model, segs, obs, prior, config.weights, cfg)

    freeze = ("scale", "trans") if config.freeze_cam else ()
    pv, trace = _run_phase("smplify", objective, pv, config.lr_q, config.iters, freeze, clamp_scale=True)
    params = _vector_params(pv)
    final = loss_components(model, params, obs, prior, config.weights, cfg)
    final["objective"] = trace.final_loss
    return FitResult(
        params=params, phases=[trace], final_losses=final,
        provenance=_provenance(model, config), flags=_flags_from([trace]),
        sample_id=getattr(obs, "sample_id", None), wall_time=time.perf_counter() - t0,
    )


def fit_eft(model, arch, alpha, obs, config, prior=None):
    """Fine-tune the regressor weights on one observation (no anchor).

    ``config.iters == 0`` returns the pretrained prediction unchanged.
    """
    t0 = time.perf_counter()
    cfg = _render_cfg(obs, config)
    feats = featurize(obs, model.n_joints)

    def objective(segs):
        return p_objective(model, arch, segs, obs, config.weights, None, cfg, feats)

    pv = alpha.copy()
    traces = []
    if config.iters > 0:
        pv, trace = _run_phase("eft", objective, pv, config.lr_p, config.iters)
        traces.append(trace)
    params = predict(arch, pv, feats)
    prior = prior or default_pose_prior(model, config.seed)
    final = loss_components(model, params, obs, prior, config.weights, cfg)
    final["objective"] = float(ad.evaluate(objective, pv))
    return FitResult(
        params=params, phases=traces, final_losses=final,
        provenance=_provenance(model, config), flags=_flags_from(traces),
        sample_id=getattr(obs, "sample_id", None), wall_time=time.perf_counter() - t0,
    )


def fit_omr(model, arch, alpha, obs, config, prior=None):
    """Alternating regressor/mesh optimization per ``config.schedule``."""
    t0 = time.perf_counter()
    schedule = parse_schedule(config.schedule)
    prior = prior or default_pose_prior(model, config.seed)
    cfg = _render_cfg(obs, config)
    feats = featurize(obs, model.n_joints)
    weights = config.weights
    weights_p0 = weights.with_(lambda_shape=0.0)

    alpha0 = alpha.copy()  # pretrained weights, for p_restart
    alpha_pv = alpha.copy()
    params = None
    anchor = None
    traces = []
    for kind in schedule.phases:
        if kind == "P0":

            def objective(segs):
                return p_objective(model, arch, segs, obs, weights_p0, None, cfg, feats)

            alpha_pv, trace = _run_phase("P0", objective, alpha_pv, config.lr_p, config.iters_per_phase)
            params = predict(arch, alpha_pv, feats)
        elif kind == "Q":
            pv = _theta_vector(params, model.n_shape, model.n_joints)

            def objective(segs):
                return q_objective(model, segs, obs, prior, weights, cfg)

            freeze = ("scale", "trans") if config.freeze_cam else ()
            pv, trace = _run_phase("Q", objective, pv, config.lr_q, config.iters_per_phase,
                                   freeze, clamp_scale=True)
            params = _vector_params(pv)
            anchor = params
        else:  # P
            if config.p_restart:
                alpha_pv = alpha0.copy()

            def objective(segs, anchor=anchor):
                return p_objective(model, arch, segs, obs, weights, anchor, cfg, feats)

            alpha_pv, trace = _run_phase("P", objective, alpha_pv, config.lr_p, config.iters_per_phase)
            params = predict(arch, alpha_pv, feats)
        traces.append(trace)
    final = loss_components(model, params, obs, prior, weights, cfg)
    final["objective"] = traces[-1].final_loss
    return FitResult(
        params=params, phases=traces, final_losses=final,
        provenance=_provenance(model, config, {"n_phases": len(traces)}),
        flags=_flags_from(traces),
        sample_id=getattr(obs, "sample_id", None), wall_time=time.perf_counter() - t0,
    )


def run_fit(model, obs, config, *, arch=None, alpha=None, init=None, prior=None):
    """Dispatch on ``config.method``; regressor methods need ``arch``/``alpha``."""
    if config.method == "smplify":
        if init is None and arch is not None and alpha is not None:
            init = predict(arch, alpha, featurize(obs, model.n_joints))
        return fit_smplify(model, obs, config, init=init, prior=prior)
    if arch is None or alpha is None:
        raise ConfigError(f"method {config.method!r} needs a pretrained regressor")
    if config.method == "eft":
        return fit_eft(model, arch, alpha, obs, config, prior=prior)
    return fit_omr(model, arch, alpha, obs, config, prior=prior)


def annotate_dataset(model, dataset, config, *, arch=None, alpha=None, prior=None, out_dir=None):
    """Fit every dataset sample; returns (annotations, summary dict).

    Samples with no visible keypoint are recorded as failures and skipped.
    When ``out_dir`` is given the annotations plus a ``manifest.json`` summary
    are written there.
    """
    prior = prior or default_pose_prior(model, config.seed)
    annotations = []
    failures = []
    for obs in dataset.samples:
        if int(np.asarray(obs.visibility, dtype=bool).sum()) == 0:
            failures.append({"sample_id": obs.sample_id, "reason": "no visible keypoints"})
            continue
        result = run_fit(model, obs, config, arch=arch, alpha=alpha, prior=prior)
        annotations.append(Annotation(
            sample_id=obs.sample_id,
            params=result.params,
            method=config.method,
            schedule=config.schedule if config.method == "omr" else None,
            seed=config.seed,
            final_losses=result.final_losses,
        ))
    summary = {
        "version": "omrfit-ann-manifest/1",
        "n_samples": len(dataset.samples),
        "n_annotated": len(annotations),
        "n_failed": len(failures),
        "failures": failures,
        "method": config.method,
        "schedule": config.schedule if config.method == "omr" else None,
        "seed": config.seed,
        "config_hash": config.config_hash(),
    }
    if annotations:
        summary["mean_final_losses"] = {
            k: float(np.mean([a.final_losses[k] for a in annotations if k in a.final_losses]))
            for k in annotations[0].final_losses
        }
    if out_dir is not None:
        save_annotations(annotations, out_dir)
        try:
            (Path(out_dir) / "manifest.json").write_text(json.dumps(summary, indent=1), "ascii")
        except OSError as e:
            raise IoError(f"cannot write annotation manifest: {e}") from e
    return annotations, summary


def save_fit(path, result):
    try:
        Path(path).write_text(json.dumps(result.to_dict(), indent=1), "ascii")
    except OSError as e:
        raise IoError(f"cannot write fit file {path}: {e}") from e


def load_fit(path):
    """Read one fit file -> (sample_id, MeshParams, full document)."""
    try:
        raw = Path(path).read_text("ascii")
    except OSError as e:
        raise IoError(f"cannot read fit file {path}: {e}") from e
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"fit file is not valid JSON: {e.msg}", offset=e.pos) from e
    if doc.get("version") != FIT_FORMAT:
        raise FormatError(f"expected fit version {FIT_FORMAT!r}, got {doc.get('version')!r}")
    try:
        params = MeshParams.from_dict(doc["params"])
    except KeyError as e:
        raise FormatError(f"fit file missing field {e.args[0]!r}") from e
    return doc.get("sample_id"), params, doc


def load_fits(directory):
    """Read every fit JSON in a directory -> {sample_id: MeshParams}."""
    root = Path(directory)
    if not root.is_dir():
        raise IoError(f"fit directory {root} does not exist")
    fits = {}
    for f in sorted(root.glob("*.json")):
        sid, params, _ = load_fit(f)
        if sid is None:
            raise FormatError(f"fit file {f.name} has no sample_id")
        if sid in fits:
            raise DataError(f"duplicate fits for sample {sid!r}")
        fits[sid] = params
    if not fits:
        raise DataError(f"no fit files found in {root}")
    return fits
