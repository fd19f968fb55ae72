"""Time the rasterizer kernels: Cython extension vs numpy fallback.

Runs soft forward, soft forward+backward, and hard rasterization on a
twelve-face block scene and on the full toy body, at two resolutions,
once per available backend. Usage::

    python benchmarks/kernel_benchmark.py [--repeats N]
"""

import argparse
import time

import numpy as np

from omrfit import autodiff as ad
from omrfit import renderer
from omrfit.bench import suite_meshes
from omrfit.body_model import MeshParams, forward, make_toy_model
from omrfit.camera import CameraParams, project


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _scenes():
    verts, depth, faces, parts = suite_meshes(n=1, seed=0)[0]
    out = {"blocks": (verts, depth, faces, parts)}

    model = make_toy_model(seed=0)
    rng = np.random.default_rng(3)
    params = MeshParams(
        beta=rng.normal(size=model.n_shape),
        theta=rng.uniform(-0.4, 0.4, 3 * model.n_joints),
        scale=0.9,
        trans=np.zeros(2),
    )
    v3, _ = forward(model, params)
    v2 = project(v3, CameraParams(params.scale, params.trans))
    out["body"] = (v2, v3[:, 2], model.faces, model.face_part)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="Timings report the best of this many runs.")
    args = parser.parse_args()

    kernels = ["numpy"]
    try:
        renderer.set_kernel("cython")
        kernels.insert(0, "cython")
    except Exception:
        print("cython extension not built; timing the numpy fallback only")

    scenes = _scenes()
    rows = []
    for kernel in kernels:
        renderer.set_kernel(kernel)
        for scene_name, (verts, depth, faces, parts) in scenes.items():
            for res in (32, 64):
                cfg = renderer.RenderConfig(resolution=res, gamma=400.0)

                def soft():
                    renderer.rasterize_soft(verts, faces, parts, cfg)

                def soft_grad():
                    leaf = ad.asvar(verts)
                    stack = renderer.rasterize_soft_vars(leaf, faces, parts, cfg)
                    ad.backward((stack * stack).sum())

                def hard():
                    renderer.rasterize_hard_labels(verts, depth, faces, parts, cfg)

                rows.append((
                    kernel, scene_name, res,
                    _best_of(soft, args.repeats),
                    _best_of(soft_grad, args.repeats),
                    _best_of(hard, args.repeats),
                ))

    print(f"{'kernel':<8} {'scene':<8} {'res':>4} {'soft ms':>9} {'soft+grad ms':>13} {'hard ms':>9}")
    for kernel, scene, res, t_soft, t_grad, t_hard in rows:
        print(f"{kernel:<8} {scene:<8} {res:>4} {t_soft * 1e3:>9.2f} "
              f"{t_grad * 1e3:>13.2f} {t_hard * 1e3:>9.2f}")

    if len(kernels) == 2:
        print("\nspeedup (numpy time / cython time):")
        half = len(rows) // 2
        for cy, np_ in zip(rows[:half], rows[half:]):
            print(f"  {cy[1]:<8} res {cy[2]:>3}: soft {np_[3] / cy[3]:>5.1f}x "
                  f"soft+grad {np_[4] / cy[4]:>5.1f}x hard {np_[5] / cy[5]:>5.1f}x")


if __name__ == "__main__":
    main()
