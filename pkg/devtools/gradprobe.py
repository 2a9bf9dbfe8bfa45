"""Dev probe: analytic rasterizer gradients vs central finite differences."""

import numpy as np

from sceneforge.geometry import CameraIntrinsics, CameraPose
from sceneforge.splat import GaussianScene, render_backward, render_cached


def make_scene(rng, n=50):
    centers = np.column_stack(
        [rng.uniform(-1.2, 1.2, n), rng.uniform(-1.2, 1.2, n), rng.uniform(2.0, 5.0, n)]
    )
    colors = rng.uniform(0.05, 0.95, (n, 3))
    logits = rng.uniform(-1.5, 2.0, n)
    log_scales = rng.uniform(np.log(0.03), np.log(0.25), (n, 3))
    q = rng.normal(0, 1, (n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianScene(centers, colors, logits, log_scales, q)


def loss_and_grad(scene, K, E, bg, wc, wd):
    out, cache = render_cached(scene, K, E, bg)
    val = float(np.sum(wc * out.color))
    grad_depth = None
    if wd is not None:
        dvals = np.where(out.depth.validity, out.depth.values, 0.0)
        val += float(np.sum(wd * dvals))
        grad_depth = wd * out.depth.validity
    grads = render_backward(scene, K, E, wc, grad_depth, cache=cache)
    return val, grads


def loss_only(scene, K, E, bg, wc, wd):
    out, _ = render_cached(scene, K, E, bg)
    val = float(np.sum(wc * out.color))
    if wd is not None:
        val += float(np.sum(wd * np.where(out.depth.validity, out.depth.values, 0.0)))
    return val


def fd_check(n=50, size=32, h=1e-4, use_depth=False, seed=3):
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics(fx=40.0, fy=40.0, cx=(size - 1) / 2, cy=(size - 1) / 2,
                         width=size, height=size)
    E = CameraPose.identity()
    bg = (0.13, 0.21, 0.34)
    scene = make_scene(rng, n)
    wc = rng.normal(0, 1, (size, size, 3))
    wd = None
    if use_depth:
        # Weight depth only where coverage is solid in the base render;
        # expected depth is not meaningfully defined on near-empty pixels
        # and the validity set itself is not differentiable.
        base_out, _ = render_cached(scene, K, E, bg)
        wd = rng.normal(0, 1, (size, size)) * 0.1 * (base_out.alpha > 0.5)

    _, grads = loss_and_grad(scene, K, E, bg, wc, wd)
    analytic = {
        "centers": grads.centers,
        "colors": grads.colors,
        "opacity_logits": grads.opacity_logits,
        "log_scales": grads.log_scales,
        "rotations": grads.rotations,
    }

    results = {}
    for name in analytic:
        base = getattr(scene, name).astype(np.float64)
        fd = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            plus = base.copy()
            plus[idx] += h
            minus = base.copy()
            minus[idx] -= h
            # account for float32 storage quantization
            p32 = plus.astype(np.float32).astype(np.float64)
            m32 = minus.astype(np.float32).astype(np.float64)
            heff = p32[idx] - m32[idx]
            sp = scene.replace(**{name: plus.astype(np.float32)})
            sm = scene.replace(**{name: minus.astype(np.float32)})
            fd[idx] = (loss_only(sp, K, E, bg, wc, wd) - loss_only(sm, K, E, bg, wc, wd)) / heff
            it.iternext()
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-7)
        rel = np.abs(a - fd) / denom
        ok = (rel < 1e-3) | (np.abs(a - fd) < 1e-8)
        results[name] = (ok.mean(), rel.max(), np.abs(a - fd).max())
    return results


if __name__ == "__main__":
    for use_depth in (False, True):
        print(f"--- depth gradients: {use_depth} ---")
        for name, (frac, relmax, absmax) in fd_check(use_depth=use_depth).items():
            print(f"{name:16s} pass={frac * 100:6.2f}%  rel_max={relmax:.3e}  abs_max={absmax:.3e}")
