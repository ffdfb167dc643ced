"""Central finite-difference checks of the analytic loss and encoder gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.typing import NDArray

from contrastive_gap.encoders import backward, encoder_init, forward_cached
from contrastive_gap.losses import LossConfig, composite_gradient, composite_loss

Array = NDArray[np.float64]

STEP = 1e-5
# entrywise errors are measured against max(|analytic|, |numeric|, FLOOR)
FLOOR = 1e-6
TEMPERATURES = (1.0, 0.07, 0.01)
CHECKS = {
    "clip": LossConfig(w_clip=1),
    "uniform": LossConfig(w_clip=0, w_uniform=1),
    "xuniform": LossConfig(w_clip=0, w_xuniform=1),
    "align": LossConfig(w_clip=0, w_align=1),
    "CLIP": LossConfig.variant("clip"),
    "CUA": LossConfig.variant("cua"),
    "CUAXU": LossConfig.variant("cuaxu"),
}


def numeric_gradient(f: Callable[[], float], arrays: list[Array], h: float = STEP) -> list[Array]:
    """Central differences of ``f()`` w.r.t. every entry of ``arrays`` (perturbed in place)."""
    out = []
    for x in arrays:
        g = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = x[i]
            x[i] = orig + h
            hi = f()
            x[i] = orig - h
            lo = f()
            x[i] = orig
            g[i] = (hi - lo) / (2 * h)
        out.append(g)
    return out


def relative_error(analytic: list[Array], numeric: list[Array]) -> float:
    """Norm-wise ||a - n|| / max(||a||, ||n||) over all arrays jointly."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def entrywise_error(analytic: list[Array], numeric: list[Array], floor: float = FLOOR) -> float:
    """Largest per-entry |a - n| / max(|a|, |n|, floor).

    Stricter than :func:`relative_error`: at small temperatures the
    O(h^2 / tau^3) truncation error of central differences shows up on
    small entries even when the analytic gradient is exact.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def _instance(rng: np.random.Generator, n: int, d: int) -> tuple[Array, Array]:
    x = rng.standard_normal((2, n, d))
    x /= np.linalg.norm(x, axis=2, keepdims=True)
    return x[0], x[1]


def loss_errors(instances: int = 10, n: int = 8, d: int = 16, temperatures=TEMPERATURES,
                seed: int = 0) -> dict[str, dict[str, float]]:
    """Worst norm-wise and entrywise errors per loss term and composite.

    Runs over ``instances`` random unit-norm batches at every temperature.
    The clip-only composite is the clip term itself and is not re-differenced.
    """
    rng = np.random.default_rng(seed)
    worst = {name: {"relative": 0.0, "entrywise": 0.0} for name in CHECKS}
    for _ in range(instances):
        images, texts = _instance(rng, n, d)
        for tau in temperatures:
            for name, base in CHECKS.items():
                if name == "CLIP":
                    continue
                cfg = LossConfig(tau, base.w_clip, base.w_uniform, base.w_xuniform, base.w_align)
                g = composite_gradient((images, texts), cfg)
                num = numeric_gradient(lambda: composite_loss((images, texts), cfg).total,
                                       [images, texts])
                ana = [g.d_images, g.d_texts]
                w = worst[name]
                w["relative"] = max(w["relative"], relative_error(ana, num))
                w["entrywise"] = max(w["entrywise"], entrywise_error(ana, num))
    worst["CLIP"] = dict(worst["clip"])
    return worst


def encoder_error(instances: int = 3, batch: int = 4, output_dim: int = 8,
                  seed: int = 0) -> dict[str, float]:
    """Worst errors of encoder backprop for a random linear functional of the outputs."""
    rng = np.random.default_rng(seed)
    worst = {"relative": 0.0, "entrywise": 0.0}
    for k in range(instances):
        enc = encoder_init([6, 10, 10, output_dim], seed * 1000 + k)
        x = rng.standard_normal((batch, 6))
        upstream = rng.standard_normal((batch, output_dim))
        grads = backward(enc, x, upstream)
        num = numeric_gradient(lambda: float(np.sum(forward_cached(enc, x).out * upstream)),
                               enc.params())
        worst["relative"] = max(worst["relative"], relative_error(grads, num))
        worst["entrywise"] = max(worst["entrywise"], entrywise_error(grads, num))
    return worst
