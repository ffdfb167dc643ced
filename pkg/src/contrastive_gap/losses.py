"""Multi-modal contrastive loss and the uniformity/alignment terms.

Every term comes as a value function plus a ``*_and_grad`` twin that returns
``(value, d_images, d_texts)`` with the ambient Euclidean gradient. Distances
are computed from the actual row norms rather than assuming unit rows, so the
gradients stay exact for off-sphere perturbations (finite-difference checks).

All terms accept either a :class:`PairedEmbeddings` or a plain
``(images, texts)`` pair of arrays; the optimizer uses the latter on
minibatches to skip re-validating unit norms every step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.typing import NDArray

from contrastive_gap.embedding_space import EmbeddingSet, PairedEmbeddings
from contrastive_gap.errors import DegenerateBatch, NumericalOverflow

Array = NDArray[np.float64]
PairsLike = Union[PairedEmbeddings, "tuple[Array, Array]"]
SetLike = Union[EmbeddingSet, Array]

TERMS = ("clip", "uniform", "xuniform", "align")

# weight tuples (clip, uniform, xuniform, align) for the named loss variants
VARIANTS = {
    "clip": (1.0, 0.0, 0.0, 0.0),
    "cua": (1.0, 1.0, 0.0, 1.0),
    "cuaxu": (1.0, 1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class LossConfig:
    """Temperature plus per-term weights for the composite loss.

    ``uniform_self_terms`` keeps the j == k terms inside the uniformity sum
    (the default). Setting it to False gives the classic mean over distinct
    pairs, for sensitivity checks.
    """

    temperature: float = 0.01
    w_clip: float = 1.0
    w_uniform: float = 0.0
    w_xuniform: float = 0.0
    w_align: float = 0.0
    uniform_self_terms: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        ws = self.weights
        if any(w < 0 for w in ws.values()):
            raise ValueError("term weights must be nonnegative")
        if not any(w > 0 for w in ws.values()):
            raise ValueError("at least one term weight must be positive")

    @classmethod
    def variant(cls, name: str, temperature: float = 0.01, **kwargs) -> LossConfig:
        """Build the CLIP / CUA / CUAXU composite by (case-insensitive) name."""
        try:
            wc, wu, wx, wa = VARIANTS[name.lower()]
        except KeyError:
            raise ValueError(f"unknown loss variant {name!r}; expected one of {sorted(VARIANTS)}") from None
        return cls(temperature, wc, wu, wx, wa, **kwargs)

    @property
    def weights(self) -> dict[str, float]:
        return {"clip": self.w_clip, "uniform": self.w_uniform,
                "xuniform": self.w_xuniform, "align": self.w_align}

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "w_clip": self.w_clip,
                "w_uniform": self.w_uniform, "w_xuniform": self.w_xuniform,
                "w_align": self.w_align, "uniform_self_terms": self.uniform_self_terms}


@dataclass(frozen=True)
class LossValue:
    total: float
    per_term: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.per_term)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> LossValue:
        return cls(float(obj["total"]), {k: float(v) for k, v in obj["terms"].items()})


@dataclass(frozen=True)
class LossGradient:
    d_images: Array
    d_texts: Array


def _pair_arrays(pairs: PairsLike) -> tuple[Array, Array]:
    if isinstance(pairs, PairedEmbeddings):
        return pairs.images.rows, pairs.texts.rows
    images, texts = pairs
    return np.asarray(images, dtype=np.float64), np.asarray(texts, dtype=np.float64)


def _set_array(emb: SetLike) -> Array:
    return emb.rows if isinstance(emb, EmbeddingSet) else np.asarray(emb, dtype=np.float64)


def _logsumexp(x: Array, axis: int | None = None) -> Array:
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else out.item()


def _sq_dists(a: Array, b: Array) -> Array:
    return (np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :]
            - 2.0 * (a @ b.T))


# -- CLIP ----------------------------------------------------------------------

def clip_loss_and_grad(pairs: PairsLike, temperature: float = 0.01,
                       grad: bool = True) -> tuple[float, Array | None, Array | None]:
    images, texts = _pair_arrays(pairs)
    n = images.shape[0]
    logits = (images @ texts.T) / temperature
    lse_rows = _logsumexp(logits, axis=1)  # texts as negatives for each image
    lse_cols = _logsumexp(logits, axis=0)  # images as negatives for each text
    diag = np.diagonal(logits)
    value = (np.sum(lse_rows - diag) + np.sum(lse_cols - diag)) / (2 * n)
    if not math.isfinite(value):
        raise NumericalOverflow(f"CLIP loss is not finite at temperature {temperature}")
    if not grad:
        return float(value), None, None
    g = np.exp(logits - lse_rows[:, None]) + np.exp(logits - lse_cols[None, :])
    g[np.diag_indices(n)] -= 2.0
    g /= 2 * n * temperature
    return float(value), g @ texts, g.T @ images


def clip_loss(pairs: PairsLike, cfg: LossConfig | float = 0.01) -> LossValue:
    """Symmetric image->text / text->image cross-entropy over in-batch negatives."""
    tau = cfg.temperature if isinstance(cfg, LossConfig) else float(cfg)
    value = clip_loss_and_grad(pairs, tau, grad=False)[0]
    return LossValue(value, {"clip": value})


# -- uniformity ----------------------------------------------------------------

def uniform_loss_and_grad(emb: SetLike, self_terms: bool = True,
                          grad: bool = True) -> tuple[float, Array | None]:
    x = _set_array(emb)
    n = x.shape[0]
    d2 = _sq_dists(x, x)
    np.fill_diagonal(d2, 0.0)
    logk = -2.0 * d2
    if self_terms:
        norm = math.log(n)
    else:
        if n < 2:
            raise DegenerateBatch("uniformity without self-terms needs at least 2 rows")
        np.fill_diagonal(logk, -np.inf)
        norm = math.log(n * (n - 1))
    total = _logsumexp(logk)
    if not grad:
        return float(total - norm), None
    w = np.exp(logk - total)
    # d/dx_m sum_jk K_jk = -8 sum_k K_mk (x_m - x_k); w is K normalized by the sum
    return float(total - norm), -8.0 * (w.sum(axis=1)[:, None] * x - w @ x)


def uniform_loss(emb: SetLike, self_terms: bool = True) -> float:
    """Log of the mean Gaussian-kernel potential over all (j, k) row pairs.

    With the default ``self_terms=True`` both indices run over every row,
    so the argument of the log is at least 1 and the value is nonnegative.
    """
    return uniform_loss_and_grad(emb, self_terms, grad=False)[0]


def uniform_total_and_grad(pairs: PairsLike, self_terms: bool = True,
                           grad: bool = True) -> tuple[float, Array | None, Array | None]:
    images, texts = _pair_arrays(pairs)
    vi, gi = uniform_loss_and_grad(images, self_terms, grad)
    vt, gt = uniform_loss_and_grad(texts, self_terms, grad)
    if not grad:
        return 0.5 * (vi + vt), None, None
    return 0.5 * (vi + vt), 0.5 * gi, 0.5 * gt


def uniform_total(pairs: PairsLike, self_terms: bool = True) -> float:
    """Average of the image-side and text-side uniformity."""
    return uniform_total_and_grad(pairs, self_terms, grad=False)[0]


def xuniform_loss_and_grad(pairs: PairsLike,
                           grad: bool = True) -> tuple[float, Array | None, Array | None]:
    images, texts = _pair_arrays(pairs)
    n = images.shape[0]
    if n < 2:
        raise DegenerateBatch("cross-modal uniformity needs at least 2 pairs")
    logk = -2.0 * _sq_dists(images, texts)
    np.fill_diagonal(logk, -np.inf)
    total = _logsumexp(logk)
    if not grad:
        return float(total - math.log(n)), None, None
    w = np.exp(logk - total)
    d_images = -4.0 * (w.sum(axis=1)[:, None] * images - w @ texts)
    d_texts = -4.0 * (w.sum(axis=0)[:, None] * texts - w.T @ images)
    return float(total - math.log(n)), d_images, d_texts


def xuniform_loss(pairs: PairsLike) -> float:
    """Uniformity potential over the N(N-1) mismatched image-text pairs.

    Raises:
        DegenerateBatch: if there are fewer than two pairs.
    """
    return xuniform_loss_and_grad(pairs, grad=False)[0]


# -- alignment -----------------------------------------------------------------

def align_loss_and_grad(pairs: PairsLike) -> tuple[float, Array, Array]:
    images, texts = _pair_arrays(pairs)
    n = images.shape[0]
    diff = images - texts
    value = float(np.einsum("ij,ij->", diff, diff) / n)
    d_images = (2.0 / n) * diff
    return value, d_images, -d_images


def align_loss(pairs: PairsLike) -> float:
    """Mean squared distance between positive pairs; in [0, 4] on the sphere."""
    return align_loss_and_grad(pairs)[0]


# -- composite -----------------------------------------------------------------

def _term_and_grad(term: str, pairs: tuple[Array, Array], cfg: LossConfig):
    if term == "clip":
        return clip_loss_and_grad(pairs, cfg.temperature)
    if term == "uniform":
        return uniform_total_and_grad(pairs, cfg.uniform_self_terms)
    if term == "xuniform":
        return xuniform_loss_and_grad(pairs)
    return align_loss_and_grad(pairs)


def composite_value_and_gradient(pairs: PairsLike, cfg: LossConfig) -> tuple[LossValue, LossGradient]:
    """Weighted sum of the enabled terms together with its gradient."""
    arrays = _pair_arrays(pairs)
    d_images = np.zeros_like(arrays[0])
    d_texts = np.zeros_like(arrays[1])
    per_term = {}
    total = 0.0
    for term, weight in cfg.weights.items():
        if weight == 0:
            continue
        value, gi, gt = _term_and_grad(term, arrays, cfg)
        per_term[term] = value
        total += weight * value
        d_images += weight * gi
        d_texts += weight * gt
    return LossValue(total, per_term), LossGradient(d_images, d_texts)


def composite_loss(pairs: PairsLike, cfg: LossConfig) -> LossValue:
    arrays = _pair_arrays(pairs)
    per_term = {}
    total = 0.0
    for term, weight in cfg.weights.items():
        if weight == 0:
            continue
        if term == "clip":
            value = clip_loss_and_grad(arrays, cfg.temperature, grad=False)[0]
        elif term == "uniform":
            value = uniform_total(arrays, cfg.uniform_self_terms)
        elif term == "xuniform":
            value = xuniform_loss(arrays)
        else:
            value = align_loss(arrays)
        per_term[term] = value
        total += weight * value
    return LossValue(total, per_term)


def composite_gradient(pairs: PairsLike, cfg: LossConfig) -> LossGradient:
    """Ambient gradient of the composite loss w.r.t. every image and text row."""
    return composite_value_and_gradient(pairs, cfg)[1]
