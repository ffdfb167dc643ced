"""Gap measurements on paired embeddings.

Centroid distance and linear separability quantify the gap itself; the
uniformity/alignment losses, retrieval accuracy and the PCA spectrum describe
how the two modalities fill the sphere. :func:`gap_report` bundles them.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from contrastive_gap.embedding_space import PairedEmbeddings, centroid
from contrastive_gap.errors import DegenerateData, TooFewSamples
from contrastive_gap.losses import LossConfig, align_loss, uniform_total, xuniform_loss

Array = NDArray[np.float64]
Direction = Literal["i2t", "t2i"]

RETRIEVAL_KS = (1, 5, 10)
CSV_COLUMNS = ["step", "centroid_distance", "linear_sep", "uniform", "xuniform", "align",
               "i2t@1", "i2t@5", "i2t@10", "t2i@1", "t2i@5", "t2i@10"]

PROBE_ITERATIONS = 500
PROBE_LR = 0.1
PROBE_TRAIN_FRACTION = 0.8


def centroid_distance(pairs: PairedEmbeddings) -> float:
    """Euclidean (unsquared) distance between the image and text centroids, in [0, 2]."""
    return float(np.linalg.norm(centroid(pairs.images) - centroid(pairs.texts)))


def fit_logistic(x: Array, y: Array, iterations: int = PROBE_ITERATIONS,
                 lr: float = PROBE_LR) -> tuple[Array, float]:
    """Unregularized logistic regression by full-batch gradient descent from zero."""
    w = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(iterations):
        resid = expit(x @ w + b) - y
        w -= lr * (x.T @ resid) / n
        b -= lr * resid.mean()
    return w, b


def linear_separability(pairs: PairedEmbeddings, seed: int = 0,
                        iterations: int = PROBE_ITERATIONS, lr: float = PROBE_LR) -> float:
    """Held-out accuracy of a linear probe telling image rows from text rows.

    Images are labelled 0 and texts 1; the 2N rows are shuffled by ``seed``,
    the probe (logistic regression with bias, plain full-batch gradient
    descent, no regularization) trains on the first 80% and is scored on
    the rest.

    Raises:
        TooFewSamples: if there are fewer than 10 pairs.
    """
    n = pairs.n
    if n < 10:
        raise TooFewSamples(f"linear separability needs at least 10 pairs, got {n}")
    x = np.vstack([pairs.images.rows, pairs.texts.rows])
    y = np.concatenate([np.zeros(n), np.ones(n)])
    perm = np.random.default_rng(seed).permutation(2 * n)
    n_train = int(round(PROBE_TRAIN_FRACTION * 2 * n))
    train, test = perm[:n_train], perm[n_train:]
    w, b = fit_logistic(x[train], y[train], iterations, lr)
    pred = (x[test] @ w + b) >= 0.0
    return float(np.mean(pred == y[test].astype(bool)))


def retrieval_ranks(pairs: PairedEmbeddings, direction: Direction = "i2t") -> NDArray[np.int64]:
    """0-based rank of each query's own partner; ties go to the lower index."""
    if direction == "i2t":
        queries, targets = pairs.images.rows, pairs.texts.rows
    elif direction == "t2i":
        queries, targets = pairs.texts.rows, pairs.images.rows
    else:
        raise ValueError(f"direction must be 'i2t' or 't2i', got {direction!r}")
    sims = queries @ targets.T
    own = np.diagonal(sims)[:, None]
    idx = np.arange(sims.shape[0])
    ahead = (sims > own).sum(axis=1)
    tied_before = ((sims == own) & (idx[None, :] < idx[:, None])).sum(axis=1)
    return ahead + tied_before


def retrieval_accuracy(pairs: PairedEmbeddings, k: int = 1, direction: Direction = "i2t") -> float:
    """Fraction of queries whose partner is among the top ``k`` by cosine similarity."""
    if not 1 <= k <= pairs.n:
        raise ValueError(f"k must be in [1, {pairs.n}], got {k}")
    return float(np.mean(retrieval_ranks(pairs, direction) < k))


def pca_explained_variance(pairs: PairedEmbeddings) -> Array:
    """Explained-variance ratios of the stacked image+text rows, largest first.

    Raises:
        DegenerateData: if the rows carry no variance.
    """
    x = np.vstack([pairs.images.rows, pairs.texts.rows])
    x = x - x.mean(axis=0)
    s = np.linalg.svd(x, compute_uv=False)
    var = s * s
    total = var.sum()
    if not total > 0:
        raise DegenerateData("all rows are identical; explained variance is undefined")
    return np.sort(var / total)[::-1]


@dataclass
class GapReport:
    centroid_distance: float
    linear_separability: float
    uniform: float
    xuniform: float
    align: float
    retrieval_i2t: dict[int, float] = field(default_factory=dict)
    retrieval_t2i: dict[int, float] = field(default_factory=dict)
    pca_explained: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "centroid_distance": self.centroid_distance,
            "linear_separability": self.linear_separability,
            "uniform": self.uniform,
            "xuniform": self.xuniform,
            "align": self.align,
            "retrieval_i2t": {str(k): v for k, v in self.retrieval_i2t.items()},
            "retrieval_t2i": {str(k): v for k, v in self.retrieval_t2i.items()},
            "pca_explained": list(self.pca_explained),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> GapReport:
        return cls(
            obj["centroid_distance"], obj["linear_separability"], obj["uniform"],
            obj["xuniform"], obj["align"],
            {int(k): v for k, v in obj["retrieval_i2t"].items()},
            {int(k): v for k, v in obj["retrieval_t2i"].items()},
            list(obj["pca_explained"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> GapReport:
        return cls.from_dict(json.loads(text))

    def csv_row(self, step: int = 0) -> list:
        row = [step, self.centroid_distance, self.linear_separability,
               self.uniform, self.xuniform, self.align]
        row += [self.retrieval_i2t.get(k, "") for k in RETRIEVAL_KS]
        row += [self.retrieval_t2i.get(k, "") for k in RETRIEVAL_KS]
        return row

    def to_csv(self, step: int = 0) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerow(_fmt_row(self.csv_row(step)))
        return buf.getvalue()

    def pca_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["component_index", "ratio", "cumulative"])
        for i, (r, c) in enumerate(zip(self.pca_explained, np.cumsum(self.pca_explained))):
            writer.writerow([i, repr(float(r)), repr(float(c))])
        return buf.getvalue()


def _fmt_row(row: list) -> list:
    return [repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row]


def gap_report(pairs: PairedEmbeddings, cfg: LossConfig | None = None, seed: int = 0) -> GapReport:
    """Every gap metric for one snapshot of paired embeddings."""
    self_terms = True if cfg is None else cfg.uniform_self_terms
    ks = [k for k in RETRIEVAL_KS if k <= pairs.n]
    return GapReport(
        centroid_distance=centroid_distance(pairs),
        linear_separability=linear_separability(pairs, seed),
        uniform=uniform_total(pairs, self_terms),
        xuniform=xuniform_loss(pairs),
        align=align_loss(pairs),
        retrieval_i2t={k: retrieval_accuracy(pairs, k, "i2t") for k in ks},
        retrieval_t2i={k: retrieval_accuracy(pairs, k, "t2i") for k in ks},
        pca_explained=pca_explained_variance(pairs).tolist(),
    )
