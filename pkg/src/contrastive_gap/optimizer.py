"""Minibatch optimization of the composite loss on the sphere.

Two modes share one loop structure:

* free points: the embedding rows themselves are the parameters; updated rows
  are pushed back onto the sphere after every step;
* twin encoders: two :class:`TinyEncoder` towers are trained jointly, with an
  optional fixed output-side shift on the second tower that makes the two
  cones overlap at initialization.

Both record :class:`TrajectorySnapshot` objects every ``snapshot_every`` steps.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from numpy.typing import NDArray

from contrastive_gap.embedding_space import PairedEmbeddings, apply_shift, overlap_shift
from contrastive_gap.encoders import SyntheticDataset, TinyEncoder, backward, forward_cached
from contrastive_gap.errors import Divergence, NumericalOverflow
from contrastive_gap.losses import (LossConfig, LossValue, composite_loss,
                                    composite_value_and_gradient)
from contrastive_gap.metrics import CSV_COLUMNS, GapReport, gap_report

Array = NDArray[np.float64]


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: Literal["sgd", "adam"] = "sgd"
    learning_rate: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 64
    max_steps: int | None = None
    max_epochs: int | None = None
    snapshot_every: int = 100
    seed: int = 0
    keep_embeddings: bool = False
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.algorithm not in ("sgd", "adam"):
            raise ValueError(f"algorithm must be 'sgd' or 'adam', got {self.algorithm!r}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.max_steps is None and self.max_epochs is None:
            raise ValueError("set max_steps or max_epochs")

    @classmethod
    def free_points(cls, **overrides) -> OptimizerConfig:
        """SGD at lr 0.05; gradients scale like 1/tau, and lr 0.5 stalls at tau = 0.01."""
        return cls(**{"algorithm": "sgd", "learning_rate": 0.05, "max_epochs": 300, **overrides})

    @classmethod
    def encoders(cls, **overrides) -> OptimizerConfig:
        """Adam(0.9, 0.99) with decoupled weight decay 0.1, lr 1e-3 for fresh tiny encoders."""
        return cls(**{"algorithm": "adam", "learning_rate": 1e-3, "weight_decay": 0.1,
                      "max_epochs": 100, **overrides})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TrajectorySnapshot:
    """Full-data loss and gap report after ``step`` updates (``epoch`` = completed passes)."""

    step: int
    epoch: int
    loss: LossValue
    report: GapReport
    embeddings: PairedEmbeddings | None = None

    def to_dict(self, include_embeddings: bool = True) -> dict:
        out = {"step": self.step, "epoch": self.epoch, "loss": self.loss.to_dict(),
               "report": self.report.to_dict()}
        if include_embeddings and self.embeddings is not None:
            out["embeddings"] = self.embeddings.to_dict()
        return out


@dataclass
class Trajectory:
    snapshots: list[TrajectorySnapshot] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    final_embeddings: PairedEmbeddings | None = None
    encoders: tuple[TinyEncoder, TinyEncoder] | None = None
    shift: Array | None = None

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def final(self) -> TrajectorySnapshot:
        return self.snapshots[-1]

    @property
    def steps(self) -> list[int]:
        return [s.step for s in self.snapshots]

    def append(self, snap: TrajectorySnapshot) -> None:
        if self.snapshots and snap.step <= self.snapshots[-1].step:
            raise ValueError(f"snapshot step {snap.step} does not advance past {self.snapshots[-1].step}")
        self.snapshots.append(snap)


StopRule = Callable[[TrajectorySnapshot], bool]


class _Adam:
    """Adam with decoupled weight decay over a list of arrays, updated in place.

    ``rows`` restricts an update to a subset of rows (lazy moments), which the
    free-point mode needs because only the minibatch rows get gradients.
    """

    def __init__(self, params: list[Array], cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[Array], grads: list[Array], rows=None, decay: bool = True) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.adam_beta1 ** self.t
        c2 = 1.0 - cfg.adam_beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            sel = slice(None) if rows is None else rows
            m[sel] = cfg.adam_beta1 * m[sel] + (1 - cfg.adam_beta1) * g
            v[sel] = cfg.adam_beta2 * v[sel] + (1 - cfg.adam_beta2) * g * g
            if decay and cfg.weight_decay:
                p[sel] *= 1.0 - cfg.learning_rate * cfg.weight_decay
            p[sel] -= cfg.learning_rate * (m[sel] / c1) / (np.sqrt(v[sel] / c2) + cfg.adam_eps)


def _batches(n: int, batch_size: int, rng: np.random.Generator, min_size: int):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= min_size:
            yield idx


def _check_divergence(loss: float, initial: float, factor: float, step: int) -> None:
    if not math.isfinite(loss):
        raise NumericalOverflow(f"full-data loss became non-finite at step {step}")
    # equals "loss > factor * initial" for initial >= 1, stays meaningful near 0 or below
    if loss > initial + (factor - 1.0) * max(abs(initial), 1.0):
        raise Divergence(f"full-data loss {loss:.4g} exceeded {factor:g}x the initial {initial:.4g} "
                         f"at step {step}")


def _normalize_inplace(x: Array, rows) -> None:
    sub = x[rows]
    norms = np.linalg.norm(sub, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(norms < 1e-12):
        raise NumericalOverflow("an embedding row left the representable range")
    x[rows] = sub / norms[:, None]


def _snapshot(images: Array, texts: Array, loss_cfg: LossConfig, step: int, epoch: int,
              report_seed: int, keep: bool) -> TrajectorySnapshot:
    pairs = PairedEmbeddings.from_arrays(images, texts)
    loss = composite_loss(pairs, loss_cfg)
    report = gap_report(pairs, loss_cfg, report_seed)
    return TrajectorySnapshot(step, epoch, loss, report, pairs if keep else None)


def _min_batch(loss_cfg: LossConfig) -> int:
    return 2 if loss_cfg.w_xuniform > 0 else 1


def optimize_free_points(init: PairedEmbeddings, loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
                         stop_when: StopRule | None = None,
                         snapshot_steps: set[int] | None = None) -> Trajectory:
    """Treat every embedding row as a free parameter and minimize the composite loss.

    Each step draws a minibatch of pair indices (fresh permutation per epoch),
    updates only those rows and re-projects them to the sphere. A snapshot is
    recorded at step 0, every ``snapshot_every`` steps, at any extra step in
    ``snapshot_steps`` and at the end. Extra-step snapshots always keep their
    embeddings.

    Raises:
        Divergence: if the full-data loss exceeds ``divergence_factor`` times its start.
        NumericalOverflow: if values stop being finite.
    """
    images = init.images.rows.copy()
    texts = init.texts.rows.copy()
    n = init.n
    rng = np.random.default_rng(opt_cfg.seed)
    adam = _Adam([images, texts], opt_cfg) if opt_cfg.algorithm == "adam" else None
    extra = snapshot_steps or set()
    keep = opt_cfg.keep_embeddings

    traj = Trajectory(meta={"mode": "free_points", "loss": loss_cfg.to_dict(),
                            "optimizer": opt_cfg.to_dict(), "n": n, "dim": init.dim})
    first = _snapshot(images, texts, loss_cfg, 0, 0, opt_cfg.seed, keep or 0 in extra)
    traj.append(first)
    initial = first.loss.total

    step, epoch = 0, 0
    done = stop_when is not None and stop_when(first)
    while not done:
        if opt_cfg.max_epochs is not None and epoch >= opt_cfg.max_epochs:
            break
        batches = list(_batches(n, opt_cfg.batch_size, rng, _min_batch(loss_cfg)))
        for b, idx in enumerate(batches):
            done_epochs = epoch + 1 if b == len(batches) - 1 else epoch
            _, grad = composite_value_and_gradient((images[idx], texts[idx]), loss_cfg)
            if adam is None:
                images[idx] -= opt_cfg.learning_rate * grad.d_images
                texts[idx] -= opt_cfg.learning_rate * grad.d_texts
            else:
                adam.step([images, texts], [grad.d_images, grad.d_texts], rows=idx, decay=False)
            _normalize_inplace(images, idx)
            _normalize_inplace(texts, idx)
            step += 1
            last = opt_cfg.max_steps is not None and step >= opt_cfg.max_steps
            if step % opt_cfg.snapshot_every == 0 or step in extra or last:
                snap = _snapshot(images, texts, loss_cfg, step, done_epochs, opt_cfg.seed,
                                 keep or step in extra)
                traj.append(snap)
                _check_divergence(snap.loss.total, initial, opt_cfg.divergence_factor, step)
                if stop_when is not None and stop_when(snap):
                    done = True
            if last or done:
                done = True
                break
        epoch += 1

    if traj.final.step != step:
        traj.append(_snapshot(images, texts, loss_cfg, step, epoch, opt_cfg.seed, keep))
    traj.final_embeddings = PairedEmbeddings.from_arrays(images, texts)
    return traj


class TwinEncoderModel:
    """Encoder A for images, encoder B for texts, plus B's fixed output shift."""

    def __init__(self, enc_a: TinyEncoder, enc_b: TinyEncoder, shift: Array | None = None):
        if enc_a.output_dim != enc_b.output_dim:
            raise ValueError("encoders must share the output dimension")
        self.enc_a = enc_a
        self.enc_b = enc_b
        self.shift = shift

    def embed(self, image_features: Array, text_features: Array) -> tuple[Array, Array]:
        return self.embed_images(image_features), self.embed_texts(text_features)

    def embed_images(self, features: Array) -> Array:
        return forward_cached(self.enc_a, features).out

    def embed_texts(self, features: Array) -> Array:
        out = forward_cached(self.enc_b, features).out
        return out if self.shift is None else apply_shift(out, self.shift)

    def params(self) -> list[Array]:
        return self.enc_a.params() + self.enc_b.params()

    def value_and_grads(self, image_features: Array, text_features: Array,
                        loss_cfg: LossConfig) -> tuple[LossValue, list[Array]]:
        cache_a = forward_cached(self.enc_a, image_features)
        cache_b = forward_cached(self.enc_b, text_features)
        texts = cache_b.out
        if self.shift is not None:
            shifted = texts + self.shift
            norms = np.linalg.norm(shifted, axis=1)
            texts = shifted / norms[:, None]
        value, grad = composite_value_and_gradient((cache_a.out, texts), loss_cfg)
        g_texts = grad.d_texts
        if self.shift is not None:
            g_texts = (g_texts - np.einsum("ij,ij->i", g_texts, texts)[:, None] * texts) / norms[:, None]
        grads = backward(self.enc_a, image_features, grad.d_images, cache_a)
        grads += backward(self.enc_b, text_features, g_texts, cache_b)
        return value, grads


def optimize_encoders(enc_a: TinyEncoder, enc_b: TinyEncoder, data: SyntheticDataset,
                      loss_cfg: LossConfig, opt_cfg: OptimizerConfig, overlap_at_init: bool = True,
                      keep_shift: bool = True, eval_data: SyntheticDataset | None = None,
                      stop_when: StopRule | None = None) -> Trajectory:
    """Jointly train two encoders on paired features.

    With ``overlap_at_init`` the translation that moves B's output centroid
    onto A's is computed once from the full training set before step 0 and
    then held fixed on B's outputs (``keep_shift=False`` drops it after the
    step-0 snapshot). Weight decay touches encoder parameters only.
    Snapshots are measured on ``eval_data`` when given, else on ``data``.
    The input encoders are not modified; trained copies are returned on the
    trajectory.
    """
    model = TwinEncoderModel(enc_a.copy(), enc_b.copy())
    if overlap_at_init:
        a0, b0 = model.embed(data.image_features, data.text_features)
        model.shift = overlap_shift(b0, a0)
    measure = eval_data if eval_data is not None else data
    keep = opt_cfg.keep_embeddings

    def snap(step: int, epoch: int) -> TrajectorySnapshot:
        images, texts = model.embed(measure.image_features, measure.text_features)
        return _snapshot(images, texts, loss_cfg, step, epoch, opt_cfg.seed, keep)

    traj = Trajectory(meta={"mode": "encoders", "loss": loss_cfg.to_dict(),
                            "optimizer": opt_cfg.to_dict(), "overlap_at_init": overlap_at_init,
                            "keep_shift": keep_shift, "dims": enc_a.dims, "dim": enc_a.output_dim,
                            "data": data.meta})
    first = snap(0, 0)
    traj.append(first)
    traj.shift = None if model.shift is None else model.shift.copy()
    if not keep_shift:
        model.shift = None
    initial = first.loss.total

    params = model.params()
    adam = _Adam(params, opt_cfg) if opt_cfg.algorithm == "adam" else None
    rng = np.random.default_rng(opt_cfg.seed)
    n = len(data)
    step, epoch = 0, 0
    done = stop_when is not None and stop_when(first)
    while not done:
        if opt_cfg.max_epochs is not None and epoch >= opt_cfg.max_epochs:
            break
        batches = list(_batches(n, opt_cfg.batch_size, rng, _min_batch(loss_cfg)))
        for b, idx in enumerate(batches):
            done_epochs = epoch + 1 if b == len(batches) - 1 else epoch
            _, grads = model.value_and_grads(data.image_features[idx], data.text_features[idx], loss_cfg)
            if adam is None:
                for p, g in zip(params, grads):
                    if opt_cfg.weight_decay:
                        p *= 1.0 - opt_cfg.learning_rate * opt_cfg.weight_decay
                    p -= opt_cfg.learning_rate * g
            else:
                adam.step(params, grads)
            step += 1
            last = opt_cfg.max_steps is not None and step >= opt_cfg.max_steps
            if step % opt_cfg.snapshot_every == 0 or last:
                s = snap(step, done_epochs)
                traj.append(s)
                _check_divergence(s.loss.total, initial, opt_cfg.divergence_factor, step)
                if stop_when is not None and stop_when(s):
                    done = True
            if last or done:
                done = True
                break
        epoch += 1

    if traj.final.step != step:
        traj.append(snap(step, epoch))
    traj.final_embeddings = PairedEmbeddings.from_arrays(*model.embed(measure.image_features,
                                                                      measure.text_features))
    traj.encoders = (model.enc_a, model.enc_b)
    return traj


# -- emission ------------------------------------------------------------------

TRAJECTORY_COLUMNS = CSV_COLUMNS[:1] + ["epoch", "loss_total", "loss_clip", "loss_uniform",
                                        "loss_xuniform", "loss_align"] + CSV_COLUMNS[1:]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def trajectory_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for s in traj.snapshots:
        terms = [s.loss.per_term.get(t, "") for t in ("clip", "uniform", "xuniform", "align")]
        report_row = s.report.csv_row(s.step)
        writer.writerow([_fmt(v) for v in [s.step, s.epoch, s.loss.total, *terms, *report_row[1:]]])
    return buf.getvalue()


def emit_trajectory(traj: Trajectory, path: str | Path, prefix: str = "trajectory",
                    dump_embeddings: bool = False) -> list[Path]:
    """Write the metrics CSV and, where available, embedding dumps under ``path``.

    For 3-D runs every snapshot that kept its embeddings also gets a
    ``<prefix>_points_step<k>.json`` point cloud. Returns the written paths.
    """
    if not traj.snapshots:
        raise ValueError("cannot emit an empty trajectory")
    out = Path(path)
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{prefix}.csv"
        csv_path.write_text(trajectory_csv(traj))
        written.append(csv_path)
        if dump_embeddings:
            dump = out / f"{prefix}_snapshots.json"
            dump.write_text(json.dumps([s.to_dict() for s in traj.snapshots]))
            written.append(dump)
        if traj.meta.get("dim") == 3:
            for s in traj.snapshots:
                if s.embeddings is None:
                    continue
                p = out / f"{prefix}_points_step{s.step}.json"
                p.write_text(json.dumps(point_cloud(s)))
                written.append(p)
    except OSError as exc:
        raise OSError(f"failed writing trajectory under {out}: {exc}") from exc
    return written


def point_cloud(s: TrajectorySnapshot) -> dict:
    """Plot-ready 3-D point cloud for one snapshot."""
    assert s.embeddings is not None
    return {"step": s.step, "epoch": s.epoch,
            "i2t@1": s.report.retrieval_i2t.get(1),
            "images": s.embeddings.images.rows.tolist(),
            "texts": s.embeddings.texts.rows.tolist()}
