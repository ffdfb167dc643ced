"""Desk-scale reproductions of the modality-gap findings.

Five experiments, each a function of an :class:`ExperimentSpec`:

``idealized_gap``
    Twin encoders trained on identical inputs with their cones overlapped at
    initialization still end up linearly separable.
``sphere3d``
    Free points on the 3-D sphere, clip loss only: two cones spread into arcs,
    merge, and retrieval climbs from ~0 to high accuracy.
``loss_comparison``
    Twin encoders on cross-modal synthetic pairs trained from identical
    starting weights with the clip, cua and cuaxu losses.
``zeroshot_proxy``, ``simat_proxy``
    Mechanics checks for prompt-averaged zero-shot classification and
    text-delta image editing, plus report-only comparisons across variants.

Every run returns an :class:`ExperimentResult` carrying its acceptance checks
and can write a self-describing output directory.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from contrastive_gap.embedding_space import PairedEmbeddings, random_cone
from contrastive_gap.encoders import (FEATURE_DIM, SyntheticDataset, TinyEncoder, default_dims,
                                      encoder_init, identical_pairs, linear_pairs, random_text_map)
from contrastive_gap.errors import GridTooSmall
from contrastive_gap.losses import VARIANTS, LossConfig
from contrastive_gap.optimizer import (OptimizerConfig, Trajectory, TwinEncoderModel,
                                       optimize_encoders, optimize_free_points, point_cloud,
                                       trajectory_csv)
from contrastive_gap.seeding import derive_seed

Array = NDArray[np.float64]

EXPERIMENTS = ("idealized_gap", "sphere3d", "loss_comparison", "zeroshot_proxy", "simat_proxy")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
PASS_FRACTION = 0.8  # 4 of 5 seeds must pass

# idealized_gap
IDEAL_N, IDEAL_DIM, IDEAL_EPOCHS = 512, 64, 200
IDEAL_PAPER_N, IDEAL_PAPER_DIM, IDEAL_PAPER_EPOCHS = 2048, 512, 1200
IDEAL_LOSS_TARGET = 0.01
# sphere3d
SPHERE_N, SPHERE_EPOCHS = 1000, 300
SPHERE_LR = 0.02
SPHERE_CONE_SPREAD = 0.1
SPHERE_CONE_ANGLE = 45.0  # degrees between the two initial cone axes
SPHERE_EARLY_FRACTION = 0.1
SPHERE_CLOUD_EPOCHS = (0, 37, 150, 275)
# loss_comparison and the proxies built on its trained encoders
COMPARE_N, COMPARE_DIMS, COMPARE_EPOCHS = 512, (32, 64, 128), 60
COMPARE_PAPER_N = 2048
COMPARE_EVAL_N = 512
COMPARE_NOISE = 0.5
PROXY_DIM = 64
UNIFORM_MARGIN = 0.2
RETRIEVAL_PARITY = 0.05
# zero-shot and SIMAT proxies
ZEROSHOT_CHANCE_SEEDS = 20
ZEROSHOT_BAND = 0.05
ZEROSHOT_IDEAL_SIGMA = 0.01
ZEROSHOT_IDEAL_MIN = 0.9
SIMAT_LAMBDA = 1.0
SIMAT_SIGMAS = 3.0


# -- specs ---------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """What to run. ``None`` sizes fall back to the experiment's desk-scale defaults."""

    name: str
    dimensions: tuple[int, ...] | None = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    n: int | None = None
    epochs: int | None = None
    steps: int | None = None
    variants: tuple[str, ...] = ("clip", "cua", "cuaxu")
    paper_scale: bool = False

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; expected one of {', '.join(EXPERIMENTS)}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be nonnegative")
        variants = tuple(v.lower() for v in self.variants)
        for v in variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown loss variant {v!r}")
        if not variants:
            raise ValueError("at least one loss variant is required")
        object.__setattr__(self, "variants", variants)
        if self.dimensions is not None:
            dims = tuple(int(d) for d in self.dimensions)
            if not dims or any(d < 2 for d in dims):
                raise ValueError("dimensions must be a nonempty list of integers >= 2")
            object.__setattr__(self, "dimensions", dims)
        for key in ("n", "epochs", "steps"):
            value = getattr(self, key)
            if value is not None and value < 1:
                raise ValueError(f"{key} must be >= 1")

    def resolved_dims(self) -> tuple[int, ...]:
        if self.name == "sphere3d":
            return (3,)
        if self.dimensions is not None:
            return self.dimensions
        if self.name == "idealized_gap":
            return (IDEAL_PAPER_DIM if self.paper_scale else IDEAL_DIM,)
        if self.name == "loss_comparison":
            return COMPARE_DIMS
        return (PROXY_DIM,)

    def resolved_n(self) -> int:
        if self.n is not None:
            return self.n
        if self.name == "idealized_gap":
            return IDEAL_PAPER_N if self.paper_scale else IDEAL_N
        if self.name == "sphere3d":
            return SPHERE_N
        return COMPARE_PAPER_N if self.paper_scale else COMPARE_N

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        if self.name == "idealized_gap":
            return IDEAL_PAPER_EPOCHS if self.paper_scale else IDEAL_EPOCHS
        if self.name == "sphere3d":
            return SPHERE_EPOCHS
        return COMPARE_EPOCHS

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dimensions"] = list(self.resolved_dims())
        out["seeds"] = list(self.seeds)
        out["variants"] = list(self.variants)
        out["n"] = self.resolved_n()
        out["epochs"] = self.resolved_epochs()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> ExperimentSpec:
        obj = dict(obj)
        for key in ("dimensions", "seeds", "variants"):
            if obj.get(key) is not None:
                obj[key] = tuple(obj[key])
        return cls(**obj)


@dataclass(frozen=True)
class ClassProxySpec:
    """Synthetic class structure for the zero-shot proxy."""

    n_classes: int = 10
    prompts_per_class: int = 5
    samples_per_class: int = 20
    sigma: float = 1.0

    def __post_init__(self):
        for key in ("n_classes", "prompts_per_class", "samples_per_class"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class GridSpec:
    """Subject x attribute grid for the SIMAT proxy."""

    n_subjects: int = 10
    n_attributes: int = 10

    def __post_init__(self):
        if self.n_attributes < 2:
            raise GridTooSmall(f"need at least 2 attributes, got {self.n_attributes}")
        if self.n_subjects < 1:
            raise GridTooSmall(f"need at least 1 subject, got {self.n_subjects}")


# -- default configs -----------------------------------------------------------

def default_loss(spec: ExperimentSpec) -> LossConfig:
    return LossConfig.variant("clip")


def default_optimizer(spec: ExperimentSpec) -> OptimizerConfig:
    if spec.name == "sphere3d":
        steps_per_epoch = math.ceil(spec.resolved_n() / 64)
        # Adam: row-wise step sizes keep the merge gradual enough to watch
        return OptimizerConfig(algorithm="adam", learning_rate=SPHERE_LR, batch_size=64,
                               max_epochs=spec.resolved_epochs(), max_steps=spec.steps,
                               snapshot_every=2 * steps_per_epoch)
    steps_per_epoch = math.ceil(spec.resolved_n() / 64)
    return OptimizerConfig.encoders(max_epochs=spec.resolved_epochs(), max_steps=spec.steps,
                                    snapshot_every=10 * steps_per_epoch)


def resolve_optimizer(spec: ExperimentSpec, overrides: dict | None = None) -> OptimizerConfig:
    """Experiment default with ``overrides`` (field name -> value) applied on top."""
    return replace(default_optimizer(spec), **(overrides or {}))


def variant_loss(variant: str, base: LossConfig) -> LossConfig:
    return LossConfig.variant(variant, temperature=base.temperature,
                              uniform_self_terms=base.uniform_self_terms)


# -- results -------------------------------------------------------------------

@dataclass
class RunRecord:
    experiment: str
    variant: str
    seed: int
    dim: int
    trajectory: Trajectory
    extras: dict = field(default_factory=dict)

    @property
    def tag(self) -> str:
        return f"{self.variant}_d{self.dim}_seed{self.seed}"

    def summary(self) -> dict:
        first, last = self.trajectory.snapshots[0], self.trajectory.final
        return {"variant": self.variant, "seed": self.seed, "dim": self.dim,
                "steps": last.step, "epochs": last.epoch,
                "init": {"loss": first.loss.to_dict(), "report": first.report.to_dict()},
                "final": {"loss": last.loss.to_dict(), "report": last.report.to_dict()},
                **({"extras": self.extras} if self.extras else {})}


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    loss: LossConfig
    optimizer: OptimizerConfig
    records: list[RunRecord] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    report_only: dict = field(default_factory=dict)
    clouds: dict[int, list[dict]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def final_reports(self) -> dict:
        return {"experiment": self.spec.name, "passed": self.passed, "checks": self.checks,
                "details": self.details, "report_only": self.report_only,
                "runs": [r.summary() for r in self.records]}

    def write(self, out_dir: str | Path, run_config: dict | None = None) -> list[Path]:
        """Write spec.json, per-run trajectory CSVs, final_reports.json and point clouds."""
        out = Path(out_dir)
        written: list[Path] = []
        try:
            out.mkdir(parents=True, exist_ok=True)
            spec_doc = {"experiment": self.spec.to_dict(), "loss": self.loss.to_dict(),
                        "optimizer": self.optimizer.to_dict()}
            if run_config is not None:
                spec_doc["run_config"] = run_config
            written.append(_write_json(out / "spec.json", spec_doc))
            for r in self.records:
                p = out / f"trajectory_{r.tag}.csv"
                p.write_text(trajectory_csv(r.trajectory))
                written.append(p)
            written.append(_write_json(out / "final_reports.json", self.final_reports()))
            for epoch, clouds in sorted(self.clouds.items()):
                written.append(_write_json(out / f"pointcloud_epoch_{epoch}.json",
                                           {"epoch": epoch, "runs": clouds}, indent=None))
        except OSError as exc:
            raise OSError(f"failed writing experiment outputs under {out}: {exc}") from exc
        return written


def _write_json(path: Path, obj, indent: int | None = 2) -> Path:
    path.write_text(json.dumps(_plain(obj), indent=indent, sort_keys=True) + "\n")
    return path


def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, tuples to lists, int keys to str."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def majority(flags: list[bool], fraction: float = PASS_FRACTION) -> bool:
    """At least ``fraction`` of the flags hold (4 of 5, 1 of 1, 2 of 2, ...)."""
    return sum(bool(f) for f in flags) >= math.ceil(fraction * len(flags) - 1e-9)


def _parallel_map(fn, tasks: list[tuple], workers: int) -> list:
    """Run ``fn(*task)`` for every task; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


# -- twin-encoder training shared by several experiments -----------------------

def twin_encoders(dim: int, seed: int, label: str) -> tuple[TinyEncoder, TinyEncoder]:
    """Two independently initialized encoders (different seeds, hence different cones)."""
    dims = default_dims(dim)
    return (encoder_init(dims, derive_seed(seed, f"{label}/encoder_a")),
            encoder_init(dims, derive_seed(seed, f"{label}/encoder_b")))


def comparison_data(n: int, seed: int) -> tuple[SyntheticDataset, SyntheticDataset, int]:
    """Train and held-out cross-modal pairs sharing one linear text map."""
    map_seed = derive_seed(seed, "loss_comparison/text_map")
    train = linear_pairs(n, derive_seed(seed, "loss_comparison/train"), COMPARE_NOISE,
                         map_seed=map_seed)
    held_out = linear_pairs(COMPARE_EVAL_N, derive_seed(seed, "loss_comparison/eval"),
                            COMPARE_NOISE, map_seed=map_seed)
    return train, held_out, map_seed


def _train_idealized(seed: int, dim: int, n: int, loss_cfg: LossConfig,
                     opt_cfg: OptimizerConfig) -> RunRecord:
    data = identical_pairs(n, derive_seed(seed, "idealized_gap/data"))
    enc_a, enc_b = twin_encoders(dim, seed, "idealized_gap")
    opt = replace(opt_cfg, seed=derive_seed(seed, "idealized_gap/batches"))
    traj = optimize_encoders(enc_a, enc_b, data, loss_cfg, opt, overlap_at_init=True)
    below = [s.epoch for s in traj.snapshots if s.loss.per_term["clip"] <= IDEAL_LOSS_TARGET]
    extras = {"first_epoch_clip_below_target": below[0] if below else None,
              "clip_target": IDEAL_LOSS_TARGET}
    return RunRecord("idealized_gap", "clip", seed, dim, traj, extras)


def _train_comparison(variant: str, seed: int, dim: int, n: int, loss_cfg: LossConfig,
                      opt_cfg: OptimizerConfig) -> RunRecord:
    train, held_out, map_seed = comparison_data(n, seed)
    # identical starting weights and batches for every variant
    enc_a, enc_b = twin_encoders(dim, seed, "loss_comparison")
    opt = replace(opt_cfg, seed=derive_seed(seed, "loss_comparison/batches"))
    traj = optimize_encoders(enc_a, enc_b, train, variant_loss(variant, loss_cfg), opt,
                             overlap_at_init=False, eval_data=held_out)
    return RunRecord("loss_comparison", variant, seed, dim, traj, {"map_seed": map_seed})


def _train_sphere(seed: int, n: int, loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
                  cloud_epochs: tuple[int, ...]) -> RunRecord:
    init = sphere_init(n, seed)
    opt = replace(opt_cfg, seed=derive_seed(seed, "sphere3d/batches"))
    steps_per_epoch = math.ceil(n / opt.batch_size)
    extra = {e * steps_per_epoch for e in cloud_epochs}
    traj = optimize_free_points(init, loss_cfg, opt, snapshot_steps=extra)
    return RunRecord("sphere3d", "clip", seed, 3, traj)


# -- idealized_gap -------------------------------------------------------------

def run_idealized_gap(spec: ExperimentSpec, loss: LossConfig | None = None,
                      optimizer: dict | None = None, workers: int = 1) -> ExperimentResult:
    """Identical inputs, overlapped cones, clip loss: does a gap still form?

    Trains for the full epoch budget rather than stopping at the target
    and reports the first epoch at which the clip loss fell below 0.01.
    """
    loss_cfg = LossConfig.variant("clip", temperature=(loss or default_loss(spec)).temperature)
    opt_cfg = resolve_optimizer(spec, optimizer)
    n, dims = spec.resolved_n(), spec.resolved_dims()
    tasks = [(seed, d, n, loss_cfg, opt_cfg) for d in dims for seed in spec.seeds]
    records = _parallel_map(_train_idealized, tasks, workers)
    result = ExperimentResult(spec, loss_cfg, opt_cfg, records)

    per_seed = []
    for r in records:
        init, final = r.trajectory.snapshots[0], r.trajectory.final
        row = {
            "seed": r.seed, "dim": r.dim,
            "init_centroid_distance": init.report.centroid_distance,
            "init_linear_separability": init.report.linear_separability,
            "final_linear_separability": final.report.linear_separability,
            "final_clip_loss": final.loss.per_term["clip"],
        }
        row["passed"] = bool(row["init_centroid_distance"] <= 0.05
                             and row["init_linear_separability"] <= 0.6
                             and row["final_linear_separability"] >= 0.95
                             and row["final_clip_loss"] <= IDEAL_LOSS_TARGET)
        per_seed.append(row)
    result.details["per_seed"] = per_seed
    for d in dims:
        result.checks[f"gap_forms_d{d}"] = majority([r["passed"] for r in per_seed if r["dim"] == d])
    return result


# -- sphere3d ------------------------------------------------------------------

def sphere_init(n: int, seed: int, spread: float = SPHERE_CONE_SPREAD,
                angle_deg: float = SPHERE_CONE_ANGLE) -> PairedEmbeddings:
    """Two narrow cones on S^2 whose axes are ``angle_deg`` apart, randomly oriented."""
    rng = np.random.default_rng(derive_seed(seed, "sphere3d/init"))
    raw = rng.standard_normal((2, 3))
    a = raw[0] / np.linalg.norm(raw[0])
    ortho = raw[1] - (raw[1] @ a) * a
    ortho /= np.linalg.norm(ortho)
    theta = math.radians(angle_deg)
    b = math.cos(theta) * a + math.sin(theta) * ortho
    images = random_cone(n, 3, a, spread, rng, "image")
    texts = random_cone(n, 3, b, spread, rng, "text")
    return PairedEmbeddings(images, texts)


def within_modality_cosine(rows: Array) -> float:
    """Mean cosine over distinct pairs of unit rows."""
    n = len(rows)
    s = rows.sum(axis=0)
    return float((s @ s - n) / (n * (n - 1)))


def run_sphere3d(spec: ExperimentSpec, loss: LossConfig | None = None,
                 optimizer: dict | None = None, workers: int = 1) -> ExperimentResult:
    """Free points in 3-D under the clip loss: the cones merge and retrieval recovers."""
    loss_cfg = LossConfig.variant("clip", temperature=(loss or default_loss(spec)).temperature)
    opt_cfg = resolve_optimizer(spec, optimizer)
    n, epochs = spec.resolved_n(), spec.resolved_epochs()
    cloud_epochs = tuple(e for e in SPHERE_CLOUD_EPOCHS if e <= epochs)
    tasks = [(seed, n, loss_cfg, opt_cfg, cloud_epochs) for seed in spec.seeds]
    records = _parallel_map(_train_sphere, tasks, workers)
    result = ExperimentResult(spec, loss_cfg, opt_cfg, records)

    per_seed = []
    for r in records:
        snaps = r.trajectory.snapshots
        total = r.trajectory.final.step
        early = [s.report.retrieval_i2t[1] for s in snaps if s.step <= SPHERE_EARLY_FRACTION * total]
        final = r.trajectory.final
        emb = r.trajectory.final_embeddings
        row = {
            "seed": r.seed,
            "early_max_i2t@1": max(early),
            "final_i2t@1": final.report.retrieval_i2t[1],
            "final_linear_separability": final.report.linear_separability,
            "final_image_mean_cosine": within_modality_cosine(emb.images.rows),
            "final_text_mean_cosine": within_modality_cosine(emb.texts.rows),
        }
        row["passed"] = bool(row["early_max_i2t@1"] <= 0.05 and row["final_i2t@1"] >= 0.8
                             and row["final_linear_separability"] <= 0.6)
        row["spread_over_sphere"] = bool(max(row["final_image_mean_cosine"],
                                             row["final_text_mean_cosine"]) <= 0.1)
        per_seed.append(row)
        for s in snaps:
            if s.embeddings is not None and s.epoch in cloud_epochs and s.step % math.ceil(
                    n / opt_cfg.batch_size) == 0:
                result.clouds.setdefault(s.epoch, []).append({"seed": r.seed, **point_cloud(s)})
    result.details["per_seed"] = per_seed
    result.checks["gap_closes"] = majority([row["passed"] for row in per_seed])
    result.report_only["spread_over_sphere"] = [row["spread_over_sphere"] for row in per_seed]
    return result


# -- loss_comparison -----------------------------------------------------------

def run_loss_comparison(spec: ExperimentSpec, loss: LossConfig | None = None,
                        optimizer: dict | None = None, workers: int = 1) -> ExperimentResult:
    """Same data, same initial weights, different losses; compare the final gaps."""
    base = loss or default_loss(spec)
    opt_cfg = resolve_optimizer(spec, optimizer)
    n, dims = spec.resolved_n(), spec.resolved_dims()
    tasks = [(v, seed, d, n, base, opt_cfg) for d in dims for seed in spec.seeds for v in spec.variants]
    records = _parallel_map(_train_comparison, tasks, workers)
    result = ExperimentResult(spec, base, opt_cfg, records)
    result.details.update(compare_variants(records, dims, spec.seeds))
    for d in dims:
        table = result.details[f"d{d}"]
        for name, check in table["checks"].items():
            result.checks[f"{name}_d{d}"] = check
    return result


def compare_variants(records: list[RunRecord], dims, seeds) -> dict:
    """Directional checks between variants, per dimension. Missing variants skip their checks."""
    by_key = {(r.variant, r.seed, r.dim): r.trajectory.final.report for r in records}
    out = {}
    for d in dims:
        rows, flags = [], {"centroid_distance": [], "uniform": [], "xuniform": [], "align": []}
        gaps = []
        for seed in seeds:
            clip, cua, cuaxu = (by_key.get((v, seed, d)) for v in ("clip", "cua", "cuaxu"))
            row = {"seed": seed}
            for v, rep in (("clip", clip), ("cua", cua), ("cuaxu", cuaxu)):
                if rep is not None:
                    row[v] = {"centroid_distance": rep.centroid_distance,
                              "linear_separability": rep.linear_separability,
                              "uniform": rep.uniform, "xuniform": rep.xuniform, "align": rep.align,
                              "i2t@1": rep.retrieval_i2t[1]}
            if clip is not None and cua is not None:
                flags["centroid_distance"].append(cua.centroid_distance < clip.centroid_distance)
                flags["align"].append(cua.align <= clip.align)
                gaps.append(abs(cua.retrieval_i2t[1] - clip.retrieval_i2t[1]))
            if clip is not None and cuaxu is not None:
                flags["uniform"].append(cuaxu.uniform <= clip.uniform - UNIFORM_MARGIN)
                flags["xuniform"].append(cuaxu.xuniform <= clip.xuniform)
            rows.append(row)
        checks = {f"{name}_direction": majority(f) for name, f in flags.items() if f}
        if gaps:
            checks["retrieval_parity"] = float(np.mean(gaps)) <= RETRIEVAL_PARITY
        out[f"d{d}"] = {"per_seed": rows, "checks": checks,
                        "votes": {k: [bool(x) for x in f] for k, f in flags.items() if f},
                        "mean_abs_i2t_gap_cua_clip": float(np.mean(gaps)) if gaps else None}
    return out


# -- zero-shot proxy -----------------------------------------------------------

@dataclass
class ClassProxyData:
    image_features: Array
    image_labels: NDArray[np.int64]
    prompt_features: Array
    prompt_labels: NDArray[np.int64]
    n_classes: int


def class_proxy_data(cps: ClassProxySpec, seed: int, text_map: Array | None = None,
                     feature_dim: int = FEATURE_DIM) -> ClassProxyData:
    """Class centers in feature space; images and prompts are noisy copies of them.

    Prompts live on the text side: they pass through ``text_map`` when given.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((cps.n_classes, feature_dim))
    img_labels = np.repeat(np.arange(cps.n_classes), cps.samples_per_class)
    prm_labels = np.repeat(np.arange(cps.n_classes), cps.prompts_per_class)
    images = centers[img_labels] + cps.sigma * rng.standard_normal((len(img_labels), feature_dim))
    prompts = centers[prm_labels] + cps.sigma * rng.standard_normal((len(prm_labels), feature_dim))
    if text_map is not None:
        prompts = prompts @ text_map.T
    return ClassProxyData(images, img_labels, prompts, prm_labels, cps.n_classes)


class IdentityModel:
    """Embeds features by normalizing them; images and prompts share one space."""

    def embed_images(self, features: Array) -> Array:
        return features / np.linalg.norm(features, axis=1, keepdims=True)

    embed_texts = embed_images


def zeroshot_accuracy(model, data: ClassProxyData) -> float:
    """Classify each image by cosine to the renormalized mean prompt embedding of each class."""
    images = model.embed_images(data.image_features)
    prompts = model.embed_texts(data.prompt_features)
    classes = np.zeros((data.n_classes, prompts.shape[1]))
    np.add.at(classes, data.prompt_labels, prompts)
    classes /= np.linalg.norm(classes, axis=1, keepdims=True)
    pred = np.argmax(images @ classes.T, axis=1)  # ties: lowest class index
    return float(np.mean(pred == data.image_labels))


def _trained_models(spec: ExperimentSpec, loss: LossConfig | None, optimizer: dict | None,
                    workers: int) -> tuple[list[RunRecord], LossConfig, OptimizerConfig]:
    base = loss or default_loss(spec)
    opt_cfg = resolve_optimizer(spec, optimizer)
    d = spec.resolved_dims()[0]
    tasks = [(v, seed, d, spec.resolved_n(), base, opt_cfg) for seed in spec.seeds for v in spec.variants]
    return _parallel_map(_train_comparison, tasks, workers), base, opt_cfg


def _model(record: RunRecord) -> TwinEncoderModel:
    enc_a, enc_b = record.trajectory.encoders
    return TwinEncoderModel(enc_a, enc_b)


def run_zeroshot_proxy(spec: ExperimentSpec, cps: ClassProxySpec | None = None,
                       loss: LossConfig | None = None, optimizer: dict | None = None,
                       workers: int = 1) -> ExperimentResult:
    """Prompt-averaging classifier: mechanics checks plus a report-only variant table."""
    cps = cps or ClassProxySpec()
    records, base, opt_cfg = _trained_models(spec, loss, optimizer, workers)
    result = ExperimentResult(spec, base, opt_cfg, records)
    d = spec.resolved_dims()[0]
    chance = 1.0 / cps.n_classes

    tight = replace(cps, sigma=ZEROSHOT_IDEAL_SIGMA)
    ideal = zeroshot_accuracy(IdentityModel(), class_proxy_data(tight, derive_seed(0, "zeroshot/ideal")))
    untrained = []
    for k in range(ZEROSHOT_CHANCE_SEEDS):
        g = random_text_map(derive_seed(k, "zeroshot/untrained_map"))
        data = class_proxy_data(cps, derive_seed(k, "zeroshot/untrained_data"), g)
        untrained.append(zeroshot_accuracy(TwinEncoderModel(*twin_encoders(d, k, "zeroshot/untrained")),
                                           data))
    untrained_mean = float(np.mean(untrained))
    result.details.update({"identity_accuracy": ideal, "identity_sigma": ZEROSHOT_IDEAL_SIGMA,
                           "untrained_accuracy_mean": untrained_mean, "untrained_accuracies": untrained,
                           "chance": chance, "class_proxy": asdict(cps)})
    result.checks["identity_model_accurate"] = ideal >= ZEROSHOT_IDEAL_MIN
    result.checks["untrained_at_chance"] = abs(untrained_mean - chance) <= ZEROSHOT_BAND

    table: dict[str, list[float]] = {}
    for r in records:
        g = random_text_map(r.extras["map_seed"])
        data = class_proxy_data(cps, derive_seed(r.seed, "zeroshot/eval"), g)
        table.setdefault(r.variant, []).append(zeroshot_accuracy(_model(r), data))
    result.report_only["accuracy"] = {v: {"per_seed": accs, "mean": float(np.mean(accs))}
                                      for v, accs in table.items()}
    return result


# -- SIMAT proxy ---------------------------------------------------------------

@dataclass
class AttributeGrid:
    """Image and text embeddings for every (subject, attribute) item; row index s * A + a."""

    images: Array
    texts: Array
    n_subjects: int
    n_attributes: int

    def __post_init__(self):
        if self.n_attributes < 2:
            raise GridTooSmall(f"need at least 2 attributes, got {self.n_attributes}")

    def index(self, subject: int, attribute: int) -> int:
        return subject * self.n_attributes + attribute


def _unit(x: Array) -> Array:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def additive_grid(grid: GridSpec, dim: int, seed: int) -> AttributeGrid:
    """Image = text = normalize(subject vector + attribute vector)."""
    rng = np.random.default_rng(seed)
    subj = rng.standard_normal((grid.n_subjects, dim))
    attr = rng.standard_normal((grid.n_attributes, dim))
    emb = _unit((subj[:, None, :] + attr[None, :, :]).reshape(-1, dim))
    return AttributeGrid(emb, emb.copy(), grid.n_subjects, grid.n_attributes)


def random_grid(grid: GridSpec, dim: int, seed: int) -> AttributeGrid:
    rng = np.random.default_rng(seed)
    count = grid.n_subjects * grid.n_attributes
    return AttributeGrid(_unit(rng.standard_normal((count, dim))),
                         _unit(rng.standard_normal((count, dim))),
                         grid.n_subjects, grid.n_attributes)


def model_grid(grid: GridSpec, model, text_map: Array, seed: int,
               feature_dim: int = FEATURE_DIM) -> AttributeGrid:
    """Features subject + attribute on the image side, mapped by ``text_map`` on the text side."""
    rng = np.random.default_rng(seed)
    subj = rng.standard_normal((grid.n_subjects, feature_dim))
    attr = rng.standard_normal((grid.n_attributes, feature_dim))
    x = (subj[:, None, :] + attr[None, :, :]).reshape(-1, feature_dim)
    return AttributeGrid(model.embed_images(x), model.embed_texts(x @ text_map.T),
                         grid.n_subjects, grid.n_attributes)


def simat_score(g: AttributeGrid, lam: float = SIMAT_LAMBDA) -> tuple[float, int]:
    """Fraction of (subject, a -> b) queries whose edited image retrieves the (subject, b) image.

    The edited embedding image(s,a) + lam * (text(s,b) - text(s,a)) is
    renormalized; the query's own input image is excluded from the candidates.
    Returns (score, number of queries).
    """
    hits, total = 0, 0
    for s in range(g.n_subjects):
        for a in range(g.n_attributes):
            src = g.index(s, a)
            targets = [g.index(s, b) for b in range(g.n_attributes) if b != a]
            q = _unit(g.images[src] + lam * (g.texts[targets] - g.texts[src]))
            sims = q @ g.images.T
            sims[:, src] = -np.inf
            hits += int(np.sum(np.argmax(sims, axis=1) == np.array(targets)))
            total += len(targets)
    return hits / total, total


def run_simat_proxy(spec: ExperimentSpec, grid: GridSpec | None = None,
                    loss: LossConfig | None = None, optimizer: dict | None = None,
                    workers: int = 1) -> ExperimentResult:
    """Text-delta image editing on a subject x attribute grid."""
    grid = grid or GridSpec()
    records, base, opt_cfg = _trained_models(spec, loss, optimizer, workers)
    result = ExperimentResult(spec, base, opt_cfg, records)
    d = spec.resolved_dims()[0]
    chance = 1.0 / (grid.n_subjects * grid.n_attributes - 1)

    ideal, _ = simat_score(additive_grid(grid, d, derive_seed(0, "simat/additive")))
    scores, queries = [], 0
    for seed in spec.seeds:
        score, q = simat_score(random_grid(grid, d, derive_seed(seed, "simat/random")))
        scores.append(score)
        queries += q
    random_mean = float(np.mean(scores))
    sd = math.sqrt(chance * (1 - chance) / queries)
    result.details.update({"additive_score": ideal, "random_score": random_mean,
                           "random_scores": scores, "chance": chance, "chance_sd": sd,
                           "lambda": SIMAT_LAMBDA, "grid": asdict(grid)})
    result.checks["additive_exact"] = ideal == 1.0
    result.checks["random_at_chance"] = abs(random_mean - chance) <= SIMAT_SIGMAS * sd

    table: dict[str, list[float]] = {}
    for r in records:
        g = model_grid(grid, _model(r), random_text_map(r.extras["map_seed"]),
                       derive_seed(r.seed, "simat/eval"))
        table.setdefault(r.variant, []).append(simat_score(g)[0])
    result.report_only["score"] = {v: {"per_seed": s, "mean": float(np.mean(s))} for v, s in table.items()}
    return result


RUNNERS = {
    "idealized_gap": run_idealized_gap,
    "sphere3d": run_sphere3d,
    "loss_comparison": run_loss_comparison,
    "zeroshot_proxy": run_zeroshot_proxy,
    "simat_proxy": run_simat_proxy,
}


def run_experiment(spec: ExperimentSpec, loss: LossConfig | None = None,
                   optimizer: dict | None = None, workers: int = 1) -> ExperimentResult:
    return RUNNERS[spec.name](spec, loss=loss, optimizer=optimizer, workers=workers)
