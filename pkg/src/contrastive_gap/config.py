"""Run configuration: JSON file plus command-line overrides, strictly validated."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from contrastive_gap.errors import ConfigError
from contrastive_gap.experiments import ExperimentSpec, resolve_optimizer
from contrastive_gap.losses import LossConfig
from contrastive_gap.optimizer import OptimizerConfig

OUTPUT_ENV = "CONTRASTIVE_GAP_OUT"
DEFAULT_OUTPUT_ROOT = "runs"

TOP_LEVEL_KEYS = {"experiment", "loss", "optimizer", "output_dir", "deterministic", "seed", "workers"}
EXPERIMENT_KEYS = {f.name for f in fields(ExperimentSpec)}
LOSS_KEYS = {f.name for f in fields(LossConfig)}
OPTIMIZER_KEYS = {f.name for f in fields(OptimizerConfig)} - {"seed"}


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentSpec
    loss: LossConfig
    optimizer: OptimizerConfig
    output_dir: Path
    deterministic: bool = False
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment.to_dict(),
            "loss": self.loss.to_dict(),
            "optimizer": {k: v for k, v in self.optimizer.to_dict().items() if k != "seed"},
            "output_dir": str(self.output_dir),
            "deterministic": self.deterministic,
            "workers": self.workers,
        }

    def optimizer_overrides(self) -> dict:
        return {k: v for k, v in self.optimizer.to_dict().items() if k != "seed"}


def default_output_dir(experiment: str) -> Path:
    root = os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_ROOT
    return Path(root) / experiment


def _check_keys(section: dict, allowed: set[str], prefix: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(prefix.rstrip("."), "expected a JSON object")
    for key in sorted(section):
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", "unknown key")


def load_config_file(path: str | Path | None) -> dict:
    """Parsed JSON object from ``path``; an empty or missing path gives ``{}``."""
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {p}: {exc.strerror or exc}") from exc
    if not text.strip():
        return {}
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{p} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("", f"{p} must hold a JSON object")
    return obj


def parse_config(path: str | Path | None = None, *, experiment: str | None = None,
                 seed: int | None = None, out: str | Path | None = None,
                 deterministic: bool | None = None, dims: list[int] | None = None,
                 variant: str | None = None, paper_scale: bool | None = None,
                 epochs: int | None = None, workers: int | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from an optional JSON file; keyword flags win over the file.

    Raises:
        ConfigError: naming the dotted key path for unknown keys or invalid values.
    """
    raw = load_config_file(path)
    _check_keys(raw, TOP_LEVEL_KEYS, "")
    exp = dict(raw.get("experiment") or {})
    loss = dict(raw.get("loss") or {})
    opt = dict(raw.get("optimizer") or {})
    _check_keys(exp, EXPERIMENT_KEYS, "experiment.")
    _check_keys(loss, LOSS_KEYS, "loss.")
    _check_keys(opt, OPTIMIZER_KEYS, "optimizer.")

    if experiment is not None:
        exp["name"] = experiment
    if "name" not in exp:
        raise ConfigError("experiment.name", "required (use --experiment or the config file)")
    if seed is not None:
        exp["seeds"] = [seed]
    elif "seed" in raw:
        exp["seeds"] = [raw["seed"]]
    if dims is not None:
        exp["dimensions"] = list(dims)
    if variant is not None:
        exp["variants"] = [variant]
    if paper_scale is not None:
        exp["paper_scale"] = paper_scale
    if epochs is not None:
        exp["epochs"] = epochs

    try:
        spec = ExperimentSpec.from_dict(exp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(_guess_key("experiment", exc, EXPERIMENT_KEYS), str(exc)) from exc
    try:
        loss_cfg = LossConfig(**loss)
    except (TypeError, ValueError) as exc:
        raise ConfigError(_guess_key("loss", exc, LOSS_KEYS), str(exc)) from exc
    try:
        opt_cfg = resolve_optimizer(spec, opt)
    except (TypeError, ValueError) as exc:
        raise ConfigError(_guess_key("optimizer", exc, OPTIMIZER_KEYS), str(exc)) from exc

    if out is not None:
        output_dir = Path(out)
    elif raw.get("output_dir"):
        output_dir = Path(raw["output_dir"])
    else:
        output_dir = default_output_dir(spec.name)
    det = deterministic if deterministic is not None else bool(raw.get("deterministic", False))
    n_workers = workers if workers is not None else raw.get("workers", 1)
    if not isinstance(n_workers, int) or n_workers < 1:
        raise ConfigError("workers", "must be a positive integer")
    return RunConfig(spec, loss_cfg, opt_cfg, output_dir, det, n_workers)


def _guess_key(section: str, exc: Exception, keys: set[str]) -> str:
    """Dotted path of the first key named in a validation message, else the section."""
    msg = str(exc)
    for key in sorted(keys, key=len, reverse=True):
        if key in msg:
            return f"{section}.{key}"
    return section


def check_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output_dir", f"cannot create {directory}: {exc.strerror or exc}") from exc
    if not os.access(directory, os.W_OK):
        raise ConfigError("output_dir", f"{directory} is not writable")

