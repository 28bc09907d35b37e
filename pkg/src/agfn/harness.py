"""Run configuration, dataset assembly and train/evaluate loops.

Config files are flat ``section.key = value`` lines; values are Python
literals (``3``, ``0.5``, ``"poisson"``, ``[16, 32]``, ``true``).
``#`` starts a comment. Unknown keys are rejected.
"""
from __future__ import annotations

import ast
import hashlib
import json
import os
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as D
from .model import init_params, save_checkpoint
from .numerics import rng_stream
from .optim import TrainConfig, evaluate, train_epoch

__all__ = [
    "ConfigError",
    "ModelConfig",
    "DataConfig",
    "RunOptions",
    "SweepAxes",
    "RunConfig",
    "parse_config",
    "load_config",
    "build_datasets",
    "run_training",
    "evaluate_run",
    "final_policy",
    "RunResult",
    "default_output_root",
]

OUTPUT_ROOT_ENV = "AGFN_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [128, 128])
    feature_dim: int = 64
    out_dim: int = 0  # 0 means same as feature_dim
    init_seed: int = 0


@dataclass
class DataConfig:
    source: str = "clusters"  # clusters | idx | csv
    n_classes: int = 3
    noise_ratio: float = 0.0
    noise_seed: int = 0
    # clusters
    dim: int = 20
    separation: float = 3.0
    std: float = 1.0
    train_per_class: int = 200
    test_per_class: int = 200
    cluster_seed: int = 0
    # idx
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    subset: int = 0
    subset_seed: int = 0
    # csv
    train_csv: str = ""
    test_csv: str = ""


@dataclass
class RunOptions:
    out_dir: str = ""
    run_id: str = "run"
    checkpoint: str = ""
    wall_clock: bool = True
    eval_every: int = 1


@dataclass
class SweepAxes:
    batch_sizes: list = field(default_factory=list)
    noise_ratios: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    seeds: list = field(default_factory=list)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunOptions = field(default_factory=RunOptions)
    sweep: SweepAxes = field(default_factory=SweepAxes)
    source_text: str = ""

    def digest(self) -> str:
        payload = {s: _as_dict(getattr(self, s)) for s in _SECTIONS}
        payload["run"].pop("out_dir", None)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


_SECTIONS = ("train", "model", "data", "run", "sweep")


def _as_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _parse_value(raw: str, where: str):
    lowered = raw.strip()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return ast.literal_eval(lowered)
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"{where}: cannot parse value {raw!r}") from exc


def _coerce(value, current, where):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a quoted string, got {value!r}")
        return value
    if isinstance(current, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    return value


def parse_config(text: str, origin: str = "<config>", overrides: dict | None = None,
                 base_dir=None) -> RunConfig:
    """Parse config text; relative data paths resolve against ``base_dir`` when given."""
    values = {s: {} for s in _SECTIONS}
    defaults = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip() if not _quoted_hash(line) else line.strip()
        if not line:
            continue
        where = f"{origin}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"{where}: unknown key {key!r} (sections: {', '.join(_SECTIONS)})")
        current = getattr(defaults, section)
        if name not in {f.name for f in fields(current)}:
            raise ConfigError(f"{where}: unknown key {key!r}")
        values[section][name] = _coerce(_parse_value(raw, where), getattr(current, name), where)
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        values[section][name] = value
    try:
        cfg = RunConfig(
            train=TrainConfig(**values["train"]),
            model=ModelConfig(**values["model"]),
            data=DataConfig(**values["data"]),
            run=RunOptions(**values["run"]),
            sweep=SweepAxes(**values["sweep"]),
            source_text=text,
        )
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    if base_dir is not None:
        _resolve_paths(cfg.data, Path(base_dir))
    _validate(cfg, origin)
    return cfg


def _resolve_paths(d: DataConfig, base: Path):
    for name in ("train_images", "train_labels", "test_images", "test_labels", "train_csv", "test_csv"):
        v = getattr(d, name)
        if v and not Path(v).is_absolute() and not Path(v).exists() and (base / v).exists():
            setattr(d, name, str(base / v))


def _quoted_hash(line: str) -> bool:
    i = line.find("#")
    return i >= 0 and line[:i].count('"') % 2 == 1


def _validate(cfg: RunConfig, origin: str):
    d = cfg.data
    if not 0.0 <= d.noise_ratio <= 1.0:
        raise ConfigError(f"{origin}: data.noise_ratio must lie in [0, 1]")
    if d.source not in ("clusters", "idx", "csv"):
        raise ConfigError(f"{origin}: data.source must be clusters, idx or csv")
    if d.source == "idx":
        paths = [d.train_images, d.train_labels, d.test_images, d.test_labels]
    elif d.source == "csv":
        paths = [d.train_csv, d.test_csv]
    else:
        paths = []
        if d.n_classes < 2 or d.std < 0 or d.dim < d.n_classes:
            raise ConfigError(f"{origin}: clusters need n_classes >= 2, std >= 0, dim >= n_classes")
    for p in paths:
        if not p or not Path(p).exists():
            raise ConfigError(f"{origin}: data path {p!r} does not exist")
    for r in cfg.sweep.noise_ratios:
        if not 0.0 <= float(r) <= 1.0:
            raise ConfigError(f"{origin}: sweep noise ratio {r} outside [0, 1]")


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path), overrides, base_dir=path.parent)


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def build_datasets(cfg: RunConfig):
    """Return ``(train, test)``; training labels are corrupted per ``data.noise_ratio``."""
    d = cfg.data
    if d.source == "clusters":
        means = D.simplex_means(d.n_classes, d.dim, d.separation, seed=d.cluster_seed)
        train = D.make_clusters(D.ClusterSpec(means, d.std, d.train_per_class), rng_stream(d.cluster_seed, 11))
        test = D.make_clusters(D.ClusterSpec(means, d.std, d.test_per_class), rng_stream(d.cluster_seed, 12),
                               split="test")
    elif d.source == "idx":
        train = D.load_idx_pair(d.train_images, d.train_labels, d.n_classes)
        test = D.load_idx_pair(d.test_images, d.test_labels, d.n_classes, split="test")
        if d.subset:
            train = D.subsample(train, d.subset, rng_stream(d.subset_seed, 13))
    else:
        train = D.read_csv(d.train_csv, d.n_classes)
        test = D.read_csv(d.test_csv, d.n_classes, split="test")
    if d.noise_ratio > 0:
        train = D.corrupt_labels(train, d.noise_ratio, rng_stream(d.noise_seed, 14))
    return train, test


@dataclass
class RunResult:
    params: object
    records: list
    test_accuracy: float
    test_loss: float


def run_training(cfg: RunConfig, datasets=None, out_dir=None, log=None) -> RunResult:
    """Initialise, train for ``train.epochs`` epochs, evaluate after each.

    When ``out_dir`` is given, one JSON record per epoch is appended to
    ``metrics.jsonl`` and the final parameters go to ``checkpoint.npz``.
    """
    train_set, test_set = datasets if datasets is not None else build_datasets(cfg)
    m = cfg.model
    params = init_params(train_set.inputs.shape[1], train_set.n_classes, hidden=tuple(m.hidden),
                         feature_dim=m.feature_dim, out_dim=m.out_dim or None, seed=m.init_seed)
    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        metrics_path.write_text("")
    t0 = time.perf_counter()
    records = []
    acc, loss = float("nan"), float("nan")
    tc = cfg.train
    for epoch in range(tc.epochs):
        params, em = train_epoch(train_set, params, tc, epoch)
        last = epoch == tc.epochs - 1
        if last or (cfg.run.eval_every and (epoch + 1) % cfg.run.eval_every == 0):
            acc, loss = evaluate(test_set, params, _eval_config(tc, em.policy))
        rec = {
            "run_id": cfg.run.run_id,
            "epoch": epoch,
            "policy": em.policy,
            "train_loss": em.train_loss,
            "test_accuracy": acc,
            "test_loss": loss,
            "edge_density": em.density,
            "alpha": params.scale.alpha,
            "beta": params.scale.beta,
            "wall_seconds": round(time.perf_counter() - t0, 3) if cfg.run.wall_clock else None,
        }
        records.append(rec)
        if metrics_path is not None:
            with metrics_path.open("a") as f:
                f.write(json.dumps(rec) + "\n")
        if log is not None:
            log(rec)
    if tc.epochs == 0:
        acc, loss = evaluate(test_set, params, _eval_config(tc, final_policy(tc)))
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.npz", params, cfg.digest())
    return RunResult(params, records, acc, loss)


def final_policy(tc: TrainConfig) -> str:
    """Graph policy in force after the last epoch (baseline while still pretraining)."""
    return tc.graph_policy if tc.epochs > tc.pretrain_epochs else "none"


def evaluate_run(cfg: RunConfig, params, test_set, eval_mode: str | None = None, eval_seed: int | None = None):
    tc = _eval_config(cfg.train, final_policy(cfg.train))
    if eval_mode is not None:
        tc = replace(tc, eval_mode=eval_mode)
    if eval_seed is not None:
        tc = replace(tc, eval_seed=eval_seed)
    return evaluate(test_set, params, tc)


def _eval_config(tc: TrainConfig, policy: str) -> TrainConfig:
    return tc if policy == tc.graph_policy else replace(tc, graph_policy=policy)
