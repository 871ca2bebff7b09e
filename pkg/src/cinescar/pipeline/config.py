"""JSON run configuration with strict key checking.

Top-level sections and their defaults::

    {
      "seed": 0,
      "precision": 32,
      "phantom": {...PhantomConfig fields...},
      "dataset": {"n_train": 20, "n_test": 8, "randomize_layout": true},
      "motion": {...MotionTrainConfig fields..., "method": "unet",
                 "varreg_iters": 150, "varreg_lr": 0.05, "varreg_levels": 3,
                 "ilk_window": 7, "ilk_levels": 3, "ilk_iters": 5},
      "seg": {"mode": "OF_PLUS_ALL", "dual_task": true, "epochs": 400, "batch": 8,
              "lr": 5e-4, "augment": true, "depth": 3, "base_channels": 8, "max_disp": 4.0},
      "eval": {"percentile": 95.0},
      "io": {"dataset_dir": "data", "out_dir": "out"}
    }

Unknown keys anywhere raise ``UsageError``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from ..motionext import DEFAULT_SMOOTHNESS, MotionTrainConfig
from ..phantom import PhantomConfig
from ..scarseg import AblationMode, SegTrainConfig
from .errors import UsageError

MOTION_METHODS = ("unet", "varreg", "f2f", "ilk")


@dataclass
class DatasetSection:
    n_train: int = 20
    n_test: int = 8
    randomize_layout: bool = True  # per-case scar sector angle and wall-texture phase


@dataclass
class MotionSection:
    method: str = "unet"
    epochs: int = 1000
    batch_size: int = 16
    lr: float = 5e-4
    smoothness_weight: float = DEFAULT_SMOOTHNESS
    depth: int = 3
    base_channels: int = 16
    head_scale: float = 1e-3
    varreg_iters: int = 150
    varreg_lr: float = 0.05
    varreg_levels: int = 3
    ilk_window: int = 7
    ilk_levels: int = 3
    ilk_iters: int = 5

    def train_config(self, seed: int) -> MotionTrainConfig:
        return MotionTrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            smoothness_weight=self.smoothness_weight,
            seed=seed,
            depth=self.depth,
            base_channels=self.base_channels,
            head_scale=self.head_scale,
        )


@dataclass
class SegSection:
    mode: str = "OF_PLUS_ALL"
    dual_task: bool = True
    epochs: int = 400
    batch: int = 8
    lr: float = 5e-4
    augment: bool = True
    depth: int = 3
    base_channels: int = 8
    max_disp: float = 4.0

    def train_config(self, seed: int, dual_task=None) -> SegTrainConfig:
        return SegTrainConfig(
            epochs=self.epochs,
            batch_size=self.batch,
            lr=self.lr,
            dual_task=self.dual_task if dual_task is None else dual_task,
            augment=self.augment,
            seed=seed,
            depth=self.depth,
            base_channels=self.base_channels,
            max_disp=self.max_disp,
        )


@dataclass
class EvalSection:
    percentile: float = 95.0


@dataclass
class IOSection:
    dataset_dir: str = "data"
    out_dir: str = "out"


@dataclass
class RunConfig:
    seed: int = 0
    precision: int = 32
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    motion: MotionSection = field(default_factory=MotionSection)
    seg: SegSection = field(default_factory=SegSection)
    eval: EvalSection = field(default_factory=EvalSection)
    io: IOSection = field(default_factory=IOSection)

    def validate(self) -> None:
        problems = list(self.phantom.violations())
        if self.precision not in (32, 64):
            problems.append(f"precision must be 32 or 64 (got {self.precision})")
        if self.motion.method not in MOTION_METHODS:
            problems.append(f"motion.method must be one of {MOTION_METHODS} (got {self.motion.method!r})")
        try:
            AblationMode.parse(self.seg.mode)
        except ValueError as exc:
            problems.append(str(exc))
        if self.dataset.n_train < 1 or self.dataset.n_test < 1:
            problems.append("dataset.n_train and dataset.n_test must be >= 1")
        if not 0 <= self.eval.percentile <= 100:
            problems.append(f"eval.percentile must lie in [0, 100] (got {self.eval.percentile})")
        if self.motion.ilk_window < 3 or self.motion.ilk_window % 2 == 0:
            problems.append(f"motion.ilk_window must be odd and >= 3 (got {self.motion.ilk_window})")
        try:
            self.motion.train_config(self.seed)
            self.seg.train_config(self.seed)
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise UsageError("invalid config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return config_hash(self.to_dict())


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise UsageError(f"config section {where or '<root>'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise UsageError(f"unknown config key(s) in {where or '<root>'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}".lstrip(".")) if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config section {where or '<root>'}: {exc}") from exc


_SECTIONS = {
    (RunConfig, "phantom"): PhantomConfig,
    (RunConfig, "dataset"): DatasetSection,
    (RunConfig, "motion"): MotionSection,
    (RunConfig, "seg"): SegSection,
    (RunConfig, "eval"): EvalSection,
    (RunConfig, "io"): IOSection,
}


def from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    cfg.validate()
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(data)
