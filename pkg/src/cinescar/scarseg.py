"""Motion-image segmentation of scar and myocardium from cine frames and flows.

Inputs are fused by channel concatenation. Four ablation modes choose which
channels the network sees; the dual-task flag decides whether the
myocardium output is supervised alongside the scar output.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ndgrad as nd
from .netarch import UNet, UNetSpec, build, forward
from .pipeline import seeds
from .pipeline.augment import Sample, augment

log = logging.getLogger(__name__)

DICE_EPS = 1e-5
PROB_CLAMP = 1e-7
MAX_DISP = 4.0  # px; flow channels are divided by this


class AblationMode(str, enum.Enum):
    ED_ONLY = "ED_ONLY"
    ALL_FRAMES = "ALL_FRAMES"
    OF_PLUS_ED = "OF_PLUS_ED"
    OF_PLUS_ALL = "OF_PLUS_ALL"

    @property
    def uses_flow(self) -> bool:
        return self in (AblationMode.OF_PLUS_ED, AblationMode.OF_PLUS_ALL)

    def channels(self, T: int) -> int:
        return {"ED_ONLY": 1, "ALL_FRAMES": T, "OF_PLUS_ED": 3, "OF_PLUS_ALL": 3 * T - 2}[self.value]

    @classmethod
    def parse(cls, value) -> "AblationMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown ablation mode {value!r}; expected one of {[m.value for m in cls]}") from None


def fuse_inputs(seq: np.ndarray, flows: Optional[np.ndarray], mode, max_disp: float = MAX_DISP) -> np.ndarray:
    """Stack the channels a mode sees into a (C, H, W) array.

    OF_PLUS_ALL: frames 0..T-1 then (dx, dy) of flows 1..T-1, scaled by 1/max_disp.
    OF_PLUS_ED: frame 0, then the temporal means of |dx| and |dy|, scaled the same way.
    """
    mode = AblationMode.parse(mode)
    seq = np.asarray(seq)
    if seq.ndim != 3:
        raise ValueError(f"fuse_inputs: sequence must be (T, H, W), got {seq.shape}")
    T = seq.shape[0]
    if mode.uses_flow:
        if flows is None:
            raise ValueError(f"fuse_inputs: mode {mode.value} needs flows")
        flows = np.asarray(flows)
        if flows.shape != (T - 1, 2) + seq.shape[1:]:
            raise ValueError(f"fuse_inputs: expected flows of shape {(T - 1, 2) + seq.shape[1:]}, got {flows.shape}")
    if mode is AblationMode.ED_ONLY:
        return seq[:1].copy()
    if mode is AblationMode.ALL_FRAMES:
        return seq.copy()
    if mode is AblationMode.OF_PLUS_ED:
        summary = np.abs(flows).mean(axis=0) / max_disp
        return np.concatenate([seq[:1], summary.astype(seq.dtype)])
    return np.concatenate([seq, (flows.reshape((2 * (T - 1),) + seq.shape[1:]) / max_disp).astype(seq.dtype)])


def _binary_gt(gt) -> np.ndarray:
    g = gt.data if isinstance(gt, nd.Tensor) else np.asarray(gt)
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("seg_loss: ground truth is not binary")
    return g


def seg_loss(pred, gt, dual_task: bool = True) -> nd.Tensor:
    """Soft Dice loss plus BCE, per class and summed; channel 0 is scar, 1 is myocardium.

    ``pred`` holds probabilities of shape (N, 2, H, W) (or (2, H, W)); Dice
    sums run over the whole batch. With ``dual_task`` false only channel 0
    contributes.
    """
    pred = nd.as_tensor(pred)
    g = _binary_gt(gt).astype(pred.data.dtype)
    if pred.shape != g.shape:
        raise ValueError(f"seg_loss: prediction {pred.shape} and ground truth {g.shape} differ")
    if pred.ndim == 3:
        pred = nd.reshape(pred, (1,) + pred.shape)
        g = g[None]
    classes = range(pred.shape[1]) if dual_task else range(1)
    total = None
    for c in classes:
        p = pred[:, c]
        gc = nd.Tensor(g[:, c])
        inter = nd.sum(nd.mul(p, gc))
        dice = nd.div(nd.add(nd.scale(inter, 2.0), DICE_EPS), nd.add(nd.add(nd.sum(p), float(g[:, c].sum())), DICE_EPS))
        dice_loss = nd.sub(1.0, dice)
        pc = nd.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
        one = nd.Tensor(np.ones(gc.shape))
        bce = nd.neg(
            nd.mean(nd.add(nd.mul(gc, nd.log(pc)), nd.mul(nd.sub(one, gc), nd.log(nd.sub(one, pc)))))
        )
        term = nd.add(dice_loss, bce)
        total = term if total is None else nd.add(total, term)
    return total


@dataclass
class SegTrainConfig:
    epochs: int = 400
    batch_size: int = 8
    lr: float = 5e-4
    dual_task: bool = True
    augment: bool = True
    seed: int = 0
    depth: int = 3
    base_channels: int = 8
    max_disp: float = MAX_DISP
    log_every: int = 50

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "depth", "base_channels", "max_disp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SegTrainConfig.{name} must be positive, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SegCase:
    """Training/eval unit: cine sequence, flows to frame 0 (or None) and ED masks."""

    sequence: np.ndarray
    flows: Optional[np.ndarray]
    scar: np.ndarray
    myo: np.ndarray


@dataclass
class SegModel:
    net: UNet
    mode: AblationMode
    T: int
    config: SegTrainConfig
    loss_trace: list = field(default_factory=list)

    @property
    def in_channels(self) -> int:
        return self.net.spec.in_channels


def seg_spec(mode: AblationMode, T: int, cfg: SegTrainConfig) -> UNetSpec:
    return UNetSpec(mode.channels(T), 2, depth=cfg.depth, base_channels=cfg.base_channels, final_activation="sigmoid")


def train_seg(dataset: Sequence[SegCase], mode, cfg: SegTrainConfig) -> SegModel:
    """Adam on seg_loss over random minibatches; one epoch is one optimiser step."""
    mode = AblationMode.parse(mode)
    if not dataset:
        raise ValueError("train_seg: empty dataset")
    T = dataset[0].sequence.shape[0]
    for i, case in enumerate(dataset):
        if case.sequence.shape[0] != T:
            raise ValueError(f"train_seg: case {i} has T={case.sequence.shape[0]}, expected {T}")
        if mode.uses_flow and case.flows is None:
            raise ValueError(f"train_seg: mode {mode.value} needs flows but case {i} has none")
    model = SegModel(build(seg_spec(mode, T, cfg), seed=seeds.derive(cfg.seed, "init")), mode, T, cfg)
    opt = nd.Adam(model.net.parameters(), lr=cfg.lr)
    rng = seeds.generator(cfg.seed, "sampling")
    aug_rng = seeds.generator(cfg.seed, "augmentation")
    dtype = nd.get_dtype()
    for epoch in range(cfg.epochs):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        xs, ys = [], []
        for i in idx:
            case = dataset[i]
            sample = Sample(case.sequence, case.flows if mode.uses_flow else None, np.stack([case.scar, case.myo]))
            if cfg.augment:
                sample = augment(sample, aug_rng)
            xs.append(fuse_inputs(sample.frames, sample.flows, mode, cfg.max_disp))
            ys.append(sample.masks)
        opt.zero_grad()
        probs = forward(model.net, np.stack(xs).astype(dtype))
        loss = seg_loss(probs, np.stack(ys), dual_task=cfg.dual_task)
        value = float(loss.data[0])
        if not np.isfinite(value):
            raise FloatingPointError(f"train_seg: non-finite loss at epoch {epoch}")
        loss.backward()
        opt.step()
        model.loss_trace.append(value)
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            log.info("seg %s epoch %d/%d loss %.4f", mode.value, epoch + 1, cfg.epochs, np.mean(model.loss_trace[-cfg.log_every :]))
    return model


@dataclass
class SegMaskPair:
    scar_prob: np.ndarray
    myo_prob: np.ndarray
    threshold: float = 0.5

    @property
    def scar(self) -> np.ndarray:
        return (self.scar_prob >= self.threshold).astype(np.uint8)

    @property
    def myo(self) -> np.ndarray:
        return (self.myo_prob >= self.threshold).astype(np.uint8)


def predict(model: SegModel, fusion_input: np.ndarray, threshold: float = 0.5) -> SegMaskPair:
    """Sigmoid probabilities and thresholded masks for one (C, H, W) fused input."""
    x = np.asarray(fusion_input)
    if x.ndim != 3 or x.shape[0] != model.in_channels:
        raise ValueError(f"predict: model expects {model.in_channels} input channels, got input of shape {x.shape}")
    with nd.no_grad():
        probs = forward(model.net, x[None].astype(nd.get_dtype())).data[0]
    return SegMaskPair(probs[0].astype(np.float64), probs[1].astype(np.float64), threshold)


def predict_case(model: SegModel, case: SegCase, threshold: float = 0.5) -> SegMaskPair:
    return predict(model, fuse_inputs(case.sequence, case.flows if model.mode.uses_flow else None, model.mode, model.config.max_disp), threshold)
