"""Motion extraction to the end-diastolic reference frame.

Four estimators share the flow conventions of :mod:`cinescar.imagewarp`:

* ``train_me`` / ``estimate_unet``: an amortised U-Net mapping an
  (I_0, I_t) pair to the flow that warps I_t onto I_0;
* ``estimate_varreg``: the same objective optimised directly on one pair;
* ``estimate_f2f``: adjacent-frame estimates chained with ``compose_flows``;
* ``estimate_ilk``: pyramidal iterative Lucas-Kanade.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import imagewarp as iw
from . import ndgrad as nd
from ._accel import njit, pick
from .netarch import UNet, UNetSpec, build, forward
from .pipeline import seeds

log = logging.getLogger(__name__)


# Weight on the per-pixel smoothness term. With both terms normalised per pixel this
# keeps data and smoothness within ~10x of each other on the default phantom.
DEFAULT_SMOOTHNESS = 2e-3


def smoothness_density(flow) -> nd.Tensor:
    """Smoothness penalty per flow pixel: ``smoothness_loss`` divided by N*H*W."""
    flow = nd.as_tensor(flow)
    n = flow.shape[0] if flow.ndim == 4 else 1
    return nd.scale(iw.smoothness_loss([flow]), 1.0 / (n * flow.shape[-2] * flow.shape[-1]))


def registration_objective(fixed, moving, flow, smoothness_weight: float) -> nd.Tensor:
    """MSE(fixed, warp(moving, flow)) + weight * smoothness per pixel."""
    data = iw.mse(fixed, iw.warp_bilinear(moving, flow))
    if smoothness_weight == 0:
        return data
    return nd.add(data, nd.scale(smoothness_density(flow), smoothness_weight))


# ---------------------------------------------------------------------------
# amortised network


@dataclass
class MotionTrainConfig:
    epochs: int = 1000
    batch_size: int = 16
    lr: float = 5e-4
    smoothness_weight: float = DEFAULT_SMOOTHNESS
    seed: int = 0
    depth: int = 3
    base_channels: int = 16
    head_scale: float = 1e-3
    log_every: int = 100

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "depth", "base_channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"MotionTrainConfig.{name} must be positive, got {getattr(self, name)}")
        if self.smoothness_weight < 0 or self.head_scale < 0:
            raise ValueError("MotionTrainConfig: smoothness_weight and head_scale must be non-negative")

    def unet_spec(self) -> UNetSpec:
        return UNetSpec(2, 2, depth=self.depth, base_channels=self.base_channels, head_scale=self.head_scale)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MotionModel:
    net: UNet
    config: MotionTrainConfig
    loss_trace: list = field(default_factory=list)

    @classmethod
    def fresh(cls, config: MotionTrainConfig) -> "MotionModel":
        return cls(build(config.unet_spec(), seed=seeds.derive(config.seed, "init")), config)


def _check_sequences(dataset: Sequence[np.ndarray]) -> tuple:
    if len(dataset) == 0:
        raise ValueError("train_me: empty dataset")
    shape = None
    for i, seq in enumerate(dataset):
        seq = np.asarray(seq)
        if seq.ndim != 3:
            raise ValueError(f"train_me: sequence {i} must be (T, H, W), got {seq.shape}")
        if seq.shape[0] < 2:
            raise ValueError(f"train_me: sequence {i} has a single frame; need T >= 2")
        if shape is not None and seq.shape[1:] != shape:
            raise ValueError(f"train_me: sequence {i} is {seq.shape[1:]}, expected {shape}")
        shape = seq.shape[1:]
    return shape


def predict_pairs(model: MotionModel, fixed: np.ndarray, moving: np.ndarray) -> nd.Tensor:
    """Network flows for stacked (B, H, W) fixed/moving batches; returns a (B, 2, H, W) Tensor."""
    x = np.stack([fixed, moving], axis=1)
    return forward(model.net, x)


def train_me(dataset: Sequence[np.ndarray], cfg: MotionTrainConfig, model: Optional[MotionModel] = None) -> MotionModel:
    """Fit the motion network on randomly drawn (sequence, t) pairs against frame 0.

    One epoch is one Adam step on a minibatch of ``cfg.batch_size`` pairs.
    Weight init and pair sampling use separate streams derived from ``cfg.seed``.
    """
    _check_sequences(dataset)
    seqs = [np.asarray(s, dtype=nd.get_dtype()) for s in dataset]
    model = model or MotionModel.fresh(cfg)
    opt = nd.Adam(model.net.parameters(), lr=cfg.lr)
    rng = seeds.generator(cfg.seed, "sampling")
    for epoch in range(cfg.epochs):
        idx = rng.integers(0, len(seqs), size=cfg.batch_size)
        fixed = np.stack([seqs[i][0] for i in idx])
        moving = np.stack([seqs[i][rng.integers(1, len(seqs[i]))] for i in idx])
        opt.zero_grad()
        flow = predict_pairs(model, fixed, moving)
        warped = iw.warp_bilinear(nd.Tensor(moving[:, None]), flow)
        loss = iw.mse(fixed[:, None], warped)
        if cfg.smoothness_weight:
            loss = nd.add(loss, nd.scale(smoothness_density(flow), cfg.smoothness_weight))
        value = float(loss.data[0])
        if not np.isfinite(value):
            raise FloatingPointError(f"train_me: non-finite loss at epoch {epoch}")
        loss.backward()
        opt.step()
        model.loss_trace.append(value)
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            log.info("motion epoch %d/%d loss %.6g", epoch + 1, cfg.epochs, np.mean(model.loss_trace[-cfg.log_every :]))
    return model


def estimate_unet(model: MotionModel, seq: np.ndarray) -> np.ndarray:
    """(T-1, 2, H, W) flows from frame 0 to every later frame, one batched forward pass."""
    seq = np.asarray(seq, dtype=nd.get_dtype())
    if seq.ndim != 3 or seq.shape[0] < 2:
        raise ValueError(f"estimate_unet: expected a (T>=2, H, W) sequence, got {seq.shape}")
    t = seq.shape[0] - 1
    with nd.no_grad():
        flows = predict_pairs(model, np.repeat(seq[:1], t, axis=0), seq[1:])
    return flows.data


# ---------------------------------------------------------------------------
# direct variational registration


def _pyramid(image: np.ndarray, levels: int) -> list:
    out = [image]
    for _ in range(levels - 1):
        if min(out[-1].shape) < 4:
            break
        out.append(iw.downsample2x(out[-1]))
    return out[::-1]


def estimate_varreg(
    fixed,
    moving,
    smoothness_weight: float = DEFAULT_SMOOTHNESS,
    iters: int = 150,
    lr: float = 0.05,
    levels: int = 3,
) -> tuple:
    """Optimise a flow for one (fixed, moving) pair with Adam, coarse to fine.

    ``iters`` Adam steps run at every pyramid level. The best iterate at the
    finest level is kept, and the zero flow is returned instead if it scores
    better. Returns ``(flow, loss)``.
    """
    fixed = np.asarray(fixed, dtype=nd.get_dtype())
    moving = np.asarray(moving, dtype=nd.get_dtype())
    if fixed.shape != moving.shape or fixed.ndim != 2:
        raise ValueError(f"estimate_varreg: fixed {fixed.shape} and moving {moving.shape} must be equal 2-d shapes")
    if iters < 1 or levels < 1:
        raise ValueError("estimate_varreg: iters and levels must be >= 1")
    fixed_pyr, moving_pyr = _pyramid(fixed, levels), _pyramid(moving, levels)
    flow = np.zeros((2,) + fixed_pyr[0].shape, dtype=fixed.dtype)
    step = 0
    for level, (f, m) in enumerate(zip(fixed_pyr, moving_pyr)):
        if level:
            flow = iw.upsample_flow(flow, *f.shape).astype(fixed.dtype)
        param = nd.Tensor(flow, requires_grad=True)
        state = nd.AdamState(lr=lr)
        best_loss, best_flow = np.inf, flow.copy()
        for _ in range(iters + 1):
            param.grad[...] = 0
            loss = registration_objective(f, m, param, smoothness_weight)
            value = float(loss.data[0])
            if not np.isfinite(value):
                raise FloatingPointError(f"estimate_varreg: non-finite loss at iteration {step}")
            if value < best_loss:
                best_loss, best_flow = value, param.data.copy()
            if _ == iters:
                break
            loss.backward()
            nd.adam_step(state, {"flow": param.data}, {"flow": param.grad})
            step += 1
        flow = best_flow
    zero = np.zeros_like(flow)
    with nd.no_grad():
        zero_loss = float(registration_objective(fixed, moving, zero, smoothness_weight).data[0])
    if zero_loss <= best_loss:
        return zero, zero_loss
    return flow, best_loss


# ---------------------------------------------------------------------------
# frame-to-frame accumulation


def estimate_f2f(seq, pair_estimator: Optional[Callable] = None) -> np.ndarray:
    """Chain adjacent-frame flows into reference-0 flows.

    ``pair_estimator(fixed, moving) -> (2, H, W)`` defaults to
    :func:`estimate_varreg`. Output[t-1] maps frame-0 coordinates into frame t.
    """
    seq = np.asarray(seq)
    if seq.ndim != 3 or seq.shape[0] < 2:
        raise ValueError(f"estimate_f2f: expected a (T>=2, H, W) sequence, got {seq.shape}")
    if pair_estimator is None:
        pair_estimator = lambda f, m: estimate_varreg(f, m)[0]
    out = []
    total = None
    for t in range(1, seq.shape[0]):
        step = np.asarray(pair_estimator(seq[t - 1], seq[t]))
        total = step if total is None else iw.compose_flows(total, step)
        out.append(total)
    return np.stack(out)


# ---------------------------------------------------------------------------
# pyramidal iterative Lucas-Kanade


def _box_sum(a: np.ndarray, half: int) -> np.ndarray:
    # window sums with the window truncated at the border
    p = np.pad(a, half)
    c = np.pad(np.cumsum(np.cumsum(p, axis=0), axis=1), ((1, 0), (1, 0)))
    k = 2 * half + 1
    h, w = a.shape
    return c[k : k + h, k : k + w] - c[:h, k : k + w] - c[k : k + h, :w] + c[:h, :w]


def _lk_refine_numpy(fixed, moving, gx, gy, flow, half, iters, det_min):
    h, w = fixed.shape
    a11 = _box_sum(gx * gx, half)
    a12 = _box_sum(gx * gy, half)
    a22 = _box_sum(gy * gy, half)
    det = a11 * a22 - a12 * a12
    ok = np.abs(det) >= det_min
    safe = np.where(ok, det, 1.0)
    ys, xs = np.mgrid[0:h, 0:w]
    du, dv = flow[0].copy(), flow[1].copy()
    for _ in range(iters):
        b1 = np.zeros((h, w))
        b2 = np.zeros((h, w))
        for oy in range(-half, half + 1):
            for ox in range(-half, half + 1):
                qy, qx = ys + oy, xs + ox
                valid = (qy >= 0) & (qy < h) & (qx >= 0) & (qx < w)
                qy, qx = np.clip(qy, 0, h - 1), np.clip(qx, 0, w - 1)
                r = np.where(valid, fixed[qy, qx] - iw.sample_at(moving, qx + du, qy + dv), 0.0)
                b1 += gx[qy, qx] * r
                b2 += gy[qy, qx] * r
        du += np.where(ok, (a22 * b1 - a12 * b2) / safe, 0.0)
        dv += np.where(ok, (a11 * b2 - a12 * b1) / safe, 0.0)
    return np.stack([du, dv])


@njit
def _lk_refine_numba(fixed, moving, gx, gy, flow, half, iters, det_min):
    h, w = fixed.shape
    out = flow.copy()
    for y in range(h):
        for x in range(w):
            y_lo, y_hi = max(0, y - half), min(h, y + half + 1)
            x_lo, x_hi = max(0, x - half), min(w, x + half + 1)
            a11 = 0.0
            a12 = 0.0
            a22 = 0.0
            for yy in range(y_lo, y_hi):
                for xx in range(x_lo, x_hi):
                    a11 += gx[yy, xx] * gx[yy, xx]
                    a12 += gx[yy, xx] * gy[yy, xx]
                    a22 += gy[yy, xx] * gy[yy, xx]
            det = a11 * a22 - a12 * a12
            if abs(det) < det_min:
                continue
            du = out[0, y, x]
            dv = out[1, y, x]
            for _ in range(iters):
                b1 = 0.0
                b2 = 0.0
                for yy in range(y_lo, y_hi):
                    for xx in range(x_lo, x_hi):
                        # bilinear sample with border clamp, as imagewarp.sample_at
                        cx = min(max(xx + du, 0.0), w - 1.0)
                        cy = min(max(yy + dv, 0.0), h - 1.0)
                        x0 = min(max(int(np.floor(cx)), 0), max(w - 2, 0))
                        y0 = min(max(int(np.floor(cy)), 0), max(h - 2, 0))
                        x1 = min(x0 + 1, w - 1)
                        y1 = min(y0 + 1, h - 1)
                        ax = cx - x0
                        ay = cy - y0
                        top = moving[y0, x0] * (1 - ax) + moving[y0, x1] * ax
                        bot = moving[y1, x0] * (1 - ax) + moving[y1, x1] * ax
                        r = fixed[yy, xx] - (top * (1 - ay) + bot * ay)
                        b1 += gx[yy, xx] * r
                        b2 += gy[yy, xx] * r
                du += (a22 * b1 - a12 * b2) / det
                dv += (a11 * b2 - a12 * b1) / det
            out[0, y, x] = du
            out[1, y, x] = dv
    return out


_lk_refine = pick(_lk_refine_numba, _lk_refine_numpy)


def estimate_ilk(fixed, moving, window: int = 7, levels: int = 3, iters: int = 5, det_min: float = 1e-6) -> np.ndarray:
    """Pyramidal iterative Lucas-Kanade flow warping ``moving`` onto ``fixed``.

    Each pixel's ``window``-square neighbourhood is tracked as a rigidly
    translating patch: the 2x2 structure tensor comes from the fixed image's
    gradients, and every iteration resamples the moving image over the whole
    window at that pixel's displacement. Pixels with |det| < ``det_min`` keep
    the flow passed down from the coarser level.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"estimate_ilk: window must be odd and >= 3, got {window}")
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    if fixed.shape != moving.shape or fixed.ndim != 2:
        raise ValueError(f"estimate_ilk: fixed {fixed.shape} and moving {moving.shape} must be equal 2-d shapes")
    half = window // 2
    fixed_pyr, moving_pyr = _pyramid(fixed, levels), _pyramid(moving, levels)
    flow = np.zeros((2,) + fixed_pyr[0].shape)
    for level, (f, m) in enumerate(zip(fixed_pyr, moving_pyr)):
        if level:
            flow = iw.upsample_flow(flow, *f.shape)
        gy, gx = np.gradient(f)
        flow = _lk_refine(f, m, gx, gy, flow, half, iters, det_min)
    return flow
