"""Synthetic cine phantom: a contracting annulus with a hypokinetic scar sector.

The end-diastolic (ED) frame is an analytic image: a bright blood pool inside
``r_in``, a myocardial ring up to ``r_out`` and a background outside, joined by
one-pixel linear ramps. A faint plane-wave pattern inside the ring gives the
wall trackable texture. The scar is an angular sector of the ring that
contracts less (``A_scar < A_normal``) and optionally carries a faint
intensity cue.

Ground-truth motion for frame t is a backward flow on the reference grid,

    flow_t(p) = -A(theta) * s(t) * w(r) * (p - center),
    s(t) = sin^2(pi t / T),  w(r) = exp(-(r - r_mid)^2 / (2 sigma_r^2)),

so reference tissue at p sits at p + flow_t(p) in frame t. Frame t is the
analytic ED image evaluated through the inverse of that map, which makes
``warp_bilinear(frame_t, flow_t)`` reproduce frame 0 up to noise and
interpolation error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

TRANSITION_BAND = 0.1  # radians over which A(theta) blends into the scar value

# plane waves (direction in radians, wavelength in pixels, phase) summed into the wall texture
_TEXTURE_WAVES = ((0.3, 7.0, 0.0), (1.4, 9.0, 1.1), (2.5, 11.0, 2.3))


@dataclass(frozen=True)
class PhantomConfig:
    H: int = 64
    W: int = 64
    T: int = 8
    cx: float = 32.0
    cy: float = 32.0
    r_in: float = 12.0
    r_out: float = 22.0
    A_normal: float = 0.25
    A_scar: float = 0.05
    theta0: float = 0.0
    theta1: float = math.pi / 2
    background: float = 0.1
    blood: float = 0.9
    myocardium: float = 0.4
    scar_level: float = 0.5
    texture_cue: float = 0.15
    myo_texture: float = 0.08  # amplitude of the smooth in-wall pattern that makes wall motion observable
    texture_phase: float = 0.0
    noise: float = 0.01
    seed: int = 0

    def violations(self) -> list:
        bad = []
        if self.H < 1 or self.W < 1:
            bad.append(f"H, W must be positive (got {self.H}, {self.W})")
        if self.T < 2:
            bad.append(f"T >= 2 (got {self.T})")
        if not 0 < self.r_in < self.r_out < min(self.H, self.W) / 2:
            bad.append(f"0 < r_in < r_out < min(H, W)/2 (got r_in={self.r_in}, r_out={self.r_out})")
        for name in ("A_normal", "A_scar"):
            if not 0 <= getattr(self, name) < 1:
                bad.append(f"{name} in [0, 1) (got {getattr(self, name)})")
        if self.A_scar > self.A_normal:
            bad.append(f"A_scar <= A_normal (got {self.A_scar} > {self.A_normal})")
        width = self.theta1 - self.theta0
        if not 0 <= width <= 2 * math.pi:
            bad.append(f"sector width theta1 - theta0 in [0, 2*pi] (got {width})")
        if not 0 <= self.texture_cue <= 1:
            bad.append(f"texture_cue in [0, 1] (got {self.texture_cue})")
        if self.myo_texture < 0:
            bad.append(f"myo_texture >= 0 (got {self.myo_texture})")
        if self.noise < 0:
            bad.append(f"noise >= 0 (got {self.noise})")
        return bad

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise ValueError("invalid PhantomConfig: " + "; ".join(bad))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PhantomCase:
    sequence: np.ndarray  # (T, H, W)
    gt_flows: np.ndarray  # (T-1, 2, H, W), reference -> frame t
    myo_mask: np.ndarray  # (H, W) uint8, ED phase
    scar_mask: np.ndarray  # (H, W) uint8, ED phase
    config: PhantomConfig = field(repr=False, default=None)


def contraction_profile(t, T: int):
    return np.sin(np.pi * np.asarray(t, dtype=float) / T) ** 2


def _sector_distance(theta, theta0: float, width: float):
    """Signed angular distance to the sector boundary, positive inside."""
    u = np.mod(theta - theta0, 2 * np.pi)
    inside = u < width
    d_in = np.minimum(u, width - u)
    d_out = -np.minimum(u - width, 2 * np.pi - u)
    return np.where(inside, d_in, d_out), inside & (width > 0)


def _polar(cfg: PhantomConfig, xs, ys):
    dx, dy = xs - cfg.cx, ys - cfg.cy
    return dx, dy, np.hypot(dx, dy), np.arctan2(dy, dx)


def _amplitude(cfg: PhantomConfig, theta):
    d, _ = _sector_distance(theta, cfg.theta0, cfg.theta1 - cfg.theta0)
    blend = np.clip(d / TRANSITION_BAND, 0.0, 1.0)
    return cfg.A_normal + (cfg.A_scar - cfg.A_normal) * blend


def _radial_window(cfg: PhantomConfig, r):
    r_mid = 0.5 * (cfg.r_in + cfg.r_out)
    sigma = cfg.r_out - cfg.r_in
    return np.exp(-((r - r_mid) ** 2) / (2 * sigma**2))


def flow_at(cfg: PhantomConfig, t: int, xs, ys):
    """Ground-truth backward flow of frame ``t`` evaluated at reference points."""
    dx, dy, r, theta = _polar(cfg, xs, ys)
    mag = _amplitude(cfg, theta) * contraction_profile(t, cfg.T) * _radial_window(cfg, r)
    return -mag * dx, -mag * dy


def wall_texture(cfg: PhantomConfig, xs, ys):
    """Smooth zero-mean pattern in [-1, 1]: the mean of three plane waves."""
    total = 0.0
    for angle, wavelength, phase in _TEXTURE_WAVES:
        u = xs * math.cos(angle) + ys * math.sin(angle)
        total = total + np.cos(2 * math.pi * u / wavelength + phase + cfg.texture_phase)
    return total / len(_TEXTURE_WAVES)


def render_ed(cfg: PhantomConfig, xs, ys):
    """Noise-free analytic ED intensity at arbitrary (x, y) positions."""
    _, _, r, theta = _polar(cfg, xs, ys)
    ring = np.clip(r - cfg.r_in + 0.5, 0, 1) * np.clip(cfg.r_out - r + 0.5, 0, 1)
    pool = np.clip(cfg.r_in - r + 0.5, 0, 1)
    outside = 1.0 - ring - pool
    width = cfg.theta1 - cfg.theta0
    if width > 0 and cfg.texture_cue > 0:
        d, _ = _sector_distance(theta, cfg.theta0, width)
        in_sector = np.clip(0.5 + r * d, 0, 1)
    else:
        in_sector = 0.0
    cue = cfg.texture_cue * in_sector
    muscle = cfg.myocardium * (1 - cue) + cfg.scar_level * cue
    if cfg.myo_texture > 0:
        muscle = muscle + cfg.myo_texture * wall_texture(cfg, xs, ys)
    return pool * cfg.blood + ring * muscle + outside * cfg.background


def _invert_map(cfg: PhantomConfig, t: int, xs, ys, iters: int = 60):
    """Solve p + flow_t(p) = q for p by fixed-point iteration (flow_t is a contraction)."""
    px, py = xs.copy(), ys.copy()
    for _ in range(iters):
        fx, fy = flow_at(cfg, t, px, py)
        px, py = xs - fx, ys - fy
    return px, py


def generate(cfg: PhantomConfig) -> PhantomCase:
    """Render a phantom sequence with its ground-truth flows and ED masks."""
    cfg.validate()
    ys, xs = np.meshgrid(np.arange(cfg.H, dtype=float), np.arange(cfg.W, dtype=float), indexing="ij")
    rng = np.random.default_rng(cfg.seed)

    frames = np.empty((cfg.T, cfg.H, cfg.W))
    flows = np.empty((cfg.T - 1, 2, cfg.H, cfg.W))
    frames[0] = render_ed(cfg, xs, ys)
    for t in range(1, cfg.T):
        fx, fy = flow_at(cfg, t, xs, ys)
        flows[t - 1, 0], flows[t - 1, 1] = fx, fy
        px, py = _invert_map(cfg, t, xs, ys)
        frames[t] = render_ed(cfg, px, py)
    if cfg.noise > 0:
        frames += rng.normal(scale=cfg.noise, size=frames.shape)

    _, _, r, theta = _polar(cfg, xs, ys)
    myo = (r >= cfg.r_in) & (r <= cfg.r_out)
    _, in_sector = _sector_distance(theta, cfg.theta0, cfg.theta1 - cfg.theta0)
    scar = myo & in_sector
    return PhantomCase(frames, flows, myo.astype(np.uint8), scar.astype(np.uint8), cfg)
