"""Dice, Hausdorff, endpoint error and mean/SD aggregation for evaluation tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._accel import njit, pick

DICE_EPS = 1e-5


def _as_binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name}: mask is not binary (values other than 0/1 present)")
    return arr.astype(bool)


def dice_score(pred, gt, eps: float = DICE_EPS) -> float:
    """(2|P & G| + eps) / (|P| + |G| + eps) for binary masks of equal shape."""
    p, g = _as_binary(pred, "dice_score"), _as_binary(gt, "dice_score")
    if p.shape != g.shape:
        raise ValueError(f"dice_score: shapes {p.shape} and {g.shape} differ")
    inter = np.count_nonzero(p & g)
    return float((2.0 * inter + eps) / (np.count_nonzero(p) + np.count_nonzero(g) + eps))


def _directed_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # nearest-neighbour distance from each point of a to the set b; chunked to bound memory
    out = np.empty(len(a))
    step = max(1, 4_000_000 // max(len(b), 1))
    for s in range(0, len(a), step):
        d2 = ((a[s : s + step, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        out[s : s + step] = np.sqrt(d2.min(axis=1))
    return out


@njit
def _directed_numba(a, b):
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        best = np.inf
        for j in range(b.shape[0]):
            dy = a[i, 0] - b[j, 0]
            dx = a[i, 1] - b[j, 1]
            d = dy * dy + dx * dx
            if d < best:
                best = d
        out[i] = np.sqrt(best)
    return out


_directed = pick(_directed_numba, _directed_numpy)


def hausdorff(pred, gt, percentile: float = 100.0) -> float:
    """Symmetric Hausdorff distance over foreground pixel centers, in pixels.

    Each direction's nearest-neighbour distances are reduced with
    ``np.percentile`` and the larger of the two is returned; 100 gives the
    classic Hausdorff distance, 95 the HD95.
    """
    p, g = _as_binary(pred, "hausdorff"), _as_binary(gt, "hausdorff")
    if p.shape != g.shape:
        raise ValueError(f"hausdorff: shapes {p.shape} and {g.shape} differ")
    if not 0 <= percentile <= 100:
        raise ValueError(f"hausdorff: percentile must lie in [0, 100], got {percentile}")
    if not p.any() or not g.any():
        raise ValueError("hausdorff undefined: empty mask")
    a = np.argwhere(p).astype(np.float64)
    b = np.argwhere(g).astype(np.float64)
    return float(max(np.percentile(_directed(a, b), percentile), np.percentile(_directed(b, a), percentile)))


def endpoint_error(flow, gt_flow, mask=None) -> float:
    """Mean Euclidean distance between flow vectors over channel axis -3, optionally within ``mask``."""
    flow, gt_flow = np.asarray(flow, dtype=np.float64), np.asarray(gt_flow, dtype=np.float64)
    if flow.shape != gt_flow.shape:
        raise ValueError(f"endpoint_error: shapes {flow.shape} and {gt_flow.shape} differ")
    if flow.ndim < 3 or flow.shape[-3] != 2:
        raise ValueError(f"endpoint_error: expected (..., 2, H, W) flows, got {flow.shape}")
    err = np.sqrt(((flow - gt_flow) ** 2).sum(axis=-3))
    if mask is None:
        return float(err.mean())
    m = np.broadcast_to(_as_binary(mask, "endpoint_error"), err.shape)
    if not m.any():
        raise ValueError("endpoint_error: mask selects no pixels")
    return float(err[m].mean())


def aggregate(values: Sequence[float]) -> tuple:
    """(mean, population SD) of a nonempty sequence."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("aggregate: empty value list")
    return float(arr.mean()), float(arr.std(ddof=0))


@dataclass
class CaseScores:
    case_id: str
    dice_scar: float
    dice_myo: float
    hd_scar: float
    hd95_scar: float
    epe: Optional[float] = None


@dataclass
class EvalReport:
    """Per-case scores plus mean and population-SD aggregates.

    HD values are nan for a case whose predicted scar mask is empty; such
    cases are left out of the HD aggregates and counted in ``hd_skipped``.
    """

    cases: list = field(default_factory=list)

    def add(self, scores: CaseScores) -> None:
        self.cases.append(scores)

    def _column(self, name: str) -> np.ndarray:
        return np.array([getattr(c, name) for c in self.cases], dtype=float)

    @property
    def hd_skipped(self) -> int:
        return int(np.isnan(self._column("hd_scar")).sum())

    def summary(self) -> dict:
        if not self.cases:
            raise ValueError("EvalReport.summary: no cases")
        out = {}
        for name in ("dice_scar", "dice_myo", "hd_scar", "hd95_scar", "epe"):
            col = self._column(name) if name != "epe" else np.array(
                [np.nan if c.epe is None else c.epe for c in self.cases], dtype=float
            )
            col = col[~np.isnan(col)]
            out[name] = aggregate(col) if col.size else (float("nan"), float("nan"))
        out["hd_skipped"] = self.hd_skipped
        out["n_cases"] = len(self.cases)
        return out


def score_case(case_id: str, pred_scar, gt_scar, pred_myo, gt_myo, epe: Optional[float] = None) -> CaseScores:
    pred_scar = _as_binary(pred_scar, "score_case")
    if pred_scar.any() and np.asarray(gt_scar).any():
        hd, hd95 = hausdorff(pred_scar, gt_scar, 100.0), hausdorff(pred_scar, gt_scar, 95.0)
    else:
        hd = hd95 = float("nan")
    return CaseScores(
        case_id,
        dice_score(pred_scar, gt_scar),
        dice_score(pred_myo, gt_myo),
        hd,
        hd95,
        epe,
    )
