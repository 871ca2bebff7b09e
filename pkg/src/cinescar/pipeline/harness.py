"""End-to-end ablation run: phantoms, motion extraction, segmentation, tables.

Outputs in ``out_dir``:

* ``table1.csv``: scar/myocardium Dice and HD per input mode;
* ``motion_table.csv``: myocardial EPE of ILK, F2F and fixed-ED estimation;
* ``dualtask.csv``: OF_PLUS_ALL scar Dice with and without the myocardium task;
* ``timings.json``: wall-clock seconds per stage (not part of the reproducible set);
* ``motion_ckpt/``: the trained motion network when method is ``unet``.

Mean/SD columns use the population SD.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import metrics
from .. import motionext as me
from .. import ndgrad as nd
from .. import phantom
from ..scarseg import AblationMode, SegCase, predict_case, train_seg
from . import checkpoint, seeds
from .casedir import CaseData
from .config import RunConfig, config_hash

log = logging.getLogger(__name__)

TABLE1_COLUMNS = ["mode", "dice_scar_mean", "dice_scar_sd", "dice_myo_mean", "dice_myo_sd",
                  "hd_mean", "hd_sd", "hd95_mean", "hd95_sd", "hd_skipped"]
MOTION_COLUMNS = ["method", "epe_mean", "epe_sd", "epe_late_mean", "epe_late_sd"]
DUAL_COLUMNS = ["dual_task", "dice_scar_mean", "dice_scar_sd", "dice_myo_mean", "dice_myo_sd"]
MOTION_ROWS = ("ilk", "f2f", "fixed_ed")


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return "nan" if math.isnan(value) else f"{value:.4f}"


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row[c]) for c in columns])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# data


def case_config(cfg: RunConfig, index: int) -> phantom.PhantomConfig:
    """Phantom config of case ``index``: base config, own noise seed, optionally a random layout."""
    pc = replace(cfg.phantom, seed=seeds.derive(cfg.seed, "phantom", index))
    if cfg.dataset.randomize_layout:
        rng = seeds.generator(cfg.seed, "phantom_layout", index)
        theta0 = float(rng.uniform(0.0, 2 * math.pi))
        width = cfg.phantom.theta1 - cfg.phantom.theta0
        pc = replace(pc, theta0=theta0, theta1=theta0 + width, texture_phase=float(rng.uniform(0.0, 2 * math.pi)))
    return pc


def make_cases(cfg: RunConfig, count: Optional[int] = None) -> list:
    n = cfg.dataset.n_train + cfg.dataset.n_test if count is None else count
    out = []
    for i in range(n):
        pc = case_config(cfg, i)
        case = phantom.generate(pc)
        meta = {"seed": pc.seed, "config_hash": config_hash(pc.to_dict()), "phantom": pc.to_dict()}
        out.append(CaseData(f"{i:03d}", case.sequence, case.myo_mask, case.scar_mask, case.gt_flows, meta))
    return out


# ---------------------------------------------------------------------------
# motion


def estimate_flows(cfg: RunConfig, seq: np.ndarray, method: str, model: Optional[me.MotionModel] = None) -> np.ndarray:
    """(T-1, 2, H, W) flows to frame 0 with one of the four estimators."""
    m = cfg.motion
    seq = np.asarray(seq, dtype=nd.get_dtype())

    def varreg(f, mv):
        return me.estimate_varreg(f, mv, m.smoothness_weight, m.varreg_iters, m.varreg_lr, m.varreg_levels)[0]

    if method == "unet":
        if model is None:
            raise ValueError("estimate_flows: method 'unet' needs a trained model")
        return me.estimate_unet(model, seq)
    if method == "varreg":
        return np.stack([varreg(seq[0], seq[t]) for t in range(1, seq.shape[0])])
    if method == "f2f":
        return me.estimate_f2f(seq, varreg)
    if method == "ilk":
        return np.stack(
            [me.estimate_ilk(seq[0], seq[t], m.ilk_window, m.ilk_levels, m.ilk_iters) for t in range(1, seq.shape[0])]
        )
    raise ValueError(f"estimate_flows: unknown method {method!r}")


def flow_epe(flows: np.ndarray, case: CaseData, late_from: int) -> tuple:
    per_t = [metrics.endpoint_error(flows[t - 1], case.flow_gt[t - 1], case.myo) for t in range(1, flows.shape[0] + 1)]
    late = [e for t, e in enumerate(per_t, start=1) if t >= late_from]
    return float(np.mean(per_t)), float(np.mean(late)), per_t


def motion_table(cfg: RunConfig, test: Sequence[CaseData], model: Optional[me.MotionModel]) -> tuple:
    """Rows for motion_table.csv plus per-method, per-case, per-frame EPE lists."""
    rows, detail = [], {}
    late_from = int(math.ceil(cfg.phantom.T / 2))
    for method in MOTION_ROWS:
        est = "unet" if method == "fixed_ed" and model is not None else ("varreg" if method == "fixed_ed" else method)
        allc, late, frames = [], [], []
        for case in test:
            a, b, per_t = flow_epe(estimate_flows(cfg, case.cine, est, model), case, late_from)
            allc.append(a)
            late.append(b)
            frames.append(per_t)
        (mu, sd), (lmu, lsd) = metrics.aggregate(allc), metrics.aggregate(late)
        rows.append({"method": method, "epe_mean": mu, "epe_sd": sd, "epe_late_mean": lmu, "epe_late_sd": lsd})
        detail[method] = frames
        log.info("motion %s: EPE %.4f (late %.4f)", method, mu, lmu)
    return rows, detail


# ---------------------------------------------------------------------------
# segmentation


def seg_cases(cases: Sequence[CaseData], flows: Optional[dict]) -> list:
    return [
        SegCase(
            np.asarray(c.cine, dtype=nd.get_dtype()),
            None if flows is None else np.asarray(flows[c.case_id], dtype=nd.get_dtype()),
            c.scar,
            c.myo,
        )
        for c in cases
    ]


def evaluate_seg(model, cases: Sequence[SegCase], ids: Sequence[str], percentile: float) -> metrics.EvalReport:
    report = metrics.EvalReport()
    for cid, case in zip(ids, cases):
        pred = predict_case(model, case)
        scores = metrics.score_case(cid, pred.scar, case.scar, pred.myo, case.myo)
        if not math.isnan(scores.hd_scar):
            scores.hd95_scar = metrics.hausdorff(pred.scar, case.scar, percentile)
        report.add(scores)
    return report


@dataclass
class HarnessResult:
    table1: list = field(default_factory=list)
    motion: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    motion_detail: dict = field(default_factory=dict)
    seg_detail: dict = field(default_factory=dict)


def run(cfg: RunConfig, out_dir, modes: Sequence = tuple(AblationMode), dual_check: bool = True) -> HarnessResult:
    """Full ablation; writes the CSVs into ``out_dir`` and returns the parsed rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = HarnessResult()
    clock = time.perf_counter
    with nd.precision(cfg.precision):
        t0 = clock()
        cases = make_cases(cfg)
        train, test = cases[: cfg.dataset.n_train], cases[cfg.dataset.n_train :]
        res.timings["phantom"] = clock() - t0

        t0 = clock()
        model = None
        method = cfg.motion.method
        if method == "unet":
            model = me.train_me([c.cine for c in train], cfg.motion.train_config(seeds.derive(cfg.seed, "motion")))
            checkpoint.save(out / "motion_ckpt", model.net, "motion", {"train": model.config.to_dict()})
        res.timings["motion_train"] = clock() - t0

        t0 = clock()
        flows = {c.case_id: estimate_flows(cfg, c.cine, method, model) for c in cases}
        res.timings["motion_estimate"] = clock() - t0

        t0 = clock()
        res.motion, res.motion_detail = motion_table(cfg, test, model)
        write_csv(out / "motion_table.csv", MOTION_COLUMNS, res.motion)
        res.timings["motion_table"] = clock() - t0

        train_sc, test_sc = seg_cases(train, flows), seg_cases(test, flows)
        test_ids = [c.case_id for c in test]
        seg_seed = seeds.derive(cfg.seed, "seg")
        for mode in modes:
            mode = AblationMode.parse(mode)
            t0 = clock()
            model_s = train_seg(train_sc, mode, cfg.seg.train_config(seg_seed, dual_task=True))
            report = evaluate_seg(model_s, test_sc, test_ids, cfg.eval.percentile)
            res.table1.append(_table1_row(mode.value, report))
            res.seg_detail[mode.value] = [c.dice_scar for c in report.cases]
            res.timings[f"seg_{mode.value}"] = clock() - t0
            log.info("seg %s: scar Dice %.4f", mode.value, res.table1[-1]["dice_scar_mean"])
        write_csv(out / "table1.csv", TABLE1_COLUMNS, res.table1)

        if dual_check:
            dual_row = next((r for r in res.table1 if r["mode"] == AblationMode.OF_PLUS_ALL.value), None)
            t0 = clock()
            if dual_row is None:
                m_dual = train_seg(train_sc, AblationMode.OF_PLUS_ALL, cfg.seg.train_config(seg_seed, dual_task=True))
                dual_row = _table1_row("OF_PLUS_ALL", evaluate_seg(m_dual, test_sc, test_ids, cfg.eval.percentile))
            m_single = train_seg(train_sc, AblationMode.OF_PLUS_ALL, cfg.seg.train_config(seg_seed, dual_task=False))
            single = _table1_row("OF_PLUS_ALL", evaluate_seg(m_single, test_sc, test_ids, cfg.eval.percentile))
            res.timings["seg_single_task"] = clock() - t0
            for flag, row in ((True, dual_row), (False, single)):
                res.dual.append({"dual_task": flag, **{c: row[c] for c in DUAL_COLUMNS[1:]}})
            write_csv(out / "dualtask.csv", DUAL_COLUMNS, res.dual)

    res.timings["total"] = sum(res.timings.values())
    with open(out / "timings.json", "w") as fh:
        json.dump({k: round(v, 2) for k, v in res.timings.items()}, fh, indent=2)
        fh.write("\n")
    return res


def _table1_row(mode: str, report: metrics.EvalReport) -> dict:
    s = report.summary()
    return {
        "mode": mode,
        "dice_scar_mean": s["dice_scar"][0],
        "dice_scar_sd": s["dice_scar"][1],
        "dice_myo_mean": s["dice_myo"][0],
        "dice_myo_sd": s["dice_myo"][1],
        "hd_mean": s["hd_scar"][0],
        "hd_sd": s["hd_scar"][1],
        "hd95_mean": s["hd95_scar"][0],
        "hd95_sd": s["hd95_scar"][1],
        "hd_skipped": s["hd_skipped"],
    }
