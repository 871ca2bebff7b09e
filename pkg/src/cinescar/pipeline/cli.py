"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or shape error, 3 numeric failure.
Every failure prints one diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import metrics
from .. import motionext as me
from .. import ndgrad as nd
from .. import scarseg
from . import casedir, checkpoint, config, harness, pgm, tensorfile
from .errors import DataError, NumericError, UsageError

log = logging.getLogger("cinescar")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path) -> config.RunConfig:
    return config.load(path) if path else config.from_dict({})


def _cases(data_dir) -> list:
    return [casedir.read_case(d) for d in casedir.list_cases(data_dir)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom_gen(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    n = args.cases if args.cases is not None else cfg.dataset.n_train + cfg.dataset.n_test
    if n < 1:
        raise UsageError("phantom gen: --cases must be >= 1")
    out = casedir.ensure_dir(args.out)
    for case in harness.make_cases(cfg, n):
        casedir.write_case(out, case)
    log.info("wrote %d cases to %s", n, out)
    return 0


def cmd_motion_train(args) -> int:
    cfg = _load_config(args.config)
    if args.method != "unet":
        raise UsageError(f"motion train: only the 'unet' method is trainable (got {args.method!r})")
    cases = _cases(args.data)
    tcfg = cfg.motion.train_config(cfg.seed)
    if args.epochs is not None:
        tcfg.epochs = args.epochs
    with nd.precision(cfg.precision):
        model = me.train_me([c.cine for c in cases], tcfg)
    checkpoint.save(args.out, model.net, "motion", {"train": tcfg.to_dict(), "loss_trace": model.loss_trace})
    log.info("saved motion checkpoint to %s", args.out)
    return 0


def _motion_model(path) -> me.MotionModel:
    net, manifest = checkpoint.load(path, kind="motion")
    return me.MotionModel(net, me.MotionTrainConfig(**manifest["extra"]["train"]))


def cmd_motion_estimate(args) -> int:
    cfg = _load_config(args.config)
    if args.method not in config.MOTION_METHODS:
        raise UsageError(f"motion estimate: unknown method {args.method!r}")
    model = None
    if args.method == "unet":
        if not args.checkpoint:
            raise UsageError("motion estimate --method unet needs --checkpoint")
        model = _motion_model(args.checkpoint)
    out_root = Path(args.out) if args.out else None
    for d in casedir.list_cases(args.data):
        case = casedir.read_case(d)
        precision = 64 if model is not None and model.net.params["head.w"].data.dtype == np.float64 else cfg.precision
        with nd.precision(precision):
            flows = harness.estimate_flows(cfg, case.cine, args.method, model)
        target = (out_root / d.name) if out_root else d
        target.mkdir(parents=True, exist_ok=True)
        tensorfile.write(target / f"flow_{args.method}.tns", flows.astype(np.float32))
        if case.flow_gt is not None:
            log.info("%s: myocardial EPE %.4f", d.name, metrics.endpoint_error(flows, case.flow_gt, case.myo))
    return 0


def _seg_cases(args, mode: scarseg.AblationMode) -> tuple:
    ids, cases = [], []
    for d in casedir.list_cases(args.data):
        c = casedir.read_case(d)
        flows = None
        if mode.uses_flow:
            src = Path(args.flows) / d.name if args.flows else d
            flows = casedir.read_flows(src, args.flow_name, c.cine.shape)
        ids.append(c.case_id)
        cases.append(scarseg.SegCase(c.cine.astype(nd.get_dtype()), None if flows is None else flows.astype(nd.get_dtype()), c.scar, c.myo))
    return ids, cases


def cmd_seg_train(args) -> int:
    cfg = _load_config(args.config)
    mode = scarseg.AblationMode.parse(args.mode or cfg.seg.mode)
    scfg = cfg.seg.train_config(cfg.seed)
    if args.epochs is not None:
        scfg.epochs = args.epochs
    if args.single_task:
        scfg.dual_task = False
    with nd.precision(cfg.precision):
        _, cases = _seg_cases(args, mode)
        model = scarseg.train_seg(cases, mode, scfg)
    checkpoint.save(args.out, model.net, "seg", {"mode": mode.value, "T": model.T, "train": scfg.to_dict()})
    log.info("saved segmentation checkpoint to %s", args.out)
    return 0


def cmd_seg_predict(args) -> int:
    net, manifest = checkpoint.load(args.checkpoint, kind="seg")
    extra = manifest["extra"]
    mode = scarseg.AblationMode.parse(extra["mode"])
    if args.mode and scarseg.AblationMode.parse(args.mode) is not mode:
        raise UsageError(f"seg predict: checkpoint was trained for {mode.value}, not {args.mode}")
    model = scarseg.SegModel(net, mode, extra["T"], scarseg.SegTrainConfig(**extra["train"]))
    out = casedir.ensure_dir(args.out)
    with nd.precision(manifest["precision"]):
        ids, cases = _seg_cases(args, mode)
        for cid, case in zip(ids, cases):
            if case.sequence.shape[0] != model.T:
                raise DataError(f"case_{cid}: T={case.sequence.shape[0]} but the model was trained with T={model.T}")
            pred = scarseg.predict_case(model, case)
            d = casedir.ensure_dir(out / f"case_{cid}")
            tensorfile.write(d / "scar_pred.tns", pred.scar)
            tensorfile.write(d / "myo_pred.tns", pred.myo)
            tensorfile.write(d / "scar_prob.tns", pred.scar_prob.astype(np.float32))
            tensorfile.write(d / "myo_prob.tns", pred.myo_prob.astype(np.float32))
            pgm.write_pgm(d / "scar_pred.pgm", pred.scar)
            pgm.write_pgm(d / "myo_pred.pgm", pred.myo)
    return 0


def _pred_masks(d: Path) -> tuple:
    out = []
    for name in ("scar", "myo"):
        for fname in (f"{name}_pred.tns", f"{name}_ed.tns"):
            if (d / fname).exists():
                m = tensorfile.read(d / fname)
                if not np.all((m == 0) | (m == 1)):
                    raise DataError(f"{d / fname}: mask is not binary")
                out.append(m.astype(np.uint8))
                break
        else:
            raise DataError(f"{d}: no {name}_pred.tns or {name}_ed.tns")
    return tuple(out)


def cmd_eval(args) -> int:
    report = metrics.EvalReport()
    pred_root = Path(args.pred)
    for d in casedir.list_cases(args.gt):
        gt = casedir.read_case(d)
        pdir = pred_root / d.name
        if not pdir.is_dir():
            raise DataError(f"{pdir}: prediction for {d.name} missing")
        scar, myo = _pred_masks(pdir)
        if scar.shape != gt.scar.shape:
            raise DataError(f"{pdir}: mask shape {scar.shape} differs from ground truth {gt.scar.shape}")
        scores = metrics.score_case(gt.case_id, scar, gt.scar, myo, gt.myo)
        if not np.isnan(scores.hd_scar):
            scores.hd95_scar = metrics.hausdorff(scar, gt.scar, args.percentile)
        report.add(scores)
    s = report.summary()
    row = {
        "method": args.method,
        "dice_scar_mean": s["dice_scar"][0],
        "dice_scar_sd": s["dice_scar"][1],
        "dice_myo_mean": s["dice_myo"][0],
        "dice_myo_sd": s["dice_myo"][1],
        "hd95_mean": s["hd95_scar"][0],
        "hd95_sd": s["hd95_scar"][1],
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    harness.write_csv(out, list(row), [row])
    if s["hd_skipped"]:
        log.warning("%d case(s) with an empty predicted scar mask left out of the HD columns", s["hd_skipped"])
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out) if args.out else Path(cfg.io.out_dir)
    res = harness.run(cfg, out)
    for row in res.table1:
        log.info("%-12s scar Dice %.4f +- %.4f", row["mode"], row["dice_scar_mean"], row["dice_scar_sd"])
    return 0


def cmd_export(args) -> int:
    if not args.pgm:
        raise UsageError("export: only --pgm output is supported; pass --pgm")
    src = Path(args.input)
    files = sorted(src.glob("*.tns")) if src.is_dir() else [src]
    if not files:
        raise DataError(f"{src}: no .tns files to export")
    out = casedir.ensure_dir(args.out)
    for f in files:
        arr = tensorfile.read(f)
        try:
            pgm.export_tensor(arr, out, f.stem)
        except ValueError as exc:
            raise DataError(f"{f}: {exc}") from exc
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cinescar", description="Motion-aware scar segmentation on synthetic cine phantoms.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    ph = sub.add_parser("phantom", help="synthetic data")
    phs = ph.add_subparsers(dest="action", parser_class=_Parser)
    phs.required = True
    g = phs.add_parser("gen", help="write phantom case directories")
    g.add_argument("--config")
    g.add_argument("--cases", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_phantom_gen)

    mo = sub.add_parser("motion", help="motion extraction")
    mos = mo.add_subparsers(dest="action", parser_class=_Parser)
    mos.required = True
    t = mos.add_parser("train", help="train the motion network")
    t.add_argument("--config")
    t.add_argument("--method", default="unet")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_motion_train)
    e = mos.add_parser("estimate", help="write flow_<method>.tns per case")
    e.add_argument("--config")
    e.add_argument("--method", required=True, choices=config.MOTION_METHODS)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--out", help="output root (default: alongside each case)")
    e.set_defaults(func=cmd_motion_estimate)

    sg = sub.add_parser("seg", help="scar segmentation")
    sgs = sg.add_subparsers(dest="action", parser_class=_Parser)
    sgs.required = True
    for name, func in (("train", cmd_seg_train), ("predict", cmd_seg_predict)):
        s = sgs.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--mode")
        s.add_argument("--data", required=True)
        s.add_argument("--flows", help="root holding case_*/<flow-name>.tns (default: the case directories)")
        s.add_argument("--flow-name", default="flow_unet")
        if name == "train":
            s.add_argument("--out", required=True, help="checkpoint directory")
            s.add_argument("--epochs", type=int)
            s.add_argument("--single-task", action="store_true", help="supervise the scar output only")
        else:
            s.add_argument("--checkpoint", required=True)
            s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    ev = sub.add_parser("eval", help="score predicted masks against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--method", default="pred")
    ev.add_argument("--percentile", type=float, default=95.0)
    ev.add_argument("--out", default="report.csv")
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="full ablation harness")
    ab.add_argument("--config")
    ab.add_argument("--out")
    ab.set_defaults(func=cmd_ablate)

    ex = sub.add_parser("export", help="preview tensors")
    ex.add_argument("--pgm", action="store_true")
    ex.add_argument("--input", required=True, help=".tns file or a directory of them")
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
