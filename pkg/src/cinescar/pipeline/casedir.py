"""Dataset directory layout: one ``case_<id>/`` folder per case."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from . import tensorfile
from .errors import DataError


@dataclass
class CaseData:
    case_id: str
    cine: np.ndarray  # (T, H, W)
    myo: np.ndarray  # (H, W) uint8
    scar: np.ndarray  # (H, W) uint8
    flow_gt: Optional[np.ndarray] = None  # (T-1, 2, H, W)
    meta: Optional[dict] = None


def case_dir(root, case_id: str) -> Path:
    return Path(root) / f"case_{case_id}"


def write_case(root, case: CaseData) -> Path:
    d = case_dir(root, case.case_id)
    d.mkdir(parents=True, exist_ok=True)
    tensorfile.write(d / "cine.tns", case.cine.astype(np.float32))
    tensorfile.write(d / "myo_ed.tns", case.myo)
    tensorfile.write(d / "scar_ed.tns", case.scar)
    if case.flow_gt is not None:
        tensorfile.write(d / "flow_gt.tns", case.flow_gt.astype(np.float32))
    meta = {"case_id": case.case_id, "generator": f"cinescar {__version__}"}
    meta.update(case.meta or {})
    with open(d / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d


def _binary(mask: np.ndarray, path) -> np.ndarray:
    if not np.all((mask == 0) | (mask == 1)):
        raise DataError(f"{path}: mask is not binary")
    return mask.astype(np.uint8)


def read_case(path) -> CaseData:
    d = Path(path)
    if not d.is_dir():
        raise DataError(f"{d}: not a case directory")
    cine = tensorfile.read(d / "cine.tns")
    myo = _binary(tensorfile.read(d / "myo_ed.tns"), d / "myo_ed.tns")
    scar = _binary(tensorfile.read(d / "scar_ed.tns"), d / "scar_ed.tns")
    if cine.ndim != 3 or myo.shape != cine.shape[1:] or scar.shape != cine.shape[1:]:
        raise DataError(f"{d}: inconsistent shapes cine {cine.shape}, myo {myo.shape}, scar {scar.shape}")
    flow = None
    if (d / "flow_gt.tns").exists():
        flow = tensorfile.read(d / "flow_gt.tns")
        if flow.shape != (cine.shape[0] - 1, 2) + cine.shape[1:]:
            raise DataError(f"{d}: flow_gt shape {flow.shape} does not match cine {cine.shape}")
    meta = None
    if (d / "meta.json").exists():
        with open(d / "meta.json") as fh:
            meta = json.load(fh)
    case_id = d.name[len("case_") :] if d.name.startswith("case_") else d.name
    return CaseData(case_id, cine, myo, scar, flow, meta)


def list_cases(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset directory does not exist")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("case_"))
    if not dirs:
        raise DataError(f"{root}: no case_* directories")
    return dirs


def read_flows(path, name: str, cine_shape) -> np.ndarray:
    f = Path(path) / f"{name}.tns"
    if not f.exists():
        raise DataError(f"{f}: flow file missing")
    flow = tensorfile.read(f)
    if flow.shape != (cine_shape[0] - 1, 2) + tuple(cine_shape[1:]):
        raise DataError(f"{f}: flow shape {flow.shape} does not match cine {tuple(cine_shape)}")
    return flow


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
