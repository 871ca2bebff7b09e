"""Model checkpoints: one TNS1 file per parameter plus a JSON manifest."""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .. import ndgrad as nd
from ..netarch import UNet, UNetSpec, layer_shapes
from . import tensorfile
from .errors import DataError

MANIFEST = "manifest.json"
FORMAT = "cinescar-checkpoint-1"


def save(path, net: UNet, kind: str, extra: dict = None) -> Path:
    """Write ``net`` under directory ``path``; ``extra`` is stored verbatim in the manifest."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    dtypes = set()
    for i, (name, p) in enumerate(net.parameters().items()):
        fname = f"p{i:03d}.tns"
        tensorfile.write(d / fname, p.data)
        dtypes.add(str(p.data.dtype))
        entries.append({"name": name, "file": fname, "shape": list(p.shape), "dtype": str(p.data.dtype)})
    manifest = {
        "format": FORMAT,
        "kind": kind,
        "spec": net.spec.to_dict(),
        "precision": 64 if dtypes == {"float64"} else 32,
        "params": entries,
        "extra": extra or {},
    }
    with open(d / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return d


def read_manifest(path) -> dict:
    f = Path(path) / MANIFEST
    try:
        with open(f) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"{f}: {exc.strerror}") from exc
    if manifest.get("format") != FORMAT:
        raise DataError(f"{f}: unsupported checkpoint format {manifest.get('format')!r}")
    return manifest


def load(path, expected_spec: UNetSpec = None, kind: str = None):
    """Returns ``(net, manifest)``. Parameters keep their stored dtype."""
    d = Path(path)
    manifest = read_manifest(d)
    if kind is not None and manifest["kind"] != kind:
        raise DataError(f"{d}: checkpoint holds a {manifest['kind']!r} model, expected {kind!r}")
    spec = UNetSpec(**manifest["spec"])
    if expected_spec is not None and spec != expected_spec:
        raise DataError(f"{d}: checkpoint spec {spec} does not match expected {expected_spec}")
    params = OrderedDict()
    with nd.precision(manifest["precision"]):
        for entry in manifest["params"]:
            arr = tensorfile.read(d / entry["file"])
            if list(arr.shape) != entry["shape"]:
                raise DataError(f"{d / entry['file']}: shape {arr.shape} disagrees with manifest {entry['shape']}")
            params[entry["name"]] = nd.Tensor(arr, requires_grad=True)
    expected = [f"{n}.{s}" for n, *_ in layer_shapes(spec) for s in ("w", "b")]
    if list(params) != expected:
        raise DataError(f"{d}: parameter list does not match the architecture in the manifest")
    return UNet(spec, params), manifest
