"""Binary field, conductance and label files, plus JSON run manifests.

Each file is one ASCII header line followed by little-endian raw data in C
order (axis 0 slowest).  Vector and edge fields store component ``j`` as the
``j``-th block of ``3^(m d)`` values.
"""
from __future__ import annotations

import hashlib
import json
import os
from typing import Dict, Optional, Tuple

import numpy as np

from . import __version__
from .cluster import ClusterLabels
from .lattice import CubeDomain
from .percolation import ConductanceField, PercolationLaw

__all__ = [
    "FormatError",
    "write_field",
    "read_field",
    "write_conductance",
    "read_conductance",
    "write_labels",
    "read_labels",
    "file_digest",
    "write_manifest",
    "manifest_path",
]

FIELD_KINDS = ("scalar", "edge", "vector")


class FormatError(ValueError):
    """Malformed or mismatched input file."""


def _header(tag: str, items: Dict[str, object]) -> bytes:
    body = " ".join(f"{k}={v}" for k, v in items.items())
    return f"{tag} v1 {body}\n".encode("ascii")


def _parse(path: str, tag: str) -> Tuple[Dict[str, str], bytes]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        words = raw[:nl].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not ASCII") from exc
    if len(words) < 2 or words[0] != tag or words[1] != "v1":
        raise FormatError(f"{path}: expected a '{tag} v1' header")
    items = {}
    for w in words[2:]:
        if "=" not in w:
            raise FormatError(f"{path}: bad header token {w!r}")
        k, v = w.split("=", 1)
        items[k] = v
    return items, raw[nl + 1:]


def _int(items: Dict[str, str], key: str, path: str) -> int:
    try:
        return int(items[key])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: header lacks integer {key}") from exc


def _domain(items, path) -> CubeDomain:
    d, m = _int(items, "d", path), _int(items, "m", path)
    try:
        return CubeDomain(d, m)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _payload(data: bytes, dtype: str, shape, path: str) -> np.ndarray:
    n = int(np.prod(shape))
    size = np.dtype(dtype).itemsize
    if len(data) != n * size:
        raise FormatError(f"{path}: expected {n * size} data bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=dtype).reshape(shape).astype(dtype[1:], copy=True)
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values")
    return arr


def write_field(path: str, u: np.ndarray, domain: CubeDomain, kind: str = "scalar") -> None:
    if kind not in FIELD_KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    domain.check(u, vector=kind != "scalar")
    with open(path, "wb") as fh:
        fh.write(_header("PHFIELD", {"d": domain.dim, "m": domain.level, "kind": kind}))
        fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())


def read_field(path: str) -> Tuple[np.ndarray, CubeDomain, str]:
    items, data = _parse(path, "PHFIELD")
    domain = _domain(items, path)
    kind = items.get("kind", "scalar")
    if kind not in FIELD_KINDS:
        raise FormatError(f"{path}: unknown kind {kind!r}")
    shape = domain.shape if kind == "scalar" else (domain.dim,) + domain.shape
    return _payload(data, "<f8", shape, path), domain, kind


def write_conductance(path: str, a: ConductanceField) -> None:
    law = a.law
    head = {"d": a.domain.dim, "m": a.domain.level, "law": law.kind, "p": repr(law.p_open),
            "lambda_ell": repr(law.lambda_ell), "seed": a.seed}
    with open(path, "wb") as fh:
        fh.write(_header("PHCOND", head))
        fh.write(np.ascontiguousarray(a.values, dtype="<f8").tobytes())


def read_conductance(path: str) -> ConductanceField:
    items, data = _parse(path, "PHCOND")
    domain = _domain(items, path)
    try:
        law = PercolationLaw(float(items.get("p", "1")), float(items.get("lambda_ell", "2")),
                             items.get("law", "bernoulli"))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    vals = _payload(data, "<f8", (domain.dim,) + domain.shape, path)
    if np.any(vals < 0) or np.any(vals > 1):
        raise FormatError(f"{path}: conductances must lie in [0, 1]")
    return ConductanceField(domain, vals, law, _int(items, "seed", path))


def write_labels(path: str, labels: ClusterLabels) -> None:
    dom = labels.domain
    mx = -1 if labels.maximal_id is None else labels.maximal_id
    with open(path, "wb") as fh:
        fh.write(_header("PHLBL", {"d": dom.dim, "m": dom.level, "maximal": mx}))
        fh.write(np.ascontiguousarray(labels.labels, dtype="<i8").tobytes())


def read_labels(path: str) -> ClusterLabels:
    items, data = _parse(path, "PHLBL")
    domain = _domain(items, path)
    mx = _int(items, "maximal", path)
    labs = _payload(data, "<i8", domain.shape, path)
    return ClusterLabels(domain, labs, None if mx < 0 else mx)


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(path: str) -> str:
    return path + ".manifest.json"


def write_manifest(output: str, command: str, flags: Dict[str, object],
                   seeds=None, inputs: Optional[Dict[str, str]] = None) -> str:
    """Sidecar JSON next to ``output``: command, flags, seeds, input digests, version."""
    h = hashlib.sha256()
    digests = {}
    for name, p in sorted((inputs or {}).items()):
        if p and os.path.isfile(p):
            digests[name] = file_digest(p)
            h.update(digests[name].encode())
    doc = {
        "command": command,
        "flags": {k: flags[k] for k in sorted(flags)},
        "seeds": seeds,
        "inputs": digests,
        "input_hash": h.hexdigest(),
        "version": __version__,
    }
    out = manifest_path(output)
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return out
