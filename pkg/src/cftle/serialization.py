"""On-disk formats: a JSON header, a marker line, then raw little-endian
float64 payload. One format serves scalar fields and policy tables; the
header's "kind" tag tells them apart. Writes are atomic (temp file in the
target directory, then rename) and round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .grids import DomainBox, GridSpec, ScalarField

MARKER = b"---BINARY---\n"
FORMAT_VERSION = 1


class FormatError(Exception):
    """Malformed or inconsistent serialized data."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable short hash of any JSON-serializable object."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_blob(path: str, header: dict, payload: bytes) -> None:
    text = canonical_json(header).encode() + b"\n" + MARKER
    atomic_write_bytes(path, text + payload)


def read_blob(path: str) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = data.find(MARKER)
    if pos < 0:
        raise FormatError(f"{path}: binary marker not found")
    try:
        header = json.loads(data[:pos].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad JSON header ({exc})") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")
    return header, data[pos + len(MARKER):]


def write_field(path: str, field: ScalarField, quantity: str, t0: float,
                t_a: float, cfg_hash: str = "", extra: dict | None = None) -> None:
    """Scalar field file. Invalid nodes are stored as their raw non-finite
    values (NaN or -inf); validity is reconstructed as finiteness on load.
    No timestamps go into the header, so identical inputs give identical
    bytes."""
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "field",
        "quantity": quantity,
        "nx": field.grid.nx,
        "ny": field.grid.ny,
        "domain": field.grid.domain.to_dict(),
        "t0": t0,
        "t_a": t_a,
        "config_hash": cfg_hash,
    }
    if extra:
        header.update(extra)
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    write_blob(path, header, payload)


def read_field(path: str) -> tuple[ScalarField, dict]:
    header, payload = read_blob(path)
    if header.get("kind") != "field":
        raise FormatError(f"{path}: not a field file (kind={header.get('kind')!r})")
    try:
        nx = int(header["nx"])
        ny = int(header["ny"])
        domain = DomainBox.from_dict(header["domain"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete field header ({exc})") from exc
    expected = nx * ny * 8
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f8").astype(float).reshape(ny, nx)
    grid = GridSpec(domain=domain, nx=nx, ny=ny)
    return ScalarField(grid=grid, values=values, mask=np.isfinite(values)), header


def write_json(path: str, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())
