"""On-disk formats.

RDMB matrix bundle (little-endian)::

    b"RDMB"  u32 version (=1)  u32 count
    per entry: u32 name_len, name (UTF-8), u64 rows, u64 cols, rows*cols f64 row-major

IDX (big-endian, the MNIST distribution format): u32 magic ``0x000008TT``
where the low byte ``TT`` is the number of dimensions, followed by one u32 per
dimension and a u8 payload.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, DuplicateName, TruncatedFile, VersionUnsupported
from .linalg import as_matrix

RDMB_MAGIC = b"RDMB"
RDMB_VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CSV_COLUMNS = ("layer", "d_in", "d_out", "r_eff", "d_eff", "scale_a", "lambda_max")


def _entries(bundle):
    items = bundle.items() if isinstance(bundle, Mapping) else bundle
    seen = set()
    for name, m in items:
        if name in seen:
            raise DuplicateName(f"duplicate entry name {name!r}")
        seen.add(name)
        yield name, as_matrix(m, name)


def encode_bundle(bundle) -> bytes:
    entries = list(_entries(bundle))
    parts = [RDMB_MAGIC, struct.pack("<II", RDMB_VERSION, len(entries))]
    for name, m in entries:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<QQ", *m.shape))
        parts.append(np.ascontiguousarray(m, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_bundle(buf: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(k):
        nonlocal pos
        if pos + k > len(buf):
            raise TruncatedFile(f"need {k} bytes at offset {pos}, file has {len(buf)}")
        out = buf[pos:pos + k]
        pos += k
        return out

    if take(4) != RDMB_MAGIC:
        raise BadMagic("not an RDMB bundle")
    version, count = struct.unpack("<II", take(8))
    if version != RDMB_VERSION:
        raise VersionUnsupported(f"RDMB version {version} is not supported")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        rows, cols = struct.unpack("<QQ", take(16))
        data = np.frombuffer(take(8 * rows * cols), dtype="<f8").astype(np.float64)
        if name in out:
            raise DuplicateName(f"duplicate entry name {name!r}")
        out[name] = data.reshape(rows, cols)
    return out


def write_bundle(path, bundle) -> None:
    Path(path).write_bytes(encode_bundle(bundle))


def read_bundle(path) -> dict[str, np.ndarray]:
    return decode_bundle(Path(path).read_bytes())


@dataclass(frozen=True)
class IdxTensor:
    dims: tuple[int, ...]
    data: np.ndarray  # u8, flat

    def images_as_columns(self, normalize: bool = True) -> np.ndarray:
        """``(prod(dims[1:]), dims[0])`` matrix, one flattened image per column."""
        n = self.dims[0]
        x = self.data.reshape(n, -1).T.astype(np.float64)
        return x / 255.0 if normalize else x


def read_idx(path) -> IdxTensor:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise TruncatedFile("IDX header is truncated")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise BadMagic(f"unexpected IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise TruncatedFile("IDX dimension header is truncated")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    size = math.prod(dims)
    if len(buf) < head + size:
        raise TruncatedFile(f"IDX payload has {len(buf) - head} bytes, expected {size}")
    data = np.frombuffer(buf, dtype=np.uint8, count=size, offset=head).copy()
    return IdxTensor(tuple(int(d) for d in dims), data)


def write_idx(path, array) -> None:
    """Write a u8 array as IDX (3-D arrays as images, 1-D as labels)."""
    a = np.asarray(array, dtype=np.uint8)
    magic = IDX_IMAGES_MAGIC if a.ndim == 3 else IDX_LABELS_MAGIC
    if a.ndim not in (1, 3):
        raise ValueError("IDX writer supports 1-D labels or 3-D image stacks")
    header = struct.pack(f">I{a.ndim}I", magic, *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def _num(v) -> str:
    # repr of a python float round-trips at full precision
    return repr(float(v))


def write_report(path, report, fmt: str = "json") -> None:
    """Write an :class:`~rdbound.bounds.RdReport` as nested JSON or per-layer CSV."""
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, allow_nan=False))
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            rows = report.per_layer
            for r in rows:
                w.writerow([r.layer, r.d_in, r.d_out, r.r_eff, _num(r.d_eff), _num(r.scale_a), _num(r.lambda_max)])
            if rows:
                w.writerow([
                    "Total",
                    sum(r.d_in for r in rows),
                    sum(r.d_out for r in rows),
                    sum(r.r_eff for r in rows),
                    _num(sum(r.d_eff for r in rows)),
                    "",
                    _num(max(r.lambda_max for r in rows)),
                ])
    else:
        raise ValueError(f"unknown report format {fmt!r}")
