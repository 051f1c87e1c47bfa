"""Image and table writers. Outputs are byte-for-byte reproducible."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_VERSION = 1


def quantize8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(img: np.ndarray) -> bytes:
    """Binary P6, maxval 255, ``round(255 c)`` per channel."""
    q = quantize8(img)
    if q.ndim != 3 or q.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) image")
    h, w = q.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def encode_pgm16(values: np.ndarray, lo: float, hi: float) -> bytes:
    """Binary P5, maxval 65535, linear map of [lo, hi], big-endian samples."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("PGM needs an (H, W) array")
    if not hi > lo:
        raise ValueError("need hi > lo")
    x = np.clip((np.nan_to_num(v, nan=lo) - lo) / (hi - lo), 0.0, 1.0)
    q = np.round(x * 65535.0).astype(">u2")
    h, w = v.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes()


def _read_header(data: bytes, magic: bytes) -> tuple[list[int], int]:
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file")
    fields, pos = [], len(magic)
    while len(fields) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(int(data[pos:end]))
        pos = end
    return fields, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    (w, h, maxval), off = _read_header(data, b"P6")
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off).reshape(h, w, 3)


def decode_pgm16(data: bytes) -> np.ndarray:
    (w, h, maxval), off = _read_header(data, b"P5")
    if maxval != 65535:
        raise ValueError("only 16-bit PGM is supported")
    return np.frombuffer(data, dtype=">u2", count=w * h, offset=off).reshape(h, w).astype(np.uint16)


def write_ppm(path, img) -> Path:
    path = Path(path)
    path.write_bytes(encode_ppm(img))
    return path


def write_pgm16(path, values, lo: float, hi: float) -> Path:
    path = Path(path)
    path.write_bytes(encode_pgm16(values, lo, hi))
    return path


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.6g}"
    return str(v)


def encode_csv(columns: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    """UTF-8 CSV with a leading ``version`` column; floats get 6 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["version", *columns])
    for row in rows:
        w.writerow([CSV_VERSION, *(format_cell(v) for v in row)])
    return buf.getvalue().encode("utf-8")


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.write_bytes(encode_csv(columns, rows))
    return path
