"""Deterministic result files: CSV/JSON with fixed float formatting, PGM rasters, hashes."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, is_dataclass
from fractions import Fraction

import numpy as np

FLOAT_DIGITS = 17


def fmt_float(x):
    """17 significant digits; ``inf``, ``-inf`` and ``nan`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, f".{FLOAT_DIGITS}g")


def fmt_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    """Comma-separated rows; complex values must be split into columns by the caller."""
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(fmt_cell(v) for v in r))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def plain(obj):
    """Convert numpy, complex, dataclass and Fraction values into JSON-ready Python objects."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    return obj


def _dump(v, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f'{pad}{_string(k)}: {_dump(x, indent, level + 1)}' for k, x in sorted(v.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(v, list):
        if not v:
            return "[]"
        if all(not isinstance(x, (dict, list)) for x in v):
            return "[" + ", ".join(_dump(x, indent, level + 1) for x in v) + "]"
        return "[\n" + ",\n".join(pad + _dump(x, indent, level + 1) for x in v) + "\n" + end + "]"
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        # JSON has no inf/nan literals; they are written as strings
        s = fmt_float(v)
        return f'"{s}"' if s in ("inf", "-inf", "nan") else s
    return _string(str(v))


def _string(s):
    return json.dumps(str(s), ensure_ascii=False)


def dumps(obj, indent=2):
    """Sorted-key JSON text with floats at 17 significant digits."""
    return _dump(plain(obj), indent, 0) + "\n"


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj))
    return path


def write_pgm(path, bits):
    """Binary PGM (P5), rows top to bottom with the largest imaginary part first."""
    img = np.where(np.asarray(bits, dtype=bool), 0, 255).astype(np.uint8)[::-1]
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_tree(root, names):
    """SHA-256 of each named file under ``root``."""
    return {n: sha256_file(os.path.join(root, n)) for n in sorted(names)}
