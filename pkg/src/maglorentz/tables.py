"""CSV output with a fixed number format.

Every float is written with 17 significant digits in exponent form, which
round-trips IEEE doubles and gives byte-stable files across runs.
"""

from __future__ import annotations

import json
import math
from typing import Iterable, Optional, Sequence

import numpy as np

FLOAT_FORMAT = ".16e"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if v == 0.0:
            v = 0.0  # no negative zero
        return format(v, FLOAT_FORMAT)
    if v is None:
        return ""
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], header: Optional[dict] = None) -> None:
    """Header comment (JSON), column line, then one line per row."""
    with open(path, "w", newline="\n") as fh:
        if header is not None:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path):
    """(header dict, column names, list of string rows)."""
    header = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("# "):
        header = json.loads(lines[0][2:])
        lines = lines[1:]
    cols = lines[0].split(",")
    return header, cols, [ln.split(",") for ln in lines[1:]]
