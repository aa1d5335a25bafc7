# writers/csv_writer.py

import csv
import logging
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def format_value(v: Any) -> str:
    """Floats with 6 significant digits; everything else via str()."""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    return str(v)


def write_csv(rows: Iterable[Dict[str, Any]], path: str, columns: Optional[Sequence[str]] = None) -> int:
    """Header + one line per row, comma-separated, LF line endings. Returns rows written."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c, "")) for c in columns])
    logger.info("wrote %d rows to %s", len(rows), path)
    return len(rows)


def matrix_rows(matrix, row_labels: Sequence[Any], col_labels: Sequence[Any], corner: str = "true") -> List[Dict[str, Any]]:
    """A 2D table as dict rows: first column holds the row label."""
    out = []
    for label, values in zip(row_labels, matrix):
        row: Dict[str, Any] = {corner: label}
        row.update({str(c): float(v) for c, v in zip(col_labels, values)})
        out.append(row)
    return out
