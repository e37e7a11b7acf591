"""
CSV and plain-text report writers.

Reports are the boundary of the package: loss logs, frozen-parameter
audits, prune reports, retained index lists and attention maps are written
here for plotting elsewhere.
"""
from typing import Any, Dict, Iterable, List, Sequence
import csv
import logging
import os

import numpy as np

from panther_toy.bridge.pruning import IndexedTokens, PruneReport


logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "loss", "sequence_length", "visual_tokens", "seconds")
AUDIT_COLUMNS = ("parameter", "group", "trainable", "changed")
PRUNE_TURN_COLUMNS = ("turn", "num_positions", "retained", "pruned")
BENCH_COLUMNS = ("tau", "conversations", "visual_before", "visual_after", "total_before",
                 "total_after", "mean_length", "min_length", "max_length", "epoch_seconds")


def _prepare(path: str):
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_rows(path: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> int:
    """
    Write dict rows under a fixed header.

    Returns:
        Number of data rows written.
    """
    _prepare(path)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return count


def read_rows(path: str) -> List[Dict[str, str]]:
    """Read a CSV written by ``write_rows``."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def write_loss_log(path: str, rows: Iterable[Dict[str, Any]]) -> int:
    return write_rows(path, LOSS_COLUMNS, rows)


def write_audit(path: str, rows: Iterable[Dict[str, Any]]) -> int:
    return write_rows(path, AUDIT_COLUMNS, rows)


def write_prune_report(path: str, report: PruneReport) -> int:
    """One row per turn, then a ``total`` row."""
    rows: List[Dict[str, Any]] = [
        {"turn": k, "num_positions": report.num_positions, "retained": kept,
         "pruned": report.num_positions - kept}
        for k, kept in enumerate(report.retained)
    ]
    rows.append({"turn": "total", "num_positions": report.visual_before,
                 "retained": report.visual_after,
                 "pruned": report.visual_before - report.visual_after})
    return write_rows(path, PRUNE_TURN_COLUMNS, rows)


def write_bench(path: str, rows: Iterable[Dict[str, Any]]) -> int:
    return write_rows(path, BENCH_COLUMNS, rows)


def write_index_lists(path: str, retained: Sequence[IndexedTokens]):
    """One comma-separated list of retained spatial indices per turn."""
    _prepare(path)
    with open(path, "w", encoding="utf-8") as f:
        for tokens in retained:
            f.write(",".join(str(int(i)) for i in tokens.idx) + "\n")


def read_index_lists(path: str) -> List[List[int]]:
    with open(path, "r", encoding="utf-8") as f:
        return [[int(v) for v in line.strip().split(",") if v] for line in f]


def write_matrix(path: str, matrix: np.ndarray):
    """Write a 2-D array as CSV without a header."""
    _prepare(path)
    matrix = np.atleast_2d(matrix)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
