# dataset.py
import csv
import logging
import os

import numpy as np

import config
from microcell import CellSolution

logger = logging.getLogger(__name__)

FAILURE_COLUMNS = ["phi", "nu", "error"]


class DatasetError(ValueError):
    pass


def failures_path(path):
    root, _ = os.path.splitext(path)
    return f"{root}.failures.csv"


def _fmt(value):
    return format(float(value), config.CSV_FLOAT_FORMAT)


def write_dataset(records, path, failures=None):
    """
    Writes cell records as CSV (17 significant digits), sorted by (phi, nu).
    Failures, if any were passed, go to '<dataset>.failures.csv'.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    ordered = sorted(records, key=lambda r: (r.phi, r.nu))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(config.DATASET_COLUMNS)
        for rec in ordered:
            row = rec.as_row()
            writer.writerow([_fmt(row[c]) for c in config.DATASET_COLUMNS])
    logger.info("Wrote %d cell records to '%s'", len(ordered), path)

    if failures is not None:
        fpath = failures_path(path)
        with open(fpath, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(FAILURE_COLUMNS)
            for phi, nu, msg in failures:
                writer.writerow([_fmt(phi), _fmt(nu), msg])
        if failures:
            logger.warning("Warning: %d cell solves failed, see '%s'", len(failures), fpath)
    return path


def read_dataset(path, progress_callback=None):
    """Reads a cell dataset CSV back into CellSolution records."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Dataset file '{path}' not found")
    logger.info("Reading cell dataset '%s'...", path)
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DatasetError(f"Dataset file '{path}' is empty")
    header, body = rows[0], rows[1:]
    if header != config.DATASET_COLUMNS:
        raise DatasetError(f"Unexpected dataset header {header}; expected {config.DATASET_COLUMNS}")

    total_rows = len(body)
    update_every = max(1, total_rows // 100)
    records = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DatasetError(f"Row {i + 2} of '{path}' has {len(row)} fields, expected {len(header)}")
        try:
            values = dict(zip(header, (float(v) for v in row)))
        except ValueError as e:
            raise DatasetError(f"Row {i + 2} of '{path}' is not numeric: {e}") from e
        records.append(CellSolution(**values))
        if progress_callback and ((i + 1) % update_every == 0 or i + 1 == total_rows):
            progress_callback(current_row=i + 1, total_rows=total_rows)
    logger.info("Read %d cell records.", len(records))
    return records


def read_failures(path):
    fpath = failures_path(path)
    if not os.path.exists(fpath):
        return []
    with open(fpath, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        next(reader, None)
        return [(float(phi), float(nu), msg) for phi, nu, msg in reader]


def records_to_arrays(records):
    """Inputs as (n, 2) columns (nu, phi) and a dict of target vectors."""
    X = np.array([[r.nu, r.phi] for r in records], dtype=float).reshape(-1, 2)
    Y = {name: np.array([getattr(r, name) for r in records], dtype=float)
         for name in config.SURROGATE_OUTPUTS}
    return X, Y
