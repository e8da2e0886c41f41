"""Dataset CSV (``y,x1,...,xd``) and schema-versioned JSON helpers."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Union

import numpy as np

from .certificate import _encode
from .ermcore import Dataset

SCHEMA = "dropkit/1"
PathLike = Union[str, os.PathLike]


def write_dataset(path: PathLike, dataset: Dataset) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x{j + 1}" for j in range(dataset.d)])
        for yi, xi in zip(dataset.labels, dataset.features):
            writer.writerow([str(int(yi))] + [format(float(v), ".17g") for v in xi])
    return path


def read_dataset(path: PathLike) -> Dataset:
    """Labels may be 0/1 or -1/+1."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "y":
            raise ValueError(f"{path}: expected header 'y,x1,...,xd'")
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no samples")
    table = np.array(rows, dtype=np.float64)
    if table.shape[1] != len(header):
        raise ValueError(f"{path}: rows have {table.shape[1]} columns, header has {len(header)}")
    return Dataset.from_signed(table[:, 1:], table[:, 0])


def dump_json(path: PathLike, payload: dict) -> Path:
    path = Path(path)
    body = {"schema": SCHEMA}
    body.update(_encode(payload))
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2)
        fh.write("\n")
    return path


def load_json(path: PathLike) -> dict:
    with open(path) as fh:
        return json.load(fh)
