"""Feature family tags, the feature-vector wrapper and the feature CSV format."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, TagMismatch


class FeatureTag(str, enum.Enum):
    HOC = "HOC"
    OS = "OS"
    FV = "FV"
    FV_HOC = "FV+HOC"

    @classmethod
    def parse(cls, text) -> "FeatureTag":
        if isinstance(text, cls):
            return text
        key = str(text).strip().upper().replace("LP", "FV")
        for tag in cls:
            if key == tag.value:
                return tag
        raise ConfigError(f"unknown feature family {text!r}")

    @property
    def family(self) -> str:
        """Name used in result tables (LP = local patterns)."""
        return {"FV": "LP", "FV+HOC": "LP+HOC"}.get(self.value, self.value)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    tag: FeatureTag

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


FisherVector = FeatureVector


LABEL_COLUMNS = ("id", "split", "modulation", "snr_db", "overlap_pct", "missing_symbols",
                 "rotation_rad", "tag")


@dataclass
class FeatureTable:
    """Rows of features with their instance id and label columns."""

    ids: list[str]
    labels: list[dict]
    X: np.ndarray
    tag: FeatureTag

    @property
    def modulations(self) -> list[str]:
        return [r["modulation"] for r in self.labels]

    def __len__(self) -> int:
        return len(self.ids)


def write_feature_csv(path, ids: Sequence[str], labels: Sequence[dict], X: np.ndarray,
                      tag: FeatureTag) -> Path:
    """Write features with ``repr`` floats so values round-trip exactly."""
    X = np.asarray(X, dtype=np.float64).reshape(len(ids), -1)
    if len(ids) != len(labels):
        raise ValueError("ids, labels and feature rows differ in length")
    tag = FeatureTag.parse(tag)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS + tuple(f"f{j:04d}" for j in range(X.shape[1])))
        for i, row, x in zip(ids, labels, X):
            lab = [row.get(k, "") for k in LABEL_COLUMNS[1:-1]]
            w.writerow([i, *lab, tag.value, *map(repr, x.tolist())])
    return path


def read_feature_csv(path) -> FeatureTable:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty feature file") from None
        if tuple(header[:len(LABEL_COLUMNS)]) != LABEL_COLUMNS:
            raise FormatError(f"{path}: unexpected header {header[:len(LABEL_COLUMNS)]}")
        nfeat = len(header) - len(LABEL_COLUMNS)
        ids, labels, rows, tags = [], [], [], set()
        for line in reader:
            if len(line) != len(header):
                raise FormatError(f"{path}: row {len(ids) + 1} has {len(line)} fields")
            ids.append(line[0])
            labels.append(dict(zip(LABEL_COLUMNS[1:-1], line[1:len(LABEL_COLUMNS) - 1])))
            tags.add(line[len(LABEL_COLUMNS) - 1])
            rows.append([float(v) for v in line[len(LABEL_COLUMNS):]])
    if len(tags) > 1:
        raise TagMismatch(f"{path}: mixed feature tags {sorted(tags)}")
    tag = FeatureTag.parse(tags.pop()) if tags else FeatureTag.HOC
    X = np.array(rows, dtype=np.float64).reshape(len(rows), nfeat)
    return FeatureTable(ids, labels, X, tag)
