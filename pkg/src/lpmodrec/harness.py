"""Declarative experiment runner for the simulated accuracy studies.

An experiment names a training grid and a test grid over four knobs (SNR,
overlap, missing symbols, rotation), a dictionary policy and which knobs the
classifier is blind to.  For each test cell the classifier is trained on the
training cells that agree with it on every knob the classifier is *aware* of;
knobs listed in ``blind`` (or with a single training value) are pooled.
Every feature family goes through the identical classifier path.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .classifier import (
    EvalReport,
    confusion_matrix,
    predict,
    save_model,
    stratified_folds,
    train_svm,
)
from .errors import ConfigError
from .features import LABEL_COLUMNS, FeatureTag
from .global_features import DEFAULT_QUANTILES, compute_cumulants, compute_moments, compute_order_stats
from .iq import MODULATIONS, IqInstance, ManifestRecord, Modulation, to_polar, write_iq_file, write_manifest
from .local_features import (
    DEFAULT_COMPONENTS,
    DEFAULT_SHINGLE,
    GmmDictionary,
    encode_instance,
    load_dictionaries,
    save_dictionaries,
    train_dictionaries,
)
from .simulator import SPLIT_KEYS, SimConfig, derive_seed, generate_instance

log = logging.getLogger(__name__)

KNOBS = ("snr", "overlap", "missing", "rotation")
FAMILIES = ("HOC", "OS", "LP", "LP+HOC")
ROTATION_GRID = tuple(k * math.pi / 8 for k in range(5))
SNR_GRID = tuple(float(s) for s in range(0, 21, 2))
OVERLAP_GRID = (50.0, 60.0, 70.0, 80.0, 90.0, 100.0)
_CACHE_VERSION = 1


# ---------------------------------------------------------------------------
# configuration


def _floats(v) -> tuple[float, ...]:
    if isinstance(v, (int, float)):
        v = [v]
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class ConditionGrid:
    snr_db: tuple[float, ...] = (10.0,)
    overlap_pct: tuple[float, ...] = (100.0,)
    missing_symbols: tuple[int, ...] = (0,)
    rotation_rad: tuple[float, ...] = (0.0,)
    mix_rotation: bool = False
    count: int = 1000

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionGrid":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown condition keys {sorted(unknown)}")
        return cls(
            snr_db=_floats(d.get("snr_db", cls.snr_db)),
            overlap_pct=_floats(d.get("overlap_pct", cls.overlap_pct)),
            missing_symbols=tuple(int(x) for x in np.atleast_1d(d.get("missing_symbols", (0,)))),
            rotation_rad=_floats(d.get("rotation_rad", cls.rotation_rad)),
            mix_rotation=bool(d.get("mix_rotation", False)),
            count=int(d.get("count", cls.count)),
        )

    def knob_values(self, knob: str) -> tuple:
        if knob == "snr":
            return self.snr_db
        if knob == "overlap":
            return self.overlap_pct
        if knob == "missing":
            return self.missing_symbols
        return (self.rotation_rad,) if self.mix_rotation else self.rotation_rad

    def cells(self) -> list["Cell"]:
        return [Cell(*vals) for vals in itertools.product(*(self.knob_values(k) for k in KNOBS))]


@dataclass(frozen=True)
class Cell:
    snr: float
    overlap: float
    missing: int
    rotation: float | tuple[float, ...]

    def value(self, knob: str):
        return getattr(self, knob)

    def label(self) -> dict:
        rot = self.rotation
        return {
            "snr_db": _fmt(self.snr),
            "overlap_pct": _fmt(self.overlap),
            "missing_symbols": str(self.missing),
            "rotation_rad": "mixed" if isinstance(rot, tuple) else _fmt(rot),
        }


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6g}"


@dataclass(frozen=True)
class DictionarySpec:
    policy: str = "universal"
    snr_db: float = 10.0
    overlap_pct: float = 100.0
    missing_symbols: int = 0
    rotation_rad: tuple[float, ...] = ROTATION_GRID
    instances: int = 40
    l: int = DEFAULT_SHINGLE
    K: int = DEFAULT_COMPONENTS
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "DictionarySpec":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown dictionary keys {sorted(unknown)}")
        kw = dict(d)
        if "rotation_rad" in kw:
            kw["rotation_rad"] = _floats(kw["rotation_rad"])
        for k in ("snr_db", "overlap_pct"):
            if k in kw:
                kw[k] = float(kw[k])
        for k in ("missing_symbols", "instances", "l", "K", "seed"):
            if k in kw:
                kw[k] = int(kw[k])
        spec = cls(**kw)
        if spec.policy not in ("universal", "per-condition"):
            raise ConfigError(f"dictionary policy must be 'universal' or 'per-condition', got {spec.policy!r}")
        return spec


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    train: ConditionGrid
    test: ConditionGrid
    dictionary: DictionarySpec = field(default_factory=DictionarySpec)
    families: tuple[str, ...] = FAMILIES
    blind: tuple[str, ...] = ()
    modulations: tuple[Modulation, ...] = MODULATIONS
    n_samples: int = 512
    samples_per_symbol: int = 4
    C: float | str = 1.0
    folds: int = 0
    os_quantiles: int = DEFAULT_QUANTILES
    fv_normalize: bool = False
    standardize: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown experiment keys {sorted(unknown)}")
        if "id" not in d:
            raise ConfigError("experiment needs an id")
        cfg = cls(
            id=str(d["id"]),
            train=ConditionGrid.from_dict(d.get("train", {})),
            test=ConditionGrid.from_dict(d.get("test", d.get("train", {}))),
            dictionary=DictionarySpec.from_dict(d.get("dictionary", {})),
            families=tuple(FeatureTag.parse(f).family for f in d.get("families", FAMILIES)),
            blind=tuple(d.get("blind", ())),
            modulations=tuple(Modulation.parse(m) for m in d.get("modulations", [m.value for m in MODULATIONS])),
            n_samples=int(d.get("n_samples", 512)),
            samples_per_symbol=int(d.get("samples_per_symbol", 4)),
            C=d.get("C", 1.0) if isinstance(d.get("C", 1.0), str) else float(d.get("C", 1.0)),
            folds=int(d.get("folds", 0)),
            os_quantiles=int(d.get("os_quantiles", DEFAULT_QUANTILES)),
            fv_normalize=bool(d.get("fv_normalize", False)),
            standardize=bool(d.get("standardize", True)),
            seed=int(d.get("seed", 0)),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modulations"] = [m.value for m in self.modulations]
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def validate(self) -> None:
        for k in self.blind:
            if k not in KNOBS:
                raise ConfigError(f"unknown blind knob {k!r}; choose from {KNOBS}")
        if len(self.modulations) < 2:
            raise ConfigError("need at least two modulations")
        if self.train.count < 2 or self.test.count < 0:
            raise ConfigError("train count must be >= 2 and test count >= 0")
        if self.folds == 1 or self.folds < 0:
            raise ConfigError("folds must be 0 (train/test split) or >= 2")
        if self.folds and self.train != replace(self.test, count=self.train.count):
            raise ConfigError("k-fold evaluation needs identical train and test grids")
        for grid in (self.train, self.test):
            for m in grid.missing_symbols:
                if m < 0 or any(m >= mod.order for mod in self.modulations):
                    raise ConfigError(f"missing_symbols={m} not valid for every modulation")
            for o in grid.overlap_pct:
                if not 0 < o <= 100:
                    raise ConfigError(f"overlap {o} outside (0, 100]")
        for knob in KNOBS:
            tv = self.train.knob_values(knob)
            if knob in self.blind or len(tv) == 1:
                continue
            missing = [v for v in self.test.knob_values(knob) if v not in tv]
            if missing:
                raise ConfigError(f"{knob}-aware classifier has no training data for {missing}")
        if self.dictionary.policy == "per-condition" and any(
                len(self.train.knob_values(k)) > 1 for k in self.blind):
            raise ConfigError("per-condition dictionaries cannot feed a classifier pooled over a blind knob")
        lp = any(f.startswith("LP") for f in self.families)
        if lp and self.n_samples < self.dictionary.l:
            raise ConfigError("instances shorter than the shingle length")


def bundled_configs() -> list[str]:
    """Names of the experiment configs shipped with the package."""
    return sorted(p.stem for p in (Path(__file__).parent / "configs").glob("*.toml"))


def load_config(name_or_path) -> ExperimentConfig:
    """Load a TOML config by path, or by bundled name such as ``"snr_blind"``."""
    path = Path(name_or_path)
    if path.is_file():
        return ExperimentConfig.from_toml(path)
    bundled = Path(__file__).parent / "configs" / f"{path.stem}.toml"
    if bundled.is_file():
        return ExperimentConfig.from_toml(bundled)
    raise ConfigError(f"no config file {name_or_path!r}; bundled: {', '.join(bundled_configs())}")


# ---------------------------------------------------------------------------
# results


RESULT_FIELDS = ("experiment", "family", "snr_db", "overlap_pct", "missing_symbols",
                 "rotation_rad", "n_test", "accuracy_mean", "accuracy_std")


@dataclass
class ResultTable:
    classes: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)
    confusions: list[tuple[dict, np.ndarray]] = field(default_factory=list)
    extra_fields: tuple[str, ...] = ()

    @property
    def fields(self) -> tuple[str, ...]:
        return self.extra_fields + RESULT_FIELDS + tuple(f"acc_{c}" for c in self.classes)

    def add(self, key: dict, report: EvalReport, std: float = 0.0) -> None:
        row = dict(key)
        row["n_test"] = report.total
        row["accuracy_mean"] = report.accuracy
        row["accuracy_std"] = std
        for c, a in report.per_class_accuracy.items():
            row[f"acc_{c}"] = a
        self.rows.append(row)
        self.confusions.append((dict(key), report.confusion))

    def select(self, **match) -> list[dict]:
        out = []
        for row in self.rows:
            if all(str(row.get(k)) == (_fmt(v) if isinstance(v, float) else str(v)) for k, v in match.items()):
                out.append(row)
        return out

    def accuracy(self, **match) -> float:
        rows = self.select(**match)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {match}")
        return rows[0]["accuracy_mean"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, self.fields, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        keys = self.extra_fields + RESULT_FIELDS[:6]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys + ("true", "predicted", "count"))
        for key, cm in self.confusions:
            for i, t in enumerate(self.classes):
                for j, p in enumerate(self.classes):
                    w.writerow([key.get(k, "") for k in keys] + [t, p, int(cm[i, j])])
        return buf.getvalue()

    def write(self, out_dir, stem: str = "results") -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.csv").write_text(self.to_csv())
        (out_dir / f"{stem}_confusion.csv").write_text(self.confusion_csv())
        return out_dir / f"{stem}.csv"

    def extend(self, other: "ResultTable", **extra) -> None:
        for row in other.rows:
            self.rows.append({**extra, **row})
        for key, cm in other.confusions:
            self.confusions.append(({**extra, **key}, cm))


# ---------------------------------------------------------------------------
# feature cache


class FeatureCache:
    """Content-addressed ``.npy`` store; ``directory=None`` keeps it in memory."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory else None
        self._mem: dict[str, np.ndarray] = {}
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    def get(self, key: dict, compute: Callable[[], np.ndarray]) -> np.ndarray:
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:24]
        if digest in self._mem:
            return self._mem[digest]
        path = self.directory / f"{digest}.npy" if self.directory else None
        if path is not None and path.exists():
            arr = np.load(path)
        else:
            arr = np.asarray(compute(), dtype=np.float64)
            if path is not None:
                tmp = path.with_suffix(".tmp.npy")
                np.save(tmp, arr)
                tmp.replace(path)
        self._mem[digest] = arr
        return arr

    def clear_memory(self) -> None:
        self._mem.clear()


# ---------------------------------------------------------------------------
# data generation and features


def extract_features(instances: Iterable[IqInstance], family, dicts=None,
                     q: int = DEFAULT_QUANTILES, normalize: bool = False) -> np.ndarray:
    """Feature matrix of one family for a sequence of instances."""
    tag = FeatureTag.parse(family)
    if tag in (FeatureTag.FV, FeatureTag.FV_HOC) and dicts is None:
        raise ConfigError(f"{tag.family} features need amplitude and phase dictionaries")
    rows = []
    for x in instances:
        if tag is FeatureTag.HOC:
            rows.append(compute_cumulants(compute_moments(x)))
        elif tag is FeatureTag.OS:
            rows.append(compute_order_stats(to_polar(x), q))
        else:
            fv = encode_instance(dicts[0], dicts[1], x, normalize=normalize).values
            if tag is FeatureTag.FV_HOC:
                fv = np.concatenate([fv, compute_cumulants(compute_moments(x))])
            rows.append(fv)
    if not rows:
        raise ConfigError("no instances to extract features from")
    return np.array(rows, dtype=np.float64)


def _cell_key(cfg: ExperimentConfig, mod: Modulation, cell: Cell) -> int:
    rot = list(cell.rotation) if isinstance(cell.rotation, tuple) else cell.rotation
    text = json.dumps([mod.value, repr(cell.snr), repr(cell.overlap), cell.missing,
                       repr(rot), cfg.n_samples, cfg.samples_per_symbol])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:7], "little")


_ROLE_KEYS = SPLIT_KEYS


def generate_cell(cfg: ExperimentConfig, role: str, mod: Modulation, cell: Cell,
                  count: int) -> list[IqInstance]:
    key = _cell_key(cfg, mod, cell)
    rots = cell.rotation if isinstance(cell.rotation, tuple) else (cell.rotation,)
    out = []
    for i in range(count):
        sim = SimConfig(
            modulation=mod,
            snr_db=cell.snr,
            overlap_pct=cell.overlap,
            missing_symbols=cell.missing,
            rotation_rad=rots[i % len(rots)],
            n_samples=cfg.n_samples,
            samples_per_symbol=cfg.samples_per_symbol,
            rng_seed=derive_seed(cfg.seed, _ROLE_KEYS[role], key, i),
        )
        out.append(generate_instance(sim))
    return out


@dataclass
class _Batch:
    role: str
    mod: Modulation
    cell: Cell
    count: int
    instances: list | None = None


class _FeatureStore:
    def __init__(self, cfg: ExperimentConfig, cache: FeatureCache):
        self.cfg = cfg
        self.cache = cache

    def _key(self, b: _Batch, feature: str) -> dict:
        cfg = self.cfg
        return {
            "v": _CACHE_VERSION,
            "pkg": __version__,
            "seed": cfg.seed,
            "role": b.role,
            "mod": b.mod.value,
            "cell": asdict(b.cell),
            "n": cfg.n_samples,
            "sps": cfg.samples_per_symbol,
            "count": b.count,
            "feature": feature,
        }

    def _instances(self, b: _Batch) -> list:
        if b.instances is None:
            b.instances = generate_cell(self.cfg, b.role, b.mod, b.cell, b.count)
        return b.instances

    def hoc(self, b: _Batch) -> np.ndarray:
        return self.cache.get(self._key(b, "HOC"), lambda: np.array(
            [compute_cumulants(compute_moments(x)) for x in self._instances(b)]))

    def os(self, b: _Batch) -> np.ndarray:
        q = self.cfg.os_quantiles
        return self.cache.get(self._key(b, f"OS:{q}"), lambda: np.array(
            [compute_order_stats(to_polar(x), q) for x in self._instances(b)]))

    def fv(self, b: _Batch, dicts: tuple[GmmDictionary, GmmDictionary]) -> np.ndarray:
        da, dp = dicts
        tag = f"FV:{da.fingerprint()}:{dp.fingerprint()}:{int(self.cfg.fv_normalize)}"
        return self.cache.get(self._key(b, tag), lambda: np.array(
            [encode_instance(da, dp, x, normalize=self.cfg.fv_normalize).values
             for x in self._instances(b)]))

    def family(self, b: _Batch, family: str, dicts) -> np.ndarray:
        if family == "HOC":
            return self.hoc(b)
        if family == "OS":
            return self.os(b)
        if family == "LP":
            return self.fv(b, dicts)
        if family == "LP+HOC":
            return np.hstack([self.fv(b, dicts), self.hoc(b)])
        raise ConfigError(f"unknown family {family!r}")

    def release(self, b: _Batch) -> None:
        b.instances = None


class _Exporter:
    """Writes the generated traces, a manifest and per-family feature CSVs."""

    def __init__(self, out_dir: Path, store: _FeatureStore):
        self.dir = out_dir
        self.store = store
        (out_dir / "data").mkdir(parents=True, exist_ok=True)
        self.records: list[ManifestRecord] = []
        self._ids: dict[tuple, list[str]] = {}
        self._files: dict[str, tuple] = {}
        self._written: set[tuple] = set()

    def _bkey(self, b: _Batch) -> tuple:
        return (b.role, b.mod.value, b.cell)

    def ids(self, b: _Batch) -> list[str]:
        key = self._bkey(b)
        if key not in self._ids:
            stem = f"{b.role}_{b.mod.value}_{_group_label((b.cell,))}"
            rel = f"data/{stem}.iq"
            path = self.dir / rel
            path.unlink(missing_ok=True)
            ids = []
            for i, x in enumerate(self.store._instances(b)):
                offset = write_iq_file(path, x.samples, append=True)
                ids.append(f"{stem}-{i:06d}")
                self.records.append(ManifestRecord(ids[-1], b.role, rel, offset, len(x), x.meta))
            self._ids[key] = ids
        return self._ids[key]

    def features(self, family: str, b: _Batch, X: np.ndarray) -> None:
        key = (family,) + self._bkey(b)
        if key in self._written:
            return
        self._written.add(key)
        ids = self.ids(b)
        if family not in self._files:
            fh = open(self.dir / f"features_{family.replace('+', '_')}.csv", "w", newline="")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LABEL_COLUMNS + tuple(f"f{j:04d}" for j in range(X.shape[1])))
            self._files[family] = (fh, w)
        _, w = self._files[family]
        lab = b.cell.label()
        tag = FeatureTag.parse(family).value
        for i, x in zip(ids, X):
            w.writerow([i, b.role, b.mod.value, lab["snr_db"], lab["overlap_pct"],
                        lab["missing_symbols"], lab["rotation_rad"], tag, *map(repr, x.tolist())])

    def close(self) -> None:
        for fh, _ in self._files.values():
            fh.close()
        write_manifest(self.dir / "manifest.tsv", self.records)


# ---------------------------------------------------------------------------
# dictionaries


def _dictionary_instances(cfg: ExperimentConfig, spec: DictionarySpec) -> list[IqInstance]:
    cell = Cell(spec.snr_db, spec.overlap_pct, spec.missing_symbols, tuple(spec.rotation_rad))
    out = []
    for mod in cfg.modulations:
        out += generate_cell(cfg, "dict", mod, cell, spec.instances)
    return out


def _train_or_load_dicts(instances_fn, key: dict, store_dir: Path | None, l: int, K: int,
                         seed: int, description: str):
    digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]
    if store_dir is not None:
        path = store_dir / digest
        if (path / "amplitude.npz").exists() and (path / "phase.npz").exists():
            return load_dictionaries(path), digest
    log.info("training dictionaries %s (%s)", digest, description)
    dicts = train_dictionaries(instances_fn(), l, K, seed, description=description)
    if store_dir is not None:
        save_dictionaries(store_dir / digest, *dicts)
    return dicts, digest


# ---------------------------------------------------------------------------
# the runner


def _training_cells(cfg: ExperimentConfig, test_cell: Cell) -> tuple[Cell, ...]:
    pooled = {}
    for knob in KNOBS:
        tv = cfg.train.knob_values(knob)
        if knob in cfg.blind or len(tv) == 1:
            pooled[knob] = tv
        else:
            pooled[knob] = (test_cell.value(knob),)
    return tuple(Cell(*vals) for vals in itertools.product(*(pooled[k] for k in KNOBS)))


def _group_label(cells: Sequence[Cell]) -> str:
    return hashlib.sha256(repr(cells).encode()).hexdigest()[:10]


def run_experiment(cfg: ExperimentConfig, out_dir=None, cache_dir=None,
                   store_models: bool = True, export_data: bool = False) -> ResultTable:
    """Generate data, train dictionaries and classifiers, evaluate every family.

    Writes ``results.csv``, ``results_confusion.csv``, the resolved config,
    dictionaries and models under ``out_dir`` when given.  ``export_data``
    also writes the traces, ``manifest.tsv`` and one feature CSV per family.
    Any failure aborts the run before results are written.
    """
    cfg.validate()
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    cache = FeatureCache(Path(cache_dir) / "features" if cache_dir else None)
    dict_dir = Path(cache_dir) / "dictionaries" if cache_dir else (out_dir / "dictionaries" if out_dir else None)
    store = _FeatureStore(cfg, cache)
    exporter = _Exporter(out_dir, store) if (export_data and out_dir) else None

    def features(b: _Batch, family: str, dicts) -> np.ndarray:
        X = store.family(b, family, dicts)
        if exporter:
            exporter.features(family, b, X)
        return X

    classes = tuple(m.value for m in cfg.modulations)
    table = ResultTable(classes)
    needs_lp = any(f.startswith("LP") for f in cfg.families)
    spec = cfg.dictionary

    groups: dict[tuple[Cell, ...], list[Cell]] = {}
    for tc in cfg.test.cells():
        groups.setdefault(_training_cells(cfg, tc), []).append(tc)

    universal = None
    if needs_lp and spec.policy == "universal":
        key = {"v": _CACHE_VERSION, "seed": cfg.seed, "spec": asdict(spec),
               "mods": [m.value for m in cfg.modulations], "n": cfg.n_samples,
               "sps": cfg.samples_per_symbol}
        universal, digest = _train_or_load_dicts(
            lambda: _dictionary_instances(cfg, spec), key, dict_dir, spec.l, spec.K, spec.seed,
            f"universal: snr={spec.snr_db} overlap={spec.overlap_pct} "
            f"missing={spec.missing_symbols} rotations={list(spec.rotation_rad)}")
        if out_dir and dict_dir != out_dir / "dictionaries":
            save_dictionaries(out_dir / "dictionaries" / digest, *universal)

    for train_cells, test_cells in groups.items():
        glabel = _group_label(train_cells)
        train_batches = [_Batch("train", m, c, cfg.train.count) for c in train_cells for m in cfg.modulations]
        y_train = [b.mod.value for b in train_batches for _ in range(b.count)]

        dicts = universal
        if needs_lp and spec.policy == "per-condition":
            per_cell = max(1, spec.instances // len(train_cells))

            def dict_data(batches=train_batches, k=per_cell):
                return [x for b in batches for x in store._instances(b)[:k]]

            key = {"v": _CACHE_VERSION, "seed": cfg.seed, "policy": "per-condition",
                   "cells": [asdict(c) for c in train_cells], "per_cell": per_cell,
                   "count": cfg.train.count, "l": spec.l, "K": spec.K, "dseed": spec.seed,
                   "mods": [m.value for m in cfg.modulations], "n": cfg.n_samples,
                   "sps": cfg.samples_per_symbol}
            dicts, digest = _train_or_load_dicts(dict_data, key, dict_dir, spec.l, spec.K, spec.seed,
                                                 f"per-condition group {glabel}")
            if out_dir and dict_dir != out_dir / "dictionaries":
                save_dictionaries(out_dir / "dictionaries" / digest, *dicts)

        for family in cfg.families:
            X_train = np.vstack([features(b, family, dicts) for b in train_batches])
            tag = FeatureTag.parse(family)
            if cfg.folds:
                _kfold_group(cfg, table, family, tag, X_train, y_train, train_batches, classes)
                continue
            model = train_svm(X_train, y_train, cfg.C, cfg.seed, tag=tag, classes=classes,
                              standardize=cfg.standardize)
            if out_dir and store_models:
                mdir = out_dir / "models"
                mdir.mkdir(exist_ok=True)
                save_model(model, mdir / f"{family.replace('+', '_')}_{glabel}.npz")
            for tc in test_cells:
                batches = [_Batch("test", m, tc, cfg.test.count) for m in cfg.modulations]
                X_test = np.vstack([features(b, family, dicts) for b in batches])
                y_test = [b.mod.value for b in batches for _ in range(b.count)]
                pred, _ = predict(model, X_test)
                report = EvalReport(classes, confusion_matrix(y_test, pred, classes))
                table.add({"experiment": cfg.id, "family": family, **tc.label()}, report)
                for b in batches:
                    store.release(b)
            log.info("%s: %s group %s done", cfg.id, family, glabel)
        for b in train_batches:
            store.release(b)
        cache.clear_memory()

    if exporter:
        exporter.close()
    if out_dir:
        table.write(out_dir)
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return table


def _kfold_group(cfg, table, family, tag, X, y, batches, classes) -> None:
    y = np.array(y, dtype=object)
    cell_of = np.concatenate([[i] * b.count for i, b in enumerate(batches)])
    cells = list(dict.fromkeys(b.cell for b in batches))
    per_cell = {c: np.zeros((len(classes), len(classes)), dtype=np.int64) for c in cells}
    fold_acc = {c: [] for c in cells}
    for f, test in enumerate(stratified_folds(list(y), cfg.folds, cfg.seed)):
        train = np.setdiff1d(np.arange(y.size), test)
        model = train_svm(X[train], list(y[train]), cfg.C, cfg.seed + f, tag=tag, classes=classes,
                          standardize=cfg.standardize)
        pred, _ = predict(model, X[test])
        pred = np.array(pred, dtype=object)
        for c in cells:
            sel = np.array([batches[cell_of[t]].cell == c for t in test])
            if not sel.any():
                continue
            cm = confusion_matrix(y[test][sel], pred[sel], classes)
            per_cell[c] += cm
            fold_acc[c].append(np.trace(cm) / cm.sum())
    for c in cells:
        report = EvalReport(classes, per_cell[c], folds=cfg.folds)
        table.add({"experiment": cfg.id, "family": family, **c.label()}, report,
                  std=float(np.std(fold_acc[c])))


# ---------------------------------------------------------------------------
# sweeps and diagnostics


def parameter_sweep(cfg: ExperimentConfig, ls: Iterable[int] = (2, 3, 5),
                    Ks: Iterable[int] = (20, 50, 100), out_dir=None, cache_dir=None,
                    families: Sequence[str] = ("LP+HOC",)) -> ResultTable:
    """Re-run ``cfg`` for every (shingle length, dictionary size) pair."""
    table = ResultTable(tuple(m.value for m in cfg.modulations), extra_fields=("l", "K"))
    for l, K in itertools.product(ls, Ks):
        sub = replace(cfg, id=f"{cfg.id}-l{l}-K{K}", families=tuple(families),
                      dictionary=replace(cfg.dictionary, l=l, K=K))
        sub_dir = Path(out_dir) / f"l{l}_K{K}" if out_dir else None
        t = run_experiment(sub, sub_dir, cache_dir, store_models=False)
        table.extend(t, l=str(l), K=str(K))
    if out_dir:
        table.write(out_dir, "sweep")
    return table


DIAGNOSTIC_FEATURES = ("C42", "C63", "OS_amp_q25", "OS_amp_q75")


def _diagnostic_values(x: IqInstance) -> dict:
    m = compute_moments(x)
    c = compute_cumulants(m)
    amp = to_polar(x).amplitude
    return {
        "C42": c[2],
        "C63": c[6],
        "OS_amp_q25": float(np.quantile(amp, 0.25)),
        "OS_amp_q75": float(np.quantile(amp, 0.75)),
    }


def diagnostic_feature_stability(modulations: Sequence, knob: str, values: Sequence,
                                 n_instances: int = 100, n_samples: int = 128,
                                 snr_db: float = 20.0, overlap_pct: float = 100.0,
                                 missing_symbols: int = 0, samples_per_symbol: int = 1,
                                 seed: int = 0, out=None) -> list[dict]:
    """Mean and std of selected global features per knob value and modulation.

    ``knob`` is one of ``overlap``, ``missing``, ``snr``.  Defaults to symbol
    rate so a 128-sample instance carries 128 symbols.
    """
    if knob not in ("overlap", "missing", "snr"):
        raise ConfigError(f"diagnostics sweep overlap, missing or snr, not {knob!r}")
    mods = [Modulation.parse(m) if not isinstance(m, Modulation) else m for m in modulations]
    rows = []
    for value in values:
        for mod in mods:
            base = {"snr": snr_db, "overlap": overlap_pct, "missing": missing_symbols}
            base[knob] = value
            if base["missing"] >= mod.order:
                raise ConfigError(f"{base['missing']} missing symbols invalid for {mod.value}")
            feats = []
            for i in range(n_instances):
                sim = SimConfig(mod, snr_db=float(base["snr"]), overlap_pct=float(base["overlap"]),
                                missing_symbols=int(base["missing"]), n_samples=n_samples,
                                samples_per_symbol=samples_per_symbol,
                                rng_seed=derive_seed(seed, 3, int(base["missing"]),
                                                     int(round(float(base["overlap"]) * 1000)),
                                                     MODULATIONS.index(mod), i))
                feats.append(_diagnostic_values(generate_instance(sim)))
            for name in DIAGNOSTIC_FEATURES:
                v = np.array([f[name] for f in feats])
                rows.append({"knob": knob, "value": value, "modulation": mod.value,
                             "feature": name, "mean": float(v.mean()), "std": float(v.std())})
    if out is not None:
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, ("knob", "value", "modulation", "feature", "mean", "std"),
                               lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({**r, "mean": f"{r['mean']:.9g}", "std": f"{r['std']:.9g}"})
    return rows
