"""Core I/Q types, the amplitude/phase transform and trace-file I/O.

Trace files are raw little-endian float32 pairs (I then Q) with no header.
Metadata travels either in a ``<trace>.meta`` sidecar of ``key = value`` lines
or in a dataset manifest (tab-separated, one record per instance).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyInstance,
    FormatError,
    NonFiniteSample,
    TruncatedFile,
)

_TRACE_DTYPE = np.dtype("<f4")


class Modulation(str, enum.Enum):
    QPSK = "QPSK"
    PSK8 = "8PSK"
    QAM8 = "8QAM"
    QAM16 = "16QAM"
    QAM64 = "64QAM"
    UNKNOWN = "unknown"

    @property
    def order(self) -> int:
        return _ORDERS[self]

    @classmethod
    def parse(cls, text: str) -> "Modulation":
        key = str(text).strip().upper().replace("-", "").replace("_", "")
        for mod in cls:
            if key in (mod.value.upper(), mod.name):
                return mod
        aliases = {"PSK4": cls.QPSK, "4PSK": cls.QPSK, "QAM4": cls.QPSK}
        if key in aliases:
            return aliases[key]
        raise ConfigError(f"unknown modulation label {text!r}")


_ORDERS = {
    Modulation.QPSK: 4,
    Modulation.PSK8: 8,
    Modulation.QAM8: 8,
    Modulation.QAM16: 16,
    Modulation.QAM64: 64,
    Modulation.UNKNOWN: 0,
}

MODULATIONS: tuple[Modulation, ...] = (
    Modulation.QPSK,
    Modulation.PSK8,
    Modulation.QAM8,
    Modulation.QAM16,
    Modulation.QAM64,
)


class Source(str, enum.Enum):
    SIMULATED = "simulated"
    FILE = "file"


class IqSample(NamedTuple):
    i: float
    q: float


@dataclass(frozen=True)
class InstanceMeta:
    modulation: Modulation = Modulation.UNKNOWN
    snr_db: float = math.nan
    overlap_pct: float = 100.0
    missing_symbols: int = 0
    rotation_rad: float = 0.0
    source: Source = Source.FILE

    def __post_init__(self):
        if not 0.0 < self.overlap_pct <= 100.0:
            raise ConfigError(f"overlap_pct must lie in (0, 100], got {self.overlap_pct}")
        if self.missing_symbols < 0:
            raise ConfigError("missing_symbols must be non-negative")
        order = self.modulation.order
        if order and self.missing_symbols >= order:
            raise ConfigError(
                f"{self.missing_symbols} missing symbols leaves nothing of {self.modulation.value}"
            )


@dataclass(frozen=True, eq=False)
class IqInstance:
    """An ordered run of complex baseband samples plus its labels."""

    samples: np.ndarray
    meta: InstanceMeta = field(default_factory=InstanceMeta)

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.complex128, copy=True).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise NonFiniteSample("instance contains NaN or Inf samples")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_pairs(cls, pairs: Iterable[IqSample | tuple[float, float]], meta=None):
        arr = np.array([complex(i, q) for i, q in pairs], dtype=np.complex128)
        return cls(arr, meta or InstanceMeta())


@dataclass(frozen=True, eq=False)
class PolarSeries:
    amplitude: np.ndarray
    phase: np.ndarray

    def __len__(self) -> int:
        return self.amplitude.shape[0]


def _as_samples(instance) -> np.ndarray:
    if isinstance(instance, IqInstance):
        return instance.samples
    x = np.asarray(instance, dtype=np.complex128).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise NonFiniteSample("instance contains NaN or Inf samples")
    return x


def to_polar(instance) -> PolarSeries:
    """Map each sample to (amplitude, phase) with phase in (-pi, pi].

    The zero sample maps to (0, 0).
    """
    x = _as_samples(instance)
    if x.size == 0:
        raise EmptyInstance("cannot transform an empty instance")
    amp = np.abs(x)
    phase = np.angle(x)
    # np.angle returns -pi on the negative real axis when imag is -0.0
    phase[phase <= -np.pi] = np.pi
    amp.setflags(write=False)
    phase.setflags(write=False)
    return PolarSeries(amp, phase)


# ---------------------------------------------------------------------------
# trace files


def write_iq_file(path, samples, append: bool = False) -> int:
    """Append or write samples as interleaved float32; returns the byte offset
    at which they start."""
    x = np.asarray(samples, dtype=np.complex128).reshape(-1)
    buf = np.empty(2 * x.size, dtype=_TRACE_DTYPE)
    buf[0::2] = x.real
    buf[1::2] = x.imag
    path = Path(path)
    with open(path, "ab" if append else "wb") as fh:
        offset = fh.tell()
        fh.write(buf.tobytes())
    return offset


def read_iq_samples(path, offset: int = 0, count: int | None = None) -> np.ndarray:
    path = Path(path)
    size = path.stat().st_size
    if size % (2 * _TRACE_DTYPE.itemsize):
        raise FormatError(f"{path}: size {size} is not a whole number of float32 I/Q pairs")
    if offset % _TRACE_DTYPE.itemsize or offset > size:
        raise FormatError(f"{path}: bad offset {offset}")
    n_avail = (size - offset) // (2 * _TRACE_DTYPE.itemsize)
    if count is None:
        count = n_avail
    elif count > n_avail:
        raise TruncatedFile(f"{path}: wanted {count} samples at offset {offset}, have {n_avail}")
    raw = np.fromfile(path, dtype=_TRACE_DTYPE, count=2 * count, offset=offset)
    x = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteSample(f"{path}: trace contains NaN or Inf")
    return x


_SIDECAR_KEYS = (
    "modulation",
    "snr_db",
    "overlap_pct",
    "missing_symbols",
    "rotation_rad",
    "instance_length",
)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_sidecar(path, meta: InstanceMeta, instance_length: int) -> Path:
    out = sidecar_path(path)
    lines = [
        f"modulation = {meta.modulation.value}",
        f"snr_db = {meta.snr_db!r}",
        f"overlap_pct = {meta.overlap_pct!r}",
        f"missing_symbols = {meta.missing_symbols}",
        f"rotation_rad = {meta.rotation_rad!r}",
        f"instance_length = {instance_length}",
    ]
    out.write_text("\n".join(lines) + "\n")
    return out


def read_sidecar(path) -> tuple[InstanceMeta, int | None]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SIDECAR_KEYS:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    try:
        meta = InstanceMeta(
            modulation=Modulation.parse(values.get("modulation", "unknown")),
            snr_db=float(values.get("snr_db", "nan")),
            overlap_pct=float(values.get("overlap_pct", "100")),
            missing_symbols=int(values.get("missing_symbols", "0")),
            rotation_rad=float(values.get("rotation_rad", "0")),
            source=Source.FILE,
        )
        length = int(values["instance_length"]) if "instance_length" in values else None
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return meta, length


def read_iq_file(path, instance_length: int | None = None, meta: InstanceMeta | None = None):
    """Read a trace and cut it into consecutive instances.

    ``instance_length`` and ``meta`` default to the sidecar values when a
    sidecar exists.  A trailing partial instance is dropped.
    """
    path = Path(path)
    side = sidecar_path(path)
    side_meta, side_len = read_sidecar(side) if side.exists() else (None, None)
    if instance_length is None:
        instance_length = side_len
    if instance_length is None or instance_length < 1:
        raise FormatError(f"{path}: no usable instance_length given or found in sidecar")
    if meta is None:
        meta = side_meta or InstanceMeta()
    x = read_iq_samples(path)
    n_inst = x.size // instance_length
    if n_inst == 0:
        raise TruncatedFile(
            f"{path}: {x.size} samples is shorter than one instance of {instance_length}"
        )
    return [
        IqInstance(x[k * instance_length:(k + 1) * instance_length], meta)
        for k in range(n_inst)
    ]


# ---------------------------------------------------------------------------
# dataset manifests

MANIFEST_FIELDS = (
    "id",
    "split",
    "path",
    "offset",
    "length",
    "modulation",
    "snr_db",
    "overlap_pct",
    "missing_symbols",
    "rotation_rad",
    "source",
    "seed",
)


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    split: str
    path: str
    offset: int
    length: int
    meta: InstanceMeta
    seed: int = 0

    def as_row(self) -> dict:
        m = self.meta
        return {
            "id": self.id,
            "split": self.split,
            "path": self.path,
            "offset": self.offset,
            "length": self.length,
            "modulation": m.modulation.value,
            "snr_db": repr(float(m.snr_db)),
            "overlap_pct": repr(float(m.overlap_pct)),
            "missing_symbols": m.missing_symbols,
            "rotation_rad": repr(float(m.rotation_rad)),
            "source": m.source.value,
            "seed": self.seed,
        }


def write_manifest(path, records: Sequence[ManifestRecord]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, MANIFEST_FIELDS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.as_row())
    return path


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise FormatError(f"{path}: unexpected manifest header {reader.fieldnames}")
        out = []
        for row in reader:
            try:
                meta = InstanceMeta(
                    modulation=Modulation.parse(row["modulation"]),
                    snr_db=float(row["snr_db"]),
                    overlap_pct=float(row["overlap_pct"]),
                    missing_symbols=int(row["missing_symbols"]),
                    rotation_rad=float(row["rotation_rad"]),
                    source=Source(row["source"]),
                )
                out.append(
                    ManifestRecord(
                        id=row["id"],
                        split=row["split"],
                        path=row["path"],
                        offset=int(row["offset"]),
                        length=int(row["length"]),
                        meta=meta,
                        seed=int(row["seed"]),
                    )
                )
            except (ValueError, ConfigError) as exc:
                raise FormatError(f"{path}: bad record {row.get('id')!r}: {exc}") from exc
    return out


def iter_manifest_instances(path, split: str | None = None) -> Iterator[tuple[ManifestRecord, IqInstance]]:
    path = Path(path)
    for rec in read_manifest(path):
        if split is not None and rec.split != split:
            continue
        x = read_iq_samples(path.parent / rec.path, rec.offset, rec.length)
        yield rec, IqInstance(x, rec.meta)

