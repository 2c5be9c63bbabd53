"""Baseband transmitter/receiver simulation with scan imperfections.

Chain: i.i.d. symbols (optionally biased / with symbols removed) -> rotation
-> root-raised-cosine pulse shaping -> receiver low-pass (partial overlap)
-> complex AWGN.  Every instance owns a seeded generator so datasets are
reproducible regardless of generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import signal

from .errors import ConfigError, UnsupportedModulation
from .iq import (
    InstanceMeta,
    IqInstance,
    ManifestRecord,
    Modulation,
    Source,
    write_iq_file,
    write_manifest,
)

RRC_ROLLOFF = 0.35
RRC_SPAN_SYMBOLS = 10
LOWPASS_TAPS = 127
# one-sided trim that keeps filter start-up transients out of the instance
_PAD = LOWPASS_TAPS // 2 + 1

NOISELESS = math.inf


@dataclass(frozen=True, eq=False)
class Constellation:
    modulation: Modulation
    points: np.ndarray
    rotation_rad: float = 0.0

    def __len__(self) -> int:
        return self.points.shape[0]

    def nearest(self, x) -> np.ndarray:
        """Index of the nearest constellation point for each sample."""
        x = np.asarray(x).reshape(-1, 1)
        return np.argmin(np.abs(x - self.points[None, :]), axis=1)


def _base_points(mod: Modulation) -> np.ndarray:
    if mod is Modulation.QPSK:
        return np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))
    if mod is Modulation.PSK8:
        return np.exp(1j * (np.pi / 4 * np.arange(8)))
    if mod is Modulation.QAM8:
        # rectangular 4x2 grid: two rings at |p|^2 = 2 and 10
        i, q = np.meshgrid([-3.0, -1.0, 1.0, 3.0], [-1.0, 1.0])
        pts = (i + 1j * q).ravel()
    elif mod is Modulation.QAM16:
        i, q = np.meshgrid(*(2 * [np.arange(-3.0, 4.0, 2.0)]))
        pts = (i + 1j * q).ravel()
    elif mod is Modulation.QAM64:
        i, q = np.meshgrid(*(2 * [np.arange(-7.0, 8.0, 2.0)]))
        pts = (i + 1j * q).ravel()
    else:
        raise UnsupportedModulation(f"no constellation for {mod!r}")
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def make_constellation(modulation, rotation_rad: float = 0.0) -> Constellation:
    try:
        mod = Modulation.parse(modulation) if not isinstance(modulation, Modulation) else modulation
    except ConfigError as exc:
        raise UnsupportedModulation(str(exc)) from exc
    pts = _base_points(mod) * np.exp(1j * rotation_rad)
    pts.setflags(write=False)
    return Constellation(mod, pts, float(rotation_rad))


def rrc_taps(samples_per_symbol: int, rolloff: float = RRC_ROLLOFF,
             span: int = RRC_SPAN_SYMBOLS) -> np.ndarray:
    """Root-raised-cosine impulse response with unit energy."""
    sps = samples_per_symbol
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    h = np.empty_like(t)
    a = rolloff
    for k, tk in enumerate(t):
        if abs(tk) < 1e-12:
            h[k] = 1.0 - a + 4 * a / np.pi
        elif a > 0 and abs(abs(tk) - 1 / (4 * a)) < 1e-12:
            h[k] = a / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * a))
                                     + (1 - 2 / np.pi) * np.cos(np.pi / (4 * a)))
        else:
            h[k] = (np.sin(np.pi * tk * (1 - a)) + 4 * a * tk * np.cos(np.pi * tk * (1 + a))) / (
                np.pi * tk * (1 - (4 * a * tk) ** 2))
    return h / np.linalg.norm(h)


def lowpass_taps(overlap_pct: float, samples_per_symbol: int,
                 rolloff: float = RRC_ROLLOFF, numtaps: int = LOWPASS_TAPS) -> np.ndarray:
    """Windowed-sinc low-pass passing ``overlap_pct`` of the signal's one-sided band."""
    if samples_per_symbol == 1:
        edge = 0.5
    else:
        edge = (1 + rolloff) / (2 * samples_per_symbol)
    cutoff = overlap_pct / 100.0 * edge
    return signal.firwin(numtaps, cutoff, window="hamming", fs=1.0)


@dataclass(frozen=True)
class SimConfig:
    modulation: Modulation
    snr_db: float = NOISELESS
    overlap_pct: float = 100.0
    missing_symbols: int = 0
    symbol_weights: tuple[float, ...] | None = None
    rotation_rad: float = 0.0
    n_samples: int = 512
    samples_per_symbol: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if not isinstance(self.modulation, Modulation):
            object.__setattr__(self, "modulation", Modulation.parse(self.modulation))
        if self.modulation is Modulation.UNKNOWN:
            raise UnsupportedModulation("cannot simulate an unknown modulation")
        order = self.modulation.order
        if not 0.0 < self.overlap_pct <= 100.0:
            raise ConfigError(f"overlap_pct must lie in (0, 100], got {self.overlap_pct}")
        if not 0 <= self.missing_symbols < order:
            raise ConfigError(f"missing_symbols must lie in [0, {order}) for {self.modulation.value}")
        if self.n_samples < 1 or self.samples_per_symbol < 1:
            raise ConfigError("n_samples and samples_per_symbol must be positive")
        if math.isnan(self.snr_db):
            raise ConfigError("snr_db is NaN")
        if self.symbol_weights is not None:
            w = np.asarray(self.symbol_weights, dtype=float)
            if w.shape != (order,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ConfigError("symbol_weights must be a probability vector over the constellation")
            if np.count_nonzero(w) <= self.missing_symbols:
                raise ConfigError("not enough weighted symbols left to remove")
            object.__setattr__(self, "symbol_weights", tuple(float(v) for v in w))


def symbol_probabilities(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw probabilities after removing ``missing_symbols`` random symbols.

    Always consumes one permutation from ``rng`` so the downstream stream does
    not depend on the bias setting.
    """
    order = config.modulation.order
    if config.symbol_weights is None:
        w = np.full(order, 1.0 / order)
    else:
        w = np.array(config.symbol_weights, dtype=float)
    perm = rng.permutation(order)
    if config.missing_symbols:
        candidates = perm[w[perm] > 0]
        w[candidates[:config.missing_symbols]] = 0.0
    return w / w.sum()


def _draw_symbols(p: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n), side="right")


def generate_instance(config: SimConfig) -> IqInstance:
    rng = np.random.default_rng(config.rng_seed)
    const = make_constellation(config.modulation, config.rotation_rad)
    p = symbol_probabilities(config, rng)
    sps = config.samples_per_symbol
    filtering = config.overlap_pct < 100.0
    total = config.n_samples + (2 * _PAD if filtering else 0)

    if sps == 1:
        x = const.points[_draw_symbols(p, total, rng)]
    else:
        h = rrc_taps(sps)
        d = h.size - 1
        n_sym = -(-(total + d) // sps)
        up = np.zeros(n_sym * sps, dtype=np.complex128)
        up[::sps] = const.points[_draw_symbols(p, n_sym, rng)]
        shaped = np.convolve(up, h)
        x = shaped[d:d + total] * np.sqrt(sps)

    if filtering:
        g = lowpass_taps(config.overlap_pct, sps)
        delay = (g.size - 1) // 2
        x = np.convolve(x, g)[delay:delay + total][_PAD:_PAD + config.n_samples]

    if math.isfinite(config.snr_db):
        sigma = math.sqrt(10.0 ** (-config.snr_db / 10.0) / 2.0)
        noise = rng.standard_normal((2, config.n_samples))
        x = x + sigma * (noise[0] + 1j * noise[1])

    meta = InstanceMeta(
        modulation=config.modulation,
        snr_db=float(config.snr_db),
        overlap_pct=float(config.overlap_pct),
        missing_symbols=config.missing_symbols,
        rotation_rad=float(config.rotation_rad) % (2 * np.pi),
        source=Source.SIMULATED,
    )
    return IqInstance(x, meta)


def derive_seed(base_seed: int, *keys: int) -> int:
    """Independent 64-bit seed for one instance of one grid cell."""
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


SPLIT_KEYS = {"train": 0, "test": 1, "dict": 2}


def _split_key(split: str) -> int:
    if split in SPLIT_KEYS:
        return SPLIT_KEYS[split]
    return int.from_bytes(split.encode()[:7], "little") + 16


def generate_batch(template: SimConfig, count: int, seed: int, split: str = "train",
                   cell: int = 0) -> list[IqInstance]:
    """``count`` instances of one grid cell, each with its own derived seed."""
    key = _split_key(split)
    return [
        generate_instance(replace(template, rng_seed=derive_seed(seed, key, cell, i)))
        for i in range(count)
    ]


def generate_dataset(cells: Sequence[SimConfig], counts: int | Mapping[str, int], out_dir,
                     seed: int = 0) -> Path:
    """Write every (cell, split) batch to a trace file plus one manifest.

    Splits use different seed streams so train and test never share an
    instance.  Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(counts, int):
        counts = {"train": counts}
    records: list[ManifestRecord] = []
    for split, count in counts.items():
        if count < 0:
            raise ConfigError("instance counts must be non-negative")
        key = _split_key(split)
        for c, template in enumerate(cells):
            if count == 0:
                continue
            rel = f"cell{c:04d}_{split}.iq"
            path = out_dir / rel
            path.unlink(missing_ok=True)
            for i in range(count):
                s = derive_seed(seed, key, c, i)
                inst = generate_instance(replace(template, rng_seed=s))
                offset = write_iq_file(path, inst.samples, append=True)
                records.append(ManifestRecord(
                    id=f"c{c:04d}-{split}-{i:06d}",
                    split=split,
                    path=rel,
                    offset=offset,
                    length=len(inst),
                    meta=inst.meta,
                    seed=s,
                ))
    return write_manifest(out_dir / "manifest.tsv", records)
