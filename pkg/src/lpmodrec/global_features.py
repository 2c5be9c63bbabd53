"""Global (order-free) features: normalized high-order cumulants and order
statistics of amplitude and phase."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignal, EmptyInstance, TooFewSamples
from .iq import IqInstance, PolarSeries, _as_samples, to_polar

MOMENT_ORDERS = ((2, 0), (2, 1), (4, 0), (4, 1), (4, 2), (6, 0), (6, 1), (6, 2), (6, 3))
CUMULANT_NAMES = ("C40", "C41", "C42", "C60", "C61", "C62", "C63")
DEFAULT_QUANTILES = 32
C21_TOLERANCE = 1e-12


@dataclass(frozen=True)
class MomentSet:
    values: dict

    def __getitem__(self, kv: tuple[int, int]) -> complex:
        k, v = kv
        if (k, v) in self.values:
            return self.values[(k, v)]
        # E[x^(k-v) conj(x)^v] = conj(E[x^v conj(x)^(k-v)])
        return np.conj(self.values[(k, k - v)])


def compute_moments(instance) -> MomentSet:
    """Biased (1/n) sample moments M_kv = mean(x^(k-v) * conj(x)^v)."""
    x = _as_samples(instance)
    if x.size == 0:
        raise EmptyInstance("cannot compute moments of an empty instance")
    xc = np.conj(x)
    power = np.abs(x) ** 2
    values = {}
    for k, v in MOMENT_ORDERS:
        # x^(k-v) conj(x)^v = |x|^(2v) x^(k-2v) when k-2v >= 0
        if k - 2 * v >= 0:
            term = power**v * x ** (k - 2 * v)
        else:
            term = power ** (k - v) * xc ** (2 * v - k)
        values[(k, v)] = complex(np.mean(term))
    values[(2, 1)] = complex(float(np.mean(power)), 0.0)
    return MomentSet(values)


def raw_cumulants(m: MomentSet) -> dict:
    """Complex cumulants from moments for a zero-mean, symmetric process."""
    M20, M21, M22 = m[2, 0], m[2, 1].real, m[2, 2]
    M40, M41, M42, M43 = m[4, 0], m[4, 1], m[4, 2], m[4, 3]
    M60, M61, M62, M63 = m[6, 0], m[6, 1], m[6, 2], m[6, 3]
    return {
        "C21": M21,
        "C40": M40 - 3 * M20**2,
        "C41": M41 - 3 * M20 * M21,
        "C42": M42 - abs(M20) ** 2 - 2 * M21**2,
        "C60": M60 - 15 * M20 * M40 + 30 * M20**3,
        "C61": M61 - 5 * M21 * M40 - 10 * M20 * M41 + 30 * M20**2 * M21,
        "C62": (M62 - 6 * M20 * M42 - 8 * M21 * M41 - M22 * M40
                + 6 * M20**2 * M22 + 24 * M21**2 * M20),
        "C63": (M63 - 9 * M21 * M42 + 12 * M21**3 - 3 * M20 * M43
                - 3 * M22 * M41 + 18 * M20 * M21 * M22),
    }


def normalized_cumulants(m: MomentSet) -> dict:
    """Cumulants divided by C21^(k/2), still complex."""
    c = raw_cumulants(m)
    c21 = c["C21"]
    if not c21 > C21_TOLERANCE:
        raise DegenerateSignal(f"C21 = {c21:g}; signal has no power")
    return {name: c[name] / c21 ** (int(name[1]) / 2) for name in CUMULANT_NAMES}


def compute_cumulants(moments: MomentSet) -> np.ndarray:
    """The 7 magnitudes |C40|, |C41|, |C42|, |C60|, |C61|, |C62|, |C63| after
    C21 normalization."""
    c = normalized_cumulants(moments)
    return np.array([abs(c[name]) for name in CUMULANT_NAMES])


def hoc_features(instance) -> np.ndarray:
    return compute_cumulants(compute_moments(instance))


def compute_order_stats(polar: PolarSeries, q: int = DEFAULT_QUANTILES) -> np.ndarray:
    """q evenly spaced quantiles of amplitude, then q of phase (length 2q)."""
    n = len(polar)
    if q < 2 or n < q:
        raise TooFewSamples(f"need n >= q >= 2, got n={n}, q={q}")
    levels = np.linspace(0.0, 1.0, q)
    return np.concatenate([np.quantile(polar.amplitude, levels), np.quantile(polar.phase, levels)])


def os_features(instance: IqInstance, q: int = DEFAULT_QUANTILES) -> np.ndarray:
    return compute_order_stats(to_polar(instance), q)
