"""Local pattern features: shingles of amplitude/phase series, a diagonal GMM
dictionary learned by EM, and Fisher Vector encoding against it.

Fisher Vector layout for one series with K components of dimension l::

    [ dmu_1 | ... | dmu_K | dsigma_1 | ... | dsigma_K ]     (2 l K values)

where, for a shingle x with posterior g_k,

    dmu_k    = g_k / sqrt(w_k) * (x - mu_k) / sigma_k**2
    dsigma_k = g_k / sqrt(w_k) * ((x - mu_k)**2 / sigma_k**3 - 1 / sigma_k)

An instance encodes as the mean over its shingles, amplitude block first,
phase block second (4 l K values).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _backend
from .errors import DegenerateData, DimensionMismatch, FormatError, SeriesTooShort
from .features import FeatureTag, FeatureVector
from .iq import IqInstance, PolarSeries, to_polar

DEFAULT_SHINGLE = 3
DEFAULT_COMPONENTS = 50
VARIANCE_FLOOR = 1e-6
EM_MAX_ITER = 200
EM_TOL = 1e-6
INIT_SUBSAMPLE = 100_000
_WEIGHT_FLOOR = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)


class SeriesTag(str, enum.Enum):
    AMPLITUDE = "amplitude"
    PHASE = "phase"


@dataclass(frozen=True, eq=False)
class GmmDictionary:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    series_tag: SeriesTag = SeriesTag.AMPLITUDE
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.ascontiguousarray(self.means, dtype=np.float64)
        var = np.ascontiguousarray(self.variances, dtype=np.float64)
        if mu.ndim != 2 or var.shape != mu.shape or w.shape[0] != mu.shape[0]:
            raise DimensionMismatch(
                f"inconsistent GMM shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("GMM weights must be positive and sum to 1")
        if np.any(var <= 0) or not np.all(np.isfinite(mu)):
            raise ValueError("GMM variances must be positive and means finite")
        for a in (w, mu, var):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "series_tag", SeriesTag(self.series_tag))

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def l(self) -> int:
        return self.means.shape[1]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.weights, self.means, self.variances):
            h.update(a.tobytes())
        h.update(self.series_tag.value.encode())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# shingles


def extract_shingles(series, l: int = DEFAULT_SHINGLE) -> np.ndarray:
    """All n - l + 1 overlapping windows of length l, in order, as rows."""
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if l < 1 or x.shape[0] < l:
        raise SeriesTooShort(f"series of length {x.shape[0]} has no shingles of length {l}")
    return np.ascontiguousarray(sliding_window_view(x, l))


def instance_shingles(instances: Iterable[IqInstance | PolarSeries], l: int,
                      series: SeriesTag) -> np.ndarray:
    """Stack the shingles of one series over many instances."""
    rows = []
    for inst in instances:
        polar = inst if isinstance(inst, PolarSeries) else to_polar(inst)
        s = polar.amplitude if SeriesTag(series) is SeriesTag.AMPLITUDE else polar.phase
        rows.append(extract_shingles(s, l))
    return np.concatenate(rows, axis=0)


# ---------------------------------------------------------------------------
# densities and posteriors


def _as_rows(dictionary: GmmDictionary, shingles) -> tuple[np.ndarray, bool]:
    x = np.asarray(shingles, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dictionary.l:
        raise DimensionMismatch(f"shingle length {x.shape[1]} != dictionary l={dictionary.l}")
    return x, single


def log_joint(dictionary: GmmDictionary, shingles) -> np.ndarray:
    """log(w_k p_k(x)) for every shingle row and component, shape (N, K)."""
    x, _ = _as_rows(dictionary, shingles)
    var = dictionary.variances
    diff = x[:, None, :] - dictionary.means[None, :, :]
    maha = np.einsum("nkd,kd->nk", diff * diff, 1.0 / var)
    lognorm = np.log(dictionary.weights) - 0.5 * (dictionary.l * _LOG_2PI + np.log(var).sum(axis=1))
    return lognorm[None, :] - 0.5 * maha


def log_likelihood(dictionary: GmmDictionary, shingles) -> np.ndarray | float:
    x, single = _as_rows(dictionary, shingles)
    lj = log_joint(dictionary, x)
    mx = lj.max(axis=1)
    ll = mx + np.log(np.exp(lj - mx[:, None]).sum(axis=1))
    return float(ll[0]) if single else ll


def posterior(dictionary: GmmDictionary, shingles) -> np.ndarray:
    """Soft assignments gamma_k(x), computed in log space."""
    x, single = _as_rows(dictionary, shingles)
    lj = log_joint(dictionary, x)
    lj -= lj.max(axis=1, keepdims=True)
    g = np.exp(lj)
    g /= g.sum(axis=1, keepdims=True)
    return g[0] if single else g


# ---------------------------------------------------------------------------
# Fisher encoding


def encode_shingle(dictionary: GmmDictionary, shingle) -> np.ndarray:
    x = np.asarray(shingle, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != dictionary.l:
        raise DimensionMismatch(f"expected one shingle of length {dictionary.l}, got shape {x.shape}")
    g = posterior(dictionary, x)
    sigma = np.sqrt(dictionary.variances)
    scale = (g / np.sqrt(dictionary.weights))[:, None]
    diff = x[None, :] - dictionary.means
    d_mu = scale * diff / dictionary.variances
    d_sigma = scale * (diff * diff / sigma**3 - 1.0 / sigma)
    return np.concatenate([d_mu.ravel(), d_sigma.ravel()])


def fisher_from_stats(dictionary: GmmDictionary, n: int, S0, S1, S2) -> np.ndarray:
    """Mean Fisher Vector of ``n`` shingles from centered posterior sums."""
    sigma = np.sqrt(dictionary.variances)
    inv_sw = (1.0 / np.sqrt(dictionary.weights))[:, None]
    d_mu = inv_sw * S1 / dictionary.variances
    d_sigma = inv_sw * (S2 / sigma**3 - S0[:, None] / sigma)
    return np.concatenate([d_mu.ravel(), d_sigma.ravel()]) / n


def encode_series(dictionary: GmmDictionary, series, kernels=None) -> np.ndarray:
    """Average shingle encoding of one real series (2 l K values)."""
    X = extract_shingles(series, dictionary.l)
    k = kernels or _backend.kernels
    _, S0, S1, S2 = k.gmm_accumulate(X, dictionary.weights, dictionary.means, dictionary.variances)
    return fisher_from_stats(dictionary, X.shape[0], S0, S1, S2)


def power_l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def encode_instance(dict_amp: GmmDictionary, dict_phase: GmmDictionary, polar,
                    normalize: bool = False, kernels=None) -> FeatureVector:
    """Concatenated amplitude and phase Fisher Vectors (4 l K values).

    ``normalize`` applies signed square root then unit L2 norm to the result.
    """
    if dict_amp.l != dict_phase.l:
        raise DimensionMismatch("amplitude and phase dictionaries use different shingle lengths")
    if not isinstance(polar, PolarSeries):
        polar = to_polar(polar)
    fv = np.concatenate([
        encode_series(dict_amp, polar.amplitude, kernels),
        encode_series(dict_phase, polar.phase, kernels),
    ])
    if normalize:
        fv = power_l2_normalize(fv)
    return FeatureVector(fv, FeatureTag.FV)


def concat_with_hoc(fv: FeatureVector | np.ndarray, hoc) -> FeatureVector:
    a = fv.values if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=np.float64)
    h = hoc.values if isinstance(hoc, FeatureVector) else np.asarray(hoc, dtype=np.float64)
    return FeatureVector(np.concatenate([a.reshape(-1), h.reshape(-1)]), FeatureTag.FV_HOC)


# ---------------------------------------------------------------------------
# dictionary learning


@dataclass
class EmTrace:
    log_likelihood: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self) -> int:
        return max(len(self.log_likelihood) - 1, 0)


def _init_means(sub: np.ndarray, K: int, seed: int) -> np.ndarray:
    from sklearn.cluster import kmeans_plusplus

    centers, _ = kmeans_plusplus(sub, K, random_state=np.random.RandomState(seed % 2**32))
    return np.ascontiguousarray(centers, dtype=np.float64)


def fit_gmm(shingles, K: int = DEFAULT_COMPONENTS, seed: int = 0, *,
            series_tag: SeriesTag | str = SeriesTag.AMPLITUDE,
            max_iter: int = EM_MAX_ITER, tol: float = EM_TOL,
            var_floor: float = VARIANCE_FLOOR, init_subsample: int = INIT_SUBSAMPLE,
            description: str = "", kernels=None) -> tuple[GmmDictionary, EmTrace]:
    """EM for a diagonal GMM, seeded by k-means++ on a subsample.

    Stops once the mean per-shingle log-likelihood improves by less than
    ``tol`` or after ``max_iter`` iterations.
    """
    X = np.ascontiguousarray(shingles, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DegenerateData("need a non-empty (N, l) array of shingles")
    n, dim = X.shape
    k = kernels or _backend.kernels
    rng = np.random.default_rng(seed)
    if n > init_subsample:
        sub = X[np.sort(rng.choice(n, init_subsample, replace=False))]
    else:
        sub = X
    n_distinct = np.unique(sub, axis=0).shape[0]
    if n_distinct < K:
        raise DegenerateData(f"only {n_distinct} distinct shingles for {K} components")

    means = _init_means(sub, K, seed)
    variances = np.tile(np.maximum(sub.var(axis=0), var_floor), (K, 1))
    weights = np.full(K, 1.0 / K)
    trace = EmTrace()

    for it in range(max_iter + 1):
        ll, S0, S1, S2 = k.gmm_accumulate(X, weights, means, variances)
        trace.log_likelihood.append(ll / n)
        if it > 0 and trace.log_likelihood[-1] - trace.log_likelihood[-2] < tol:
            trace.converged = True
            break
        if it == max_iter:
            break
        Nk = np.maximum(S0, _WEIGHT_FLOOR)
        weights = Nk / Nk.sum()
        shift = S1 / Nk[:, None]
        means = np.ascontiguousarray(means + shift)
        variances = np.ascontiguousarray(np.maximum(S2 / Nk[:, None] - shift * shift, var_floor))

    provenance = {
        "seed": int(seed),
        "n_shingles": int(n),
        "n_iter": trace.n_iter,
        "converged": trace.converged,
        "final_log_likelihood": trace.log_likelihood[-1],
        "description": description,
    }
    return GmmDictionary(weights, means, variances, SeriesTag(series_tag), provenance), trace


def train_dictionary(shingles, K: int = DEFAULT_COMPONENTS, seed: int = 0, **kwargs) -> GmmDictionary:
    return fit_gmm(shingles, K, seed, **kwargs)[0]


def train_dictionaries(instances: Sequence[IqInstance], l: int = DEFAULT_SHINGLE,
                       K: int = DEFAULT_COMPONENTS, seed: int = 0, description: str = "",
                       kernels=None) -> tuple[GmmDictionary, GmmDictionary]:
    """Amplitude and phase dictionaries from the same instances."""
    polars = [to_polar(x) for x in instances]
    out = []
    for offset, tag in enumerate((SeriesTag.AMPLITUDE, SeriesTag.PHASE)):
        X = instance_shingles(polars, l, tag)
        out.append(train_dictionary(X, K, seed + offset, series_tag=tag,
                                    description=description, kernels=kernels))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# persistence


def save_dictionary(dictionary: GmmDictionary, path) -> Path:
    path = Path(path)
    meta = {
        "format": "lpmodrec-gmm-dictionary",
        "version": 1,
        "K": dictionary.K,
        "l": dictionary.l,
        "series_tag": dictionary.series_tag.value,
        "provenance": dictionary.provenance,
    }
    with open(path, "wb") as fh:
        np.savez(fh, weights=dictionary.weights, means=dictionary.means,
                 variances=dictionary.variances, meta=np.array(json.dumps(meta, sort_keys=True)))
    return path


def load_dictionary(path) -> GmmDictionary:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "lpmodrec-gmm-dictionary":
                raise FormatError(f"{path}: not a dictionary file")
            d = GmmDictionary(z["weights"], z["means"], z["variances"],
                              SeriesTag(meta["series_tag"]), meta.get("provenance", {}))
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if d.K != meta["K"] or d.l != meta["l"]:
        raise FormatError(f"{path}: header disagrees with stored arrays")
    return d


def save_dictionaries(directory, amp: GmmDictionary, phase: GmmDictionary) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_dictionary(amp, directory / "amplitude.npz")
    save_dictionary(phase, directory / "phase.npz")
    return directory


def load_dictionaries(directory) -> tuple[GmmDictionary, GmmDictionary]:
    directory = Path(directory)
    return load_dictionary(directory / "amplitude.npz"), load_dictionary(directory / "phase.npz")
