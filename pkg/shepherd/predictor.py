# shepherd/predictor.py
"""
Classifiers seen by the attribution engines.

A Predictor maps time signals to class probabilities. The IntegratedModel wraps a
predictor with the inverse patch and inverse domain transforms so engines can feed
it patched representations directly; it counts every predictor invocation.
"""
from __future__ import annotations

import json
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.fft import rfftfreq
from scipy.special import softmax

from . import settings
from .async_utils import chunked, map_ordered
from .errors import ConfigError, DataError, InconsistencyError, LoadError, ParameterError
from .patching import PatchRep, PatchSpec, label_map, unpatchify
from .simgen import Dataset, Signal
from .transforms import DomainRep, DomainTag, envelope_spectrum, freq_spectrum, inverse_batch

EPS = 1e-12
DEFAULT_GAMMA = 5.0
MLP_FORMAT = "shepherd-mlp"


class Predictor(ABC):
    n_classes: int
    input_len: Optional[int]
    fs: Optional[float]

    @abstractmethod
    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        """(B, n) signals -> (B, K) probabilities. Must be reentrant and deterministic."""

    def predict(self, sig: "Signal | np.ndarray") -> np.ndarray:
        x = sig.samples if isinstance(sig, Signal) else np.asarray(sig, dtype=float)
        self._check_len(x.shape[-1])
        return self.predict_batch(x[np.newaxis])[0]

    def _check_len(self, n: int) -> None:
        if self.input_len is not None and n != self.input_len:
            raise ParameterError(f"predictor expects length {self.input_len}, got {n}")


# ---------------------------------------------------------------------------
# Reference predictor: nearest standardized band-energy centroid, softmax scored
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Band:
    domain: DomainTag
    center: float
    half_width: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain", DomainTag.parse(self.domain))
        if self.domain not in (DomainTag.FREQ, DomainTag.ENV):
            raise ConfigError(f"bands live in freq or env, not {self.domain.value}")
        if self.half_width < 0:
            raise ConfigError(f"band half-width must be >= 0, got {self.half_width}")

    @property
    def name(self) -> str:
        return f"{self.domain.value}@{self.center:g}"


def default_bands() -> List[Band]:
    return [
        Band(DomainTag.FREQ, 1500.0, 150.0),
        Band(DomainTag.FREQ, 2500.0, 150.0),
        Band(DomainTag.FREQ, 3500.0, 150.0),
        Band(DomainTag.ENV, 50.0, 10.0),
        Band(DomainTag.ENV, 100.0, 10.0),
        Band(DomainTag.ENV, 125.0, 10.0),
    ]


def _band_bins(bands: Sequence[Band], n: int, fs: float) -> List[np.ndarray]:
    freqs = rfftfreq(n, 1.0 / fs)
    out = []
    for b in bands:
        if b.center + b.half_width > fs / 2:
            raise ParameterError(f"band {b.name}±{b.half_width:g} Hz exceeds Nyquist {fs / 2:g} Hz")
        idx = np.flatnonzero((freqs >= b.center - b.half_width) & (freqs <= b.center + b.half_width))
        if idx.size == 0:
            raise ConfigError(f"band {b.name}±{b.half_width:g} Hz contains no frequency bins")
        out.append(idx)
    return out


def band_features_batch(x: np.ndarray, fs: float, bands: Sequence[Band]) -> np.ndarray:
    """(B, n) -> (B, len(bands)) of log(eps + band energy) in the band's domain."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    bins = _band_bins(bands, x.shape[-1], fs)
    need_env = any(b.domain is DomainTag.ENV for b in bands)
    z_freq = np.abs(freq_spectrum(x)) ** 2
    z_env = np.abs(envelope_spectrum(x)[2]) ** 2 if need_env else None
    cols = []
    for b, idx in zip(bands, bins):
        z = z_freq if b.domain is DomainTag.FREQ else z_env
        cols.append(np.log(EPS + z[:, idx].sum(axis=-1)))
    return np.stack(cols, axis=-1)


def band_energy_features(sig: Signal, bands: Sequence[Band]) -> np.ndarray:
    return band_features_batch(sig.samples[np.newaxis], sig.fs, bands)[0]


@dataclass(frozen=True)
class ReferencePredictor(Predictor):
    bands: Tuple[Band, ...]
    centroids: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray
    fs: float
    input_len: Optional[int] = None
    gamma: float = DEFAULT_GAMMA
    class_names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        c = np.asarray(self.centroids, dtype=float)
        if c.ndim != 2 or c.shape[1] != len(self.bands):
            raise ConfigError(f"centroids {c.shape} do not match {len(self.bands)} bands")
        if self.class_names and len(self.class_names) != c.shape[0]:
            raise ConfigError("one class name per centroid is required")
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "feature_mean", np.asarray(self.feature_mean, dtype=float))
        object.__setattr__(self, "feature_std", np.asarray(self.feature_std, dtype=float))
        object.__setattr__(self, "bands", tuple(self.bands))

    @property
    def n_classes(self) -> int:
        return int(self.centroids.shape[0])

    def standardized_features(self, x: np.ndarray) -> np.ndarray:
        return (band_features_batch(x, self.fs, self.bands) - self.feature_mean) / self.feature_std

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        self._check_len(x.shape[-1])
        f = self.standardized_features(x)
        d2 = ((f[:, np.newaxis, :] - self.centroids[np.newaxis]) ** 2).sum(axis=-1)
        return softmax(-self.gamma * d2, axis=-1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "reference",
            "bands": [{"domain": b.domain.value, "center": b.center, "half_width": b.half_width} for b in self.bands],
            "centroids": self.centroids.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "gamma": self.gamma,
            "fs": self.fs,
            "input_len": self.input_len,
            "class_names": list(self.class_names),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ReferencePredictor":
        try:
            return cls(
                bands=tuple(Band(b["domain"], float(b["center"]), float(b["half_width"])) for b in d["bands"]),
                centroids=np.asarray(d["centroids"], dtype=float),
                feature_mean=np.asarray(d["feature_mean"], dtype=float),
                feature_std=np.asarray(d["feature_std"], dtype=float),
                fs=float(d["fs"]),
                input_len=d.get("input_len"),
                gamma=float(d.get("gamma", DEFAULT_GAMMA)),
                class_names=tuple(d.get("class_names") or ()),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise LoadError(f"malformed reference predictor: {e}") from None


def fit_reference(
    train: Dataset,
    bands: Optional[Sequence[Band]] = None,
    *,
    gamma: float = DEFAULT_GAMMA,
) -> ReferencePredictor:
    """Fits on the dataset's train split: global feature scaling, then per-class mean centroids."""
    bands = tuple(bands or default_bands())
    idx = train.train_indices()
    if idx.size == 0:
        raise DataError("dataset has an empty train split")
    labels = train.labels[idx]
    missing = [train.class_names[c] for c in range(train.n_classes) if not np.any(labels == c)]
    if missing:
        raise DataError(f"no training samples for class(es) {missing}")

    x = train.matrix(train.train)
    feats = band_features_batch(x, train.fs, bands)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (feats - mean) / std
    centroids = np.stack([z[labels == c].mean(axis=0) for c in range(train.n_classes)])
    return ReferencePredictor(
        bands=bands,
        centroids=centroids,
        feature_mean=mean,
        feature_std=std,
        fs=train.fs,
        input_len=int(x.shape[1]),
        gamma=gamma,
        class_names=train.class_names,
    )


# ---------------------------------------------------------------------------
# Feed-forward predictor loaded from a weight file
# ---------------------------------------------------------------------------

_ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "identity"


@dataclass(frozen=True)
class MlpPredictor(Predictor):
    layers: Tuple[Layer, ...]
    fs: Optional[float] = None
    class_names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _validate_layers(self.layers)
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def input_len(self) -> int:
        return int(self.layers[0].weight.shape[0])

    @property
    def n_classes(self) -> int:
        return int(self.layers[-1].weight.shape[1])

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        self._check_len(h.shape[-1])
        for layer in self.layers:
            h = h @ layer.weight + layer.bias
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
        return softmax(h, axis=-1)


def _validate_layers(layers: Sequence[Layer]) -> None:
    if not layers:
        raise LoadError("network has no layers")
    prev_out: Optional[int] = None
    for i, layer in enumerate(layers):
        w, b = np.asarray(layer.weight), np.asarray(layer.bias)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise LoadError(f"weight {w.shape} / bias {b.shape} are not (in, out) / (out,)", layer=i)
        if prev_out is not None and w.shape[0] != prev_out:
            raise LoadError(f"input dim {w.shape[0]} does not chain to previous output {prev_out}", layer=i)
        if layer.activation not in _ACTIVATIONS:
            raise LoadError(f"unknown activation {layer.activation!r}", layer=i)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise LoadError("non-finite weights", layer=i)
        prev_out = w.shape[1]


def save_mlp(path: "str | Path", mlp: MlpPredictor) -> Path:
    """First line: JSON header. Then, per layer, weight (row-major) and bias as little-endian float64."""
    path = Path(path)
    header = {
        "format": MLP_FORMAT,
        "version": 1,
        "fs": mlp.fs,
        "class_names": list(mlp.class_names),
        "layers": [
            {"in": int(l.weight.shape[0]), "out": int(l.weight.shape[1]), "activation": l.activation}
            for l in mlp.layers
        ],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for l in mlp.layers:
            f.write(np.ascontiguousarray(l.weight, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(l.bias, dtype="<f8").tobytes())
    return path


def load_mlp(path: "str | Path") -> MlpPredictor:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise LoadError(f"cannot read {path}: {e}") from None
    head, sep, body = raw.partition(b"\n")
    if not sep:
        raise LoadError(f"{path}: missing JSON header line")
    try:
        header = json.loads(head.decode("utf-8"))
        specs = header["layers"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise LoadError(f"{path}: malformed header: {e}") from None
    if header.get("format") != MLP_FORMAT:
        raise LoadError(f"{path}: not a {MLP_FORMAT} file")

    values = np.frombuffer(body, dtype="<f8") if len(body) % 8 == 0 else None
    if values is None:
        raise LoadError(f"{path}: payload is not a whole number of float64 values")

    layers: List[Layer] = []
    pos = 0
    prev_out: Optional[int] = None
    for i, s in enumerate(specs):
        try:
            n_in, n_out, act = int(s["in"]), int(s["out"]), str(s.get("activation", "identity"))
        except (KeyError, TypeError, ValueError) as e:
            raise LoadError(f"malformed layer header: {e}", layer=i) from None
        if n_in <= 0 or n_out <= 0:
            raise LoadError(f"non-positive dims {n_in}x{n_out}", layer=i)
        if prev_out is not None and n_in != prev_out:
            raise LoadError(f"input dim {n_in} does not chain to previous output {prev_out}", layer=i)
        need = n_in * n_out + n_out
        if pos + need > values.size:
            raise LoadError(f"payload too short ({values.size - pos} values left, need {need})", layer=i)
        w = values[pos : pos + n_in * n_out].reshape(n_in, n_out).astype(float)
        b = values[pos + n_in * n_out : pos + need].astype(float)
        pos += need
        prev_out = n_out
        layers.append(Layer(w, b, act))
    if pos != values.size:
        raise LoadError(f"{path}: {values.size - pos} trailing values after the last layer")
    return MlpPredictor(tuple(layers), fs=header.get("fs"), class_names=tuple(header.get("class_names") or ()))


# ---------------------------------------------------------------------------
# Integrated model: predictor o inverse domain transform o inverse patch transform
# ---------------------------------------------------------------------------

@dataclass
class IntegratedModel:
    predictor: Predictor
    rep: DomainRep
    spec: PatchSpec
    call_count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.spec = PatchSpec.parse(self.spec)
        self.labels = label_map(self.rep.z.shape, self.spec)
        self.d = int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def domain(self) -> DomainTag:
        return self.rep.domain

    @property
    def z_shape(self) -> Tuple[int, ...]:
        return tuple(self.rep.z.shape)

    def _count(self, k: int) -> None:
        with self._lock:
            self.call_count += k

    def reset_count(self) -> None:
        with self._lock:
            self.call_count = 0

    def check_geometry(self, p: PatchRep) -> None:
        if p.source_shape != self.z_shape or p.spec != self.spec:
            raise InconsistencyError(
                f"patch geometry {p.source_shape}/{p.spec.shape} does not match model {self.z_shape}/{self.spec.shape}"
            )

    def evaluate(self, patches: PatchRep) -> np.ndarray:
        self.check_geometry(patches)
        return self.evaluate_z(unpatchify(patches)[np.newaxis])[0]

    def evaluate_z(self, zs: np.ndarray) -> np.ndarray:
        """One predictor invocation per z in the (B, *z_shape) stack."""
        zs = np.asarray(zs, dtype=float)
        if zs.shape[1:] != self.z_shape:
            raise InconsistencyError(f"z stack {zs.shape[1:]} does not match model geometry {self.z_shape}")
        x = inverse_batch(self.rep, zs)
        out = self.predictor.predict_batch(x)
        self._count(zs.shape[0])
        return out

    def evaluate_many(self, zs: np.ndarray, *, workers: int = 1) -> np.ndarray:
        """Chunked evaluate_z. Chunk boundaries depend only on SHEPHERD_BATCH, never on workers."""
        zs = np.asarray(zs, dtype=float)
        if zs.shape[0] == 0:
            return np.zeros((0, self.predictor.n_classes))
        parts = map_ordered(self.evaluate_z, chunked(zs, settings.batch_size()), workers=workers)
        return np.concatenate(parts, axis=0)


def integrated_evaluate(m: IntegratedModel, patches: PatchRep) -> np.ndarray:
    return m.evaluate(patches)


def predict(p: Predictor, sig: "Signal | np.ndarray") -> np.ndarray:
    return p.predict(sig)


def accuracy(p: Predictor, ds: Dataset, indices: Optional[np.ndarray] = None) -> float:
    """Top-1 accuracy on the given samples (the test split by default)."""
    idx = ds.test_indices() if indices is None else np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise DataError("no samples to score")
    mask = np.zeros(len(ds.signals), dtype=bool)
    mask[idx] = True
    probs = p.predict_batch(ds.matrix(mask))
    return float(np.mean(np.argmax(probs, axis=1) == ds.labels[np.flatnonzero(mask)]))
