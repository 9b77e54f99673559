# shepherd/simgen.py
"""
Synthetic fault dataset: each class is a sum of periodic-impulse components
(damped sinusoid bursts repeating at a modulation frequency) plus white noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateInputError, ParameterError

DEFAULT_FS = 10_000.0
DEFAULT_LENGTH = 2000
DEFAULT_BETA = 0.04


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    fs: float

    def __post_init__(self) -> None:
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1 or x.size == 0:
            raise ParameterError(f"signal must be a non-empty 1-D array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("signal contains non-finite samples")
        if not (self.fs > 0):
            raise ParameterError(f"sample rate must be positive, got {self.fs}")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "fs", float(self.fs))

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class ComponentSpec:
    f_m: float
    f_c: float
    beta: float = DEFAULT_BETA
    amplitude_dist: Tuple[float, float] = (0.8, 1.0)
    randomize: bool = False
    # Draw ranges used only when randomize is set.
    f_c_range: Tuple[float, float] = (1000.0, 4000.0)
    f_m_range: Tuple[float, float] = (20.0, 200.0)

    def validate(self, fs: float) -> None:
        if self.randomize:
            lo, hi = self.f_c_range
            if not (0 < lo <= hi < fs / 2):
                raise ParameterError(f"carrier range {self.f_c_range} must lie in (0, fs/2={fs / 2})")
            if not (0 < self.f_m_range[0] <= self.f_m_range[1]):
                raise ParameterError(f"modulation range {self.f_m_range} must be positive")
        else:
            if not (self.f_m > 0):
                raise ParameterError(f"f_m must be > 0, got {self.f_m}")
            if not (0 < self.f_c < fs / 2):
                raise ParameterError(f"f_c must lie in (0, fs/2={fs / 2}), got {self.f_c}")
        if not (self.beta >= 0):
            raise ParameterError(f"beta must be >= 0, got {self.beta}")
        a_lo, a_hi = self.amplitude_dist
        if not (a_lo <= a_hi):
            raise ParameterError(f"amplitude range {self.amplitude_dist} is inverted")


@dataclass(frozen=True)
class ClassSpec:
    name: str
    components: Tuple[ComponentSpec, ...]
    snr_db: float = 0.0

    def validate(self, fs: float) -> None:
        if not self.components:
            raise ParameterError(f"class {self.name!r} has no components")
        for c in self.components:
            c.validate(fs)


@dataclass(frozen=True)
class Dataset:
    signals: Tuple[Signal, ...]
    labels: np.ndarray
    class_names: Tuple[str, ...]
    train: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=int)
        train = np.asarray(self.train, dtype=bool)
        if labels.shape != (len(self.signals),) or train.shape != labels.shape:
            raise ParameterError("labels/split must have one entry per signal")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ParameterError("label out of range of class_names")
        if len(set(self.class_names)) != len(self.class_names):
            raise ParameterError(f"class names must be unique: {self.class_names}")
        if len({s.fs for s in self.signals}) > 1:
            raise ParameterError("all signals in a dataset must share one sample rate")
        labels = labels.copy()
        train = train.copy()
        labels.setflags(write=False)
        train.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "signals", tuple(self.signals))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def fs(self) -> float:
        return self.signals[0].fs if self.signals else DEFAULT_FS

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def matrix(self, mask: Optional[np.ndarray] = None) -> np.ndarray:
        idx = np.arange(len(self.signals)) if mask is None else np.flatnonzero(mask)
        return np.stack([self.signals[i].samples for i in idx]) if idx.size else np.zeros((0, 0))

    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.train)

    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.train)


def periodic_impulse(spec: ComponentSpec, phi: float, fs: float, n: int) -> Signal:
    """
    Sum over k of u(t - k/f_m) * exp(-beta*(t - k/f_m)*fs) * sin(2*pi*f_c*(t - k/f_m) + phi),
    sampled at t = i/fs for i < n. Only impulses whose onset falls inside the window count.
    """
    if n <= 0:
        raise ParameterError(f"length must be > 0, got {n}")
    if spec.randomize:
        raise ParameterError("periodic_impulse needs concrete f_m/f_c; draw them first")
    spec.validate(fs)

    t = np.arange(n) / fs
    out = np.zeros(n)
    n_onsets = int(math.ceil(n * spec.f_m / fs))
    for k in range(n_onsets):
        onset = k / spec.f_m
        if onset >= n / fs:
            break
        tau = t - onset
        live = tau >= 0
        tl = tau[live]
        out[live] += np.exp(-spec.beta * tl * fs) * np.sin(2 * np.pi * spec.f_c * tl + phi)
    return Signal(out, fs)


def add_white_noise(sig: Signal, snr_db: float, rng: np.random.Generator) -> Signal:
    if math.isinf(snr_db) and snr_db > 0:
        return sig
    if math.isnan(snr_db):
        raise ParameterError("snr_db is NaN")
    x = sig.samples
    p_sig = float(np.mean(x**2))
    if p_sig <= 0:
        raise DegenerateInputError("cannot add noise at finite SNR to a zero-power signal")
    noise = rng.standard_normal(x.size)
    # realised noise power hits the target exactly
    p_target = p_sig / (10.0 ** (snr_db / 10.0))
    noise *= math.sqrt(p_target / float(np.mean(noise**2)))
    return Signal(x + noise, sig.fs)


def standardize(sig: Signal) -> Signal:
    x = sig.samples
    sd = float(np.std(x))  # population convention
    if not np.isfinite(sd) or sd <= 0.0:
        raise DegenerateInputError("cannot standardize a constant signal")
    return Signal((x - np.mean(x)) / sd, sig.fs)


def draw_component(spec: ComponentSpec, rng: np.random.Generator) -> Tuple[float, float, ComponentSpec]:
    """Draws (A, phi, concrete spec) in a fixed order so generation stays reproducible."""
    amp = float(rng.uniform(*spec.amplitude_dist))
    phi = float(rng.uniform(0.0, 2 * np.pi))
    if spec.randomize:
        f_c = float(rng.uniform(*spec.f_c_range))
        f_m = float(rng.uniform(*spec.f_m_range))
        spec = ComponentSpec(f_m=f_m, f_c=f_c, beta=spec.beta, amplitude_dist=spec.amplitude_dist)
    return amp, phi, spec


def synth_sample(
    cls: ClassSpec,
    rng: np.random.Generator,
    *,
    n: int = DEFAULT_LENGTH,
    fs: float = DEFAULT_FS,
) -> Signal:
    cls.validate(fs)
    x = np.zeros(n)
    for comp in cls.components:
        amp, phi, concrete = draw_component(comp, rng)
        x += amp * periodic_impulse(concrete, phi, fs, n).samples
    return add_white_noise(Signal(x, fs), cls.snr_db, rng)


def stratified_split(labels: np.ndarray, train_frac: float, seed: Optional[int]) -> np.ndarray:
    """
    Per class, a seeded permutation; the first round(train_frac * count) go to train,
    clamped so each class keeps at least one train and one test sample when it has two.
    Classes with a single sample go entirely to train.
    """
    if not (0.0 < train_frac < 1.0):
        raise ParameterError(f"train_frac must lie in (0, 1), got {train_frac}")
    labels = np.asarray(labels, dtype=int)
    train = np.zeros(labels.size, dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            train[idx] = True
            continue
        rng = np.random.default_rng(np.random.SeedSequence([_seed_int(seed), 0x5711, int(c)]))
        order = rng.permutation(idx)
        k = int(min(max(round(train_frac * idx.size), 1), idx.size - 1))
        train[order[:k]] = True
    return train


def build_dataset(
    config: Sequence[ClassSpec],
    per_class: int,
    n: int = DEFAULT_LENGTH,
    fs: float = DEFAULT_FS,
    train_frac: float = 0.7,
    seed: Optional[int] = 0,
) -> Dataset:
    if per_class < 2:
        raise ParameterError(f"per_class must be >= 2, got {per_class}")
    if not (0.0 < train_frac < 1.0):
        raise ParameterError(f"train_frac must lie in (0, 1), got {train_frac}")
    if not config:
        raise ParameterError("dataset config has no classes")
    names = [c.name for c in config]
    if len(set(names)) != len(names):
        raise ParameterError(f"class names must be unique: {names}")
    for c in config:
        c.validate(fs)

    signals: List[Signal] = []
    labels: List[int] = []
    for ci, cls in enumerate(config):
        for si in range(per_class):
            # One generator per (class, sample): a sample never depends on its neighbours.
            rng = np.random.default_rng(np.random.SeedSequence([_seed_int(seed), ci, si]))
            signals.append(standardize(synth_sample(cls, rng, n=n, fs=fs)))
            labels.append(ci)

    lab = np.asarray(labels, dtype=int)
    return Dataset(
        signals=tuple(signals),
        labels=lab,
        class_names=tuple(names),
        train=stratified_split(lab, train_frac, seed),
        seed=seed,
    )


def fault_classes(snr_db: float = 0.0, beta: float = DEFAULT_BETA) -> List[ClassSpec]:
    """Health / Fault #1 / Fault #2; C0 is shared, each class owns one more component."""
    c0 = ComponentSpec(f_m=50.0, f_c=1500.0, beta=beta)
    c_h = ComponentSpec(f_m=0.0, f_c=0.0, beta=beta, randomize=True)
    c1 = ComponentSpec(f_m=100.0, f_c=2500.0, beta=beta)
    c2 = ComponentSpec(f_m=125.0, f_c=3500.0, beta=beta)
    return [
        ClassSpec("H", (c0, c_h), snr_db),
        ClassSpec("F1", (c0, c1), snr_db),
        ClassSpec("F2", (c0, c2), snr_db),
    ]


def _seed_int(seed: Optional[int]) -> int:
    return 0 if seed is None else int(seed)
