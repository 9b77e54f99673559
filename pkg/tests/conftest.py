from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
import pytest
from scipy import fft as sfft

from shepherd.attribution import BackgroundSet
from shepherd.patching import PatchRep, PatchSpec, label_map, patchify
from shepherd.predictor import IntegratedModel, Predictor
from shepherd.simgen import Signal, build_dataset, fault_classes
from shepherd.transforms import forward


@pytest.fixture(autouse=True)
def _isolated_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SHEPHERD_RUN_LOG", str(tmp_path / "runs.jsonl"))
    monkeypatch.setenv("SHEPHERD_QUIET", "1")
    monkeypatch.delenv("SHEPHERD_WORKERS", raising=False)
    monkeypatch.delenv("SHEPHERD_BATCH", raising=False)


class PatchEnergyModel(Predictor):
    """
    Toy classifier over the Freq power of its input: feature i is
    log1p(mean power in patch i / signal length), scores are linear plus optional
    pairwise terms, optionally squashed with tanh. Scores are not probabilities;
    the engines never require them to be.
    """

    def __init__(
        self,
        labels: np.ndarray,
        weights: np.ndarray,
        pair: Optional[np.ndarray] = None,
        bias: Optional[np.ndarray] = None,
        *,
        squash: bool = False,
        raw: bool = False,
    ) -> None:
        self.labels = np.asarray(labels)
        self.d = int(self.labels.max()) + 1
        self.weights = np.asarray(weights, dtype=float)
        self.pair = pair
        self.bias = np.zeros(self.weights.shape[1]) if bias is None else np.asarray(bias, dtype=float)
        self.squash = squash
        self.raw = raw
        self.n_classes = self.weights.shape[1]
        self.input_len = None
        self.fs = None

    def features(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        z = np.abs(sfft.rfft(x, axis=-1)) ** 2
        means = np.stack([z[:, self.labels == i].mean(axis=1) for i in range(self.d)], axis=1)
        return means if self.raw else np.log1p(means / x.shape[-1])

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        f = self.features(x)
        s = f @ self.weights + self.bias
        if self.pair is not None:
            s = s + np.einsum("bi,kij,bj->bk", f, self.pair, f)
        return np.tanh(s) if self.squash else s


Instance = Tuple[IntegratedModel, PatchRep, BackgroundSet, PatchEnergyModel]


def make_instance(
    d: int,
    n_bg: int,
    seed: int,
    *,
    patch: int = 4,
    k: int = 3,
    pair_scale: float = 0.3,
    squash: bool = True,
    raw: bool = False,
    dummy: Optional[int] = None,
) -> Instance:
    """Random signal, backgrounds and toy model on Freq patches; z has exactly d * patch bins."""
    rng = np.random.default_rng(seed)
    length = 2 * patch * d - 2
    fs = 1000.0

    def draw() -> Signal:
        return Signal(rng.standard_normal(length), fs)

    x = draw()
    rep = forward("freq", x)
    spec = PatchSpec((patch,))
    labels = label_map(rep.z.shape, spec)
    weights = rng.normal(size=(d, k))
    pair = rng.normal(scale=pair_scale, size=(k, d, d)) if pair_scale else None
    if dummy is not None:
        weights[dummy] = 0.0
        if pair is not None:
            pair[:, dummy, :] = 0.0
            pair[:, :, dummy] = 0.0
    model = PatchEnergyModel(labels, weights, pair, rng.normal(size=k), squash=squash, raw=raw)
    m = IntegratedModel(model, rep, spec)
    bg = BackgroundSet.from_signals([draw() for _ in range(n_bg)], [i % k for i in range(n_bg)], rep, spec)
    assert m.d == d
    return m, patchify(rep.z, spec), bg, model


@pytest.fixture
def instance_factory():
    return make_instance


@pytest.fixture(scope="session")
def fault_dataset():
    return build_dataset(fault_classes(), per_class=50, seed=7)


@pytest.fixture(scope="session")
def small_dataset():
    return build_dataset(fault_classes(), per_class=6, n=2000, seed=3)
