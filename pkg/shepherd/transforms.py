# shepherd/transforms.py
"""
Invertible domain transforms x -> (z, remains) and back.

  freq  z = |rfft(x)|^2                       remains: spectrum phase
  env   z = |rfft(|a| - mean|a|)|^2[:L]       remains: analytic phase, envelope mean,
                                                       envelope-spectrum phase, out-of-band tail
  tf    z = |STFT|^2                          remains: STFT phase
  cs    z = |rfft_t(|STFT|^2)|^2              remains: STFT phase, alpha-spectrum phase

Every inverse has a batch form taking a stack of z arrays that share one set of
remains; the integrated model runs on that path.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import signal as ssig

from .errors import ConfigError, InconsistencyError, ParameterError
from .simgen import Signal

DEFAULT_ENV_MAX_HZ = 600.0


class DomainTag(str, Enum):
    FREQ = "freq"
    ENV = "env"
    TF = "tf"
    CS = "cs"

    @classmethod
    def parse(cls, s: "str | DomainTag") -> "DomainTag":
        if isinstance(s, DomainTag):
            return s
        try:
            return cls(str(s).strip().lower())
        except ValueError:
            raise ParameterError(f"unknown domain {s!r}; expected one of freq|env|tf|cs") from None

    @property
    def is_2d(self) -> bool:
        return self in (DomainTag.TF, DomainTag.CS)


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 50
    hop: int = 10
    window: str = "hann"
    pad: str = "center"

    def validate(self) -> None:
        if self.window_len <= 0 or not (0 < self.hop <= self.window_len):
            raise ConfigError(f"need 0 < hop <= window_len, got hop={self.hop}, window_len={self.window_len}")
        if self.pad not in ("center", "none"):
            raise ConfigError(f"pad must be 'center' or 'none', got {self.pad!r}")
        try:
            self.taper()
        except ValueError as e:
            raise ConfigError(f"unknown window {self.window!r}: {e}") from None
        if not _cola_ok(self.window, self.window_len, self.hop):
            raise ConfigError(
                f"window {self.window!r} (len {self.window_len}) with hop {self.hop} "
                "violates the constant-overlap-add condition"
            )

    def taper(self) -> np.ndarray:
        return _taper(self.window, self.window_len)

    @property
    def n_freqs(self) -> int:
        return self.window_len // 2 + 1

    def left_pad(self) -> int:
        return self.window_len // 2 if self.pad == "center" else 0

    def frame_count(self, n: int) -> int:
        span = n + 2 * self.left_pad()
        return 1 + int(math.ceil(max(span - self.window_len, 0) / self.hop))

    def padded_len(self, n: int) -> int:
        return (self.frame_count(n) - 1) * self.hop + self.window_len


@dataclass(frozen=True)
class RepMeta:
    n: int
    fs: float
    stft: Optional[StftConfig] = None
    env_bins: Optional[int] = None
    env_max_hz: Optional[float] = None


@dataclass(frozen=True)
class DomainRep:
    domain: DomainTag
    z: np.ndarray
    remains: Dict[str, np.ndarray]
    meta: RepMeta

    @property
    def remain_count(self) -> int:
        return len(self.remains)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.z.shape)

    def with_z(self, z: np.ndarray) -> "DomainRep":
        z = np.asarray(z, dtype=float)
        if z.shape != self.z.shape:
            raise InconsistencyError(f"z shape {z.shape} does not match representation {self.z.shape}")
        if np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ParameterError("z must be finite and non-negative")
        return replace(self, z=z)


# ---------------------------------------------------------------------------
# Short-time transform
# ---------------------------------------------------------------------------

def stft(x: "Signal | np.ndarray", cfg: StftConfig) -> np.ndarray:
    """
    Returns (..., window_len//2 + 1, frames). Frames start every hop samples on the
    padded signal (window_len//2 zeros each side for 'center', trailing zeros so the
    last frame reaches the end).
    """
    cfg.validate()
    data = x.samples if isinstance(x, Signal) else np.asarray(x, dtype=float)
    n = data.shape[-1]
    left = cfg.left_pad()
    right = cfg.padded_len(n) - n - left
    pad = [(0, 0)] * (data.ndim - 1) + [(left, right)]
    xp = np.pad(data, pad)
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.window_len, axis=-1)[..., :: cfg.hop, :]
    spec = sfft.rfft(frames * cfg.taper(), axis=-1)
    return np.swapaxes(spec, -1, -2)


def istft(s: np.ndarray, cfg: StftConfig, out_len: int) -> np.ndarray:
    """Least-squares overlap-add inverse: sum(w * frame) / sum(w^2)."""
    cfg.validate()
    s = np.asarray(s)
    n_frames = s.shape[-1]
    if s.shape[-2] != cfg.n_freqs:
        raise ParameterError(f"expected {cfg.n_freqs} frequency rows, got {s.shape[-2]}")
    if out_len <= 0 or cfg.frame_count(out_len) != n_frames:
        raise ParameterError(
            f"out_len {out_len} implies {cfg.frame_count(max(out_len, 1))} frames, matrix has {n_frames}"
        )
    win = cfg.taper()
    frames = sfft.irfft(np.swapaxes(s, -1, -2), n=cfg.window_len, axis=-1) * win
    total = cfg.padded_len(out_len)
    y = np.zeros(s.shape[:-2] + (total,))
    wsum = np.zeros(total)
    w2 = win**2
    for t in range(n_frames):
        a = t * cfg.hop
        y[..., a : a + cfg.window_len] += frames[..., t, :]
        wsum[a : a + cfg.window_len] += w2
    covered = wsum > 1e-10 * wsum.max()
    y = np.where(covered, y / np.where(covered, wsum, 1.0), 0.0)
    left = cfg.left_pad()
    return y[..., left : left + out_len]


def hilbert_analytic(x: "Signal | np.ndarray") -> np.ndarray:
    data = x.samples if isinstance(x, Signal) else np.asarray(x, dtype=float)
    if data.shape[-1] < 2:
        raise ParameterError("analytic signal needs at least 2 samples")
    return ssig.hilbert(data, axis=-1)


# ---------------------------------------------------------------------------
# Batch kernels (shared with the reference predictor)
# ---------------------------------------------------------------------------

def freq_spectrum(x: np.ndarray) -> np.ndarray:
    return sfft.rfft(x, axis=-1)


def envelope_spectrum(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (analytic signal, envelope mean, full one-sided spectrum of the centred envelope)."""
    a = hilbert_analytic(x)
    e = np.abs(a)
    mean = e.mean(axis=-1, keepdims=True)
    return a, mean, sfft.rfft(e - mean, axis=-1)


def env_bin_count(n: int, fs: float, env_max_hz: Optional[float]) -> int:
    full = n // 2 + 1
    if env_max_hz is None:
        return full
    if env_max_hz <= 0:
        raise ConfigError(f"env_max_hz must be positive, got {env_max_hz}")
    df = fs / n
    return int(min(full, max(1, math.floor(env_max_hz / df + 1e-9))))


# ---------------------------------------------------------------------------
# forward / inverse
# ---------------------------------------------------------------------------

def forward(
    domain: "DomainTag | str",
    sig: Signal,
    cfg: Optional[StftConfig] = None,
    *,
    env_max_hz: Optional[float] = DEFAULT_ENV_MAX_HZ,
) -> DomainRep:
    domain = DomainTag.parse(domain)
    x = sig.samples
    n = x.size

    if domain is DomainTag.FREQ:
        X = freq_spectrum(x)
        return DomainRep(domain, np.abs(X) ** 2, {"phase": np.angle(X)}, RepMeta(n, sig.fs))

    if domain is DomainTag.ENV:
        a, mean, E = envelope_spectrum(x)
        L = env_bin_count(n, sig.fs, env_max_hz)
        tail = E[L:]
        remains = {
            "analytic_phase": np.angle(a),
            "envelope_mean": np.asarray(mean, dtype=float).reshape(1),
            "envelope_phase": np.angle(E[:L]),
            "envelope_tail": np.stack([tail.real, tail.imag]),
        }
        meta = RepMeta(n, sig.fs, env_bins=L, env_max_hz=env_max_hz)
        return DomainRep(domain, np.abs(E[:L]) ** 2, remains, meta)

    if cfg is None:
        raise ParameterError(f"domain {domain.value} needs an StftConfig")
    cfg.validate()
    S = stft(x, cfg)

    if domain is DomainTag.TF:
        return DomainRep(domain, np.abs(S) ** 2, {"stft_phase": np.angle(S)}, RepMeta(n, sig.fs, stft=cfg))

    P = np.abs(S) ** 2
    A = sfft.rfft(P, axis=-1)
    remains = {"stft_phase": np.angle(S), "alpha_phase": np.angle(A)}
    return DomainRep(domain, np.abs(A) ** 2, remains, RepMeta(n, sig.fs, stft=cfg))


def inverse(rep: DomainRep) -> Signal:
    return Signal(inverse_batch(rep, rep.z[np.newaxis])[0], rep.meta.fs)


def inverse_batch(rep: DomainRep, zs: np.ndarray) -> np.ndarray:
    """Reconstructs one time signal per z in zs (shape (B, *rep.z.shape)) using rep's remains."""
    zs = np.asarray(zs, dtype=float)
    if zs.shape[1:] != rep.z.shape:
        raise InconsistencyError(f"z stack shape {zs.shape[1:]} does not match representation {rep.z.shape}")
    _check_remains(rep)
    n = rep.meta.n
    r = rep.remains
    mag = np.sqrt(np.maximum(zs, 0.0))

    if rep.domain is DomainTag.FREQ:
        return sfft.irfft(mag * np.exp(1j * r["phase"]), n=n, axis=-1)

    if rep.domain is DomainTag.ENV:
        head = mag * np.exp(1j * r["envelope_phase"])
        tail = r["envelope_tail"][0] + 1j * r["envelope_tail"][1]
        tail = np.broadcast_to(tail, zs.shape[:1] + tail.shape)
        env = sfft.irfft(np.concatenate([head, tail], axis=-1), n=n, axis=-1) + r["envelope_mean"][0]
        return env * np.cos(r["analytic_phase"])

    cfg = rep.meta.stft
    if rep.domain is DomainTag.TF:
        return istft(mag * np.exp(1j * r["stft_phase"]), cfg, n)

    n_frames = r["stft_phase"].shape[-1]
    power = sfft.irfft(mag * np.exp(1j * r["alpha_phase"]), n=n_frames, axis=-1)
    S = np.sqrt(np.maximum(power, 0.0)) * np.exp(1j * r["stft_phase"])
    return istft(S, cfg, n)


_REMAIN_KEYS = {
    DomainTag.FREQ: ("phase",),
    DomainTag.ENV: ("analytic_phase", "envelope_mean", "envelope_phase", "envelope_tail"),
    DomainTag.TF: ("stft_phase",),
    DomainTag.CS: ("stft_phase", "alpha_phase"),
}


def _check_remains(rep: DomainRep) -> None:
    keys = _REMAIN_KEYS[rep.domain]
    if tuple(rep.remains) != keys:
        raise InconsistencyError(f"{rep.domain.value} remains must be {keys}, got {tuple(rep.remains)}")
    n = rep.meta.n
    r = rep.remains
    z = rep.z
    if rep.domain is DomainTag.FREQ:
        ok = r["phase"].shape == z.shape == (n // 2 + 1,)
    elif rep.domain is DomainTag.ENV:
        L = rep.meta.env_bins
        ok = (
            z.shape == (L,)
            and r["analytic_phase"].shape == (n,)
            and r["envelope_phase"].shape == (L,)
            and r["envelope_tail"].shape == (2, n // 2 + 1 - L)
        )
    else:
        cfg = rep.meta.stft
        if cfg is None:
            raise InconsistencyError(f"{rep.domain.value} representation lacks its StftConfig")
        grid = (cfg.n_freqs, cfg.frame_count(n))
        ok = r["stft_phase"].shape == grid
        if rep.domain is DomainTag.TF:
            ok = ok and z.shape == grid
        else:
            alpha = (cfg.n_freqs, grid[1] // 2 + 1)
            ok = ok and z.shape == alpha and r["alpha_phase"].shape == alpha
    if not ok:
        raise InconsistencyError(f"{rep.domain.value} remains do not match z shape {z.shape} / length {n}")


def axis_coordinates(rep: DomainRep) -> Tuple[Tuple[str, np.ndarray], ...]:
    """Physical coordinate of every z index along each axis (Hz for f and alpha, seconds for t)."""
    n, fs = rep.meta.n, rep.meta.fs
    if rep.domain is DomainTag.FREQ:
        return (("f_hz", sfft.rfftfreq(n, 1.0 / fs)),)
    if rep.domain is DomainTag.ENV:
        return (("alpha_hz", sfft.rfftfreq(n, 1.0 / fs)[: rep.z.shape[0]]),)
    cfg = rep.meta.stft
    f = sfft.rfftfreq(cfg.window_len, 1.0 / fs)
    frames = cfg.frame_count(n)
    if rep.domain is DomainTag.TF:
        t = (np.arange(frames) * cfg.hop + cfg.window_len / 2 - cfg.left_pad()) / fs
        return (("f_hz", f), ("t_s", t))
    return (("f_hz", f), ("alpha_hz", sfft.rfftfreq(frames, cfg.hop / fs)))


@lru_cache(maxsize=32)
def _taper(window: str, window_len: int) -> np.ndarray:
    w = ssig.get_window(window, window_len, fftbins=True)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=32)
def _cola_ok(window: str, window_len: int, hop: int) -> bool:
    return bool(ssig.check_COLA(_taper(window, window_len), window_len, window_len - hop))
