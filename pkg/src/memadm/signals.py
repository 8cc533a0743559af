"""Analog stimuli: WAV ingestion, synthetic tones and burst trains, conditioning.

Voltages are in volts and times in seconds throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.io import wavfile

from .errors import SignalError

#: Minimum ratio between synthesis rate and tone frequency.
MIN_OVERSAMPLING = 10.0


@dataclass(frozen=True, eq=False)
class AudioSignal:
    """Uniformly sampled voltage waveform starting at ``t0_s``."""

    sample_rate_hz: float
    samples: np.ndarray
    t0_s: float = 0.0

    def __post_init__(self):
        if not (self.sample_rate_hz > 0 and np.isfinite(self.sample_rate_hz)):
            raise SignalError(f"sample rate must be positive, got {self.sample_rate_hz}")
        arr = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise SignalError("samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "t0_s", float(self.t0_s))

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self.samples)) / self.sample_rate_hz

    @property
    def peak_to_peak(self) -> float:
        return float(np.ptp(self.samples)) if len(self.samples) else 0.0

    def with_samples(self, samples) -> AudioSignal:
        return AudioSignal(self.sample_rate_hz, samples, self.t0_s)


@dataclass(frozen=True)
class SignalSpec:
    """Description of a synthetic (or file-backed) stimulus.

    ``burst_train`` produces tone bursts of ``burst_s`` separated by ``gap_s``
    of silence, the first starting at ``lead_s``. With ``level_spread_db > 0``
    each burst is attenuated by a seeded random amount in
    ``[-level_spread_db, 0]`` dB, and ``decay_s`` (if set) gives each burst an
    exponentially decaying envelope after its attack. ``n_harmonics > 1``
    replaces the burst carrier by a harmonic complex with ``1/k`` amplitudes,
    scaled to unit peak, so that several filterbank channels respond.
    """

    kind: Literal["sine", "burst_train", "file"] = "sine"
    amplitude_vpp: float = 1.5
    frequency_hz: float = 1000.0
    offset_v: float = 0.0
    phase_rad: float = 0.0
    burst_s: float = 0.1
    gap_s: float = 0.3
    lead_s: float = 0.02
    ramp_s: float = 0.002
    decay_s: float | None = None
    level_spread_db: float = 0.0
    n_harmonics: int = 1
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if not (self.amplitude_vpp >= 0):
            raise SignalError("amplitude_vpp must be >= 0")
        if self.kind == "burst_train" and not (self.burst_s > 0 and self.gap_s > 0):
            raise SignalError("burst_s and gap_s must be > 0 for a burst train")
        if self.kind == "file" and not self.path:
            raise SignalError("file stimulus needs a path")
        if self.level_spread_db < 0:
            raise SignalError("level_spread_db must be >= 0")
        if self.n_harmonics < 1:
            raise SignalError("n_harmonics must be >= 1")


def load_wav(path) -> AudioSignal:
    """Read a mono (or first-channel) WAV file, mapping full scale to [-1, 1] V."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise SignalError(f"cannot read {path}: file not found") from exc
    except (ValueError, OSError) as exc:
        raise SignalError(f"cannot read {path}: {exc}") from exc
    if data.ndim == 2:
        data = data[:, 0]
    if data.size == 0:
        raise SignalError(f"{path} contains no audio")
    kind = data.dtype.kind
    if kind == "f":
        volts = data.astype(np.float64)
    elif data.dtype == np.uint8:
        volts = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        volts = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM into int32
        volts = data.astype(np.float64) / 2147483648.0
    else:
        raise SignalError(f"{path}: unsupported sample encoding {data.dtype}")
    return AudioSignal(float(rate), volts)


def _check_rate(frequency_hz, rate_hz):
    if rate_hz < MIN_OVERSAMPLING * frequency_hz:
        raise SignalError(
            f"rate {rate_hz} Hz is below {MIN_OVERSAMPLING:g}x the tone frequency {frequency_hz} Hz"
        )


def synth_sine(spec: SignalSpec, duration_s: float, rate_hz: float, t0_s: float = 0.0) -> AudioSignal:
    """offset + (amplitude_vpp / 2) * sin(2 pi f t + phase), sampled at ``rate_hz``."""
    _check_rate(spec.frequency_hz, rate_hz)
    n = int(round(duration_s * rate_hz))
    t = t0_s + np.arange(n) / rate_hz
    x = spec.offset_v + 0.5 * spec.amplitude_vpp * np.sin(2 * np.pi * spec.frequency_hz * t + spec.phase_rad)
    return AudioSignal(rate_hz, x, t0_s)


def burst_onsets(spec: SignalSpec, duration_s: float) -> np.ndarray:
    """Onset times of every burst that starts inside ``[0, duration_s)``."""
    period = spec.burst_s + spec.gap_s
    onsets = spec.lead_s + period * np.arange(int(np.ceil(duration_s / period)) + 1)
    return onsets[onsets < duration_s]


def burst_levels(spec: SignalSpec, n_bursts: int) -> np.ndarray:
    """Linear gain applied to each burst (1.0 for the loudest possible)."""
    if spec.level_spread_db == 0 or n_bursts == 0:
        return np.ones(n_bursts)
    rng = np.random.default_rng(spec.seed)
    db = -rng.uniform(0.0, spec.level_spread_db, size=n_bursts)
    db[rng.integers(n_bursts)] = 0.0  # keep one burst at full level
    return 10.0 ** (db / 20.0)


def synth_burst_train(spec: SignalSpec, duration_s: float, rate_hz: float) -> AudioSignal:
    _check_rate(spec.frequency_hz * spec.n_harmonics, rate_hz)
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz
    onsets = burst_onsets(spec, duration_s)
    levels = burst_levels(spec, len(onsets))
    env = np.zeros(n)
    ramp = max(spec.ramp_s, 0.0)
    for onset, level in zip(onsets, levels):
        local = t - onset
        inside = (local >= 0) & (local < spec.burst_s)
        if not inside.any():
            continue
        tl = local[inside]
        shape = np.ones_like(tl)
        if ramp > 0:
            shape = np.minimum(shape, 0.5 - 0.5 * np.cos(np.pi * np.clip(tl / ramp, 0, 1)))
            shape = np.minimum(shape, 0.5 - 0.5 * np.cos(np.pi * np.clip((spec.burst_s - tl) / ramp, 0, 1)))
        if spec.decay_s:
            shape = shape * np.exp(-np.maximum(tl - ramp, 0.0) / spec.decay_s)
        env[inside] = level * shape
    carrier = harmonic_carrier(spec, t)
    return AudioSignal(rate_hz, spec.offset_v + 0.5 * spec.amplitude_vpp * env * carrier)


def harmonic_carrier(spec: SignalSpec, t) -> np.ndarray:
    if spec.n_harmonics == 1:
        return np.sin(2 * np.pi * spec.frequency_hz * t + spec.phase_rad)
    # unit peak, measured over one fundamental period on a fine grid
    tp = np.linspace(0.0, 1.0 / spec.frequency_hz, 4096, endpoint=False)
    ks = np.arange(1, spec.n_harmonics + 1)

    def wave(tt):
        return np.sum(np.sin(2 * np.pi * spec.frequency_hz * np.multiply.outer(ks, tt) + spec.phase_rad)
                      / ks[:, None], axis=0)

    return wave(t) / np.max(np.abs(wave(tp)))


def synthesize(spec: SignalSpec, duration_s: float, rate_hz: float) -> AudioSignal:
    if spec.kind == "sine":
        return synth_sine(spec, duration_s, rate_hz)
    if spec.kind == "burst_train":
        return synth_burst_train(spec, duration_s, rate_hz)
    if spec.kind == "file":
        return load_wav(spec.path)
    raise SignalError(f"unknown stimulus kind {spec.kind!r}")


def normalize_pp(
    sig: AudioSignal,
    target_vpp: float,
    *,
    center_v: float | None = None,
    preserve_mean: bool = False,
) -> AudioSignal:
    """Scale ``sig`` so that max - min equals ``target_vpp``.

    By default the mid-range value is kept; ``center_v`` moves the mid-range to
    the given voltage instead, and ``preserve_mean`` scales about the mean.
    """
    x = sig.samples
    if len(x) == 0:
        raise SignalError("cannot normalize an empty signal")
    lo, hi = float(x.min()), float(x.max())
    span = hi - lo
    if span <= 0:
        raise SignalError("cannot normalize a constant signal")
    if target_vpp < 0:
        raise SignalError("target_vpp must be >= 0")
    gain = target_vpp / span
    if preserve_mean:
        anchor = float(x.mean())
        y = anchor + (x - anchor) * gain
    else:
        mid = 0.5 * (lo + hi)
        out_mid = mid if center_v is None else center_v
        y = out_mid + (x - mid) * gain
    return sig.with_samples(y)


def resample_linear(sig: AudioSignal, rate_hz: float) -> AudioSignal:
    """Linear interpolation onto a new uniform grid covering the same span."""
    if rate_hz == sig.sample_rate_hz:
        return sig
    n_out = int(np.floor((len(sig) - 1) * rate_hz / sig.sample_rate_hz + 1e-9)) + 1
    t_new = np.arange(n_out) / rate_hz
    t_old = np.arange(len(sig)) / sig.sample_rate_hz
    return AudioSignal(rate_hz, np.interp(t_new, t_old, sig.samples), sig.t0_s)
