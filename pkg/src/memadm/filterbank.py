"""Gammatone filterbank.

Centers are spaced uniformly on the Glasberg & Moore ERB-rate scale,
``E(f) = 21.4 log10(1 + 0.00437 f)``, with both band edges included. Each
channel is the 4th-order gammatone of Slaney's auditory toolbox, realised as
four cascaded biquads with bandwidth ``1.019 * ERB(cf)`` and normalised to
unit gain at its center frequency.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, SignalError
from .signals import AudioSignal

EAR_Q = 9.26449
MIN_BW = 24.7


@dataclass(frozen=True)
class FilterbankConfig:
    n_channels: int = 8
    f_low_hz: float = 50.0
    f_high_hz: float = 8000.0
    order: int = 4
    spacing: Literal["erb", "log"] = "erb"

    def __post_init__(self):
        if self.n_channels < 1:
            raise ConfigError("n_channels must be >= 1", "filterbank.n_channels")
        if not (0 < self.f_low_hz < self.f_high_hz):
            raise ConfigError("need 0 < f_low_hz < f_high_hz", "filterbank.f_low_hz")
        if self.order != 4:
            raise ConfigError("only the 4th-order gammatone is implemented", "filterbank.order")
        if self.spacing not in ("erb", "log"):
            raise ConfigError(f"unknown spacing {self.spacing!r}", "filterbank.spacing")


@dataclass(frozen=True, eq=False)
class ChannelBand:
    index: int
    center_hz: float
    erb_hz: float
    rate_hz: float
    sos: np.ndarray

    def impulse_response(self, n: int) -> np.ndarray:
        x = np.zeros(n)
        x[0] = 1.0
        return sps.sosfilt(self.sos, x)


def erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=float))


def erb_rate_inverse(e):
    return (10.0 ** (np.asarray(e, dtype=float) / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f):
    return np.asarray(f, dtype=float) / EAR_Q + MIN_BW


def center_frequencies(cfg: FilterbankConfig) -> np.ndarray:
    if cfg.spacing == "log":
        scale, inverse = np.log, np.exp
    else:
        scale, inverse = erb_rate, erb_rate_inverse
    lo, hi = scale(cfg.f_low_hz), scale(cfg.f_high_hz)
    if cfg.n_channels == 1:
        return np.array([float(inverse(0.5 * (lo + hi)))])
    centers = inverse(np.linspace(lo, hi, cfg.n_channels))
    centers[0], centers[-1] = cfg.f_low_hz, cfg.f_high_hz
    return centers


def _gammatone_sos(cf, rate_hz):
    T = 1.0 / rate_hz
    erb = erb_bandwidth(cf)
    B = 1.019 * 2 * np.pi * erb
    arg = 2 * np.pi * cf * T
    decay = np.exp(-B * T)
    a1 = -2 * np.cos(arg) * decay
    a2 = np.exp(-2 * B * T)
    sections = []
    for root in (np.sqrt(3 + 2**1.5), -np.sqrt(3 + 2**1.5), np.sqrt(3 - 2**1.5), -np.sqrt(3 - 2**1.5)):
        b1 = -(T * np.cos(arg) + root * T * np.sin(arg)) * decay
        sections.append([T, b1, 0.0, 1.0, a1, a2])
    sos = np.array(sections)
    _, h = sps.sosfreqz(sos, worN=[cf], fs=rate_hz)
    sos[0, :3] /= np.abs(h[0])
    return sos, float(erb)


def design_gammatone_bank(cfg: FilterbankConfig, rate_hz: float) -> list[ChannelBand]:
    if cfg.f_high_hz >= rate_hz / 2:
        raise ConfigError(
            f"f_high_hz={cfg.f_high_hz} must be below the Nyquist frequency {rate_hz / 2}",
            "filterbank.f_high_hz",
        )
    bank = []
    for i, cf in enumerate(center_frequencies(cfg)):
        sos, erb = _gammatone_sos(float(cf), rate_hz)
        bank.append(ChannelBand(i, float(cf), erb, float(rate_hz), sos))
    return bank


def apply_filterbank(bank: list[ChannelBand], sig: AudioSignal) -> list[AudioSignal]:
    out = []
    for band in bank:
        if band.rate_hz != sig.sample_rate_hz:
            raise SignalError(
                f"bank designed at {band.rate_hz} Hz, signal sampled at {sig.sample_rate_hz} Hz"
            )
        out.append(sig.with_samples(sps.sosfilt(band.sos, sig.samples)))
    return out
