"""Encoder channel: threshold generator and asynchronous delta modulator.

The threshold generator maps the memristor read current to a symmetric pair
of comparator thresholds around ``v_cm``. The ADM compares the divided input
against the last reset level and emits a signed event whenever the difference
leaves ``[-delta, +delta]``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .events import Events
from .signals import AudioSignal

MIN_PULSE_WIDTH_S = 10e-9
MAX_PULSE_WIDTH_S = 500e-9


@dataclass(frozen=True)
class ThresholdGenConfig:
    beta: float = 10.0
    r_th_ohms: float = 3.0e4
    v_cm: float = 0.82
    i_linear_max_a: float = 1.5e-6
    delta_min_v: float = 5e-3
    delta_max_v: float = 0.4

    def __post_init__(self):
        if not (self.beta > 0 and self.r_th_ohms > 0):
            raise ValueError("beta and r_th_ohms must be positive")
        if not (0 < self.delta_min_v < self.delta_max_v):
            raise ValueError("need 0 < delta_min_v < delta_max_v")
        if not (self.i_linear_max_a > 0):
            raise ValueError("i_linear_max_a must be positive")

    @property
    def g_tia_ohms(self) -> float:
        return self.beta * self.r_th_ohms


class ThresholdPair(NamedTuple):
    v_th_p: float
    v_th_n: float
    delta_v: float


def delta_from_current(cfg: ThresholdGenConfig, i_m):
    """Vectorised threshold half-width for read current(s) ``i_m``."""
    i_m = np.asarray(i_m, dtype=float)
    if np.any(i_m < 0):
        raise ValueError("memristor current must be non-negative")
    delta = np.clip(cfg.g_tia_ohms * np.minimum(i_m, cfg.i_linear_max_a), cfg.delta_min_v, cfg.delta_max_v)
    return float(delta) if delta.ndim == 0 else delta


def threshold_from_current(cfg: ThresholdGenConfig, i_m: float) -> ThresholdPair:
    delta = delta_from_current(cfg, i_m)
    v_th_p = cfg.v_cm + delta
    # 2*v_cm - v_th_p is exact (Sterbenz), so the pair sums to 2*v_cm exactly
    v_th_n = 2.0 * cfg.v_cm - v_th_p
    return ThresholdPair(v_th_p, v_th_n, delta)


@dataclass(frozen=True)
class AdmChannelState:
    """Per-channel encoder state, carried between successive ``adm_encode`` calls.

    ``v_track`` is the input-referred reset level (``None`` starts tracking at
    the first sample). ``t_resume_s`` and ``last_t_ns`` carry the dead-time
    window across chunk boundaries.
    """

    channel: int = 0
    v_track: float | None = None
    delta_v: float = 5e-3
    held_delta_v: float | None = None
    disconnected: bool = False
    spike_pulse_width_s: float = 100e-9
    divider_gain: float = 0.75
    dead_time_s: float = 10e-9
    delta_min_v: float = 5e-3
    delta_max_v: float = 0.4
    t_resume_s: float = -np.inf
    last_t_ns: int = kernels.NO_EVENT_NS

    def __post_init__(self):
        if not (MIN_PULSE_WIDTH_S <= self.spike_pulse_width_s <= MAX_PULSE_WIDTH_S):
            raise ValueError("spike_pulse_width_s must lie in [10 ns, 500 ns]")
        if not (0 < self.divider_gain <= 1):
            raise ValueError("divider_gain must lie in (0, 1]")
        if not (0 < self.delta_min_v < self.delta_max_v):
            raise ValueError("need 0 < delta_min_v < delta_max_v")

    @classmethod
    def ideal(cls, channel: int = 0) -> AdmChannelState:
        """Ideal comparator: unity divider, no dead time, no threshold limits."""
        return cls(channel=channel, divider_gain=1.0, dead_time_s=0.0,
                   delta_min_v=np.finfo(float).tiny, delta_max_v=np.inf)


class DeltaTrace(NamedTuple):
    """Node-referred threshold in force over each sample interval."""

    t_s: np.ndarray
    delta_v: np.ndarray

    def at(self, t_s):
        """Threshold in force at time(s) ``t_s`` (zero-order hold on the sample grid)."""
        idx = np.searchsorted(self.t_s, np.asarray(t_s, dtype=float), side="right") - 1
        return self.delta_v[np.clip(idx, 0, len(self.delta_v) - 1)]


class AdmResult(NamedTuple):
    events: Events
    trace: DeltaTrace
    state: AdmChannelState


DeltaSource = float | np.ndarray | Callable[[np.ndarray], np.ndarray]


def _resolve_delta(delta_source, t):
    if callable(delta_source):
        return np.asarray(delta_source(t), dtype=float)
    d = np.asarray(delta_source, dtype=float)
    if d.ndim == 0:
        return np.full(len(t), float(d))
    if d.shape != t.shape:
        raise ValueError(f"delta array has shape {d.shape}, expected {t.shape}")
    return d


def adm_encode(
    state: AdmChannelState,
    sig: AudioSignal,
    delta_source: DeltaSource,
    *,
    jitter_sigma_v: float = 0.0,
    rng: np.random.Generator | None = None,
    backend: str | None = None,
) -> AdmResult:
    """Encode ``sig`` (piecewise-linear between samples).

    ``delta_source`` gives the node threshold as a scalar, a per-sample array
    or a callable of sample times. Over each sample interval the value at its
    start applies. While ``state.disconnected`` is set, ``held_delta_v`` is
    used instead.
    """
    t = sig.times()
    if len(t) < 2:
        return AdmResult(Events.empty(), DeltaTrace(t, np.zeros(len(t))), state)
    if state.disconnected and state.held_delta_v is not None:
        delta = np.full(len(t), state.held_delta_v)
    else:
        delta = _resolve_delta(delta_source, t)
    if jitter_sigma_v > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        delta = delta + rng.normal(0.0, jitter_sigma_v, size=len(delta))
    delta = np.clip(delta, state.delta_min_v, state.delta_max_v)
    x = sig.samples
    v_track = float(x[0]) if state.v_track is None else state.v_track
    t_ns, pol, v_track, t_resume, last_ns = kernels.adm_walk(
        x, delta[:-1], t0=sig.t0_s, dt=sig.dt, gain=state.divider_gain, dead_time=state.dead_time_s,
        v_track=v_track, t_resume=state.t_resume_s, last_ns=state.last_t_ns, backend=backend,
    )
    events = Events.single_channel(t_ns, pol, state.channel)
    new_state = replace(state, v_track=v_track, t_resume_s=t_resume, last_t_ns=last_ns,
                        delta_v=float(delta[-1]))
    return AdmResult(events, DeltaTrace(t, delta), new_state)


def ideal_adm_encode(sig: AudioSignal, delta_v: float, *, channel: int = 0, backend: str | None = None) -> Events:
    """Fixed-threshold ideal delta modulator (unity gain, no dead time)."""
    if not (delta_v > 0):
        raise ValueError("delta_v must be positive")
    return adm_encode(AdmChannelState.ideal(channel), sig, float(delta_v), backend=backend).events


def spike_count(sig: AudioSignal, delta_v: float, *, backend: str | None = None) -> int:
    """Event count of the ideal modulator; cheaper than building an ``Events``."""
    if not (delta_v > 0) or len(sig) < 2:
        if not (delta_v > 0):
            raise ValueError("delta_v must be positive")
        return 0
    x = sig.samples
    t_ns, *_ = kernels.adm_walk(x, np.full(len(x) - 1, float(delta_v)), t0=sig.t0_s, dt=sig.dt,
                                v_track=float(x[0]), backend=backend)
    return len(t_ns)


def reconstruct(
    events: Events,
    delta_trace,
    v0: float,
    *,
    rate_hz: float,
    n_samples: int,
    t0_s: float = 0.0,
    divider_gain: float = 1.0,
    centered: bool = False,
) -> AudioSignal:
    """Staircase decoder: ``v0 + sum(polarity * delta(t_event) / divider_gain)``.

    ``delta_trace`` is a constant node threshold or a ``DeltaTrace``.
    ``centered`` adds half a step in the direction of the last event, which
    removes the hysteresis lag of the plain staircase.
    """
    t_ns = events.t_ns
    if len(t_ns) > 1 and np.any(np.diff(t_ns) < 0):
        raise ValueError("events must be sorted by time")
    t_ev = t_ns * 1e-9
    if isinstance(delta_trace, DeltaTrace):
        steps = delta_trace.at(t_ev) / divider_gain
    else:
        steps = np.full(len(t_ev), float(delta_trace) / divider_gain)
    increments = events.polarity * steps
    level = v0 + np.concatenate([[0.0], np.cumsum(increments)])
    t_grid = t0_s + np.arange(n_samples) / rate_hz
    # number of events at or before each grid time
    k = np.searchsorted(t_ns, np.floor(t_grid * 1e9 + 0.5).astype(np.int64), side="right")
    out = level[k]
    if centered and len(increments):
        last = np.concatenate([[0.0], 0.5 * increments])
        out = out + last[k]
    return AudioSignal(rate_hz, out, t0_s)
