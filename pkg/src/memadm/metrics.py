"""Analysis of encoder output: rates, envelopes, correlation, baselines."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .events import Events
from .frontend import AdmChannelState, adm_encode
from .signals import AudioSignal

log = logging.getLogger(__name__)

DEFAULT_WINDOW_S = 10e-3
ONSET_WINDOW_S = 20e-3
ONSET_PERIOD_S = 0.5


# --- rates and envelopes ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateSeries:
    """Values on consecutive windows tiling ``[t_start_s, t_start_s + n*window_s)``.

    The last window may be shorter when the span is not a whole number of
    windows; ``widths_s`` records the actual width of each.
    """

    window_s: float
    t_start_s: float
    values: np.ndarray
    widths_s: np.ndarray

    @property
    def t_centers(self) -> np.ndarray:
        edges = self.t_start_s + np.concatenate([[0.0], np.cumsum(self.widths_s)])
        return 0.5 * (edges[:-1] + edges[1:])

    @property
    def rates(self) -> np.ndarray:
        return self.values

    def __len__(self):
        return len(self.values)


def _tiling(window_s, span):
    if not (window_s > 0):
        raise ValueError("window_s must be positive")
    t_start, t_end = map(float, span)
    if t_end < t_start:
        raise ValueError("span end precedes span start")
    n = max(1, int(math.ceil((t_end - t_start) / window_s - 1e-9)))
    widths = np.full(n, float(window_s))
    widths[-1] = max(t_end - t_start - (n - 1) * window_s, 0.0) or window_s
    return t_start, n, widths


def window_counts(events: Events, window_s: float, span) -> np.ndarray:
    """Events per window, binned on integer nanoseconds. Events outside ``span`` are ignored."""
    t_start, n, _ = _tiling(window_s, span)
    start_ns = int(math.floor(t_start * 1e9 + 0.5))
    end_ns = int(math.floor(float(span[1]) * 1e9 + 0.5))
    win_ns = int(round(window_s * 1e9))
    rel = events.t_ns - start_ns
    idx = rel // win_ns
    idx = idx[(rel >= 0) & (idx < n) & (events.t_ns < max(end_ns, start_ns + 1))]
    return np.bincount(idx, minlength=n).astype(np.int64)


def spike_rate(events: Events, window_s: float, span) -> RateSeries:
    t_start, n, widths = _tiling(window_s, span)
    counts = window_counts(events, window_s, span)
    return RateSeries(float(window_s), t_start, counts / widths, widths)


def rms_envelope(sig: AudioSignal, window_s: float = DEFAULT_WINDOW_S) -> RateSeries:
    """Per-window RMS of the samples, on the same tiling as ``spike_rate`` over the record."""
    t_start, n, widths = _tiling(window_s, (sig.t0_s, sig.t0_s + sig.duration_s))
    idx = np.minimum(np.floor(np.arange(len(sig)) / (window_s * sig.sample_rate_hz) + 1e-9).astype(np.int64), n - 1)
    sq = np.bincount(idx, weights=sig.samples**2, minlength=n)
    num = np.bincount(idx, minlength=n)
    rms = np.sqrt(np.divide(sq, num, out=np.zeros(n), where=num > 0))
    return RateSeries(float(window_s), t_start, rms, widths)


def record_span(sig: AudioSignal):
    return sig.t0_s, sig.t0_s + sig.duration_s


# --- correlation --------------------------------------------------------------

def pearson_r(x, y) -> float:
    """Pearson correlation of two equal-length series.

    Returns NaN (and scipy warns) when either series is constant.
    """
    x = np.asarray(getattr(x, "values", x), dtype=float)
    y = np.asarray(getattr(y, "values", y), dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be 1-D with equal lengths")
    if len(x) < 2:
        raise ValueError("need at least two points")
    return float(stats.pearsonr(x, y).statistic)


class PearsonSummary(NamedTuple):
    label: str
    r_full: float
    r_onset: float
    n_windows: int

    @property
    def degenerate(self) -> bool:
        return math.isnan(self.r_full)


def pearson_summary(label, events, sig, window_s=DEFAULT_WINDOW_S, onset_period_s=ONSET_PERIOD_S):
    span = record_span(sig)
    rate = spike_rate(events, window_s, span)
    env = rms_envelope(sig, window_s)
    r_full = _quiet_pearson(rate.values, env.values)
    k = max(2, int(round(onset_period_s / window_s)))
    r_onset = _quiet_pearson(rate.values[:k], env.values[:k]) if len(rate) >= 2 else math.nan
    return PearsonSummary(label, r_full, r_onset, len(rate))


def _quiet_pearson(x, y):
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return math.nan
    return pearson_r(x, y)


# --- rate law and reference model ---------------------------------------------

def theoretical_rate(amplitude_v: float, f_in_hz: float, delta_v: float) -> float:
    """Event rate of an ideal delta modulator on a sine of amplitude ``A``: ``4 A f / delta``."""
    if not (delta_v > 0):
        raise ValueError("delta_v must be positive")
    return 4.0 * amplitude_v * f_in_hz / delta_v


def lattice_count_per_period(amplitude_v: float, delta_v: float, phase_level_v: float = 0.0) -> int:
    """Exact events per period for a sine whose tracking lattice passes through ``phase_level_v``.

    The walk visits every lattice level strictly inside ``(-A, A)`` twice per
    period, minus one at each turning point.
    """
    if not (delta_v > 0):
        raise ValueError("delta_v must be positive")
    k_hi = math.ceil((amplitude_v - phase_level_v) / delta_v) - 1
    k_lo = math.floor((-amplitude_v - phase_level_v) / delta_v) + 1
    levels = k_hi - k_lo + 1
    return max(0, 2 * (levels - 1))


@dataclass(frozen=True)
class AdaptationModelParams:
    rho: float
    tau_s: float

    def __post_init__(self):
        if not (self.rho >= 1):
            raise ValueError("rho must be >= 1")
        if not (self.tau_s > 0):
            raise ValueError("tau_s must be positive")


def sta_step_response(params: AdaptationModelParams, t_grid):
    """Unit-step response of ``rho (tau s + 1/rho) / (tau s + 1)``."""
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0):
        raise ValueError("t_grid must be non-negative")
    y = 1.0 + (params.rho - 1.0) * np.exp(-t / params.tau_s)
    return float(y) if y.ndim == 0 else y


# --- matched-budget baseline ----------------------------------------------------

def fixed_count(signals, delta_v: float, state: AdmChannelState | None = None, backend=None) -> int:
    """Total events over ``signals`` with a fixed threshold on the encoder described by ``state``."""
    state = state if state is not None else AdmChannelState.ideal()
    total = 0
    for sig in signals:
        total += len(adm_encode(state, sig, float(delta_v), backend=backend).events)
    return total


def matched_budget_delta(signals, target_count: int, *, state: AdmChannelState | None = None,
                         delta_lo_v: float | None = None, rtol: float = 1e-9, backend=None) -> float:
    """Fixed threshold whose total event count matches ``target_count``.

    Bisects (geometrically) for the smallest threshold giving at most
    ``target_count`` events; if the largest threshold just below it lands
    strictly closer to the target, that one is returned instead.
    """
    if isinstance(signals, AudioSignal):
        signals = [signals]
    signals = list(signals)
    if target_count < 0:
        raise ValueError("target_count must be >= 0")
    state = state if state is not None else AdmChannelState.ideal()
    if np.isfinite(state.delta_max_v):
        # thresholds outside the encoder's range would be clipped, so bisect inside it
        state = AdmChannelState(channel=state.channel, divider_gain=state.divider_gain,
                                dead_time_s=state.dead_time_s, spike_pulse_width_s=state.spike_pulse_width_s,
                                delta_min_v=np.finfo(float).tiny, delta_max_v=np.inf)
    span = max((s.peak_to_peak for s in signals), default=0.0) * state.divider_gain

    def count(d):
        return fixed_count(signals, d, state, backend)

    hi = span * 1.001 + 1e-12
    lo = delta_lo_v if delta_lo_v is not None else max(span * 1e-4, 1e-12)
    c_lo = count(lo)
    if c_lo < target_count:
        raise ValueError(f"target {target_count} unachievable: only {c_lo} events at delta={lo:.6g} V")
    if c_lo <= target_count:
        return lo
    c_hi = count(hi)
    while c_hi > target_count:
        hi *= 2.0
        c_hi = count(hi)
    while hi / lo - 1.0 > rtol:
        mid = math.sqrt(lo * hi)
        c = count(mid)
        if c > target_count:
            lo, c_lo = mid, c
        else:
            hi, c_hi = mid, c
    if abs(c_lo - target_count) < abs(c_hi - target_count):
        return lo
    return hi


# --- onsets and cochleagrams ------------------------------------------------------

def onset_window_counts(events: Events, onsets_s, window_s: float = ONSET_WINDOW_S) -> np.ndarray:
    """Event count in ``[onset, onset + window_s)`` for each onset, all channels pooled."""
    onsets = np.asarray(onsets_s, dtype=float)
    lo = np.floor(onsets * 1e9 + 0.5).astype(np.int64)
    hi = lo + int(round(window_s * 1e9))
    t = events.t_ns
    return np.searchsorted(t, hi, side="left") - np.searchsorted(t, lo, side="left")


class SalienceVerdict(NamedTuple):
    adaptive: np.ndarray
    baseline: np.ndarray
    passed: bool

    @property
    def n_strict(self) -> int:
        return int(np.count_nonzero(self.adaptive > self.baseline))


def onset_salience(adaptive: Events, baseline: Events, onsets_s, window_s: float = ONSET_WINDOW_S):
    a = onset_window_counts(adaptive, onsets_s, window_s)
    b = onset_window_counts(baseline, onsets_s, window_s)
    passed = bool(len(a) > 0 and np.all(a >= b) and np.any(a > b))
    return SalienceVerdict(a, b, passed)


def detect_onsets(sig: AudioSignal, window_s: float = DEFAULT_WINDOW_S, rel_threshold: float = 0.1,
                  min_gap_s: float = 0.05) -> np.ndarray:
    """Window starts where the RMS envelope rises through ``rel_threshold`` of its peak
    after at least ``min_gap_s`` below it."""
    env = rms_envelope(sig, window_s)
    v = env.values
    if not len(v) or v.max() == 0:
        return np.zeros(0)
    above = v >= rel_threshold * v.max()
    starts = env.t_start_s + np.arange(len(v)) * window_s
    onsets, quiet_since = [], -np.inf
    for i, a in enumerate(above):
        if a:
            if i == 0 or (not above[i - 1] and starts[i] - quiet_since >= min_gap_s - 1e-12):
                onsets.append(starts[i])
        elif i == 0 or above[i - 1]:
            quiet_since = starts[i]
    return np.array(onsets)


@dataclass(frozen=True, eq=False)
class Cochleagram:
    window_s: float
    t_start_s: float
    matrix: np.ndarray  # (n_channels, n_windows), rows scaled to max 1

    @property
    def n_channels(self) -> int:
        return self.matrix.shape[0]


def cochleagram(events: Events, n_channels: int, window_s: float, span) -> Cochleagram:
    rows = [spike_rate(events.for_channel(c), window_s, span).values for c in range(n_channels)]
    m = np.vstack(rows) if rows else np.zeros((0, 0))
    peak = m.max(axis=1, keepdims=True) if m.size else np.zeros((n_channels, 1))
    m = np.divide(m, peak, out=np.zeros_like(m), where=peak > 0)
    return Cochleagram(float(window_s), float(span[0]), m)


def onset_column_ratio(cg: Cochleagram, onsets_s, onset_window_s: float = ONSET_WINDOW_S,
                       active_mask=None) -> float:
    """Mean cochleagram value in onset columns over the mean in the other active columns.

    ``active_mask`` marks columns inside the stimulus; by default any column
    with a nonzero entry.
    """
    n = cg.matrix.shape[1]
    starts = cg.t_start_s + np.arange(n) * cg.window_s
    onset_cols = np.zeros(n, dtype=bool)
    for t in np.asarray(onsets_s, dtype=float):
        onset_cols |= (starts + cg.window_s > t) & (starts < t + onset_window_s)
    col_mean = cg.matrix.mean(axis=0) if cg.matrix.size else np.zeros(n)
    active = col_mean > 0 if active_mask is None else np.asarray(active_mask, bool)
    steady = active & ~onset_cols
    if not onset_cols.any() or not steady.any() or col_mean[steady].mean() == 0:
        return math.nan
    return float(col_mean[onset_cols].mean() / col_mean[steady].mean())


# --- CSV exports ------------------------------------------------------------------

def _g(x) -> str:
    return f"{x:.9g}"


def write_rate_csv(path, columns: dict, t_centers):
    """``columns`` maps a header name to a series aligned with ``t_centers``."""
    names = list(columns)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["t_center_s"] + names) + "\n")
        for i, t in enumerate(t_centers):
            fh.write(",".join([_g(t)] + [_g(columns[k][i]) for k in names]) + "\n")


def write_cochleagram_csv(path, cg: Cochleagram):
    starts = cg.t_start_s + np.arange(cg.matrix.shape[1]) * cg.window_s
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["channel"] + [_g(s) for s in starts]) + "\n")
        for c, row in enumerate(cg.matrix):
            fh.write(",".join([str(c)] + [_g(v) for v in row]) + "\n")


def write_pearson_csv(path, summaries):
    with open(path, "w", newline="") as fh:
        fh.write("label,r_full,r_onset,n_windows,degenerate\n")
        for s in summaries:
            fh.write(f"{s.label},{_g(s.r_full)},{_g(s.r_onset)},{s.n_windows},{int(s.degenerate)}\n")
