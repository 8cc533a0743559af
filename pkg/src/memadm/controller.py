"""Closed-loop threshold adaptation.

Each channel's spikes are counted between edges of a comparison clock. At an
edge, every channel whose count reached ``thr_hit`` has its threshold held,
its device disconnected and pulsed, and then reconnected. Between pulses the
device relaxes on its own, lowering the threshold again.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, NamedTuple

import numpy as np

from . import kernels
from .events import Events
from .frontend import ThresholdGenConfig, delta_from_current
from .memristor import program_device, read_current

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerConfig:
    cmp_clk_hz: float = 100.0
    thr_hit: int = 50
    v_sti: float = 2.5
    pw_s: float = 5e-3
    switch_guard_s: float = 10e-6
    count_polarity: Literal["both", "positive_only"] = "both"
    phase_s: float = 0.0

    def __post_init__(self):
        if not (self.cmp_clk_hz > 0):
            raise ValueError("cmp_clk_hz must be positive")
        if self.thr_hit < 1:
            raise ValueError("thr_hit must be >= 1")
        if self.pw_s < 0:
            raise ValueError("pw_s must be non-negative")
        if self.switch_guard_s < 0:
            raise ValueError("switch_guard_s must be non-negative")
        if self.count_polarity not in ("both", "positive_only"):
            raise ValueError(f"unknown count_polarity {self.count_polarity!r}")
        if not (0 <= self.phase_s < 1.0 / self.cmp_clk_hz):
            raise ValueError("phase_s must lie within one clock period")

    @property
    def period_s(self) -> float:
        return 1.0 / self.cmp_clk_hz


class SwitchStep(NamedTuple):
    time_s: float
    switch: str
    action: str


@dataclass(frozen=True)
class SwitchSchedule:
    """Programming sequence for one channel.

    The threshold is held from ``hold_start_s`` to ``hold_end_s``; the device is
    off-chip from ``disconnect_s`` to ``reconnect_s`` and sees the pulse over
    ``[pulse_start_s, pulse_end_s]``.
    """

    steps: tuple
    hold_start_s: float
    hold_end_s: float
    pulse_start_s: float
    pulse_end_s: float

    @property
    def hold_window_s(self) -> float:
        return self.hold_end_s - self.hold_start_s


def sequence_switches(t: float, cfg: ControllerConfig) -> SwitchSchedule:
    g, pw = cfg.switch_guard_s, cfg.pw_s
    steps = (
        SwitchStep(t, "S1", "open"),            # sample-and-hold the threshold bias
        SwitchStep(t + g, "S2", "open"),        # device off the chip
        SwitchStep(t + g, "S3", "close"),       # device onto the pulse driver
        SwitchStep(t + g, "pulse", "start"),
        SwitchStep(t + g + pw, "pulse", "end"),
        SwitchStep(t + g + pw, "S3", "open"),
        SwitchStep(t + g + pw, "S2", "close"),
        SwitchStep(t + 2 * g + pw, "S1", "close"),
    )
    return SwitchSchedule(steps, t, t + 2 * g + pw, t + g, t + g + pw)


class ChannelCounters:
    """Spike counters, read and cleared at every comparison-clock edge."""

    def __init__(self, n_channels: int):
        self.counts = np.zeros(n_channels, dtype=np.int64)

    def add(self, channel: int, n: int):
        self.counts[channel] += n

    def evaluate(self, thr_hit: int) -> list[int]:
        selected = [int(c) for c in np.flatnonzero(self.counts >= thr_hit)]
        self.counts[:] = 0
        return selected


def evaluate_counters(counters: ChannelCounters, cfg: ControllerConfig) -> list[int]:
    """Channels whose count reached ``thr_hit`` (inclusive); clears all counters."""
    return counters.evaluate(cfg.thr_hit)


@dataclass(frozen=True)
class ProgrammingEvent:
    t_start_s: float
    t_end_s: float
    channel: int
    v_sti: float
    pw_s: float
    i_before_a: float
    i_after_a: float
    gain: float
    trigger_count: int
    delta_held_v: float
    delta_pre_v: float
    delta_post_v: float
    schedule: SwitchSchedule = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class DroppedTrigger:
    time_s: float
    channel: int
    count: int


@dataclass
class AdaptiveResult:
    events: Events
    programming_log: list
    delta_traces: np.ndarray  # (n_channels, n_samples), node volts
    t_s: np.ndarray
    # (n_windows, n_channels): counts seen at each edge, plus a final row for the
    # trailing partial window when the record does not end on an edge
    window_counts: np.ndarray
    edges_s: np.ndarray
    dropped_triggers: list
    devices: list
    adm_states: list


class _Lane:
    """Mutable per-channel simulation state."""

    def __init__(self, index, sig, device, adm):
        self.index = index
        self.x = sig.samples
        self.device = device
        self.adm = adm
        self.v_track = float(self.x[0]) if adm.v_track is None else adm.v_track
        self.t_resume = adm.t_resume_s
        self.last_ns = adm.last_t_ns
        self.hold = None  # (start, end, value)
        self.events_t = []
        self.events_p = []


def run_adaptive(
    channels,
    cfg: ControllerConfig,
    threshold_cfg: ThresholdGenConfig | None = None,
    *,
    threads: int = 1,
    backend: str | None = None,
    jitter_sigma_v: float = 0.0,
    seed: int = 0,
) -> AdaptiveResult:
    """Simulate the closed loop over ``channels`` = [(AudioSignal, DeviceState, AdmChannelState)].

    Time advances one comparison-clock period at a time. Within a period each
    channel is encoded independently (optionally on ``threads`` workers); the
    counter evaluation and any programming happen serially at the edge.
    ``jitter_sigma_v`` adds Gaussian noise to the threshold, drawn from one
    generator per channel so the result does not depend on ``threads``.
    """
    threshold_cfg = threshold_cfg or ThresholdGenConfig()
    if not channels:
        raise ValueError("need at least one channel")
    sig0 = channels[0][0]
    for sig, _, _ in channels:
        if (sig.sample_rate_hz != sig0.sample_rate_hz or sig.t0_s != sig0.t0_s or len(sig) != len(sig0)):
            raise ValueError("all channel signals must share one time base")
    n = len(sig0)
    rate, t0 = sig0.sample_rate_hz, sig0.t0_s
    dt = 1.0 / rate
    t = t0 + np.arange(n) / rate
    t_last = t[-1] if n else t0
    lanes = [_Lane(i, s, d, a) for i, (s, d, a) in enumerate(channels)]
    rngs = [np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(len(lanes))]
    n_ch = len(lanes)
    traces = np.zeros((n_ch, n))

    period = cfg.period_s
    n_edges = int(math.floor((t_last - t0 - cfg.phase_s) / period + 1e-9)) if n else 0
    edges = t0 + cfg.phase_s + period * np.arange(1, n_edges + 1)
    edges = edges[edges > t0]
    # chunk k covers samples [bounds[k], bounds[k+1]); every chunk after an edge starts at t >= edge
    bounds = [0] + np.minimum(np.searchsorted(t, edges, side="left"), max(n - 1, 0)).tolist() + [max(n - 1, 0)]

    counters = ChannelCounters(n_ch)
    carry = np.zeros(n_ch, dtype=np.int64)
    window_counts = []
    programming_log = []
    dropped = []

    def delta_at(lane, ts):
        delta = np.empty(len(ts))
        free = np.ones(len(ts), dtype=bool)
        if lane.hold is not None:
            h0, h1, hv = lane.hold
            held = (ts >= h0) & (ts < h1)
            delta[held] = hv
            free = ~held
        if free.any():
            delta[free] = delta_from_current(threshold_cfg, read_current(lane.device, ts[free]))
        return np.clip(delta, lane.adm.delta_min_v, lane.adm.delta_max_v)

    def encode_chunk(lane, a, b):
        if b <= a:
            return np.zeros(0, np.int64), np.zeros(0, np.int8)
        delta = delta_at(lane, t[a:b])
        if jitter_sigma_v > 0:
            delta = np.clip(delta + rngs[lane.index].normal(0.0, jitter_sigma_v, b - a),
                            lane.adm.delta_min_v, lane.adm.delta_max_v)
        traces[lane.index, a:b] = delta
        t_ns, pol, lane.v_track, lane.t_resume, lane.last_ns = kernels.adm_walk(
            lane.x[a:b + 1], delta, t0=t0, dt=dt, i0=a, gain=lane.adm.divider_gain,
            dead_time=lane.adm.dead_time_s, v_track=lane.v_track, t_resume=lane.t_resume,
            last_ns=lane.last_ns, backend=backend,
        )
        lane.events_t.append(t_ns)
        lane.events_p.append(pol)
        return t_ns, pol

    def tally(results, edge_ns):
        counters.counts[:] += carry
        carry[:] = 0
        for lane, (t_ns, pol) in zip(lanes, results):
            counted = pol > 0 if cfg.count_polarity == "positive_only" else np.ones(len(pol), bool)
            before = t_ns < edge_ns
            counters.add(lane.index, int(np.count_nonzero(counted & before)))
            carry[lane.index] = int(np.count_nonzero(counted & ~before))
        window_counts.append(counters.counts.copy())

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for k in range(len(bounds) - 1):
            a, b = bounds[k], bounds[k + 1]
            if pool is not None:
                results = list(pool.map(lambda ln: encode_chunk(ln, a, b), lanes))
            else:
                results = [encode_chunk(ln, a, b) for ln in lanes]
            if k >= len(edges):
                # trailing partial window: tallied for conservation, never evaluated
                tally(results, np.iinfo(np.int64).max)
                continue
            edge = float(edges[k])
            tally(results, int(math.floor(edge * 1e9 + 0.5)))
            counts_at_edge = counters.counts.copy()
            for ch in evaluate_counters(counters, cfg):
                lane = lanes[ch]
                count = int(counts_at_edge[ch])
                if lane.hold is not None and edge < lane.hold[1]:
                    dropped.append(DroppedTrigger(edge, ch, count))
                    log.info("channel %d: trigger at %.6f s dropped (programming in progress)", ch, edge)
                    continue
                programming_log.append(_program(lane, edge, cfg, threshold_cfg, count))
    finally:
        if pool is not None:
            pool.shutdown()
    if n:
        for lane in lanes:
            traces[lane.index, -1] = delta_at(lane, t[-1:])[0]

    parts = []
    for lane in lanes:
        t_ns = np.concatenate(lane.events_t) if lane.events_t else np.zeros(0, np.int64)
        pol = np.concatenate(lane.events_p) if lane.events_p else np.zeros(0, np.int8)
        parts.append(Events.single_channel(t_ns, pol, lane.index))
    adm_states = [
        replace(lane.adm, v_track=lane.v_track, t_resume_s=lane.t_resume, last_t_ns=lane.last_ns,
                delta_v=float(traces[lane.index, -1]) if n else lane.adm.delta_v)
        for lane in lanes
    ]
    return AdaptiveResult(
        events=Events.merge(parts),
        programming_log=programming_log,
        delta_traces=traces,
        t_s=t,
        window_counts=np.array(window_counts, dtype=np.int64).reshape(-1, n_ch),
        edges_s=np.asarray(edges, dtype=float),
        dropped_triggers=dropped,
        devices=[lane.device for lane in lanes],
        adm_states=adm_states,
    )


def _program(lane, edge, cfg, threshold_cfg, count) -> ProgrammingEvent:
    sched = sequence_switches(float(edge), cfg)
    held = float(np.clip(delta_from_current(threshold_cfg, read_current(lane.device, sched.hold_start_s)),
                         lane.adm.delta_min_v, lane.adm.delta_max_v))
    outcome = program_device(lane.device, sched.pulse_start_s, cfg.v_sti, cfg.pw_s)
    lane.device = outcome.state
    lane.hold = (sched.hold_start_s, sched.hold_end_s, held)
    gain = outcome.i_after_a / outcome.i_before_a
    delta_post = float(delta_from_current(threshold_cfg, read_current(lane.device, sched.hold_end_s)))
    return ProgrammingEvent(
        t_start_s=sched.hold_start_s,
        t_end_s=sched.hold_end_s,
        channel=lane.index,
        v_sti=cfg.v_sti,
        pw_s=cfg.pw_s,
        i_before_a=outcome.i_before_a,
        i_after_a=outcome.i_after_a,
        gain=gain,
        trigger_count=count,
        delta_held_v=held,
        delta_pre_v=float(delta_from_current(threshold_cfg, outcome.i_before_a)),
        delta_post_v=delta_post,
        schedule=sched,
    )
