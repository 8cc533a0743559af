"""End-to-end runs: stimulus -> filterbank -> adaptive loop -> metrics -> files."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics
from .config import RunConfig, manifest
from .controller import AdaptiveResult, run_adaptive
from .errors import SignalError
from .events import Events
from .filterbank import apply_filterbank, design_gammatone_bank
from .frontend import adm_encode, delta_from_current
from .memristor import (DeviceState, fit_biexponential, program_device, read_current, sample_population,
                        write_population_csv)
from .signals import AudioSignal, burst_onsets, resample_linear, synthesize

log = logging.getLogger(__name__)


def _g(x) -> str:
    return f"{x:.9g}"


@dataclass(frozen=True)
class Seeds:
    stimulus: int
    population: int
    jitter: int


def derive_seeds(seed: int | None) -> Seeds:
    """Independent child seeds for every random consumer, all from the one run seed."""
    children = np.random.SeedSequence(0 if seed is None else seed).spawn(3)
    s = [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]
    return Seeds(*s)


# --- stages -------------------------------------------------------------------

@dataclass
class Stimulus:
    signal: AudioSignal  # at the ADM rate
    onsets_s: np.ndarray


def make_stimulus(cfg: RunConfig) -> Stimulus:
    st = cfg.stimulus
    seeds = derive_seeds(cfg.seed)
    spec = st.to_spec(seeds.stimulus)
    if st.kind == "file":
        sig = synthesize(spec, st.duration_s, st.rate_hz)
    else:
        # synthesize straight at the simulation rate; no interpolation images
        sig = synthesize(spec, st.duration_s, cfg.frontend.adm_rate_hz)
    sig = resample_linear(sig, cfg.frontend.adm_rate_hz)
    if st.kind == "burst_train":
        onsets = burst_onsets(spec, sig.duration_s)
    else:
        onsets = metrics.detect_onsets(sig, cfg.metrics.rate_window_s)
    return Stimulus(sig, np.asarray(onsets, dtype=float))


def filter_channels(cfg: RunConfig, sig: AudioSignal) -> list[AudioSignal]:
    fb = cfg.filterbank
    bank = design_gammatone_bank(fb.to_config(), sig.sample_rate_hz)
    outs = apply_filterbank(bank, sig)
    half = 0.5 * fb.full_scale_vpp
    if fb.normalize == "none":
        return outs
    peaks = np.array([float(np.max(np.abs(o.samples))) if len(o) else 0.0 for o in outs])
    if fb.normalize == "joint":
        top = peaks.max() if len(peaks) else 0.0
        gains = np.full(len(outs), half / top if top > 0 else 0.0)
    else:
        gains = np.divide(half, peaks, out=np.zeros_like(peaks), where=peaks > 0)
    return [o.with_samples(o.samples * g) for o, g in zip(outs, gains)]


def make_devices(cfg: RunConfig, n: int) -> list[DeviceState]:
    if cfg.device.sampled:
        spec = cfg.device.population(n, derive_seeds(cfg.seed).population)
        return [DeviceState.fresh(p) for p in sample_population(spec)]
    params = cfg.device.to_params()
    return [DeviceState.fresh(params) for _ in range(n)]


def run_encode(cfg: RunConfig, *, threads: int = 1, backend=None):
    stim = make_stimulus(cfg)
    chans = filter_channels(cfg, stim.signal)
    devices = make_devices(cfg, len(chans))
    lanes = [(s, d, cfg.frontend.channel_state(i)) for i, (s, d) in enumerate(zip(chans, devices))]
    result = run_adaptive(lanes, cfg.controller.to_config(), cfg.frontend.threshold_config(),
                          threads=threads, backend=backend, jitter_sigma_v=cfg.frontend.jitter_sigma_v,
                          seed=derive_seeds(cfg.seed).jitter)
    return stim, chans, result


def run_baseline(cfg: RunConfig, chans, target_count: int, *, backend=None):
    """Fixed-threshold encoding of ``chans`` with the total event count matched to ``target_count``."""
    proto = cfg.frontend.channel_state(0)
    delta = metrics.matched_budget_delta(chans, target_count, state=proto, backend=backend)
    free = replace(proto, delta_min_v=np.finfo(float).tiny, delta_max_v=np.inf)
    parts = [adm_encode(replace(free, channel=i), s, delta, backend=backend).events
             for i, s in enumerate(chans)]
    return delta, Events.merge(parts)


# --- writers ---------------------------------------------------------------------

def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_text("")
    probe.unlink()
    return out


def write_manifest(out: Path, cfg: RunConfig, command: str):
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, command), indent=2, sort_keys=True) + "\n")


def write_events(out: Path, events: Events, n_channels: int, prefix: str = "events"):
    for c in range(n_channels):
        ev = events.for_channel(c)
        ev.to_csv(out / f"{prefix}_ch{c}.csv")
        ev.to_binary(out / f"{prefix}_ch{c}.bin")


def write_programming_log(path, log_entries):
    with open(path, "w", newline="") as fh:
        fh.write("t_start_s,channel,v_sti,pw_s,i_before_a,i_after_a,gain\n")
        for p in log_entries:
            fh.write(f"{_g(p.t_start_s)},{p.channel},{_g(p.v_sti)},{_g(p.pw_s)},"
                     f"{_g(p.i_before_a)},{_g(p.i_after_a)},{_g(p.gain)}\n")


def write_dropped(path, dropped):
    with open(path, "w", newline="") as fh:
        fh.write("time_s,channel,count\n")
        for d in dropped:
            fh.write(f"{_g(d.time_s)},{d.channel},{d.count}\n")


def write_delta_traces(path, result: AdaptiveResult, decimation: int):
    idx = np.arange(0, len(result.t_s), decimation)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["t_s"] + [f"delta_ch{c}_v" for c in range(result.delta_traces.shape[0])]) + "\n")
        for i in idx:
            fh.write(",".join([_g(result.t_s[i])] + [_g(v) for v in result.delta_traces[:, i]]) + "\n")


def _rate_columns(events, n_channels, window_s, span, label=""):
    cols = {}
    for c in range(n_channels):
        cols[f"{label}rate_ch{c}"] = metrics.spike_rate(events.for_channel(c), window_s, span).values
    total = metrics.spike_rate(events, window_s, span)
    cols[f"{label}rate_total"] = total.values
    return cols, total.t_centers


# --- commands ----------------------------------------------------------------------

def cmd_encode(cfg: RunConfig, out, *, threads: int = 1, backend=None) -> dict:
    out = _out_dir(out)
    stim, chans, result = run_encode(cfg, threads=threads, backend=backend)
    n_ch = len(chans)
    span = metrics.record_span(stim.signal)
    m = cfg.metrics
    write_events(out, result.events, n_ch)
    write_delta_traces(out / "delta_traces.csv", result, m.trace_decimation)
    write_programming_log(out / "programming_log.csv", result.programming_log)
    write_dropped(out / "dropped_triggers.csv", result.dropped_triggers)
    cols, centers = _rate_columns(result.events, n_ch, m.rate_window_s, span)
    cols["input_rms_v"] = metrics.rms_envelope(stim.signal, m.rate_window_s).values
    metrics.write_rate_csv(out / "rates.csv", cols, centers)
    cg = metrics.cochleagram(result.events, n_ch, m.cochleagram_window_s, span)
    metrics.write_cochleagram_csv(out / "cochleagram.csv", cg)
    write_manifest(out, cfg, "encode")
    return {"n_events": len(result.events), "n_programming": len(result.programming_log),
            "n_dropped": len(result.dropped_triggers), "n_channels": n_ch}


@dataclass
class Comparison:
    adaptive: Events
    baseline: Events
    baseline_delta_v: float | None
    pearson: list
    salience: metrics.SalienceVerdict | None
    onset_ratio_adaptive: float
    onset_ratio_baseline: float
    onsets_s: np.ndarray
    degenerate: bool
    result: AdaptiveResult
    stimulus: Stimulus


def compare(cfg: RunConfig, *, threads: int = 1, backend=None) -> Comparison:
    stim, chans, result = run_encode(cfg, threads=threads, backend=backend)
    target = len(result.events)
    m = cfg.metrics
    if target == 0:
        delta, baseline = None, Events.empty()
    else:
        delta, baseline = run_baseline(cfg, chans, target, backend=backend)
    degenerate = target == 0 or len(baseline) == 0
    pear = [metrics.pearson_summary("adaptive", result.events, stim.signal, m.rate_window_s, m.onset_period_s),
            metrics.pearson_summary("baseline", baseline, stim.signal, m.rate_window_s, m.onset_period_s)]
    salience = None
    if len(stim.onsets_s):
        salience = metrics.onset_salience(result.events, baseline, stim.onsets_s, m.onset_window_s)
    span = metrics.record_span(stim.signal)
    n_ch = len(chans)
    cg_a = metrics.cochleagram(result.events, n_ch, m.cochleagram_window_s, span)
    cg_b = metrics.cochleagram(baseline, n_ch, m.cochleagram_window_s, span)
    env = metrics.rms_envelope(stim.signal, m.cochleagram_window_s).values
    active = env > 0.1 * env.max() if len(env) and env.max() > 0 else None
    ratio_a = metrics.onset_column_ratio(cg_a, stim.onsets_s, m.onset_window_s, active)
    ratio_b = metrics.onset_column_ratio(cg_b, stim.onsets_s, m.onset_window_s, active)
    return Comparison(result.events, baseline, delta, pear, salience, ratio_a, ratio_b, stim.onsets_s,
                      degenerate, result, stim)


def cmd_compare(cfg: RunConfig, out, *, threads: int = 1, backend=None) -> dict:
    out = _out_dir(out)
    cmp = compare(cfg, threads=threads, backend=backend)
    m = cfg.metrics
    n_ch = cfg.filterbank.n_channels
    span = metrics.record_span(cmp.stimulus.signal)
    write_events(out, cmp.adaptive, n_ch, "adaptive_events")
    write_events(out, cmp.baseline, n_ch, "baseline_events")
    write_programming_log(out / "programming_log.csv", cmp.result.programming_log)
    cols_a, centers = _rate_columns(cmp.adaptive, n_ch, m.rate_window_s, span, "adaptive_")
    cols_b, _ = _rate_columns(cmp.baseline, n_ch, m.rate_window_s, span, "baseline_")
    cols = {**cols_a, **cols_b, "input_rms_v": metrics.rms_envelope(cmp.stimulus.signal, m.rate_window_s).values}
    metrics.write_rate_csv(out / "rates_compare.csv", cols, centers)
    metrics.write_pearson_csv(out / "pearson.csv", cmp.pearson)
    metrics.write_cochleagram_csv(out / "cochleagram_adaptive.csv",
                                  metrics.cochleagram(cmp.adaptive, n_ch, m.cochleagram_window_s, span))
    metrics.write_cochleagram_csv(out / "cochleagram_baseline.csv",
                                  metrics.cochleagram(cmp.baseline, n_ch, m.cochleagram_window_s, span))
    with open(out / "onset_salience.csv", "w", newline="") as fh:
        fh.write("onset_s,adaptive_count,baseline_count\n")
        if cmp.salience is not None:
            for t, a, b in zip(cmp.onsets_s, cmp.salience.adaptive, cmp.salience.baseline):
                fh.write(f"{_g(t)},{a},{b}\n")
    report = {
        "adaptive_total": len(cmp.adaptive),
        "baseline_total": len(cmp.baseline),
        "baseline_delta_v": None if cmp.baseline_delta_v is None else float(_g(cmp.baseline_delta_v)),
        "degenerate": cmp.degenerate,
        "pearson": {p.label: {"r_full": _num(p.r_full), "r_onset": _num(p.r_onset)} for p in cmp.pearson},
        "onset_salience_pass": None if cmp.salience is None else cmp.salience.passed,
        "onset_column_ratio": {"adaptive": _num(cmp.onset_ratio_adaptive),
                               "baseline": _num(cmp.onset_ratio_baseline)},
        "onset_column_factor": m.onset_column_factor,
    }
    (out / "compare_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, cfg, "compare")
    return report


def _num(x):
    return None if x is None or not math.isfinite(x) else float(_g(x))


# --- device characterisation ---------------------------------------------------------

def characterize_device(cfg: RunConfig):
    """Apply the configured pulse list to one nominal device and fit its relaxation."""
    ch = cfg.characterize
    params = cfg.device.to_params()
    dev = DeviceState.fresh(params)
    rows = []
    for p in ch.pulses:
        outcome = program_device(dev, p.t_s, p.v_sti, p.pw_s)
        dev = outcome.state
        gain = outcome.i_after_a / outcome.i_before_a
        rows.append((p.t_s, p.v_sti, p.pw_s, outcome.i_before_a, outcome.i_after_a, outcome.delta_i_a, gain))
    start = dev.last_program_time_s if ch.pulses else 0.0
    start = 0.0 if not math.isfinite(start) else start
    n = int(round(ch.record_after_s / ch.read_interval_s)) + 1
    t = start + np.arange(n) * ch.read_interval_s
    i = read_current(dev, t)
    fit = fit_biexponential(t, i)
    return rows, t, i, fit, params


def cmd_characterize_device(cfg: RunConfig, out) -> dict:
    out = _out_dir(out)
    rows, t, i, fit, params = characterize_device(cfg)
    with open(out / "pulses.csv", "w", newline="") as fh:
        fh.write("t_s,v_sti,pw_s,i_before_a,i_after_a,delta_i_a,gain\n")
        for r in rows:
            fh.write(",".join(_g(v) for v in r) + "\n")
    with open(out / "relaxation.csv", "w", newline="") as fh:
        fh.write("t_s,i_a,delta_v\n")
        deltas = delta_from_current(cfg.frontend.threshold_config(), i)
        for a, b, d in zip(t, i, np.atleast_1d(deltas)):
            fh.write(f"{_g(a)},{_g(b)},{_g(d)}\n")
    n_dev = cfg.characterize.n_devices
    pop = sample_population(cfg.device.population(n_dev, derive_seeds(cfg.seed).population))
    write_population_csv(pop, out / "population.csv")
    report = {
        "n_pulses": len(rows),
        "delta_i_a": [float(_g(r[5])) for r in rows],
        "gain": [float(_g(r[6])) for r in rows],
        "fit": {"i_inf_a": _num(fit.i_inf), "a1_a": _num(fit.a1), "tau1_s": _num(fit.tau1),
                "a2_a": _num(fit.a2), "tau2_s": _num(fit.tau2), "residual_rms_a": _num(fit.residual_rms),
                "message": fit.message},
        "configured": {"tau1_s": params.tau1_s, "tau2_s": params.tau2_s, "i_hrs_a": params.i_hrs_a},
    }
    (out / "device_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, cfg, "characterize-device")
    return report


# --- rate sweep ------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    current_a: float
    delta_v: float
    delta_eff_v: float
    count: int
    theoretical_count: float
    rel_error: float
    lattice_count: float
    eligible: bool
    within_tol: bool


def rate_sweep(cfg: RunConfig, *, backend=None) -> list[SweepRow]:
    """Encode a full-scale tone once per threshold current and compare with the rate law.

    Counts cover ``window_s`` from the tone's zero crossing; the tone amplitude
    and the threshold are compared at the comparator node (after the divider).
    ``lattice_count`` is the exact count of the level lattice anchored at the
    first sample, ``2 * (levels - 1)`` per period, which the rate law
    approximates for small thresholds.
    """
    rs = cfg.rate_sweep
    fe = cfg.frontend
    tcfg = fe.threshold_config()
    if rs.rate_hz < 10 * rs.frequency_hz:
        raise SignalError("rate_sweep.rate_hz must be at least 10x the tone frequency")
    n = int(round(rs.window_s * rs.rate_hz)) + 1
    t = np.arange(n) / rs.rate_hz
    amp = 0.5 * rs.amplitude_vpp
    sig = AudioSignal(rs.rate_hz, amp * np.sin(2 * np.pi * rs.frequency_hz * t))
    state = fe.channel_state(0)
    rows = []
    for i_a in rs.currents():
        delta = float(delta_from_current(tcfg, i_a))
        count = len(adm_encode(state, sig, delta, backend=backend).events)
        delta_eff = delta / fe.divider_gain
        expected = metrics.theoretical_rate(amp, rs.frequency_hz, delta_eff) * rs.window_s
        rel = (count - expected) / expected if expected > 0 else math.nan
        lattice = metrics.lattice_count_per_period(amp, delta_eff) * rs.frequency_hz * rs.window_s
        eligible = count >= rs.min_count
        rows.append(SweepRow(i_a, delta, delta_eff, count, expected, rel, lattice, eligible,
                             bool(abs(rel) <= rs.tolerance)))
    return rows


def cmd_rate_sweep(cfg: RunConfig, out, *, backend=None) -> dict:
    out = _out_dir(out)
    rows = rate_sweep(cfg, backend=backend)
    with open(out / "rate_sweep.csv", "w", newline="") as fh:
        fh.write("current_a,delta_v,delta_eff_v,count,theoretical_count,rel_error,lattice_count,"
                 "eligible,within_tol\n")
        for r in rows:
            fh.write(f"{_g(r.current_a)},{_g(r.delta_v)},{_g(r.delta_eff_v)},{r.count},"
                     f"{_g(r.theoretical_count)},{_g(r.rel_error)},{_g(r.lattice_count)},"
                     f"{int(r.eligible)},{int(r.within_tol)}\n")
    write_manifest(out, cfg, "rate-sweep")
    eligible = [r for r in rows if r.eligible]
    return {"n_points": len(rows), "n_eligible": len(eligible),
            "all_eligible_within_tol": all(r.within_tol for r in eligible)}
