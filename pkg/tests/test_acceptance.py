"""End-to-end acceptance checks.

Each test records a one-line verdict in ``conftest.ACCEPTANCE`` (printed in the
pytest summary) before asserting. Run this file directly to get the same lines
without pytest.
"""
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import signal as sps
from scipy.integrate import solve_ivp

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE  # noqa: E402

from memadm import pipeline  # noqa: E402
from memadm.cli import run  # noqa: E402
from memadm.config import validate_config  # noqa: E402
from memadm.controller import ControllerConfig, run_adaptive  # noqa: E402
from memadm.frontend import (AdmChannelState, ThresholdGenConfig, adm_encode, delta_from_current,  # noqa: E402
                             reconstruct, threshold_from_current)
from memadm.memristor import (DeviceParams, DeviceState, PopulationSpec, fit_biexponential,  # noqa: E402
                              program_device, read_current, sample_population)
from memadm.metrics import AdaptationModelParams, sta_step_response, window_counts  # noqa: E402
from memadm.signals import AudioSignal, SignalSpec, synth_sine  # noqa: E402

pytestmark = pytest.mark.acceptance


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)


def test_ac1_rate_law():
    cfg = validate_config({})
    t0 = time.perf_counter()
    rows = pipeline.rate_sweep(cfg)
    elapsed = time.perf_counter() - t0
    eligible = [r for r in rows if r.eligible]
    worst = max(eligible, key=lambda r: abs(r.rel_error)) if eligible else None
    n_ok = sum(r.within_tol for r in eligible)
    ok = bool(eligible) and n_ok == len(eligible) and elapsed < 30.0
    detail = (f"{n_ok}/{len(eligible)} eligible points within 2% of 4Af/delta; "
              f"worst {worst.rel_error:+.1%} at {worst.current_a * 1e6:.3f} uA; {elapsed:.1f} s"
              if worst else "no eligible points")
    record("AC1", ok, detail)
    assert ok, detail


def test_ac2_threshold_transfer():
    cfg = ThresholdGenConfig()
    g = cfg.g_tia_ohms
    i = np.linspace(0.0, 1.5e-6, 20001)
    d = np.asarray(delta_from_current(cfg, i))
    lin = (g * i > cfg.delta_min_v) & (g * i < cfg.delta_max_v)
    lin_err = float(np.max(np.abs(d[lin] / (g * i[lin]) - 1.0)))
    ok_lin = lin_err <= 1e-9
    ok_clip = bool(np.all(d[g * i <= cfg.delta_min_v] == cfg.delta_min_v)
                   and np.all(d[g * i >= cfg.delta_max_v] == cfg.delta_max_v))
    edges_ok = True
    for level in (cfg.delta_min_v, cfg.delta_max_v):
        i_edge = level / g
        for k in range(-4, 5):
            ik = i_edge + k * np.spacing(i_edge)
            expect = min(max(g * ik, cfg.delta_min_v), cfg.delta_max_v)
            edges_ok &= delta_from_current(cfg, ik) == expect
            edges_ok &= cfg.delta_min_v <= delta_from_current(cfg, ik) <= cfg.delta_max_v
    sym = all(p.v_th_p + p.v_th_n == 2 * cfg.v_cm for p in (threshold_from_current(cfg, x) for x in i[::500]))
    ok = ok_lin and ok_clip and edges_ok and sym
    record("AC2", ok, f"max linear rel err {lin_err:.1e}; clipping {ok_clip}; boundary ulps {edges_ok}; "
                      f"symmetry {sym}")
    assert ok


def test_ac3_device_dynamics():
    params = DeviceParams()
    out = program_device(DeviceState.fresh(params), 0.0, 2.5, 5e-3)
    t = out.onset_s + np.arange(2501) * 1e-4
    fit = fit_biexponential(t, read_current(out.state, t))
    e1 = abs(fit.tau1 / params.tau1_s - 1)
    e2 = abs(fit.tau2 / params.tau2_s - 1)
    i_5tau = read_current(out.state, out.onset_s + 5 * params.tau1_s)
    relax = abs(i_5tau - params.i_hrs_a) / params.i_hrs_a
    gain_exact = out.i_after_a / out.i_before_a == 2.0
    spec = PopulationSpec(n_devices=18, i_hrs_sigma=0.2, tau1_sigma=0.1, tau2_sigma=0.1, rng_seed=7)
    det = sample_population(spec) == sample_population(spec)
    ok = e1 <= 0.05 and e2 <= 0.05 and relax <= 0.01 and gain_exact and det
    record("AC3", ok, f"tau1 err {e1:.1e}, tau2 err {e2:.1e}; residual at 5 tau1 {relax:.2%}; "
                      f"gain exact {gain_exact}; population deterministic {det}")
    assert ok


def test_ac4_reconstruction():
    rate, f, delta = 1e6, 1000.0, 0.1
    sig = synth_sine(SignalSpec(amplitude_vpp=1.5, frequency_hz=f), 0.02, rate)
    state = AdmChannelState()
    enc = adm_encode(state, sig, delta)
    delta_eff = delta / state.divider_gain
    rec = reconstruct(enc.events, delta, float(sig.samples[0]), rate_hz=rate, n_samples=len(sig),
                      divider_gain=state.divider_gain)
    err = float(np.max(np.abs(rec.samples - sig.samples)))
    x = sig.samples - sig.samples.mean()
    y = rec.samples - rec.samples.mean()
    lags = sps.correlation_lags(len(y), len(x))
    lag = int(lags[np.argmax(sps.correlate(y, x))])
    rec_c = reconstruct(enc.events, delta, float(sig.samples[0]), rate_hz=rate, n_samples=len(sig),
                        divider_gain=state.divider_gain, centered=True)
    yc = rec_c.samples - rec_c.samples.mean()
    lag_c = int(lags[np.argmax(sps.correlate(yc, x))])
    ok = err <= 1.5 * delta_eff and abs(lag) <= 1
    record("AC4", ok, f"max error {err / delta_eff:.3f} delta_eff (limit 1.5); staircase lag {lag} steps "
                      f"(limit 1); centered decoder lag {lag_c} steps (info)")
    assert ok


def test_ac5_adaptation_loop():
    rate = 160e3
    tau1 = DeviceParams().tau1_s
    t = np.arange(int(0.6 * rate)) / rate
    on = ((t >= 0.05) & (t < 0.15)) | ((t >= 0.15 + 5 * tau1 + 0.05) & (t < 0.55))
    sig = AudioSignal(rate, 0.75 * np.sin(2 * np.pi * 1000.0 * t) * on)
    cfg = ControllerConfig()
    tcfg = ThresholdGenConfig()
    r = run_adaptive([(sig, DeviceState.fresh(), AdmChannelState())], cfg, tcfg)
    log = r.programming_log
    # independent window counts straight from the event times
    period = 1.0 / cfg.cmp_clk_hz
    counts = window_counts(r.events, period, (0.0, sig.duration_s))
    first_hit = int(np.argmax(counts >= cfg.thr_hit))
    first_ok = bool(log) and math.isclose(log[0].t_start_s, (first_hit + 1) * period, abs_tol=1e-12) \
        and log[0].trigger_count == counts[first_hit]
    post_err, mono = 0.0, True
    for k, p in enumerate(log):
        i = np.searchsorted(r.t_s, p.t_end_s)
        lin = tcfg.delta_min_v < p.gain * p.delta_pre_v < tcfg.delta_max_v
        if lin:
            post_err = max(post_err, abs(r.delta_traces[0, i] / (p.gain * p.delta_pre_v) - 1))
        stop = np.searchsorted(r.t_s, log[k + 1].t_start_s) if k + 1 < len(log) else len(r.t_s)
        mono &= bool(np.all(np.diff(r.delta_traces[0, i:stop]) <= 0))
    second = [p for p in log if p.t_start_s >= 0.15 + 5 * tau1]
    ok = first_ok and post_err <= 0.01 and mono and bool(second)
    record("AC5", ok, f"first trigger at edge {log[0].t_start_s if log else None} s ({first_ok}); "
                      f"post-event delta vs rho*delta_pre max err {post_err:.2%}; monotone {mono}; "
                      f"second burst programs {len(second)}x")
    assert ok


def test_ac6_onset_salience():
    fails = []
    rs = []
    for seed in range(10):
        cmp = pipeline.compare(validate_config({"seed": seed}))
        a, b = cmp.pearson
        budget = abs(len(cmp.adaptive) - len(cmp.baseline)) <= 1
        sal = cmp.salience is not None and cmp.salience.passed
        order = a.r_full >= b.r_full
        rs.append((a.r_full, b.r_full))
        if not (budget and sal and order):
            fails.append((seed, budget, sal, order))
    ra, rb = np.mean(rs, axis=0)
    ok = not fails
    record("AC6", ok, f"{10 - len(fails)}/10 seeds pass budget, salience and r ordering; "
                      f"mean r adaptive {ra:.3f} vs baseline {rb:.3f}" + (f"; failures {fails}" if fails else ""))
    assert ok


def test_ac7_reference_model():
    worst = 0.0
    for rho, tau in [(3.0, 20e-3), (2.0, 50e-3), (5.0, 5e-3)]:
        p = AdaptationModelParams(rho, tau)
        t = np.linspace(0.0, 8 * tau, 41)
        sol = solve_ivp(lambda _, x: (1.0 - x) / tau, (0.0, t[-1]), [0.0], t_eval=t, method="RK45",
                        rtol=1e-12, atol=1e-14, max_step=tau / 1000)
        y_num = rho + (1.0 - rho) * sol.y[0]
        worst = max(worst, float(np.max(np.abs(y_num - sta_step_response(p, t)))))
    p = AdaptationModelParams(3.0, 20e-3)
    ends = sta_step_response(p, 0.0) == 3.0 and abs(sta_step_response(p, 1e3) - 1.0) < 1e-12
    ok = worst <= 1e-6 and ends
    record("AC7", ok, f"max deviation from integration {worst:.1e}; y(0)=rho and y(inf)=1 {ends}")
    assert ok


def test_ac8_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "stimulus": {"duration_s": 0.5}}))
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    codes = [run(["encode", "--config", str(cfg), "--out", str(a), "--threads", "1"]),
             run(["encode", "--config", str(a / "manifest.json"), "--out", str(b), "--threads", "1"]),
             run(["encode", "--config", str(a / "manifest.json"), "--out", str(c), "--threads", "4"])]

    def events(d):
        return {p.name: p.read_bytes() for p in sorted(d.glob("events_ch*"))}

    same = codes == [0, 0, 0] and events(a) == events(b) == events(c) and len(events(a)) == 16
    everything = {p.name: p.read_bytes() for p in a.iterdir()} == {p.name: p.read_bytes() for p in c.iterdir()}
    ok = same and everything
    record("AC8", ok, f"event files byte-identical across manifest replay and threads 1/4: {same}; "
                      f"all outputs identical: {everything}")
    assert ok


if __name__ == "__main__":
    import tempfile

    failed = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_ac"):
            continue
        try:
            if name == "test_ac8_determinism":
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
