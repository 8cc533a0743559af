"""Behavioural model of a volatile memristor.

A programming pulse raises the read current by ``delta_i`` (looked up on a
voltage/pulse-width surface); the excess then relaxes bi-exponentially back
to the high-resistance baseline ``i_hrs_a``. Excitations superpose linearly up
to an optional low-resistance ceiling.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import optimize
from scipy.interpolate import RegularGridInterpolator

from .errors import DeviceError

log = logging.getLogger(__name__)

#: Components contributing less than this fraction of i_hrs are dropped.
COMPACTION_FRACTION = 1e-4


class ParametricSurface:
    """``dI = k * max(0, v - v_on)**p * (pw / pw_ref)**q``.

    ``k`` is fixed by requiring ``dI(v_ref, pw_ref) == delta_i_ref_a``.
    """

    def __init__(self, delta_i_ref_a=100e-9, v_ref=2.5, pw_ref_s=5e-3, v_on=1.0, p=2.0, q=0.5,
                 v_max=13.5, pw_max_s=1.0):
        if not (v_ref > v_on):
            raise DeviceError("v_ref must exceed v_on")
        if delta_i_ref_a < 0 or p < 0 or q < 0:
            raise DeviceError("surface parameters must be non-negative")
        self.delta_i_ref_a = float(delta_i_ref_a)
        self.v_ref = float(v_ref)
        self.pw_ref_s = float(pw_ref_s)
        self.v_on = float(v_on)
        self.p = float(p)
        self.q = float(q)
        self.v_max = float(v_max)
        self.pw_max_s = float(pw_max_s)
        self.k = self.delta_i_ref_a / (self.v_ref - self.v_on) ** self.p

    @property
    def domain(self):
        return (0.0, self.v_max), (0.0, self.pw_max_s)

    def __call__(self, v_sti, pw_s):
        (v_lo, v_hi), (pw_lo, pw_hi) = self.domain
        v, pw = _clamp(v_sti, v_lo, v_hi, "v_sti"), _clamp(pw_s, pw_lo, pw_hi, "pw")
        if pw == 0.0:
            return 0.0
        return self.k * max(0.0, v - self.v_on) ** self.p * (pw / self.pw_ref_s) ** self.q

    def to_dict(self):
        return {
            "kind": "parametric", "delta_i_ref_a": self.delta_i_ref_a, "v_ref": self.v_ref,
            "pw_ref_s": self.pw_ref_s, "v_on": self.v_on, "p": self.p, "q": self.q,
        }


class GridSurface:
    """Bilinear interpolation over a measured ``(v_sti, pw) -> dI`` grid."""

    def __init__(self, v_grid, pw_grid, table):
        self.v_grid = np.asarray(v_grid, dtype=float)
        self.pw_grid = np.asarray(pw_grid, dtype=float)
        self.table = np.asarray(table, dtype=float)
        if self.table.shape != (len(self.v_grid), len(self.pw_grid)):
            raise DeviceError("surface table shape does not match its axes")
        if len(self.v_grid) < 2 or len(self.pw_grid) < 2:
            raise DeviceError("surface grid needs at least two points per axis")
        if np.any(np.diff(self.v_grid) <= 0) or np.any(np.diff(self.pw_grid) <= 0):
            raise DeviceError("surface axes must be strictly increasing")
        if np.any(self.table < 0):
            raise DeviceError("surface values must be non-negative")
        if np.any(np.diff(self.table, axis=0) < 0) or np.any(np.diff(self.table, axis=1) < 0):
            raise DeviceError("surface must be nondecreasing in v_sti and pw")
        self._interp = RegularGridInterpolator((self.v_grid, self.pw_grid), self.table)

    @classmethod
    def from_csv(cls, path):
        """Read ``v_sti_volts,pw_seconds,delta_i_amps`` rows laid out row-major by voltage."""
        path = Path(path)
        try:
            with path.open(newline="") as fh:
                reader = csv.DictReader(fh)
                expected = ["v_sti_volts", "pw_seconds", "delta_i_amps"]
                if reader.fieldnames != expected:
                    raise DeviceError(f"{path}: header must be {','.join(expected)}")
                rows = [(float(r["v_sti_volts"]), float(r["pw_seconds"]), float(r["delta_i_amps"]))
                        for r in reader]
        except OSError as exc:
            raise DeviceError(f"cannot read surface {path}: {exc}") from exc
        data = np.array(rows)
        v_grid = np.unique(data[:, 0])
        pw_grid = np.unique(data[:, 1])
        if len(data) != len(v_grid) * len(pw_grid):
            raise DeviceError(f"{path}: rows do not form a complete grid")
        order = np.lexsort((data[:, 1], data[:, 0]))
        table = data[order, 2].reshape(len(v_grid), len(pw_grid))
        return cls(v_grid, pw_grid, table)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("v_sti_volts,pw_seconds,delta_i_amps\n")
            for i, v in enumerate(self.v_grid):
                for j, pw in enumerate(self.pw_grid):
                    fh.write(f"{v:.9g},{pw:.9g},{self.table[i, j]:.9g}\n")

    @property
    def domain(self):
        return (self.v_grid[0], self.v_grid[-1]), (self.pw_grid[0], self.pw_grid[-1])

    def __call__(self, v_sti, pw_s):
        if pw_s == 0.0:
            return 0.0
        (v_lo, v_hi), (pw_lo, pw_hi) = self.domain
        v, pw = _clamp(v_sti, v_lo, v_hi, "v_sti"), _clamp(pw_s, pw_lo, pw_hi, "pw")
        return float(self._interp([[v, pw]])[0])

    def to_dict(self):
        return {"kind": "grid", "v_grid": self.v_grid.tolist(), "pw_grid": self.pw_grid.tolist(),
                "table": self.table.tolist()}


def _clamp(value, lo, hi, name):
    if value < lo or value > hi:
        clamped = min(max(value, lo), hi)
        log.warning("%s=%g outside surface domain [%g, %g]; clamped to %g", name, value, lo, hi, clamped)
        return float(clamped)
    return float(value)


@dataclass(frozen=True)
class DeviceParams:
    """Static device description.

    ``split`` is the fraction of each excitation carried by the fast
    (``tau2_s``) component. ``i_lrs_a`` caps the read current; by default it is
    the current after three 3 V / 10 ms pulses on the configured surface.
    """

    i_hrs_a: float = 100e-9
    tau1_s: float = 50e-3
    tau2_s: float = 5e-3
    split: float = 0.4
    v_read: float = 0.1
    delta_i_surface: object = field(default_factory=ParametricSurface)
    i_lrs_a: float | None = None

    def __post_init__(self):
        if not (self.i_hrs_a > 0):
            raise DeviceError("i_hrs_a must be positive")
        if not (self.tau1_s > self.tau2_s > 0):
            raise DeviceError("need tau1_s > tau2_s > 0")
        if not (0.0 <= self.split <= 1.0):
            raise DeviceError("split must lie in [0, 1]")
        if self.i_lrs_a is None:
            ceiling = self.i_hrs_a + 3 * self.delta_i_surface(3.0, 10e-3)
            object.__setattr__(self, "i_lrs_a", ceiling)
        elif self.i_lrs_a < self.i_hrs_a:
            raise DeviceError("i_lrs_a must be >= i_hrs_a")


class Excitation(NamedTuple):
    onset_s: float
    amp1_a: float  # slow component
    amp2_a: float  # fast component


@dataclass(frozen=True)
class DeviceState:
    params: DeviceParams
    excitations: tuple = ()
    last_program_time_s: float = -math.inf

    @classmethod
    def fresh(cls, params: DeviceParams | None = None) -> DeviceState:
        return cls(params if params is not None else DeviceParams())

    @property
    def last_delta_i_a(self) -> float:
        if not self.excitations:
            return 0.0
        e = self.excitations[-1]
        return e.amp1_a + e.amp2_a


def read_current(dev: DeviceState, t):
    """Read current at time(s) ``t``; accepts a scalar or an array."""
    p = dev.params
    scalar = np.ndim(t) == 0
    t = np.asarray(t, dtype=float)
    if dev.excitations and t.size and t.min() < dev.last_program_time_s:
        raise DeviceError(
            f"read at t={float(t.min())} precedes the latest excitation onset {dev.last_program_time_s}"
        )
    total = np.full(t.shape, p.i_hrs_a)
    for e in dev.excitations:
        age = t - e.onset_s
        total = total + e.amp1_a * np.exp(-age / p.tau1_s) + e.amp2_a * np.exp(-age / p.tau2_s)
    return float(total) if scalar else total


def _excitation_at(e: Excitation, params: DeviceParams, t: float) -> float:
    age = t - e.onset_s
    return e.amp1_a * math.exp(-age / params.tau1_s) + e.amp2_a * math.exp(-age / params.tau2_s)


class PulseOutcome(NamedTuple):
    state: DeviceState
    i_before_a: float
    i_after_a: float
    delta_i_a: float
    onset_s: float


def program_device(dev: DeviceState, t: float, v_sti: float, pw: float) -> PulseOutcome:
    """Apply a programming pulse starting at ``t`` and report the read currents
    just before and just after the excitation lands at ``t + pw``."""
    if pw < 0:
        raise DeviceError("pulse width must be non-negative")
    if t < dev.last_program_time_s:
        raise DeviceError(f"pulse at t={t} precedes the previous excitation at {dev.last_program_time_s}")
    p = dev.params
    onset = t + pw
    if pw == 0:
        i_now = read_current(dev, onset)
        return PulseOutcome(dev, i_now, i_now, 0.0, onset)
    floor = COMPACTION_FRACTION * p.i_hrs_a
    kept = tuple(e for e in dev.excitations if _excitation_at(e, p, onset) >= floor)
    compacted = replace(dev, excitations=kept)
    i_before = read_current(compacted, onset)
    delta_i = float(p.delta_i_surface(v_sti, pw))
    delta_i = min(delta_i, max(0.0, p.i_lrs_a - i_before))
    new = Excitation(onset, (1.0 - p.split) * delta_i, p.split * delta_i)
    state = DeviceState(p, kept + (new,), onset)
    return PulseOutcome(state, i_before, read_current(state, onset), delta_i, onset)


def apply_pulse(dev: DeviceState, t: float, v_sti: float, pw: float) -> DeviceState:
    return program_device(dev, t, v_sti, pw).state


def onset_gain(i_before: float, i_after: float) -> float:
    """Ratio of post- to pre-stimulus current, ``1 + dI / I_before``."""
    if not (i_before > 0):
        raise DeviceError("i_before must be positive")
    return i_after / i_before


# --- device populations -----------------------------------------------------

@dataclass(frozen=True)
class PopulationSpec:
    """Log-normal device spread: each ``*_sigma`` is the std-dev of the natural log."""

    n_devices: int = 18
    i_hrs_median_a: float = 100e-9
    i_hrs_sigma: float = 0.0
    tau1_median_s: float = 50e-3
    tau1_sigma: float = 0.0
    tau2_median_s: float = 5e-3
    tau2_sigma: float = 0.0
    rng_seed: int = 0
    base: DeviceParams = field(default_factory=DeviceParams)

    def __post_init__(self):
        if self.n_devices < 1:
            raise DeviceError("n_devices must be >= 1")
        if min(self.i_hrs_sigma, self.tau1_sigma, self.tau2_sigma) < 0:
            raise DeviceError("dispersions must be >= 0")


MAX_REJECTIONS = 1000


def sample_population(spec: PopulationSpec) -> list[DeviceParams]:
    rng = np.random.default_rng(spec.rng_seed)
    devices = []
    for index in range(spec.n_devices):
        for _ in range(MAX_REJECTIONS):
            i_hrs = spec.i_hrs_median_a * math.exp(spec.i_hrs_sigma * rng.standard_normal())
            tau1 = spec.tau1_median_s * math.exp(spec.tau1_sigma * rng.standard_normal())
            tau2 = spec.tau2_median_s * math.exp(spec.tau2_sigma * rng.standard_normal())
            if tau1 > tau2 > 0 and i_hrs > 0:
                break
        else:
            raise DeviceError(f"device {index}: no valid sample after {MAX_REJECTIONS} draws")
        i_lrs = None
        if spec.base.i_lrs_a is not None:
            i_lrs = max(spec.base.i_lrs_a - spec.base.i_hrs_a + i_hrs, i_hrs)
        devices.append(replace(spec.base, i_hrs_a=i_hrs, tau1_s=tau1, tau2_s=tau2, i_lrs_a=i_lrs))
    return devices


def write_population_csv(devices, path):
    with open(path, "w", newline="") as fh:
        fh.write("index,i_hrs_a,i_lrs_a,tau1_s,tau2_s,split,v_read\n")
        for i, d in enumerate(devices):
            fh.write(f"{i},{d.i_hrs_a:.9g},{d.i_lrs_a:.9g},{d.tau1_s:.9g},{d.tau2_s:.9g},"
                     f"{d.split:.9g},{d.v_read:.9g}\n")


# --- bi-exponential fitting -------------------------------------------------

@dataclass(frozen=True)
class BiexpFit:
    """``I(t) = i_inf + a1 exp(-t/tau1) + a2 exp(-t/tau2)`` with ``tau1 >= tau2``.

    Times are relative to the first sample. A single-exponential fit reports
    its component in slot 1 and ``a2 = 0``, ``tau2 = nan``.
    """

    i_inf: float
    a1: float
    tau1: float
    a2: float
    tau2: float
    residual_rms: float
    converged: bool
    message: str = ""


def _linear_fit(t, y, taus):
    cols = [np.ones_like(t)] + [np.exp(-t / tau) for tau in taus]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return coef, resid


def fit_biexponential(t, i) -> BiexpFit:
    """Least-squares bi-exponential fit by variable projection over log-tau."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(i, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise DeviceError("t and i must be 1-D arrays of equal length")
    if len(t) < 5:
        raise DeviceError("need at least 5 samples")
    t = t - t[0]
    scale = float(np.max(np.abs(y))) or 1.0
    if np.ptp(y) <= 1e-12 * scale:
        return BiexpFit(float(y.mean()), 0.0, math.nan, 0.0, math.nan, float(np.std(y)), True,
                        "constant data")
    yn = y / scale
    span = t[-1]
    dt = float(np.min(np.diff(t)))
    lo, hi = math.log(dt / 4), math.log(span * 20)
    grid = np.exp(np.linspace(lo, hi, 40))

    def rss(taus):
        return float(np.sum(_linear_fit(t, yn, taus)[1] ** 2))

    # single exponential: grid then bounded refinement
    best1 = min(grid, key=lambda tau: rss([tau]))
    r1 = optimize.minimize_scalar(lambda lt: rss([math.exp(lt)]), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-10})
    tau_single = math.exp(r1.x) if r1.fun <= rss([best1]) else best1
    rss_single = rss([tau_single])

    # two exponentials
    pairs = [(a, b) for ia, a in enumerate(grid) for b in grid[:ia]]
    start = min(pairs, key=rss)

    def resid2(z):
        return _linear_fit(t, yn, np.exp(z))[1]

    sol = optimize.least_squares(resid2, np.log(start), bounds=([lo, lo], [hi, hi]),
                                 xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
    taus = np.exp(sol.x)
    rss_double = float(np.sum(sol.fun ** 2))
    # residuals below 1e-9 of full scale count as an exact fit
    noise_floor = 1e-18 * len(t)
    order = np.argsort(taus)[::-1]
    taus = taus[order]
    coef, resid = _linear_fit(t, yn, taus)
    negligible = min(abs(coef[1]), abs(coef[2])) < 1e-7 * max(abs(coef[1]), abs(coef[2]))
    if rss_single <= rss_double * (1 + 1e-3) + noise_floor or negligible:
        coef, resid = _linear_fit(t, yn, [tau_single])
        return BiexpFit(float(coef[0] * scale), float(coef[1] * scale), tau_single, 0.0, math.nan,
                        float(np.sqrt(np.mean(resid**2))) * scale, bool(r1.success), "single exponential")
    return BiexpFit(float(coef[0] * scale), float(coef[1] * scale), float(taus[0]),
                    float(coef[2] * scale), float(taus[1]),
                    float(np.sqrt(np.mean(resid**2))) * scale, bool(sol.success), str(sol.message))
