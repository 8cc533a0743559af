"""Run configuration: a JSON document validated against the models below.

Every field has a default, so ``{}`` describes the reference system: eight
gammatone channels from 50 Hz to 8 kHz, a 300 kOhm threshold transimpedance,
a 100 Hz comparison clock with a 50-spike trigger and 2.5 V / 5 ms pulses.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .controller import ControllerConfig
from .errors import ConfigError
from .filterbank import FilterbankConfig
from .frontend import AdmChannelState, ThresholdGenConfig
from .memristor import DeviceParams, GridSurface, ParametricSurface, PopulationSpec
from .signals import SignalSpec

MANIFEST_FORMAT = 1


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class StimulusModel(_Model):
    """Default: a syllable-like train of harmonic bursts (500 Hz fundamental,
    2 ms attack, 30 ms decay) at seeded levels spanning 30 dB."""

    kind: Literal["sine", "burst_train", "file"] = "burst_train"
    path: Optional[str] = None
    duration_s: float = Field(1.5, gt=0)
    amplitude_vpp: float = Field(1.5, ge=0)
    frequency_hz: float = Field(500.0, gt=0)
    n_harmonics: int = Field(8, ge=1)
    offset_v: float = 0.0
    phase_rad: float = 0.0
    burst_s: float = Field(0.1, gt=0)
    gap_s: float = Field(0.15, gt=0)
    lead_s: float = Field(0.05, ge=0)
    ramp_s: float = Field(0.002, ge=0)
    decay_s: Optional[float] = Field(0.03, gt=0)
    level_spread_db: float = Field(30.0, ge=0)
    rate_hz: float = Field(48000.0, gt=0)

    @model_validator(mode="after")
    def _file_needs_path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("a file stimulus needs 'path'")
        return self

    def to_spec(self, seed: int) -> SignalSpec:
        return SignalSpec(
            kind=self.kind, amplitude_vpp=self.amplitude_vpp, frequency_hz=self.frequency_hz,
            offset_v=self.offset_v, phase_rad=self.phase_rad, burst_s=self.burst_s, gap_s=self.gap_s,
            lead_s=self.lead_s, ramp_s=self.ramp_s, decay_s=self.decay_s,
            level_spread_db=self.level_spread_db, n_harmonics=self.n_harmonics, seed=seed, path=self.path,
        )


class FilterbankModel(_Model):
    n_channels: int = Field(8, ge=1, le=256)
    f_low_hz: float = Field(50.0, gt=0)
    f_high_hz: float = Field(8000.0, gt=0)
    order: Literal[4] = 4
    spacing: Literal["erb", "log"] = "erb"
    full_scale_vpp: float = Field(1.5, gt=0)
    normalize: Literal["joint", "per_channel", "none"] = "joint"

    @model_validator(mode="after")
    def _band_order(self):
        if not self.f_low_hz < self.f_high_hz:
            raise ValueError("f_low_hz must be below f_high_hz")
        return self

    def to_config(self) -> FilterbankConfig:
        return FilterbankConfig(self.n_channels, self.f_low_hz, self.f_high_hz, self.order, self.spacing)


class SurfaceModel(_Model):
    kind: Literal["parametric", "grid"] = "parametric"
    delta_i_ref_a: float = Field(100e-9, ge=0)
    v_ref: float = Field(2.5, gt=0)
    pw_ref_s: float = Field(5e-3, gt=0)
    v_on: float = Field(1.0, ge=0)
    p: float = Field(2.0, ge=0)
    q: float = Field(0.5, ge=0)
    csv_path: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "grid" and not self.csv_path:
            raise ValueError("a grid surface needs 'csv_path'")
        if self.kind == "parametric" and not self.v_ref > self.v_on:
            raise ValueError("v_ref must exceed v_on")
        return self

    def build(self):
        if self.kind == "grid":
            return GridSurface.from_csv(self.csv_path)
        return ParametricSurface(self.delta_i_ref_a, self.v_ref, self.pw_ref_s, self.v_on, self.p, self.q)


class DeviceModel(_Model):
    i_hrs_a: float = Field(100e-9, gt=0)
    tau1_s: float = Field(50e-3, gt=0)
    tau2_s: float = Field(5e-3, gt=0)
    split: float = Field(0.4, ge=0, le=1)
    v_read: float = Field(0.1, gt=0)
    i_lrs_a: Optional[float] = Field(None, gt=0)
    surface: SurfaceModel = SurfaceModel()
    i_hrs_sigma: float = Field(0.0, ge=0)
    tau1_sigma: float = Field(0.0, ge=0)
    tau2_sigma: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if not self.tau1_s > self.tau2_s:
            raise ValueError("tau1_s must exceed tau2_s")
        if self.i_lrs_a is not None and self.i_lrs_a < self.i_hrs_a:
            raise ValueError("i_lrs_a must be >= i_hrs_a")
        return self

    @property
    def sampled(self) -> bool:
        return max(self.i_hrs_sigma, self.tau1_sigma, self.tau2_sigma) > 0

    def to_params(self) -> DeviceParams:
        return DeviceParams(self.i_hrs_a, self.tau1_s, self.tau2_s, self.split, self.v_read,
                            self.surface.build(), self.i_lrs_a)

    def population(self, n: int, seed: int) -> PopulationSpec:
        return PopulationSpec(n, self.i_hrs_a, self.i_hrs_sigma, self.tau1_s, self.tau1_sigma,
                              self.tau2_s, self.tau2_sigma, seed, self.to_params())


class FrontendModel(_Model):
    beta: float = Field(10.0, gt=0)
    r_th_ohms: float = Field(3.0e4, gt=0)
    v_cm: float = 0.82
    i_linear_max_a: float = Field(1.5e-6, gt=0)
    delta_min_v: float = Field(5e-3, gt=0)
    delta_max_v: float = Field(0.4, gt=0)
    divider_gain: float = Field(0.75, gt=0, le=1)
    dead_time_s: float = Field(10e-9, ge=0)
    spike_pulse_width_s: float = Field(100e-9, ge=10e-9, le=500e-9)
    jitter_sigma_v: float = Field(0.0, ge=0)
    adm_rate_hz: float = Field(160e3, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if not self.delta_min_v < self.delta_max_v:
            raise ValueError("delta_min_v must be below delta_max_v")
        return self

    def threshold_config(self) -> ThresholdGenConfig:
        return ThresholdGenConfig(self.beta, self.r_th_ohms, self.v_cm, self.i_linear_max_a,
                                  self.delta_min_v, self.delta_max_v)

    def channel_state(self, channel: int) -> AdmChannelState:
        return AdmChannelState(channel=channel, delta_v=self.delta_min_v,
                               spike_pulse_width_s=self.spike_pulse_width_s,
                               divider_gain=self.divider_gain, dead_time_s=self.dead_time_s,
                               delta_min_v=self.delta_min_v, delta_max_v=self.delta_max_v)


class ControllerModel(_Model):
    cmp_clk_hz: float = Field(100.0, gt=0)
    thr_hit: int = Field(50, ge=1)
    v_sti: float = Field(2.5, ge=0)
    pw_s: float = Field(5e-3, gt=0)
    switch_guard_s: float = Field(10e-6, ge=0)
    count_polarity: Literal["both", "positive_only"] = "both"
    phase_s: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if not self.phase_s < 1.0 / self.cmp_clk_hz:
            raise ValueError("phase_s must lie within one clock period")
        return self

    def to_config(self) -> ControllerConfig:
        return ControllerConfig(self.cmp_clk_hz, self.thr_hit, self.v_sti, self.pw_s, self.switch_guard_s,
                                self.count_polarity, self.phase_s)


class MetricsModel(_Model):
    rate_window_s: float = Field(10e-3, gt=0)
    cochleagram_window_s: float = Field(10e-3, gt=0)
    onset_window_s: float = Field(20e-3, gt=0)
    onset_period_s: float = Field(0.5, gt=0)
    onset_column_factor: float = Field(1.5, gt=0)
    trace_decimation: int = Field(16, ge=1)


class PulseModel(_Model):
    t_s: float = Field(ge=0)
    v_sti: float = Field(ge=0)
    pw_s: float = Field(ge=0)


def _default_pulses():
    return [PulseModel(t_s=0.02 * k, v_sti=2.5, pw_s=5e-3) for k in range(5)]


class CharacterizeModel(_Model):
    pulses: list[PulseModel] = Field(default_factory=_default_pulses)
    read_interval_s: float = Field(1e-4, gt=0)
    record_after_s: float = Field(0.25, gt=0)
    n_devices: int = Field(18, ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        for a, b in zip(self.pulses, self.pulses[1:]):
            if b.t_s < a.t_s + a.pw_s:
                raise ValueError("pulses must be time-ordered and non-overlapping")
        return self


class RateSweepModel(_Model):
    frequency_hz: float = Field(200.0, gt=0)
    amplitude_vpp: float = Field(1.5, gt=0)
    currents_a: Optional[list[float]] = None
    current_start_a: float = Field(0.066e-6, ge=0)
    current_stop_a: float = Field(0.99e-6, ge=0)
    n_points: int = Field(12, ge=1)
    window_s: float = Field(1.0, gt=0)
    rate_hz: float = Field(1e6, gt=0)
    min_count: int = Field(100, ge=0)
    tolerance: float = Field(0.02, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.currents_a is not None and (not self.currents_a or min(self.currents_a) < 0):
            raise ValueError("currents_a must be a non-empty list of non-negative currents")
        if self.current_stop_a < self.current_start_a:
            raise ValueError("current_stop_a must be >= current_start_a")
        return self

    def currents(self) -> list[float]:
        if self.currents_a is not None:
            return list(self.currents_a)
        if self.n_points == 1:
            return [self.current_start_a]
        step = (self.current_stop_a - self.current_start_a) / (self.n_points - 1)
        return [self.current_start_a + k * step for k in range(self.n_points)]


class RunConfig(_Model):
    seed: Optional[int] = Field(0, ge=0)
    output_dir: Optional[str] = None
    stimulus: StimulusModel = StimulusModel()
    filterbank: FilterbankModel = FilterbankModel()
    device: DeviceModel = DeviceModel()
    frontend: FrontendModel = FrontendModel()
    controller: ControllerModel = ControllerModel()
    metrics: MetricsModel = MetricsModel()
    characterize: CharacterizeModel = CharacterizeModel()
    rate_sweep: RateSweepModel = RateSweepModel()

    @model_validator(mode="after")
    def _seed_when_random(self):
        random = (self.device.sampled or self.frontend.jitter_sigma_v > 0
                  or (self.stimulus.kind == "burst_train" and self.stimulus.level_spread_db > 0))
        if random and self.seed is None:
            raise ValueError("a seed is required when device sampling, jitter or level spread is used")
        if self.filterbank.f_high_hz >= self.frontend.adm_rate_hz / 2:
            raise ValueError("filterbank.f_high_hz must be below half of frontend.adm_rate_hz")
        return self


def _path_of(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def validate_config(data: dict, *, seed: int | None = None, output_dir: str | None = None) -> RunConfig:
    """Validate a config mapping, applying command-line overrides first."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", "<root>")
    data = dict(data)
    if seed is not None:
        data["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = output_dir
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = _path_of(err["loc"])
        raise ConfigError(err["msg"], path) from exc


def load_config(path, **overrides) -> RunConfig:
    """Load a config file or a run manifest (whose ``config`` member is used)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", "<file>") from exc
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})", "<file>") from exc
    if isinstance(data, dict) and data.get("manifest_format") == MANIFEST_FORMAT:
        data = data.get("config", {})
    return validate_config(data, **overrides)


def manifest(cfg: RunConfig, command: str) -> dict:
    return {
        "manifest_format": MANIFEST_FORMAT,
        "tool": "memadm",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.model_dump(mode="json", exclude={"output_dir"}),
    }
