"""Run configuration: a versioned JSON document validated with pydantic.

Frequencies are written as ``f = omega / 2 pi`` in kHz, times in ms or us;
the ``to_*`` helpers return the rad/s and second based domain objects.
"""
from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import dynamics, model
from .errors import ConfigError
from .hilbert import SpaceConfig

SCHEMA_VERSION = 1
RECIPE_PREFIX = "recipe:"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IonSection(_Section):
    """Either both detunings, or a ratio with the critical sideband Rabi frequency."""

    delta_b_khz: Optional[float] = None
    delta_r_khz: Optional[float] = None
    ratio: Optional[float] = None
    omega_sb_crit_khz: Optional[float] = None
    eta: float = 0.07

    @model_validator(mode="after")
    def _one_form(self):
        detunings = self.delta_b_khz is not None or self.delta_r_khz is not None
        by_ratio = self.ratio is not None or self.omega_sb_crit_khz is not None
        if detunings == by_ratio:
            raise ValueError("give either delta_b_khz/delta_r_khz or ratio/omega_sb_crit_khz")
        if detunings and (self.delta_b_khz is None or self.delta_r_khz is None):
            raise ValueError("both delta_b_khz and delta_r_khz are required")
        if by_ratio and (self.ratio is None or self.omega_sb_crit_khz is None):
            raise ValueError("both ratio and omega_sb_crit_khz are required")
        return self

    def to_ion(self, ratio: float | None = None) -> model.IonParams:
        """Ion parameters, optionally re-targeted to ``ratio`` at the same critical point."""
        if self.ratio is not None:
            db, dr = model.detunings_from_ratio(ratio or self.ratio, model.khz(self.omega_sb_crit_khz))
        else:
            db, dr = model.khz(self.delta_b_khz), model.khz(self.delta_r_khz)
            if ratio is not None:
                db, dr = model.detunings_from_ratio(ratio, model.critical_sideband_rabi(db, dr))
        return model.IonParams(db, dr, 0.0, self.eta)


class SweepSection(_Section):
    parameter: Literal["ratio", "tau_q_ms", "tau_d_ms", "omega_max_khz"]
    values: list[float] = Field(min_length=1)


class QuenchSection(_Section):
    omega_max_khz: float = 14.2
    tau_q_ms: float = 2.0
    n_samples: int = Field(101, ge=2)
    sample_times_us: Optional[list[float]] = None
    write_distribution: bool = False
    sweep: Optional[SweepSection] = None

    def to_schedule(self, omega_max_khz: float | None = None, tau_q_ms: float | None = None) -> dynamics.QuenchSchedule:
        om = model.khz(omega_max_khz if omega_max_khz is not None else self.omega_max_khz)
        tau = 1e-3 * (tau_q_ms if tau_q_ms is not None else self.tau_q_ms)
        if self.sample_times_us is None:
            return dynamics.QuenchSchedule.uniform(om, tau, self.n_samples)
        return dynamics.QuenchSchedule(om, tau, np.array(self.sample_times_us) * 1e-6)


class NoiseSection(_Section):
    ac_stark_alpha_per_khz: float = 10.0 / 14.2**2
    compensation_enabled: bool = True
    trap_offset_khz: float = 0.0

    def to_noise(self) -> dynamics.NoiseModel:
        # delta/2pi[kHz] = a * (omega/2pi[kHz])^2  ->  delta = a / (2 pi 1e3) * omega^2
        return dynamics.NoiseModel(
            ac_stark_alpha=self.ac_stark_alpha_per_khz / model.khz(1.0),
            compensation_enabled=self.compensation_enabled,
            trap_offset=model.khz(self.trap_offset_khz),
        )


class DissipationSection(_Section):
    tau_d_ms: Optional[float] = None
    heating_rate_per_s: float = 0.0
    qubit_rate_per_s: float = 0.0

    def to_dissipator(self, tau_d_ms: float | None = None) -> dynamics.DissipatorConfig:
        tau = tau_d_ms if tau_d_ms is not None else self.tau_d_ms
        return dynamics.DissipatorConfig(
            tau_d=math.inf if tau is None else 1e-3 * tau,
            heating_rate=self.heating_rate_per_s,
            qubit_rate=self.qubit_rate_per_s,
        )


class NonlinearSection(_Section):
    enabled: bool = False
    l_max: int = 1
    eta: float = 0.07
    prefactor: bool = True

    def to_nonlinear(self) -> model.NonlinearConfig:
        return model.NonlinearConfig(self.enabled, self.l_max, self.eta, self.prefactor)


class SpaceSection(_Section):
    fock_cutoff: Optional[int] = Field(None, ge=1)
    tail_tolerance: float = 1e-6
    fixed: bool = False

    def to_space(self, default: int) -> SpaceConfig:
        return SpaceConfig(self.fock_cutoff or default, self.tail_tolerance)


class ExplicitDistribution(_Section):
    kind: Literal["explicit"]
    p: list[float] = Field(min_length=1)


class ThermalDistribution(_Section):
    kind: Literal["thermal"]
    n_bar: float = Field(gt=0)
    levels: int = Field(60, ge=1)


class NegativeBinomialDistribution(_Section):
    kind: Literal["negative_binomial"]
    n_bar: float = Field(gt=0)
    shape: float = Field(gt=0)
    levels: int = Field(80, ge=1)


class QuenchEndpointDistribution(_Section):
    """Endpoint phonon distribution of the configured quench."""

    kind: Literal["quench_endpoint"]


Distribution = Union[ExplicitDistribution, ThermalDistribution, NegativeBinomialDistribution, QuenchEndpointDistribution]


class SidebandSection(_Section):
    mode: Literal["synth", "fit", "select"] = "synth"
    probe_khz: float = 12.0
    gamma0_per_ms: float = 0.5
    fit_gamma0_per_ms: Optional[float] = None
    t_max_us: float = 300.0
    n_points: int = Field(100, ge=2)
    shots: int = Field(200, ge=0)
    dark_error: float = Field(0.0, ge=0, le=1)
    bright_error: float = Field(0.0, ge=0, le=1)
    distribution: Distribution = Field(default_factory=lambda: ExplicitDistribution(kind="explicit", p=[1.0]), discriminator="kind")
    input_csv: Optional[str] = None
    k_max: int = Field(23, ge=0)
    k_range: tuple[int, int] = (1, 30)
    occupation_threshold: float = Field(0.95, gt=0, le=1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max_us * 1e-6, self.n_points)


class ScalingSection(_Section):
    which: Literal["spin", "phonon"] = "phonon"
    ratio: float = 50.0
    g_values: Optional[list[float]] = None
    n_points: int = Field(40, ge=1)
    G_window: tuple[float, float] = (0.005, 0.5)
    ratios: list[float] = Field(default_factory=lambda: [5.0, 15.0, 25.0, 100.0, 300.0, 1000.0])


class ErrorBudgetSection(_Section):
    ratios: list[float] = Field(default_factory=lambda: [25.0, 15.0, 5.0])
    omega_sb_crit_khz: float = 10.0
    sigma_common_khz: float = 0.4
    eps_trap_khz: float = 0.15
    mode: Literal["one_sided", "linear"] = "one_sided"


class GroundStateSection(_Section):
    ratio: float = 25.0
    g_values: list[float] = Field(default_factory=lambda: [1.0], min_length=1)
    omega_f_khz: float = 2.0


class RunConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = 0
    ion: IonSection = Field(default_factory=lambda: IonSection(delta_b_khz=52.0, delta_r_khz=48.0))
    quench: QuenchSection = Field(default_factory=QuenchSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    dissipation: DissipationSection = Field(default_factory=DissipationSection)
    nonlinear: NonlinearSection = Field(default_factory=NonlinearSection)
    space: SpaceSection = Field(default_factory=SpaceSection)
    sideband: SidebandSection = Field(default_factory=SidebandSection)
    scaling: ScalingSection = Field(default_factory=ScalingSection)
    error_budget: ErrorBudgetSection = Field(default_factory=ErrorBudgetSection)
    ground_state: GroundStateSection = Field(default_factory=GroundStateSection)
    out_dir: str = "out"

    def dump(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration:\n{exc}") from exc


def recipe_names() -> list[str]:
    root = resources.files("rabiqpt") / "recipes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(source: str | Path | None) -> RunConfig:
    """Read a config file, or a shipped recipe given as ``recipe:NAME``."""
    if source is None:
        return RunConfig()
    source = str(source)
    try:
        if source.startswith(RECIPE_PREFIX):
            name = source[len(RECIPE_PREFIX):]
            if name not in recipe_names():
                raise ConfigError(f"unknown recipe {name!r}; available: {', '.join(recipe_names())}")
            text = (resources.files("rabiqpt") / "recipes" / f"{name}.json").read_text()
        else:
            text = Path(source).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source} must hold a JSON object")
    return parse_config(data)
