# Run configuration: validated models, the flat key table and the
# unit-aware loader for `key = value` config files.
#
# Example file:
#   # far-detuned pulse at 130 C
#   coupling_detuning = 500 MHz
#   temperature = 130 C
#   coupling_intensity = 21 MW/cm2

from pathlib import Path
from typing import Literal, Optional
import logging
import math
import re

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import (ConfigFileNotFoundError, ConfigParseError, ConfigValidationError,
                    UnitError)
from liouville import SolverOptions
from rydberg_model import (ATOMIC_MASS_UNIT, CALIBRATION_INTENSITY, CALIBRATION_RABI,
                           COUPLING_ANGLE, COUPLING_RABI, COUPLING_WAVELENGTH, PROBE_RABI,
                           PROBE_WAVELENGTH, PULSE_EXTENT, TWO_PI, DecayRates, DriveConfig,
                           LaserField, PulseEnvelope, VaporParams, calibration_from_anchor,
                           rabi_from_intensity)

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "1.0"


class CalibrationAnchor(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    intensity: float = Field(default=CALIBRATION_INTENSITY, gt=0.0)
    rabi: float = Field(default=CALIBRATION_RABI, gt=0.0)

    @property
    def calibration(self) -> float:
        return calibration_from_anchor(self.intensity, self.rabi)


class VelocitySettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    points: int = 201
    span: float = Field(default=4.0, gt=0.0)

    @model_validator(mode="after")
    def _odd_points(self):
        if self.points < 3 or self.points % 2 == 0:
            raise ValueError(f"velocity_points must be odd and >= 3, got {self.points}")
        return self


class TimeWindow(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    t_start: float = -1e-9
    t_end: float = 8e-9

    @model_validator(mode="after")
    def _ordered(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"t_end must exceed t_start, got [{self.t_start}, {self.t_end}]")
        return self


class ScanSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    intensity_max: float = Field(default=CALIBRATION_INTENSITY, ge=0.0)
    intensity_steps: int = Field(default=64, ge=1)
    detuning_max: float = Field(default=TWO_PI * 2e9, ge=0.0)
    detuning_steps: int = Field(default=81, ge=1)


class AnalysisSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    pulse_extent: float = Field(default=PULSE_EXTENT, gt=0.0)
    retention_window: float = Field(default=1e-9, gt=0.0)
    cycle_prominence: float = Field(default=0.02, gt=0.0)
    max_modes: int = Field(default=4, ge=1)


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    probe_fwhm_min: float = Field(default=0.2e-9, gt=0.0)
    probe_fwhm_max: float = Field(default=1e-9, gt=0.0)
    coupling_fwhm_min: float = Field(default=0.2e-9, gt=0.0)
    coupling_fwhm_max: float = Field(default=1e-9, gt=0.0)
    probe_rabi_min: float = Field(default=TWO_PI * 0.5e9, ge=0.0)
    probe_rabi_max: float = Field(default=TWO_PI * 8e9, ge=0.0)
    coupling_rabi_min: float = Field(default=TWO_PI * 0.5e9, ge=0.0)
    coupling_rabi_max: float = Field(default=TWO_PI * 8e9, ge=0.0)
    delay_min: float = -1e-9
    delay_max: float = 1e-9
    grid_points: int = Field(default=8, ge=2)
    simplex_iterations: int = Field(default=200, ge=0)
    velocity_points: int = Field(default=15, ge=1)
    slice_width: float = Field(default=10e-12, gt=0.0)
    settle_time: float = Field(default=200e-12, ge=0.0)

    def bounds(self):
        return (
            (self.probe_fwhm_min, self.probe_fwhm_max),
            (self.coupling_fwhm_min, self.coupling_fwhm_max),
            (self.probe_rabi_min, self.probe_rabi_max),
            (self.coupling_rabi_min, self.coupling_rabi_max),
            (self.delay_min, self.delay_max),
        )


class OutputSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    format: Literal["csv", "json"] = "csv"
    heatmap: bool = False
    report: bool = False


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    vapor: VaporParams = VaporParams()
    probe: LaserField = LaserField(rabi_peak=PROBE_RABI, wavelength=PROBE_WAVELENGTH)
    coupling: LaserField = LaserField(rabi_peak=COUPLING_RABI, wavelength=COUPLING_WAVELENGTH,
                                      propagation_angle=COUPLING_ANGLE)
    pulse: PulseEnvelope = PulseEnvelope()
    calibration: CalibrationAnchor = CalibrationAnchor()
    coupling_intensity: Optional[float] = Field(default=None, ge=0.0)
    decay: DecayRates = DecayRates()
    velocity: VelocitySettings = VelocitySettings()
    solver: SolverOptions = SolverOptions()
    window: TimeWindow = TimeWindow()
    initial_state: Literal["steady", "ground"] = "steady"
    scan: ScanSettings = ScanSettings()
    analysis: AnalysisSettings = AnalysisSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    output: OutputSettings = OutputSettings()

    @property
    def coupling_rabi(self) -> float:
        if self.coupling_intensity is not None:
            return rabi_from_intensity(self.coupling_intensity, self.calibration.calibration)
        return self.coupling.rabi_peak

    def drive_config(self) -> DriveConfig:
        coupling = self.coupling.model_copy(update={"rabi_peak": self.coupling_rabi})
        return DriveConfig(probe=self.probe, coupling=coupling, coupling_envelope=self.pulse)

    def with_coupling(self, rabi=None, detuning=None) -> "RunConfig":
        update = {}
        if rabi is not None:
            update["rabi_peak"] = rabi
        if detuning is not None:
            update["detuning"] = detuning
        coupling = self.coupling.model_copy(update=update)
        if rabi is None and self.coupling_intensity is not None:
            coupling = coupling.model_copy(update={"rabi_peak": self.coupling_rabi})
        return self.model_copy(update={"coupling": coupling, "coupling_intensity": None})

    def with_updates(self, **sections) -> "RunConfig":
        """Copy with whole sub-models replaced, re-validated."""
        data = self.model_dump()
        for name, value in sections.items():
            data[name] = value.model_dump() if isinstance(value, BaseModel) else value
        return RunConfig.model_validate(data)


# Units per quantity kind; frequencies are ordinary and get the 2 pi factor.
UNITS = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12, "fs": 1e-15},
    "intensity": {"W/m2": 1.0, "W/cm2": 1e4, "kW/cm2": 1e7, "MW/cm2": 1e10},
    "length": {"m": 1.0, "um": 1e-6, "nm": 1e-9},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
    "mass": {"kg": 1.0, "u": ATOMIC_MASS_UNIT},
    "density": {"m^-3": 1.0, "cm^-3": 1e6},
    "temperature": {"K": 0.0, "C": 273.15},  # additive offsets
}
DISPLAY_UNITS = {
    "frequency": "MHz", "time": "ns", "intensity": "MW/cm2", "length": "nm",
    "angle": "deg", "mass": "u", "density": "cm^-3", "temperature": "K",
}

# flat key -> (path into RunConfig, kind)
FLAT_KEYS = {
    "isotope": (("vapor", "isotope"), "str"),
    "temperature": (("vapor", "temperature"), "temperature"),
    "atomic_mass": (("vapor", "atomic_mass"), "mass"),
    "number_density": (("vapor", "number_density"), "density"),
    "probe_rabi": (("probe", "rabi_peak"), "frequency"),
    "probe_detuning": (("probe", "detuning"), "frequency"),
    "probe_wavelength": (("probe", "wavelength"), "length"),
    "coupling_rabi": (("coupling", "rabi_peak"), "frequency"),
    "coupling_detuning": (("coupling", "detuning"), "frequency"),
    "coupling_wavelength": (("coupling", "wavelength"), "length"),
    "coupling_angle": (("coupling", "propagation_angle"), "angle"),
    "coupling_intensity": (("coupling_intensity",), "intensity?"),
    "calibration_intensity": (("calibration", "intensity"), "intensity"),
    "calibration_rabi": (("calibration", "rabi"), "frequency"),
    "pulse_shape": (("pulse", "shape"), "str"),
    "pulse_center": (("pulse", "center_time"), "time"),
    "pulse_fwhm": (("pulse", "intensity_fwhm"), "time"),
    "pulse_peak_scale": (("pulse", "peak_scale"), "float"),
    "gamma_12": (("decay", "gamma_12"), "frequency"),
    "gamma_23": (("decay", "gamma_23"), "frequency"),
    "velocity_points": (("velocity", "points"), "int"),
    "velocity_span": (("velocity", "span"), "float"),
    "t_start": (("window", "t_start"), "time"),
    "t_end": (("window", "t_end"), "time"),
    "sample_step": (("solver", "sample_step"), "time"),
    "rtol": (("solver", "rtol"), "float"),
    "atol": (("solver", "atol"), "float"),
    "solver_method": (("solver", "method"), "str"),
    "check_invariants": (("solver", "check_invariants"), "bool"),
    "initial_state": (("initial_state",), "str"),
    "intensity_max": (("scan", "intensity_max"), "intensity"),
    "intensity_steps": (("scan", "intensity_steps"), "int"),
    "detuning_max": (("scan", "detuning_max"), "frequency"),
    "detuning_steps": (("scan", "detuning_steps"), "int"),
    "pulse_extent": (("analysis", "pulse_extent"), "float"),
    "retention_window": (("analysis", "retention_window"), "time"),
    "cycle_prominence": (("analysis", "cycle_prominence"), "float"),
    "max_modes": (("analysis", "max_modes"), "int"),
    "opt_probe_fwhm_min": (("optimizer", "probe_fwhm_min"), "time"),
    "opt_probe_fwhm_max": (("optimizer", "probe_fwhm_max"), "time"),
    "opt_coupling_fwhm_min": (("optimizer", "coupling_fwhm_min"), "time"),
    "opt_coupling_fwhm_max": (("optimizer", "coupling_fwhm_max"), "time"),
    "opt_probe_rabi_min": (("optimizer", "probe_rabi_min"), "frequency"),
    "opt_probe_rabi_max": (("optimizer", "probe_rabi_max"), "frequency"),
    "opt_coupling_rabi_min": (("optimizer", "coupling_rabi_min"), "frequency"),
    "opt_coupling_rabi_max": (("optimizer", "coupling_rabi_max"), "frequency"),
    "opt_delay_min": (("optimizer", "delay_min"), "time"),
    "opt_delay_max": (("optimizer", "delay_max"), "time"),
    "opt_grid_points": (("optimizer", "grid_points"), "int"),
    "opt_simplex_iterations": (("optimizer", "simplex_iterations"), "int"),
    "opt_velocity_points": (("optimizer", "velocity_points"), "int"),
    "opt_slice": (("optimizer", "slice_width"), "time"),
    "opt_settle_time": (("optimizer", "settle_time"), "time"),
    "output_format": (("output", "format"), "str"),
    "heatmap": (("output", "heatmap"), "bool"),
    "report": (("output", "report"), "bool"),
}
_KEY_BY_PATH = {path: key for key, (path, _) in FLAT_KEYS.items()}

_NUMBER_WITH_UNIT = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)$")


def parse_quantity(text: str, kind: str) -> float:
    """Convert '220 MHz' style text to SI (angular frequency for 'frequency')."""
    match = _NUMBER_WITH_UNIT.match(text.strip())
    if match is None:
        raise UnitError(f"cannot read a number from '{text}'")
    number, unit = float(match.group(1)), match.group(2)
    table = UNITS[kind]
    if not unit:
        raise UnitError(f"'{text}' needs a unit, one of {', '.join(table)}")
    if unit not in table:
        raise UnitError(f"unit '{unit}' does not fit a {kind}; expected one of {', '.join(table)}")
    if kind == "temperature":
        return number + table[unit]
    value = number * table[unit]
    return TWO_PI * value if kind == "frequency" else value


def convert_value(key: str, raw: str):
    if key not in FLAT_KEYS:
        raise ConfigValidationError(f"unknown config key '{key}'")
    kind = FLAT_KEYS[key][1]
    if kind.endswith("?"):
        if raw.strip().lower() == "none":
            return None
        kind = kind[:-1]
    if kind == "str":
        return raw
    if kind == "bool":
        lowered = raw.strip().lower()
        if lowered not in ("true", "false"):
            raise UnitError(f"'{key}' expects true or false, got '{raw}'")
        return lowered == "true"
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise UnitError(f"'{key}' expects an integer, got '{raw}'") from None
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise UnitError(f"'{key}' expects a plain number, got '{raw}'") from None
    return parse_quantity(raw, kind)


def parse_config_text(text: str):
    """Flat `key = value` lines -> {key: (raw value, line number)}."""
    entries = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            raise ConfigParseError("sections are not supported, use flat keys", line_number)
        if "=" not in stripped:
            raise ConfigParseError(f"expected 'key = value', got '{stripped}'", line_number)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1].strip()
        if not key or not value:
            raise ConfigParseError(f"empty key or value in '{stripped}'", line_number)
        if key not in FLAT_KEYS:
            raise ConfigParseError(f"unknown key '{key}'", line_number)
        if key in entries:
            raise ConfigParseError(f"duplicate key '{key}' (first on line {entries[key][1]})", line_number)
        entries[key] = (value, line_number)
    return entries


def parse_override(text: str):
    if "=" not in text:
        raise ConfigParseError(f"override must look like key=value, got '{text}'")
    key, value = (part.strip() for part in text.split("=", 1))
    if key not in FLAT_KEYS:
        raise ConfigParseError(f"unknown key '{key}' in override")
    return key, value


def config_from_values(values: dict) -> RunConfig:
    """Build a RunConfig from flat raw strings, defaults filling the rest."""
    data = RunConfig().model_dump()
    for key, raw in values.items():
        raw, line_number = raw if isinstance(raw, tuple) else (raw, None)
        try:
            value = convert_value(key, raw)
        except UnitError as exc:
            where = f"line {line_number}: " if line_number is not None else ""
            raise UnitError(f"{where}{key}: {exc}") from None
        path = FLAT_KEYS[key][0]
        target = data
        for part in path[:-1]:
            target = target[part]
        target[path[-1]] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = []
        for err in exc.errors():
            loc = tuple(str(part) for part in err["loc"])
            key = _KEY_BY_PATH.get(loc) or _KEY_BY_PATH.get(loc[:1]) or ".".join(loc)
            problems.append(f"{key}: {err['msg']}")
        raise ConfigValidationError("invalid configuration: " + "; ".join(problems)) from None


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileNotFoundError(path)
    entries = parse_config_text(path.read_text(encoding="utf-8"))
    for item in overrides:
        key, value = parse_override(item)
        entries[key] = (value, None)
    config = config_from_values(entries)
    logger.info(f"Loaded config {path} ({len(entries)} keys set, {len(FLAT_KEYS) - len(entries)} defaults)")
    return config


def _format_value(value, kind):
    if value is None:
        return "none"
    kind = kind.rstrip("?")
    if kind in ("str", "int"):
        return str(value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return f"{value:.17g}"
    unit = DISPLAY_UNITS[kind]
    if kind == "temperature":
        return f"{value:.17g} {unit}"
    if kind == "frequency":
        value = value / TWO_PI
    return f"{value / UNITS[kind][unit]:.17g} {unit}"


def resolved_config(config: RunConfig) -> dict:
    """Every flat key with its effective value in display units."""
    data = config.model_dump()
    table = {}
    for key, (path, kind) in FLAT_KEYS.items():
        value = data
        for part in path:
            value = value[part]
        table[key] = _format_value(value, kind)
    return table
