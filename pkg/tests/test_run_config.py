import math

import pytest

from errors import (ConfigFileNotFoundError, ConfigParseError, ConfigValidationError, DomainError,
                    UnitError)
from rydberg_model import TWO_PI
from run_config import (FLAT_KEYS, RunConfig, config_from_values, load_config, parse_quantity,
                        resolved_config)


def write_config(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.mark.parametrize("text, kind, expected", [
    ("220 MHz", "frequency", TWO_PI * 220e6),
    ("2.2GHz", "frequency", TWO_PI * 2.2e9),
    ("21 MW/cm2", "intensity", 2.1e11),
    ("130 C", "temperature", 403.15),
    ("403.15 K", "temperature", 403.15),
    ("2.5 ns", "time", 2.5e-9),
    ("-1 ns", "time", -1e-9),
    ("171.5 deg", "angle", math.radians(171.5)),
    ("780 nm", "length", 780e-9),
])
def test_parse_quantity(text, kind, expected):
    assert parse_quantity(text, kind) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("text, kind", [
    ("220", "frequency"),
    ("220 ns", "frequency"),
    ("21 W", "intensity"),
    ("fast", "time"),
])
def test_parse_quantity_unit_errors(text, kind):
    with pytest.raises(UnitError):
        parse_quantity(text, kind)


def test_defaults_match_published_parameters():
    config = RunConfig()
    assert config.probe.rabi_peak == pytest.approx(TWO_PI * 220e6)
    assert config.coupling.rabi_peak == pytest.approx(TWO_PI * 2.2e9)
    assert config.pulse.intensity_fwhm == pytest.approx(2.5e-9)
    assert config.decay.gamma_12 == pytest.approx(TWO_PI * 6e6)
    assert config.vapor.temperature == pytest.approx(403.15)
    assert config.velocity.points == 201
    assert config.initial_state == "steady"


def test_load_config_with_comments_and_units(tmp_path):
    path = write_config(tmp_path, "\n".join([
        "# far-detuned run",
        "gamma_12 = 6 MHz",
        "coupling_detuning = 500 MHz   # lab frame",
        "temperature = '120 C'",
        "velocity_points = 51",
        "",
    ]))
    config = load_config(path)
    assert config.decay.gamma_12 == pytest.approx(TWO_PI * 6e6)
    assert config.coupling.detuning == pytest.approx(TWO_PI * 500e6)
    assert config.vapor.temperature == pytest.approx(393.15)
    assert config.velocity.points == 51


def test_overrides_win_over_file(tmp_path):
    path = write_config(tmp_path, "probe_rabi = 100 MHz\n")
    config = load_config(path, ["probe_rabi=300 MHz", "heatmap=true"])
    assert config.probe.rabi_peak == pytest.approx(TWO_PI * 300e6)
    assert config.output.heatmap is True


def test_coupling_intensity_uses_calibration():
    config = config_from_values({"coupling_intensity": "21 MW/cm2"})
    assert config.coupling_rabi == pytest.approx(TWO_PI * 2.3e9)
    assert config.drive_config().coupling.rabi_peak == pytest.approx(TWO_PI * 2.3e9)
    quarter = config_from_values({"coupling_intensity": "5.25 MW/cm2"})
    assert quarter.coupling_rabi == pytest.approx(TWO_PI * 1.15e9)
    assert config_from_values({"coupling_intensity": "none"}).coupling_intensity is None


def test_with_coupling_replaces_intensity():
    config = config_from_values({"coupling_intensity": "21 MW/cm2"})
    detuned = config.with_coupling(detuning=TWO_PI * 1e8)
    assert detuned.coupling_intensity is None
    assert detuned.coupling_rabi == pytest.approx(TWO_PI * 2.3e9)
    assert detuned.coupling.detuning == pytest.approx(TWO_PI * 1e8)
    assert config.with_coupling(rabi=1.0).coupling_rabi == 1.0


def test_temperature_domain():
    assert config_from_values({"temperature": "-10 C"}).vapor.temperature == pytest.approx(263.15)
    with pytest.raises(ConfigValidationError) as info:
        config_from_values({"temperature": "-300 C"})
    assert isinstance(info.value, DomainError)
    assert "temperature" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigFileNotFoundError):
        load_config(tmp_path / "absent.cfg")


@pytest.mark.parametrize("text, line", [
    ("probe_rabi = 220 MHz\nwarp_factor = 9\n", 2),
    ("probe_rabi = 220 MHz\nprobe_rabi = 100 MHz\n", 2),
    ("[laser]\nprobe_rabi = 220 MHz\n", 1),
    ("\n\nprobe_rabi 220 MHz\n", 3),
])
def test_parse_errors_carry_line_numbers(tmp_path, text, line):
    with pytest.raises(ConfigParseError) as info:
        load_config(write_config(tmp_path, text))
    assert info.value.line_number == line


def test_unit_mismatch_in_file(tmp_path):
    with pytest.raises(UnitError) as info:
        load_config(write_config(tmp_path, "pulse_fwhm = 2.5 MHz\n"))
    assert "line 1" in str(info.value)


def test_invalid_values_name_the_key():
    with pytest.raises(ConfigValidationError) as info:
        config_from_values({"velocity_points": "20"})
    assert "velocity_points" in str(info.value)
    with pytest.raises(ConfigValidationError):
        config_from_values({"t_start": "5 ns", "t_end": "1 ns"})


def flatten(value, prefix=""):
    if isinstance(value, dict):
        items = {}
        for key, inner in value.items():
            items.update(flatten(inner, f"{prefix}{key}."))
        return items
    return {prefix.rstrip("."): value}


def test_resolved_config_reloads_to_same_config(tmp_path):
    config = config_from_values({"coupling_detuning": "-350 MHz", "temperature": "125 C",
                                 "coupling_intensity": "12 MW/cm2"})
    table = resolved_config(config)
    assert set(table) == set(FLAT_KEYS)
    path = write_config(tmp_path, "".join(f"{key} = {value}\n" for key, value in table.items()))
    reloaded = flatten(load_config(path).model_dump())
    original = flatten(config.model_dump())
    assert reloaded.keys() == original.keys()
    for key, value in original.items():
        if isinstance(value, float):
            assert reloaded[key] == pytest.approx(value, rel=1e-12, abs=1e-300), key
        else:
            assert reloaded[key] == value, key
