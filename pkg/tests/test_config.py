from pathlib import Path

import pytest

from airstation.calibration import Mq135Config
from airstation.config import ConfigError, SourceOpenError, build_station, load_config, parse_config
from airstation.protocols import SensorKind
from airstation.telemetry import BindFailure, QueryServer

ROOT = Path(__file__).resolve().parents[1]


def test_demo_config_loads():
    cfg = load_config(ROOT / "configs" / "demo.yaml")
    assert cfg.gateway.location == "Demo bench"
    assert cfg.gateway.sample_period == 1.0
    assert set(cfg.endpoints) == set(SensorKind)
    assert cfg.csv.directory == ROOT / "configs" / "../logs"
    assert cfg.query == ("127.0.0.1", 7878)
    assert cfg.calibration == Mq135Config()


def test_table1_config_is_16_bit():
    cfg = load_config(ROOT / "configs" / "table1.yaml")
    assert cfg.calibration.adc_max == 65535 and cfg.csv.headerless


def test_empty_config_is_defaults():
    cfg = parse_config("")
    assert cfg.endpoints == {} and cfg.csv is None and cfg.query is None


@pytest.mark.parametrize(
    "text, match",
    [
        ("[1, 2]", "mapping"),
        ("bogus: 1", "unknown keys in config"),
        ("sampling: {period: 0}", "sample_period"),
        ("sampling: {speed: 3}", "unknown keys in sampling"),
        ("sources: {lidar: /dev/x}", "unknown keys in sources"),
        ("sinks: {csv: {headerless: true}}", "directory"),
        ("sinks: {query: {bind: 'x:y'}}", "bad address"),
        ("calibration: {adc_max: 0}", "adc_max"),
        ("calibration: {r0: abc}", "calibration"),
        ("breakpoints: /does/not/exist.yaml", "cannot read"),
        ("sampling: [", "YAML"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.yaml"):
        load_config(tmp_path / "nope.yaml")


def test_env_overrides_endpoint():
    cfg = parse_config("sources: {pms5003: /dev/ttyS0}", env={"AIRSTATION_PMS5003_ENDPOINT": "tcp:10.0.0.2:9000"})
    assert cfg.endpoints[SensorKind.PMS5003] == "tcp:10.0.0.2:9000"


def test_build_scripted_station(tmp_path):
    text = f"""
sources: {{pms5003: sim:{ROOT}/scenarios/table1.yaml, dht11: sim:{ROOT}/scenarios/table1.yaml}}
sinks: {{csv: {{directory: {tmp_path}, fsync: false}}}}
"""
    station = build_station(parse_config(text))
    assert station.scripted and station.script_length == 10
    assert station.gateway.run(max_cycles=10) == 10
    assert len(station.csv.files) == 1


def test_source_open_failure(tmp_path):
    cfg = parse_config(f"sources: {{pms5003: {tmp_path}/missing-tty}}")
    with pytest.raises(SourceOpenError, match="pms5003"):
        build_station(cfg)


def test_bind_failure_surfaces():
    with QueryServer(("127.0.0.1", 0), None) as held:
        host, port = held.address
        with pytest.raises(BindFailure):
            build_station(parse_config(f"sinks: {{query: {{bind: '{host}:{port}'}}}}"))
