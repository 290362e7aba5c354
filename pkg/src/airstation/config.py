"""Station configuration file and the wiring it describes.

YAML layout (every section optional)::

    location: "Rooftop, building 4"
    sampling:
      period: 1.0          # seconds
      history: 3600        # readings kept for GET HISTORY
      stale_after: 5       # missed cycles before a sensor is reported lost
      queue: 64            # per-sink buffer, oldest dropped on overflow
      clamp_aqi: true
      pm_words: atm        # atm | cf1
    sources:               # endpoint per sensor
      pms5003: sim:../scenarios/faults.yaml
      dht11: sim:../scenarios/faults.yaml
      adc: sim:../scenarios/faults.yaml
    sinks:
      csv: {directory: logs, headerless: false, max_rows: 86400}
      telemetry: {endpoint: "-"}
      query: {bind: "127.0.0.1:7878"}
      lcd: false
    calibration: {curve_a: 605.18, curve_b: -3.937, r0: 10000, adc_max: 1023}
    breakpoints: null      # path to a breakpoint table file

Endpoints: ``sim:<scenario file>``, ``replay:<capture dump>``,
``tcp:<host>:<port>``, or a device/FIFO path. Relative paths resolve against
the config file's directory. ``AIRSTATION_<SENSOR>_ENDPOINT`` (e.g.
``AIRSTATION_PMS5003_ENDPOINT``) overrides an endpoint.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .aqi import AqiError, BreakpointTable, Pollutant, default_tables, load_breakpoint_tables
from .calibration import CalibrationError, Mq135Config
from .gateway import FileSource, Gateway, GatewayConfig, ScriptedSource, Sink, Source, TcpSource
from .liveview import LcdSink
from .protocols import MalformedDump, SensorKind
from .simulator import InvalidScenario, SensorStreams, load_scenario_file, replay_capture, run_scenario
from .storage import CsvLog, CsvSink
from .telemetry import LineEmitter, QueryServer, open_byte_sink, parse_address

logger = logging.getLogger(__name__)

ENV_PREFIX = "AIRSTATION_"
_TOP_KEYS = {"location", "sampling", "sources", "sinks", "calibration", "breakpoints"}
_SAMPLING_KEYS = {
    "period": "sample_period",
    "history": "history_capacity",
    "stale_after": "stale_after",
    "queue": "sink_queue",
    "clamp_aqi": "clamp_aqi",
    "pm_words": "pm_words",
}
_CSV_KEYS = {"directory", "headerless", "max_rows", "max_bytes", "fsync", "prefix"}


class ConfigError(ValueError):
    pass


class SourceOpenError(OSError):
    pass


@dataclass
class CsvSettings:
    directory: Path
    headerless: bool = False
    max_rows: int | None = None
    max_bytes: int | None = None
    fsync: bool = True
    prefix: str = "aqlog"


@dataclass
class StationConfig:
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    endpoints: dict[SensorKind, str] = field(default_factory=dict)
    csv: CsvSettings | None = None
    telemetry: str | None = None
    query: tuple[str, int] | None = None
    lcd: bool = False
    calibration: Mq135Config = field(default_factory=Mq135Config)
    tables: Mapping[Pollutant, BreakpointTable] = field(default_factory=default_tables)
    base_dir: Path = Path(".")

    def resolve(self, path: str | os.PathLike) -> Path:
        p = Path(path).expanduser()
        return p if p.is_absolute() else self.base_dir / p


def _section(doc: dict, key: str) -> dict:
    value = doc.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section '{key}' must be a mapping")
    return value


def _reject_unknown(section: dict, allowed, where: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(sorted(map(str, unknown)))}")


def parse_config(text: str, base_dir: Path = Path("."), env: Mapping[str, str] | None = None) -> StationConfig:
    env = os.environ if env is None else env
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping")
    _reject_unknown(doc, _TOP_KEYS, "config")
    cfg = StationConfig(base_dir=base_dir)

    sampling = _section(doc, "sampling")
    _reject_unknown(sampling, _SAMPLING_KEYS, "sampling")
    try:
        cfg.gateway = GatewayConfig(
            location=str(doc.get("location") or ""),
            **{_SAMPLING_KEYS[k]: v for k, v in sampling.items()},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sampling: {exc}") from None

    sources = _section(doc, "sources")
    _reject_unknown(sources, {k.value for k in SensorKind}, "sources")
    for kind in SensorKind:
        endpoint = env.get(f"{ENV_PREFIX}{kind.value.upper()}_ENDPOINT") or sources.get(kind.value)
        if endpoint:
            cfg.endpoints[kind] = str(endpoint)

    sinks = _section(doc, "sinks")
    _reject_unknown(sinks, {"csv", "telemetry", "query", "lcd"}, "sinks")
    if sinks.get("csv"):
        csv = _section(sinks, "csv")
        _reject_unknown(csv, _CSV_KEYS, "sinks.csv")
        if "directory" not in csv:
            raise ConfigError("sinks.csv needs 'directory'")
        try:
            cfg.csv = CsvSettings(**{**csv, "directory": cfg.resolve(csv["directory"])})
        except TypeError as exc:
            raise ConfigError(f"sinks.csv: {exc}") from None
    if sinks.get("telemetry"):
        tel = _section(sinks, "telemetry")
        _reject_unknown(tel, {"endpoint"}, "sinks.telemetry")
        cfg.telemetry = str(tel.get("endpoint", "-"))
    if sinks.get("query"):
        q = _section(sinks, "query")
        _reject_unknown(q, {"bind"}, "sinks.query")
        try:
            cfg.query = parse_address(str(q.get("bind", "127.0.0.1:7878")))
        except ValueError as exc:
            raise ConfigError(f"sinks.query: {exc}") from None
    cfg.lcd = bool(sinks.get("lcd", False))

    try:
        cfg.calibration = Mq135Config.from_mapping(doc.get("calibration"))
    except (CalibrationError, TypeError, ValueError) as exc:
        raise ConfigError(f"calibration: {exc}") from None

    if doc.get("breakpoints"):
        path = cfg.resolve(doc["breakpoints"])
        try:
            cfg.tables = load_breakpoint_tables(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"breakpoints: cannot read {path}: {exc.strerror}") from None
        except AqiError as exc:
            raise ConfigError(f"breakpoints: {exc}") from None
    return cfg


def load_config(path) -> StationConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)


# --- wiring ----------------------------------------------------------------

class _StreamCache:
    """One simulator run or capture replay per file, shared across sensors."""

    def __init__(self, cfg: StationConfig) -> None:
        self.cfg = cfg
        self._runs: dict[tuple[str, Path], SensorStreams] = {}

    def get(self, scheme: str, path: Path) -> SensorStreams:
        key = (scheme, path)
        if key not in self._runs:
            if scheme == "sim":
                self._runs[key] = run_scenario(load_scenario_file(path), self.cfg.calibration)
            else:
                self._runs[key] = replay_capture(path)
        return self._runs[key]


def open_source(kind: SensorKind, endpoint: str, cfg: StationConfig, cache: _StreamCache | None = None) -> Source:
    cache = cache or _StreamCache(cfg)
    scheme, sep, rest = endpoint.partition(":")
    try:
        if sep and scheme in ("sim", "replay"):
            return ScriptedSource(cache.get(scheme, cfg.resolve(rest)).chunks(kind))
        if sep and scheme == "tcp":
            return TcpSource(parse_address(rest))
        return FileSource(str(cfg.resolve(endpoint)))
    except (OSError, ValueError, InvalidScenario, MalformedDump) as exc:
        raise SourceOpenError(f"cannot open {kind.value} source {endpoint!r}: {exc}") from exc


@dataclass
class Station:
    gateway: Gateway
    query: QueryServer | None
    csv: CsvLog | None
    scripted: bool

    @property
    def script_length(self) -> int:
        return max((len(s) for s in self.gateway.sources.values() if isinstance(s, ScriptedSource)), default=0)


def build_station(cfg: StationConfig) -> Station:
    """Open sources, then sinks, then the query port. Raises SourceOpenError or BindFailure."""
    cache = _StreamCache(cfg)
    sources: dict[SensorKind, Source] = {}
    reopen = {}
    try:
        for kind, endpoint in cfg.endpoints.items():
            sources[kind] = open_source(kind, endpoint, cfg, cache)
            if not isinstance(sources[kind], ScriptedSource):
                reopen[kind] = lambda k=kind, e=endpoint: open_source(k, e, cfg)
    except SourceOpenError:
        for s in sources.values():
            s.close()
        raise
    scripted = bool(sources) and all(isinstance(s, ScriptedSource) for s in sources.values())

    sinks: list[Sink] = []
    csv_log = None
    if cfg.csv is not None:
        s = cfg.csv
        csv_log = CsvLog(s.directory, prefix=s.prefix, headerless=s.headerless, max_rows=s.max_rows, max_bytes=s.max_bytes, fsync=s.fsync)
        sinks.append(CsvSink(csv_log))
    if cfg.telemetry is not None:
        endpoint = cfg.telemetry
        if endpoint == "-":
            sinks.append(LineEmitter(port=open_byte_sink("-")))
        else:
            target = endpoint if endpoint.startswith("tcp:") else str(cfg.resolve(endpoint))
            sinks.append(LineEmitter(opener=lambda: open_byte_sink(target), retry_interval=cfg.gateway.sample_period * cfg.gateway.stale_after))
    if cfg.lcd:
        sinks.append(LcdSink())

    gateway = Gateway(cfg.gateway, sources, sinks, tables=cfg.tables, calibration=cfg.calibration, reopen=reopen)
    server = None
    if cfg.query is not None:
        try:
            server = QueryServer(cfg.query, gateway)
        except OSError:
            gateway.close()
            raise
    return Station(gateway, server, csv_log, scripted)
