"""``airstation`` command line.

Exit codes (stable):

    0  success
    1  bad config, bad arguments, malformed input file, AQI out of range
    2  a sensor source could not be opened
    3  a sink could not bind (query port in use)
    4  decode: the capture holds invalid frames (use --tolerate to accept)
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import warnings
from decimal import Decimal, InvalidOperation
from pathlib import Path

import yaml

from .aqi import AqiError, Pollutant, compute_aqi, default_tables, load_breakpoint_tables
from .config import CsvSettings, ConfigError, SourceOpenError, StationConfig, build_station, load_config
from .gateway import GatewayConfig
from .liveview import watch
from .protocols import (
    PMS_SYNC,
    BadChecksum,
    BadLength,
    BadSync,
    Dht11RangeWarning,
    FrameError,
    MalformedDump,
    SensorKind,
    Truncated,
    dht11_decode,
    pms5003_decode,
    read_dump,
    write_dump,
)
from .simulator import InvalidScenario, load_scenario_file, run_scenario
from .storage import CsvFormatError, read_csv_log
from .telemetry import BindFailure, parse_address

logger = logging.getLogger("airstation")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOURCE = 2
EXIT_BIND = 3
EXIT_INVALID_FRAMES = 4

FAST_PERIOD = 0.001  # simulate/replay default: as fast as sinks allow


class _Fail(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


# --- run / simulate / replay ------------------------------------------------

def _run_station(cfg: StationConfig, cycles: int | None) -> int:
    try:
        station = build_station(cfg)
    except SourceOpenError as exc:
        raise _Fail(EXIT_SOURCE, str(exc)) from None
    except BindFailure as exc:
        raise _Fail(EXIT_BIND, str(exc)) from None
    gateway = station.gateway
    if cycles is None and station.scripted:
        cycles = station.script_length

    def on_signal(signum, frame):
        logger.info("signal %d: stopping after this cycle", signum)
        gateway.stop()

    previous = {}
    if sys.platform != "win32":
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                previous[sig] = signal.signal(sig, on_signal)
            except ValueError:  # not the main thread
                pass
    if station.query is not None:
        station.query.start()
        logger.info("query port on %s:%d", *station.query.address)
    try:
        n = gateway.run(max_cycles=cycles)
    finally:
        if station.query is not None:
            station.query.stop()
        for sig, handler in previous.items():
            signal.signal(sig, handler)
    stats = gateway.stats()
    logger.info("%d cycles; %s", n, ", ".join(f"{k}={v}" for k, v in stats.items() if k != "location"))
    if station.csv is not None:
        for path in station.csv.files:
            print(path)
    return EXIT_OK


def _load(path) -> StationConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None


def _scripted_config(args, scheme: str, target: Path) -> StationConfig:
    cfg = _load(args.config) if args.config else StationConfig(gateway=GatewayConfig(sample_period=FAST_PERIOD))
    endpoint = f"{scheme}:{target.resolve()}"
    cfg.endpoints = {kind: endpoint for kind in SensorKind}
    if args.period is not None:
        try:
            cfg.gateway = GatewayConfig(**{**cfg.gateway.__dict__, "sample_period": args.period})
        except ValueError as exc:
            raise _Fail(EXIT_CONFIG, str(exc)) from None
    if args.out:
        base = cfg.csv or CsvSettings(directory=Path(args.out))
        cfg.csv = CsvSettings(**{**base.__dict__, "directory": Path(args.out)})
    if args.headerless:
        if cfg.csv is None:
            raise _Fail(EXIT_CONFIG, "--headerless needs a CSV sink (--out or sinks.csv)")
        cfg.csv.headerless = True
    if args.telemetry:
        cfg.telemetry = args.telemetry
    if args.query:
        cfg.query = parse_address(args.query)
    return cfg


def cmd_run(args) -> int:
    return _run_station(_load(args.config), args.cycles)


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario_file(args.scenario)
    except OSError as exc:
        raise _Fail(EXIT_CONFIG, f"cannot read scenario {args.scenario}: {exc.strerror}") from None
    except InvalidScenario as exc:
        raise _Fail(EXIT_CONFIG, f"{args.scenario}: {exc}") from None
    if args.check:
        print(yaml.safe_dump(scenario.to_mapping(), sort_keys=False), end="")
        print(f"# valid: {scenario.total_cycles} cycles")
        return EXIT_OK
    cfg = _scripted_config(args, "sim", Path(args.scenario))
    if args.dump:
        try:
            streams = run_scenario(scenario, cfg.calibration)
        except InvalidScenario as exc:
            raise _Fail(EXIT_CONFIG, f"{args.scenario}: {exc}") from None
        write_dump(args.dump, streams.to_dump_records())
        print(args.dump)
        if not (args.out or args.telemetry or args.query):
            return EXIT_OK
    return _run_station(cfg, args.cycles)


def cmd_replay(args) -> int:
    if not Path(args.dump).is_file():
        raise _Fail(EXIT_CONFIG, f"no such capture: {args.dump}")
    return _run_station(_scripted_config(args, "replay", Path(args.dump)), args.cycles)


# --- decode -------------------------------------------------------------------

def _describe_pms(stream: bytes) -> tuple[list[str], int]:
    lines, invalid, skipped, pos = [], 0, 0, 0

    def flush_skipped():
        nonlocal skipped
        if skipped:
            lines.append(f"  resync: skipped {skipped} octet(s)")
            skipped = 0

    while pos < len(stream):
        nxt = stream.find(PMS_SYNC[:1], pos)
        if nxt < 0:
            skipped += len(stream) - pos
            break
        skipped += nxt - pos
        pos = nxt
        try:
            f, used = pms5003_decode(stream, pos)
        except BadSync:
            skipped += 1
            pos += 1
            continue
        except Truncated:
            flush_skipped()
            lines.append(f"  @{pos}: TRUNCATED ({len(stream) - pos} of 32 octets)")
            invalid += 1
            pos = len(stream)
            break
        except (BadChecksum, BadLength) as exc:
            flush_skipped()
            marker = "BADCHECKSUM" if isinstance(exc, BadChecksum) else "BADLENGTH"
            lines.append(f"  @{pos}: {marker} {exc}")
            invalid += 1
            pos += 1
            continue
        flush_skipped()
        lines.append(
            f"  @{pos}: OK pm1.0={f.pm1_0_atm} pm2.5={f.pm2_5_atm} pm10={f.pm10_atm} "
            f"(cf1 {f.pm1_0_cf1}/{f.pm2_5_cf1}/{f.pm10_cf1}) counts={'/'.join(map(str, f.counts))}"
        )
        pos += used
    flush_skipped()
    return lines, invalid


def cmd_decode(args) -> int:
    try:
        records = read_dump(args.capture)
    except OSError as exc:
        raise _Fail(EXIT_CONFIG, f"cannot read {args.capture}: {exc.strerror}") from None
    except MalformedDump as exc:
        raise _Fail(EXIT_CONFIG, f"{args.capture}: {exc}") from None

    invalid = 0
    pms = b"".join(r.payload for r in records if r.kind is SensorKind.PMS5003)
    counts = {kind: sum(r.kind is kind for r in records) for kind in SensorKind}
    print(f"{args.capture}: {len(records)} record(s) " + " ".join(f"{k.value}={n}" for k, n in counts.items()))
    if counts[SensorKind.PMS5003]:
        print(f"pms5003 stream ({len(pms)} octets):")
        lines, bad = _describe_pms(pms)
        invalid += bad
        print("\n".join(lines) if lines else "  (no frames)")
    for kind in (SensorKind.DHT11, SensorKind.ADC):
        if not counts[kind]:
            continue
        print(f"{kind.value}:")
        for k, rec in enumerate(r for r in records if r.kind is kind):
            if not rec.payload:
                print(f"  #{k}: (empty)")
                continue
            if kind is SensorKind.ADC:
                if len(rec.payload) != 2:
                    print(f"  #{k}: TRUNCATED ({len(rec.payload)} octets)")
                    invalid += 1
                else:
                    print(f"  #{k}: OK count={int.from_bytes(rec.payload, 'big')}")
                continue
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", Dht11RangeWarning)
                    f = dht11_decode(rec.payload)
                note = " (outside rated range)" if caught else ""
                print(f"  #{k}: OK humidity={f.humidity:g} temperature={f.temperature:g}{note}")
            except FrameError as exc:
                marker = "BADCHECKSUM" if isinstance(exc, BadChecksum) else "TRUNCATED"
                print(f"  #{k}: {marker} {exc}")
                invalid += 1
    print(f"invalid frames: {invalid}")
    if invalid and not args.tolerate:
        return EXIT_INVALID_FRAMES
    return EXIT_OK


# --- aqi / watch / export -----------------------------------------------------

def _parse_pair(text: str) -> tuple[Pollutant, Decimal]:
    name, sep, value = text.partition("=")
    if not sep:
        raise _Fail(EXIT_CONFIG, f"expected pollutant=value, got {text!r}")
    try:
        return Pollutant.parse(name), Decimal(value)
    except ValueError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    except InvalidOperation:
        raise _Fail(EXIT_CONFIG, f"{name}: not a number: {value!r}") from None


def cmd_aqi(args) -> int:
    pairs = dict(_parse_pair(p) for p in args.pairs)
    tables = default_tables()
    if args.breakpoints:
        try:
            tables = load_breakpoint_tables(Path(args.breakpoints).read_text(encoding="utf-8"))
        except (OSError, AqiError) as exc:
            raise _Fail(EXIT_CONFIG, f"breakpoints: {exc}") from None
    try:
        result = compute_aqi(pairs, tables, clamp=args.clamp)
    except AqiError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    if args.json:
        record = {"concentrations": {p.value: str(v) for p, v in pairs.items()}, **result.to_dict()}
        print(json.dumps(record))
        return EXIT_OK
    for p, sub in result.sub_indices.items():
        print(f"{p.name:<8} {pairs[p]:>8}  sub-index {sub}")
    print(f"overall  {result.overall}")
    print(f"dominant {result.dominant.name}")
    print(f"category {result.category}")
    return EXIT_OK


def cmd_watch(args) -> int:
    try:
        address = parse_address(args.address)
    except ValueError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    try:
        watch(address, sys.stdout, interval=args.interval, polls=args.polls)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_export(args) -> int:
    out = open(args.output, "w", encoding="ascii") if args.output else sys.stdout
    try:
        for path in args.csv:
            try:
                records = read_csv_log(path)
            except OSError as exc:
                raise _Fail(EXIT_CONFIG, f"cannot read {path}: {exc.strerror}") from None
            except CsvFormatError as exc:
                raise _Fail(EXIT_CONFIG, str(exc)) from None
            for r in records:
                out.write(json.dumps({
                    "file": str(path),
                    "no": r.no,
                    "pm2_5": r.pm2_5,
                    "pm10": r.pm10,
                    "temperature": r.temperature,
                    "humidity": r.humidity,
                    "co": f"{r.co:.2f}",
                    "aqi": r.aqi,
                }) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def _scripted_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="station config supplying calibration, sampling and sinks")
    p.add_argument("--out", metavar="DIR", help="write the CSV log into DIR")
    p.add_argument("--headerless", action="store_true", help="CSV without the header line")
    p.add_argument("--telemetry", metavar="ENDPOINT", help="telemetry lines to '-', a file, a device or tcp:host:port")
    p.add_argument("--query", metavar="HOST:PORT", help="serve the query port while running")
    p.add_argument("--period", type=float, help=f"seconds per cycle (default {FAST_PERIOD} without --config)")
    p.add_argument("--cycles", type=int, help="stop after this many cycles")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airstation",
        description="Air quality monitoring station: gateway, simulator and tools.",
        epilog="exit codes: 0 ok, 1 config/input error, 2 source open failure, 3 sink bind failure, 4 invalid frames (decode)",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("run", help="run the gateway from a config file")
    p.add_argument("--config", required=True, help="station config (YAML)")
    p.add_argument("--cycles", type=int, help="stop after this many cycles")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="drive the pipeline from a scenario file")
    p.add_argument("scenario")
    p.add_argument("--check", action="store_true", help="validate and pretty-print the scenario only")
    p.add_argument("--dump", metavar="FILE", help="write the simulated octet streams as a capture dump")
    _scripted_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="drive the pipeline from a capture dump")
    p.add_argument("dump")
    _scripted_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("decode", help="list the frames in a capture dump")
    p.add_argument("capture")
    p.add_argument("--tolerate", action="store_true", help="exit 0 even if frames are invalid")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("aqi", help="compute the AQI for pollutant=value pairs")
    p.add_argument("pairs", nargs="+", metavar="POLLUTANT=VALUE", help="pm2.5, pm10 (ug/m3) or co (ppm)")
    p.add_argument("--json", action="store_true", help="one JSON record instead of text")
    p.add_argument("--clamp", action="store_true", help="map concentrations above the tables to 500")
    p.add_argument("--breakpoints", metavar="FILE", help="breakpoint tables to use instead of the built-in ones")
    p.set_defaults(func=cmd_aqi)

    p = sub.add_parser("watch", help="two-line live view polling a query port")
    p.add_argument("address", help="HOST:PORT of the query port")
    p.add_argument("--interval", type=float, default=1.0, help="seconds between polls (default 1)")
    p.add_argument("--polls", type=int, help="stop after this many polls")
    p.set_defaults(func=cmd_watch)

    p = sub.add_parser("export", help="CSV logs to JSON lines")
    p.add_argument("csv", nargs="+")
    p.add_argument("-o", "--output", help="write here instead of stdout")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"airstation {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
