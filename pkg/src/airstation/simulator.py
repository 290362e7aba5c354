"""Deterministic virtual sensors.

A :class:`Scenario` scripts concentrations and climate per cycle. Running it
produces, per cycle, one encoded PMS5003 frame, one DHT11 frame and one
big-endian 16-bit ADC count for the MQ135 channel, with optional jitter and
scheduled faults.

Randomness comes from SplitMix64 (Steele, Lea & Flood 2014), written out
below so any implementation can reproduce the streams octet for octet.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .calibration import CalibrationError, Mq135Config, ppm_to_adc
from .protocols import (
    Dht11Frame,
    DumpRecord,
    Pms5003Frame,
    SensorKind,
    dht11_encode,
    pms5003_encode,
    read_dump,
)

MASK64 = (1 << 64) - 1
_ADC_WORD = struct.Struct(">H")


class InvalidScenario(ValueError):
    pass


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        # plain modulo; the bias is irrelevant at these ranges
        return self.next_u64() % n

    def jitter(self, amplitude: int) -> int:
        """Uniform integer in [-amplitude, amplitude]; draws nothing when amplitude is 0."""
        if amplitude <= 0:
            return 0
        return self.below(2 * amplitude + 1) - amplitude

    def octets(self, n: int) -> bytes:
        return bytes(self.next_u64() & 0xFF for _ in range(n))


@dataclass(frozen=True)
class Step:
    duration: int
    pm2_5: int
    pm10: int
    temp: float
    humidity: float
    co_ppm: float


@dataclass(frozen=True)
class Noise:
    """Jitter amplitudes: ug/m3 for PM, degC and %RH for climate, ADC counts for CO."""

    pm2_5: int = 0
    pm10: int = 0
    temp: int = 0
    humidity: int = 0
    co: int = 0


FAULT_KINDS = ("corrupt-checksum", "truncate-frame", "garbage-burst", "silence")


@dataclass(frozen=True)
class Fault:
    at_cycle: int
    kind: str
    n: int = 0  # garbage octets, or silent cycles
    target: SensorKind | None = None  # None: PMS5003, or every sensor for silence

    def targets(self) -> tuple[SensorKind, ...]:
        if self.target is not None:
            return (self.target,)
        if self.kind == "silence":
            return tuple(SensorKind)
        return (SensorKind.PMS5003,)

    def active(self, cycle: int) -> bool:
        if self.kind == "silence":
            return self.at_cycle <= cycle < self.at_cycle + self.n
        return cycle == self.at_cycle


@dataclass(frozen=True)
class Scenario:
    seed: int
    steps: tuple[Step, ...]
    noise: Noise = field(default_factory=Noise)
    faults: tuple[Fault, ...] = ()

    def __post_init__(self) -> None:
        if not self.steps:
            raise InvalidScenario("scenario needs at least one step")
        for k, s in enumerate(self.steps):
            if s.duration < 1:
                raise InvalidScenario(f"step {k}: duration must be >= 1")
            if not (0 <= s.pm2_5 <= 0xFFFF and 0 <= s.pm10 <= 0xFFFF):
                raise InvalidScenario(f"step {k}: PM values must fit in 16 bits")
            if not (0 <= s.temp < 256 and 0 <= s.humidity < 256):
                raise InvalidScenario(f"step {k}: temperature/humidity must be encodable as DHT11 octets")
            if not s.co_ppm > 0:
                raise InvalidScenario(f"step {k}: co_ppm must be positive")
        for f in self.faults:
            if f.kind not in FAULT_KINDS:
                raise InvalidScenario(f"unknown fault kind {f.kind!r}")
            if f.at_cycle < 1:
                raise InvalidScenario("fault cycles are 1-based")
            if f.kind in ("garbage-burst", "silence") and f.n < 1:
                raise InvalidScenario(f"{f.kind} at cycle {f.at_cycle} needs a positive count")

    @property
    def total_cycles(self) -> int:
        return sum(s.duration for s in self.steps)

    def to_mapping(self) -> dict:
        faults = []
        for f in self.faults:
            entry = {"at": f.at_cycle, "kind": f.kind}
            if f.kind == "garbage-burst":
                entry["n"] = f.n
            elif f.kind == "silence":
                entry["cycles"] = f.n
            if f.target is not None:
                entry["target"] = f.target.value
            faults.append(entry)
        return {
            "seed": self.seed,
            "noise": asdict(self.noise),
            "steps": [asdict(s) for s in self.steps],
            "faults": faults,
        }


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise InvalidScenario(f"{where}: missing {key!r}")
    return mapping[key]


def scenario_from_mapping(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise InvalidScenario("scenario must be a mapping")
    try:
        seed = int(doc.get("seed", 0))
        steps = []
        for k, raw in enumerate(_require(doc, "steps", "scenario") or []):
            where = f"step {k}"
            steps.append(
                Step(
                    duration=int(raw.get("duration", 1)),
                    pm2_5=int(_require(raw, "pm2_5", where)),
                    pm10=int(_require(raw, "pm10", where)),
                    temp=float(_require(raw, "temp", where)),
                    humidity=float(_require(raw, "humidity", where)),
                    co_ppm=float(_require(raw, "co_ppm", where)),
                )
            )
        noise = Noise(**{k: int(v) for k, v in (doc.get("noise") or {}).items()})
        faults = []
        for raw in doc.get("faults") or []:
            kind = str(_require(raw, "kind", "fault"))
            n = raw.get("cycles" if kind == "silence" else "n", 0)
            target = raw.get("target")
            faults.append(
                Fault(
                    at_cycle=int(_require(raw, "at", "fault")),
                    kind=kind,
                    n=int(n),
                    target=SensorKind(target) if target is not None else None,
                )
            )
    except InvalidScenario:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise InvalidScenario(str(exc)) from None
    return Scenario(seed, tuple(steps), noise, tuple(faults))


def load_scenario(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidScenario(f"scenario does not parse: {exc}") from None
    return scenario_from_mapping(doc)


def load_scenario_file(path) -> Scenario:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


@dataclass
class SensorStreams:
    """Per-cycle octet chunks for each sensor channel."""

    pms5003: list[bytes] = field(default_factory=list)
    dht11: list[bytes] = field(default_factory=list)
    adc: list[bytes] = field(default_factory=list)

    def chunks(self, kind: SensorKind) -> list[bytes]:
        return getattr(self, kind.value)

    def octets(self, kind: SensorKind) -> bytes:
        return b"".join(self.chunks(kind))

    @property
    def cycles(self) -> int:
        return max(len(self.pms5003), len(self.dht11), len(self.adc))

    def to_dump_records(self) -> list[DumpRecord]:
        records = []
        for k in range(self.cycles):
            for kind in SensorKind:
                chunks = self.chunks(kind)
                if k < len(chunks):
                    records.append(DumpRecord(kind, chunks[k]))
        return records


def synth_pms_frame(pm2_5: int, pm10: int) -> Pms5003Frame:
    """Plausible full frame around the two PM values the station uses."""
    cap = 0xFFFF
    base = pm2_5 + pm10
    counts = [min(cap, base * m) for m in (30, 10, 4, 2, 1)] + [min(cap, pm10 // 4)]
    return Pms5003Frame(
        pm1_0_cf1=pm2_5 * 2 // 3,
        pm2_5_cf1=pm2_5,
        pm10_cf1=pm10,
        pm1_0_atm=pm2_5 * 2 // 3,
        pm2_5_atm=pm2_5,
        pm10_atm=pm10,
        counts_0_3um=counts[0],
        counts_0_5um=counts[1],
        counts_1_0um=counts[2],
        counts_2_5um=counts[3],
        counts_5_0um=min(counts[4], counts[3]),
        counts_10um=min(counts[5], counts[4], counts[3]),
    )


def _corrupt(chunk: bytes) -> bytes:
    if not chunk:
        return chunk
    out = bytearray(chunk)
    out[-1] = (out[-1] + 1) & 0xFF
    return bytes(out)


def _clamp(v: int, lo: int, hi: int) -> int:
    return max(lo, min(hi, v))


def _clamp_float(v: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, v))


def run_scenario(s: Scenario, calibration: Mq135Config | None = None) -> SensorStreams:
    calibration = calibration or Mq135Config()
    if calibration.adc_max > 0xFFFF:
        raise InvalidScenario("ADC channel carries 16-bit counts; adc_max must be <= 65535")
    rng = SplitMix64(s.seed)
    streams = SensorStreams()
    cycle = 0
    for k, step in enumerate(s.steps):
        try:
            base_adc = ppm_to_adc(step.co_ppm, calibration)
        except CalibrationError as exc:
            raise InvalidScenario(f"step {k}: co_ppm {step.co_ppm} not representable: {exc}") from None
        for _ in range(step.duration):
            cycle += 1
            pm2_5 = _clamp(step.pm2_5 + rng.jitter(s.noise.pm2_5), 0, 0xFFFF)
            pm10 = _clamp(step.pm10 + rng.jitter(s.noise.pm10), 0, 0xFFFF)
            temp = _clamp_float(step.temp + rng.jitter(s.noise.temp), 0, 255.9)
            humidity = _clamp_float(step.humidity + rng.jitter(s.noise.humidity), 0, 255.9)
            adc = _clamp(base_adc + rng.jitter(s.noise.co), 1, calibration.adc_max - 1)

            chunks = {
                SensorKind.PMS5003: pms5003_encode(synth_pms_frame(pm2_5, pm10)),
                SensorKind.DHT11: dht11_encode(Dht11Frame.from_values(humidity, temp)),
                SensorKind.ADC: _ADC_WORD.pack(adc),
            }
            for fault in s.faults:
                if not fault.active(cycle):
                    continue
                for target in fault.targets():
                    if fault.kind == "silence":
                        chunks[target] = b""
                    elif fault.kind == "garbage-burst":
                        chunks[target] = rng.octets(fault.n) + chunks[target]
                    elif fault.kind == "corrupt-checksum":
                        chunks[target] = _corrupt(chunks[target])
                    elif fault.kind == "truncate-frame":
                        chunks[target] = chunks[target][: len(chunks[target]) // 2]
            for kind, chunk in chunks.items():
                streams.chunks(kind).append(chunk)
    return streams


def replay_capture(path) -> SensorStreams:
    """Split a capture dump back into per-sensor chunk sequences, in file order."""
    streams = SensorStreams()
    for rec in read_dump(path):
        streams.chunks(rec.kind).append(rec.payload)
    return streams
