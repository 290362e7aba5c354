"""Sampling loop: sources -> decoders -> AQI -> sinks.

One thread owns the sources, the decoders and the history ring. Every cycle
yields exactly one :class:`CompositeReading`, even when sensors fail: a
faulty sensor contributes its last good value and is listed in
``reading.faults``. Readings are published as an immutable snapshot that
query threads read without locking.

Sinks never run on the sampling thread. Each has a worker with a bounded
queue; when a sink falls behind, its oldest queued reading is dropped and
counted.
"""

from __future__ import annotations

import logging
import os
import socket
import struct
import threading
import time
import warnings
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from typing import Callable, Mapping, Protocol, Sequence

from .aqi import BreakpointTable, Pollutant, compute_aqi, default_tables
from .calibration import CalibrationError, Mq135Config, adc_to_ppm
from .protocols import (
    Dht11RangeWarning,
    FrameError,
    Pms5003Scanner,
    SensorKind,
    dht11_decode,
)
from .readings import CompositeReading, round_co

logger = logging.getLogger(__name__)


class SourceLost(OSError):
    """A sensor stream closed or failed."""


class SinkFailed(RuntimeError):
    pass


class NotReady(LookupError):
    """No cycle has completed yet."""


@dataclass(frozen=True)
class GatewayConfig:
    sample_period: float = 1.0
    history_capacity: int = 3600
    stale_after: int = 5
    sink_queue: int = 64
    clamp_aqi: bool = True
    pm_words: str = "atm"  # or "cf1"
    location: str = ""

    def __post_init__(self) -> None:
        if not self.sample_period > 0:
            raise ValueError("sample_period must be > 0")
        if self.history_capacity < 1:
            raise ValueError("history_capacity must be >= 1")
        if self.stale_after < 1:
            raise ValueError("stale_after must be >= 1")
        if self.sink_queue < 1:
            raise ValueError("sink_queue must be >= 1")
        if self.pm_words not in ("atm", "cf1"):
            raise ValueError("pm_words must be 'atm' or 'cf1'")


# --- sources ---------------------------------------------------------------

class Source(Protocol):
    def read(self) -> bytes:
        """Octets that arrived since the previous call (b"" if none)."""

    def close(self) -> None: ...


class ScriptedSource:
    """Hands out one pre-recorded chunk per cycle, then silence."""

    def __init__(self, chunks: Sequence[bytes]) -> None:
        self._chunks = list(chunks)
        self._next = 0

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def exhausted(self) -> bool:
        return self._next >= len(self._chunks)

    def read(self) -> bytes:
        if self.exhausted:
            return b""
        chunk = self._chunks[self._next]
        self._next += 1
        return chunk

    def close(self) -> None:
        pass


class FileSource:
    """Non-blocking reads from a serial device or FIFO."""

    def __init__(self, path: str) -> None:
        self.path = path
        self._fd = os.open(path, os.O_RDONLY | os.O_NONBLOCK | getattr(os, "O_NOCTTY", 0))
        if os.isatty(self._fd):
            from .telemetry import _configure_serial

            _configure_serial(self._fd)

    def read(self) -> bytes:
        if self._fd is None:
            raise SourceLost(f"{self.path} closed")
        out = bytearray()
        while True:
            try:
                data = os.read(self._fd, 4096)
            except BlockingIOError:
                break
            except OSError as exc:
                raise SourceLost(f"{self.path}: {exc}") from exc
            if not data:
                break
            out += data
        return bytes(out)

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None


class TcpSource:
    """Octets from a TCP byte pipe, e.g. a serial-to-network bridge."""

    def __init__(self, address: tuple[str, int]) -> None:
        self.address = address
        self._sock = socket.create_connection(address, timeout=5)
        self._sock.setblocking(False)

    def read(self) -> bytes:
        if self._sock is None:
            raise SourceLost(f"{self.address} closed")
        out = bytearray()
        while True:
            try:
                data = self._sock.recv(4096)
            except BlockingIOError:
                break
            except OSError as exc:
                raise SourceLost(f"{self.address}: {exc}") from exc
            if not data:
                self.close()
                if not out:
                    raise SourceLost(f"{self.address}: peer closed")
                break
            out += data
        return bytes(out)

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


# --- sinks -----------------------------------------------------------------

class Sink(Protocol):
    name: str

    def deliver(self, reading: CompositeReading) -> None: ...

    def close(self) -> None: ...


class SinkWorker:
    """Feeds one sink from a bounded drop-oldest queue on its own thread."""

    def __init__(self, sink: Sink, capacity: int) -> None:
        self.sink = sink
        self.capacity = capacity
        self.delivered = 0
        self.dropped = 0
        self.failed = 0
        self._queue: deque[CompositeReading] = deque()
        self._cv = threading.Condition()
        self._closing = False
        self._thread = threading.Thread(target=self._run, name=f"sink-{sink.name}", daemon=True)

    @property
    def name(self) -> str:
        return self.sink.name

    @property
    def queued(self) -> int:
        return len(self._queue)

    def start(self) -> None:
        self._thread.start()

    def put(self, reading: CompositeReading) -> None:
        with self._cv:
            if len(self._queue) >= self.capacity:
                self._queue.popleft()
                self.dropped += 1
            self._queue.append(reading)
            self._cv.notify()

    def _run(self) -> None:
        while True:
            with self._cv:
                while not self._queue and not self._closing:
                    self._cv.wait()
                if not self._queue:
                    return
                reading = self._queue.popleft()
            try:
                self.sink.deliver(reading)
                self.delivered += 1
            except Exception as exc:
                self.failed += 1
                logger.warning("sink %s failed on seq %d: %s", self.name, reading.seq, exc)

    def close(self, timeout: float = 5.0) -> bool:
        """Drain what is queued, then close the sink. False if the drain timed out."""
        with self._cv:
            self._closing = True
            self._cv.notify()
        if self._thread.is_alive():
            self._thread.join(timeout)
        drained = not self._thread.is_alive()
        if not drained:
            logger.warning("sink %s did not drain within %.1fs; %d queued readings abandoned", self.name, timeout, self.queued)
        try:
            self.sink.close()
        except Exception as exc:
            logger.warning("closing sink %s: %s", self.name, exc)
        return drained


# --- decoding channels -----------------------------------------------------

_ADC_WORD = struct.Struct(">H")


class _Channel:
    def __init__(self, name: str) -> None:
        self.name = name
        self.misses = 0
        self.faults = 0

    def miss(self, reason: str, stale_after: int) -> str:
        self.misses += 1
        self.faults += 1
        return "lost" if self.misses >= stale_after else reason


class _PmsChannel(_Channel):
    def __init__(self, words: str) -> None:
        super().__init__(SensorKind.PMS5003.value)
        self.scanner = Pms5003Scanner()
        self.words = words
        self.value: tuple[int, int] = (0, 0)

    def update(self, chunk: bytes) -> str | None:
        frames = self.scanner.feed(chunk)
        if not frames:
            return "silent" if not chunk else "bad-frame"
        f = frames[-1]
        self.value = (f.pm2_5_atm, f.pm10_atm) if self.words == "atm" else (f.pm2_5_cf1, f.pm10_cf1)
        return None


class _DhtChannel(_Channel):
    def __init__(self) -> None:
        super().__init__(SensorKind.DHT11.value)
        self.value: tuple[float, float] = (0.0, 0.0)  # temperature, humidity
        self.out_of_range = 0

    def update(self, chunk: bytes) -> str | None:
        if not chunk:
            return "silent"
        if len(chunk) < 5:
            return "truncated"
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", Dht11RangeWarning)
            try:
                frame = dht11_decode(chunk[-5:])
            except FrameError:
                return "bad-checksum"
        if caught:
            self.out_of_range += 1
        self.value = (frame.temperature, frame.humidity)
        return None


class _AdcChannel(_Channel):
    def __init__(self, calibration: Mq135Config) -> None:
        super().__init__(SensorKind.ADC.value)
        self.calibration = calibration
        self.value = Decimal("0.00")

    def update(self, chunk: bytes) -> str | None:
        if not chunk:
            return "silent"
        if len(chunk) < 2:
            return "truncated"
        (count,) = _ADC_WORD.unpack(chunk[-2:])
        try:
            self.value = round_co(adc_to_ppm(count, self.calibration))
        except CalibrationError:
            return "saturated"
        return None


# --- the gateway -----------------------------------------------------------

def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


class Gateway:
    def __init__(
        self,
        cfg: GatewayConfig,
        sources: Mapping[SensorKind, Source],
        sinks: Sequence[Sink] = (),
        *,
        tables: Mapping[Pollutant, BreakpointTable] | None = None,
        calibration: Mq135Config | None = None,
        reopen: Mapping[SensorKind, Callable[[], Source]] | None = None,
        clock: Callable[[], datetime] = _utc_now,
        monotonic: Callable[[], float] = time.monotonic,
    ) -> None:
        self.cfg = cfg
        self.sources = dict(sources)
        self.reopen = dict(reopen or {})
        self.tables = tables if tables is not None else default_tables()
        self.workers = [SinkWorker(s, cfg.sink_queue) for s in sinks]
        self.clock = clock
        self.monotonic = monotonic
        self._pms = _PmsChannel(cfg.pm_words)
        self._dht = _DhtChannel()
        self._adc = _AdcChannel(calibration or Mq135Config())
        self._channels = {SensorKind.PMS5003: self._pms, SensorKind.DHT11: self._dht, SensorKind.ADC: self._adc}
        self._seq = 0
        self._ring: deque[CompositeReading] = deque(maxlen=cfg.history_capacity)
        self._published: tuple[CompositeReading, ...] = ()
        self._stop = threading.Event()
        self._opened = False
        self._closed = False
        self.source_errors = 0
        self.aqi_errors = 0

    # sampling -------------------------------------------------------------

    def _read(self, kind: SensorKind) -> bytes:
        source = self.sources.get(kind)
        if source is None:
            return b""
        try:
            return source.read()
        except OSError as exc:
            self.source_errors += 1
            logger.warning("source %s lost: %s", kind.value, exc)
            self.sources.pop(kind, None)
            try:
                source.close()
            except OSError:
                pass
            return b""

    def _retry_lost_sources(self) -> None:
        for kind, opener in self.reopen.items():
            if kind in self.sources:
                continue
            if self._channels[kind].misses % self.cfg.stale_after:
                continue
            try:
                self.sources[kind] = opener()
                logger.info("source %s reopened", kind.value)
            except OSError as exc:
                logger.debug("reopen %s failed: %s", kind.value, exc)

    def cycle(self) -> CompositeReading:
        """Run one sampling cycle and publish its reading."""
        self._retry_lost_sources()
        faults = {}
        for kind, channel in self._channels.items():
            reason = channel.update(self._read(kind))
            if reason is None:
                channel.misses = 0
            else:
                faults[channel.name] = channel.miss(reason, self.cfg.stale_after)

        pm2_5, pm10 = self._pms.value
        temperature, humidity = self._dht.value
        co = self._adc.value
        concentrations = {Pollutant.PM2_5: pm2_5, Pollutant.PM10: pm10, Pollutant.CO: co}
        aqi = compute_aqi(concentrations, self.tables, clamp=self.cfg.clamp_aqi)

        self._seq += 1
        reading = CompositeReading(
            seq=self._seq,
            wall_time=self.clock(),
            mono_time=self.monotonic(),
            pm2_5=pm2_5,
            pm10=pm10,
            temperature=temperature,
            humidity=humidity,
            co=co,
            aqi=aqi,
            faults=faults,
        )
        self._ring.append(reading)
        self._published = tuple(self._ring)
        for worker in self.workers:
            worker.put(reading)
        return reading

    # lifecycle ------------------------------------------------------------

    def open(self) -> "Gateway":
        if not self._opened:
            self._opened = True
            for worker in self.workers:
                worker.start()
        return self

    def close(self, drain_timeout: float = 5.0) -> None:
        """Flush and close every sink, then the sources. Idempotent."""
        if self._closed:
            return
        self._closed = True
        for worker in self.workers:
            if self._opened:
                worker.close(drain_timeout)
            else:
                worker.sink.close()
        for source in self.sources.values():
            try:
                source.close()
            except OSError:
                pass

    def run(self, max_cycles: int | None = None, drain_timeout: float = 5.0) -> int:
        """Sample on the configured cadence until stopped or ``max_cycles`` is reached.

        A stop request lets the current cycle finish. Returns cycles run.
        """
        self.open()
        period = self.cfg.sample_period
        start = self._seq
        deadline = self.monotonic()
        try:
            while not self._stop.is_set():
                if max_cycles is not None and self._seq - start >= max_cycles:
                    break
                self.cycle()
                deadline += period
                delay = deadline - self.monotonic()
                if delay > 0:
                    self._stop.wait(delay)
                else:
                    # behind schedule: sample now, do not burst to catch up
                    deadline = self.monotonic()
        finally:
            self.close(drain_timeout)
        return self._seq - start

    def stop(self) -> None:
        self._stop.set()

    @property
    def stopping(self) -> bool:
        return self._stop.is_set()

    def __enter__(self) -> "Gateway":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()

    # readers (any thread) -------------------------------------------------

    def snapshot(self) -> CompositeReading:
        published = self._published
        if not published:
            raise NotReady("no cycle completed yet")
        return published[-1]

    def history(self, last_k: int) -> list[CompositeReading]:
        if last_k <= 0:
            return []
        return list(self._published[-last_k:])

    def stats(self) -> dict[str, object]:
        scan = self._pms.scanner.stats
        out: dict[str, object] = {
            "location": self.cfg.location,
            "cycles": self._seq,
            "pms5003.frames": scan.frames,
            "pms5003.skipped_octets": scan.skipped_octets,
            "pms5003.bad_checksum": scan.bad_checksum,
            "pms5003.bad_length": scan.bad_length,
            "dht11.out_of_range": self._dht.out_of_range,
            "source_errors": self.source_errors,
        }
        for channel in self._channels.values():
            out[f"{channel.name}.faults"] = channel.faults
        for worker in self.workers:
            out[f"sink.{worker.name}.delivered"] = worker.delivered
            out[f"sink.{worker.name}.dropped"] = worker.dropped
            out[f"sink.{worker.name}.failed"] = worker.failed
        return out
