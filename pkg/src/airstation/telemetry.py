"""Telemetry: the serial line protocol and the TCP query port.

Line protocol (one reading per line, ASCII, CRLF)::

    PM2.5:<int> PM10:<int> T:<int> H:<int> CO:<d.dd> AQI:<int> CAT:<word>

Query protocol (one request per line, answers CRLF-terminated)::

    GET LATEST       one telemetry line
    GET HISTORY <k>  up to k lines, oldest first, then an empty line
    GET STATS        key:value counter lines, then an empty line
    anything else    ERR unknown-command

The query port has no authentication; bind it to a trusted network only.
"""

from __future__ import annotations

import logging
import os
import re
import socket
import socketserver
import sys
import threading
import time
from dataclasses import dataclass
from decimal import Decimal
from typing import BinaryIO, Callable, Protocol

from .readings import CompositeReading, DisplayFields, display_fields

logger = logging.getLogger(__name__)

CRLF = "\r\n"
_LINE = re.compile(
    r"PM2\.5:(?P<pm2_5>\d+) PM10:(?P<pm10>\d+) T:(?P<temperature>-?\d+) H:(?P<humidity>\d+) "
    r"CO:(?P<co>\d+\.\d\d) AQI:(?P<aqi>\d+) CAT:(?P<category>[A-Za-z]+)"
)


class TelemetryFormatError(ValueError):
    pass


class PortClosed(OSError):
    pass


class BindFailure(OSError):
    pass


def format_line(reading: CompositeReading | DisplayFields) -> str:
    f = reading if isinstance(reading, DisplayFields) else display_fields(reading)
    return (
        f"PM2.5:{f.pm2_5} PM10:{f.pm10} T:{f.temperature} H:{f.humidity} "
        f"CO:{f.co_text} AQI:{f.aqi} CAT:{f.category}{CRLF}"
    )


def parse_line(text: str) -> DisplayFields:
    m = _LINE.fullmatch(text.rstrip("\r\n"))
    if m is None:
        raise TelemetryFormatError(f"not a telemetry line: {text!r}")
    g = m.groupdict()
    return DisplayFields(
        pm2_5=int(g["pm2_5"]),
        pm10=int(g["pm10"]),
        temperature=int(g["temperature"]),
        humidity=int(g["humidity"]),
        co=Decimal(g["co"]),
        aqi=int(g["aqi"]),
        category=g["category"],
    )


def iter_lines(data: bytes):
    """Parse a captured stream; a partial first line (joined mid-stream) is skipped."""
    text = data.decode("ascii", errors="replace")
    for chunk in text.split(CRLF)[:-1]:
        try:
            yield parse_line(chunk)
        except TelemetryFormatError:
            continue


def emit_line(reading: CompositeReading, port: BinaryIO) -> None:
    try:
        port.write(format_line(reading).encode("ascii"))
        port.flush()
    except (OSError, ValueError) as exc:  # ValueError: write to closed file
        raise PortClosed(str(exc)) from exc


def parse_address(text: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = default_host, text
    try:
        return (host or default_host, int(port))
    except ValueError:
        raise ValueError(f"bad address {text!r}, expected host:port") from None


def _configure_serial(fd: int, baud: int = 9600) -> None:
    """9600-8-N-1 raw mode, the HC-05 factory default."""
    import termios

    attrs = termios.tcgetattr(fd)
    speed = getattr(termios, f"B{baud}")
    attrs[0] = 0  # iflag
    attrs[1] = 0  # oflag
    attrs[2] = termios.CS8 | termios.CREAD | termios.CLOCAL
    attrs[3] = 0  # lflag
    attrs[4] = attrs[5] = speed
    termios.tcsetattr(fd, termios.TCSANOW, attrs)


def open_byte_sink(endpoint: str) -> BinaryIO:
    """Open ``-`` (stdout), ``tcp:host:port``, a serial device or a plain file."""
    if endpoint == "-":
        return sys.stdout.buffer
    if endpoint.startswith("tcp:"):
        sock = socket.create_connection(parse_address(endpoint[4:]), timeout=5)
        sock.settimeout(None)
        return sock.makefile("wb")
    fh = open(endpoint, "ab", buffering=0)
    if os.isatty(fh.fileno()):
        _configure_serial(fh.fileno())
    return fh


class LineEmitter:
    """Gateway sink writing one telemetry line per reading to a byte sink.

    After a write error the port is dropped; the next delivery at least
    ``retry_interval`` seconds later reopens it through ``opener``.
    """

    name = "telemetry"

    def __init__(
        self,
        port: BinaryIO | None = None,
        opener: Callable[[], BinaryIO] | None = None,
        retry_interval: float = 5.0,
    ) -> None:
        if port is None and opener is None:
            raise ValueError("need a port or an opener")
        self.port = port
        self.opener = opener
        self.retry_interval = retry_interval
        self.port_closed = 0
        self.skipped = 0
        self._next_retry = 0.0

    def deliver(self, reading: CompositeReading) -> None:
        if self.port is None:
            if self.opener is None or time.monotonic() < self._next_retry:
                self.skipped += 1
                return
            try:
                self.port = self.opener()
            except OSError as exc:
                self._next_retry = time.monotonic() + self.retry_interval
                self.skipped += 1
                logger.warning("telemetry reconnect failed: %s", exc)
                return
        try:
            emit_line(reading, self.port)
        except PortClosed:
            self.port_closed += 1
            self.port = None
            self._next_retry = time.monotonic() + self.retry_interval
            raise

    def close(self) -> None:
        port, self.port = self.port, None
        if port is not None and port is not sys.stdout.buffer:
            try:
                port.close()
            except OSError:
                pass


class ReadingSource(Protocol):
    def snapshot(self) -> CompositeReading: ...

    def history(self, last_k: int) -> list[CompositeReading]: ...

    def stats(self) -> dict[str, object]: ...


class _QueryHandler(socketserver.StreamRequestHandler):
    timeout = 300

    def handle(self) -> None:
        gateway: ReadingSource = self.server.gateway
        while True:
            try:
                raw = self.rfile.readline(256)
            except OSError:
                return
            if not raw:
                return
            try:
                reply = answer(gateway, raw.decode("ascii", errors="replace").strip())
                self.wfile.write(reply.encode("ascii"))
                self.wfile.flush()
            except OSError:
                return


def answer(gateway: ReadingSource, request: str) -> str:
    """The full reply text for one request line."""
    words = request.split()
    if words[:2] == ["GET", "LATEST"] and len(words) == 2:
        try:
            return format_line(gateway.snapshot())
        except LookupError:
            return "ERR not-ready" + CRLF
    if words[:2] == ["GET", "HISTORY"] and len(words) == 3:
        try:
            k = int(words[2])
        except ValueError:
            k = -1
        if k < 0:
            return "ERR bad-argument" + CRLF
        return "".join(format_line(r) for r in gateway.history(k)) + CRLF
    if words == ["GET", "STATS"]:
        return "".join(f"{key}:{value}{CRLF}" for key, value in gateway.stats().items()) + CRLF
    return "ERR unknown-command" + CRLF


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = False
    block_on_close = False


class QueryServer:
    """Threaded TCP server answering point queries from published snapshots."""

    def __init__(self, bind: tuple[str, int], gateway: ReadingSource) -> None:
        try:
            self._server = _Server(bind, _QueryHandler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {bind[0]}:{bind[1]}: {exc}") from exc
        self._server.gateway = gateway
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "QueryServer":
        self._thread = threading.Thread(target=self._server.serve_forever, name="query-server", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        if self._thread is not None:
            self._server.shutdown()
            self._thread.join(timeout=5)
        self._server.server_close()

    def __enter__(self) -> "QueryServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_queries(bind: tuple[str, int], gateway: ReadingSource) -> QueryServer:
    return QueryServer(bind, gateway).start()


def query(address: tuple[str, int], request: str, timeout: float = 5.0) -> list[str]:
    """Send one request; return the reply lines without terminators."""
    with socket.create_connection(address, timeout=timeout) as sock:
        sock.sendall((request + CRLF).encode("ascii"))
        rfile = sock.makefile("rb")
        multi = request.split()[:2] in (["GET", "HISTORY"], ["GET", "STATS"])
        lines = []
        while True:
            raw = rfile.readline()
            if not raw:
                break
            line = raw.decode("ascii").rstrip("\r\n")
            if line.startswith("ERR") and not lines:
                return [line]
            if not multi:
                return [line]
            if line == "":
                break
            lines.append(line)
        return lines
