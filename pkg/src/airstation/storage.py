"""CSV log in the SD-card column layout.

Each file is an optional header line followed by rows of::

    no,pm2.5,pm10,temperature,humidity,co,aqi

with bare integers, CO to two decimals, ASCII and LF endings. ``no`` restarts
at 1 in every file.

Crash safety: a file appears under its final name only once its header is
on disk (written to a temporary name, fsynced, then linked into place), and
each row goes out in a single ``write`` on an ``O_APPEND`` descriptor
followed by ``fsync``. A killed process therefore leaves whole lines only.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Callable

from .readings import CompositeReading, display_fields

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("no", "pm2.5", "pm10", "temperature", "humidity", "co", "aqi")
CSV_HEADER = ",".join(CSV_COLUMNS)


class IoFailure(OSError):
    pass


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CsvRecord:
    no: int
    pm2_5: int
    pm10: int
    temperature: int
    humidity: int
    co: Decimal
    aqi: int

    @classmethod
    def from_reading(cls, reading: CompositeReading, no: int = 0) -> "CsvRecord":
        f = display_fields(reading)
        return cls(no, f.pm2_5, f.pm10, f.temperature, f.humidity, f.co, f.aqi)

    def to_line(self) -> str:
        return f"{self.no},{self.pm2_5},{self.pm10},{self.temperature},{self.humidity},{self.co:.2f},{self.aqi}\n"

    @classmethod
    def from_line(cls, line: str) -> "CsvRecord":
        parts = line.rstrip("\n").split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise CsvFormatError(f"expected {len(CSV_COLUMNS)} columns, got {len(parts)}: {line!r}")
        try:
            no, pm2_5, pm10, temp, hum = (int(p) for p in parts[:5])
            co = Decimal(parts[5])
            aqi = int(parts[6])
        except (ValueError, InvalidOperation):
            raise CsvFormatError(f"bad field in {line!r}") from None
        return cls(no, pm2_5, pm10, temp, hum, co, aqi)


def read_csv_log(path) -> list[CsvRecord]:
    """Parse a log file, with or without header. Rejects a trailing partial line."""
    text = Path(path).read_text(encoding="ascii")
    if text and not text.endswith("\n"):
        raise CsvFormatError(f"{path}: last line is incomplete")
    lines = text.splitlines()
    if lines and lines[0] == CSV_HEADER:
        lines = lines[1:]
    records = [CsvRecord.from_line(line) for line in lines]
    for k, rec in enumerate(records, start=1):
        if rec.no != k:
            raise CsvFormatError(f"{path}: row {k} numbered {rec.no}")
    return records


def repair_tail(path) -> int:
    """Cut an incomplete final line (e.g. after power loss). Returns octets removed."""
    with open(path, "rb+") as fh:
        data = fh.read()
        keep = data.rfind(b"\n") + 1
        if keep == len(data):
            return 0
        fh.truncate(keep)
        return len(data) - keep


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


class CsvLog:
    """Append-only CSV log with size/row based rotation. Single writer."""

    def __init__(
        self,
        directory,
        *,
        prefix: str = "aqlog",
        headerless: bool = False,
        max_rows: int | None = None,
        max_bytes: int | None = None,
        fsync: bool = True,
        clock: Callable[[], datetime] = _utc_now,
    ) -> None:
        if max_rows is not None and max_rows < 1:
            raise ValueError("max_rows must be >= 1")
        self.directory = Path(directory)
        self.prefix = prefix
        self.headerless = headerless
        self.max_rows = max_rows
        self.max_bytes = max_bytes
        self.fsync = fsync
        self.clock = clock
        self.files: list[Path] = []
        self._fd: int | None = None
        self._rows = 0
        self._size = 0

    @property
    def path(self) -> Path | None:
        return self.files[-1] if self._fd is not None else None

    @property
    def rows(self) -> int:
        return self._rows

    def _new_name(self) -> Path:
        stamp = self.clock().astimezone(timezone.utc).strftime("%Y%m%dT%H%M%S.%fZ")
        return self.directory / f"{self.prefix}-{stamp}.csv"

    def _create(self) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        header = b"" if self.headerless else (CSV_HEADER + "\n").encode("ascii")
        tmp = self.directory / f".{self.prefix}-{os.getpid()}-{id(self):x}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())
        target = self._new_name()
        n = 0
        while True:
            try:
                os.link(tmp, target)
                break
            except FileExistsError:
                n += 1
                target = target.with_name(f"{target.stem.split('~')[0]}~{n}.csv")
        os.unlink(tmp)
        if self.fsync:
            dfd = os.open(self.directory, os.O_RDONLY)
            try:
                os.fsync(dfd)
            finally:
                os.close(dfd)
        self._fd = os.open(target, os.O_WRONLY | os.O_APPEND)
        self.files.append(target)
        self._rows = 0
        self._size = len(header)
        logger.info("opened log %s", target)

    def _due(self, line_len: int) -> bool:
        if self._rows == 0:
            return False
        if self.max_rows is not None and self._rows >= self.max_rows:
            return True
        return self.max_bytes is not None and self._size + line_len > self.max_bytes

    def rotate(self) -> Path:
        """Close the current file and start a new one numbered from 1."""
        try:
            self._close_fd()
            self._create()
        except OSError as exc:
            raise IoFailure(f"rotation failed: {exc}") from exc
        return self.files[-1]

    def append(self, record: CsvRecord) -> CsvRecord:
        """Write one row; the log assigns ``no``. Durable on return."""
        try:
            if self._fd is None:
                self._create()
            line = replace(record, no=self._rows + 1).to_line().encode("ascii")
            if self._due(len(line)):
                self.rotate()
                line = replace(record, no=1).to_line().encode("ascii")
            view = memoryview(line)
            while view:
                written = os.write(self._fd, view)
                view = view[written:]
            if self.fsync:
                os.fsync(self._fd)
        except IoFailure:
            raise
        except OSError as exc:
            raise IoFailure(f"append failed: {exc}") from exc
        self._rows += 1
        self._size += len(line)
        return replace(record, no=self._rows)

    def _close_fd(self) -> None:
        if self._fd is not None:
            fd, self._fd = self._fd, None
            if self.fsync:
                os.fsync(fd)
            os.close(fd)

    def close(self) -> None:
        self._close_fd()

    def __enter__(self) -> "CsvLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class CsvSink:
    """Gateway sink persisting readings; one retry per failed append."""

    name = "csv"

    def __init__(self, log: CsvLog) -> None:
        self.log = log
        self.lost = 0

    def deliver(self, reading: CompositeReading) -> None:
        record = CsvRecord.from_reading(reading)
        try:
            self.log.append(record)
        except IoFailure as first:
            logger.warning("csv append failed (%s); retrying once", first)
            try:
                self.log.append(record)
            except IoFailure:
                self.lost += 1
                raise

    def close(self) -> None:
        self.log.close()
