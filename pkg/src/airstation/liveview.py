"""Terminal stand-in for the station's two-line character LCD."""

from __future__ import annotations

import logging
import sys
import time
from typing import Callable, TextIO

from .readings import CompositeReading, DisplayFields, display_fields, render_lcd
from .telemetry import TelemetryFormatError, parse_line, query

logger = logging.getLogger(__name__)

STALE_MARK = " [stale]"


class LcdSink:
    """Gateway sink printing the two LCD lines for each reading."""

    name = "lcd"

    def __init__(self, out: TextIO | None = None) -> None:
        self.out = out or sys.stderr

    def deliver(self, reading: CompositeReading) -> None:
        line1, line2 = render_lcd(display_fields(reading))
        if reading.faults:
            line1 += STALE_MARK
        self.out.write(f"{line1}\n{line2}\n")
        self.out.flush()

    def close(self) -> None:
        pass


def render_watch(fields: DisplayFields | None, stale: bool, note: str = "") -> str:
    if fields is None:
        return f"AQI --- waiting{STALE_MARK}\n{note}\n"
    line1, line2 = render_lcd(fields)
    if stale:
        line1 += STALE_MARK
    return f"{line1}\n{line2}\n"


def watch(
    address: tuple[str, int],
    out: TextIO,
    *,
    interval: float = 1.0,
    polls: int | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> int:
    """Poll ``GET LATEST`` and redraw; keeps the last value marked stale on errors."""
    last: DisplayFields | None = None
    done = 0
    while polls is None or done < polls:
        if done:
            sleep(interval)
        done += 1
        try:
            reply = query(address, "GET LATEST", timeout=max(interval, 1.0))
            if not reply or reply[0].startswith("ERR"):
                raise ConnectionError(reply[0] if reply else "empty reply")
            last = parse_line(reply[0])
            out.write(render_watch(last, stale=False))
        except (OSError, TelemetryFormatError) as exc:
            out.write(render_watch(last, stale=True, note=f"no data from {address[0]}:{address[1]}: {exc}; retrying"))
        out.flush()
    return done
