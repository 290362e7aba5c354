"""The per-cycle reading and how it is shown on every output."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping

from .aqi import AqiResult

CO_PLACES = Decimal("0.01")


def round_co(ppm: float | Decimal) -> Decimal:
    """CO as logged: ppm rounded half-up to two decimals."""
    value = ppm if isinstance(ppm, Decimal) else Decimal(repr(float(ppm)))
    return value.quantize(CO_PLACES, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class CompositeReading:
    seq: int
    wall_time: datetime
    mono_time: float
    pm2_5: int
    pm10: int
    temperature: float
    humidity: float
    co: Decimal
    aqi: AqiResult
    # sensor name -> fault reason; a listed sensor carries its last good value
    faults: Mapping[str, str] = field(default_factory=dict)

    @property
    def stale(self) -> frozenset[str]:
        return frozenset(self.faults)


@dataclass(frozen=True)
class DisplayFields:
    """A reading reduced to what the CSV, telemetry and LCD show."""

    pm2_5: int
    pm10: int
    temperature: int
    humidity: int
    co: Decimal
    aqi: int
    category: str

    @property
    def co_text(self) -> str:
        return f"{self.co:.2f}"


def display_fields(r: CompositeReading) -> DisplayFields:
    return DisplayFields(
        pm2_5=int(r.pm2_5),
        pm10=int(r.pm10),
        temperature=int(r.temperature),
        humidity=int(r.humidity),
        co=round_co(r.co),
        aqi=r.aqi.overall,
        category=r.aqi.category.value,
    )


def render_lcd(fields: DisplayFields) -> tuple[str, str]:
    """Two-line summary in the spirit of the device's 16x2 character LCD."""
    line1 = f"AQI {fields.aqi} {fields.category}"
    line2 = (
        f"PM2.5 {fields.pm2_5} PM10 {fields.pm10} "
        f"T{fields.temperature} H{fields.humidity} CO {fields.co_text}"
    )
    return line1, line2
