"""MQ135 raw ADC count -> CO ppm.

The sensor sits in a voltage divider with a load resistor; the ADC reads
the voltage across the load. Sensor resistance then maps to ppm through the
power law ``ppm = curve_a * (rs / r0) ** curve_b``.

The default curve constants are a common MQ135 CO characterisation and r0
is a placeholder. Both need calibrating against a reference instrument
before absolute readings mean anything.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from decimal import ROUND_HALF_UP, Decimal


class CalibrationError(ValueError):
    pass


class Saturated(CalibrationError):
    """ADC at a rail, so no finite sensor resistance can be inferred."""


@dataclass(frozen=True)
class Mq135Config:
    vcc: float = 5.0
    adc_max: int = 1023
    r_load: float = 10_000.0
    r0: float = 10_000.0
    curve_a: float = 605.18
    curve_b: float = -3.937

    def __post_init__(self) -> None:
        for name in ("vcc", "r_load", "r0", "curve_a"):
            if not getattr(self, name) > 0:
                raise CalibrationError(f"{name} must be positive")
        if not isinstance(self.adc_max, int) or self.adc_max < 1:
            raise CalibrationError("adc_max must be an integer >= 1")
        if not self.curve_b < 0:
            raise CalibrationError("curve_b must be negative")

    @classmethod
    def from_mapping(cls, data: dict | None) -> "Mq135Config":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise CalibrationError(f"unknown calibration key(s): {', '.join(unknown)}")
        if "adc_max" in data:
            data["adc_max"] = int(data["adc_max"])
        return cls(**{k: (v if k == "adc_max" else float(v)) for k, v in data.items()})

    def to_mapping(self) -> dict:
        return asdict(self)


def adc_to_rs(adc: int, cfg: Mq135Config) -> float:
    if not 1 <= adc <= cfg.adc_max - 1:
        raise Saturated(f"ADC count {adc} at or beyond rail (1..{cfg.adc_max - 1} usable)")
    return cfg.r_load * (cfg.adc_max - adc) / adc


def rs_to_ppm(rs: float, cfg: Mq135Config) -> float:
    if not rs > 0:
        raise CalibrationError(f"sensor resistance must be positive, got {rs}")
    return cfg.curve_a * (rs / cfg.r0) ** cfg.curve_b


def adc_to_ppm(adc: int, cfg: Mq135Config) -> float:
    return rs_to_ppm(adc_to_rs(adc, cfg), cfg)


def ppm_to_rs(ppm: float, cfg: Mq135Config) -> float:
    if not ppm > 0:
        raise CalibrationError(f"ppm must be positive, got {ppm}")
    return cfg.r0 * (ppm / cfg.curve_a) ** (1 / cfg.curve_b)


def rs_to_adc(rs: float, cfg: Mq135Config) -> int:
    """Ideal converter reading for a sensor resistance, rounded to nearest count."""
    exact = Decimal(cfg.adc_max * cfg.r_load / (rs + cfg.r_load))
    count = int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))
    if not 1 <= count <= cfg.adc_max - 1:
        raise Saturated(f"resistance {rs:.1f} ohm quantizes to rail count {count}")
    return count


def ppm_to_adc(ppm: float, cfg: Mq135Config) -> int:
    return rs_to_adc(ppm_to_rs(ppm, cfg), cfg)


def quantization_bound(adc: int, cfg: Mq135Config) -> float:
    """Largest ppm change caused by moving one count either way from ``adc``."""
    here = adc_to_ppm(adc, cfg)
    spans = [abs(adc_to_ppm(n, cfg) - here) for n in (adc - 1, adc + 1) if 1 <= n <= cfg.adc_max - 1]
    return max(spans)
