"""Air Quality Index engine.

Per-pollutant sub-indices come from piecewise-linear interpolation over a
breakpoint table; the overall index is the maximum sub-index.

Concentrations are truncated to the table precision and then handled as
scaled integers, so row lookup and interpolation are exact.
"""

from __future__ import annotations

import functools
from bisect import bisect_left
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, Decimal, InvalidOperation
from enum import Enum
from importlib import resources
from types import MappingProxyType
from typing import Mapping, Union

import yaml

Number = Union[int, float, str, Decimal]

AQI_MAX = 500


class AqiError(Exception):
    """Base class for AQI engine errors."""


class OutOfRange(AqiError, ValueError):
    """A value falls outside the domain of a table or of the AQI scale."""


class NoTable(AqiError):
    """A breakpoint table has no rows."""


class EmptyInput(AqiError, ValueError):
    """No sub-indices were supplied to the max rule."""


class MalformedConfig(AqiError, ValueError):
    """Breakpoint config cannot be parsed or is missing data."""


class NonContiguousRows(MalformedConfig):
    """Adjacent breakpoint rows leave a gap or overlap."""


class Pollutant(Enum):
    """Pollutants measured by the station, in tie-break priority order."""

    PM2_5 = "pm2_5"
    PM10 = "pm10"
    CO = "co"

    @classmethod
    def parse(cls, name: str) -> "Pollutant":
        key = name.strip().lower().replace(".", "_").replace("-", "_")
        aliases = {"pm25": "pm2_5", "pm2_5": "pm2_5", "pm10": "pm10", "co": "co"}
        try:
            return cls(aliases[key])
        except KeyError:
            raise ValueError(f"unknown pollutant {name!r}") from None


# Iteration order of the enum doubles as the dominant-pollutant tie-break.
TIE_BREAK_ORDER = tuple(Pollutant)


class Category(Enum):
    GOOD = "Good"
    MODERATE = "Moderate"
    UNHEALTHY_SENSITIVE = "UnhealthySensitive"
    UNHEALTHY = "Unhealthy"
    VERY_UNHEALTHY = "VeryUnhealthy"
    HAZARDOUS = "Hazardous"

    def __str__(self) -> str:
        return self.value


CATEGORY_BANDS: tuple[tuple[int, int, Category], ...] = (
    (0, 50, Category.GOOD),
    (51, 100, Category.MODERATE),
    (101, 150, Category.UNHEALTHY_SENSITIVE),
    (151, 200, Category.UNHEALTHY),
    (201, 300, Category.VERY_UNHEALTHY),
    (301, 500, Category.HAZARDOUS),
)


def _to_decimal(value: Number) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        # repr gives the shortest round-tripping string: 55.5 -> "55.5"
        return Decimal(repr(value))
    try:
        return Decimal(str(value).strip())
    except InvalidOperation:
        raise ValueError(f"not a number: {value!r}") from None


def truncate(value: Number, precision: int) -> Decimal:
    """Truncate ``value`` toward zero to ``precision`` decimal places."""
    d = _to_decimal(value)
    if not d.is_finite():
        raise ValueError(f"not a finite number: {value!r}")
    return d.quantize(Decimal(1).scaleb(-precision), rounding=ROUND_DOWN)


@dataclass(frozen=True)
class PollutantConcentration:
    """A concentration already truncated to its table's precision."""

    pollutant: Pollutant
    value: Decimal

    def __post_init__(self) -> None:
        value = _to_decimal(self.value)
        if not value.is_finite() or value < 0:
            raise ValueError(f"{self.pollutant.value}: concentration must be >= 0, got {self.value!r}")
        object.__setattr__(self, "value", value)

    @classmethod
    def truncated(cls, pollutant: Pollutant, raw: Number, precision: int | None = None) -> "PollutantConcentration":
        if precision is None:
            precision = DEFAULT_PRECISION[pollutant]
        return cls(pollutant, truncate(raw, precision))


DEFAULT_PRECISION = {Pollutant.PM2_5: 1, Pollutant.PM10: 0, Pollutant.CO: 1}


@dataclass(frozen=True)
class BreakpointRow:
    c_low: Decimal
    c_high: Decimal
    i_low: int
    i_high: int

    def __post_init__(self) -> None:
        if self.c_low < 0 or self.i_low < 0:
            raise ValueError("breakpoints must be non-negative")
        if not self.c_high > self.c_low:
            raise ValueError(f"c_high {self.c_high} must exceed c_low {self.c_low}")
        if not self.i_high > self.i_low:
            raise ValueError(f"i_high {self.i_high} must exceed i_low {self.i_low}")


@dataclass(frozen=True)
class BreakpointTable:
    pollutant: Pollutant
    precision: int
    rows: tuple[BreakpointRow, ...]
    # scaled-integer copies of the concentration breakpoints
    _lows: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _highs: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        rows = tuple(self.rows)
        object.__setattr__(self, "rows", rows)
        unit = Decimal(1).scaleb(-self.precision)
        for k, row in enumerate(rows):
            for v in (row.c_low, row.c_high):
                if v != v.quantize(unit):
                    raise MalformedConfig(
                        f"{self.pollutant.value} row {k}: {v} has more than {self.precision} decimal places"
                    )
            if k == 0:
                continue
            prev = rows[k - 1]
            if row.c_low != prev.c_high + unit or row.i_low != prev.i_high + 1:
                raise NonContiguousRows(
                    f"{self.pollutant.value} row {k}: ({row.c_low}, {row.i_low}) does not follow "
                    f"({prev.c_high}, {prev.i_high})"
                )
        scale = 10**self.precision
        object.__setattr__(self, "_lows", tuple(int(r.c_low * scale) for r in rows))
        object.__setattr__(self, "_highs", tuple(int(r.c_high * scale) for r in rows))

    @property
    def max_concentration(self) -> Decimal:
        if not self.rows:
            raise NoTable(f"{self.pollutant.value}: table has no rows")
        return self.rows[-1].c_high

    def row_for(self, scaled: int) -> int:
        """Index of the row containing a scaled concentration, or -1 above the table."""
        k = bisect_left(self._highs, scaled)
        return k if k < len(self._highs) else -1


@dataclass(frozen=True)
class AqiResult:
    sub_indices: Mapping[Pollutant, int]
    overall: int
    dominant: Pollutant
    category: Category

    def to_dict(self) -> dict:
        return {
            "sub_indices": {p.value: v for p, v in self.sub_indices.items()},
            "overall": self.overall,
            "dominant": self.dominant.value,
            "category": self.category.value,
        }


def compute_sub_index(
    table: BreakpointTable,
    conc: PollutantConcentration | Number,
    *,
    clamp: bool = False,
) -> int:
    """Interpolate one pollutant's sub-index, rounding half up.

    Plain numbers are truncated to the table precision first. Values above
    the top row raise :class:`OutOfRange` unless ``clamp`` is set, in which
    case they map to 500.
    """
    if not table.rows:
        raise NoTable(f"{table.pollutant.value}: table has no rows")
    if isinstance(conc, PollutantConcentration):
        if conc.pollutant is not table.pollutant:
            raise ValueError(f"{conc.pollutant.value} concentration given to {table.pollutant.value} table")
        value = conc.value
    else:
        value = PollutantConcentration(table.pollutant, _to_decimal(conc)).value
    c = int(truncate(value, table.precision).scaleb(table.precision))

    k = table.row_for(c)
    if k < 0:
        if clamp:
            return AQI_MAX
        raise OutOfRange(
            f"{table.pollutant.value} concentration {value} exceeds table maximum {table.max_concentration}"
        )
    c_lo, c_hi = table._lows[k], table._highs[k]
    if c < c_lo:
        # only reachable when the first row starts above zero
        raise OutOfRange(f"{table.pollutant.value} concentration {value} is below the table minimum")
    row = table.rows[k]
    num = (row.i_high - row.i_low) * (c - c_lo)
    den = c_hi - c_lo
    return row.i_low + (2 * num + den) // (2 * den)


def categorize(aqi: int) -> Category:
    for low, high, category in CATEGORY_BANDS:
        if low <= aqi <= high:
            return category
    raise OutOfRange(f"AQI {aqi} outside [0, {AQI_MAX}]")


def compute_overall(sub: Mapping[Pollutant, int]) -> AqiResult:
    """Apply the max rule; ties go to the earliest pollutant in TIE_BREAK_ORDER."""
    if not sub:
        raise EmptyInput("no sub-indices supplied")
    overall = max(sub.values())
    dominant = next(p for p in TIE_BREAK_ORDER if sub.get(p) == overall)
    ordered = {p: sub[p] for p in TIE_BREAK_ORDER if p in sub}
    return AqiResult(ordered, overall, dominant, categorize(overall))


def compute_aqi(
    concentrations: Mapping[Pollutant, Number],
    tables: Mapping[Pollutant, BreakpointTable] | None = None,
    *,
    clamp: bool = False,
) -> AqiResult:
    """Sub-indices for every supplied pollutant, combined by the max rule."""
    if tables is None:
        tables = default_tables()
    sub = {}
    for pollutant, raw in concentrations.items():
        table = tables[pollutant]
        conc = PollutantConcentration.truncated(pollutant, raw, table.precision)
        sub[pollutant] = compute_sub_index(table, conc, clamp=clamp)
    return compute_overall(sub)


def _parse_table(key: str, section) -> BreakpointTable:
    pollutant = Pollutant(key)
    if not isinstance(section, dict):
        raise MalformedConfig(f"{key}: section must be a mapping")
    precision = section.get("precision")
    if not isinstance(precision, int) or isinstance(precision, bool) or precision < 0:
        raise MalformedConfig(f"{key}: 'precision' must be a non-negative integer")
    raw_rows = section.get("rows")
    if not isinstance(raw_rows, list) or not raw_rows:
        raise MalformedConfig(f"{key}: 'rows' must be a non-empty list")
    rows = []
    for k, raw in enumerate(raw_rows):
        if not isinstance(raw, (list, tuple)) or len(raw) != 4:
            raise MalformedConfig(f"{key} row {k}: expected [c_low, c_high, i_low, i_high]")
        c_low, c_high, i_low, i_high = raw
        if not all(isinstance(i, int) and not isinstance(i, bool) for i in (i_low, i_high)):
            raise MalformedConfig(f"{key} row {k}: index breakpoints must be integers")
        try:
            rows.append(BreakpointRow(_to_decimal(c_low), _to_decimal(c_high), i_low, i_high))
        except ValueError as exc:
            raise MalformedConfig(f"{key} row {k}: {exc}") from None
    for k in range(1, len(rows)):
        if rows[k].c_low < rows[k - 1].c_low:
            raise NonContiguousRows(f"{key} row {k}: rows must be sorted by c_low")
    return BreakpointTable(pollutant, precision, tuple(rows))


def load_breakpoint_tables(source: str) -> dict[Pollutant, BreakpointTable]:
    """Parse and validate breakpoint tables from YAML text."""
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise MalformedConfig(f"breakpoint config does not parse: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedConfig("breakpoint config must be a mapping of pollutant sections")
    known = {p.value for p in Pollutant}
    unknown = sorted(set(map(str, doc)) - known)
    if unknown:
        raise MalformedConfig(f"unknown pollutant section(s): {', '.join(unknown)}")
    tables = {}
    for pollutant in Pollutant:
        if pollutant.value not in doc:
            raise MalformedConfig(f"missing section for pollutant {pollutant.value!r}")
        tables[pollutant] = _parse_table(pollutant.value, doc[pollutant.value])
    return tables


def default_breakpoint_source() -> str:
    return resources.files("airstation").joinpath("data/breakpoints.yaml").read_text(encoding="utf-8")


@functools.lru_cache(maxsize=None)
def default_tables() -> Mapping[Pollutant, BreakpointTable]:
    return MappingProxyType(load_breakpoint_tables(default_breakpoint_source()))
