"""Time-stamped evidence streams with hold or point-in-time semantics."""

from __future__ import annotations

import bisect
import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "TIME_TOL",
    "Mode",
    "EvidenceStream",
    "EvidenceError",
    "ParseError",
    "NonMonotonicTime",
    "value_at",
    "load_csv",
    "write_csv",
    "event_times",
]

# absolute tolerance for matching stepper times against scheduled times
TIME_TOL = 1e-9


class Mode(str, enum.Enum):
    CONTINUOUS = "continuous"
    INSTANTANEOUS = "instantaneous"


class EvidenceError(ValueError):
    pass


class ParseError(EvidenceError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class NonMonotonicTime(EvidenceError):
    def __init__(self, line: int | None, message: str = "times must be strictly increasing"):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class EvidenceStream:
    target: str
    mode: Mode
    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.times) != len(self.values):
            raise EvidenceError("times and values differ in length")
        for i in range(1, len(self.times)):
            if not self.times[i] > self.times[i - 1]:
                raise NonMonotonicTime(None)

    @classmethod
    def from_points(cls, target: str, mode, points: Iterable[tuple[float, float]]) -> "EvidenceStream":
        pts = list(points)
        return cls(target, mode, tuple(p[0] for p in pts), tuple(p[1] for p in pts))

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.times, self.values))

    def retarget(self, target: str, mode=None) -> "EvidenceStream":
        return EvidenceStream(target, self.mode if mode is None else mode, self.times, self.values)

    def value_at(self, t: float) -> float | None:
        return value_at(self, t)


def value_at(s: EvidenceStream, t: float) -> float | None:
    """Value of ``s`` at time ``t``, or None when there is none.

    Continuous streams hold their latest value; instantaneous streams only
    report at their own time stamps (within ``TIME_TOL``).
    """
    if not s.times:
        return None
    i = bisect.bisect_right(s.times, t + TIME_TOL)
    if s.mode is Mode.CONTINUOUS:
        return s.values[i - 1] if i > 0 else None
    if i > 0 and abs(s.times[i - 1] - t) <= TIME_TOL:
        return s.values[i - 1]
    return None


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _parse_row(row: list[str], lineno: int) -> tuple[float, float]:
    if len(row) != 2:
        raise ParseError(lineno, f"expected 2 columns, found {len(row)}")
    try:
        return float(row[0]), float(row[1])
    except ValueError:
        raise ParseError(lineno, f"not a number: {','.join(row)!r}") from None


def load_csv(path, target: str = "", mode=Mode.INSTANTANEOUS) -> EvidenceStream:
    """Read a two-column ``time,value`` CSV; a non-numeric first row is a header."""
    times: list[float] = []
    values: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row]
            if not row or all(not c for c in row):
                continue
            try:
                t, v = _parse_row(row, lineno)
            except ParseError:
                if lineno == 1 and not all(_is_number(c) for c in row):
                    continue
                raise
            if times and not t > times[-1]:
                raise NonMonotonicTime(lineno)
            times.append(t)
            values.append(v)
    return EvidenceStream(target, mode, tuple(times), tuple(values))


def write_csv(path, points: Sequence[tuple[float, float]], header: str | None = "time,value") -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(header + "\n")
        for t, v in points:
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def event_times(streams: Iterable[EvidenceStream], horizon: tuple[float, float] | None = None) -> list[float]:
    """Sorted, de-duplicated time stamps of ``streams`` inside ``horizon``."""
    ts = sorted(t for s in streams for t in s.times)
    if horizon is not None:
        lo, hi = horizon
        ts = [t for t in ts if lo - TIME_TOL <= t <= hi + TIME_TOL]
    out: list[float] = []
    for t in ts:
        if not out or t - out[-1] > TIME_TOL:
            out.append(t)
    return out
