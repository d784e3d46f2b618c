"""Pulse parameter space: single settings, sweeps and safety limits."""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

DEFAULT_VOLTAGES = (150.0, 250.0, 350.0)
DEFAULT_WIDTHS_NS = (45.0, 80.0)
DEFAULT_OFFSET_STEP_NS = 10.0


class ParameterError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class Polarity(enum.Enum):
    NORMAL = "Normal"
    REVERSED = "Reversed"

    @classmethod
    def parse(cls, value) -> "Polarity":
        if isinstance(value, Polarity):
            return value
        for p in cls:
            if str(value).lower() == p.value.lower():
                return p
        raise ParameterError(f"unknown polarity {value!r}", "polarity")


# Lexicographic rank used by sweep ordering: Normal before Reversed.
_POLARITY_RANK = {Polarity.NORMAL: 0, Polarity.REVERSED: 1}


@dataclass(frozen=True)
class PulseParameters:
    voltage: float
    width_ns: float
    polarity: Polarity = Polarity.NORMAL
    timing_offset_ns: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity.parse(self.polarity))
        if not (math.isfinite(self.voltage) and self.voltage > 0):
            raise ParameterError(f"voltage must be > 0, got {self.voltage}", "voltage")
        if not (math.isfinite(self.width_ns) and self.width_ns > 0):
            raise ParameterError(f"width_ns must be > 0, got {self.width_ns}", "width_ns")
        if not (math.isfinite(self.timing_offset_ns) and self.timing_offset_ns >= 0):
            raise ParameterError(
                f"timing_offset_ns must be >= 0, got {self.timing_offset_ns}",
                "timing_offset_ns")

    def to_dict(self) -> dict:
        return {"voltage": self.voltage, "width_ns": self.width_ns,
                "polarity": self.polarity.value,
                "timing_offset_ns": self.timing_offset_ns}

    @classmethod
    def from_dict(cls, d: dict) -> "PulseParameters":
        return cls(float(d["voltage"]), float(d["width_ns"]),
                   Polarity.parse(d.get("polarity", "Normal")),
                   float(d.get("timing_offset_ns", 0.0)))

    def digest(self) -> str:
        """Short stable hash used in artifact file names."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:10]


@dataclass(frozen=True)
class SweepSpec:
    voltages: Tuple[float, ...] = DEFAULT_VOLTAGES
    widths_ns: Tuple[float, ...] = DEFAULT_WIDTHS_NS
    polarities: Tuple[Polarity, ...] = (Polarity.NORMAL,)
    offsets_ns: Tuple[float, ...] = (0.0,)
    trials_per_point: int = 1

    def __post_init__(self):
        for name in ("voltages", "widths_ns", "polarities", "offsets_ns"):
            values = tuple(getattr(self, name))
            if not values:
                raise ParameterError(f"sweep axis {name!r} is empty", name)
            object.__setattr__(self, name, values)
        object.__setattr__(self, "polarities",
                           tuple(Polarity.parse(p) for p in self.polarities))
        if int(self.trials_per_point) != self.trials_per_point or self.trials_per_point < 1:
            raise ParameterError(
                f"trials_per_point must be an integer >= 1, got {self.trials_per_point}",
                "trials_per_point")

    @property
    def size(self) -> int:
        return (len(self.voltages) * len(self.widths_ns) * len(self.polarities)
                * len(self.offsets_ns))

    def to_dict(self) -> dict:
        return {"voltages": list(self.voltages), "widths_ns": list(self.widths_ns),
                "polarities": [p.value for p in self.polarities],
                "offsets_ns": list(self.offsets_ns),
                "trials_per_point": self.trials_per_point}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(voltages=tuple(float(v) for v in d.get("voltages", DEFAULT_VOLTAGES)),
                   widths_ns=tuple(float(v) for v in d.get("widths_ns", DEFAULT_WIDTHS_NS)),
                   polarities=tuple(Polarity.parse(p)
                                    for p in d.get("polarities", ["Normal"])),
                   offsets_ns=tuple(float(v) for v in d.get("offsets_ns", [0.0])),
                   trials_per_point=d.get("trials_per_point", 1))


def offset_axis(start_ns: float, stop_ns: float,
                step_ns: float = DEFAULT_OFFSET_STEP_NS) -> Tuple[float, ...]:
    """Inclusive offset axis from ``start_ns`` to ``stop_ns``."""
    if step_ns <= 0:
        raise ParameterError("step_ns must be > 0", "offsets_ns")
    n = int(math.floor((stop_ns - start_ns) / step_ns + 1e-9)) + 1
    return tuple(start_ns + k * step_ns for k in range(max(n, 0)))


def enumerate_sweep(spec: SweepSpec) -> List[PulseParameters]:
    """Cartesian product, voltage outermost, then width, polarity, offset.

    Each axis is traversed in the order it is listed in the sweep.
    """
    return [PulseParameters(v, w, p, o)
            for v, w, p, o in itertools.product(spec.voltages, spec.widths_ns,
                                                spec.polarities, spec.offsets_ns)]


@dataclass(frozen=True)
class Violation:
    field: str
    value: float
    bound: float
    kind: str  # "min" or "max"

    def __str__(self):
        op = "<" if self.kind == "min" else ">"
        return f"{self.field}={self.value} {op} {self.kind} {self.bound}"


_LIMITED_FIELDS = ("voltage", "width_ns", "timing_offset_ns")


@dataclass(frozen=True)
class ParameterLimits:
    """Inclusive per-field bounds mirroring a pulse generator's envelope."""

    bounds: Dict[str, Tuple[float, float]] = field(default_factory=lambda: {
        "voltage": (50.0, 500.0),
        "width_ns": (10.0, 1000.0),
        "timing_offset_ns": (0.0, 1e6),
    })

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if name not in _LIMITED_FIELDS:
                raise ParameterError(f"no limits defined for field {name!r}", name)
            if lo > hi:
                raise ParameterError(f"limits for {name!r} have min > max", name)

    @classmethod
    def from_sweep(cls, spec: SweepSpec) -> "ParameterLimits":
        return cls({"voltage": (min(spec.voltages), max(spec.voltages)),
                    "width_ns": (min(spec.widths_ns), max(spec.widths_ns)),
                    "timing_offset_ns": (min(spec.offsets_ns), max(spec.offsets_ns))})

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.bounds.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterLimits":
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


def validate_parameters(p: PulseParameters, limits: ParameterLimits) -> List[Violation]:
    """Every violated bound, in fixed field order. Empty means ok."""
    out = []
    for name in _LIMITED_FIELDS:
        if name not in limits.bounds:
            continue
        lo, hi = limits.bounds[name]
        value = getattr(p, name)
        if value < lo:
            out.append(Violation(name, value, lo, "min"))
        elif value > hi:
            out.append(Violation(name, value, hi, "max"))
    return out
