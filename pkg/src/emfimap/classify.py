"""Session classification into the three-tier taxonomy and per-coordinate statistics."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from statistics import NormalDist
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .geometry import ProbeCoordinate
from .protocol import ProtocolLine, SessionParse
from .taxonomy import FAULT_CLASSES, FaultClass, FaultDetail

Z95 = 1.96
Z99 = NormalDist().inv_cdf(0.995)

_SYSTEM_TOKENS = {"RESET": FaultDetail.RESET, "HALT": FaultDetail.HALT}
_DATA_TOKENS = {"CRC_ERR": FaultDetail.CRC_MISMATCH, "BITFLIP": FaultDetail.BIT_FLIPS}
_FLOW_TOKENS = {"CF_SKIP": FaultDetail.SKIP, "CF_EXIT": FaultDetail.EARLY_EXIT}


@dataclass(frozen=True)
class NominalProfile:
    """Fault-free output of a target: how many markers and which register values."""

    marker_token: str = "MARK"
    marker_count: int = 1
    expected_regs: Optional[Tuple[Dict[str, int], ...]] = None

    def to_dict(self) -> dict:
        d = {"marker_token": self.marker_token, "marker_count": self.marker_count}
        if self.expected_regs is not None:
            d["expected_regs"] = [{k: f"0x{v:08x}" for k, v in r.items()}
                                  for r in self.expected_regs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NominalProfile":
        regs = d.get("expected_regs")
        if regs is not None:
            regs = tuple({k: int(v, 16) if isinstance(v, str) else int(v)
                          for k, v in r.items()} for r in regs)
        return cls(d.get("marker_token", "MARK"), int(d.get("marker_count", 1)), regs)


@dataclass(frozen=True)
class FaultObservation:
    fault_class: FaultClass
    detail: FaultDetail
    evidence: Tuple[int, ...] = ()
    bitflips: int = 0
    flips_zero_to_one: int = 0
    flips_one_to_zero: int = 0

    def __post_init__(self):
        if self.detail.fault_class is not self.fault_class:
            raise ValueError(f"detail {self.detail.value} does not belong to "
                             f"class {self.fault_class.value}")

    @property
    def faulted(self) -> bool:
        return self.fault_class is not FaultClass.NONE

    def to_dict(self) -> dict:
        return {"class": self.fault_class.value, "detail": self.detail.value,
                "evidence": list(self.evidence), "bitflips": self.bitflips,
                "flips_01": self.flips_zero_to_one, "flips_10": self.flips_one_to_zero}

    @classmethod
    def from_dict(cls, d: dict) -> "FaultObservation":
        return cls(FaultClass.parse(d["class"]), FaultDetail.parse(d["detail"]),
                   tuple(d.get("evidence", ())), int(d.get("bitflips", 0)),
                   int(d.get("flips_01", 0)), int(d.get("flips_10", 0)))


NO_FAULT = FaultObservation(FaultClass.NONE, FaultDetail.NONE)


def _regs_deviate(ln: ProtocolLine, expected: Sequence[Dict[str, int]]) -> bool:
    try:
        values = {k: int(v, 16) for k, v in ln.attributes}
    except ValueError:
        return True
    for snap in expected:
        if values.get("pc") == snap.get("pc"):
            return values != snap
    return True


def classify_session(session: SessionParse, nominal: NominalProfile) -> FaultObservation:
    """Place one trial in the taxonomy.

    Priority is SystemLevel > DataCorruption > ControlFlow > None. Within the
    winning class the earliest triggering line fixes the detail; evidence lists
    every triggering line index of that class.
    """
    system: List[Tuple[int, FaultDetail]] = [(e.line, FaultDetail.MALFORMED_OUTPUT)
                                             for e in session.malformed]
    data: List[Tuple[int, FaultDetail]] = []
    flow: List[Tuple[int, FaultDetail]] = []
    markers: List[int] = []
    flips01 = flips10 = 0

    for idx, ln in session.entries():
        tok = ln.token
        if tok in _SYSTEM_TOKENS:
            system.append((idx, _SYSTEM_TOKENS[tok]))
        elif tok in _DATA_TOKENS:
            data.append((idx, _DATA_TOKENS[tok]))
            if tok == "BITFLIP":
                d = ln.get("dir")
                flips01 += d == "01"
                flips10 += d == "10"
        elif tok in _FLOW_TOKENS:
            flow.append((idx, _FLOW_TOKENS[tok]))
        if tok == nominal.marker_token:
            markers.append(idx)
            if tok == "REGS" and nominal.expected_regs is not None \
                    and _regs_deviate(ln, nominal.expected_regs):
                data.append((idx, FaultDetail.REGISTER_DEVIATION))

    bitflips = flips01 + flips10
    extra = dict(bitflips=bitflips, flips_zero_to_one=flips01, flips_one_to_zero=flips10)

    if session.hang:
        return FaultObservation(FaultClass.SYSTEM_LEVEL, FaultDetail.HANG,
                                tuple(sorted(i for i, _ in system)), **extra)
    for cls, hits in ((FaultClass.SYSTEM_LEVEL, system), (FaultClass.DATA_CORRUPTION, data),
                      (FaultClass.CONTROL_FLOW, flow)):
        if hits:
            hits.sort(key=lambda t: t[0])
            return FaultObservation(cls, hits[0][1], tuple(i for i, _ in hits), **extra)
    if len(markers) != nominal.marker_count:
        evidence = markers or session.indices[-1:]
        return FaultObservation(FaultClass.CONTROL_FLOW, FaultDetail.LOOP_COUNT_MISMATCH,
                                tuple(evidence), **extra)
    return FaultObservation(FaultClass.NONE, FaultDetail.NONE, (), **extra)


def error_count(target_kind: str, obs: FaultObservation) -> int:
    """Per-trial magnitude: bit flips on the SRAM target, else 1 per faulted trial."""
    if target_kind == "SramSim":
        return obs.bitflips
    return int(obs.faulted)


def wilson_interval(successes: int, trials: int, z: float = Z95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion, clipped to [0, 1]."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    margin = z / denom * ((p * (1 - p) + z2 / (4 * trials)) / trials) ** 0.5
    lo = 0.0 if successes == 0 else max(0.0, min(p, center - margin))
    hi = 1.0 if successes == trials else min(1.0, max(p, center + margin))
    return lo, hi


@dataclass(frozen=True)
class CoordinateStats:
    coordinate: ProbeCoordinate
    trials: int
    class_counts: Dict[FaultClass, int]
    fault_rate: float
    wilson_low: float
    wilson_high: float
    flips_zero_to_one: int = 0
    flips_one_to_zero: int = 0
    error_count: int = 0

    @property
    def faults(self) -> int:
        return self.trials - self.class_counts.get(FaultClass.NONE, 0)

    @property
    def flip_direction_balance(self) -> Tuple[int, int]:
        return self.flips_zero_to_one, self.flips_one_to_zero

    def interval(self, z: float) -> Tuple[float, float]:
        return wilson_interval(self.faults, self.trials, z)

    def to_dict(self) -> dict:
        return {"coordinate": self.coordinate.to_dict(), "trials": self.trials,
                "class_counts": {c.value: n for c, n in self.class_counts.items()},
                "fault_rate": self.fault_rate, "wilson_low": self.wilson_low,
                "wilson_high": self.wilson_high, "flips_01": self.flips_zero_to_one,
                "flips_10": self.flips_one_to_zero, "error_count": self.error_count}


def make_stats(coordinate: ProbeCoordinate, class_counts: Dict[FaultClass, int],
               flips01: int = 0, flips10: int = 0, errors: int = 0) -> CoordinateStats:
    counts = {c: int(class_counts.get(c, 0)) for c in (FaultClass.NONE,) + FAULT_CLASSES}
    trials = sum(counts.values())
    faults = trials - counts[FaultClass.NONE]
    rate = faults / trials if trials else 0.0
    lo, hi = wilson_interval(faults, trials)
    return CoordinateStats(coordinate, trials, counts, rate, lo, hi, flips01, flips10, errors)


def aggregate_coordinate_stats(observations: Iterable[tuple]) -> List[CoordinateStats]:
    """Group ``(coordinate, observation[, error_count])`` tuples by exact coordinate.

    Without an explicit error count each faulted trial counts as one error.
    Output is sorted by (y, x, z).
    """
    counts = defaultdict(lambda: defaultdict(int))
    flips = defaultdict(lambda: [0, 0])
    errors = defaultdict(int)
    for item in observations:
        coord, obs = item[0], item[1]
        counts[coord][obs.fault_class] += 1
        flips[coord][0] += obs.flips_zero_to_one
        flips[coord][1] += obs.flips_one_to_zero
        errors[coord] += item[2] if len(item) > 2 else int(obs.faulted)
    out = [make_stats(c, counts[c], flips[c][0], flips[c][1], errors[c]) for c in counts]
    out.sort(key=lambda s: s.coordinate.sort_key())
    return out


class FlipBalance(enum.Enum):
    ZERO_TO_ONE = "ZeroToOne"
    ONE_TO_ZERO = "OneToZero"
    BALANCED = "Balanced"


def dominant_flip_direction(stats: CoordinateStats) -> FlipBalance:
    up, down = stats.flip_direction_balance
    if up > down:
        return FlipBalance.ZERO_TO_ONE
    if down > up:
        return FlipBalance.ONE_TO_ZERO
    return FlipBalance.BALANCED
