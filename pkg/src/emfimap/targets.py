"""Deterministic simulated targets and their synthetic susceptibility field.

Three backends stand in for typical EMFI bench targets:

* :class:`SramTarget` - isolated external SRAM with a 1 KiB sentinel image
  that is read back and diffed after every pulse.
* :class:`McuTarget` - MCU firmware with a fixed-iteration loop emitting
  markers and CRC-protected sentinel blocks.
* :class:`DebugTarget` - core with debug access, dumping register
  snapshots at three breakpoints.

Fault probability at a probe position is::

    p = min(1, sum_h A_h * exp(-d_h^2 / (2 sigma_h^2)) * gate_h)
        * exp(-z / height_scale)
        * sigmoid((voltage - midpoint) * steepness)

``gate_h`` is 1 when the timing offset lies in hotspot h's window (always 1
on the untimed SRAM target) and 0 otherwise.

Draw order per trial (all from ``TrialRng(trial_seed)``): fault draw,
hotspot pick, fault class pick, then outcome-specific details.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from .geometry import GridSpec, ProbeCoordinate, generate_grid
from .protocol import crc16, diff_sentinel, line
from .pulse import Polarity, PulseParameters
from .rng import TrialRng, mix64
from .taxonomy import FAULT_CLASSES, FaultClass

SENTINEL_BYTE = 0xA5
SENTINEL_SIZE = 1024
SENTINEL_IMAGE = bytes([SENTINEL_BYTE]) * SENTINEL_SIZE
MAX_FLIPS = 64
POLARITY_BIAS = 0.75
DEFAULT_TIMEOUT_MS = 500.0

# 0xA5 = 0b10100101
_ZERO_BITS = tuple(b for b in range(8) if not SENTINEL_BYTE >> b & 1)
_ONE_BITS = tuple(b for b in range(8) if SENTINEL_BYTE >> b & 1)


class FieldError(ValueError):
    pass


def _parse_affinity(affinity) -> Dict[FaultClass, float]:
    if affinity is None:
        return {c: 1.0 / 3.0 for c in FAULT_CLASSES}
    out = {c: 0.0 for c in FAULT_CLASSES}
    for k, v in dict(affinity).items():
        c = FaultClass.parse(k)
        if c is FaultClass.NONE:
            raise FieldError("fault_affinity cannot weight the None class")
        if v < 0:
            raise FieldError(f"negative fault_affinity weight for {c.value}")
        out[c] = float(v)
    if abs(sum(out.values()) - 1.0) > 1e-9:
        raise FieldError(f"fault_affinity weights must sum to 1, got {sum(out.values())}")
    return out


@dataclass(frozen=True, eq=False)
class Hotspot:
    center: Tuple[float, float]
    sigma: float
    amplitude: float
    fault_affinity: Dict[FaultClass, float] = None
    window_start_ns: float = 0.0
    window_end_ns: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "fault_affinity", _parse_affinity(self.fault_affinity))
        if not self.sigma > 0:
            raise FieldError(f"hotspot sigma must be > 0, got {self.sigma}")
        if not 0 < self.amplitude <= 1:
            raise FieldError(f"hotspot amplitude must be in (0, 1], got {self.amplitude}")
        if self.window_end_ns < self.window_start_ns:
            raise FieldError("hotspot window ends before it starts")

    def in_window(self, offset_ns: float) -> bool:
        return self.window_start_ns <= offset_ns <= self.window_end_ns

    def to_dict(self) -> dict:
        d = {"center": list(self.center), "sigma": self.sigma, "amplitude": self.amplitude,
             "fault_affinity": {c.value: w for c, w in self.fault_affinity.items()},
             "window_start_ns": self.window_start_ns}
        if math.isfinite(self.window_end_ns):
            d["window_end_ns"] = self.window_end_ns
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hotspot":
        return cls(center=tuple(d["center"]), sigma=float(d["sigma"]),
                   amplitude=float(d["amplitude"]),
                   fault_affinity=d.get("fault_affinity"),
                   window_start_ns=float(d.get("window_start_ns", 0.0)),
                   window_end_ns=float(d.get("window_end_ns", math.inf)))


@dataclass(frozen=True, eq=False)
class SusceptibilityField:
    hotspots: Tuple[Hotspot, ...] = ()
    height_scale_mm: float = 1.0
    voltage_midpoint: float = 200.0
    voltage_steepness: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "hotspots", tuple(self.hotspots))
        if not self.height_scale_mm > 0:
            raise FieldError("height_scale_mm must be > 0")
        if not self.voltage_steepness >= 0:
            raise FieldError("voltage_steepness must be >= 0")

    def to_dict(self) -> dict:
        return {"hotspots": [h.to_dict() for h in self.hotspots],
                "height_scale_mm": self.height_scale_mm,
                "voltage_midpoint": self.voltage_midpoint,
                "voltage_steepness": self.voltage_steepness}

    @classmethod
    def from_dict(cls, d: dict) -> "SusceptibilityField":
        return cls(hotspots=tuple(Hotspot.from_dict(h) for h in d.get("hotspots", ())),
                   height_scale_mm=float(d.get("height_scale_mm", 1.0)),
                   voltage_midpoint=float(d.get("voltage_midpoint", 200.0)),
                   voltage_steepness=float(d.get("voltage_steepness", 0.05)))


def _sigmoid(t: float) -> float:
    if t < -700.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-t))


def _contributions(fld: SusceptibilityField, c: ProbeCoordinate, p: PulseParameters,
                   timed: bool) -> List[float]:
    out = []
    for h in fld.hotspots:
        if timed and not h.in_window(p.timing_offset_ns):
            out.append(0.0)
            continue
        dx = c.x - h.center[0]
        dy = c.y - h.center[1]
        out.append(h.amplitude * math.exp(-(dx * dx + dy * dy) / (2.0 * h.sigma * h.sigma)))
    return out


def _attenuation(fld: SusceptibilityField, c: ProbeCoordinate, p: PulseParameters) -> float:
    return (math.exp(-c.z / fld.height_scale_mm)
            * _sigmoid((p.voltage - fld.voltage_midpoint) * fld.voltage_steepness))


def ground_truth_probability(fld: SusceptibilityField, c: ProbeCoordinate,
                             p: PulseParameters, timed: bool = True) -> float:
    return min(1.0, math.fsum(_contributions(fld, c, p, timed))) * _attenuation(fld, c, p)


def local_intensity(fld: SusceptibilityField, c: ProbeCoordinate, p: PulseParameters,
                    timed: bool = True) -> float:
    """Like :func:`ground_truth_probability` but without clamping the hotspot sum."""
    return math.fsum(_contributions(fld, c, p, timed)) * _attenuation(fld, c, p)


def ground_truth_grid(fld: SusceptibilityField, grid: GridSpec, p: PulseParameters,
                      timed: bool = True) -> List[List[float]]:
    """Probability per grid point, ``ny`` rows of ``nx`` values, row 0 = smallest y."""
    coords = generate_grid(grid)
    flat = [ground_truth_probability(fld, c, p, timed) for c in coords]
    return [flat[j * grid.nx:(j + 1) * grid.nx] for j in range(grid.ny)]


@dataclass(frozen=True)
class RawObservation:
    output_lines: Tuple[str, ...] = ()
    responded: bool = True
    duration_ms: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "output_lines", tuple(self.output_lines))


def _duration(lines: Sequence[str]) -> float:
    return round(2.0 + 0.05 * len(lines), 6)


class TargetBackend(abc.ABC):
    """One simulated bench target.

    ``inject`` must be a pure function of its arguments: identical
    (coordinate, params, trial_seed) always yields an identical observation.
    """

    kind: str = ""
    timed: bool = True

    def __init__(self, field: SusceptibilityField, timeout_ms: float = DEFAULT_TIMEOUT_MS):
        self.field = field
        self.timeout_ms = timeout_ms

    def reset(self) -> None:
        """Restore the nominal state. Simulated targets keep none between trials."""

    def probability(self, c: ProbeCoordinate, p: PulseParameters) -> float:
        return ground_truth_probability(self.field, c, p, self.timed)

    def inject(self, c: ProbeCoordinate, p: PulseParameters, trial_seed: int) -> RawObservation:
        rng = TrialRng(trial_seed)
        if rng.random() >= self.probability(c, p):
            return self._nominal()
        fault = self._pick_class(rng, c, p)
        return self._render(fault, rng, c, p, {})

    def inject_forced(self, c: ProbeCoordinate, p: PulseParameters, trial_seed: int,
                      fault: FaultClass, **choices) -> RawObservation:
        """Render ``fault`` without the probability draw.

        ``choices`` pin outcome details that would otherwise be drawn, e.g.
        ``mode="hang"`` or ``snapshot=1, register="a3"``.
        """
        rng = TrialRng(trial_seed)
        rng.random()
        rng.random()
        fault = FaultClass.parse(fault)
        if fault is FaultClass.NONE:
            return self._nominal()
        if fault not in self.supported_classes:
            raise ValueError(f"{self.kind} cannot produce {fault.value} faults")
        rng.random()
        return self._render(fault, rng, c, p, choices)

    supported_classes: Tuple[FaultClass, ...] = FAULT_CLASSES

    def _pick_class(self, rng: TrialRng, c: ProbeCoordinate, p: PulseParameters) -> FaultClass:
        contrib = _contributions(self.field, c, p, self.timed)
        if not contrib:
            rng.random()
            return FAULT_CLASSES[rng.randbelow(len(FAULT_CLASSES))]
        h = self.field.hotspots[rng.choice_weighted(contrib) if sum(contrib) > 0
                                else rng.randbelow(len(contrib))]
        weights = [h.fault_affinity[k] for k in FAULT_CLASSES]
        return FAULT_CLASSES[rng.choice_weighted(weights)]

    @abc.abstractmethod
    def _nominal(self) -> RawObservation:
        ...

    @abc.abstractmethod
    def _render(self, fault: FaultClass, rng: TrialRng, c: ProbeCoordinate,
                p: PulseParameters, choices: dict) -> RawObservation:
        ...

    @abc.abstractmethod
    def nominal_profile(self):
        ...

    def describe(self) -> dict:
        return {"kind": self.kind, "field": self.field.to_dict(), "timeout_ms": self.timeout_ms}


class SramTarget(TargetBackend):
    kind = "SramSim"
    timed = False
    supported_classes = (FaultClass.DATA_CORRUPTION,)

    def __init__(self, field: SusceptibilityField, timeout_ms: float = DEFAULT_TIMEOUT_MS):
        super().__init__(field, timeout_ms)
        self.image = bytearray(SENTINEL_IMAGE)

    def reset(self) -> None:
        self.image = bytearray(SENTINEL_IMAGE)

    def nominal_profile(self):
        from .classify import NominalProfile
        return NominalProfile(marker_token="MARK", marker_count=1)

    def _nominal(self) -> RawObservation:
        lines = ("BOOT", "MARK sentinel seq=0", "OK")
        return RawObservation(lines, True, _duration(lines))

    def _pick_class(self, rng, c, p):
        rng.random()
        return FaultClass.DATA_CORRUPTION

    def _render(self, fault, rng, c, p, choices):
        intensity = local_intensity(self.field, c, p, self.timed)
        kmax = min(MAX_FLIPS, max(1, math.ceil(MAX_FLIPS * intensity)))
        k = int(choices.get("flips", 1 + rng.randbelow(kmax)))
        favored = ("01" if p.polarity is Polarity.NORMAL else "10")
        other = "10" if favored == "01" else "01"
        actual = bytearray(SENTINEL_IMAGE)
        chosen = set()
        while len(chosen) < k:
            direction = favored if rng.random() < POLARITY_BIAS else other
            offset = rng.randbelow(SENTINEL_SIZE)
            bits = _ZERO_BITS if direction == "01" else _ONE_BITS
            bit = bits[rng.randbelow(len(bits))]
            if (offset, bit) in chosen:
                continue
            chosen.add((offset, bit))
            actual[offset] ^= 1 << bit
        out = ["BOOT", "MARK sentinel seq=0"]
        out += [f.to_line().serialize() for f in diff_sentinel(SENTINEL_IMAGE, bytes(actual))]
        out.append("OK")
        return RawObservation(tuple(out), True, _duration(out))


class McuTarget(TargetBackend):
    kind = "McuSim"
    timed = True

    def __init__(self, field: SusceptibilityField, timeout_ms: float = DEFAULT_TIMEOUT_MS,
                 loop_count: int = 10, n_blocks: int = 4, block_size: int = 64):
        super().__init__(field, timeout_ms)
        if loop_count < 1:
            raise ValueError("loop_count must be >= 1")
        self.loop_count = loop_count
        self.n_blocks = n_blocks
        self.block_size = block_size
        self._block = bytes([SENTINEL_BYTE]) * block_size
        self._block_crc = crc16(self._block)

    def nominal_profile(self):
        from .classify import NominalProfile
        return NominalProfile(marker_token="MARK", marker_count=self.loop_count)

    def describe(self) -> dict:
        d = super().describe()
        d.update(loop_count=self.loop_count, n_blocks=self.n_blocks,
                 block_size=self.block_size)
        return d

    def _marks(self, n: int) -> List[str]:
        return [f"MARK loop seq={i}" for i in range(n)]

    def _nominal(self) -> RawObservation:
        lines = ["BOOT"] + self._marks(self.loop_count) + ["OK"]
        return RawObservation(tuple(lines), True, _duration(lines))

    def _render(self, fault, rng, c, p, choices):
        n_total = self.loop_count
        if fault is FaultClass.CONTROL_FLOW:
            mode = choices.get("mode", ("skip", "exit")[rng.randbelow(2)])
            n = int(choices.get("iter", rng.randbelow(n_total)))
            out = ["BOOT"] + self._marks(n)
            if mode == "skip":
                out.append(line("CF_SKIP", iter=n, expected=n_total).serialize())
            else:
                out.append(line("CF_EXIT", iter=n).serialize())
            out.append("OK")
        elif fault is FaultClass.DATA_CORRUPTION:
            block = int(choices.get("block", rng.randbelow(self.n_blocks)))
            pos = rng.randbelow(self.block_size * 8)
            corrupted = bytearray(self._block)
            corrupted[pos // 8] ^= 1 << (pos % 8)
            got = crc16(bytes(corrupted))
            out = ["BOOT"] + self._marks(n_total)
            out.append(line("CRC_ERR", block=block, got=f"0x{got:04x}",
                            want=f"0x{self._block_crc:04x}").serialize())
            out.append("OK")
        else:
            mode = choices.get("mode", ("reset", "hang")[rng.randbelow(2)])
            n = int(choices.get("iter", rng.randbelow(n_total)))
            out = ["BOOT"] + self._marks(n)
            if mode == "hang":
                return RawObservation(tuple(out), False, self.timeout_ms)
            out += ["RESET cause=emfi", "BOOT"]
        return RawObservation(tuple(out), True, _duration(out))


REGISTER_NAMES = ("pc", "a0", "a1", "a2", "a3", "a4", "a5")
BREAKPOINTS = 3


def _nominal_snapshots() -> Tuple[Dict[str, int], ...]:
    snaps = []
    for k in range(BREAKPOINTS):
        regs = {"pc": 0x400D1A2C + 0x30 * k}
        for r, name in enumerate(REGISTER_NAMES[1:]):
            regs[name] = mix64(0x5EED0000 + 16 * k + r) & 0xFFFFFFFF
        snaps.append(regs)
    return tuple(snaps)


NOMINAL_SNAPSHOTS = _nominal_snapshots()


def regs_line(regs: Dict[str, int]) -> str:
    return line("REGS", **{name: f"0x{regs[name]:08x}" for name in REGISTER_NAMES}).serialize()


class DebugTarget(TargetBackend):
    kind = "DebugSim"
    timed = True

    def nominal_profile(self):
        from .classify import NominalProfile
        return NominalProfile(marker_token="REGS", marker_count=BREAKPOINTS,
                              expected_regs=NOMINAL_SNAPSHOTS)

    def _nominal(self) -> RawObservation:
        lines = ["BOOT"] + [regs_line(s) for s in NOMINAL_SNAPSHOTS] + ["OK"]
        return RawObservation(tuple(lines), True, _duration(lines))

    def _render(self, fault, rng, c, p, choices):
        snaps = [dict(s) for s in NOMINAL_SNAPSHOTS]
        out = ["BOOT"]
        if fault is FaultClass.DATA_CORRUPTION:
            s = int(choices.get("snapshot", rng.randbelow(BREAKPOINTS)))
            reg = choices.get("register", REGISTER_NAMES[rng.randbelow(len(REGISTER_NAMES))])
            bit = int(choices.get("bit", rng.randbelow(32)))
            snaps[s][reg] ^= 1 << bit
            out += [regs_line(r) for r in snaps] + ["OK"]
        elif fault is FaultClass.CONTROL_FLOW:
            skipped = int(choices.get("snapshot", rng.randbelow(BREAKPOINTS)))
            out += [regs_line(r) for k, r in enumerate(snaps) if k != skipped] + ["OK"]
        else:
            s = int(choices.get("snapshot", rng.randbelow(BREAKPOINTS)))
            bit = int(choices.get("bit", rng.randbelow(32)))
            out += [regs_line(r) for r in snaps[:s]]
            out.append(line("HALT", pc=f"0x{snaps[s]['pc'] ^ (1 << bit):08x}").serialize())
        return RawObservation(tuple(out), True, _duration(out))


TARGET_KINDS = {cls.kind: cls for cls in (SramTarget, McuTarget, DebugTarget)}


def make_target(kind: str, field: SusceptibilityField, timeout_ms: float = DEFAULT_TIMEOUT_MS,
                **options) -> TargetBackend:
    try:
        cls = TARGET_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown target kind {kind!r}; expected one of "
                         f"{sorted(TARGET_KINDS)}") from None
    return cls(field, timeout_ms, **options)
