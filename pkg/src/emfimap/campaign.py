"""Campaign planning, execution, append-only trial logs and replay.

Trial log format (UTF-8 JSON Lines). The first line is a header::

    {"record": "campaign", "format": "emfimap-log/1", "config": {...},
     "config_hash": "...", "nominal": {...}, "timestamp": "..."}

followed by one trial per line::

    {"record": "trial", "seq": 0, "campaign_id": ..., "config_hash": ...,
     "stage": 0, "coordinate_index": 0, "coordinate": {"x":..,"y":..,"z":..},
     "param_index": 0, "parameters": {...}, "trial_index": 0,
     "trial_seed": ..., "lines": [...], "responded": true,
     "duration_ms": ..., "classification": {...}, "error_count": 0,
     "timestamp": "..."}

Fields not listed here are carried through untouched on re-classification.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import yaml

from .classify import (FaultObservation, NominalProfile, aggregate_coordinate_stats,
                       classify_session, error_count)
from .geometry import (TOL_MM, GridSpec, ProbeCoordinate, generate_grid, refine_region,
                       select_regions_of_interest)
from .protocol import parse_session
from .pulse import ParameterLimits, PulseParameters, SweepSpec, enumerate_sweep, \
    validate_parameters
from .rng import derive_trial_seed
from .susceptibility import SusceptibilityMap, build_map
from .targets import (DEFAULT_TIMEOUT_MS, SusceptibilityField, TargetBackend, TARGET_KINDS,
                      make_target)
from .taxonomy import FaultClass

log = logging.getLogger(__name__)

LOG_FORMAT = "emfimap-log/1"
LOG_DIR_ENV = "EMFIMAP_LOG_DIR"


class ConfigError(ValueError):
    pass


class PersistenceError(RuntimeError):
    def __init__(self, message: str, last_durable_seq: int):
        super().__init__(f"{message} (last durable sequence number: {last_durable_seq})")
        self.last_durable_seq = last_durable_seq


@dataclass(frozen=True)
class RefinementConfig:
    enabled: bool = True
    threshold: float = 0.2
    factor: int = 2
    max_levels: int = 3
    refine_best_param_only: bool = False

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("refinement threshold must lie in [0, 1]")
        if int(self.factor) != self.factor or self.factor < 2:
            raise ConfigError("refinement factor must be an integer >= 2")
        if self.max_levels < 0:
            raise ConfigError("refinement max_levels must be >= 0")

    @property
    def levels(self) -> int:
        return self.max_levels if self.enabled else 0


@dataclass(frozen=True, eq=False)
class TargetConfig:
    kind: str = "SramSim"
    susceptibility: SusceptibilityField = field(default_factory=SusceptibilityField)
    options: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {self.kind!r}; expected one of "
                              f"{sorted(TARGET_KINDS)}")


@dataclass(frozen=True, eq=False)
class CampaignConfig:
    campaign_id: str
    seed: int
    grid: GridSpec
    sweep: SweepSpec
    target: TargetConfig = field(default_factory=TargetConfig)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    limits: Optional[ParameterLimits] = None
    timeout_ms: float = DEFAULT_TIMEOUT_MS
    heights: Optional[Tuple[float, ...]] = None
    firmware_version: str = "sim"
    notes: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.campaign_id or any(ch in self.campaign_id for ch in "/\\ "):
            raise ConfigError(f"campaign_id {self.campaign_id!r} must be a non-empty "
                              "token without spaces or path separators")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be > 0")
        if self.heights is not None:
            if not self.heights or any(not (h >= 0) for h in self.heights):
                raise ConfigError("heights must be a non-empty list of values >= 0")
            object.__setattr__(self, "heights", tuple(float(h) for h in self.heights))
        limits = self.limits or ParameterLimits()
        for i, p in enumerate(enumerate_sweep(self.sweep)):
            bad = validate_parameters(p, limits)
            if bad:
                raise ConfigError(f"sweep point {i} violates limits: "
                                  + "; ".join(str(v) for v in bad))

    @property
    def layer_grids(self) -> List[GridSpec]:
        if self.heights is None:
            return [self.grid]
        return [replace(self.grid, z=h) for h in self.heights]

    @property
    def parameter_points(self) -> List[PulseParameters]:
        return enumerate_sweep(self.sweep)

    def make_backend(self) -> TargetBackend:
        return make_target(self.target.kind, self.target.susceptibility, self.timeout_ms,
                           **self.target.options)

    def to_dict(self) -> dict:
        d = {"campaign_id": self.campaign_id, "seed": int(self.seed),
             "grid": self.grid.to_dict(), "sweep": self.sweep.to_dict(),
             "target": {"kind": self.target.kind, "field": self.target.susceptibility.to_dict(),
                        **({"options": dict(self.target.options)} if self.target.options else {})},
             "refinement": {"enabled": self.refinement.enabled,
                            "threshold": self.refinement.threshold,
                            "factor": self.refinement.factor,
                            "max_levels": self.refinement.max_levels,
                            "refine_best_param_only": self.refinement.refine_best_param_only},
             "timeout_ms": self.timeout_ms, "firmware_version": self.firmware_version}
        if self.limits is not None:
            d["limits"] = self.limits.to_dict()
        if self.heights is not None:
            d["heights"] = list(self.heights)
        if self.notes:
            d["notes"] = dict(self.notes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        try:
            t = d.get("target", {})
            r = d.get("refinement", {})
            return cls(
                campaign_id=str(d["campaign_id"]),
                seed=int(d.get("seed", 0)),
                grid=GridSpec.from_dict(d["grid"]),
                sweep=SweepSpec.from_dict(d.get("sweep", {})),
                target=TargetConfig(t.get("kind", "SramSim"),
                                    SusceptibilityField.from_dict(t.get("field", {})),
                                    dict(t.get("options", {}))),
                refinement=RefinementConfig(**r),
                limits=ParameterLimits.from_dict(d["limits"]) if "limits" in d else None,
                timeout_ms=float(d.get("timeout_ms", DEFAULT_TIMEOUT_MS)),
                heights=tuple(d["heights"]) if d.get("heights") is not None else None,
                firmware_version=str(d.get("firmware_version", "sim")),
                notes=dict(d.get("notes", {})),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid campaign config: {exc}") from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str, seed: Optional[int] = None) -> CampaignConfig:
    """Read a YAML (or JSON) campaign file; ``seed`` overrides the file's seed."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    if seed is not None:
        data = {**data, "seed": int(seed)}
    return CampaignConfig.from_dict(data)


@dataclass(frozen=True)
class PlannedTrial:
    stage: int
    coordinate_index: int
    coordinate: ProbeCoordinate
    param_index: int
    parameters: PulseParameters
    trial_index: int
    trial_seed: int


def _stage_plan(config: CampaignConfig, coords: Sequence[Tuple[int, ProbeCoordinate]],
                param_indices: Sequence[int], stage: int) -> List[PlannedTrial]:
    points = config.parameter_points
    return [PlannedTrial(stage, ci, c, pi, points[pi], t,
                         derive_trial_seed(config.seed, ci, pi, t))
            for ci, c in coords
            for pi in param_indices
            for t in range(config.sweep.trials_per_point)]


def coarse_coordinates(config: CampaignConfig) -> List[ProbeCoordinate]:
    return [c for g in config.layer_grids for c in generate_grid(g)]


def plan_trials(config: CampaignConfig) -> List[PlannedTrial]:
    """The coarse stage: grid row-major, then sweep order, then trial index.

    Refinement stages depend on coarse results and are planned by
    :func:`plan_refinement_stage` while the campaign runs.
    """
    coords = list(enumerate(coarse_coordinates(config)))
    return _stage_plan(config, coords, range(config.sweep.size), 0)


def _key(c: ProbeCoordinate) -> Tuple[int, int, int]:
    return (round(c.x / TOL_MM), round(c.y / TOL_MM), round(c.z / TOL_MM))


def pooled_map(grid: GridSpec, records: Iterable["TrialRecord"],
               param_indices: Optional[set] = None) -> SusceptibilityMap:
    """Map over ``grid`` pooling every trial whose coordinate lies on it."""
    obs = [(r.coordinate, r.classification, r.error_count) for r in records
           if (param_indices is None or r.param_index in param_indices)
           and grid.index_of(r.coordinate) is not None]
    return build_map(grid, aggregate_coordinate_stats(obs))


def best_param_index(records: Sequence["TrialRecord"]) -> int:
    faults, totals = Counter(), Counter()
    for r in records:
        totals[r.param_index] += 1
        faults[r.param_index] += r.classification.faulted
    return min(totals, key=lambda pi: (-faults[pi] / totals[pi], pi))


@dataclass
class RefinementState:
    """Bookkeeping carried between refinement stages."""

    parents: List[GridSpec]
    scanned: Dict[Tuple[int, int, int], int]
    next_index: int
    param_indices: List[int]
    regions: List[list] = field(default_factory=list)


def initial_refinement_state(config: CampaignConfig,
                             records: Sequence["TrialRecord"]) -> RefinementState:
    coords = coarse_coordinates(config)
    params = list(range(config.sweep.size))
    if config.refinement.refine_best_param_only and records:
        params = [best_param_index(records)]
    return RefinementState(list(config.layer_grids), {_key(c): i for i, c in enumerate(coords)},
                           len(coords), params)


def plan_refinement_stage(config: CampaignConfig, state: RefinementState,
                          records: Sequence["TrialRecord"], level: int) -> List[PlannedTrial]:
    """Select regions on every parent grid and plan trials on their new points."""
    selected = set(state.param_indices)
    children, new_coords, level_regions = [], [], []
    for parent in state.parents:
        smap = pooled_map(parent, records, selected)
        for region in select_regions_of_interest(smap, config.refinement.threshold,
                                                 config.refinement.factor):
            child = refine_region(parent, region)
            children.append(child)
            level_regions.append(region)
            for c in generate_grid(child):
                k = _key(c)
                if k not in state.scanned:
                    state.scanned[k] = state.next_index
                    new_coords.append((state.next_index, c))
                    state.next_index += 1
    state.parents = children
    state.regions.append(level_regions)
    return _stage_plan(config, new_coords, state.param_indices, level)


@dataclass
class TrialRecord:
    campaign_id: str
    config_hash: str
    seq: int
    stage: int
    coordinate_index: int
    coordinate: ProbeCoordinate
    param_index: int
    parameters: PulseParameters
    trial_index: int
    trial_seed: int
    lines: Tuple[str, ...]
    responded: bool
    duration_ms: float
    classification: FaultObservation
    error_count: int
    timestamp: str = ""
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self, with_timestamp: bool = True) -> dict:
        d = {"record": "trial", "seq": self.seq, "campaign_id": self.campaign_id,
             "config_hash": self.config_hash, "stage": self.stage,
             "coordinate_index": self.coordinate_index,
             "coordinate": self.coordinate.to_dict(), "param_index": self.param_index,
             "parameters": self.parameters.to_dict(), "trial_index": self.trial_index,
             "trial_seed": self.trial_seed, "lines": list(self.lines),
             "responded": self.responded, "duration_ms": self.duration_ms,
             "classification": self.classification.to_dict(),
             "error_count": self.error_count}
        if with_timestamp:
            d["timestamp"] = self.timestamp
        for k, v in self.extra.items():
            d.setdefault(k, v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    _KNOWN = {"record", "seq", "campaign_id", "config_hash", "stage", "coordinate_index",
              "coordinate", "param_index", "parameters", "trial_index", "trial_seed", "lines",
              "responded", "duration_ms", "classification", "error_count", "timestamp"}

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(campaign_id=d["campaign_id"], config_hash=d.get("config_hash", ""),
                   seq=int(d["seq"]), stage=int(d.get("stage", 0)),
                   coordinate_index=int(d.get("coordinate_index", 0)),
                   coordinate=ProbeCoordinate.from_dict(d["coordinate"]),
                   param_index=int(d.get("param_index", 0)),
                   parameters=PulseParameters.from_dict(d["parameters"]),
                   trial_index=int(d["trial_index"]), trial_seed=int(d["trial_seed"]),
                   lines=tuple(d["lines"]), responded=bool(d["responded"]),
                   duration_ms=float(d.get("duration_ms", 0.0)),
                   classification=FaultObservation.from_dict(d["classification"]),
                   error_count=int(d["error_count"]), timestamp=d.get("timestamp", ""),
                   extra={k: v for k, v in d.items() if k not in cls._KNOWN})


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


class TrialLog:
    """Single serialization point for trial records.

    With ``path`` set, each record is written and flushed before it is
    visible to refinement decisions.
    """

    def __init__(self, header: dict, path: Optional[str] = None):
        self.header = header
        self.path = path
        self.records: List[TrialRecord] = []
        self._fh = None
        if path is not None:
            try:
                self._fh = open(path, "x", encoding="utf-8")
                self._write(json.dumps(header, separators=(",", ":")))
            except OSError as exc:
                raise PersistenceError(f"cannot create trial log {path}: {exc}", -1) from exc

    def _write(self, text: str) -> None:
        self._fh.write(text + "\n")
        self._fh.flush()

    @property
    def last_seq(self) -> int:
        return len(self.records) - 1

    def append(self, record: TrialRecord) -> TrialRecord:
        record.seq = len(self.records)
        if self._fh is not None:
            try:
                self._write(record.to_json())
            except (OSError, ValueError) as exc:
                raise PersistenceError(f"write to {self.path} failed: {exc}",
                                       self.last_seq) from exc
        self.records.append(record)
        return record

    def close(self) -> None:
        if self._fh is not None:
            try:
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except OSError as exc:
                raise PersistenceError(f"cannot sync {self.path}: {exc}", self.last_seq) from exc
            finally:
                self._fh.close()
                self._fh = None


def make_header(config: CampaignConfig, nominal: NominalProfile) -> dict:
    return {"record": "campaign", "format": LOG_FORMAT, "config": config.to_dict(),
            "config_hash": config.config_hash(), "nominal": nominal.to_dict(),
            "timestamp": _now()}


_worker_backend: Optional[TargetBackend] = None


def _init_worker(backend: TargetBackend) -> None:
    global _worker_backend
    _worker_backend = backend


def execute_trial(backend: TargetBackend, nominal: NominalProfile,
                  trial: PlannedTrial) -> Tuple[tuple, bool, float, FaultObservation, int]:
    backend.reset()
    raw = backend.inject(trial.coordinate, trial.parameters, trial.trial_seed)
    obs = classify_session(parse_session(raw.output_lines, raw.responded), nominal)
    return raw.output_lines, raw.responded, raw.duration_ms, obs, error_count(backend.kind, obs)


def _worker_run(args):
    nominal, trial = args
    return execute_trial(_worker_backend, nominal, trial)


@dataclass
class CampaignResult:
    config: CampaignConfig
    records: List[TrialRecord]
    maps: Dict[Tuple[int, int], SusceptibilityMap]
    summary: Dict[str, int]
    regions: List[list] = field(default_factory=list)
    log_path: Optional[str] = None

    def map_for(self, param_index: int = 0, layer: int = 0) -> SusceptibilityMap:
        return self.maps[(param_index, layer)]


def class_totals(records: Iterable[TrialRecord]) -> Dict[str, int]:
    totals = {c.value: 0 for c in FaultClass}
    for r in records:
        totals[r.classification.fault_class.value] += 1
    return totals


def composite_grid(grid: GridSpec, factor: int, levels: int) -> GridSpec:
    """Coarse extent at the finest pitch any refinement stage can reach."""
    k = factor ** levels
    return GridSpec(grid.origin, grid.pitch / k, (grid.nx - 1) * k + 1,
                    (grid.ny - 1) * k + 1, grid.z)


def maps_from_records(config: CampaignConfig,
                      records: Sequence[TrialRecord]) -> Dict[Tuple[int, int], SusceptibilityMap]:
    """One map per (parameter point, height layer) on the composite grid."""
    levels = max((r.stage for r in records), default=0)
    by_key = defaultdict(list)
    grids = [composite_grid(g, config.refinement.factor, levels) for g in config.layer_grids]
    for r in records:
        for layer, g in enumerate(grids):
            if abs(r.coordinate.z - g.z) <= TOL_MM:
                by_key[(r.param_index, layer)].append(
                    (r.coordinate, r.classification, r.error_count))
                break
    points = config.parameter_points
    maps = {}
    for pi in range(len(points)):
        for layer, g in enumerate(grids):
            obs = by_key.get((pi, layer), [])
            meta = {"campaign_id": config.campaign_id, "param_index": pi,
                    "parameters": points[pi].to_dict(), "trials": len(obs), "layer": layer}
            maps[(pi, layer)] = build_map(g, aggregate_coordinate_stats(obs), meta)
    return maps


def _execute(trials: List[PlannedTrial], backend: TargetBackend, nominal: NominalProfile,
             pool: Optional[ProcessPoolExecutor]):
    if pool is None:
        return [execute_trial(backend, nominal, t) for t in trials]
    chunk = max(1, len(trials) // (pool._max_workers * 8))
    return list(pool.map(_worker_run, [(nominal, t) for t in trials], chunksize=chunk))


def run_campaign(config: CampaignConfig, backend: Optional[TargetBackend] = None,
                 out_dir: Optional[str] = None, workers: int = 1,
                 clock: Callable[[], str] = _now) -> CampaignResult:
    """Run the coarse stage, then up to ``max_levels`` refinement stages.

    Results are appended to the log in plan order whatever the worker
    count, so the log content depends only on (config, seed).
    """
    backend = backend or config.make_backend()
    nominal = backend.nominal_profile()
    header = make_header(config, nominal)
    path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"{config.campaign_id}.log.jsonl")
    tlog = TrialLog(header, path)
    chash = header["config_hash"]
    pool = (ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(backend,))
            if workers > 1 else None)

    def run_stage(plan: List[PlannedTrial]) -> None:
        for t, (lines, responded, dur, obs, err) in zip(plan, _execute(plan, backend, nominal,
                                                                       pool)):
            tlog.append(TrialRecord(config.campaign_id, chash, -1, t.stage, t.coordinate_index,
                                    t.coordinate, t.param_index, t.parameters, t.trial_index,
                                    t.trial_seed, tuple(lines), responded, dur, obs, err,
                                    clock()))

    try:
        plan = plan_trials(config)
        log.info("stage 0: %d trials", len(plan))
        run_stage(plan)
        state = initial_refinement_state(config, tlog.records)
        for level in range(1, config.refinement.levels + 1):
            plan = plan_refinement_stage(config, state, tlog.records, level)
            if not state.parents:
                break
            log.info("stage %d: %d regions, %d trials", level, len(state.regions[-1]), len(plan))
            run_stage(plan)
    finally:
        if pool is not None:
            pool.shutdown()
        tlog.close()

    records = tlog.records
    return CampaignResult(config, records, maps_from_records(config, records),
                          class_totals(records), state.regions, path)


@dataclass
class LoadedLog:
    header: dict
    records: List[TrialRecord]
    raw: List[dict]
    malformed: List[Tuple[int, str]]

    @property
    def config(self) -> CampaignConfig:
        return CampaignConfig.from_dict(self.header["config"])

    @property
    def nominal(self) -> NominalProfile:
        return NominalProfile.from_dict(self.header["nominal"])


def read_log(path: str) -> LoadedLog:
    with open(path, encoding="utf-8") as fh:
        return parse_log(fh.read().splitlines())


def parse_log(lines: Sequence[str]) -> LoadedLog:
    header, records, raw, malformed = None, [], [], []
    for n, text in enumerate(lines):
        if not text.strip():
            continue
        try:
            d = json.loads(text)
            kind = d.get("record")
            if kind == "campaign" and header is None:
                header = d
            elif kind == "trial":
                records.append(TrialRecord.from_dict(d))
                raw.append(d)
            else:
                raise ValueError(f"unexpected record kind {kind!r}")
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            malformed.append((n, f"{type(exc).__name__}: {exc}"))
    if header is None:
        raise ValueError("trial log has no campaign header")
    return LoadedLog(header, records, raw, malformed)


@dataclass
class Disagreement:
    seq: int
    field: str
    stored: object
    recomputed: object


@dataclass
class ReplayReport:
    checked: int
    disagreements: List[Disagreement]
    malformed: List[Tuple[int, str]]
    class_totals: Dict[str, int]
    maps: Dict[Tuple[int, int], SusceptibilityMap]

    @property
    def ok(self) -> bool:
        return not self.disagreements and not self.malformed

    def lines(self) -> List[str]:
        out = [f"checked {self.checked} trial records",
               f"disagreements: {len(self.disagreements)}",
               f"malformed records: {len(self.malformed)}"]
        out += [f"  seq {d.seq}: {d.field} stored={d.stored} recomputed={d.recomputed}"
                for d in self.disagreements]
        out += [f"  line {n}: {msg}" for n, msg in self.malformed]
        out += [f"  {k}: {v}" for k, v in self.class_totals.items()]
        return out


def reclassify(record: TrialRecord, nominal: NominalProfile,
               target_kind: str) -> Tuple[FaultObservation, int]:
    obs = classify_session(parse_session(record.lines, record.responded), nominal)
    return obs, error_count(target_kind, obs)


def replay_campaign(loaded: LoadedLog) -> ReplayReport:
    """Re-parse, re-classify and re-aggregate every record in a loaded log."""
    config = loaded.config
    nominal = loaded.nominal
    kind = config.target.kind
    disagreements = []
    for r in loaded.records:
        obs, err = reclassify(r, nominal, kind)
        if obs != r.classification:
            disagreements.append(Disagreement(r.seq, "classification",
                                              r.classification.to_dict(), obs.to_dict()))
        if err != r.error_count:
            disagreements.append(Disagreement(r.seq, "error_count", r.error_count, err))
    return ReplayReport(len(loaded.records), disagreements, list(loaded.malformed),
                        class_totals(loaded.records), maps_from_records(config, loaded.records))


def comparable_log(records: Iterable[TrialRecord]) -> List[dict]:
    """Records stripped of wall-clock timestamps, for determinism checks."""
    return [r.to_dict(with_timestamp=False) for r in records]
