"""scikit-learn compatible wrappers around the classifier and map builder.

``SessionClassifier`` learns the nominal marker profile from fault-free
reference captures and labels new captures. ``SusceptibilityEstimator``
fits a susceptibility map from (x, y[, z]) probe positions and per-trial
fault labels, then predicts per-position fault rates.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .classify import (Z95, FaultObservation, NominalProfile, aggregate_coordinate_stats,
                       classify_session, wilson_interval)
from .geometry import GridSpec, ProbeCoordinate, select_regions_of_interest
from .protocol import parse_session
from .susceptibility import build_map
from .taxonomy import FaultClass, FaultDetail


def _as_session(item):
    """Accept a list of lines or a (lines, responded) pair."""
    if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], (bool, np.bool_)):
        return list(item[0]), bool(item[1])
    return list(item), True


# Stand-in observations carrying only the class; rate statistics ignore the detail.
_LABEL_OBS = {
    FaultClass.NONE: FaultObservation(FaultClass.NONE, FaultDetail.NONE),
    FaultClass.CONTROL_FLOW: FaultObservation(FaultClass.CONTROL_FLOW,
                                              FaultDetail.LOOP_COUNT_MISMATCH),
    FaultClass.DATA_CORRUPTION: FaultObservation(FaultClass.DATA_CORRUPTION,
                                                 FaultDetail.BIT_FLIPS),
    FaultClass.SYSTEM_LEVEL: FaultObservation(FaultClass.SYSTEM_LEVEL,
                                              FaultDetail.MALFORMED_OUTPUT),
}


class SessionClassifier(ClassifierMixin, BaseEstimator):
    """Label raw target captures with their fault class.

    Parameters
    ----------
    marker_token : str
        Token counted against the nominal loop/breakpoint count.
    marker_count : int or None
        Expected marker count. ``None`` learns it from the reference
        captures passed to :meth:`fit`.
    check_registers : bool
        Learn nominal ``REGS`` snapshots from the references and flag any
        deviation as data corruption.
    """

    def __init__(self, marker_token="MARK", marker_count=None, check_registers=True):
        self.marker_token = marker_token
        self.marker_count = marker_count
        self.check_registers = check_registers

    def fit(self, X, y=None):
        sessions = [_as_session(s) for s in X]
        if not sessions:
            raise ValueError("SessionClassifier.fit needs at least one reference capture")
        parsed = [parse_session(lines, responded) for lines, responded in sessions]
        counts = {sum(ln.token == self.marker_token for ln in p.lines) for p in parsed}
        if self.marker_count is None:
            if len(counts) != 1:
                raise ValueError(f"reference captures disagree on marker count: {sorted(counts)}")
            count = counts.pop()
        else:
            count = int(self.marker_count)
        regs = None
        if self.check_registers and self.marker_token == "REGS":
            regs = tuple({k: int(v, 16) for k, v in ln.attributes}
                         for ln in parsed[0].lines if ln.token == "REGS")
        self.nominal_ = NominalProfile(self.marker_token, count, regs)
        self.classes_ = np.array([c.value for c in FaultClass])
        return self

    def observations(self, X):
        check_is_fitted(self, "nominal_")
        return [classify_session(parse_session(*_as_session(s)), self.nominal_) for s in X]

    def predict(self, X):
        return np.array([o.fault_class.value for o in self.observations(X)])

    def transform(self, X):
        """One-hot class indicators, columns ordered as ``classes_``."""
        labels = self.predict(X)
        return (labels[:, None] == self.classes_[None, :]).astype(float)

    def predict_detail(self, X):
        return np.array([o.detail.value for o in self.observations(X)])


class SusceptibilityEstimator(TransformerMixin, BaseEstimator):
    """Per-coordinate fault-rate map on a uniform grid.

    ``X`` holds probe positions, shape (n, 2) or (n, 3) in millimetres;
    ``y`` holds per-trial fault-class labels such as those returned by
    :meth:`SessionClassifier.predict`. Optional ``error_counts`` set the
    per-trial heatmap magnitude (default: 1 per faulted trial).
    """

    def __init__(self, origin=(0.0, 0.0), pitch=1.0, nx=1, ny=1, z=0.0):
        self.origin = origin
        self.pitch = pitch
        self.nx = nx
        self.ny = ny
        self.z = z

    def _grid(self):
        return GridSpec(tuple(float(v) for v in self.origin), float(self.pitch),
                        int(self.nx), int(self.ny), float(self.z))

    def fit(self, X, y, error_counts=None):
        X = check_array(X, dtype=float)
        y = np.asarray(y)
        if X.shape[1] not in (2, 3):
            raise ValueError(f"X must have 2 or 3 columns, got {X.shape[1]}")
        if len(y) != len(X):
            raise ValueError("X and y have different lengths")
        grid = self._grid()
        classes = [FaultClass.parse(label) for label in y]
        if error_counts is None:
            errs = [int(c is not FaultClass.NONE) for c in classes]
        else:
            errs = [int(e) for e in error_counts]
        obs = []
        for row, cls, err in zip(X, classes, errs):
            coord = ProbeCoordinate(row[0], row[1], row[2] if len(row) > 2 else grid.z)
            ij = grid.index_of(coord)
            if ij is None:
                raise ValueError(f"position {tuple(row)} is not on the fitted grid")
            obs.append((grid.coordinate(*ij), _LABEL_OBS[cls], err))
        self.map_ = build_map(grid, aggregate_coordinate_stats(obs))
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        """Empirical fault rate at each position; NaN where no trials exist."""
        check_is_fitted(self, "map_")
        X = check_array(X, dtype=float)
        grid = self.map_.grid
        out = np.full(len(X), np.nan)
        for k, row in enumerate(X):
            ij = grid.index_of(ProbeCoordinate(row[0], row[1],
                                               row[2] if len(row) > 2 else grid.z))
            if ij is not None and ij in self.map_.cells:
                out[k] = self.map_.cells[ij].fault_rate
        return out

    def transform(self, X):
        """Columns: rate, Wilson 95% low, Wilson 95% high (NaN for no data)."""
        check_is_fitted(self, "map_")
        X = check_array(X, dtype=float)
        grid = self.map_.grid
        out = np.full((len(X), 3), np.nan)
        for k, row in enumerate(X):
            ij = grid.index_of(ProbeCoordinate(row[0], row[1],
                                               row[2] if len(row) > 2 else grid.z))
            cell = self.map_.cells.get(ij) if ij is not None else None
            if cell is not None:
                out[k] = (cell.fault_rate,) + wilson_interval(cell.faults, cell.trials, Z95)
        return out

    def rate_image(self):
        check_is_fitted(self, "map_")
        return np.array([[np.nan if v is None else v for v in row]
                         for row in self.map_.rate_grid()])

    def regions_of_interest(self, threshold, refinement_factor=2):
        check_is_fitted(self, "map_")
        return select_regions_of_interest(self.map_, threshold, refinement_factor)
