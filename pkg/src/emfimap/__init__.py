"""Spatial EMFI mapping: scan planning, simulated targets, fault classification
and susceptibility maps."""

from .campaign import (CampaignConfig, CampaignResult, RefinementConfig, TargetConfig,
                       TrialRecord, load_config, plan_trials, read_log, replay_campaign,
                       run_campaign)
from .classify import (CoordinateStats, FaultObservation, FlipBalance, NominalProfile,
                       aggregate_coordinate_stats, classify_session, dominant_flip_direction,
                       wilson_interval)
from .estimators import SessionClassifier, SusceptibilityEstimator
from .geometry import (GridSpec, ProbeCoordinate, RefinementRegion, generate_grid,
                       refine_region, select_regions_of_interest)
from .protocol import (ProtocolLine, crc16, diff_sentinel, parse_line, parse_session)
from .pulse import (ParameterLimits, Polarity, PulseParameters, SweepSpec, enumerate_sweep,
                    validate_parameters)
from .rng import derive_trial_seed
from .susceptibility import (SusceptibilityMap, build_map, export_heatmap_csv, export_pgm,
                             export_scatter_csv)
from .targets import (DebugTarget, Hotspot, McuTarget, SramTarget, SusceptibilityField,
                      ground_truth_probability)
from .taxonomy import FaultClass, FaultDetail

__version__ = "0.1.0"
