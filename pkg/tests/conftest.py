import pytest

from emfimap.campaign import CampaignConfig, RefinementConfig, TargetConfig
from emfimap.geometry import GridSpec
from emfimap.pulse import Polarity, SweepSpec
from emfimap.targets import Hotspot, SusceptibilityField

MIXED = {"ControlFlow": 0.4, "DataCorruption": 0.3, "SystemLevel": 0.3}


@pytest.fixture
def single_field():
    return SusceptibilityField(
        hotspots=(Hotspot((2.0, 2.0), 0.6, 0.9, MIXED, 100.0, 140.0),),
        height_scale_mm=1.0, voltage_midpoint=200.0, voltage_steepness=0.05)


@pytest.fixture
def two_field():
    return SusceptibilityField(
        hotspots=(Hotspot((1.0, 1.0), 0.5, 0.7, {"ControlFlow": 1.0}, 100.0, 140.0),
                  Hotspot((4.0, 3.0), 0.8, 0.5, {"SystemLevel": 0.5, "DataCorruption": 0.5},
                          200.0, 260.0)),
        height_scale_mm=2.0, voltage_midpoint=220.0, voltage_steepness=0.04)


def small_config(field, kind="McuSim", trials=5, refine=True, seed=7, nx=5, ny=5,
                 offsets=(120.0,), campaign_id="unit"):
    return CampaignConfig(
        campaign_id=campaign_id, seed=seed, grid=GridSpec((0.0, 0.0), 1.0, nx, ny, 0.0),
        sweep=SweepSpec((350.0,), (50.0,), (Polarity.NORMAL,), offsets, trials),
        target=TargetConfig(kind, field),
        refinement=RefinementConfig(enabled=refine, threshold=0.3, factor=2, max_levels=2))


@pytest.fixture
def make_config():
    return small_config
