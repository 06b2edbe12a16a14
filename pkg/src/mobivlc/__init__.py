"""Link-level simulation of mobile visible light communication."""

from .channel import LaserModel, LinkResponse, MobilityProfile, transmit_packet
from .harness import SweepConfig, TrialResult, run_point, run_sweep
from .loading import LoadingTable, levin_campello
from .modem import OfdmConfig, build_packet
from .oct import build_oct

__all__ = [
    "LaserModel", "LinkResponse", "MobilityProfile", "transmit_packet",
    "SweepConfig", "TrialResult", "run_point", "run_sweep",
    "LoadingTable", "levin_campello", "OfdmConfig", "build_packet", "build_oct",
]
