"""Ring-road traffic world.  The simulator itself lives in ``safelane.traffic_env.env``."""
from .idm import GapAcceptanceParams, IdmParams, gap_acceptance_change, idm_accel
from .metrics import EpochRecord, MetricsWindow, comfort_single, reward, traffic_flow
from .road import Closure, Entities, RoadConfig, headway_metrics, neighbor_table

__all__ = [
    "Closure", "Entities", "EpochRecord", "GapAcceptanceParams", "IdmParams", "MetricsWindow",
    "RoadConfig", "comfort_single", "gap_acceptance_change", "headway_metrics", "idm_accel",
    "neighbor_table", "reward", "traffic_flow",
]
