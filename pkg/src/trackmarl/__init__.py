"""trackmarl: multi-agent PPO on pixel observations via tracked-object graphs.

Pipeline: particle-world frames -> color-threshold detection -> assignment
tracking -> per-object feature windows -> KNN graphs -> permutation-invariant
GCN policy/value networks trained with a per-agent clipped surrogate.
"""

__version__ = "0.1.0"

from .arena import TaskConfig, WorldState, render, reset, step
from .kernels import NUMBA_ENABLED
from .marl import TrainerConfig, train
from .perception import ColorMap, Detection, detect, inject_dropout
from .tracker import TrackSet, advance_tracks, init_tracks, solve_assignment
from .tracklets import AgentGraph, knn_graph, push_frame

__all__ = [
    "__version__",
    "NUMBA_ENABLED",
    "TaskConfig",
    "WorldState",
    "reset",
    "step",
    "render",
    "ColorMap",
    "Detection",
    "detect",
    "inject_dropout",
    "TrackSet",
    "solve_assignment",
    "advance_tracks",
    "init_tracks",
    "AgentGraph",
    "push_frame",
    "knn_graph",
    "TrainerConfig",
    "train",
]
