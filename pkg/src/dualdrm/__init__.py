"""Dual-arm motion planning on two coupled dynamic roadmaps.

Each arm (together with the shared torso) gets its own roadmap with a
voxel-to-node collision table; queries search the implicit graph of
same-torso node pairs.
"""
from .dual_roadmap import DualRoadmap, NodePair, build_dual, load_dual, save_dual
from .dual_search import SearchLimits, SearchStats, dual_graph_search, escalating_search
from .errors import DualDRMError, PlanningFailure
from .kinematics import FullConfig, RobotModel, config_collision, load_robot
from .planner import PlanOptions, PlanRequest, Trajectory, plan, validate_trajectory
from .roadmap import Roadmap, build_collision_set, build_roadmap
from .voxel_world import OccupancySet, VoxelGrid

__version__ = "0.1.0"

__all__ = [
    "DualRoadmap", "NodePair", "build_dual", "load_dual", "save_dual",
    "SearchLimits", "SearchStats", "dual_graph_search", "escalating_search",
    "DualDRMError", "PlanningFailure",
    "FullConfig", "RobotModel", "config_collision", "load_robot",
    "PlanOptions", "PlanRequest", "Trajectory", "plan", "validate_trajectory",
    "Roadmap", "build_collision_set", "build_roadmap",
    "OccupancySet", "VoxelGrid",
]
