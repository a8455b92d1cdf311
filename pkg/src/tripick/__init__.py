"""tripick: geometric analysis and planning for tri-mode tabletop picking.

Analytic scoring of parallel-jaw grasps (Ferrari-Canny) and suction seals,
bin-based pose encoding with reference losses, center-vote instance
clustering, rule-based push planning, synthetic cluttered-scene generation,
and a clutter-clearing episode simulator with SR/CR metrics.
"""

__version__ = "0.1.0"

from .codec import BinSpec, EncodedParam, GraspConfig, SuctionConfig, default_bin_specs
from .geometry import CameraIntrinsics, OrganizedCloud, PointCloud, RotationAngles
from .grasp import ContactPair, FrictionModel, annotate_scene_grasps, ferrari_canny, find_contacts
from .policy import EpisodeConfig, EpisodeParams, compare_policies, run_episode, select_action
from .push import PushConfig, PushSegment, WorkspaceModel, default_workspace, plan_push, simulate_push
from .scene import PrimitiveShape, SceneModel, default_camera, generate_scene, render_depth, sample_cloud
from .segmentation import cluster_votes, oracle_votes
from .suction import SuctionCupModel, annotate_scene_suction, evaluate_seal, suction_score

__all__ = [
    "BinSpec", "EncodedParam", "GraspConfig", "SuctionConfig", "default_bin_specs",
    "CameraIntrinsics", "OrganizedCloud", "PointCloud", "RotationAngles",
    "ContactPair", "FrictionModel", "annotate_scene_grasps", "ferrari_canny", "find_contacts",
    "EpisodeConfig", "EpisodeParams", "compare_policies", "run_episode", "select_action",
    "PushConfig", "PushSegment", "WorkspaceModel", "default_workspace", "plan_push", "simulate_push",
    "PrimitiveShape", "SceneModel", "default_camera", "generate_scene", "render_depth", "sample_cloud",
    "cluster_votes", "oracle_votes",
    "SuctionCupModel", "annotate_scene_suction", "evaluate_seal", "suction_score",
]
