"""Single-image sports camera calibration from synthetic PTZ camera poses.

Pipeline: sample PTZ poses, render field-marking edge images, index HOG
descriptors in a feature-pose database, then calibrate a query edge image by
nearest-neighbor retrieval followed by Lucas-Kanade refinement on truncated
distance images.
"""

from ._backend import NAME as BACKEND
from .camera import (CameraPose, fit_pose_to_homography, homography_from_pose,
                     pose_from_homography)
from .database import (FeaturePoseDatabase, build_database, load_database, query_nearest,
                       save_database)
from .distance import distance_transform
from .evaluation import iou_part, iou_whole, run_displacement_experiment
from .hog import HogConfig, hog_features
from .lk import LkSettings, lk_align, refine_pose
from .render import EdgeImage, render_edge_image
from .sampling import PoseDistribution, sample_poses
from .template import FieldTemplate, get_template

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CameraPose", "EdgeImage", "FeaturePoseDatabase", "FieldTemplate", "HogConfig",
    "LkSettings", "PoseDistribution", "build_database", "distance_transform",
    "fit_pose_to_homography", "get_template", "hog_features", "homography_from_pose",
    "iou_part", "iou_whole", "lk_align", "load_database", "pose_from_homography",
    "query_nearest", "refine_pose", "render_edge_image", "run_displacement_experiment",
    "sample_poses", "save_database",
]
