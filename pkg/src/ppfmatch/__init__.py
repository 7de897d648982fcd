"""Rotation-invariant point-cloud matching with point-pair-feature attention."""

from ppfmatch.config import PipelineConfig
from ppfmatch.geom import PointCloudTriplet, RigidTransform
from ppfmatch.linalg import ModelWeights
from ppfmatch.matcher import CorrespondenceSet
from ppfmatch.pipeline import match_pair

__all__ = [
    "CorrespondenceSet",
    "ModelWeights",
    "PipelineConfig",
    "PointCloudTriplet",
    "RigidTransform",
    "match_pair",
]

__version__ = "0.1.0"
