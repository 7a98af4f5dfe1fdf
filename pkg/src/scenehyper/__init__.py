"""
Scene-conditioned hypernetworks for point-cloud 3D object detection.

A hypernetwork turns learned scene-agnostic embeddings and a scene query
(downsampled candidate positions) into the weights and bias of a fusion
layer applied to object-candidate features inside a transformer decoder.
The package also ships the point backbone, a disentangled box head, a
synthetic benchmark generator, an evaluation toolkit and a training
harness.
"""
from .errors import (
    BoundsError,
    CheckpointError,
    ConfigurationError,
    DegenerateInputError,
    GenerationError,
    ParseError,
    ReportError,
    SceneHyperError,
    ShapeError,
)
from .geometry import Box3D, box_iou, farthest_point_sample, ball_query, nms_3d, quaternion_to_rotation
from .hypernet import GeneratedParams, LayerShape, SceneHyperNetwork, validate_shape

__version__ = "0.1.0"

__all__ = [
    "BoundsError",
    "Box3D",
    "CheckpointError",
    "ConfigurationError",
    "DegenerateInputError",
    "GenerationError",
    "GeneratedParams",
    "LayerShape",
    "ParseError",
    "ReportError",
    "SceneHyperError",
    "SceneHyperNetwork",
    "ShapeError",
    "ball_query",
    "box_iou",
    "farthest_point_sample",
    "nms_3d",
    "quaternion_to_rotation",
    "validate_shape",
]
