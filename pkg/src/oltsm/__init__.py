"""Object-level topological semantic mapping and localization.

A lightweight engine that turns object-detection streams into a
robot-centric semantic topology graph with hierarchical memory
(short-term / working / long-term tiers) and localizes by matching
scene-graph descriptors built from walk paths over the map.
"""

from .geometry import (
    Extrinsics,
    InvalidExtrinsicsError,
    Point3,
    body_to_magnetic,
    camera_to_body,
    magnetic_to_body,
    normalize_yaw_deg,
    propagate_landmark,
    relative_direction,
    vector_heading_deg,
)
from .graph import (
    GraphError,
    LandmarkNode,
    RelativeEdge,
    SemanticGraph,
    ShortTermGraph,
    load_map,
    save_map,
)
from .descriptor import (
    SceneDescriptor,
    WalkPath,
    build_index,
    encode_confidence,
    enumerate_paths,
    extract_descriptor,
)
from .matching import (
    LocalizationResult,
    MatchConfig,
    NodeMatch,
    descriptor_similarity,
    direction_cosine,
    euclidean_gate,
    localize,
    match_node,
    match_paths,
)
from .mapping import (
    AssociationConfig,
    DetectionFrame,
    ObjectObservation,
    StreamFormatError,
    StreamHeader,
    TopologicalMapper,
    build_working_graph,
    map_stream,
    read_stream,
    write_stream,
)
from .simulator import (
    PerturbationSpec,
    TrajectorySpec,
    WorldSpec,
    generate_session,
    generate_world,
    session_pair,
)
from .evaluation import (
    PrPoint,
    auc,
    map_storage_bytes,
    pr_curve,
    replay_query_session,
    success_rate,
)

__version__ = "0.1.0"

__all__ = [
    "AssociationConfig",
    "DetectionFrame",
    "Extrinsics",
    "GraphError",
    "InvalidExtrinsicsError",
    "LandmarkNode",
    "LocalizationResult",
    "MatchConfig",
    "NodeMatch",
    "ObjectObservation",
    "PerturbationSpec",
    "Point3",
    "PrPoint",
    "RelativeEdge",
    "SceneDescriptor",
    "SemanticGraph",
    "ShortTermGraph",
    "StreamFormatError",
    "StreamHeader",
    "TopologicalMapper",
    "TrajectorySpec",
    "WalkPath",
    "WorldSpec",
    "auc",
    "body_to_magnetic",
    "build_index",
    "build_working_graph",
    "camera_to_body",
    "descriptor_similarity",
    "direction_cosine",
    "encode_confidence",
    "enumerate_paths",
    "euclidean_gate",
    "extract_descriptor",
    "generate_session",
    "generate_world",
    "load_map",
    "localize",
    "magnetic_to_body",
    "map_storage_bytes",
    "map_stream",
    "match_node",
    "match_paths",
    "normalize_yaw_deg",
    "pr_curve",
    "propagate_landmark",
    "read_stream",
    "relative_direction",
    "replay_query_session",
    "save_map",
    "session_pair",
    "success_rate",
    "vector_heading_deg",
    "write_stream",
]
