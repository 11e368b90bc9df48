"""curvitrace: reconstruction of curvilinear structures in 3D volumes.

Pipeline: blockwise foreground segmentation -> thinning into non-branching
skeleton fragments -> agent-based path following to bridge gaps between
fragments -> human proofreading of unresolved merges over an HTTP API.
"""

from .connect import (MergeProposal, connect_all, load_proposals,
                      run_benchmark, save_proposals, split_at_junctions)
from .flight import (AgentState, FlightParams, SteeringCommand,
                     centroid_steering, external_steering, fly, init_agent,
                     oracle_steering)
from .graph import SegmentGraph, export_swc, replay_audit
from .metrics import PRF, skeleton_prf, truth_graph, weighted_f1
from .segment import (ChunkLayout, SegmenterSpec, extract_graph,
                      run_blockwise, segment_volume, skeletonize_blockwise)
from .volume import (GroundTruth, PhantomSpec, Volume, generate_phantom,
                     min_max_normalize, read_nfvol, write_nfvol)

__version__ = "0.1.0"

__all__ = [
    "AgentState", "ChunkLayout", "FlightParams", "GroundTruth",
    "MergeProposal", "PRF", "PhantomSpec", "SegmentGraph", "SegmenterSpec",
    "SteeringCommand", "Volume", "centroid_steering", "connect_all",
    "export_swc", "external_steering", "extract_graph", "fly",
    "generate_phantom", "init_agent", "load_proposals", "min_max_normalize",
    "oracle_steering", "read_nfvol", "replay_audit", "run_benchmark",
    "run_blockwise", "save_proposals", "segment_volume", "skeleton_prf",
    "skeletonize_blockwise", "split_at_junctions", "truth_graph",
    "weighted_f1", "write_nfvol",
]
