"""Plane-sweep reconstruction toolkit.

Builds per-keyframe cost volumes from posed RGB sequences, compensates them
with whole-ray and 2D-context information, fuses them into a global voxel
grid, decodes a TSDF, and extracts/evaluates meshes, with synthetic scenes
as ground truth for everything.
"""

from .camera import (Camera, DepthPlanes, Intrinsics, Pose, make_log_planes,
                     project, project_array, unproject, unproject_array)
from .costvol import CostVolume, build_cost_volume, warp_to_plane
from .dataset import (Frame, KeyframeBundle, assign_references, load_sequence,
                      select_keyframes)
from .encoder import (EncoderSpec, FeatureMap, encode, metadata_channels,
                      reduce_channels, seeded_orthonormal_map)
from .errors import BehindCameraError, DatasetError
from .fusion import (VoxelGrid, backproject_baseline, fuse, grid_from_bounds,
                     make_grid, sample_rccv, sample_rccv_array)
from .mesh import TriMesh, load_ply, marching_cubes, render_depth, sample_points, save_ply
from .metrics import (DepthReport, MeshReport, depth_metrics, f1_threshold_sweep,
                      mesh_metrics, tsdf_compare)
from .rccv import (CompensationWeights, RayFeature, Rccv, contextual_compensate,
                   default_weights, footprint_bytes, ray_compensate)
from .synth import BoxPrim, PlanePrim, SceneSpec, Texture, analytic_mesh, emit_dataset, render
from .tsdf import (DepthMap, TsdfVolume, decode_depth_softargmax, decode_volume,
                   integrate_depth, make_tsdf, mark_unobserved_columns)

__version__ = "0.1.0"
