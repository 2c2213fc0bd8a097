"""Octree occupancy structures.

Ground-truth octrees from semantic voxel grids, top-k structure selection,
dense/octree codecs, segmentation-guided initialization, iterative structure
rectification and the metrics to score them.
"""

from .errors import (ConfigError, DimensionError, LevelError, OcctreeError, ParseError, ProviderError,
                     SpecError, StructureError)
from .geometry import CameraModel, PixelHit, project_point, project_points, voxel_center
from .grid import (DenseGrid, GridDims, average_pool_2x, linear_index, mode_pool_2x,
                   replicate_upsample_2x)
from .metrics import (CompressionStats, ConfusionCounts, compression_stats, focal_loss_mask, miou,
                      split_quality_miou)
from .octree import (LeafCensus, OctreeConfig, OctreeGT, OctreeMask, OctreeStructure, SparseOctreeField,
                     children_indices, dense_to_octree, derive_structure, generate_octree_gt, leaf_census,
                     octree_to_dense, validate_structure)
from .rectify import (ConstantProvider, FileProvider, OracleProvider, RectifyConfig,
                      SplitProbabilityProvider, partition_confidence, rectify_iterate, rectify_level)
from .semantic_init import InitWeights, SegMap, SemClass, accumulate_weights, build_initial_mask
from .synth import SceneSpec, make_scene, render_segmap, surround_cameras

__version__ = "0.1.0"
