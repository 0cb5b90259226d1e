"""squasplat: sparse semantic superquadric scenes, voxel splatting,
analytic-gradient fitting and occupancy metrics."""

from .backend import active_lane, available_backends, set_backend
from .core import (EPS_RANGE, FieldConfig, GridSpec, Superquadric,
                   SuperquadricCluster, VoxelGrid, expand_cluster,
                   make_cluster, normalize)
from .field import (PointEval, aggregate_semantics, combine_occupancy,
                    evaluate_point, evaluate_points, local_coords,
                    point_occupancy)
from .fit import (ClusterParams, FitConfig, FitResult, LossWeights,
                  fit_scene, grid_loss, init_clusters, occupancy_iou,
                  splat_backward)
from .metrics import (LabelGrid, Ray, RaySet, cast_ray, confusion,
                      default_rayset, iou_miou, ray_iou)
from .splat import (Aabb, BenchReport, TilePairTable, bench_splat,
                    build_tile_table, extent_bound, splat_naive, splat_tiled)
from .temporal import (FramePose, QueryState, StreamConfig, foreground_score,
                       propagate, run_stream, transform_query)
from .viewgeom import (CameraModel, FeaturePlane, FrameData, SampleSpec,
                       bilinear, make_plane, make_sample_points, project,
                       sample_multiframe, unproject)

__version__ = "0.1.0"
