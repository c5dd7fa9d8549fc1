"""Narrow-band parallel transport convolution on raw 3-D point clouds.

Pipeline: normalize a cloud into the unit cube, voxelize its narrow band,
solve |grad rho| = 1 on the band by fast marching, lift rho onto the
points, build per-point tangent frames from the projected gradient, and
discretize the convolution as a per-point gather table of kernel taps.
A small hand-backpropagated network trains on top of the cached tables.
"""

from . import caches
from .cloud import (NeighborIndex, PointCloud, export_ply_with_scalars,
                    k_nearest, load_cloud, normalize_to_unit_cube,
                    save_xyz_text)
from .eikonal import (GridScalarField, PointScalarField, SeedSet,
                      fast_marching, interpolate_to_points, select_seed)
from .errors import (ArgumentError, CacheMissError, ConfigError,
                     DisconnectedBand, EmptyCloud, InternalError, NPTCError,
                     ParseError, ShapeError)
from .frames import FrameField, TangentFrame, build_frame_field, lpca_basis, ls_gradient
from .hierarchy import (PointHierarchy, build_hierarchy,
                        farthest_point_sampling, upsample_nn)
from .narrowband import (NarrowBand, VoxelGrid, band_from_voxels,
                         containing_voxel, voxelize_narrowband)
from .network import (CloudBundle, NetworkConfig, NPTCNet, concat,
                      cross_entropy, global_max_pool, grad_check, mlp,
                      residual_block, softmax)
from .operator import (KernelSpec, NPTCOperator, apply, apply_adjoint,
                       build_operator, load_operator, save_operator)
from .pipeline import CloudArtifacts, PipelineConfig, build_cloud_bundle, compute_frames
from .synthetic import (DatasetSpec, SyntheticDataset, make_dataset,
                        sample_shape, write_dataset)
from .training import (AUGMENT_OFF, Adam, AugmentConfig, SGD, TrainConfig,
                       TrainingSet, evaluate, load_checkpoint,
                       predict_with_voting, save_checkpoint, train,
                       write_metrics_csv)

__version__ = "0.1.0"
