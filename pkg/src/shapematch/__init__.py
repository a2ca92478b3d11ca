"""Spectral non-rigid shape correspondence.

Descriptor-initialized functional maps, closed-form filter-commutativity
refinement, trainable orthonormal-Jacobi filter banks optimized per pair by
unsupervised losses, and geodesic-error evaluation.
"""

from .config import Settings, load_settings
from .descriptors import DescriptorSet, hks, l2_normalize, wks
from .errors import (ConsistencyError, DataError, MeshError, NumericalError,
                     ShapematchError)
from .evaluate import (ErrorReport, GroundTruth, load_ground_truth,
                       mean_geodesic_error)
from .filters import (EPSILON_G, FilterBank, FilterResponse, HeatBank,
                      IdealBank, JacobiBank, MeyerBank, eval_bank,
                      heat_initialized_jacobi, jacobi_eval, load_bank,
                      pcd_expand, save_bank)
from .fmap import (FunctionalMap, PointwiseMap, filter_refine_fmap,
                   fmap_from_p2p, iterative_refine, load_fmap, load_p2p,
                   nearest_rows, p2p_from_features, p2p_from_fmap, save_fmap,
                   save_p2p, soft_p2p, solve_fmap_descriptors)
from .mesh import (DistanceField, MassMatrix, Mesh, StiffnessMatrix,
                   assemble_operators, geodesic_diameter, geodesic_distances,
                   load_mesh, save_mesh)
from .optimize import (Adam, FilterGradient, LossBreakdown, LossWeights,
                       OptimizeResult, OptimizerConfig, PairState, ShapeData,
                       grad_filter_params, loss_fmap, loss_freq, loss_smooth,
                       optimize_filters, total_loss)
from .pipeline import run_match, run_pipeline, run_refine
from .spectral import (SpectralBasis, eigendecompose, embed, load_basis,
                       mesh_basis, project, save_basis)

__version__ = "0.1.0"
