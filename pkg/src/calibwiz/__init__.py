"""Camera-calibration guidance: bundle adjustment, intrinsic covariance via
the Schur complement, corner-uncertainty modelling and next-best-pose search."""

from .calibration import (CalibrationState, ImageObservation, InformationMatrix,
                          ObservationSet, SolverConfig, assemble_information,
                          calibrate, initialize_calibration, intrinsic_covariance,
                          optimize_bundle, reprojection_rms)
from .corners import (CornerModel, autocorrelation_of_patch, build_corner_model,
                      corner_geometry_from_projection, predict_autocorrelation,
                      render_corner_patch)
from .geometry import (IntrinsicParams, JacobianBlocks, Pose, TargetSpec,
                       jacobian_blocks, project, project_points,
                       rotation_from_angles)
from .planner import (BaseInformation, PlannerConfig, PoseSearchSpace,
                      default_search_space, objective, precompute_base,
                      search_next_pose)
from .synthetic import (ExperimentConfig, generate_observations,
                        interpolate_path, random_pose, run_experiment,
                        summarize)
from .uncertainty import (UncertaintyMap, backproject, pointwise_covariance,
                          render_map)

__version__ = "0.1.0"
