"""Event-assisted video frame interpolation with spline motion fields."""

from .errors import InputError, NumericalError
from .events import (Event, EventStream, Frame, SimulatorConfig, VoxelGrid, build_voxel_grid,
                     event_integral, simulate_events, synthesize_pseudo_frame)
from .spline import (FlowSample, SplineField, fit_spline, load_spline, sample_spline,
                     sample_spline_jacobian, save_spline)
from .warping import (FeaturePyramid, SplatResult, backward_warp_bilinear, build_pyramid,
                      softmax_splat, warp_pyramid)
from .fusion import (FusionConfig, GateParams, classical_fuse, fuse_multiscale, gate_statistics,
                     gated_compress)
from .estimator import EstimatorConfig, dense_flow, estimate_spline_motion, nonparametric_motion
from .metrics import psnr, ssim

__version__ = "0.1.0"
