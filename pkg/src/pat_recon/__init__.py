"""Model-based photoacoustic reconstruction with smoothed-l0 sparse recovery."""

from .errors import ConvergenceError, InvalidArgumentError, NumericalError, TruncationWarning
from .forward import (AcquisitionConfig, ModelMatrix, Sinogram, add_noise, apply_adjoint,
                      apply_forward, build_model_matrix)
from .grid import Image, ImagingGrid, SensorArray, make_grid, make_sensor_array, shepp_logan
from .metrics import PsnrReport, lateral_profile, psnr
from .solvers import (BpParams, IrParams, ReconResult, Sl0Params, basis_pursuit_solve, ir_solve,
                      reconstruct, sl0_solve)
from .wavelet import CsOperator, WaveletBasis

__version__ = "0.1.0"
