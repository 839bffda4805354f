"""Numerical homogenisation toolkit: local, nonlocal and evolutionary limits."""
from .coefficients import (CoefficientField, Kernel, NonlocalOperator, check_admissible,
                           constant_kernel, convolution_operator, mean_value, oscillate, sine_kernel,
                           weak_star_pairing)
from .errors import (ConfigError, HomoglabError, IllPosedAtFrequencyError, InadmissibleKernelError,
                     InvalidArgumentError, NotAdmissibleError, NotCoerciveError, NotReducibleError)
from .evolutionary import (MaterialLaw, SkewOperator, TimeGrid, WeightedSignal, causality_check,
                           dynamic_convergence_experiment, dynamic_homogenisation_experiment,
                           fourier_laplace, heat_model, inverse_fourier_laplace, maxwell1d_model,
                           range_kernel_transform, solve_evolutionary, wave_model)
from .fem import DiscreteField, assemble_stiffness, flux, solve_lax_milgram
from .harness import ExperimentConfig, RunSummary, run
from .helmholtz import (BlockOperator, OrthogonalSplitting, block_decompose, build_splitting,
                        nonlocal_h_distance, schur_identity_suite, schur_maps)
from .homogenisation import (ConvergenceReport, MeshPolicy, divcurl_experiment, effective_tensor,
                             g_convergence_experiment, h_convergence_experiment,
                             nonlocal_homogenisation_experiment, solve_cell_problem)
from .mesh import Mesh, build_interval_mesh, build_square_mesh
from .presets import list_presets

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
