"""Strong-convergence toolkit for scalar SDEs with discontinuous drift."""

from .analysis import (CostReport, RateReport, ReferenceUnavailable, SeminormResult,
                       StudyResult, batch_rmse, closed_form_family, convergence_study,
                       cost_curve, estimate_order, exact_solution, hitting_fraction,
                       predicted_order, sobolev_seminorm, strong_error)
from .core import (NumericalError, PiecewiseDrift, SdeProblem, SdeValueError,
                   SmoothCoefficient, TimeGrid, merge_grids, uniform_grid)
from .noise import (BrownianSource, JumpTrain, NoisePath, SeedSpec, bridge_values, coarsen,
                    refine_bridge, sample_jumps, sample_path)
from .presets import PRESETS, Preset, get_preset
from .schemes import (SCHEMES, StepPolicy, Trajectory, adaptive_euler_maruyama,
                      augment_with_jumps, euler_maruyama, jump_euler_maruyama, milstein,
                      step_size_h, transform_method, transformed_milstein)
from .transform import (InverseError, TransformedProblem, TransformG, apply_G,
                        apply_G_derivatives, build_transform, invert_G,
                        transformed_coefficients)

__version__ = "0.1.0"
