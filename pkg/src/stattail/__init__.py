"""Stationary measures of contracting-on-average random Lipschitz systems.

Backward-iteration sampling, polynomial tail estimation and the analytic
quantities that bracket it (contraction rate, Lyapunov exponent, Cramér rate
function, lower-bound tail exponent, entropy bounds).
"""

from .maps import (AffineMap, PiecewiseLinear1D, Similarity, apply, compose, fixed_point,
                   lipschitz_constant)
from .measure import (GeneratingMeasure, contraction_rate, lyapunov_estimate, moment,
                      rate_function, rho_sup)
from .presets import preset
from .sampler import backward_sample, displacement_bound, forward_orbit, sample_batch
from .streams import Stream
from .tails import (bump_value, convergence_diagnostic, empirical_tail, fit_tail_exponent,
                    ldp_empirical, ldp_rate_fit, lower_bound_exponent)
from .entropy import annulus_bound, ball_volume, h, smoothed_entropy

__version__ = "0.1.0"
