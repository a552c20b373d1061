"""Radial porous medium equation on Cartan-Hadamard model manifolds.

Modules
-------
geometry    warping functions, model manifolds, radial grids and Laplacians
comparison  comparison warps psi* and certified drift bounds
barriers    super/subsolution barriers, eta and harmonic comparison functions, weighted norms
profile     stationary blow-up profiles and the recursive growth bound
solver      implicit finite-volume solver, domain expansion, comparison and blow-up tools
config, harness, cli   scenario files, pipelines and the ``chpme`` command
"""

from .barriers import (EtaBarrier, HarmonicShell, PowerBarrier, WeightedNorm, barrier_residual,
                       eta_residual, eta_select, existence_time, harmonic_shell, sub_parameters,
                       super_amplitude, truncate_sub, weighted_sup_norm)
from .comparison import (CoeffBoundCertificate, build_psi_star_lower, build_psi_star_upper,
                         certify_coeff_bound)
from .geometry import (CurvatureBounds, DomainError, Euclidean, ExpPower, GeometryError, Hyperbolic,
                       ModelManifold, OdeGenerated, PowerLaw, RadialGrid, WarpFunction,
                       radial_laplacian, sigma_of_gamma)
from .profile import (StationaryProfile, asymptotic_exponent, integrate_profile, ordering_check,
                      recursion_lower_bound, rescale_profile)
from .solver import (Boundary, RadialState, SolveReport, comparison_test, existence_window_check,
                     expand_domain, solve, step)

__version__ = "0.1.0"
