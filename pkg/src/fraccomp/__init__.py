"""Discrete laboratory for the weighted (extension) operator of the fractional Laplacian.

Modules: ``geometry`` (grids, fields, arc sets), ``spectral`` (mixed eigenvalue
problems on the half circle's hemisphere), ``rearrange`` (polarization and
foliated Schwarz symmetrization), ``halfball`` and ``competition`` (the
two-component competition system and its frequency diagnostics), ``cli``.
"""

from .geometry import (
    ArcSet,
    FractionalParams,
    GridError,
    HalfBallGrid,
    HemisphereGrid,
    ScalarField,
    build_half_ball_grid,
    build_hemisphere_grid,
    canonical_omega_k,
    weighted_dirichlet_energy,
    weighted_l2_inner,
)
from .spectral import (
    EigenResult,
    SolverError,
    characteristic_exponent,
    exponent_to_eigenvalue,
    first_eigenvalue,
    first_eigenvalue_folded,
    first_eigenvalue_symmetric,
    lambda_empty,
    sweep_k,
)
from .rearrange import HalfSpaceThroughAxis, foliated_schwarz, polarization_sequence, polarize
from .competition import (
    PropertyViolation,
    blow_down,
    blow_up,
    frequency_trace,
    growth_rate_estimate,
    solve_beta_system,
)

__version__ = "0.1.0"
