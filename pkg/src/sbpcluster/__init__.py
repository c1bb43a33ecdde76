"""Multipeak cluster solutions of a Schrodinger equation coupled to a
screened fourth-order electrostatic field.

The package builds the radial ground state of the scalar limit problem,
assembles K-peak spherical-polygon ansatz fields on a uniform grid, solves
the auxiliary (normal-direction) equation by a projected Newton-Krylov
iteration, minimizes the reduced energy over cluster radii, and verifies
the asymptotic energy expansion and multiplier decay quantitatively.
"""

__version__ = "0.1.0"

from .ansatz import (GeneralConfig, PeakConfig, PotentialSpec,
                     ReductionParams, admissible_interval,
                     anisotropic_potential, build_W, canonical_radius,
                     choose_exponents, gram_matrix, make_params,
                     peak_positions, potential_field, radial_potential,
                     refined_peak, snap_positions, tangent_basis)
from .bpfield import (BPParams, kappa, kappa_eps, solve_potential_direct,
                      solve_potential_spectral)
from .energy import EnergyContext, energy, gradient, hessian_apply, \
    make_context
from .errors import (AlphaTooSmall, EmptyAdmissible, GridMismatch,
                     GridTooLarge, GridTooSmall, InvalidExponent,
                     KrylovBreakdown, NoConvergence, ParseError,
                     PeaksUnresolved, SbpError, SingularGram,
                     ValidationError)
from .fields import (ScalarField3D, UniformGrid, dump_field, inner_h1,
                     integrate, load_field, norm_h1)
from .groundstate import (GroundStateConstants, RadialProfile, constants,
                          evaluate, load_profile, ode_residual, save_profile,
                          solve_ground_state)
from .reduction import (AuxiliarySolution, ExpansionReport, MinimizeResult,
                        SweepRow, VerifyReport, asymptotic_formula,
                        expansion_report, general_config_energy,
                        minimize_reduced, project_normal,
                        pseudo_critical_residual, reduced_energy,
                        solve_auxiliary, theorem_sweep, verify_solution)

__all__ = [name for name in dir() if not name.startswith("_")]
