"""nlplab: a numerical laboratory for weighted nonlocal p-Laplacian
energies with heterogeneous horizons on punctured domains.

Three energy tiers (discrete graph, nonlocal continuum, local weighted
Sobolev) share one set of weights, kernels, and labeled-set geometry, so
convergence statements between tiers can be verified quantitatively at
desk scale.
"""

from .errors import (
    AdmissibilityError,
    ConfigurationError,
    DomainError,
    NlplabError,
    NormalizationError,
    ParameterError,
)
from .geometry import (
    Domain,
    LabeledComponent,
    LabeledSet,
    QuadratureGrid,
    build_grid,
    dist_to_boundary,
    dist_to_labeled,
    horizon,
    max_admissible_delta,
    sample_uniform,
)
from .coefficients import (
    KernelSpec,
    LambdaSpec,
    MollifierSpec,
    WeightSpec,
    admissible_beta_range,
    ap_constant,
    ap_membership,
    cbar,
    gamma_weight,
    make_kernel,
    make_mollifier,
    seminorm_prefactor,
    truncate_weight,
)
from .funcspace import (
    EnergySpec,
    Field,
    embedding_predicate,
    grad_seminorm_weighted,
    hardy_check_1d,
    hardy_check_nd,
    horizon_invariance_check,
    kernel_equivalence_constants,
    lp_norm_weighted,
    nonlocal_seminorm,
    nonlocal_seminorm_general,
    trace_estimate,
    weighted_ball_average,
)
from .convolution import (
    ConvolutionSpec,
    aux_gradient_operator,
    boundary_convolution,
    psi_mass_reversed,
    shrink_phi,
    shrink_theta,
)
from .energies import (
    Graph,
    build_graph,
    discrete_energy,
    extend_labels,
    local_energy,
    nonlocal_energy,
    read_graph,
    truncated_nonlocal_energy,
    write_graph,
)
from .solver import (
    SolveReport,
    SolverOptions,
    el_residual,
    energy_gradient,
    nonlocal_flux,
    solve_dirichlet,
)
from .transport import (
    TransportPlan,
    pushforward_energy,
    sandwich_check,
    tau_schedule,
    theoretical_displacement,
    transport_map,
)

__version__ = "0.1.0"
