"""fockscatter: scattering theory on truncated Fock spaces.

Truncated occupation bases with exact ladder statistics, finite-rank
regularized Hamiltonians built from normal-ordered vertices, unitary
propagation, Moller wave operators and the S-matrix via plateau/adiabatic
limit surrogates, Dyson-series cross-checks, and (rank, cutoff)
double-limit convergence studies.
"""

from .fock import (
    FockBasis,
    ModeGrid,
    ParticleSystem,
    build_mode_grid,
    build_particle_system,
    dispersion,
    enumerate_basis,
    ladder_matrix,
    vacuum_vector,
)
from .hamiltonian import (
    InteractionSpec,
    RegularizedHamiltonian,
    Vertex,
    assemble_regularized,
    free_hamiltonian,
    ground_state_check,
    interaction_matrix_element,
    mass_counterterm_vertices,
    phi_power_vertices,
    yukawa_vertices,
)
from .evolution import (
    Propagator,
    dense_oracle_exponential,
    evolve,
    evolve_free_diagonal,
)
from .scattering import (
    ScatteringReport,
    WaveOperatorResult,
    ac_projection,
    compute_wave_operators,
    intertwining_defect,
    range_projection,
    scattering_operator,
    wave_operator_adiabatic,
    wave_operator_time_plateau,
)
from .dyson import (
    DysonExpansion,
    InteractionPictureGenerator,
    dyson_term,
    dyson_term_element,
    propagator_interaction_picture,
    scattering_matrix_damped,
    smatrix_first_order,
    time_ordered_exponential,
)
from .convergence import (
    DoubleLimitReport,
    HorizonRecord,
    ObservableFamily,
    Refinement,
    double_limit_study,
    horizon_study,
    inner_sweep,
)

__version__ = "0.1.0"
