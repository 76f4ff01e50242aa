"""Open quantum system trajectories by quantum state diffusion, with a
moving Fock basis that follows the wave packet through phase space."""

from .errors import CapacityError, IntegrationError, SimulationError
from .fock import (
    ModeSpec,
    MultiModeState,
    ObservableValue,
    apply_annihilation,
    apply_creation,
    apply_quadrature,
    fock_state,
    inner_product,
    make_modes,
    mode_occupation_probabilities,
    normalize,
    random_state,
    vacuum_state,
)
from .models import (
    DuffingParams,
    ShgParams,
    build_damped_oscillator,
    build_duffing,
    build_shg,
    oscillator_coherent_solution,
)
from .moving_basis import (
    MovingFrame,
    MqsdState,
    TruncationPolicy,
    adapt_capacity,
    centroid,
    compose_displacements,
    displacement_matrix,
    displacement_matrix_qp,
    global_expectation,
    initial_mqsd_state,
    mqsd_step,
    recenter,
    to_fixed_basis,
)
from .operators import (
    Annihilation,
    Creation,
    Identity,
    OpenSystemModel,
    OperatorExpr,
    Product,
    Scale,
    Sum,
    TimeCoefficient,
    adjoint,
    annihilation,
    apply_operator,
    apply_operator_with_loss,
    canonicalize,
    cosine_coeff,
    creation,
    describe,
    expectation_and_variance,
    identity,
    is_self_adjoint,
    is_time_dependent,
    number_op,
    op_product,
    op_sum,
    quadrature_p,
    quadrature_q,
    scale,
    shift_origin,
    structurally_equal,
    to_matrix,
)
from .oracles import (
    DensityMatrix,
    check_density_matrix,
    density_expectation,
    ensemble_density,
    localization,
    master_equation_evolve,
    pure_density,
)
from .qsd import (
    IntegratorConfig,
    NoiseIncrement,
    StepDiagnostics,
    derive_rng,
    drift_vector,
    evolve,
    fluctuation_vector,
    sample_noise,
    step,
)

__version__ = "0.1.0"
