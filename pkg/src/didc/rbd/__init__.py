from .dynamics import (
    GRAVITY,
    S_MATRIX,
    center_of_mass,
    contact_jacobian,
    contact_set,
    foot_bias_accelerations,
    foot_jacobian,
    foot_positions,
    forward_dynamics,
    advance_positions,
    integrate,
    inverse_dynamics,
    jacobian_dot_qdot,
    kinetic_energy,
    mass_matrix,
    nominal_state,
    nonlinear_effects,
    potential_energy,
    qdot_to_coordinate_rates,
    solve_acceleration,
    world_poses,
)
from .model import (
    LEG_NAMES,
    NV,
    ContactSet,
    GeneralizedState,
    ModelError,
    RobotModel,
    load_model,
    model_from_dict,
)
from .rotations import orientation_error
