"""End-to-end adaptive tracking control with an online-trained CNN.

A small numpy library that evaluates a convolutional network on stacked
sensor history, differentiates it in closed form, adapts its weights
online through a projected gradient law, and simulates the closed loop
against a two-state benchmark plant with a fixed-step RK4 integrator.
"""

from .controller import (
    ControllerParams,
    GainCertificate,
    adaptation_rate,
    adaptation_step,
    control_input,
    gain_certificate,
    gamma_vector,
    projection,
)
from .errors import ConfigError, DivergenceError
from .gradcheck import (
    GradCheckResult,
    finite_difference_jacobian,
    gradient_check,
    normalized_errors,
)
from .jacobian import (
    assemble_full_jacobian,
    conv_backprop_seed,
    conv_layer_backprop,
    conv_weight_jacobians,
    fc_jacobians,
)
from .matops import hadamard, kronecker, reshape_colmajor, row_slice, vec_rowmajor
from .network import (
    ConvLayerSpec,
    ForwardTrace,
    HistoryBuffer,
    NetworkSpec,
    build_input_matrix,
    cnn_operator,
    forward,
    init_weights,
    pack_weights,
    unpack_weights,
)
from .presets import PRESET_NAMES, REPORTED_RMSE, preset
from .sim import (
    PlantModel,
    RunResult,
    Scenario,
    SimConfig,
    Trajectory,
    default_trajectory,
    lumped_target,
    make_builtin_plant,
    plant_f,
    plant_g,
    rk4_step,
    rmse,
    run_scenario,
    sech,
    validate_scenario,
)

__version__ = "0.1.0"
