"""Real-time aeroelastic hybrid simulation engine.

A numerical substructure (Kalman-family state estimators over the
elastic-support dynamics) coupled in lockstep to a surrogate physical
substructure (aerodynamic force generator), either in-process or over a
versioned UDP wire protocol, with oracle integrators and a CLI harness
for the shipped validation cases and the time-delay study.
"""

from .aero import (
    AeroParams,
    CoupledSeMatrices,
    amplitude_dep_damping,
    amplitude_dep_frequency,
    coupled_se_force,
    instantaneous_amplitude,
    linear_se_force,
    nonlinear_vortex_force,
)
from .cases import CaseConfig, default_config
from .config import ConfigFileError, config_from_dict, load_config
from .cosim import (
    DelayLine,
    EstimatorSession,
    LockstepConfig,
    LossInjector,
    SessionError,
    SurrogateSession,
    apply_delay,
    numerical_server,
    run_in_process,
    run_udp_pair,
    surrogate_physical,
)
from .dynamics import (
    ConfigurationError,
    DofId,
    ModalParams,
    StateSpaceModel,
    StructuralMatrices,
    assemble_matrices,
    build_state_space,
    discretize_zoh,
)
from .estimators import (
    AdaptiveConfig,
    FilterNumericalError,
    FilterState,
    NoiseStats,
    TransitionModel,
    aekf_step,
    covariance_match,
    ekf_step,
    kf_step,
    linear_transition_model,
    numeric_jacobian,
    predict,
    update,
)
from .harness import run_case, run_delay_study
from .integrators import (
    IntegrationError,
    MechState,
    SecondOrderSystem,
    TimeSeries,
    newmark_step,
    rk4_step,
    simulate,
)
from .kinematics import (
    CarriagePose,
    EnvelopeError,
    arm_rotation_increment,
    joint_motor_target,
    screw_increment,
)
from .metrics import ComparisonMetrics, classify_envelope, compare_series
from .wire import (
    Frame,
    FrameDecodeError,
    FrameEncodeError,
    Handshake,
    MsgType,
    decode_frame,
    encode_frame,
)

__version__ = "0.1.0"
