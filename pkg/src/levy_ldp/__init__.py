"""Large deviations of small-noise Levy diffusions.

Simulation of ``dX = b(X) dt + a_n dW + b_n dL`` with Brownian ``W`` and
symmetric alpha-stable ``L``, the rate function as the value of a
continuous-plus-impulse control problem, and Monte Carlo slope checks.
"""

from .dynamics import (
    DriftField,
    IntegrationError,
    LinearField,
    PolynomialField,
    Potential,
    SeparableGradientField,
    flow,
    reversed_flow,
    simulate_sde,
    validate_assumptions,
)
from .noise import AlphaStableParams, NoiseScale, RngStream, sample_gaussian_increment, sample_stable_increment
from .quasipotential import (
    ConnectionProblem,
    annulus_energy_growth,
    connection_cost,
    finite_horizon_value,
    gradient_case_oracle,
    infinite_horizon_value,
)
from .rates import (
    ContinuousControl,
    Impulse,
    ImpulseSchedule,
    InitialRate,
    RateBreakdown,
    detect_jumps,
    energy_IW,
    jump_count_IL,
    total_rate,
)
from .transcription import SolverSettings
from .verify import Ball, Box, estimate_hit_probability, ldp_slope, noise_self_tests

__version__ = "0.1.0"
