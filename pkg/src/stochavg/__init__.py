"""Stochastic perturbations of Birkhoff-integrable Hamiltonian systems:
stiff simulation, torus averaging, and effective equations."""

from ._kernels import backend
from .averaging import (
    AveragedDiffusion,
    QuadratureRule,
    action_dispersion,
    action_drift,
    average_action_coefficients,
    average_diffusion_state,
    average_field,
    default_quadrature,
    make_quadrature,
    psd_sqrt,
)
from .core import (
    ActionAngle,
    DispersionField,
    DomainBox,
    IntegrableHamiltonian,
    PerturbationField,
    PolynomialHamiltonian,
    RealFunction,
    check_coercivity,
    check_rank,
    from_action_angle,
    hamiltonian_field,
    resonance_scan,
    rotate,
    to_action_angle,
    unperturbed_flow,
)
from .ensemble import (
    EmpiricalDistribution,
    Ensemble,
    action_distribution,
    exit_time_stats,
    moment_report,
    noise_floor,
    run_ensemble,
    stationary_estimate,
    wasserstein1,
    wasserstein1_exponential,
)
from .equations import (
    EquationBundle,
    build_averaged_action,
    build_bundle,
    build_deterministic_averaged,
    build_effective,
    build_effective_modified,
    build_full,
)
from .models import (
    Model,
    OuParameters,
    build_model,
    chain_model,
    damped_driven_model,
    linear_model,
    ou_exact_action_law,
    oscillator_action,
    quartic_potential,
)
from .sde import (
    PathConfig,
    SdeSystem,
    action_step_truncated,
    euler_maruyama_step,
    integrate_path,
    sample_wiener_increments,
    splitting_step,
)

__version__ = "0.1.0"
