"""Heating laws and CNOT-gate fidelity for a trapped ion under white-noise
fluctuations of the trap center and of the trap spring constant."""

from .constants import BE9_ION_MASS, ELEMENTARY_CHARGE, HBAR
from .hilbert import (
    CompositeSpace,
    DensityMatrix,
    ElectronicSpace,
    FockSpace,
    OperatorMatrix,
    StateVector,
    expectation,
    expectation_real,
    harmonic_hamiltonian,
    ladder_operators,
    number_operator,
    quadrature_operators,
    tensor,
)
from .noise import (
    NoiseRealization,
    TrapGeometry,
    TrapParams,
    decoherence_time,
    decoherence_time_from_spectral_density,
    gamma_from_field,
    radial_frequency,
    sample_wiener,
    spectral_density,
    wiener_stream,
)
from .heating import (
    HeatingResult,
    averaged_master_rhs,
    integrate_master,
    mean_energy_linear,
    time_averaged_master_rhs,
)
from .springnoise import (
    MomentState,
    D_parameter,
    approx_energy,
    exact_energy,
    gaussian_state_from_moments,
    growth_rate,
    moment_matrix,
    propagate_moments,
    spring_master_rhs,
)
from .trajectories import (
    EnsembleResult,
    TrajectoryConfig,
    conditioned_step,
    run_ensemble,
)
from .gates import (
    AuxSidebandGate,
    FidelityResult,
    GateSpec,
    InputState,
    MutualPhaseGate,
    cnot_ideal,
    controlled_phase_ideal,
    dyson_averaged_state,
    dyson_fidelity,
    evolve_gate_trajectory,
    fidelity_analytic,
    fidelity_analytic_mutual,
    fidelity_analytic_nist,
    fidelity_mc,
    gate_noise_from_gamma,
    gate_noise_nominal,
    gamma_from_gate_noise,
    noise_hamiltonian,
    nu_statistics,
    rotation,
    run_gate_ensemble,
    select_formula_reading,
)

__version__ = "0.1.0"
