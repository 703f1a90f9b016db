"""Noise-averaged dynamics for trap-center (position) noise.

Two equivalent descriptions of the same heating physics:

* `averaged_master_rhs`: the noise-averaged master equation
  d rho/dt = -(i/hbar)[H0, rho] - (gamma / 2 hbar^2) [x, [x, rho]].
* `time_averaged_master_rhs`: its rotating-frame form after dropping terms
  oscillating at the trap frequency, a symmetric Lindblad dissipator on both
  the a and a^dag channels with rate gamma/(2 hbar m omega).

Both heat the mean energy linearly, d<H0>/dt = gamma/(2m), independent of the
state; `mean_energy_linear` is that closed form.  `integrate_master` is a
fixed-step RK4 propagator with a truncation monitor: linear heating defeats
any Fock cutoff eventually, so runs report the time at which the top two
levels pass the population threshold instead of pretending the basis is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .constants import TRUNCATION_POPULATION_TOL
from .hilbert import (
    DensityMatrix,
    FockSpace,
    HilbertError,
    InvariantError,
    harmonic_hamiltonian,
    ladder_operators,
    quadrature_operators,
)
from .noise import ParameterError, TrapParams


class IntegrationError(RuntimeError):
    """An invariant broke during deterministic propagation."""


@lru_cache(maxsize=32)
def _cached_ops(cutoff: int, m: float, omega: float, hbar: float):
    space = FockSpace(cutoff)
    a, ad = ladder_operators(space)
    x, p, X, P = quadrature_operators(space, m, omega, hbar)
    H0 = harmonic_hamiltonian(space, m, omega, hbar)
    n = ad.mat @ a.mat
    return a.mat, ad.mat, x.mat, H0.mat, n, X.mat @ X.mat


def _as_matrix(rho) -> np.ndarray:
    return rho.mat if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


@dataclass(frozen=True, eq=False)
class HeatingResult:
    """Recorded propagation of one master-equation run.

    `truncation_breach_time` is the first recorded time at which the top two
    Fock levels together exceeded the population threshold (None if never).
    """

    times: np.ndarray
    mean_energy: np.ndarray
    nbar: np.ndarray
    top_level_population: np.ndarray
    truncation_breach_time: float | None
    max_trace_drift: float

    def __post_init__(self):
        lengths = {len(self.times), len(self.mean_energy), len(self.nbar),
                   len(self.top_level_population)}
        if len(lengths) != 1:
            raise InvariantError("HeatingResult sequences must have equal length")

    @property
    def valid_mask(self) -> np.ndarray:
        """True where the run is inside its truncation-valid window."""
        if self.truncation_breach_time is None:
            return np.ones_like(self.times, dtype=bool)
        return self.times < self.truncation_breach_time


def averaged_master_rhs(rho, params: TrapParams, space: FockSpace) -> np.ndarray:
    """Right-hand side of the noise-averaged master equation.

    Returns the (traceless) derivative as a plain complex matrix.
    """
    mat = _as_matrix(rho)
    if mat.shape[0] != space.dim:
        raise HilbertError("state dimension does not match the Fock space")
    _, _, x, H0, _, _ = _cached_ops(space.cutoff, params.m, params.omega, params.hbar)
    comm_h = H0 @ mat - mat @ H0
    xr = x @ mat - mat @ x
    double = x @ xr - xr @ x
    return (-1j / params.hbar) * comm_h - (params.gamma / (2 * params.hbar ** 2)) * double


def time_averaged_master_rhs(rho, params: TrapParams, space: FockSpace) -> np.ndarray:
    """Rotating-frame Lindblad form with symmetric a / a^dag dissipators.

    d rho/dt = r (a rho a^dag + a^dag rho a
                  - (a^dag a rho + a a^dag rho + rho a^dag a + rho a a^dag)/2)
    with r = gamma / (2 hbar m omega).
    """
    mat = _as_matrix(rho)
    if mat.shape[0] != space.dim:
        raise HilbertError("state dimension does not match the Fock space")
    a, ad, _, _, _, _ = _cached_ops(space.cutoff, params.m, params.omega, params.hbar)
    rate = params.gamma / (2 * params.hbar * params.m * params.omega)
    sandwich = a @ mat @ ad + ad @ mat @ a
    anti = (ad @ a + a @ ad)
    return rate * (sandwich - 0.5 * (anti @ mat + mat @ anti))


def mean_energy_linear(t: float, params: TrapParams, E_initial: float) -> float:
    """Closed-form heated energy (gamma / 2m) t + E_initial."""
    if t < 0:
        raise ParameterError("time must be non-negative")
    return params.gamma / (2 * params.m) * t + E_initial


def stable_rk4_dt(params: TrapParams, space: FockSpace, form: str = "averaged") -> float:
    """Step small enough for both the trap period and RK4 stability.

    The dissipative part has spectral radius growing with the cutoff (the
    double commutator scales like gamma * cutoff for trap-center noise and
    Gamma * omega^2 * cutoff^2 for spring noise), which binds before the
    0.01-trap-period rule at large cutoffs.
    """
    n = space.cutoff
    coherent = 2.0 * params.omega * n
    if form == "averaged":
        x2_max = 2.0 * params.hbar * n / (params.m * params.omega)
        dissip = params.gamma / (2 * params.hbar ** 2) * 4.0 * x2_max
    elif form == "time_averaged":
        dissip = params.gamma / (2 * params.hbar * params.m * params.omega) * 4.0 * n
    elif form == "spring":
        dissip = params.Gamma / 2.0 * params.omega ** 2 * 4.0 * n ** 2 / 4.0
    else:
        raise ParameterError(f"unknown form {form!r}")
    return min(0.01 * (2 * np.pi / params.omega), 2.0 / (coherent + dissip))


def integrate_master(
    rho0: DensityMatrix,
    rhs,
    t_final: float,
    dt: float,
    params: TrapParams,
    space: FockSpace,
    record_every: int = 1,
) -> HeatingResult:
    """Fixed-step RK4 propagation of `rhs(rho_matrix) -> d rho/dt`.

    Records mean energy <H0>, nbar = <a^dag a> and the top-two-level
    population at every `record_every`-th step.  Raises IntegrationError on a
    trace or Hermiticity breach; a truncation breach only flags the result.
    """
    if dt <= 0 or t_final <= 0:
        raise ParameterError("dt and t_final must be positive")
    if dt > 0.01 * (2 * np.pi / params.omega) + 1e-15:
        raise ParameterError("dt too coarse: must be <= 0.01 trap periods")
    if rho0.dim != space.dim:
        raise HilbertError("initial state dimension does not match the Fock space")

    _, _, _, H0, n_op, _ = _cached_ops(space.cutoff, params.m, params.omega, params.hbar)
    steps = int(round(t_final / dt))
    rho = np.array(rho0.mat, dtype=complex)

    times, energies, nbars, top_pops = [], [], [], []
    breach_time = None
    max_drift = 0.0

    def record(t, mat):
        nonlocal breach_time, max_drift
        drift = abs(np.trace(mat).real - 1.0)
        max_drift = max(max_drift, drift)
        if drift > 1e-8:
            raise IntegrationError(f"trace drift {drift:.3e} at t={t:.6g}")
        herm = np.max(np.abs(mat - mat.conj().T))
        if herm > 1e-8:
            raise IntegrationError(f"Hermiticity drift {herm:.3e} at t={t:.6g}")
        pop = float(mat[-1, -1].real + mat[-2, -2].real)
        if breach_time is None and pop > TRUNCATION_POPULATION_TOL:
            breach_time = t
        times.append(t)
        energies.append(float(np.einsum("ij,ji->", mat, H0).real))
        nbars.append(float(np.einsum("ij,ji->", mat, n_op).real))
        top_pops.append(pop)

    record(0.0, rho)
    for k in range(steps):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        if (k + 1) % record_every == 0 or k == steps - 1:
            record((k + 1) * dt, rho)

    return HeatingResult(
        times=np.array(times),
        mean_energy=np.array(energies),
        nbar=np.array(nbars),
        top_level_population=np.array(top_pops),
        truncation_breach_time=breach_time,
        max_trace_drift=max_drift,
    )
