"""Wiener-process realizations and conversions between noise parameterizations.

The white-noise model throughout the package: a fluctuating force xi(t) with
xi(t) dt = sqrt(gamma) dW(t) for the trap-center noise, and a fractional
spring-constant fluctuation eps(t) dt = sqrt(Gamma) dW(t).  Increments are
Normal(0, dt) and reproducible from (seed, dt, length): generation uses the
counter-based Philox generator keyed by (seed, stream index), so a master seed
fans out to per-trajectory streams independent of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import BE9_ION_MASS, ELEMENTARY_CHARGE, HBAR


class ParameterError(ValueError):
    """A physical parameter is outside its allowed domain."""


_UINT64 = np.uint64


@dataclass(frozen=True)
class TrapParams:
    """Trap and noise parameters.

    Attributes
    ----------
    m : ion mass, kg
    omega : trap angular frequency, rad/s
    gamma : trap-center (force) noise strength, N^2 s
    Gamma : spring-constant noise strength, s
    q : ion charge, C
    E0 : field-noise amplitude, V/m sqrt(s)
    hbar : Planck constant over 2 pi; 1.0 in natural-unit runs
    """

    m: float = BE9_ION_MASS
    omega: float = 1.0
    gamma: float = 0.0
    Gamma: float = 0.0
    q: float = ELEMENTARY_CHARGE
    E0: float = 0.0
    hbar: float = HBAR

    def __post_init__(self):
        if self.m <= 0 or self.omega <= 0 or self.hbar <= 0:
            raise ParameterError("m, omega and hbar must be positive")
        if self.gamma < 0 or self.Gamma < 0 or self.E0 < 0:
            raise ParameterError("noise strengths must be non-negative")

    @classmethod
    def natural(cls, gamma: float = 0.0, Gamma: float = 0.0, omega: float = 1.0,
                q: float = 1.0, E0: float = 0.0) -> "TrapParams":
        """hbar = m = 1 test units."""
        return cls(m=1.0, omega=omega, gamma=gamma, Gamma=Gamma, q=q, E0=E0, hbar=1.0)


@dataclass(frozen=True)
class TrapGeometry:
    """Linear-trap drive geometry: ac amplitude, drive frequency, electrode distance."""

    V0: float
    Omega_T: float
    R: float
    omega_z: float

    def __post_init__(self):
        if min(self.V0, self.Omega_T, self.R, self.omega_z) <= 0:
            raise ParameterError("all geometry parameters must be positive")


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """One seeded Wiener-increment sequence, the unit of Monte Carlo reproducibility."""

    seed: int
    dt: float
    increments: np.ndarray
    index: int = 0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def duration(self) -> float:
        return self.dt * self.steps


def wiener_stream(master_seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for stream `index` of a master seed.

    Streams with distinct (master_seed, index) keys are statistically
    independent and identical across platforms and worker schedules.
    """
    key = np.array([_UINT64(master_seed & 0xFFFFFFFFFFFFFFFF),
                    _UINT64(index & 0xFFFFFFFFFFFFFFFF)])
    return np.random.Generator(np.random.Philox(key=key))


def sample_wiener(seed: int, dt: float, steps: int, index: int = 0) -> NoiseRealization:
    """Draw `steps` i.i.d. Normal(0, dt) Wiener increments, deterministic in (seed, index)."""
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    gen = wiener_stream(seed, index)
    increments = gen.standard_normal(steps) * math.sqrt(dt)
    return NoiseRealization(seed=seed, dt=dt, increments=increments, index=index)


def gamma_from_field(q: float, E0: float) -> float:
    """Force-noise strength from charge and field-noise amplitude: q^2 E0^2."""
    return (q * E0) ** 2


def spectral_density(E0: float) -> float:
    """White field-noise spectral density 2 E0^2 (one-sided, frequency independent)."""
    return 2.0 * E0 ** 2


def decoherence_time(params: TrapParams) -> float:
    """Inverse phonon heating rate t* = 2 hbar m omega / gamma.

    Zero noise is signalled by returning math.inf rather than raising.
    """
    if params.gamma == 0.0:
        return math.inf
    return 2.0 * params.hbar * params.m * params.omega / params.gamma


def decoherence_time_from_spectral_density(
    m: float, omega: float, q: float, S_E: float, hbar: float = HBAR
) -> float:
    """t* = 4 hbar m omega / (q^2 S_E); agrees with `decoherence_time` when
    gamma = q^2 S_E / 2."""
    if S_E == 0.0:
        return math.inf
    if S_E < 0:
        raise ParameterError("spectral density must be non-negative")
    return 4.0 * hbar * m * omega / (q ** 2 * S_E)


def radial_frequency(geom: TrapGeometry, q: float, m: float) -> float:
    """Radial secular frequency q V0 / (sqrt(2) Omega_T m R^2) of the driven trap."""
    if q <= 0 or m <= 0:
        raise ParameterError("charge and mass must be positive")
    return q * geom.V0 / (math.sqrt(2.0) * geom.Omega_T * m * geom.R ** 2)
