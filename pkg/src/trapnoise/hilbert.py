"""Truncated Fock spaces, the electronic level space, and dense operators on them.

Everything downstream (heating integrators, stochastic trajectories, gate
simulations) consumes the types built here.  Matrices are dense complex
ndarrays: the largest space in use is a 3-level electronic factor times a
32-level Fock factor, where dense is both simpler and fast enough.

Conventions
-----------
* Tensor ordering is electronic factor first, vibrational factor second, so a
  composite basis state is |level> |n>_v with flat index
  ``level_index * cutoff + n``.
* Dimensionless quadratures are X = (a + a^dag)/2 and P = i(a^dag - a)/2,
  satisfying [X, P] = i/2 away from the truncation corner.

All types are immutable after construction (arrays are marked read-only) and
safe to share across trajectory workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import (
    HBAR,
    HERMITICITY_TOL,
    LABELED_HERMITIAN_TOL,
    NORM_TOL,
    POSITIVITY_TOL,
    TRACE_TOL,
)


class HilbertError(ValueError):
    """Invalid space construction or operator dimensions."""


class InvariantError(ValueError):
    """A state violated one of its defining invariants."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=complex)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FockSpace:
    """Truncated harmonic oscillator space with basis |0> .. |cutoff-1>."""

    cutoff: int

    def __post_init__(self):
        if not isinstance(self.cutoff, (int, np.integer)) or self.cutoff < 2:
            raise HilbertError(f"Fock cutoff must be an integer >= 2, got {self.cutoff!r}")

    @property
    def dim(self) -> int:
        return int(self.cutoff)


@dataclass(frozen=True)
class ElectronicSpace:
    """Internal level space, {g, e} for the bare qubit or {g, e, aux}."""

    levels: tuple[str, ...] = ("g", "e")

    def __post_init__(self):
        if len(set(self.levels)) != len(self.levels):
            raise HilbertError("electronic level labels must be unique")
        if self.levels not in (("g", "e"), ("g", "e", "aux")):
            raise HilbertError(f"unsupported electronic level set {self.levels!r}")

    @classmethod
    def qubit(cls) -> "ElectronicSpace":
        return cls(("g", "e"))

    @classmethod
    def with_aux(cls) -> "ElectronicSpace":
        return cls(("g", "e", "aux"))

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def has_aux(self) -> bool:
        return "aux" in self.levels

    def index(self, level: str) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise HilbertError(f"no level {level!r} in {self.levels}") from None

    def projector(self, level: str) -> "OperatorMatrix":
        i = self.index(level)
        mat = np.zeros((self.dim, self.dim), dtype=complex)
        mat[i, i] = 1.0
        return OperatorMatrix(mat, label=f"|{level}><{level}|", hermitian=True)

    def transition(self, to_level: str, from_level: str) -> "OperatorMatrix":
        """|to><from| on the electronic factor."""
        mat = np.zeros((self.dim, self.dim), dtype=complex)
        mat[self.index(to_level), self.index(from_level)] = 1.0
        return OperatorMatrix(mat, label=f"|{to_level}><{from_level}|")


@dataclass(frozen=True)
class CompositeSpace:
    """Electronic x vibrational product space (electronic factor first)."""

    electronic: ElectronicSpace
    fock: FockSpace

    @property
    def dim(self) -> int:
        return self.electronic.dim * self.fock.dim

    def index(self, level: str, n: int) -> int:
        if not 0 <= n < self.fock.dim:
            raise HilbertError(f"Fock index {n} outside [0, {self.fock.dim})")
        return self.electronic.index(level) * self.fock.dim + n

    def basis_state(self, level: str, n: int) -> "StateVector":
        amp = np.zeros(self.dim, dtype=complex)
        amp[self.index(level, n)] = 1.0
        return StateVector(amp)

    def lift_electronic(self, op: "OperatorMatrix") -> "OperatorMatrix":
        if op.dim != self.electronic.dim:
            raise HilbertError("electronic operator has wrong dimension")
        return tensor(op, identity(self.fock.dim, label="I_v"))

    def lift_vibrational(self, op: "OperatorMatrix") -> "OperatorMatrix":
        if op.dim != self.fock.dim:
            raise HilbertError("vibrational operator has wrong dimension")
        return tensor(identity(self.electronic.dim, label="I_el"), op)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense complex square matrix with a descriptive label.

    ``hermitian=True`` asserts the matrix is Hermitian at construction time
    (max elementwise deviation below 1e-12).
    """

    mat: np.ndarray
    label: str = ""
    hermitian: bool = False

    def __post_init__(self):
        mat = _frozen(self.mat)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise HilbertError(f"operator {self.label!r} is not square: shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise HilbertError(f"operator {self.label!r} has non-finite entries")
        if self.hermitian:
            dev = np.max(np.abs(mat - mat.conj().T))
            if dev > LABELED_HERMITIAN_TOL:
                raise HilbertError(
                    f"operator {self.label!r} labeled Hermitian deviates by {dev:.3e}"
                )
        object.__setattr__(self, "mat", mat)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def dagger(self) -> "OperatorMatrix":
        return OperatorMatrix(self.mat.conj().T, label=f"({self.label})^dag",
                              hermitian=self.hermitian)


def identity(dim: int, label: str = "I") -> OperatorMatrix:
    return OperatorMatrix(np.eye(dim, dtype=complex), label=label, hermitian=True)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state (norm within 1e-10 of one)."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amp = _frozen(self.amplitudes)
        if amp.ndim != 1:
            raise HilbertError("state vector must be one dimensional")
        norm = np.linalg.norm(amp)
        if abs(norm - 1.0) > NORM_TOL:
            raise InvariantError(f"state norm {norm!r} deviates from 1 beyond {NORM_TOL}")
        object.__setattr__(self, "amplitudes", amp)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite matrix.

    Tolerances: Hermiticity 1e-10, trace 1e-9, minimum eigenvalue >= -1e-8.
    """

    mat: np.ndarray

    def __post_init__(self):
        mat = _frozen(self.mat)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise HilbertError("density matrix must be square")
        herm_dev = np.max(np.abs(mat - mat.conj().T))
        if herm_dev > HERMITICITY_TOL:
            raise InvariantError(f"density matrix Hermiticity deviation {herm_dev:.3e}")
        tr = np.trace(mat)
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvariantError(f"density matrix trace {tr!r} deviates from 1")
        min_eig = float(np.linalg.eigvalsh((mat + mat.conj().T) / 2.0).min())
        if min_eig < -POSITIVITY_TOL:
            raise InvariantError(f"density matrix minimum eigenvalue {min_eig:.3e}")
        object.__setattr__(self, "mat", mat)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @classmethod
    def pure(cls, state: StateVector) -> "DensityMatrix":
        return cls(np.outer(state.amplitudes, state.amplitudes.conj()))

    @classmethod
    def vacuum(cls, space: FockSpace) -> "DensityMatrix":
        mat = np.zeros((space.dim, space.dim), dtype=complex)
        mat[0, 0] = 1.0
        return cls(mat)

    @classmethod
    def from_populations(cls, populations) -> "DensityMatrix":
        return cls(np.diag(np.asarray(populations, dtype=complex)))

    def purity(self) -> float:
        return float(np.real(np.trace(self.mat @ self.mat)))


def ladder_operators(space: FockSpace) -> tuple[OperatorMatrix, OperatorMatrix]:
    """Lowering and raising operators on a truncated Fock space.

    a |n> = sqrt(n) |n-1>; the raising operator is its exact conjugate
    transpose.  The only deviation from [a, a^dag] = 1 is the final diagonal
    entry, an unavoidable artifact of the truncation.
    """
    n = np.arange(1, space.dim)
    a = np.diag(np.sqrt(n).astype(complex), k=1)
    return (
        OperatorMatrix(a, label="a"),
        OperatorMatrix(a.conj().T, label="a^dag"),
    )


def number_operator(space: FockSpace) -> OperatorMatrix:
    return OperatorMatrix(np.diag(np.arange(space.dim).astype(complex)),
                          label="n", hermitian=True)


def quadrature_operators(
    space: FockSpace, m: float, omega: float, hbar: float = HBAR
) -> tuple[OperatorMatrix, OperatorMatrix, OperatorMatrix, OperatorMatrix]:
    """Position/momentum operators and their dimensionless versions.

    Parameters
    ----------
    space : FockSpace
    m, omega : float
        Ion mass (kg) and trap angular frequency (rad/s); both must be > 0.
    hbar : float
        Set to 1 together with m = omega = 1 for natural-unit runs.

    Returns
    -------
    (x, p, X, P) :
        x = sqrt(hbar/(2 m omega)) (a + a^dag),
        p = i sqrt(hbar m omega / 2) (a^dag - a),
        X = x / sqrt(2 hbar/(m omega)) = (a + a^dag)/2,
        P = p / sqrt(2 hbar m omega)  = i(a^dag - a)/2,
        with [X, P] = i/2 away from the truncation corner.
    """
    if m <= 0 or omega <= 0:
        raise HilbertError("mass and trap frequency must be positive")
    a, ad = ladder_operators(space)
    plus = a.mat + ad.mat
    minus = 1j * (ad.mat - a.mat)
    x = OperatorMatrix(np.sqrt(hbar / (2 * m * omega)) * plus, label="x", hermitian=True)
    p = OperatorMatrix(np.sqrt(hbar * m * omega / 2) * minus, label="p", hermitian=True)
    X = OperatorMatrix(plus / 2.0, label="X", hermitian=True)
    P = OperatorMatrix(minus / 2.0, label="P", hermitian=True)
    return x, p, X, P


def harmonic_hamiltonian(space: FockSpace, m: float, omega: float,
                         hbar: float = HBAR) -> OperatorMatrix:
    """H0 = p^2/(2m) + (1/2) m omega^2 x^2 = hbar omega (n + 1/2)."""
    if m <= 0 or omega <= 0:
        raise HilbertError("mass and trap frequency must be positive")
    diag = hbar * omega * (np.arange(space.dim) + 0.5)
    return OperatorMatrix(np.diag(diag.astype(complex)), label="H0", hermitian=True)


def tensor(a: OperatorMatrix, b: OperatorMatrix) -> OperatorMatrix:
    """Kronecker product, first factor electronic by convention."""
    return OperatorMatrix(
        np.kron(a.mat, b.mat),
        label=f"{a.label}(x){b.label}",
        hermitian=a.hermitian and b.hermitian,
    )


def expectation(rho: DensityMatrix, op: OperatorMatrix) -> complex:
    """tr(rho op).  Raises on dimension mismatch."""
    if rho.dim != op.dim:
        raise HilbertError(f"dimension mismatch: rho {rho.dim}, op {op.dim}")
    return complex(np.einsum("ij,ji->", rho.mat, op.mat))


def expectation_real(rho: DensityMatrix, op: OperatorMatrix) -> float:
    """Real expectation value of a Hermitian operator.

    The imaginary residual is pure numerical noise for Hermitian operators;
    it is checked rather than silently discarded.
    """
    val = expectation(rho, op)
    scale = max(1.0, abs(val))
    if abs(val.imag) > 1e-9 * scale:
        raise InvariantError(
            f"imaginary residual {val.imag:.3e} too large for Hermitian expectation"
        )
    return val.real
