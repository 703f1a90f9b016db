"""Single-realization (conditioned) evolution under trap-center noise and
ensemble averaging.

One realization of the white-noise force evolves the ion unitarily; the
conditioned density matrix obeys the Ito equation

    d rho = -(i/hbar)[H0, rho] dt - (i/hbar) sqrt(gamma) [x, rho] dW
            - (gamma / 2 hbar^2) [x, [x, rho]] dt.

Each step applies the exactly unitary split factorization

    U_k = e^{-i H0 dt / 2 hbar} e^{-i sqrt(gamma) x dW_k / hbar} e^{-i H0 dt / 2 hbar},

whose expansion reproduces the Ito increment above term by term (the realized
dW_k^2 plays the role of dt in the double-commutator term, its expectation).
Weak order one, like plain Euler-Maruyama on the density-matrix form, but
trace, purity and positivity are preserved exactly per realization, matching
the fact that conditioned evolution is unitary.  The noise factor is applied
through the cached eigenbasis of x, so a step costs a few dense
matrix-vector products.

Reproducibility contract: trajectory k draws its increments from a
counter-based stream keyed (master_seed, k), reductions run in fixed index
order with a fixed chunk size, and results are independent of how the work is
batched.  Pure initial states evolve as batched state vectors; mixed states
as batched density matrices conjugated by the same step unitaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .constants import TRUNCATION_POPULATION_TOL
from .hilbert import DensityMatrix, FockSpace, HilbertError, InvariantError
from .noise import ParameterError, TrapParams, wiener_stream

_CHUNK = 256  # fixed: part of the determinism contract


class StepError(RuntimeError):
    """A conditioned step broke an invariant; message carries diagnostics."""


@dataclass(frozen=True)
class TrajectoryConfig:
    """Ensemble run settings.

    dt must resolve the trap period (dt <= 0.005 trap periods, checked at run
    time against the trap frequency).
    """

    n_traj: int
    dt: float
    t_final: float
    master_seed: int
    scheme: str = "euler_maruyama"
    record_every: int = 1

    def __post_init__(self):
        if self.n_traj < 1:
            raise ParameterError("n_traj must be >= 1")
        if self.dt <= 0 or self.t_final <= 0:
            raise ParameterError("dt and t_final must be positive")
        if self.scheme != "euler_maruyama":
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if self.record_every < 1:
            raise ParameterError("record_every must be >= 1")

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Index-ordered ensemble averages with per-time statistical errors."""

    times: np.ndarray
    mean_energy: np.ndarray
    stderr_energy: np.ndarray
    mean_nbar: np.ndarray
    stderr_nbar: np.ndarray
    n_trajectories: int
    n_failures: int
    final_rho: DensityMatrix | None
    final_rho_stderr: np.ndarray | None
    top_level_population: np.ndarray

    def __post_init__(self):
        if np.any(self.stderr_energy < 0) or np.any(self.stderr_nbar < 0):
            raise InvariantError("stderr must be non-negative")


@lru_cache(maxsize=32)
def _step_basis(cutoff: int, m: float, omega: float, hbar: float):
    """Eigenbasis of x and the diagonal of H0, shared by all steps."""
    from .heating import _cached_ops

    _, _, x, H0, n_op, _ = _cached_ops(cutoff, m, omega, hbar)
    evals, evecs = np.linalg.eigh(x)
    return evals, evecs, np.diag(H0).real.copy(), H0, n_op


def step_unitary(dW: float, dt: float, params: TrapParams, space: FockSpace) -> np.ndarray:
    """The split-step conditioning unitary for one increment."""
    evals, evecs, h_diag, _, _ = _step_basis(space.cutoff, params.m, params.omega,
                                             params.hbar)
    half = np.exp(-0.5j * h_diag * dt / params.hbar)
    kick_phases = np.exp(-1j * math.sqrt(params.gamma) * evals * dW / params.hbar)
    kick = (evecs * kick_phases) @ evecs.conj().T
    return half[:, None] * kick * half[None, :]


def conditioned_step(
    rho: DensityMatrix, dW: float, dt: float, params: TrapParams, space: FockSpace
) -> DensityMatrix:
    """One conditioned step; the returned state satisfies all invariants.

    The step unitary is exact, so the trace change before the (then trivial)
    renormalization is pure roundoff; anything above 1e-10 raises StepError
    with diagnostics, as does any other invariant breach of the result.
    """
    if not math.isfinite(dW):
        raise ParameterError("dW must be finite")
    if rho.dim != space.dim:
        raise HilbertError("state dimension does not match the Fock space")
    U = step_unitary(dW, dt, params, space)
    new = U @ rho.mat @ U.conj().T
    drift = abs(np.trace(new).real - 1.0)
    if drift > 1e-10:
        raise StepError(
            f"pre-renormalization trace drift {drift:.3e} (dW={dW:.3e}, dt={dt:.3e})")
    new = new / np.trace(new).real
    new = 0.5 * (new + new.conj().T)
    try:
        return DensityMatrix(new)
    except InvariantError as exc:
        raise StepError(f"invariant breach after step: {exc}") from exc


def _pure_initial(rho0: DensityMatrix) -> np.ndarray | None:
    """Dominant eigenvector if rho0 is numerically pure, else None."""
    if rho0.purity() < 1.0 - 1e-12:
        return None
    vals, vecs = np.linalg.eigh(rho0.mat)
    return vecs[:, -1].astype(complex)


def run_ensemble(
    config: TrajectoryConfig,
    rho0: DensityMatrix,
    params: TrapParams,
    space: FockSpace,
    store_final_rho: bool = True,
    force_density_path: bool = False,
) -> EnsembleResult:
    """Average `config.n_traj` independent conditioned evolutions.

    Deterministic given `config.master_seed` regardless of batching.  Failed
    trajectories (non-finite states) are excluded from the averages and
    counted.  `force_density_path` exists so tests can compare the batched
    state-vector and density-matrix code paths on the same input.
    """
    if config.dt > 0.005 * (2 * math.pi / params.omega) + 1e-15:
        raise ParameterError("dt too coarse: must be <= 0.005 trap periods")
    if rho0.dim != space.dim:
        raise HilbertError("initial state dimension does not match the Fock space")

    evals, evecs, h_diag, H0, n_op = _step_basis(space.cutoff, params.m,
                                                 params.omega, params.hbar)
    evecs_dag = evecs.conj().T
    half = np.exp(-0.5j * h_diag * config.dt / params.hbar)
    kick_scale = math.sqrt(params.gamma) / params.hbar

    steps = config.steps
    rec_idx = [k for k in range(1, steps + 1)
               if k % config.record_every == 0 or k == steps]
    rec_col = {k: i + 1 for i, k in enumerate(rec_idx)}
    n_rec = len(rec_idx) + 1
    times = np.array([0.0] + [k * config.dt for k in rec_idx])

    d = space.dim
    psi0 = None if force_density_path else _pure_initial(rho0)
    sum_e = np.zeros(n_rec)
    sum_e2 = np.zeros(n_rec)
    sum_n = np.zeros(n_rec)
    sum_n2 = np.zeros(n_rec)
    sum_top = np.zeros(n_rec)
    rho_sum = np.zeros((d, d), dtype=complex) if store_final_rho else None
    rho_sq_sum = np.zeros((d, d)) if store_final_rho else None
    n_failures = 0
    n_ok_total = 0
    sqrt_dt = math.sqrt(config.dt)

    for start in range(0, config.n_traj, _CHUNK):
        stop = min(start + _CHUNK, config.n_traj)
        b = stop - start
        inc = np.empty((b, steps))
        for j in range(b):
            gen = wiener_stream(config.master_seed, start + j)
            inc[j] = gen.standard_normal(steps) * sqrt_dt

        ok = np.ones(b, dtype=bool)
        e_rec = np.zeros((b, n_rec))
        n_rec_arr = np.zeros((b, n_rec))
        top_rec = np.zeros((b, n_rec))

        if psi0 is not None:
            psis = np.tile(psi0[:, None], (1, b))  # (d, b)

            def observe(col, psis_):
                hp = psis_ * h_diag[:, None]
                e_rec[:, col] = np.einsum("ib,ib->b", psis_.conj(), hp).real
                n_rec_arr[:, col] = np.einsum("ib,ib->b", psis_.conj(),
                                              n_op @ psis_).real
                top_rec[:, col] = np.abs(psis_[-1]) ** 2 + np.abs(psis_[-2]) ** 2

            observe(0, psis)
            for k in range(steps):
                psis = psis * half[:, None]
                tmp = evecs_dag @ psis
                tmp *= np.exp(-1j * kick_scale * np.outer(evals, inc[:, k]))
                psis = evecs @ tmp
                psis = psis * half[:, None]
                if (k + 1) in rec_col:
                    bad = ~np.isfinite(np.linalg.norm(psis, axis=0))
                    if bad.any():
                        ok &= ~bad
                    observe(rec_col[k + 1], psis)
            if store_final_rho:
                w = ok.astype(float)
                rho_sum += np.einsum("ib,jb,b->ij", psis, psis.conj(), w)
                rho_sq_sum += np.einsum("ib,jb,b->ij", np.abs(psis) ** 2,
                                        np.abs(psis) ** 2, w)
        else:
            rhos = np.tile(rho0.mat[None, :, :], (b, 1, 1))  # (b, d, d)

            def observe(col, rhos_):
                e_rec[:, col] = np.einsum("bii,i->b", rhos_, h_diag).real
                n_rec_arr[:, col] = np.einsum("bij,ji->b", rhos_, n_op).real
                top_rec[:, col] = rhos_[:, -1, -1].real + rhos_[:, -2, -2].real

            observe(0, rhos)
            for k in range(steps):
                phases = np.exp(-1j * kick_scale * inc[:, k, None] * evals[None, :])
                U = (evecs[None, :, :] * phases[:, None, :]) @ evecs_dag
                U = half[None, :, None] * U * half[None, None, :]
                rhos = U @ rhos @ U.conj().transpose(0, 2, 1)
                if (k + 1) in rec_col:
                    tr = np.einsum("bii->b", rhos).real
                    bad = ~np.isfinite(tr) | (np.abs(tr - 1.0) > 1e-8)
                    if bad.any():
                        ok &= ~bad
                    observe(rec_col[k + 1], rhos)
            if store_final_rho:
                w = ok.astype(float)
                rho_sum += np.einsum("bij,b->ij", rhos, w)
                rho_sq_sum += np.einsum("bij,b->ij", np.abs(rhos) ** 2, w)

        wcol = ok.astype(float)[:, None]
        sum_e += (e_rec * wcol).sum(axis=0)
        sum_e2 += (e_rec ** 2 * wcol).sum(axis=0)
        sum_n += (n_rec_arr * wcol).sum(axis=0)
        sum_n2 += (n_rec_arr ** 2 * wcol).sum(axis=0)
        sum_top += (top_rec * wcol).sum(axis=0)
        n_ok_total += int(ok.sum())
        n_failures += int(b - ok.sum())

    if n_ok_total == 0:
        raise StepError("all trajectories failed")

    n = n_ok_total
    mean_e = sum_e / n
    mean_n = sum_n / n
    if n > 1:
        var_e = np.maximum(sum_e2 / n - mean_e ** 2, 0.0) * n / (n - 1)
        var_n = np.maximum(sum_n2 / n - mean_n ** 2, 0.0) * n / (n - 1)
        se_e = np.sqrt(var_e / n)
        se_n = np.sqrt(var_n / n)
    else:
        se_e = np.zeros_like(mean_e)
        se_n = np.zeros_like(mean_n)

    final_rho = None
    final_rho_stderr = None
    if store_final_rho:
        avg = rho_sum / n
        avg = 0.5 * (avg + avg.conj().T)
        final_rho = DensityMatrix(avg)
        if n > 1:
            var = np.maximum(rho_sq_sum / n - np.abs(avg) ** 2, 0.0) * n / (n - 1)
            final_rho_stderr = np.sqrt(var / n)
        else:
            final_rho_stderr = np.zeros((d, d))

    return EnsembleResult(
        times=times,
        mean_energy=mean_e,
        stderr_energy=se_e,
        mean_nbar=mean_n,
        stderr_nbar=se_n,
        n_trajectories=n,
        n_failures=n_failures,
        final_rho=final_rho,
        final_rho_stderr=final_rho_stderr,
        top_level_population=sum_top / n,
    )


def truncation_breach_time(result: EnsembleResult) -> float | None:
    """First recorded time the ensemble-mean top-two-level population exceeds
    the package threshold."""
    over = result.top_level_population > TRUNCATION_POPULATION_TOL
    if not over.any():
        return None
    return float(result.times[np.argmax(over)])
