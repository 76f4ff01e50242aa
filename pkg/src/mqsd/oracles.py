"""Independent reference computations used to validate the trajectory engine.

Everything here works on dense matrices built directly from the expression
trees, deliberately small-N: the density-matrix route costs dim^2 storage and
exists only to check the stochastic pure-state route against the underlying
deterministic evolution

    drho/dt = -(i/hbar)[H, rho] + sum_m ( L_m rho L_m† - {L_m†L_m, rho}/2 ).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import ModeSpec, MultiModeState
from .operators import (
    OpenSystemModel,
    OperatorExpr,
    expectation_and_variance,
    is_time_dependent,
    to_matrix,
)

ORACLE_DIMENSION_LIMIT = 256


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Mixed state over the same row-major product basis as MultiModeState."""

    modes: tuple[ModeSpec, ...]
    elements: np.ndarray

    def __post_init__(self) -> None:
        dim = math.prod(spec.capacity for spec in self.modes)
        elements = np.asarray(self.elements, dtype=np.complex128)
        if elements.shape != (dim, dim):
            raise ValueError(f"elements must be {dim}x{dim}, got {elements.shape}")
        object.__setattr__(self, "elements", elements)

    @property
    def capacities(self) -> tuple[int, ...]:
        return tuple(spec.capacity for spec in self.modes)

    def trace(self) -> complex:
        return complex(np.trace(self.elements))

    def purity(self) -> float:
        return float(np.real(np.trace(self.elements @ self.elements)))


def pure_density(state: MultiModeState) -> DensityMatrix:
    return DensityMatrix(state.modes, np.outer(state.amplitudes, state.amplitudes.conj()))


def check_density_matrix(
    rho: DensityMatrix,
    hermiticity_tol: float = 1e-10,
    trace_tol: float = 1e-10,
    eigenvalue_floor: float = -1e-8,
) -> None:
    """Raise if the matrix is not Hermitian, trace-one and positive within
    the given tolerances."""
    m = rho.elements
    if float(np.max(np.abs(m - m.conj().T))) > hermiticity_tol:
        raise ValueError("density matrix is not Hermitian within tolerance")
    if abs(rho.trace() - 1.0) > trace_tol:
        raise ValueError("density matrix trace differs from 1 beyond tolerance")
    eigenvalues = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if float(eigenvalues.min()) < eigenvalue_floor:
        raise ValueError("density matrix has a significantly negative eigenvalue")


def master_equation_evolve(
    model: OpenSystemModel,
    rho0: DensityMatrix,
    t_final: float,
    dt: float,
    t0: float = 0.0,
    dimension_limit: int = ORACLE_DIMENSION_LIMIT,
) -> DensityMatrix:
    """RK4 integration of the Lindblad-form master equation from t0 to
    t0 + t_final.

    The number of steps is rounded so the final time is hit exactly.  Raises
    when the total dimension exceeds ``dimension_limit``; this reference
    route is deliberately restricted to small problems.
    """
    dim = math.prod(rho0.capacities)
    if dim > dimension_limit:
        raise ValueError(f"dimension {dim} exceeds the oracle limit {dimension_limit}")
    if t_final < 0 or dt <= 0:
        raise ValueError("t_final must be >= 0 and dt > 0")
    if t_final == 0:
        return rho0
    for lind in model.lindblads:
        if is_time_dependent(lind):
            raise NotImplementedError("time-dependent Lindblad operators are not supported")

    capacities = rho0.capacities
    l_mats = [to_matrix(l, capacities) for l in model.lindblads]
    l_dags = [m.conj().T for m in l_mats]
    ldl_mats = [d @ m for d, m in zip(l_dags, l_mats)]
    h_static = None
    if not is_time_dependent(model.hamiltonian):
        h_static = to_matrix(model.hamiltonian, capacities)

    def h_at(t: float) -> np.ndarray:
        if h_static is not None:
            return h_static
        return to_matrix(model.hamiltonian, capacities, t)

    def rhs(rho: np.ndarray, t: float) -> np.ndarray:
        h = h_at(t)
        out = (-1j / model.hbar) * (h @ rho - rho @ h)
        for l, ld, ldl in zip(l_mats, l_dags, ldl_mats):
            out += l @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)
        return out

    n_steps = max(1, int(math.ceil(t_final / dt - 1e-12)))
    h_step = t_final / n_steps
    rho = rho0.elements.copy()
    t = t0
    for _ in range(n_steps):
        k1 = rhs(rho, t)
        k2 = rhs(rho + 0.5 * h_step * k1, t + 0.5 * h_step)
        k3 = rhs(rho + 0.5 * h_step * k2, t + 0.5 * h_step)
        k4 = rhs(rho + h_step * k3, t + h_step)
        rho = rho + (h_step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h_step
    return DensityMatrix(rho0.modes, rho)


def ensemble_density(states: list[MultiModeState]) -> DensityMatrix:
    """Mean of the projectors onto the given pure states."""
    if not states:
        raise ValueError("cannot average an empty ensemble")
    modes = states[0].modes
    for state in states[1:]:
        if state.modes != modes:
            raise ValueError("ensemble members live on different mode structures")
    stacked = np.stack([s.amplitudes for s in states])
    rho = (stacked.T @ stacked.conj()) / len(states)
    return DensityMatrix(modes, rho)


def density_expectation(rho: DensityMatrix, op: OperatorExpr, t: float = 0.0) -> complex:
    """Tr(rho G)."""
    matrix = to_matrix(op, rho.capacities, t)
    return complex(np.trace(rho.elements @ matrix))


def localization(states: list[MultiModeState], op: OperatorExpr, t: float = 0.0) -> float:
    """Inverse of the ensemble-mean variance of a self-adjoint operator.

    Raises when the mean variance vanishes (every member an eigenstate);
    there is no +infinity convention."""
    if not states:
        raise ValueError("cannot compute localization of an empty ensemble")
    variances = [expectation_and_variance(s, op, t).variance for s in states]
    mean_variance = float(np.mean(variances))
    if mean_variance < 1e-14:
        raise ValueError("ensemble variance vanishes; localization is undefined")
    return 1.0 / mean_variance
