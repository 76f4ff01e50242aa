"""Stochastic integration of quantum state diffusion trajectories.

One step combines a classical fourth-order Runge-Kutta pass over the
deterministic drift (with the Lindblad expectation values frozen at the step
start) with a single Euler-Maruyama addition of the fluctuation term
evaluated at the step start, followed by renormalization:

    |psi'> = normalize( RK4(drift, dt) + sum_m (L_m - <L_m>) |psi> dxi_m )

The complex noise increments dxi_m are independent, isotropic in the complex
plane, and normalized so that E[|dxi|^2] = dt (real and imaginary parts each
carry variance dt/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compiled import StepOperators, system_for
from .errors import IntegrationError
from .fock import MultiModeState, inner_product, normalize
from .operators import (
    OpenSystemModel,
    OperatorExpr,
    adjoint,
    apply_operator,
)

_MIN_NORM = 1e-12


@dataclass(frozen=True)
class NoiseIncrement:
    """Complex Wiener increments for one step, one entry per Lindblad."""

    increments: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "increments", np.asarray(self.increments, dtype=np.complex128)
        )
        if self.dt <= 0 or not math.isfinite(self.dt):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    scheme: str = "rk4_euler"
    rng_seed: int = 0
    renormalize_every_step: bool = True

    def __post_init__(self) -> None:
        if self.dt <= 0 or not math.isfinite(self.dt):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.scheme != "rk4_euler":
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step health indicators.

    ``dropped_probability`` is the probability pushed past the truncation
    boundary by one application of the Hamiltonian and of each L†L and L at
    the step-start state (plus, for moving-basis steps, any loss from basis
    shifts and capacity shrinks).  ``lindblad_expectations`` are <L_m> at the
    step start.
    """

    pre_normalization_norm: float
    dropped_probability: float
    lindblad_expectations: tuple[complex, ...] = field(default_factory=tuple)


_frame_free_cache: dict[tuple[int, tuple[int, ...]], tuple[OpenSystemModel, StepOperators]] = {}


def _frame_free_ops(model: OpenSystemModel, capacities: tuple[int, ...]) -> StepOperators:
    """Assembled operators without a frame; reusable across a whole fixed-basis run."""
    key = (id(model), capacities)
    hit = _frame_free_cache.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    ops = system_for(model, capacities).assemble()
    if len(_frame_free_cache) > 1024:
        _frame_free_cache.clear()
    _frame_free_cache[key] = (model, ops)
    return ops


def derive_rng(master_seed: int, trajectory_index: int) -> np.random.Generator:
    """Independent, reproducible stream for one trajectory of an ensemble."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(trajectory_index,))
    return np.random.default_rng(seq)


def sample_noise(rng: np.random.Generator, n_lindblads: int, dt: float) -> NoiseIncrement:
    """Draw one set of complex Wiener increments.

    Real and imaginary parts are independent zero-mean Gaussians of variance
    dt/2, so E[dxi] = 0, E[dxi^2] = 0 and E[|dxi|^2] = dt.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    parts = rng.normal(0.0, math.sqrt(dt / 2.0), size=(int(n_lindblads), 2))
    return NoiseIncrement(parts[:, 0] + 1j * parts[:, 1], dt)


def _lindblad_terms(model: OpenSystemModel, state: MultiModeState, t: float):
    """Tree-walk evaluation of L|psi>, <L> and L†L|psi> for every Lindblad."""
    out = []
    for lind in model.lindblads:
        l_psi = apply_operator(lind, state, t)
        expect = inner_product(state, l_psi)
        ldl_psi = apply_operator(adjoint(lind), l_psi, t)
        out.append((l_psi, expect, ldl_psi))
    return out


def drift_vector(model: OpenSystemModel, state: MultiModeState, t: float) -> MultiModeState:
    """Deterministic part of the state increment per unit time:

    (-i/hbar) H |psi> + sum_m ( <L_m†> L_m - L_m†L_m/2 - <L_m†><L_m>/2 ) |psi>

    with the expectation values taken in the input state.
    """
    h_psi = apply_operator(model.hamiltonian, state, t)
    total = (-1j / model.hbar) * h_psi.amplitudes
    psi = state.amplitudes
    for l_psi, expect, ldl_psi in _lindblad_terms(model, state, t):
        expect_dag = expect.conjugate()
        total = total + (
            expect_dag * l_psi.amplitudes
            - 0.5 * ldl_psi.amplitudes
            - 0.5 * (expect_dag * expect) * psi
        )
    return state.with_amplitudes(total)


def fluctuation_vector(
    model: OpenSystemModel, state: MultiModeState, noise: NoiseIncrement, t: float
) -> MultiModeState:
    """Stochastic part of the state increment: sum_m (L_m - <L_m>) |psi> dxi_m."""
    if len(noise.increments) != len(model.lindblads):
        raise ValueError(
            f"{len(noise.increments)} increments for {len(model.lindblads)} Lindblads"
        )
    total = np.zeros_like(state.amplitudes)
    for dxi, (l_psi, expect, _) in zip(noise.increments, _lindblad_terms(model, state, t)):
        total = total + dxi * (l_psi.amplitudes - expect * state.amplitudes)
    return state.with_amplitudes(total)


def _step_kernel(
    ops: StepOperators,
    psi: np.ndarray,
    t: float,
    dt: float,
    noise: NoiseIncrement,
    hbar: float,
    renormalize: bool,
) -> tuple[np.ndarray, float, float, tuple[complex, ...]]:
    """Shared stepping core for fixed-basis and moving-basis integration.

    The drift is integrated as a linear operator with the Lindblad
    expectation values frozen at the step-start state:

        A(s) = -(i/hbar) H(s) + sum_m ( <L_m†>_0 L_m - L_m†L_m/2 )

    plus the scalar -sum_m |<L_m>_0|^2 / 2, which RK4 handles exactly as
    written; the fluctuation is one Euler-Maruyama increment at the start
    state.
    """
    l_mats = [op.matrix(t) for op in ops.lindblads]
    l_psis = [m @ psi for m in l_mats]
    l_expects = [complex(np.vdot(psi, lp)) for lp in l_psis]

    # Frozen-expectation generator: constant part plus scalar.
    fixed = np.zeros_like(ops.hamiltonian.base)
    for l_mat, ldl, expect in zip(l_mats, ops.lindblad_squares, l_expects):
        fixed += expect.conjugate() * l_mat
        fixed -= 0.5 * ldl.matrix(t)
    scalar = -0.5 * sum(abs(e) ** 2 for e in l_expects)

    h = ops.hamiltonian
    minus_i_over_hbar = -1j / hbar
    if h.time_dependent:
        gens = [
            fixed + minus_i_over_hbar * h.matrix(s)
            for s in (t, t + 0.5 * dt, t + dt)
        ]
    else:
        gen = fixed + minus_i_over_hbar * h.base
        gens = [gen, gen, gen]

    def rhs(vec: np.ndarray, gen: np.ndarray) -> np.ndarray:
        return gen @ vec + scalar * vec

    k1 = rhs(psi, gens[0])
    k2 = rhs(psi + (0.5 * dt) * k1, gens[1])
    k3 = rhs(psi + (0.5 * dt) * k2, gens[1])
    k4 = rhs(psi + dt * k3, gens[2])
    new = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    for dxi, l_psi, expect in zip(noise.increments, l_psis, l_expects):
        new = new + dxi * (l_psi - expect * psi)

    prenorm = float(np.linalg.norm(new))
    if not np.isfinite(prenorm):
        raise IntegrationError("non-finite amplitudes after step; dt is likely too large")
    if prenorm <= _MIN_NORM:
        raise IntegrationError("state norm collapsed to zero during step")
    if renormalize:
        new = new / prenorm

    dropped = ops.hamiltonian.drop(psi, t)
    for op in ops.lindblads:
        dropped += op.drop(psi, t)
    for op in ops.lindblad_squares:
        dropped += op.drop(psi, t)
    return new, prenorm, dropped, tuple(l_expects)


def step(
    model: OpenSystemModel,
    state: MultiModeState,
    t: float,
    config: IntegratorConfig,
    rng: np.random.Generator,
    noise: NoiseIncrement | None = None,
) -> tuple[MultiModeState, StepDiagnostics]:
    """Advance one trajectory by dt in a fixed truncated basis.

    Passing ``noise`` bypasses sampling (used for replaying or transforming a
    stored noise stream); otherwise one set of increments is drawn from
    ``rng``, which advances it deterministically.
    """
    if noise is None:
        noise = sample_noise(rng, len(model.lindblads), config.dt)
    elif len(noise.increments) != len(model.lindblads):
        raise ValueError("noise increment count does not match the Lindblad count")
    ops = _frame_free_ops(model, state.capacities)
    new_amps, prenorm, dropped, l_expects = _step_kernel(
        ops, state.amplitudes, t, config.dt, noise, model.hbar,
        config.renormalize_every_step,
    )
    return state.with_amplitudes(new_amps), StepDiagnostics(prenorm, dropped, l_expects)


def evolve(
    model: OpenSystemModel,
    state: MultiModeState,
    t0: float,
    n_steps: int,
    config: IntegratorConfig,
    rng: np.random.Generator,
    noise_sequence: list[NoiseIncrement] | None = None,
) -> MultiModeState:
    """Run ``n_steps`` fixed-basis steps; convenience wrapper for tests and
    validation runs."""
    t = t0
    for i in range(n_steps):
        noise = noise_sequence[i] if noise_sequence is not None else None
        state, _ = step(model, state, t, config, rng, noise=noise)
        t = t0 + (i + 1) * config.dt
    return state
