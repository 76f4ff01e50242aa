"""Truncated multimode bosonic Fock states and elementary operator actions.

Amplitudes are stored as one flat complex128 array, row-major over occupation
numbers with mode 0 slowest.  That layout is fixed so that ensemble restarts
and file dumps are bit-stable.  All operations are pure: inputs are never
mutated, new values are returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError

NORM_TOL = 1e-12


@dataclass(frozen=True)
class ModeSpec:
    """One bosonic mode truncated to ``capacity`` levels |0>..|capacity-1>."""

    mode_index: int
    capacity: int

    def __post_init__(self) -> None:
        if self.mode_index < 0:
            raise ValueError(f"mode_index must be >= 0, got {self.mode_index}")
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")


def make_modes(*capacities: int) -> tuple[ModeSpec, ...]:
    """Mode specs with contiguous indices for the given per-mode capacities."""
    return tuple(ModeSpec(i, c) for i, c in enumerate(capacities))


@dataclass(frozen=True)
class MultiModeState:
    """Pure state over the product of truncated Fock spaces.

    ``amplitudes[i]`` is the coefficient of the occupation tuple obtained by
    unraveling ``i`` row-major over the mode capacities (mode 0 slowest).
    """

    modes: tuple[ModeSpec, ...]
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        if not self.modes:
            raise ValueError("at least one mode is required")
        for i, spec in enumerate(self.modes):
            if spec.mode_index != i:
                raise ValueError("mode indices must be contiguous from 0")
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        expected = math.prod(self.capacities)
        if amps.shape != (expected,):
            raise ValueError(
                f"amplitude array has shape {amps.shape}, expected ({expected},)"
            )
        object.__setattr__(self, "amplitudes", amps)

    @property
    def capacities(self) -> tuple[int, ...]:
        return tuple(spec.capacity for spec in self.modes)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def reshaped(self) -> np.ndarray:
        """View of the amplitudes with one axis per mode."""
        return self.amplitudes.reshape(self.capacities)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def with_amplitudes(self, amplitudes: np.ndarray) -> "MultiModeState":
        return MultiModeState(self.modes, amplitudes)


@dataclass(frozen=True)
class ObservableValue:
    """Expectation and variance of an operator on one state.

    The variance is meaningful only for self-adjoint operators.
    """

    expectation: complex
    variance: float


def fock_state(modes: tuple[ModeSpec, ...], occupations: tuple[int, ...]) -> MultiModeState:
    """Basis state |n_0, n_1, ...> for the given occupation numbers."""
    if len(occupations) != len(modes):
        raise ValueError("one occupation number per mode is required")
    for n, spec in zip(occupations, modes):
        if not 0 <= n < spec.capacity:
            raise ValueError(f"occupation {n} outside [0, {spec.capacity})")
    amps = np.zeros(math.prod(spec.capacity for spec in modes), dtype=np.complex128)
    flat = 0
    for n, spec in zip(occupations, modes):
        flat = flat * spec.capacity + n
    amps[flat] = 1.0
    return MultiModeState(modes, amps)


def vacuum_state(modes: tuple[ModeSpec, ...]) -> MultiModeState:
    return fock_state(modes, (0,) * len(modes))


def random_state(modes: tuple[ModeSpec, ...], rng: np.random.Generator) -> MultiModeState:
    """Haar-ish random normalized state; used by property tests."""
    dim = math.prod(spec.capacity for spec in modes)
    raw = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return MultiModeState(modes, raw / np.linalg.norm(raw))


def _check_mode(state: MultiModeState, mode: int) -> None:
    if not 0 <= mode < state.n_modes:
        raise ValueError(f"mode {mode} out of range for {state.n_modes} modes")


def _axis_weights(capacity: int, ndim: int, axis: int) -> np.ndarray:
    """sqrt(1..capacity-1) shaped to broadcast along ``axis``."""
    w = np.sqrt(np.arange(1.0, capacity))
    shape = [1] * ndim
    shape[axis] = capacity - 1
    return w.reshape(shape)


def apply_annihilation(state: MultiModeState, mode: int) -> MultiModeState:
    """Lowering operator on one mode: |n> -> sqrt(n) |n-1>; unnormalized."""
    _check_mode(state, mode)
    shaped = state.reshaped()
    cap = state.capacities[mode]
    out = np.zeros_like(shaped)
    if cap > 1:
        src = tuple(slice(1, None) if k == mode else slice(None) for k in range(shaped.ndim))
        dst = tuple(slice(0, cap - 1) if k == mode else slice(None) for k in range(shaped.ndim))
        out[dst] = _axis_weights(cap, shaped.ndim, mode) * shaped[src]
    return state.with_amplitudes(out.reshape(-1))


def apply_creation(state: MultiModeState, mode: int) -> tuple[MultiModeState, float]:
    """Raising operator on one mode: |n> -> sqrt(n+1) |n+1>; unnormalized.

    The amplitude sitting at the top retained level maps out of the truncated
    space and is dropped; the probability carried by that input amplitude is
    returned as the second element so callers can monitor truncation pressure.
    """
    _check_mode(state, mode)
    shaped = state.reshaped()
    cap = state.capacities[mode]
    out = np.zeros_like(shaped)
    if cap > 1:
        src = tuple(slice(0, cap - 1) if k == mode else slice(None) for k in range(shaped.ndim))
        dst = tuple(slice(1, None) if k == mode else slice(None) for k in range(shaped.ndim))
        out[dst] = _axis_weights(cap, shaped.ndim, mode) * shaped[src]
    top = tuple(slice(cap - 1, cap) if k == mode else slice(None) for k in range(shaped.ndim))
    dropped = float(np.sum(np.abs(shaped[top]) ** 2))
    return state.with_amplitudes(out.reshape(-1)), dropped


def apply_quadrature(state: MultiModeState, mode: int, which: str) -> MultiModeState:
    """Q = (a + a†)/sqrt(2) or P = -i (a - a†)/sqrt(2) on one mode."""
    _check_mode(state, mode)
    lowered = apply_annihilation(state, mode).amplitudes
    raised = apply_creation(state, mode)[0].amplitudes
    if which == "Q":
        amps = (lowered + raised) / math.sqrt(2.0)
    elif which == "P":
        amps = -1j * (lowered - raised) / math.sqrt(2.0)
    else:
        raise ValueError(f"quadrature must be 'Q' or 'P', got {which!r}")
    return state.with_amplitudes(amps)


def inner_product(bra: MultiModeState, ket: MultiModeState) -> complex:
    """<bra|ket> with conjugation on the bra."""
    if bra.modes != ket.modes:
        raise ValueError("states live on different mode structures")
    return complex(np.vdot(bra.amplitudes, ket.amplitudes))


def normalize(state: MultiModeState) -> tuple[MultiModeState, float]:
    """Unit-norm copy of the state plus its pre-normalization norm."""
    norm = state.norm()
    if norm <= NORM_TOL:
        raise IntegrationError("cannot normalize a zero-norm state")
    return state.with_amplitudes(state.amplitudes / norm), norm


def mode_occupation_probabilities(state: MultiModeState, mode: int) -> np.ndarray:
    """Marginal occupation-number distribution of one mode."""
    _check_mode(state, mode)
    probs = np.abs(state.reshaped()) ** 2
    axes = tuple(k for k in range(state.n_modes) if k != mode)
    return probs.sum(axis=axes) if axes else probs
