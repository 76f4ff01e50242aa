"""Moving-basis representation: a per-mode classical phase-space origin plus
a small local Fock-space state centered on it.

The global state factors as

    |psi_global> = exp(i * phase) * D(q_0, p_0) ... D(q_k, p_k) |psi_local>,

where D(q, p) = exp[(i/hbar)(p Q - q P)] is the phase-space displacement of
one mode and the scalar phase bookkeeping keeps the relation to the fixed
basis unambiguous: displacing an already-displaced basis produces the extra
factor exp(i (q p' - p q') / 2), which is moved out of the local amplitudes
into ``accumulated_phase``.

A moving-basis step integrates the diffusion equation on the local state
with the model's ladder operators rewritten relative to the current origin
(a -> a + alpha, alpha = (q + i p)/sqrt(2)), then re-centers the origin on
the wave packet centroid and adapts the per-mode capacity so that the top
``pad_size`` levels never hold more than probability ``epsilon``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .compiled import operator_template, system_for
from .errors import CapacityError, IntegrationError
from .fock import (
    MultiModeState,
    apply_annihilation,
    make_modes,
    normalize,
    vacuum_state,
)
from .operators import OpenSystemModel
from .qsd import IntegratorConfig, NoiseIncrement, StepDiagnostics, _step_kernel, sample_noise

DEFAULT_RECENTER_TOLERANCE = 1e-6
_FALLBACK_EPSILON = 1e-9
_FALLBACK_PAD = 8
_FALLBACK_MAX_CAPACITY = 4096


@dataclass(frozen=True, eq=False)
class MovingFrame:
    """Per-mode phase-space origin (q, p) plus the scalar phase bookkeeping."""

    origins: np.ndarray
    accumulated_phase: float = 0.0

    def __post_init__(self) -> None:
        origins = np.atleast_2d(np.asarray(self.origins, dtype=np.float64))
        if origins.ndim != 2 or origins.shape[1] != 2:
            raise ValueError("origins must have shape (n_modes, 2)")
        if not np.all(np.isfinite(origins)) or not math.isfinite(self.accumulated_phase):
            raise ValueError("frame parameters must be finite")
        object.__setattr__(self, "origins", origins)

    @property
    def n_modes(self) -> int:
        return self.origins.shape[0]

    def alphas(self) -> np.ndarray:
        """Complex displacement per mode: (q + i p)/sqrt(2)."""
        return (self.origins[:, 0] + 1j * self.origins[:, 1]) / math.sqrt(2.0)


@dataclass(frozen=True)
class TruncationPolicy:
    """Adaptive basis-size control.

    The top ``pad_size`` levels of every mode must hold at most probability
    ``epsilon``; capacity grows when they do not.  Shrinking requires the top
    2*pad_size levels to fit under ``epsilon`` (hysteresis against
    grow/shrink oscillation).
    """

    epsilon: float
    pad_size: int
    min_capacity: int = 2
    max_capacity: int = 512
    check_interval: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.pad_size < 1:
            raise ValueError(f"pad_size must be >= 1, got {self.pad_size}")
        if self.min_capacity < 2:
            raise ValueError(f"min_capacity must be >= 2, got {self.min_capacity}")
        if self.min_capacity > self.max_capacity:
            raise ValueError("min_capacity must not exceed max_capacity")
        if self.check_interval < 1:
            raise ValueError(f"check_interval must be >= 1, got {self.check_interval}")


@dataclass(frozen=True, eq=False)
class MqsdState:
    """Moving frame plus the normalized local state relative to it."""

    frame: MovingFrame
    local_state: MultiModeState
    steps_since_adjust: int = 0

    def __post_init__(self) -> None:
        if self.frame.n_modes != self.local_state.n_modes:
            raise ValueError("frame and local state disagree on the mode count")

    @property
    def capacities(self) -> tuple[int, ...]:
        return self.local_state.capacities

    @property
    def n_modes(self) -> int:
        return self.local_state.n_modes


def initial_mqsd_state(
    capacities: tuple[int, ...], origins: np.ndarray | None = None
) -> MqsdState:
    """Local vacuum at the given (default zero) phase-space origins."""
    modes = make_modes(*capacities)
    if origins is None:
        origins = np.zeros((len(capacities), 2))
    return MqsdState(MovingFrame(origins), vacuum_state(modes))


def displacement_matrix(alpha: complex, capacity: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrix elements <m|D(alpha)|n> on the truncated space, by the exact
    column recurrence D|n+1> = (a† - conj(alpha)) D|n> / sqrt(n+1).

    Every returned element equals the untruncated matrix element; truncation
    only makes the matrix non-unitary.  The second return value holds the
    per-column norm deficits 1 - ||column||^2.
    """
    if capacity < 1:
        raise ValueError(f"capacity must be >= 1, got {capacity}")
    alpha = complex(alpha)
    matrix = np.zeros((capacity, capacity), dtype=np.complex128)
    levels = np.arange(capacity, dtype=np.float64)
    sqrt_levels = np.sqrt(levels)
    # column 0: displaced vacuum, alpha^m e^{-|alpha|^2/2} / sqrt(m!)
    column = np.empty(capacity, dtype=np.complex128)
    column[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for m in range(1, capacity):
        column[m] = column[m - 1] * alpha / sqrt_levels[m]
    matrix[:, 0] = column
    alpha_conj = alpha.conjugate()
    for n in range(capacity - 1):
        raised = np.zeros(capacity, dtype=np.complex128)
        raised[1:] = sqrt_levels[1:] * column[:-1]
        column = (raised - alpha_conj * column) / math.sqrt(n + 1.0)
        matrix[:, n + 1] = column
    deficits = 1.0 - np.sum(np.abs(matrix) ** 2, axis=0)
    return matrix, deficits


def displacement_matrix_qp(q: float, p: float, capacity: int) -> np.ndarray:
    """D(q, p) on the truncated space (phase-space parameterization)."""
    return displacement_matrix((q + 1j * p) / math.sqrt(2.0), capacity)[0]


def compose_displacements(
    q1: float, p1: float, q2: float, p2: float
) -> tuple[float, float, float]:
    """Origin and extra phase from applying D(q2, p2) on top of D(q1, p1):
    the displaced basis state picks up exp(i (q1 p2 - p1 q2) / 2), which the
    caller removes into the frame's accumulated phase."""
    return q1 + q2, p1 + p2, 0.5 * (q1 * p2 - p1 * q2)


def _axis_split(shape: tuple[int, ...], mode: int) -> tuple[int, int, int]:
    pre = math.prod(shape[:mode])
    post = math.prod(shape[mode + 1:])
    return pre, shape[mode], post


def _apply_mode_matrix(shaped: np.ndarray, mode: int, matrix: np.ndarray) -> np.ndarray:
    pre, cap, post = _axis_split(shaped.shape, mode)
    arr = np.ascontiguousarray(shaped).reshape(pre, cap, post)
    out = np.einsum("mn,anb->amb", matrix, arr)
    new_shape = shaped.shape[:mode] + (matrix.shape[0],) + shaped.shape[mode + 1:]
    return out.reshape(new_shape)


@lru_cache(maxsize=256)
def _sqrt_levels(capacity: int) -> np.ndarray:
    return np.sqrt(np.arange(1.0, capacity))


def _mode_a_expectations(shaped: np.ndarray) -> np.ndarray:
    """<a_k> for every mode of a normalized amplitude array."""
    out = np.empty(shaped.ndim, dtype=np.complex128)
    shape = shaped.shape
    flat = np.ascontiguousarray(shaped)
    for k in range(shaped.ndim):
        pre, cap, post = _axis_split(shape, k)
        if cap < 2:
            out[k] = 0.0
            continue
        arr = flat.reshape(pre, cap, post)
        overlaps = np.einsum("anb,anb->n", arr[:, :-1, :].conj(), arr[:, 1:, :])
        out[k] = np.dot(_sqrt_levels(cap), overlaps)
    return out


def centroid(state: MultiModeState) -> np.ndarray:
    """Per-mode (<Q>, <P>), computed from <a> = (<Q> + i <P>)/sqrt(2)."""
    a_expect = _mode_a_expectations(state.reshaped())
    return math.sqrt(2.0) * np.column_stack([a_expect.real, a_expect.imag])


def recenter(
    state: MqsdState,
    tolerance: float = DEFAULT_RECENTER_TOLERANCE,
    policy: TruncationPolicy | None = None,
) -> MqsdState:
    """Shift the basis so the local centroid returns to the origin.

    Measures (dq, dp) = (<Q>, <P>) in the local state, applies D(-dq, -dp),
    moves the origin to (q + dq, p + dp) and absorbs the composition phase
    into the frame bookkeeping, iterating up to three times until the
    residual centroid is within ``tolerance``.  If the shift would push more
    than the cutoff probability past the current capacity, the capacity is
    grown first; exceeding the policy's maximum capacity raises."""
    new_state, _ = _recenter_with_loss(state, tolerance, policy)
    return new_state


def _recenter_with_loss(
    state: MqsdState, tolerance: float, policy: TruncationPolicy | None
) -> tuple[MqsdState, float]:
    epsilon = policy.epsilon if policy is not None else _FALLBACK_EPSILON
    pad = policy.pad_size if policy is not None else _FALLBACK_PAD
    max_capacity = policy.max_capacity if policy is not None else _FALLBACK_MAX_CAPACITY

    capacities = list(state.local_state.capacities)
    shaped = state.local_state.reshaped()
    origins = state.frame.origins.copy()
    phase = state.frame.accumulated_phase
    total_loss = 0.0
    moved = False
    converged = False
    root2 = math.sqrt(2.0)

    for round_index in range(6):
        for _ in range(3):
            a_expect = _mode_a_expectations(shaped)
            if np.max(np.abs(a_expect)) * root2 <= tolerance:
                converged = True
                break
            for k in range(len(capacities)):
                if abs(a_expect[k]) * root2 <= tolerance:
                    continue
                dq = root2 * a_expect[k].real
                dp = root2 * a_expect[k].imag
                delta = (dq + 1j * dp) / root2
                while True:
                    matrix, _ = displacement_matrix(-delta, capacities[k])
                    candidate = _apply_mode_matrix(shaped, k, matrix)
                    before = float(np.sum(np.abs(shaped) ** 2))
                    after = float(np.sum(np.abs(candidate) ** 2))
                    loss = max(0.0, 1.0 - after / before)
                    if loss <= epsilon:
                        break
                    if capacities[k] + pad > max_capacity:
                        raise CapacityError(
                            f"recentering mode {k} needs more than {max_capacity} levels"
                        )
                    grow = [(0, 0)] * len(capacities)
                    grow[k] = (0, pad)
                    shaped = np.pad(shaped, grow)
                    capacities[k] += pad
                shaped = candidate
                total_loss += loss
                q, p = origins[k]
                _, _, extra = compose_displacements(q, p, dq, dp)
                phase -= extra
                origins[k, 0] = q + dq
                origins[k, 1] = p + dp
                moved = True
            norm = float(np.linalg.norm(shaped.reshape(-1)))
            if norm <= 1e-12:
                raise IntegrationError("state vanished while recentering")
            shaped = shaped / norm
        if converged or not moved:
            break
        # The shifts stalled above the tolerance: the truncated displacement
        # is not accurate enough at this size, so widen every offending mode
        # and retry.
        a_expect = _mode_a_expectations(shaped)
        stalled = [
            k
            for k in range(len(capacities))
            if abs(a_expect[k]) * root2 > tolerance
        ]
        if not stalled:
            converged = True
            break
        for k in stalled:
            if capacities[k] + pad > max_capacity:
                raise CapacityError(
                    f"recentering mode {k} needs more than {max_capacity} levels"
                )
            grow = [(0, 0)] * len(capacities)
            grow[k] = (0, pad)
            shaped = np.pad(shaped, grow)
            capacities[k] += pad

    if not moved:
        return state, 0.0
    if not converged:
        raise IntegrationError(
            "recentering failed to reach the requested tolerance; the local "
            "capacity is too small for this state"
        )
    final = MultiModeState(make_modes(*capacities), shaped.reshape(-1))
    return (
        MqsdState(MovingFrame(origins, phase), final, state.steps_since_adjust),
        total_loss,
    )


def to_fixed_basis(state: MqsdState, capacity: int | tuple[int, ...]) -> MultiModeState:
    """Ordinary Fock-basis amplitudes of the represented global state.

    Embeds the local state at the requested capacity, applies the per-mode
    displacement D(q_k, p_k) and the accumulated phase.  Raises if the
    requested capacity loses more than 1e-8 probability."""
    if isinstance(capacity, int):
        targets = (capacity,) * state.n_modes
    else:
        targets = tuple(capacity)
    for target, current in zip(targets, state.capacities):
        if target < current:
            raise ValueError("target capacity is below the local capacity")
    shaped = state.local_state.reshaped()
    pads = tuple((0, t - c) for t, c in zip(targets, state.capacities))
    shaped = np.pad(shaped, pads)
    for k in range(state.n_modes):
        q, p = state.frame.origins[k]
        if q == 0.0 and p == 0.0:
            continue
        shaped = _apply_mode_matrix(shaped, k, displacement_matrix_qp(q, p, targets[k]))
    dropped = abs(1.0 - float(np.sum(np.abs(shaped) ** 2)))
    if dropped >= 1e-8:
        raise CapacityError(
            f"capacity {targets} drops {dropped:.3e} probability in the fixed basis"
        )
    amplitudes = np.exp(1j * state.frame.accumulated_phase) * shaped.reshape(-1)
    return MultiModeState(make_modes(*targets), amplitudes)


def adapt_capacity(state: MqsdState, policy: TruncationPolicy) -> MqsdState:
    """Grow or shrink per-mode capacities to honor the truncation policy.

    Growth repeats until the top ``pad_size`` levels hold at most
    ``epsilon``; shrinking happens at most once per mode per call, only when
    the top 2*pad_size levels fit under ``epsilon`` even after
    renormalization, and never below ``min_capacity``."""
    new_state, _ = _adapt_with_loss(state, policy)
    return new_state


def _adapt_with_loss(state: MqsdState, policy: TruncationPolicy) -> tuple[MqsdState, float]:
    shaped = state.local_state.reshaped()
    capacities = list(state.capacities)
    pad = policy.pad_size
    lost = 0.0
    changed = False

    for k in range(len(capacities)):
        axes = tuple(i for i in range(len(capacities)) if i != k)
        norm2 = float(np.sum(np.abs(shaped) ** 2))
        probs = np.abs(shaped) ** 2
        marginal = probs.sum(axis=axes) / norm2 if axes else probs / norm2

        # Check windows never reach level 0: a capacity at or below the pad
        # size would otherwise always look over-full.
        while marginal[-min(pad, capacities[k] - 1):].sum() > policy.epsilon:
            if capacities[k] + pad > policy.max_capacity:
                raise CapacityError(
                    f"mode {k} needs more than max_capacity={policy.max_capacity} levels"
                )
            grow = [(0, 0)] * len(capacities)
            grow[k] = (0, pad)
            shaped = np.pad(shaped, grow)
            capacities[k] += pad
            marginal = np.concatenate([marginal, np.zeros(pad)])
            changed = True

        new_cap = capacities[k] - pad
        if new_cap >= policy.min_capacity:
            top_pad = marginal[-pad:].sum()
            hysteresis = marginal[-min(2 * pad, capacities[k] - 1):].sum()
            kept = 1.0 - top_pad
            new_window = min(pad, new_cap - 1)
            post_shrink_top = marginal[new_cap - new_window:new_cap].sum()
            if (
                hysteresis <= policy.epsilon
                and kept > 0
                and post_shrink_top / kept <= policy.epsilon
            ):
                keep = tuple(
                    slice(0, new_cap) if i == k else slice(None)
                    for i in range(len(capacities))
                )
                shaped = shaped[keep]
                capacities[k] = new_cap
                lost += top_pad
                changed = True

    if not changed:
        return state, 0.0
    flat = shaped.reshape(-1)
    final, _ = normalize(MultiModeState(make_modes(*capacities), flat))
    return MqsdState(state.frame, final, state.steps_since_adjust), lost


def mqsd_step(
    model: OpenSystemModel,
    state: MqsdState,
    t: float,
    config: IntegratorConfig,
    policy: TruncationPolicy,
    rng: np.random.Generator,
    noise: NoiseIncrement | None = None,
) -> tuple[MqsdState, StepDiagnostics]:
    """One moving-basis step: diffusion step on the local state with the
    model rewritten relative to the current origin, then (every
    ``check_interval`` steps) recentering and capacity adaptation.

    The identity component of the rewritten Hamiltonian is removed before
    stepping; it only drives the physically irrelevant global phase, and at
    large frame offsets it would otherwise dominate the Runge-Kutta stability
    limit."""
    if noise is None:
        noise = sample_noise(rng, len(model.lindblads), config.dt)
    elif len(noise.increments) != len(model.lindblads):
        raise ValueError("noise increment count does not match the Lindblad count")

    system = system_for(model, state.capacities)
    ops = system.assemble(state.frame.alphas(), drop_identity_in_hamiltonian=True)
    new_amps, prenorm, dropped, l_expects = _step_kernel(
        ops,
        state.local_state.amplitudes,
        t,
        config.dt,
        noise,
        model.hbar,
        config.renormalize_every_step,
    )
    next_state = MqsdState(
        state.frame,
        state.local_state.with_amplitudes(new_amps),
        state.steps_since_adjust + 1,
    )

    adjust_loss = 0.0
    if next_state.steps_since_adjust >= policy.check_interval:
        next_state, recenter_loss = _recenter_with_loss(
            next_state, DEFAULT_RECENTER_TOLERANCE, policy
        )
        next_state, adapt_loss = _adapt_with_loss(next_state, policy)
        next_state = replace(next_state, steps_since_adjust=0)
        adjust_loss = recenter_loss + adapt_loss

    diagnostics = StepDiagnostics(prenorm, dropped + adjust_loss, l_expects)
    return next_state, diagnostics


def global_expectation(
    state: MqsdState, expr, t: float = 0.0
) -> complex:
    """Expectation of a fixed-basis operator in the represented global state,
    evaluated directly in the moving frame."""
    kernel = operator_template(expr, state.n_modes).at(state.capacities)
    assembled = kernel.assemble(state.frame.alphas())
    psi = state.local_state.amplitudes
    return complex(np.vdot(psi, assembled.matrix(t) @ psi))
