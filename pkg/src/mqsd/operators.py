"""Symbolic operator expressions and the open-system container.

An operator is a small immutable expression tree over per-mode ladder
operators, the identity, scalar factors (constant or time dependent), sums,
and ordered products (rightmost factor applied first).  The tree is
interpreted directly against states; `compiled` materializes the same action
as dense matrices for integrator inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .fock import (
    MultiModeState,
    ObservableValue,
    apply_annihilation,
    apply_creation,
    apply_quadrature,
)

OperatorExpr = Union["Annihilation", "Creation", "Identity", "Scale", "Sum", "Product"]


@dataclass(frozen=True)
class TimeCoefficient:
    """Real scalar coefficient, either constant or amplitude*cos(w*t + phase)."""

    kind: str
    amplitude: float
    angular_frequency: float = 0.0
    phase: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        for value in (self.amplitude, self.angular_frequency, self.phase):
            if not math.isfinite(value):
                raise ValueError("coefficient parameters must be finite")

    def value(self, t: float) -> float:
        if self.kind == "constant":
            return self.amplitude
        return self.amplitude * math.cos(self.angular_frequency * t + self.phase)


@dataclass(frozen=True)
class Annihilation:
    mode: int


@dataclass(frozen=True)
class Creation:
    mode: int


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Scale:
    coeff: Union[complex, TimeCoefficient]
    child: OperatorExpr


@dataclass(frozen=True)
class Sum:
    children: tuple[OperatorExpr, ...]


@dataclass(frozen=True)
class Product:
    """Ordered composition; the rightmost child acts on the state first."""

    children: tuple[OperatorExpr, ...]


def annihilation(mode: int) -> Annihilation:
    return Annihilation(mode)


def creation(mode: int) -> Creation:
    return Creation(mode)


def identity() -> Identity:
    return Identity()


def scale(coeff: Union[complex, float, TimeCoefficient], child: OperatorExpr) -> Scale:
    if not isinstance(coeff, TimeCoefficient):
        coeff = complex(coeff)
    return Scale(coeff, child)


def op_sum(*children: OperatorExpr) -> Sum:
    return Sum(tuple(children))


def op_product(*children: OperatorExpr) -> Product:
    return Product(tuple(children))


def number_op(mode: int) -> Product:
    return op_product(creation(mode), annihilation(mode))


def quadrature_q(mode: int) -> Scale:
    """Q = (a + a†)/sqrt(2)."""
    return scale(1.0 / math.sqrt(2.0), op_sum(annihilation(mode), creation(mode)))


def quadrature_p(mode: int) -> Scale:
    """P = -i (a - a†)/sqrt(2)."""
    return scale(
        -1j / math.sqrt(2.0),
        op_sum(annihilation(mode), scale(-1.0, creation(mode))),
    )


def cosine_coeff(amplitude: float, angular_frequency: float, phase: float = 0.0) -> TimeCoefficient:
    return TimeCoefficient("cosine", amplitude, angular_frequency, phase)


@dataclass(frozen=True)
class OpenSystemModel:
    """Hamiltonian plus environment coupling operators; fully determines the
    master equation and its diffusion unraveling."""

    hbar: float
    hamiltonian: OperatorExpr
    lindblads: tuple[OperatorExpr, ...]
    description: str = ""

    def __post_init__(self) -> None:
        if not (self.hbar > 0 and math.isfinite(self.hbar)):
            raise ValueError(f"hbar must be positive and finite, got {self.hbar}")


def max_mode(expr: OperatorExpr) -> int:
    """Largest mode index referenced, or -1 for mode-free expressions."""
    if isinstance(expr, (Annihilation, Creation)):
        return expr.mode
    if isinstance(expr, Scale):
        return max_mode(expr.child)
    if isinstance(expr, (Sum, Product)):
        return max((max_mode(c) for c in expr.children), default=-1)
    return -1


def is_time_dependent(expr: OperatorExpr) -> bool:
    if isinstance(expr, Scale):
        if isinstance(expr.coeff, TimeCoefficient) and expr.coeff.kind != "constant":
            return True
        return is_time_dependent(expr.child)
    if isinstance(expr, (Sum, Product)):
        return any(is_time_dependent(c) for c in expr.children)
    return False


def _conj_coeff(coeff: Union[complex, TimeCoefficient]) -> Union[complex, TimeCoefficient]:
    # TimeCoefficient values are real, so conjugation is the identity there.
    if isinstance(coeff, TimeCoefficient):
        return coeff
    return coeff.conjugate()


def adjoint(expr: OperatorExpr) -> OperatorExpr:
    """Structural adjoint: swap ladder operators, conjugate scalars, reverse
    product order."""
    if isinstance(expr, Annihilation):
        return Creation(expr.mode)
    if isinstance(expr, Creation):
        return Annihilation(expr.mode)
    if isinstance(expr, Identity):
        return expr
    if isinstance(expr, Scale):
        return Scale(_conj_coeff(expr.coeff), adjoint(expr.child))
    if isinstance(expr, Sum):
        return Sum(tuple(adjoint(c) for c in expr.children))
    if isinstance(expr, Product):
        return Product(tuple(adjoint(c) for c in reversed(expr.children)))
    raise TypeError(f"not an operator expression: {expr!r}")


def _sort_key(expr: OperatorExpr) -> tuple:
    if isinstance(expr, Annihilation):
        return (0, expr.mode)
    if isinstance(expr, Creation):
        return (1, expr.mode)
    if isinstance(expr, Identity):
        return (2,)
    if isinstance(expr, Scale):
        if isinstance(expr.coeff, TimeCoefficient):
            coeff_key = (1, expr.coeff.kind, expr.coeff.amplitude,
                         expr.coeff.angular_frequency, expr.coeff.phase)
        else:
            coeff_key = (0, expr.coeff.real, expr.coeff.imag)
        return (3, coeff_key, _sort_key(expr.child))
    if isinstance(expr, Sum):
        return (4, tuple(_sort_key(c) for c in expr.children))
    if isinstance(expr, Product):
        return (5, tuple(_sort_key(c) for c in expr.children))
    raise TypeError(f"not an operator expression: {expr!r}")


def _mode_footprint(expr: OperatorExpr) -> set[int]:
    if isinstance(expr, (Annihilation, Creation)):
        return {expr.mode}
    if isinstance(expr, Scale):
        return _mode_footprint(expr.child)
    if isinstance(expr, (Sum, Product)):
        modes: set[int] = set()
        for child in expr.children:
            modes |= _mode_footprint(child)
        return modes
    return set()


def _sort_commuting_factors(factors: list[OperatorExpr]) -> list[OperatorExpr]:
    """Stable-sort runs of single-mode factors by mode index.

    Factors on distinct modes commute exactly, even with truncation, so this
    reordering preserves the operator.  Factors touching several modes act as
    barriers that nothing is moved across.
    """
    result: list[OperatorExpr] = []
    run: list[tuple[int, OperatorExpr]] = []

    def flush() -> None:
        run.sort(key=lambda pair: pair[0])
        result.extend(f for _, f in run)
        run.clear()

    for factor in factors:
        footprint = _mode_footprint(factor)
        if len(footprint) == 1:
            run.append((next(iter(footprint)), factor))
        else:
            flush()
            result.append(factor)
    flush()
    return result


def _rescale(const: complex, time_coeffs: list[TimeCoefficient], core: OperatorExpr) -> OperatorExpr:
    """Rebuild a scalar chain around a canonical core in a fixed order:
    sorted cosine coefficients outermost, one plain constant innermost."""
    if const == 0:
        return Scale(0j, Identity())
    if isinstance(core, Sum):
        children = tuple(_rescale(const, time_coeffs, c) for c in core.children)
        return Sum(tuple(sorted(children, key=_sort_key)))
    while isinstance(core, Scale):
        inner = core.coeff
        if isinstance(inner, TimeCoefficient):
            time_coeffs = time_coeffs + [inner]
        else:
            const = const * inner
        core = core.child
    time_coeffs = sorted(time_coeffs, key=lambda tc: (tc.amplitude, tc.angular_frequency, tc.phase))
    if time_coeffs and const.imag == 0:
        folded = time_coeffs[-1]
        folded = TimeCoefficient(folded.kind, folded.amplitude * const.real,
                                 folded.angular_frequency, folded.phase)
        time_coeffs = time_coeffs[:-1] + [folded]
        const = 1 + 0j
    out = core
    if const != 1:
        out = Scale(const, out)
    for tc in reversed(time_coeffs):
        out = Scale(tc, out)
    return out


def canonicalize(expr: OperatorExpr) -> OperatorExpr:
    """Canonical form used for structural equality checks.

    Flattens nested sums and products, folds scalar chains into a fixed
    order, distributes scalars over sums, pulls scalars out of products,
    drops identity factors, sorts commuting product factors by mode and
    sorts sum terms.
    """
    if isinstance(expr, (Annihilation, Creation, Identity)):
        return expr

    if isinstance(expr, Scale):
        const = 1 + 0j
        time_coeffs: list[TimeCoefficient] = []
        node: OperatorExpr = expr
        while isinstance(node, Scale):
            coeff = node.coeff
            if isinstance(coeff, TimeCoefficient):
                if coeff.kind == "constant":
                    const *= coeff.amplitude
                else:
                    time_coeffs.append(coeff)
            else:
                const *= coeff
            node = node.child
        return _rescale(const, time_coeffs, canonicalize(node))

    if isinstance(expr, Sum):
        flat: list[OperatorExpr] = []
        for child in expr.children:
            child = canonicalize(child)
            if isinstance(child, Sum):
                flat.extend(child.children)
            else:
                flat.append(child)
        if not flat:
            return Scale(0j, Identity())
        if len(flat) == 1:
            return flat[0]
        return Sum(tuple(sorted(flat, key=_sort_key)))

    if isinstance(expr, Product):
        factors: list[OperatorExpr] = []
        const = 1 + 0j
        time_coeffs: list[TimeCoefficient] = []
        for child in expr.children:
            child = canonicalize(child)
            while isinstance(child, Scale):
                coeff = child.coeff
                if isinstance(coeff, TimeCoefficient):
                    time_coeffs.append(coeff)
                else:
                    const *= coeff
                child = child.child
            if isinstance(child, Product):
                factors.extend(child.children)
            elif isinstance(child, Identity):
                continue
            else:
                factors.append(child)
        factors = _sort_commuting_factors(factors)
        if not factors:
            core: OperatorExpr = Identity()
        elif len(factors) == 1:
            core = factors[0]
        else:
            core = Product(tuple(factors))
        return _rescale(const, time_coeffs, core)

    raise TypeError(f"not an operator expression: {expr!r}")


def structurally_equal(left: OperatorExpr, right: OperatorExpr) -> bool:
    return canonicalize(left) == canonicalize(right)


def is_self_adjoint(expr: OperatorExpr) -> bool:
    return structurally_equal(expr, adjoint(expr))


def _apply(expr: OperatorExpr, state: MultiModeState, t: float, drops: list[float]) -> MultiModeState:
    if isinstance(expr, Annihilation):
        return apply_annihilation(state, expr.mode)
    if isinstance(expr, Creation):
        result, dropped = apply_creation(state, expr.mode)
        drops[0] += dropped
        return result
    if isinstance(expr, Identity):
        return state
    if isinstance(expr, Scale):
        applied = _apply(expr.child, state, t, drops)
        value = expr.coeff.value(t) if isinstance(expr.coeff, TimeCoefficient) else expr.coeff
        return applied.with_amplitudes(value * applied.amplitudes)
    if isinstance(expr, Sum):
        total = np.zeros_like(state.amplitudes)
        for child in expr.children:
            total = total + _apply(child, state, t, drops).amplitudes
        return state.with_amplitudes(total)
    if isinstance(expr, Product):
        current = state
        for child in reversed(expr.children):
            current = _apply(child, current, t, drops)
        return current
    raise TypeError(f"not an operator expression: {expr!r}")


def apply_operator(expr: OperatorExpr, state: MultiModeState, t: float = 0.0) -> MultiModeState:
    """Linear action of the expression on a state at time ``t``."""
    if max_mode(expr) >= state.n_modes:
        raise ValueError("expression references a mode the state does not have")
    return _apply(expr, state, t, [0.0])


def apply_operator_with_loss(
    expr: OperatorExpr, state: MultiModeState, t: float = 0.0
) -> tuple[MultiModeState, float]:
    """Like :func:`apply_operator` but also reports the total probability
    dropped at the truncation boundary across all raising steps."""
    if max_mode(expr) >= state.n_modes:
        raise ValueError("expression references a mode the state does not have")
    drops = [0.0]
    result = _apply(expr, state, t, drops)
    return result, drops[0]


def expectation_and_variance(
    state: MultiModeState, op: OperatorExpr, t: float = 0.0
) -> ObservableValue:
    """<G> and <G^2> - <G>^2 at time t; the variance assumes G self-adjoint."""
    applied = apply_operator(op, state, t)
    expectation = complex(np.vdot(state.amplitudes, applied.amplitudes))
    second_moment = float(np.real(np.vdot(applied.amplitudes, applied.amplitudes)))
    variance = second_moment - abs(expectation) ** 2
    return ObservableValue(expectation, variance)


def shift_origin(expr: OperatorExpr, alphas: np.ndarray) -> OperatorExpr:
    """Rewrite global ladder operators relative to per-mode phase-space
    origins: a_k -> a_k + alpha_k, a_k† -> a_k† + conj(alpha_k)."""
    if isinstance(expr, Annihilation):
        a = complex(alphas[expr.mode])
        if a == 0:
            return expr
        return Sum((expr, Scale(a, Identity())))
    if isinstance(expr, Creation):
        a = complex(alphas[expr.mode])
        if a == 0:
            return expr
        return Sum((expr, Scale(a.conjugate(), Identity())))
    if isinstance(expr, Identity):
        return expr
    if isinstance(expr, Scale):
        return Scale(expr.coeff, shift_origin(expr.child, alphas))
    if isinstance(expr, Sum):
        return Sum(tuple(shift_origin(c, alphas) for c in expr.children))
    if isinstance(expr, Product):
        return Product(tuple(shift_origin(c, alphas) for c in expr.children))
    raise TypeError(f"not an operator expression: {expr!r}")


@lru_cache(maxsize=512)
def _mode_matrix(capacities: tuple[int, ...], mode: int, kind: str) -> np.ndarray:
    single: list[np.ndarray] = []
    for k, cap in enumerate(capacities):
        if k == mode:
            lower = np.diag(np.sqrt(np.arange(1.0, cap)), 1).astype(np.complex128)
            single.append(lower if kind == "a" else lower.conj().T)
        else:
            single.append(np.eye(cap, dtype=np.complex128))
    full = single[0]
    for m in single[1:]:
        full = np.kron(full, m)
    return full


def to_matrix(expr: OperatorExpr, capacities: tuple[int, ...], t: float = 0.0) -> np.ndarray:
    """Dense matrix of the expression over the row-major product basis."""
    dim = math.prod(capacities)
    if isinstance(expr, Annihilation):
        return _mode_matrix(capacities, expr.mode, "a").copy()
    if isinstance(expr, Creation):
        return _mode_matrix(capacities, expr.mode, "ad").copy()
    if isinstance(expr, Identity):
        return np.eye(dim, dtype=np.complex128)
    if isinstance(expr, Scale):
        value = expr.coeff.value(t) if isinstance(expr.coeff, TimeCoefficient) else expr.coeff
        return value * to_matrix(expr.child, capacities, t)
    if isinstance(expr, Sum):
        total = np.zeros((dim, dim), dtype=np.complex128)
        for child in expr.children:
            total += to_matrix(child, capacities, t)
        return total
    if isinstance(expr, Product):
        result = np.eye(dim, dtype=np.complex128)
        for child in expr.children:
            result = result @ to_matrix(child, capacities, t)
        return result
    raise TypeError(f"not an operator expression: {expr!r}")


def describe(expr: OperatorExpr) -> str:
    """Compact human-readable rendering, used by model self-descriptions."""
    if isinstance(expr, Annihilation):
        return f"a{expr.mode}"
    if isinstance(expr, Creation):
        return f"ad{expr.mode}"
    if isinstance(expr, Identity):
        return "1"
    if isinstance(expr, Scale):
        if isinstance(expr.coeff, TimeCoefficient):
            c = expr.coeff
            if c.kind == "constant":
                head = _format_complex(complex(c.amplitude))
            else:
                head = f"{c.amplitude:g}*cos({c.angular_frequency:g}*t"
                head += f"{c.phase:+g})" if c.phase else ")"
        else:
            head = _format_complex(expr.coeff)
        return f"{head}*{describe(expr.child)}"
    if isinstance(expr, Sum):
        return "(" + " + ".join(describe(c) for c in expr.children) + ")"
    if isinstance(expr, Product):
        return "*".join(describe(c) for c in expr.children)
    raise TypeError(f"not an operator expression: {expr!r}")


def _format_complex(z: complex) -> str:
    if z.imag == 0:
        return f"{z.real:g}"
    if z.real == 0:
        return f"{z.imag:g}j"
    return f"({z.real:g}{z.imag:+g}j)"
