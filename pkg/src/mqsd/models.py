"""Builders for the example systems and the small validation systems.

All models use hbar = 1 in their working units.  Every builder attaches a
plain-text coefficient table to the model so runs can be audited term by
term.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .operators import (
    OpenSystemModel,
    OperatorExpr,
    annihilation,
    canonicalize,
    cosine_coeff,
    creation,
    describe,
    number_op,
    op_product,
    op_sum,
    quadrature_p,
    quadrature_q,
    scale,
)


@dataclass(frozen=True)
class DuffingParams:
    """Forced, damped double-well oscillator.

    The classical limit is x'' = -x^3 + x - 2*Gamma*x' + g*cos(drive_frequency*t).
    ``scale`` stretches x and p by the factor s, which shrinks the effective
    quantum of action by s^2; the model works in the stretched coordinates
    with hbar = 1.
    """

    g: float
    Gamma: float
    scale: float = 1.0
    drive_frequency: float = 1.0

    def __post_init__(self) -> None:
        if self.Gamma < 0:
            raise ValueError(f"Gamma must be >= 0, got {self.Gamma}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        for value in (self.g, self.Gamma, self.scale, self.drive_frequency):
            if not math.isfinite(value):
                raise ValueError("parameters must be finite")


@dataclass(frozen=True)
class ShgParams:
    """Driven two-mode cavity with a two-photon conversion nonlinearity."""

    kappa1: float
    kappa2: float
    delta1: float
    delta2: float
    chi: float
    f: float

    def __post_init__(self) -> None:
        if self.kappa1 <= 0 or self.kappa2 <= 0:
            raise ValueError("kappa1 and kappa2 must be positive")
        for value in (self.kappa1, self.kappa2, self.delta1, self.delta2, self.chi, self.f):
            if not math.isfinite(value):
                raise ValueError("parameters must be finite")


def build_duffing(params: DuffingParams) -> OpenSystemModel:
    """Single-mode double-well model in stretched coordinates X = s*x, P = s*p:

        H = P^2/2 + X^4/(4 s^2) - X^2/2 - g*s*cos(w_d t)*X + (Gamma/2)(XP + PX)
        L = sqrt(2*Gamma) * a

    The drive enters with a minus sign so the classical force is
    +g*cos(w_d t); the symmetrized damping term together with L reproduces
    the -2*Gamma*x' friction in the classical limit.
    """
    s = params.scale
    x = quadrature_q(0)
    p = quadrature_p(0)
    terms: list[OperatorExpr] = [
        scale(0.5, op_product(p, p)),
        scale(0.25 / s**2, op_product(x, x, x, x)),
        scale(-0.5, op_product(x, x)),
    ]
    if params.g != 0.0:
        drive = cosine_coeff(-params.g * s, params.drive_frequency)
        terms.append(scale(drive, x))
    if params.Gamma != 0.0:
        terms.append(
            scale(0.5 * params.Gamma, op_sum(op_product(x, p), op_product(p, x)))
        )
    hamiltonian = op_sum(*terms)
    lindblads: tuple[OperatorExpr, ...] = ()
    if params.Gamma != 0.0:
        lindblads = (scale(math.sqrt(2.0 * params.Gamma), annihilation(0)),)

    coefficient_table = "\n".join(
        [
            "duffing oscillator (stretched coordinates, hbar = 1)",
            f"  scale s               = {s:g}  (effective hbar in x,p units: {1.0 / s**2:g})",
            "  kinetic   P^2         :  0.5",
            f"  quartic   X^4         :  {0.25 / s**2:.12g}",
            "  quadratic X^2         : -0.5",
            f"  drive     X*cos(w t)  : {-params.g * s:.12g}   (w = {params.drive_frequency:g})",
            f"  damping   (XP+PX)/2   :  {params.Gamma:g}",
            f"  lindblad  a           :  sqrt(2*Gamma) = {math.sqrt(2.0 * params.Gamma):.12g}",
            f"  H = {describe(canonicalize(hamiltonian))}",
        ]
    )
    return OpenSystemModel(1.0, hamiltonian, lindblads, coefficient_table)


def build_shg(params: ShgParams) -> OpenSystemModel:
    """Two-mode cavity model in the frame rotating with the drive:

        H = d1 a1†a1 + d2 a2†a2 + i f (a1† - a1) + i (chi/2)(a1†^2 a2 - a1^2 a2†)
        L1 = sqrt(2 kappa1) a1,  L2 = sqrt(2 kappa2) a2
    """
    a1, a1d = annihilation(0), creation(0)
    a2, a2d = annihilation(1), creation(1)
    hamiltonian = op_sum(
        scale(params.delta1, number_op(0)),
        scale(params.delta2, number_op(1)),
        scale(1j * params.f, op_sum(a1d, scale(-1.0, a1))),
        scale(
            0.5j * params.chi,
            op_sum(op_product(a1d, a1d, a2), scale(-1.0, op_product(a1, a1, a2d))),
        ),
    )
    lindblads = (
        scale(math.sqrt(2.0 * params.kappa1), a1),
        scale(math.sqrt(2.0 * params.kappa2), a2),
    )
    coefficient_table = "\n".join(
        [
            "second harmonic generation (interaction picture, hbar = 1)",
            f"  detuning  a1†a1        : {params.delta1:g}",
            f"  detuning  a2†a2        : {params.delta2:g}",
            f"  drive     i(a1† - a1)  : {params.f:g}",
            f"  coupling  i(a1†^2 a2 - a1^2 a2†) : {0.5 * params.chi:g}",
            f"  lindblad  a1           : sqrt(2*kappa1) = {math.sqrt(2.0 * params.kappa1):.12g}",
            f"  lindblad  a2           : sqrt(2*kappa2) = {math.sqrt(2.0 * params.kappa2):.12g}",
            f"  H = {describe(canonicalize(hamiltonian))}",
        ]
    )
    return OpenSystemModel(1.0, hamiltonian, lindblads, coefficient_table)


def build_damped_oscillator(
    omega: float = 1.0, kappa: float = 0.5, drive: float = 0.0
) -> OpenSystemModel:
    """Driven damped harmonic mode: H = w a†a + i f (a† - a), L = sqrt(2k) a.

    Starting from a coherent state the trajectory is deterministic and
    <a>(t) follows d<a>/dt = -(i w + k) <a> + f, which makes this the main
    analytic validation system.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    terms: list[OperatorExpr] = [scale(omega, number_op(0))]
    if drive != 0.0:
        terms.append(scale(1j * drive, op_sum(creation(0), scale(-1.0, annihilation(0)))))
    hamiltonian = op_sum(*terms) if len(terms) > 1 else terms[0]
    lindblads: tuple[OperatorExpr, ...] = ()
    if kappa > 0:
        lindblads = (scale(math.sqrt(2.0 * kappa), annihilation(0)),)
    coefficient_table = "\n".join(
        [
            "damped driven linear oscillator (hbar = 1)",
            f"  a†a        : {omega:g}",
            f"  i(a† - a)  : {drive:g}",
            f"  lindblad a : sqrt(2*kappa) = {math.sqrt(2.0 * kappa):.12g}",
        ]
    )
    return OpenSystemModel(1.0, hamiltonian, lindblads, coefficient_table)


def oscillator_coherent_solution(
    alpha0: complex, omega: float, kappa: float, drive: float, t: float
) -> complex:
    """Closed-form <a>(t) for build_damped_oscillator from a coherent state."""
    rate = kappa + 1j * omega
    if rate == 0:
        return alpha0 + drive * t
    steady = drive / rate
    return steady + (alpha0 - steady) * cmath.exp(-rate * t)
