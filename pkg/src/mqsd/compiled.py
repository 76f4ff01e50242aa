"""Dense per-capacity compilation of operator expressions.

The tree walk in `operators` is the semantic reference.  This module expands
an expression once into scalar-coefficient x ordered-ladder-product terms and
materializes those products as dense matrices for a concrete capacity tuple,
so integrator inner loops cost one small matvec per operator application.
Matrices are products of truncated single-mode ladder matrices, which makes
the compiled action (including truncation at the top level) identical to the
tree walk.

Phase-space frame offsets stay symbolic: rewriting a_k -> a_k + alpha_k
turns each ladder product into a polynomial in the per-mode offsets, so a
term carries a monomial in alpha_k / conj(alpha_k) that is evaluated when a
concrete frame is supplied.  The expensive matrix stacks therefore depend
only on the capacities and are cached, while a frame change costs one small
weighted sum over the stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .operators import (
    Annihilation,
    Creation,
    Identity,
    OpenSystemModel,
    OperatorExpr,
    Product,
    Scale,
    Sum,
    TimeCoefficient,
    adjoint,
    max_mode,
)

PrimOp = tuple[str, int]
_RawTerm = tuple[complex, tuple[TimeCoefficient, ...], tuple[PrimOp, ...]]


def _expand(expr: OperatorExpr) -> list[_RawTerm]:
    """Distribute sums and scalars: list of (const, cosines, ladder sequence).

    Sequences are stored in matrix-product order (rightmost entry acts on the
    state first), matching `Product` semantics.
    """
    if isinstance(expr, Annihilation):
        return [(1 + 0j, (), (("a", expr.mode),))]
    if isinstance(expr, Creation):
        return [(1 + 0j, (), (("ad", expr.mode),))]
    if isinstance(expr, Identity):
        return [(1 + 0j, (), ())]
    if isinstance(expr, Scale):
        terms = _expand(expr.child)
        coeff = expr.coeff
        if isinstance(coeff, TimeCoefficient) and coeff.kind == "constant":
            coeff = complex(coeff.amplitude)
        if isinstance(coeff, TimeCoefficient):
            return [(c, cos + (coeff,), seq) for c, cos, seq in terms]
        return [(c * coeff, cos, seq) for c, cos, seq in terms]
    if isinstance(expr, Sum):
        out: list[_RawTerm] = []
        for child in expr.children:
            out.extend(_expand(child))
        return out
    if isinstance(expr, Product):
        combined: list[_RawTerm] = [(1 + 0j, (), ())]
        for child in expr.children:
            child_terms = _expand(child)
            combined = [
                (c1 * c2, cos1 + cos2, seq1 + seq2)
                for c1, cos1, seq1 in combined
                for c2, cos2, seq2 in child_terms
            ]
        return combined
    raise TypeError(f"not an operator expression: {expr!r}")


def _sorted_cosines(cosines: tuple[TimeCoefficient, ...]) -> tuple[TimeCoefficient, ...]:
    return tuple(sorted(cosines, key=lambda tc: (tc.amplitude, tc.angular_frequency, tc.phase)))


class OperatorTemplate:
    """Frame-symbolic expansion of one expression over a fixed mode count."""

    def __init__(self, expr: OperatorExpr, n_modes: int):
        if max_mode(expr) >= n_modes:
            raise ValueError("expression references a mode beyond the space")
        self.n_modes = n_modes
        table: dict[tuple, complex] = {}
        for const, cosines, seq in _expand(expr):
            cosines = _sorted_cosines(cosines)
            for mask in range(1 << len(seq)):
                plain = [0] * n_modes
                conj = [0] * n_modes
                sub: list[PrimOp] = []
                for i, (kind, mode) in enumerate(seq):
                    if (mask >> i) & 1:
                        if kind == "a":
                            plain[mode] += 1
                        else:
                            conj[mode] += 1
                    else:
                        sub.append((kind, mode))
                key = (cosines, tuple(plain), tuple(conj), tuple(sub))
                table[key] = table.get(key, 0j) + const

        seq_index: dict[tuple[PrimOp, ...], int] = {}
        consts: list[complex] = []
        seq_ids: list[int] = []
        cos_gids: list[int] = []
        plains: list[tuple[int, ...]] = []
        conjs: list[tuple[int, ...]] = []
        cos_groups: list[tuple[TimeCoefficient, ...]] = [()]
        group_index: dict[tuple[TimeCoefficient, ...], int] = {(): 0}
        for (cosines, plain, conj, sub), const in table.items():
            if const == 0:
                continue
            if sub not in seq_index:
                seq_index[sub] = len(seq_index)
            if cosines not in group_index:
                group_index[cosines] = len(cos_groups)
                cos_groups.append(cosines)
            consts.append(const)
            seq_ids.append(seq_index[sub])
            cos_gids.append(group_index[cosines])
            plains.append(plain)
            conjs.append(conj)

        self.sequences: list[tuple[PrimOp, ...]] = [None] * len(seq_index)  # type: ignore[list-item]
        for seq, idx in seq_index.items():
            self.sequences[idx] = seq
        self.cos_groups = cos_groups
        self.consts = np.asarray(consts, dtype=np.complex128)
        self.seq_ids = np.asarray(seq_ids, dtype=np.intp)
        self.cos_gids = np.asarray(cos_gids, dtype=np.intp)
        self.pow_plain = np.asarray(plains, dtype=np.float64).reshape(len(consts), n_modes)
        self.pow_conj = np.asarray(conjs, dtype=np.float64).reshape(len(consts), n_modes)
        self.has_pows = bool(np.any(self.pow_plain) or np.any(self.pow_conj))
        self.frame_free = ~((self.pow_plain.sum(axis=1) + self.pow_conj.sum(axis=1)) > 0)
        self.identity_seq = np.asarray(
            [len(self.sequences[s]) == 0 for s in self.seq_ids], dtype=bool
        )
        self.group_rows = [np.flatnonzero(self.cos_gids == g) for g in range(len(cos_groups))]
        self.group_dupes = [
            rows.size != np.unique(self.seq_ids[rows]).size for rows in self.group_rows
        ]
        # Flat per-term tuples for the evaluation loop:
        # (seq_id, cos_gid, const, sparse pows, is_identity_sequence)
        self.flat_terms: list[tuple[int, int, complex, tuple[tuple[int, int, int], ...], bool]] = []
        for i in range(len(consts)):
            pows = tuple(
                (mode, int(self.pow_plain[i, mode]), int(self.pow_conj[i, mode]))
                for mode in range(n_modes)
                if self.pow_plain[i, mode] or self.pow_conj[i, mode]
            )
            self.flat_terms.append(
                (
                    int(self.seq_ids[i]),
                    int(self.cos_gids[i]),
                    complex(self.consts[i]),
                    pows,
                    bool(self.identity_seq[i]),
                )
            )
        self._kernels: dict[tuple[int, ...], CapacityKernel] = {}

    def at(self, capacities: tuple[int, ...]) -> "CapacityKernel":
        kernel = self._kernels.get(capacities)
        if kernel is None:
            kernel = CapacityKernel(self, capacities)
            self._kernels[capacities] = kernel
        return kernel


def _ladder(capacity: int, kind: str) -> np.ndarray:
    lower = np.diag(np.sqrt(np.arange(1.0, capacity)), 1).astype(np.complex128)
    return lower if kind == "a" else lower.conj().T


def _kron_all(blocks: list[np.ndarray]) -> np.ndarray:
    full = blocks[0]
    for b in blocks[1:]:
        full = np.kron(full, b)
    return full


class CapacityKernel:
    """Matrix stack for one template at one capacity tuple."""

    def __init__(self, template: OperatorTemplate, capacities: tuple[int, ...]):
        if len(capacities) != template.n_modes:
            raise ValueError("capacity tuple does not match the template's mode count")
        self.template = template
        self.capacities = capacities
        self.dim = math.prod(capacities)
        mats = []
        drop_blocks: list[np.ndarray | None] = []
        for seq in template.sequences:
            mats.append(self._sequence_matrix(seq))
            drop_blocks.append(self._drop_block(seq))
        self.stack = (
            np.stack(mats) if mats else np.zeros((0, self.dim, self.dim), dtype=np.complex128)
        )
        self._stack_flat = self.stack.reshape(len(mats), self.dim * self.dim)
        self.drop_blocks = drop_blocks
        self._droppable_ids = frozenset(
            i for i, block in enumerate(drop_blocks) if block is not None
        )

    def _sequence_matrix(self, seq: tuple[PrimOp, ...]) -> np.ndarray:
        per_mode = [np.eye(c, dtype=np.complex128) for c in self.capacities]
        for kind, mode in seq:
            per_mode[mode] = per_mode[mode] @ _ladder(self.capacities[mode], kind)
        return _kron_all(per_mode)

    def _drop_block(self, seq: tuple[PrimOp, ...]) -> np.ndarray | None:
        """Rows whose squared application norm is the probability lost at the
        truncation boundary when the sequence is applied right to left."""
        if not any(kind == "ad" for kind, _ in seq):
            return None
        partial = [np.eye(c, dtype=np.complex128) for c in self.capacities]
        rows: list[np.ndarray] = []
        for kind, mode in reversed(seq):
            if kind == "ad":
                pieces = [
                    partial[k][-1:, :] if k == mode else partial[k]
                    for k in range(len(self.capacities))
                ]
                rows.append(_kron_all(pieces))
            partial[mode] = _ladder(self.capacities[mode], kind) @ partial[mode]
        return np.vstack(rows)

    def assemble(self, alphas: np.ndarray | None = None, drop_identity: bool = False) -> "AssembledOperator":
        tpl = self.template
        n_groups = len(tpl.cos_groups)
        n_seqs = len(tpl.sequences)
        acc: list[list[complex] | None] = [None] * n_groups
        drop_rows: list[tuple[int, int, float]] = []  # (gid, seq_id, |weight|^2)
        offsets = None if alphas is None else [complex(a) for a in alphas]
        any_drops = bool(self._droppable_ids)

        for seq_id, gid, const, pows, is_identity in tpl.flat_terms:
            if drop_identity and is_identity:
                continue
            w = const
            if pows:
                if offsets is None:
                    continue
                for mode, p_plain, p_conj in pows:
                    a = offsets[mode]
                    if p_plain:
                        w *= a**p_plain
                    if p_conj:
                        w *= a.conjugate() ** p_conj
                if w == 0:
                    continue
            bucket = acc[gid]
            if bucket is None:
                bucket = [0j] * n_seqs
                acc[gid] = bucket
            bucket[seq_id] += w
            if any_drops and seq_id in self._droppable_ids:
                drop_rows.append((gid, seq_id, abs(w) ** 2))

        stack_flat = self._stack_flat
        base = None
        cos_parts: list[tuple[tuple[TimeCoefficient, ...], np.ndarray]] = []
        for gid, bucket in enumerate(acc):
            if bucket is None:
                continue
            seq_weights = np.asarray(bucket, dtype=np.complex128)
            matrix = (seq_weights @ stack_flat).reshape(self.dim, self.dim)
            if gid == 0:
                base = matrix
            else:
                cos_parts.append((tpl.cos_groups[gid], matrix))
        if base is None:
            base = np.zeros((self.dim, self.dim), dtype=np.complex128)

        # One weighted block per cosine group: the total dropped probability
        # is sum_g (prod cos_g(t))^2 ||R_g psi||^2.
        drop_parts: list[tuple[tuple[TimeCoefficient, ...], np.ndarray]] = []
        if drop_rows:
            by_gid: dict[int, list[np.ndarray]] = {}
            for gid, seq_id, w2 in drop_rows:
                if w2 == 0.0:
                    continue
                by_gid.setdefault(gid, []).append(
                    math.sqrt(w2) * self.drop_blocks[seq_id]
                )
            for gid, blocks in by_gid.items():
                drop_parts.append((tpl.cos_groups[gid], np.vstack(blocks)))
        return AssembledOperator(base, cos_parts, drop_parts)


class AssembledOperator:
    """One expression bound to capacities and a frame; time stays a parameter."""

    def __init__(
        self,
        base: np.ndarray,
        cos_parts: list[tuple[tuple[TimeCoefficient, ...], np.ndarray]],
        drop_parts: list[tuple[tuple[TimeCoefficient, ...], np.ndarray]],
    ):
        self.base = base
        self.cos_parts = cos_parts
        self._drop_parts = drop_parts

    @property
    def time_dependent(self) -> bool:
        return bool(self.cos_parts)

    def matrix(self, t: float) -> np.ndarray:
        if not self.cos_parts:
            return self.base
        out = self.base.copy()
        for cosines, part in self.cos_parts:
            factor = 1.0
            for tc in cosines:
                factor *= tc.value(t)
            out += factor * part
        return out

    def apply(self, vec: np.ndarray, t: float) -> np.ndarray:
        return self.matrix(t) @ vec

    def drop(self, vec: np.ndarray, t: float) -> float:
        """Probability lost at the truncation boundary for one application of
        this operator to ``vec`` at time ``t``.

        Drops are accounted per expanded term as in the tree walk: each
        raising step contributes the squared magnitude of the amplitude it
        pushes past the top retained level.
        """
        total = 0.0
        for cosines, block in self._drop_parts:
            factor = 1.0
            for tc in cosines:
                factor *= tc.value(t) ** 2
            total += factor * float(np.sum(np.abs(block @ vec) ** 2))
        return total


@dataclass
class StepOperators:
    """Assembled operators one integration step needs."""

    hamiltonian: AssembledOperator
    lindblads: tuple[AssembledOperator, ...]
    lindblad_squares: tuple[AssembledOperator, ...]


@lru_cache(maxsize=512)
def operator_template(expr: OperatorExpr, n_modes: int) -> OperatorTemplate:
    return OperatorTemplate(expr, n_modes)


class CompiledSystem:
    """All templates of one open-system model bound to fixed capacities."""

    def __init__(self, model: OpenSystemModel, capacities: tuple[int, ...]):
        n_modes = len(capacities)
        needed = max(max_mode(model.hamiltonian), *(max_mode(l) for l in model.lindblads)) if model.lindblads else max_mode(model.hamiltonian)
        if needed >= n_modes:
            raise ValueError("model references a mode beyond the given capacities")
        self.model = model
        self.capacities = capacities
        self._h = operator_template(model.hamiltonian, n_modes).at(capacities)
        self._ls = tuple(operator_template(l, n_modes).at(capacities) for l in model.lindblads)
        self._ldls = tuple(
            operator_template(Product((adjoint(l), l)), n_modes).at(capacities)
            for l in model.lindblads
        )

    def assemble(self, alphas: np.ndarray | None = None, drop_identity_in_hamiltonian: bool = False) -> StepOperators:
        return StepOperators(
            self._h.assemble(alphas, drop_identity=drop_identity_in_hamiltonian),
            tuple(k.assemble(alphas) for k in self._ls),
            tuple(k.assemble(alphas) for k in self._ldls),
        )


@lru_cache(maxsize=128)
def compiled_system(model: OpenSystemModel, capacities: tuple[int, ...]) -> CompiledSystem:
    return CompiledSystem(model, capacities)


# Identity-keyed front cache: avoids re-hashing whole expression trees in
# stepping loops.  Entries hold a strong reference to the model, so an id is
# never reused while its entry is alive.
_systems_by_id: dict[tuple[int, tuple[int, ...]], tuple[OpenSystemModel, CompiledSystem]] = {}


def system_for(model: OpenSystemModel, capacities: tuple[int, ...]) -> CompiledSystem:
    key = (id(model), capacities)
    hit = _systems_by_id.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    system = CompiledSystem(model, capacities)
    if len(_systems_by_id) > 1024:
        _systems_by_id.clear()
    _systems_by_id[key] = (model, system)
    return system
