"""Command-line runner.

Verbs:
    run       one trajectory -> trajectory_<index>.tsv + run_meta.txt
    ensemble  many trajectories -> ensemble_summary.tsv (+ per-trajectory
              tables with --keep-trajectories) + run_meta.txt
    oracle    dense master-equation reference run -> oracle_summary.tsv
    poincare  stroboscopic section of a recorded trajectory -> poincare.tsv
    validate  fast built-in self checks (exit code 1 on failure)
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .config import load_config
from .models import build_damped_oscillator, oscillator_coherent_solution
from .moving_basis import (
    TruncationPolicy,
    compose_displacements,
    displacement_matrix,
    displacement_matrix_qp,
    global_expectation,
    initial_mqsd_state,
    mqsd_step,
)
from .fock import MultiModeState, make_modes
from .operators import (
    OpenSystemModel,
    annihilation,
    expectation_and_variance,
    number_op,
    quadrature_q,
    scale,
)
from .oracles import DensityMatrix, density_expectation, master_equation_evolve
from .qsd import IntegratorConfig, NoiseIncrement, derive_rng, sample_noise, step
from .runner import (
    MODEL_MODE_COUNTS,
    RunConfig,
    build_model,
    extract_poincare,
    parse_observable,
    read_trajectory_tsv,
    run_ensemble,
    run_trajectory,
    write_ensemble_tsv,
    write_poincare_tsv,
    write_run_meta,
    write_trajectory_tsv,
)


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "output", None):
        config = replace(config, output_dir=args.output)
    if getattr(args, "seed", None) is not None:
        config = replace(
            config,
            master_seed=args.seed,
            integrator=replace(config.integrator, rng_seed=args.seed),
        )
    if getattr(args, "workers", None) is not None:
        config = replace(config, workers=args.workers)
    return config


def _cmd_run(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    record = run_trajectory(config, args.index)
    out = config.output_dir
    write_trajectory_tsv(record, os.path.join(out, f"trajectory_{args.index}.tsv"))
    write_run_meta(config, os.path.join(out, "run_meta.txt"))
    if record.error is not None:
        print(f"trajectory {args.index} FAILED: {record.error}", file=sys.stderr)
        return 1
    print(f"wrote {out}/trajectory_{args.index}.tsv ({len(record.times)} samples)")
    return 0


def _cmd_ensemble(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    summary, records = run_ensemble(config)
    out = config.output_dir
    write_ensemble_tsv(summary, os.path.join(out, "ensemble_summary.tsv"))
    if args.keep_trajectories:
        for record in records:
            write_trajectory_tsv(
                record, os.path.join(out, f"trajectory_{record.trajectory_index}.tsv")
            )
    write_run_meta(
        config,
        os.path.join(out, "run_meta.txt"),
        extra={"completed trajectories": summary.trajectories},
    )
    print(
        f"wrote {out}/ensemble_summary.tsv "
        f"({summary.trajectories}/{config.trajectories} trajectories)"
    )
    if summary.failures:
        for index in sorted(summary.failures):
            print(f"trajectory {index} failed: {summary.failures[index]}", file=sys.stderr)
        return 1
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    model = build_model(config)
    n_modes = MODEL_MODE_COUNTS[config.model_name]
    capacities = config.oracle_capacities or (12,) * n_modes
    if len(capacities) != n_modes:
        raise SystemExit(f"oracle.capacities needs {n_modes} entries")
    modes = make_modes(*capacities)

    amps = None
    for k in range(n_modes):
        q = config.initial_q[k] if config.initial_q is not None else 0.0
        p = config.initial_p[k] if config.initial_p is not None else 0.0
        column = displacement_matrix_qp(q, p, capacities[k])[:, 0]
        amps = column if amps is None else np.kron(amps, column)
    state = MultiModeState(modes, amps)
    rho = DensityMatrix(modes, np.outer(state.amplitudes, state.amplitudes.conj()))

    observables = [parse_observable(tok, n_modes) for tok in config.observables]
    dt = config.oracle_dt or config.integrator.dt
    sample_dt = config.integrator.dt * config.sample_interval
    n_samples = max(1, int(round(config.t_final / sample_dt)))

    lines = ["time\t" + "\t".join(f"{n}_re\t{n}_im" for n in config.observables)]

    def emit(t: float) -> None:
        row = [repr(float(t))]
        for op in observables:
            z = density_expectation(rho, op, t)
            row += [repr(z.real), repr(z.imag)]
        lines.append("\t".join(row))

    emit(0.0)
    t = 0.0
    for i in range(n_samples):
        t_next = min((i + 1) * sample_dt, config.t_final)
        span = t_next - t
        if span > 0:
            rho = master_equation_evolve(model, rho, span, dt, t0=t)
        t = t_next
        emit(t)

    out = config.output_dir
    path = os.path.join(out, "oracle_summary.tsv")
    os.makedirs(out, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    write_run_meta(config, os.path.join(out, "run_meta.txt"), extra={"oracle": "dense"})
    print(f"wrote {path}")
    return 0


def _cmd_poincare(args: argparse.Namespace) -> int:
    record = read_trajectory_tsv(args.record)
    points = extract_poincare(record, args.period, args.offset)
    out_dir = args.output or os.path.dirname(args.record) or "."
    path = os.path.join(out_dir, "poincare.tsv")
    write_poincare_tsv(points, path)
    print(f"wrote {path} ({len(points)} section points)")
    return 0


def _check(name: str, passed: bool, detail: str) -> bool:
    print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return passed


def _cmd_validate(_: argparse.Namespace) -> int:
    ok = True
    rng = derive_rng(20240601, 0)

    noise = sample_noise(rng, 200_000, 0.01)
    z = noise.increments
    mean_abs = abs(z.mean())
    mean_sq = abs((z**2).mean())
    power = float(np.mean(np.abs(z) ** 2))
    se = math.sqrt(0.01 / len(z))
    ok &= _check(
        "noise moments",
        mean_abs < 5 * se and mean_sq < 5 * math.sqrt(2) * 0.01 / math.sqrt(len(z))
        and abs(power - 0.01) < 5 * 0.01 / math.sqrt(len(z)),
        f"|mean|={mean_abs:.2e} |mean sq|={mean_sq:.2e} power={power:.5f}",
    )

    matrix, _ = displacement_matrix(1.0, 40)
    ok &= _check(
        "displacement ground amplitude",
        abs(abs(matrix[0, 0]) - math.exp(-0.5)) < 1e-12,
        f"|<0|D(1)|0>|={abs(matrix[0, 0]):.10f}",
    )

    q, p, phase = compose_displacements(1.0, 0.0, 0.0, 1.0)
    ok &= _check(
        "displacement composition phase",
        (q, p) == (1.0, 1.0) and abs(phase - 0.5) < 1e-15,
        f"origin=({q:g},{p:g}) phase={phase:g}",
    )

    model = build_damped_oscillator(1.0, 0.5, 0.4)
    cfg = IntegratorConfig(dt=1e-3)
    gen = derive_rng(7, 0)
    matrix, _ = displacement_matrix(1.0, 30)
    state = MultiModeState(make_modes(30), matrix[:, 0])
    for i in range(300):
        state, _ = step(model, state, i * cfg.dt, cfg, gen)
    got = expectation_and_variance(state, annihilation(0)).expectation
    want = oscillator_coherent_solution(1.0, 1.0, 0.5, 0.4, 0.3)
    ok &= _check(
        "coherent-state trajectory vs closed form",
        abs(got - want) < 1e-8,
        f"error={abs(got - want):.2e}",
    )

    policy = TruncationPolicy(epsilon=1e-9, pad_size=2, min_capacity=4, max_capacity=4)
    fixed = MultiModeState(make_modes(30), matrix[:, 0])
    moving = initial_mqsd_state((4,), np.array([[math.sqrt(2.0), 0.0]]))
    rng_noise = derive_rng(11, 0)
    rng_unused = derive_rng(12, 0)
    for i in range(300):
        t = i * cfg.dt
        shared = sample_noise(rng_noise, 1, cfg.dt)
        fixed, _ = step(model, fixed, t, cfg, rng_unused, noise=shared)
        moving, _ = mqsd_step(model, moving, t, cfg, policy, rng_unused, noise=shared)
    diff = abs(
        expectation_and_variance(fixed, quadrature_q(0)).expectation
        - global_expectation(moving, quadrature_q(0))
    )
    ok &= _check(
        "moving basis vs fixed basis (shared noise)",
        diff < 1e-6,
        f"<Q> difference={diff:.2e}",
    )

    theta = 0.7
    rotated = OpenSystemModel(
        model.hbar,
        model.hamiltonian,
        tuple(scale(complex(math.cos(theta), math.sin(theta)), l) for l in model.lindblads),
    )
    base_state = MultiModeState(make_modes(12), np.eye(12)[2].astype(complex))
    s1, s2 = base_state, base_state
    rngA = derive_rng(3, 0)
    rng_unused = derive_rng(4, 0)
    u_conj = complex(math.cos(theta), -math.sin(theta))
    for i in range(200):
        t = i * cfg.dt
        shared = sample_noise(rngA, 1, cfg.dt)
        s1, _ = step(model, s1, t, cfg, rng_unused, noise=shared)
        rotated_noise = NoiseIncrement(u_conj * shared.increments, shared.dt)
        s2, _ = step(rotated, s2, t, cfg, rng_unused, noise=rotated_noise)
    n1 = expectation_and_variance(s1, number_op(0)).expectation
    n2 = expectation_and_variance(s2, number_op(0)).expectation
    ok &= _check(
        "noise-rotation invariance",
        abs(n1 - n2) < 1e-12,
        f"<n> difference={abs(n1 - n2):.2e}",
    )

    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mqsd",
        description="Open-system quantum trajectories with a moving Fock basis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("run", _cmd_run), ("ensemble", _cmd_ensemble), ("oracle", _cmd_oracle)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--output", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--workers", type=int, help="parallel worker count")
        if name == "run":
            p.add_argument("--index", type=int, default=0, help="trajectory index")
        if name == "ensemble":
            p.add_argument(
                "--keep-trajectories",
                action="store_true",
                help="also write per-trajectory tables",
            )
        p.set_defaults(fn=fn)

    p = sub.add_parser("poincare")
    p.add_argument("--record", required=True, help="trajectory_<i>.tsv to section")
    p.add_argument("--period", type=float, required=True)
    p.add_argument("--offset", type=float, default=0.0)
    p.add_argument("--output", help="output directory (defaults next to the record)")
    p.set_defaults(fn=_cmd_poincare)

    p = sub.add_parser("validate")
    p.set_defaults(fn=_cmd_validate)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
