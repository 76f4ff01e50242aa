"""Configuration-driven trajectory and ensemble runs with file outputs.

A run integrates the moving-basis method for one of the built-in models,
records sampled observables, frame origins, capacities and norm diagnostics,
and reduces ensembles deterministically (by trajectory index, independent of
execution order).  Output files are plain text, tab separated, with complex
columns split into real and imaginary parts; identical configurations yield
byte-identical files.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__ as package_version
from .errors import SimulationError
from .fock import fock_state
from .models import DuffingParams, ShgParams, build_damped_oscillator, build_duffing, build_shg
from .moving_basis import (
    MqsdState,
    TruncationPolicy,
    global_expectation,
    initial_mqsd_state,
    mqsd_step,
)
from .operators import OpenSystemModel, OperatorExpr, number_op, quadrature_p, quadrature_q
from .qsd import IntegratorConfig, derive_rng

MODEL_MODE_COUNTS = {"oscillator": 1, "duffing": 1, "shg": 2}


@dataclass(frozen=True)
class RunConfig:
    model_name: str
    model_params: dict
    integrator: IntegratorConfig
    truncation: TruncationPolicy
    t_final: float
    sample_interval: int
    observables: tuple[str, ...]
    trajectories: int
    master_seed: int
    poincare_period: float | None = None
    poincare_offset: float = 0.0
    output_dir: str = "mqsd-output"
    workers: int = 1
    initial_q: tuple[float, ...] | None = None
    initial_p: tuple[float, ...] | None = None
    initial_n: tuple[int, ...] | None = None
    oracle_capacities: tuple[int, ...] | None = None
    oracle_dt: float | None = None

    def __post_init__(self) -> None:
        if self.model_name not in MODEL_MODE_COUNTS:
            raise ValueError(f"unknown model {self.model_name!r}")
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        if self.sample_interval < 1:
            raise ValueError("sample_interval must be >= 1")
        if self.trajectories < 1:
            raise ValueError("trajectories must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        n_modes = MODEL_MODE_COUNTS[self.model_name]
        for token in self.observables:
            parse_observable(token, n_modes)
        for values, name in (
            (self.initial_q, "initial_q"),
            (self.initial_p, "initial_p"),
            (self.initial_n, "initial_n"),
        ):
            if values is not None and len(values) != n_modes:
                raise ValueError(f"{name} needs one entry per mode ({n_modes})")


def parse_observable(token: str, n_modes: int) -> OperatorExpr:
    """Observable tokens are Q<mode>, P<mode> or N<mode>."""
    kind, index = token[:1], token[1:]
    builders = {"Q": quadrature_q, "P": quadrature_p, "N": number_op}
    if kind not in builders or not index.isdigit():
        raise ValueError(f"malformed observable {token!r}; use e.g. Q0, P0, N1")
    mode = int(index)
    if mode >= n_modes:
        raise ValueError(f"observable {token!r} references mode {mode} of {n_modes}")
    return builders[kind](mode)


def build_model(config: RunConfig) -> OpenSystemModel:
    params = dict(config.model_params)
    if config.model_name == "oscillator":
        omega = params.pop("omega", 1.0)
        kappa = params.pop("kappa", 0.5)
        drive = params.pop("drive", 0.0)
        if params:
            raise ValueError(f"unknown oscillator parameters: {sorted(params)}")
        return build_damped_oscillator(omega=omega, kappa=kappa, drive=drive)
    if config.model_name == "duffing":
        return build_duffing(DuffingParams(**params))
    return build_shg(ShgParams(**params))


@dataclass
class TrajectoryRecord:
    """Sampled time series of one stochastic realization."""

    trajectory_index: int
    observable_names: tuple[str, ...]
    times: np.ndarray
    expectations: np.ndarray  # complex, shape (n_samples, n_observables)
    origins: np.ndarray  # shape (n_samples, n_modes, 2)
    capacities: np.ndarray  # int, shape (n_samples, n_modes)
    pre_normalization_norms: np.ndarray
    dropped_probabilities: np.ndarray
    error: str | None = None

    @property
    def completed(self) -> bool:
        return self.error is None


def _initial_state(config: RunConfig, n_modes: int) -> MqsdState:
    policy = config.truncation
    capacity = min(
        max(policy.min_capacity, 2 * policy.pad_size), policy.max_capacity
    )
    origins = np.zeros((n_modes, 2))
    if config.initial_q is not None:
        origins[:, 0] = config.initial_q
    if config.initial_p is not None:
        origins[:, 1] = config.initial_p
    occupations = config.initial_n or (0,) * n_modes
    capacities = tuple(max(capacity, n + 2) for n in occupations)
    state = initial_mqsd_state(capacities, origins)
    if any(occupations):
        local = fock_state(state.local_state.modes, tuple(occupations))
        state = MqsdState(state.frame, local)
    return state


def run_trajectory(config: RunConfig, trajectory_index: int) -> TrajectoryRecord:
    """Integrate one trajectory; deterministic in (master seed, index).

    On integration failure the partial record up to the failing step is
    returned with ``error`` set.
    """
    model = build_model(config)
    n_modes = MODEL_MODE_COUNTS[config.model_name]
    observables = [parse_observable(tok, n_modes) for tok in config.observables]
    rng = derive_rng(config.master_seed, trajectory_index)
    state = _initial_state(config, n_modes)
    dt = config.integrator.dt
    n_steps = max(1, int(round(config.t_final / dt)))

    times: list[float] = []
    expectations: list[list[complex]] = []
    origins: list[np.ndarray] = []
    capacities: list[tuple[int, ...]] = []
    prenorms: list[float] = []
    droppeds: list[float] = []
    error: str | None = None

    def record(t: float, prenorm: float, dropped: float) -> None:
        times.append(t)
        expectations.append([global_expectation(state, op, t) for op in observables])
        origins.append(state.frame.origins.copy())
        capacities.append(state.capacities)
        prenorms.append(prenorm)
        droppeds.append(dropped)

    record(0.0, 1.0, 0.0)
    for i in range(n_steps):
        t = i * dt
        try:
            state, diag = mqsd_step(
                model, state, t, config.integrator, config.truncation, rng
            )
        except SimulationError as exc:
            error = f"step {i} (t={t:.6g}): {exc}"
            break
        if (i + 1) % config.sample_interval == 0 or i + 1 == n_steps:
            record((i + 1) * dt, diag.pre_normalization_norm, diag.dropped_probability)

    n_samples = len(times)
    return TrajectoryRecord(
        trajectory_index=trajectory_index,
        observable_names=config.observables,
        times=np.asarray(times),
        expectations=np.asarray(expectations, dtype=np.complex128).reshape(
            n_samples, len(observables)
        ),
        origins=np.asarray(origins).reshape(n_samples, n_modes, 2),
        capacities=np.asarray(capacities, dtype=np.int64).reshape(n_samples, n_modes),
        pre_normalization_norms=np.asarray(prenorms),
        dropped_probabilities=np.asarray(droppeds),
        error=error,
    )


@dataclass
class EnsembleSummary:
    """Per-sample mean and standard error of each observable across
    trajectories, reduced in trajectory-index order."""

    observable_names: tuple[str, ...]
    times: np.ndarray
    means: np.ndarray  # complex, (n_samples, n_observables)
    standard_errors: np.ndarray  # complex (se of real) + i*(se of imag)
    trajectories: int
    failures: dict[int, str] = field(default_factory=dict)


def summarize_records(records: list[TrajectoryRecord]) -> EnsembleSummary:
    ordered = sorted(records, key=lambda r: r.trajectory_index)
    failures = {r.trajectory_index: r.error for r in ordered if not r.completed}
    good = [r for r in ordered if r.completed]
    if not good:
        raise SimulationError(f"all trajectories failed: {failures}")
    times = good[0].times
    names = good[0].observable_names
    for r in good[1:]:
        if r.times.shape != times.shape or not np.array_equal(r.times, times):
            raise ValueError("trajectory records have mismatched sample grids")
    stacked = np.stack([r.expectations for r in good])  # (n_traj, n_samples, n_obs)
    n = len(good)
    means = stacked.mean(axis=0)
    if n > 1:
        var_re = stacked.real.var(axis=0, ddof=1)
        var_im = stacked.imag.var(axis=0, ddof=1)
        se = np.sqrt(var_re / n) + 1j * np.sqrt(var_im / n)
    else:
        se = np.zeros_like(means)
    return EnsembleSummary(names, times, means, se, n, failures)


def run_ensemble(config: RunConfig) -> tuple[EnsembleSummary, list[TrajectoryRecord]]:
    """Run all trajectories (optionally in parallel) and reduce them."""
    indices = list(range(config.trajectories))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(_run_one, [(config, i) for i in indices], chunksize=1))
    else:
        records = [run_trajectory(config, i) for i in indices]
    return summarize_records(records), records


def _run_one(args: tuple[RunConfig, int]) -> TrajectoryRecord:
    return run_trajectory(*args)


def extract_poincare(
    record: TrajectoryRecord, period: float, offset: float = 0.0
) -> np.ndarray:
    """Stroboscopic (x, p) section points at t = offset + n*period.

    Uses linear interpolation of the recorded <Q0> and <P0> series (frame
    origin plus local expectation, so already the full phase-space position).
    Returns an empty array when the record spans less than one period.
    """
    if period <= 0:
        raise ValueError("period must be positive")
    names = record.observable_names
    try:
        iq, ip = names.index("Q0"), names.index("P0")
    except ValueError as exc:
        raise ValueError("record must include Q0 and P0 observables") from exc
    t0, t1 = record.times[0], record.times[-1]
    if t1 - t0 < period:
        return np.empty((0, 2))
    start = math.ceil((t0 - offset) / period - 1e-12)
    section_times = []
    n = start
    while offset + n * period <= t1 + 1e-12:
        if offset + n * period >= t0 - 1e-12:
            section_times.append(offset + n * period)
        n += 1
    if not section_times:
        return np.empty((0, 2))
    xs = np.interp(section_times, record.times, record.expectations[:, iq].real)
    ps = np.interp(section_times, record.times, record.expectations[:, ip].real)
    return np.column_stack([xs, ps])


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trajectory_tsv(record: TrajectoryRecord, path: str) -> None:
    n_modes = record.origins.shape[1]
    header = ["time"]
    for name in record.observable_names:
        header += [f"{name}_re", f"{name}_im"]
    for k in range(n_modes):
        header += [f"origin_q{k}", f"origin_p{k}"]
    header += [f"capacity{k}" for k in range(n_modes)]
    header += ["pre_normalization_norm", "dropped_probability"]
    lines = ["\t".join(header)]
    for i in range(len(record.times)):
        row = [_fmt(record.times[i])]
        for j in range(len(record.observable_names)):
            z = record.expectations[i, j]
            row += [_fmt(z.real), _fmt(z.imag)]
        for k in range(n_modes):
            row += [_fmt(record.origins[i, k, 0]), _fmt(record.origins[i, k, 1])]
        row += [str(int(c)) for c in record.capacities[i]]
        row += [_fmt(record.pre_normalization_norms[i]), _fmt(record.dropped_probabilities[i])]
        lines.append("\t".join(row))
    if record.error is not None:
        lines.append(f"# error: {record.error}")
    _write_text(path, "\n".join(lines) + "\n")


def read_trajectory_tsv(path: str) -> TrajectoryRecord:
    """Read back a trajectory table (used by the section post-processor)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split("\t")
    error = None
    rows = []
    for ln in lines[1:]:
        if ln.startswith("# error:"):
            error = ln[len("# error:"):].strip()
            continue
        rows.append(ln.split("\t"))
    obs_names = []
    for col in header:
        if col.endswith("_re"):
            obs_names.append(col[:-3])
    n_modes = sum(1 for col in header if col.startswith("origin_q"))
    data = np.asarray([[float(v) for v in row] for row in rows])
    col = {name: i for i, name in enumerate(header)}
    times = data[:, col["time"]]
    expectations = np.empty((len(rows), len(obs_names)), dtype=np.complex128)
    for j, name in enumerate(obs_names):
        expectations[:, j] = data[:, col[f"{name}_re"]] + 1j * data[:, col[f"{name}_im"]]
    origins = np.empty((len(rows), n_modes, 2))
    capacities = np.empty((len(rows), n_modes), dtype=np.int64)
    for k in range(n_modes):
        origins[:, k, 0] = data[:, col[f"origin_q{k}"]]
        origins[:, k, 1] = data[:, col[f"origin_p{k}"]]
        capacities[:, k] = data[:, col[f"capacity{k}"]].astype(np.int64)
    return TrajectoryRecord(
        trajectory_index=-1,
        observable_names=tuple(obs_names),
        times=times,
        expectations=expectations,
        origins=origins,
        capacities=capacities,
        pre_normalization_norms=data[:, col["pre_normalization_norm"]],
        dropped_probabilities=data[:, col["dropped_probability"]],
        error=error,
    )


def write_ensemble_tsv(summary: EnsembleSummary, path: str) -> None:
    header = ["time"]
    for name in summary.observable_names:
        header += [f"{name}_mean_re", f"{name}_mean_im", f"{name}_se_re", f"{name}_se_im"]
    lines = ["\t".join(header)]
    for i in range(len(summary.times)):
        row = [_fmt(summary.times[i])]
        for j in range(len(summary.observable_names)):
            mean = summary.means[i, j]
            se = summary.standard_errors[i, j]
            row += [_fmt(mean.real), _fmt(mean.imag), _fmt(se.real), _fmt(se.imag)]
        lines.append("\t".join(row))
    for index in sorted(summary.failures):
        lines.append(f"# failed trajectory {index}: {summary.failures[index]}")
    _write_text(path, "\n".join(lines) + "\n")


def write_poincare_tsv(points: np.ndarray, path: str) -> None:
    lines = ["x\tp"]
    for x, p in points:
        lines.append(f"{_fmt(x)}\t{_fmt(p)}")
    _write_text(path, "\n".join(lines) + "\n")


def write_run_meta(config: RunConfig, path: str, extra: dict | None = None) -> None:
    """Everything needed to reproduce the run: resolved configuration, code
    version and seed.  Deliberately free of timestamps."""
    from .config import render_config

    lines = [
        f"mqsd version = {package_version}",
        f"master seed = {config.master_seed}",
        "",
        "[resolved configuration]",
        render_config(config),
    ]
    if extra:
        lines.append("")
        for key in sorted(extra):
            lines.append(f"{key} = {extra[key]}")
    model = build_model(config)
    if model.description:
        lines += ["", "[model]", model.description]
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path: str, content: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)
