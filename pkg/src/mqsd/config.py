"""Strict key-value run configuration files.

One setting per line, ``key = value``; ``#`` starts a comment.  Dotted keys
group related settings (integrator.dt, truncation.epsilon, model.<param>).
Unknown keys are errors so typos fail fast instead of silently running with
defaults.  Lists are whitespace or comma separated.

Example::

    model = shg
    model.kappa1 = 1.0
    model.kappa2 = 0.25
    t_final = 3.0
    sample_interval = 20
    observables = N0 N1
    trajectories = 200
    seed = 7
    integrator.dt = 1e-3
    truncation.epsilon = 1e-3
    truncation.pad_size = 2
"""

from __future__ import annotations

from typing import Any

from .moving_basis import TruncationPolicy
from .qsd import IntegratorConfig
from .runner import MODEL_MODE_COUNTS, RunConfig

_SCALAR_KEYS: dict[str, type] = {
    "model": str,
    "t_final": float,
    "sample_interval": int,
    "trajectories": int,
    "seed": int,
    "workers": int,
    "output": str,
    "integrator.dt": float,
    "integrator.renormalize_every_step": bool,
    "truncation.epsilon": float,
    "truncation.pad_size": int,
    "truncation.min_capacity": int,
    "truncation.max_capacity": int,
    "truncation.check_interval": int,
    "poincare.period": float,
    "poincare.offset": float,
    "oracle.dt": float,
}

_LIST_KEYS: dict[str, type] = {
    "observables": str,
    "initial.q": float,
    "initial.p": float,
    "initial.n": int,
    "oracle.capacities": int,
}

_REQUIRED = ("model", "t_final", "integrator.dt", "truncation.epsilon", "truncation.pad_size")

_MODEL_PARAM_TYPES = float


def _parse_scalar(key: str, raw: str, kind: type) -> Any:
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ValueError(f"{key}: expected {kind.__name__}, got {raw!r}") from exc


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, Any] = {}
    model_params: dict[str, float] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key in values or (key.startswith("model.") and key[6:] in model_params):
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        if key.startswith("model."):
            model_params[key[6:]] = _parse_scalar(key, raw_value, _MODEL_PARAM_TYPES)
        elif key in _SCALAR_KEYS:
            values[key] = _parse_scalar(key, raw_value, _SCALAR_KEYS[key])
        elif key in _LIST_KEYS:
            items = [tok for tok in raw_value.replace(",", " ").split() if tok]
            values[key] = tuple(_parse_scalar(key, tok, _LIST_KEYS[key]) for tok in items)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")

    missing = [key for key in _REQUIRED if key not in values]
    if missing:
        raise ValueError(f"missing required keys: {missing}")

    integrator = IntegratorConfig(
        dt=values["integrator.dt"],
        rng_seed=values.get("seed", 0),
        renormalize_every_step=values.get("integrator.renormalize_every_step", True),
    )
    truncation = TruncationPolicy(
        epsilon=values["truncation.epsilon"],
        pad_size=values["truncation.pad_size"],
        min_capacity=values.get("truncation.min_capacity", 2),
        max_capacity=values.get("truncation.max_capacity", 512),
        check_interval=values.get("truncation.check_interval", 1),
    )
    model_name = values["model"]
    if model_name not in MODEL_MODE_COUNTS:
        raise ValueError(f"unknown model {model_name!r}")
    n_modes = MODEL_MODE_COUNTS[model_name]
    default_obs = tuple(f"{kind}{k}" for k in range(n_modes) for kind in ("Q", "P", "N"))
    return RunConfig(
        model_name=model_name,
        model_params=model_params,
        integrator=integrator,
        truncation=truncation,
        t_final=values["t_final"],
        sample_interval=values.get("sample_interval", 1),
        observables=values.get("observables", default_obs),
        trajectories=values.get("trajectories", 1),
        master_seed=values.get("seed", 0),
        poincare_period=values.get("poincare.period"),
        poincare_offset=values.get("poincare.offset", 0.0),
        output_dir=values.get("output", "mqsd-output"),
        workers=values.get("workers", 1),
        initial_q=values.get("initial.q"),
        initial_p=values.get("initial.p"),
        initial_n=values.get("initial.n"),
        oracle_capacities=values.get("oracle.capacities"),
        oracle_dt=values.get("oracle.dt"),
    )


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def render_config(config: RunConfig) -> str:
    """Canonical text form of a resolved configuration (rerunnable as-is)."""
    lines = [f"model = {config.model_name}"]
    for key in sorted(config.model_params):
        lines.append(f"model.{key} = {config.model_params[key]!r}")
    lines += [
        f"t_final = {config.t_final!r}",
        f"sample_interval = {config.sample_interval}",
        f"observables = {' '.join(config.observables)}",
        f"trajectories = {config.trajectories}",
        f"seed = {config.master_seed}",
        f"workers = {config.workers}",
        f"output = {config.output_dir}",
        f"integrator.dt = {config.integrator.dt!r}",
        f"integrator.renormalize_every_step = {config.integrator.renormalize_every_step}",
        f"truncation.epsilon = {config.truncation.epsilon!r}",
        f"truncation.pad_size = {config.truncation.pad_size}",
        f"truncation.min_capacity = {config.truncation.min_capacity}",
        f"truncation.max_capacity = {config.truncation.max_capacity}",
        f"truncation.check_interval = {config.truncation.check_interval}",
    ]
    if config.initial_q is not None:
        lines.append("initial.q = " + " ".join(repr(v) for v in config.initial_q))
    if config.initial_p is not None:
        lines.append("initial.p = " + " ".join(repr(v) for v in config.initial_p))
    if config.initial_n is not None:
        lines.append("initial.n = " + " ".join(str(v) for v in config.initial_n))
    if config.poincare_period is not None:
        lines.append(f"poincare.period = {config.poincare_period!r}")
        lines.append(f"poincare.offset = {config.poincare_offset!r}")
    if config.oracle_capacities is not None:
        lines.append(
            "oracle.capacities = " + " ".join(str(c) for c in config.oracle_capacities)
        )
    if config.oracle_dt is not None:
        lines.append(f"oracle.dt = {config.oracle_dt!r}")
    return "\n".join(lines)
