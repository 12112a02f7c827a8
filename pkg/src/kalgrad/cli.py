"""Batch front-end: parse flat key=value configs, run filters or
equivalence comparisons, and emit CSV traces plus plain-text summaries.

Exit codes: 0 success (or comparison pass), 1 configuration error,
2 numerical failure, 3 comparison tolerance failure.
"""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bucy as bucy_mod
from . import ekf as ekf_mod
from . import equivalence as eq_mod
from . import expfam
from . import model as model_mod
from . import natgrad as ngd_mod
from .errors import ConfigError, NumericalError, UnknownModelError

RUN_MODES = ("ekf", "natgrad", "bucy", "cngd")
COMPARE_MODES = ("discrete", "continuous")

_RAMP_RE = re.compile(r"^ramp\(\s*([^,]+)\s*,\s*([^)]+)\s*\)$")


@dataclass
class RunConfig:
    """Declarative description of one run or comparison."""

    scenario: str
    family: str | None = None
    obs_cov: list[float] | None = None
    classes: int | None = None
    horizon: float | None = None
    dt: float | None = None
    dt_list: list[float] | None = None
    seed: int = 0
    s0: list[float] | None = None
    p0_scale: float = 1.0
    p0_diag: list[float] | None = None
    alpha_spec: str = "0.0"
    alpha_overrides: dict[int, float] = field(default_factory=dict)
    eta0: float = 0.5
    fisher_mode: str = "exact"
    mc_samples: int = 1
    tol: float | None = None
    out: str | None = None
    mutate: str | None = None


def _parse_floats(value: str) -> list[float]:
    return [float(part) for part in value.split(",") if part.strip()]


def parse_config(path: str | Path) -> RunConfig:
    """Read a flat key = value file with # comments and alpha[t] overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw: dict[str, str] = {}
    overrides: dict[int, float] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        m = re.match(r"^alpha\[(\d+)\]$", key)
        if m:
            overrides[int(m.group(1))] = float(value)
            continue
        raw[key] = value

    if "scenario" not in raw:
        raise ConfigError("missing required field: scenario")

    cfg = RunConfig(scenario=raw.pop("scenario"), alpha_overrides=overrides)
    try:
        if "family" in raw:
            cfg.family = raw.pop("family")
        if "obs_cov" in raw:
            cfg.obs_cov = _parse_floats(raw.pop("obs_cov"))
        if "classes" in raw:
            cfg.classes = int(raw.pop("classes"))
        if "T" in raw:
            cfg.horizon = float(raw.pop("T"))
        if "dt" in raw:
            cfg.dt = float(raw.pop("dt"))
        if "dt_list" in raw:
            cfg.dt_list = _parse_floats(raw.pop("dt_list"))
        if "seed" in raw:
            cfg.seed = int(raw.pop("seed"))
        if "s0" in raw:
            cfg.s0 = _parse_floats(raw.pop("s0"))
        if "p0_scale" in raw:
            cfg.p0_scale = float(raw.pop("p0_scale"))
        if "p0" in raw:
            cfg.p0_diag = _parse_floats(raw.pop("p0"))
        if "alpha" in raw:
            cfg.alpha_spec = raw.pop("alpha")
        if "eta0" in raw:
            cfg.eta0 = float(raw.pop("eta0"))
        if "fisher_mode" in raw:
            mode = raw.pop("fisher_mode")
            m = re.match(r"^mc\((\d+)\)$", mode)
            if m:
                cfg.fisher_mode = "mc"
                cfg.mc_samples = int(m.group(1))
            else:
                cfg.fisher_mode = mode
        if "tol" in raw:
            cfg.tol = float(raw.pop("tol"))
        if "out" in raw:
            cfg.out = raw.pop("out")
        if "mutate" in raw:
            cfg.mutate = raw.pop("mutate")
    except ValueError as exc:
        raise ConfigError(f"invalid field value: {exc}") from exc
    if raw:
        raise ConfigError(f"unknown field: {sorted(raw)[0]}")
    return cfg


def _alpha_schedule(cfg: RunConfig, horizon: int) -> np.ndarray:
    """Expand the alpha spec (constant | list | ramp(a, b)) over t = 1..T."""
    spec = cfg.alpha_spec.strip()
    m = _RAMP_RE.match(spec)
    if m:
        lo, hi = float(m.group(1)), float(m.group(2))
        steps = np.arange(horizon, dtype=float)
        alpha = lo + (hi - lo) * steps / max(horizon - 1, 1)
    else:
        values = _parse_floats(spec)
        if len(values) == 1:
            alpha = np.full(horizon, values[0])
        elif len(values) == horizon:
            alpha = np.asarray(values)
        else:
            raise ConfigError(
                f"invalid field alpha: need 1 or {horizon} values, got {len(values)}"
            )
    for t, value in cfg.alpha_overrides.items():
        if not 1 <= t <= horizon:
            raise ConfigError(f"invalid field alpha[{t}]: t outside 1..{horizon}")
        alpha[t - 1] = value
    if np.any(alpha < 0):
        raise ConfigError("invalid field alpha: weights must be >= 0")
    return alpha


def _alpha_fn(cfg: RunConfig, horizon: float):
    """Alpha as a function of continuous time."""
    spec = cfg.alpha_spec.strip()
    m = _RAMP_RE.match(spec)
    if m:
        lo, hi = float(m.group(1)), float(m.group(2))
        return lambda t: lo + (hi - lo) * t / horizon
    values = _parse_floats(spec)
    if len(values) != 1:
        raise ConfigError("invalid field alpha: continuous runs need a constant or ramp")
    return float(values[0])


def _build_family(cfg: RunConfig, model: model_mod.DynamicalModel) -> expfam.ObservationFamily:
    if cfg.family is None:
        raise ConfigError("missing required field: family")
    if cfg.family == "gaussian":
        if cfg.obs_cov is None:
            raise ConfigError("missing required field: obs_cov (gaussian family)")
        diag = cfg.obs_cov
        if len(diag) == 1:
            diag = diag * model.dim_obs
        if len(diag) != model.dim_obs:
            raise ConfigError(
                f"invalid field obs_cov: need 1 or {model.dim_obs} entries"
            )
        return expfam.gaussian(np.diag(diag))
    if cfg.family == "bernoulli":
        return expfam.bernoulli()
    if cfg.family == "categorical":
        if cfg.classes is None:
            raise ConfigError("missing required field: classes (categorical family)")
        return expfam.categorical(cfg.classes)
    raise ConfigError(f"invalid field family: {cfg.family!r}")


def _init_state(cfg: RunConfig, model) -> np.ndarray:
    if cfg.s0 is None:
        return np.asarray(model.init_state, dtype=float)
    if len(cfg.s0) != model.dim_state:
        raise ConfigError(f"invalid field s0: need {model.dim_state} entries")
    return np.asarray(cfg.s0, dtype=float)


def _init_cov(cfg: RunConfig, dim: int) -> np.ndarray:
    if cfg.p0_diag is not None:
        if len(cfg.p0_diag) != dim:
            raise ConfigError(f"invalid field p0: need {dim} entries")
        if any(v <= 0 for v in cfg.p0_diag):
            raise ConfigError("invalid field p0: diagonal must be positive")
        return np.diag(cfg.p0_diag)
    if cfg.p0_scale <= 0:
        raise ConfigError("invalid field p0_scale: must be positive")
    return cfg.p0_scale * np.eye(dim)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _require_discrete(model, name: str):
    if not isinstance(model, model_mod.DynamicalModel):
        raise ConfigError(f"invalid field scenario: {name!r} is not a discrete model")


def _require_continuous(model, name: str):
    if not isinstance(model, model_mod.ContinuousModel):
        raise ConfigError(f"invalid field scenario: {name!r} is not a continuous model")


def _obs_columns(scenario: model_mod.Scenario) -> tuple[list[str], np.ndarray]:
    """Observation columns: raw vectors for gaussian, one label column else."""
    fam = scenario.family
    horizon = scenario.horizon
    if fam.kind == expfam.GAUSSIAN:
        width = fam.mean_dim
        block = np.zeros((horizon + 1, width))
        for t in range(1, horizon + 1):
            block[t] = np.asarray(scenario.obs(t), dtype=float)
    else:
        width = 1
        block = np.zeros((horizon + 1, 1))
        for t in range(1, horizon + 1):
            block[t, 0] = float(scenario.obs(t))
    names = [f"y_{i}" for i in range(width)]
    return names, block


def cmd_run(config_path: str, mode: str, out_dir: str | None = None) -> int:
    """Run one filter or flow and write trace.csv / summary.txt."""
    if mode not in RUN_MODES:
        raise ConfigError(f"unknown run mode {mode!r}; choose from {RUN_MODES}")
    cfg = parse_config(config_path)
    out = Path(out_dir or cfg.out or ".")
    try:
        system = model_mod.builtin(cfg.scenario)
    except UnknownModelError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.horizon is None:
        raise ConfigError("missing required field: T")

    out.mkdir(parents=True, exist_ok=True)
    summary: list[str] = [f"mode = {mode}", f"scenario = {cfg.scenario}"]

    if mode in ("ekf", "natgrad"):
        _require_discrete(system, cfg.scenario)
        horizon = int(cfg.horizon)
        family = _build_family(cfg, system)
        scenario = model_mod.generate_scenario(system, family, horizon, cfg.seed)
        s0 = _init_state(cfg, system)
        p0 = _init_cov(cfg, system.dim_state)
        alpha = _alpha_schedule(cfg, horizon)
        if mode == "ekf":
            trace = ekf_mod.run(
                scenario, ekf_mod.EkfConfig(noise_mode=ekf_mod.FADING, alpha=alpha), s0, p0
            )
            estimates = trace.means()
        else:
            hyper = eq_mod.map_alpha_to_eta(alpha, cfg.eta0, horizon)
            metric0 = cfg.eta0 * np.linalg.inv(p0)
            grad_cfg = ngd_mod.NatGradConfig(
                eta=hyper.eta[1:] if horizon else 1.0,
                gamma=hyper.gamma if horizon else 1.0,
                fisher_mode=cfg.fisher_mode,
                mc_samples=cfg.mc_samples,
            )
            trace = ngd_mod.run(scenario, grad_cfg, s0, metric0)
            estimates = trace.states()
        y_names, y_block = _obs_columns(scenario)
        header = (
            ["t"]
            + [f"s_true_{i}" for i in range(system.dim_state)]
            + y_names
            + [f"s_est_{i}" for i in range(system.dim_state)]
        )
        rows = [
            [float(t), *scenario.true_states[t], *y_block[t], *estimates[t]]
            for t in range(horizon + 1)
        ]
        summary.append(f"T = {horizon}")
        summary.append(f"seed = {cfg.seed}")
        summary.append("note = y columns at t = 0 are zero placeholders (no observation)")
    else:
        _require_continuous(system, cfg.scenario)
        if cfg.dt is None:
            raise ConfigError("missing required field: dt")
        horizon = float(cfg.horizon)
        alpha = _alpha_fn(cfg, horizon)
        icfg = bucy_mod.IntegratorConfig(dt=cfg.dt, horizon=horizon, alpha=alpha)
        s0 = _init_state(cfg, system)
        p0 = _init_cov(cfg, system.dim_state)
        dim = system.dim_state
        if mode == "bucy":
            trace = bucy_mod.integrate(
                bucy_mod.BUCY, bucy_mod.BucyState(s0, p0), system, icfg
            )
            mat_names = [f"p_{i}_{j}" for i in range(dim) for j in range(dim)]
            mats = trace.covs
            extra = None
        else:
            metric0 = cfg.eta0 * np.linalg.inv(p0)
            trace = bucy_mod.integrate(
                bucy_mod.CNGD, bucy_mod.CngdState(s0, metric0, cfg.eta0), system, icfg
            )
            mat_names = [f"j_{i}_{j}" for i in range(dim) for j in range(dim)]
            mats = trace.metrics
            extra = trace.etas
        header = (
            ["t"]
            + [f"y_{i}" for i in range(system.dim_obs)]
            + [f"s_{i}" for i in range(dim)]
            + mat_names
            + (["eta"] if extra is not None else [])
        )
        rows = []
        for i, t in enumerate(trace.times):
            row = [t, *system.obs_path(t), *trace.states[i], *mats[i].ravel()]
            if extra is not None:
                row.append(extra[i])
            rows.append(row)
        summary.append(f"T = {horizon}")
        summary.append(f"dt = {cfg.dt}")

    _write_csv(out / "trace.csv", header, rows)
    summary.append(f"rows = {len(rows)}")
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    return 0


def cmd_compare(
    config_path: str,
    mode: str,
    out_dir: str | None = None,
    tol: float | None = None,
    mutate: str | None = None,
) -> int:
    """Run the matched filter/gradient pair and report deviations."""
    if mode not in COMPARE_MODES:
        raise ConfigError(f"unknown compare mode {mode!r}; choose from {COMPARE_MODES}")
    cfg = parse_config(config_path)
    out = Path(out_dir or cfg.out or ".")
    mutate = mutate if mutate is not None else cfg.mutate
    try:
        system = model_mod.builtin(cfg.scenario)
    except UnknownModelError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.horizon is None:
        raise ConfigError("missing required field: T")
    out.mkdir(parents=True, exist_ok=True)
    summary: list[str] = [f"mode = {mode}", f"scenario = {cfg.scenario}"]

    if mode == "discrete":
        _require_discrete(system, cfg.scenario)
        horizon = int(cfg.horizon)
        family = _build_family(cfg, system)
        scenario = model_mod.generate_scenario(system, family, horizon, cfg.seed)
        s0 = _init_state(cfg, system)
        p0 = _init_cov(cfg, system.dim_state)
        alpha = _alpha_schedule(cfg, horizon)
        use_tol = tol if tol is not None else (cfg.tol if cfg.tol is not None else 1e-8)
        if mutate is not None and mutate not in eq_mod.MUTATIONS:
            raise ConfigError(
                f"invalid field mutate: {mutate!r}; known: {eq_mod.MUTATIONS}"
            )
        report = eq_mod.check_discrete(
            scenario, s0, p0, alpha, tol=use_tol, eta0=cfg.eta0, mutate=mutate
        )
        y_names, y_block = _obs_columns(scenario)
        dim = system.dim_state
        header = (
            ["t"]
            + [f"s_true_{i}" for i in range(dim)]
            + y_names
            + [f"s_ekf_{i}" for i in range(dim)]
            + [f"s_ngd_{i}" for i in range(dim)]
            + ["state_dev", "metric_dev"]
        )
        rows = [
            [
                float(t),
                *scenario.true_states[t],
                *y_block[t],
                *report.filter_states[t],
                *report.grad_states[t],
                report.state_devs[t],
                report.metric_devs[t],
            ]
            for t in range(horizon + 1)
        ]
        _write_csv(out / "deviations.csv", header, rows)
        summary += [
            f"max_state_dev = {_fmt(report.max_state_dev)}",
            f"max_metric_dev = {_fmt(report.max_metric_dev)}",
            f"tol = {_fmt(use_tol)}",
            f"mutate = {mutate or 'none'}",
            f"pass = {report.passed}",
        ]
        passed = report.passed
    else:
        _require_continuous(system, cfg.scenario)
        dts = cfg.dt_list or ([cfg.dt] if cfg.dt else None)
        if not dts:
            raise ConfigError("missing required field: dt_list (or dt)")
        use_tol = tol if tol is not None else (cfg.tol if cfg.tol is not None else 1e-6)
        s0 = _init_state(cfg, system)
        p0 = _init_cov(cfg, system.dim_state)
        horizon = float(cfg.horizon)
        alpha = _alpha_fn(cfg, horizon)
        result = eq_mod.check_continuous(
            system, s0, p0, alpha, dts, horizon, tol=use_tol, eta0=cfg.eta0
        )
        rows = []
        for rep in result.reports:
            for i, sd in enumerate(rep.state_devs):
                rows.append([rep.dt, i * rep.dt, sd, rep.metric_devs[i]])
        _write_csv(
            out / "deviations.csv", ["dt", "t", "state_dev", "metric_dev"], rows
        )
        for rep in result.reports:
            summary.append(
                f"dt = {_fmt(rep.dt)} : max_state_dev = {_fmt(rep.max_state_dev)},"
                f" max_metric_dev = {_fmt(rep.max_metric_dev)}"
            )
        summary += [
            f"order_state = {_fmt(result.order_state)}",
            f"order_metric = {_fmt(result.order_metric)}",
            f"tol = {_fmt(use_tol)}",
            f"pass = {result.passed}",
        ]
        passed = result.passed

    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    return 0 if passed else 3


def cmd_list() -> int:
    """Print the built-in scenario names, sorted, one per line."""
    for name in model_mod.builtin_names():
        print(name)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="kalgrad",
        description="Fading-memory Kalman filtering vs. natural gradient descent",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one filter and write its trace")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--mode", required=True, choices=RUN_MODES)
    p_run.add_argument("--out", default=None)

    p_cmp = sub.add_parser("compare", help="run a matched pair and compare traces")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--mode", required=True, choices=COMPARE_MODES)
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--tol", type=float, default=None)
    p_cmp.add_argument("--mutate", default=None)

    sub.add_parser("list", help="list built-in scenario names")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.mode, args.out)
        if args.command == "compare":
            return cmd_compare(args.config, args.mode, args.out, args.tol, args.mutate)
        return cmd_list()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())
