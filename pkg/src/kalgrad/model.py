"""Dynamical-system definitions, built-in test systems, and scenario synthesis.

A discrete model provides the transition ``f(s, u)``, the observation map
``h(s, u)`` returning the mean parameter of the observation family, their
Jacobians (analytic, or central differences as a fallback), and a
deterministic input path ``u_t`` indexed by t >= 1.

Scenarios pair a model with an observation family: the ground-truth
trajectory follows the noiseless dynamics exactly, and observations are
sampled from the family at the true predicted mean.  Randomness comes from
a counter-based Philox stream keyed by the scenario seed, so generation is
a pure function of (model, family, horizon, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from . import expfam
from .errors import NonFiniteError, UnknownModelError
from .numerics import ANALYTIC, JacobianSpec, fd_jacobian

Array = np.ndarray
Map = Callable[[Array, Array], Array]


@dataclass(frozen=True)
class DynamicalModel:
    """Discrete-time system s_t = f(s_{t-1}, u_t), yhat_t = h(s_t, u_t)."""

    name: str
    dim_state: int
    dim_input: int
    dim_obs: int
    f: Map
    h: Map
    inputs: Callable[[int], Array]
    init_state: Array
    jacobian_f: Map | None = None
    jacobian_h: Map | None = None
    jac_spec: JacobianSpec = field(default_factory=JacobianSpec)

    def input_at(self, t: int) -> Array:
        return np.asarray(self.inputs(t), dtype=float).reshape(self.dim_input)

    def jac_f(self, s: Array, u: Array) -> Array:
        if self.jacobian_f is not None and self.jac_spec.mode == ANALYTIC:
            return np.asarray(self.jacobian_f(s, u), dtype=float)
        return fd_jacobian(lambda v: self.f(v, u), s, self.jac_spec.step)

    def jac_h(self, s: Array, u: Array) -> Array:
        if self.jacobian_h is not None and self.jac_spec.mode == ANALYTIC:
            return np.asarray(self.jacobian_h(s, u), dtype=float)
        return fd_jacobian(lambda v: self.h(v, u), s, self.jac_spec.step)


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time system ds/dt = f(s, u_t), observed through h plus noise.

    ``obs_cov`` maps time to the observation covariance R_t and ``obs_path``
    is a smooth observation signal y(t) used by the continuous filters.
    """

    name: str
    dim_state: int
    dim_input: int
    dim_obs: int
    f: Map
    h: Map
    input_fn: Callable[[float], Array]
    obs_cov: Callable[[float], Array]
    obs_path: Callable[[float], Array]
    init_state: Array
    jacobian_f: Map | None = None
    jacobian_h: Map | None = None
    jac_spec: JacobianSpec = field(default_factory=JacobianSpec)

    def input_at(self, t: float) -> Array:
        return np.asarray(self.input_fn(t), dtype=float).reshape(self.dim_input)

    def jac_f(self, s: Array, u: Array) -> Array:
        if self.jacobian_f is not None and self.jac_spec.mode == ANALYTIC:
            return np.asarray(self.jacobian_f(s, u), dtype=float)
        return fd_jacobian(lambda v: self.f(v, u), s, self.jac_spec.step)

    def jac_h(self, s: Array, u: Array) -> Array:
        if self.jacobian_h is not None and self.jac_spec.mode == ANALYTIC:
            return np.asarray(self.jacobian_h(s, u), dtype=float)
        return fd_jacobian(lambda v: self.h(v, u), s, self.jac_spec.step)


@dataclass(frozen=True)
class Scenario:
    """Ground-truth trajectory plus sampled observations for one model/family."""

    model: DynamicalModel
    family: expfam.ObservationFamily
    true_states: Array  # (T+1, dim_state), noiseless
    observations: list  # length T; vectors or integer labels per family
    seed: int

    @property
    def horizon(self) -> int:
        return len(self.observations)

    def obs(self, t: int):
        """Observation y_t for 1 <= t <= T."""
        return self.observations[t - 1]


def step_dynamics(model: DynamicalModel, s: Array, t: int) -> Array:
    """Advance the noiseless dynamics one step: f(s, u_t)."""
    u = model.input_at(t)
    out = np.asarray(model.f(np.asarray(s, dtype=float), u), dtype=float)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"transition produced non-finite state at t = {t}")
    return out


def generate_scenario(
    model: DynamicalModel,
    family: expfam.ObservationFamily,
    horizon: int,
    seed: int,
) -> Scenario:
    """Simulate the noiseless trajectory and draw observations at each step.

    Deterministic given the seed: the observation stream is a Philox
    generator keyed by it.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = np.random.Generator(np.random.Philox(key=seed))
    states = np.zeros((horizon + 1, model.dim_state))
    states[0] = np.asarray(model.init_state, dtype=float)
    observations = []
    for t in range(1, horizon + 1):
        states[t] = step_dynamics(model, states[t - 1], t)
        yhat = np.asarray(model.h(states[t], model.input_at(t)), dtype=float)
        observations.append(expfam.sample(family, yhat, rng))
    return Scenario(
        model=model,
        family=family,
        true_states=states,
        observations=observations,
        seed=seed,
    )


def scenario_to_csv(scenario: Scenario, path) -> None:
    """Write the ground truth and observations as a regression fixture.

    Values are printed with 17 significant digits, so a written scenario
    reloads bit-identically.
    """
    fam = scenario.family
    obs_width = fam.mean_dim if fam.kind == expfam.GAUSSIAN else 1
    header = ["t"] + [f"s_true_{i}" for i in range(scenario.model.dim_state)]
    header += [f"y_{i}" for i in range(obs_width)]
    lines = [",".join(header)]
    for t in range(scenario.horizon + 1):
        row = [float(t), *scenario.true_states[t]]
        if t == 0:
            row += [0.0] * obs_width  # placeholder; no observation at t = 0
        elif fam.kind == expfam.GAUSSIAN:
            row += list(np.asarray(scenario.obs(t), dtype=float))
        else:
            row += [float(scenario.obs(t))]
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def scenario_from_csv(path, model: DynamicalModel, family: expfam.ObservationFamily, seed: int = 0) -> Scenario:
    """Reload a scenario fixture written by :func:`scenario_to_csv`."""
    lines = Path(path).read_text().splitlines()
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    horizon = len(rows) - 1
    states = np.array([row[1 : 1 + model.dim_state] for row in rows])
    observations = []
    for row in rows[1:]:
        obs_vals = row[1 + model.dim_state :]
        if family.kind == expfam.GAUSSIAN:
            observations.append(np.asarray(obs_vals))
        else:
            observations.append(int(obs_vals[0]))
    if len(observations) != horizon:
        raise ValueError("malformed scenario fixture")
    return Scenario(
        model=model,
        family=family,
        true_states=states,
        observations=observations,
        seed=seed,
    )


# --- built-in systems ----------------------------------------------------

_TANH_COUPLING = np.array([[0.0, 1.0], [-1.0, -0.5]])  # spectral norm ~1.28 < 2
_TANH_GAIN = 0.1  # keeps ||dF - I|| <= gain * ||coupling|| < 1, so F stays invertible

_ROT = 0.99 * np.array(
    [[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]]
)

_EMPTY = np.zeros(0)


def _static_inputs(t: int) -> Array:
    return np.array([np.cos(0.7 * t + 0.3), np.sin(1.3 * t - 0.2)])


def _logistic_inputs(t: int) -> Array:
    return np.array([np.cos(0.9 * t + 0.5), np.sin(0.6 * t - 0.8)])


def _make_static() -> DynamicalModel:
    return DynamicalModel(
        name="static",
        dim_state=2,
        dim_input=2,
        dim_obs=1,
        f=lambda s, u: s,
        h=lambda s, u: np.array([s @ u]),
        jacobian_f=lambda s, u: np.eye(2),
        jacobian_h=lambda s, u: u[None, :].copy(),
        inputs=_static_inputs,
        init_state=np.array([0.8, -0.5]),
    )


def _make_linear2d() -> DynamicalModel:
    return DynamicalModel(
        name="linear2d",
        dim_state=2,
        dim_input=0,
        dim_obs=2,
        f=lambda s, u: _ROT @ s,
        h=lambda s, u: s.copy(),
        jacobian_f=lambda s, u: _ROT.copy(),
        jacobian_h=lambda s, u: np.eye(2),
        inputs=lambda t: _EMPTY,
        init_state=np.array([1.0, 0.0]),
    )


def _tanhspring_f(s: Array, u: Array) -> Array:
    return s + _TANH_GAIN * np.tanh(_TANH_COUPLING @ s)


def _tanhspring_jac(s: Array, u: Array) -> Array:
    gain = 1.0 - np.tanh(_TANH_COUPLING @ s) ** 2
    return np.eye(2) + _TANH_GAIN * gain[:, None] * _TANH_COUPLING


def _make_tanhspring() -> DynamicalModel:
    # Full-state observation: a fixed rank-one h would leave one direction
    # of the Fisher metric fed only through the weak dynamics coupling,
    # which turns ill-conditioned under strong fading.
    return DynamicalModel(
        name="tanhspring",
        dim_state=2,
        dim_input=0,
        dim_obs=2,
        f=_tanhspring_f,
        h=lambda s, u: s.copy(),
        jacobian_f=_tanhspring_jac,
        jacobian_h=lambda s, u: np.eye(2),
        inputs=lambda t: _EMPTY,
        init_state=np.array([1.0, -1.0]),
    )


def _logistic_h(s: Array, u: Array) -> Array:
    return np.array([expit(s @ u)])


def _logistic_jac_h(s: Array, u: Array) -> Array:
    p = expit(s @ u)
    return (p * (1.0 - p)) * u[None, :]


def _make_logistic_static() -> DynamicalModel:
    return DynamicalModel(
        name="logistic-static",
        dim_state=2,
        dim_input=2,
        dim_obs=1,
        f=lambda s, u: s,
        h=_logistic_h,
        jacobian_f=lambda s, u: np.eye(2),
        jacobian_h=_logistic_jac_h,
        inputs=_logistic_inputs,
        init_state=np.array([1.2, -0.7]),
    )


def _make_pendulum_ct() -> ContinuousModel:
    return ContinuousModel(
        name="pendulum-ct",
        dim_state=2,
        dim_input=0,
        dim_obs=1,
        f=lambda s, u: np.array([s[1], -np.sin(s[0])]),
        h=lambda s, u: s[:1].copy(),
        jacobian_f=lambda s, u: np.array([[0.0, 1.0], [-np.cos(s[0]), 0.0]]),
        jacobian_h=lambda s, u: np.array([[1.0, 0.0]]),
        input_fn=lambda t: _EMPTY,
        obs_cov=lambda t: np.array([[1.0]]),
        obs_path=lambda t: np.array([1.2 * np.cos(0.9 * t) + 0.1 * np.sin(2.3 * t)]),
        init_state=np.array([0.8, 0.0]),
    )


def _make_linear_ct() -> ContinuousModel:
    return ContinuousModel(
        name="linear-ct",
        dim_state=1,
        dim_input=0,
        dim_obs=1,
        f=lambda s, u: -0.3 * s,
        h=lambda s, u: s.copy(),
        jacobian_f=lambda s, u: np.array([[-0.3]]),
        jacobian_h=lambda s, u: np.array([[1.0]]),
        input_fn=lambda t: _EMPTY,
        obs_cov=lambda t: np.array([[1.0]]),
        obs_path=lambda t: np.array([0.9 * np.exp(-0.3 * t) + 0.05 * np.sin(2.0 * t)]),
        init_state=np.array([1.0]),
    )


_BUILTINS: dict[str, Callable[[], DynamicalModel | ContinuousModel]] = {
    "static": _make_static,
    "linear2d": _make_linear2d,
    "tanhspring": _make_tanhspring,
    "logistic-static": _make_logistic_static,
    "pendulum-ct": _make_pendulum_ct,
    "linear-ct": _make_linear_ct,
}


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


def builtin(name: str) -> DynamicalModel | ContinuousModel:
    """Return a registered built-in model by name."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownModelError(
            f"unknown model {name!r}; available: {', '.join(builtin_names())}"
        ) from None
    return factory()
