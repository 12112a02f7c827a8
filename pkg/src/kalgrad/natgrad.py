"""Online natural gradient descent in the moving chart of a dynamical system.

The trajectory being estimated is represented, at time t, by its state in
the chart "value at time t".  Advancing the chart by one step pushes the
value through the dynamics and transforms the Fisher metric as a (0,2)
tensor:

    s   <- f(s, u_t)
    J   <- (F^-1)^T J F^-1          (chart transport)
    J_t <- (1 - gamma_t) J + gamma_t * Fisher(yhat_t)
    s   <- s + eta_t J_t^-1 (d log p(y_t | yhat_t) / d s)^T

Three Fisher estimators are available: the exact per-observation Fisher
H^T cov(T)^-1 H, the outer product of the observed score, and a Monte
Carlo average of synthetic-score outer products.  Only the exact mode
participates in equivalence checks against the fading-memory filter.

For static dynamics (f = Id) the chart never moves and the scheme reduces
to the ordinary online natural gradient, provided here as
:func:`plain_online_natgrad` for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expfam
from .errors import NonFiniteError, SingularMatrixError
from .model import DynamicalModel, Scenario
from .numerics import fd_jacobian, solve_psd, symmetrize

EXACT = "exact"
OUTER = "outer"
MONTE_CARLO = "mc"

# Chart changes with condition numbers beyond this are treated as singular:
# the trajectory chart is no longer well-defined.
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class NatGradState:
    """Trajectory expressed in the current chart, plus the metric there."""

    state: np.ndarray
    metric: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float))
        object.__setattr__(self, "metric", np.asarray(self.metric, dtype=float))


@dataclass(frozen=True)
class NatGradConfig:
    """Schedules and Fisher estimation mode.

    ``eta`` and ``gamma`` are indexed by step (entry t-1 applies at time
    t); scalars are broadcast.  ``skip_metric_transport`` disables the
    chart transport of the metric and exists only as a negative control
    for the equivalence checks.
    """

    eta: np.ndarray | float
    gamma: np.ndarray | float
    fisher_mode: str = EXACT
    mc_samples: int = 1
    skip_metric_transport: bool = False

    def __post_init__(self) -> None:
        # eta = 0 (a frozen parameter with the metric still averaging) is
        # allowed; gamma = 0 would stop the metric from ever updating.
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if np.any(eta < 0.0) or np.any(eta > 1.0):
            raise ValueError("eta schedule must lie in [0, 1]")
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if np.any(gamma <= 0.0) or np.any(gamma > 1.0):
            raise ValueError("gamma schedule must lie in (0, 1]")
        if self.fisher_mode not in (EXACT, OUTER, MONTE_CARLO):
            raise ValueError(f"unknown fisher mode {self.fisher_mode!r}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")

    def eta_at(self, t: int) -> float:
        arr = np.atleast_1d(np.asarray(self.eta, dtype=float))
        return float(arr[0]) if arr.size == 1 else float(arr[t - 1])

    def gamma_at(self, t: int) -> float:
        arr = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        return float(arr[0]) if arr.size == 1 else float(arr[t - 1])


@dataclass(frozen=True)
class GradStep:
    t: int
    state_pred: np.ndarray
    metric_pre: np.ndarray  # transported metric, before the Fisher blend
    yhat: np.ndarray
    state_post: np.ndarray
    metric_post: np.ndarray


@dataclass(frozen=True)
class GradTrace:
    prior: NatGradState
    steps: list[GradStep] = field(default_factory=list)

    def states(self) -> np.ndarray:
        rows = [self.prior.state] + [s.state_post for s in self.steps]
        return np.stack(rows)

    def metrics(self) -> np.ndarray:
        rows = [self.prior.metric] + [s.metric_post for s in self.steps]
        return np.stack(rows)


def pushforward_metric(metric: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Transform a (0,2) tensor under the chart change with Jacobian psi.

    Returns (psi^-1)^T J psi^-1 computed with linear solves, symmetrized.

    Raises
    ------
    SingularMatrixError
        If psi is numerically singular (condition estimate above 1e12).
    """
    psi = np.asarray(psi, dtype=float)
    cond = np.linalg.cond(psi)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularMatrixError(
            f"chart-change Jacobian condition estimate {cond:.3e} exceeds {_COND_LIMIT:.0e}"
        )
    half = np.linalg.solve(psi.T, np.asarray(metric, dtype=float))  # (psi^-1)^T J
    return symmetrize(np.linalg.solve(psi.T, half.T).T)  # ... psi^-1


def chart_transport(
    state: NatGradState,
    model: DynamicalModel,
    t: int,
) -> tuple[NatGradState, np.ndarray]:
    """Move from the chart at t-1 to the chart at t; returns (state, F)."""
    u = model.input_at(t)
    value = np.asarray(model.f(state.state, u), dtype=float)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"transition produced non-finite state at t = {t}")
    f_jac = model.jac_f(state.state, u)
    metric = pushforward_metric(state.metric, f_jac)
    return NatGradState(value, metric), f_jac


def fisher_term(
    yhat: np.ndarray,
    h_jac: np.ndarray,
    family: expfam.ObservationFamily,
    mode: str = EXACT,
    y=None,
    rng: np.random.Generator | None = None,
    mc_samples: int = 1,
) -> np.ndarray:
    """Per-observation Fisher contribution with respect to the state.

    exact: H^T cov(T|yhat)^-1 H.
    outer: outer product of the observed score (requires y).
    mc:    average score outer product over mc_samples synthetic draws.
    """
    if mode == EXACT:
        return symmetrize(h_jac.T @ expfam.fisher_wrt_mean(family, yhat) @ h_jac)
    if mode == OUTER:
        if y is None:
            raise ValueError("outer-product mode needs the observed y")
        score = expfam.grad_logp_wrt_mean(family, y, yhat) @ h_jac
        return symmetrize(np.outer(score, score))
    if mode == MONTE_CARLO:
        if rng is None:
            raise ValueError("monte-carlo mode needs an rng")
        draws = expfam.sample(family, yhat, rng, size=mc_samples)
        stats = expfam._suffstats_batch(family, draws)
        prec = expfam.fisher_wrt_mean(family, yhat)
        scores = (stats - yhat) @ prec @ h_jac  # one score row per draw
        return symmetrize(scores.T @ scores / mc_samples)
    raise ValueError(f"unknown fisher mode {mode!r}")


def update(
    state: NatGradState,
    y,
    yhat: np.ndarray,
    model: DynamicalModel,
    family: expfam.ObservationFamily,
    config: NatGradConfig,
    t: int,
    rng: np.random.Generator | None = None,
) -> NatGradState:
    """Blend the Fisher term into the metric and take one natural step.

    Expects ``state`` already transported to the chart at time t.
    """
    u = model.input_at(t)
    h_jac = model.jac_h(state.state, u)
    gamma = config.gamma_at(t)
    fisher = fisher_term(
        yhat, h_jac, family,
        mode=config.fisher_mode, y=y, rng=rng, mc_samples=config.mc_samples,
    )
    metric = symmetrize((1.0 - gamma) * state.metric + gamma * fisher)
    score_state = expfam.grad_logp_wrt_mean(family, y, yhat) @ h_jac
    value = state.state + config.eta_at(t) * solve_psd(metric, score_state)
    return NatGradState(value, metric)


def run(
    scenario: Scenario,
    config: NatGradConfig,
    init_state,
    init_metric,
    rng: np.random.Generator | None = None,
) -> GradTrace:
    """Run the chart-based online natural gradient over a scenario.

    ``rng`` feeds the Monte Carlo Fisher mode only; by default it is a
    Philox stream split off the scenario seed.
    """
    if rng is None:
        rng = np.random.Generator(np.random.Philox(key=scenario.seed).jumped())
    state = NatGradState(init_state, init_metric)
    prior = state
    model = scenario.model
    steps = []
    for t in range(1, scenario.horizon + 1):
        if config.skip_metric_transport:
            u = model.input_at(t)
            value = np.asarray(model.f(state.state, u), dtype=float)
            transported = NatGradState(value, state.metric)
        else:
            transported, _ = chart_transport(state, model, t)
        yhat = np.asarray(model.h(transported.state, model.input_at(t)), dtype=float)
        state = update(
            transported, scenario.obs(t), yhat, model, scenario.family, config, t, rng
        )
        steps.append(
            GradStep(
                t=t,
                state_pred=transported.state,
                metric_pre=transported.metric,
                yhat=yhat,
                state_post=state.state,
                metric_post=state.metric,
            )
        )
    return GradTrace(prior=prior, steps=steps)


def plain_online_natgrad(
    inputs: list,
    observations: list,
    h,
    family: expfam.ObservationFamily,
    config: NatGradConfig,
    init_param,
    init_metric,
    jacobian_h=None,
    rng: np.random.Generator | None = None,
) -> GradTrace:
    """Chartless online natural gradient for a static parameter.

    ``h(theta, u)`` maps the parameter and input to the observation mean;
    ``jacobian_h`` defaults to central differences.  This is the f = Id
    reduction of :func:`run` and serves as its reference implementation.
    """
    if len(inputs) != len(observations):
        raise ValueError("inputs and observations must have equal length")
    theta = np.asarray(init_param, dtype=float)
    metric = np.asarray(init_metric, dtype=float)
    prior = NatGradState(theta, metric)
    steps = []
    for t, (u, y) in enumerate(zip(inputs, observations), start=1):
        u = np.asarray(u, dtype=float)
        yhat = np.asarray(h(theta, u), dtype=float)
        if jacobian_h is not None:
            h_jac = np.asarray(jacobian_h(theta, u), dtype=float)
        else:
            h_jac = fd_jacobian(lambda v: h(v, u), theta)
        gamma = config.gamma_at(t)
        fisher = fisher_term(
            yhat, h_jac, family,
            mode=config.fisher_mode, y=y, rng=rng, mc_samples=config.mc_samples,
        )
        metric_pre = metric
        metric = symmetrize((1.0 - gamma) * metric + gamma * fisher)
        score = expfam.grad_logp_wrt_mean(family, y, yhat) @ h_jac
        theta_new = theta + config.eta_at(t) * solve_psd(metric, score)
        steps.append(
            GradStep(
                t=t,
                state_pred=theta,
                metric_pre=metric_pre,
                yhat=yhat,
                state_post=theta_new,
                metric_post=metric,
            )
        )
        theta = theta_new
    return GradTrace(prior=prior, steps=steps)
