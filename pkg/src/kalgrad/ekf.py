"""Discrete-time extended Kalman filter with exponential-family observations.

The transition step supports an explicit process-noise sequence or the
pure fading-memory choice Q_t = alpha_t F P F^T, under which

    P_pred = (1 + alpha_t) F P F^T.

Three algebraically equivalent observation updates are provided:

* gain form:        K = P_pred H^T (H P_pred H^T + R)^-1,
                    P = (I - K H) P_pred,  s += K (T(y) - yhat)
* information form: P^-1 = P_pred^-1 + H^T R^-1 H,  s += P H^T R^-1 (T(y) - yhat)
* gradient form:    same P; the state moves along the score of the
                    observation family preconditioned by P.

Here R is the covariance of the sufficient statistics at the predicted
mean, so the generalized filter covers Bernoulli and categorical outputs
with the same equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expfam
from .errors import NonFiniteError
from .model import DynamicalModel, Scenario
from .numerics import solve_psd, symmetrize

GAIN = "gain"
INFORMATION = "information"
GRADIENT = "gradient"

FADING = "fading"
GENERAL = "general"


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian posterior approximation: mean state and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


@dataclass(frozen=True)
class EkfConfig:
    """Noise model and observation-update form for one filter run.

    ``alpha`` is the fading-memory schedule indexed by step (alpha[t-1] is
    used at time t); ``process_noise`` is either one PSD matrix reused at
    every step or a sequence indexed the same way.
    """

    noise_mode: str = FADING
    alpha: np.ndarray | float = 0.0
    process_noise: np.ndarray | list | None = None
    update_form: str = GAIN

    def __post_init__(self) -> None:
        if self.noise_mode not in (FADING, GENERAL):
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")
        if self.update_form not in (GAIN, INFORMATION, GRADIENT):
            raise ValueError(f"unknown update form {self.update_form!r}")
        if self.noise_mode == FADING:
            alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
            if np.any(alpha < 0):
                raise ValueError("fading-memory weights must be >= 0")
        elif self.process_noise is None:
            raise ValueError("general noise mode requires process_noise")

    def alpha_at(self, t: int) -> float:
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        return float(alpha[0]) if alpha.size == 1 else float(alpha[t - 1])

    def noise_at(self, t: int, dim: int) -> np.ndarray:
        q = self.process_noise
        if isinstance(q, (list, tuple)):
            q = q[t - 1]
        q = symmetrize(np.asarray(q, dtype=float))
        if q.shape != (dim, dim):
            raise ValueError("process noise has wrong shape")
        if np.linalg.eigvalsh(q).min() < -1e-12 * max(np.linalg.norm(q), 1.0):
            raise ValueError("process noise must be positive semi-definite")
        return q


@dataclass(frozen=True)
class FilterStep:
    t: int
    mean_pred: np.ndarray
    cov_pred: np.ndarray
    yhat: np.ndarray
    mean_post: np.ndarray
    cov_post: np.ndarray


@dataclass(frozen=True)
class FilterTrace:
    prior: GaussianBelief
    steps: list[FilterStep] = field(default_factory=list)

    def means(self) -> np.ndarray:
        """Posterior means stacked over t = 0..T (row 0 is the prior)."""
        rows = [self.prior.mean] + [s.mean_post for s in self.steps]
        return np.stack(rows)

    def covs(self) -> np.ndarray:
        rows = [self.prior.cov] + [s.cov_post for s in self.steps]
        return np.stack(rows)


def transition(
    belief: GaussianBelief,
    model: DynamicalModel,
    t: int,
    config: EkfConfig,
) -> tuple[GaussianBelief, np.ndarray, np.ndarray]:
    """Propagate the belief through the dynamics; returns (pred, yhat, F).

    Fading mode: P_pred = (1 + alpha_t) F P F^T.
    General mode: P_pred = F P F^T + Q_t.
    """
    u = model.input_at(t)
    mean_pred = np.asarray(model.f(belief.mean, u), dtype=float)
    if not np.all(np.isfinite(mean_pred)):
        raise NonFiniteError(f"transition produced non-finite mean at t = {t}")
    f_jac = model.jac_f(belief.mean, u)
    ppf = f_jac @ belief.cov @ f_jac.T
    if config.noise_mode == FADING:
        cov_pred = (1.0 + config.alpha_at(t)) * ppf
    else:
        cov_pred = ppf + config.noise_at(t, model.dim_state)
    cov_pred = symmetrize(cov_pred)
    yhat = np.asarray(model.h(mean_pred, u), dtype=float)
    if not np.all(np.isfinite(yhat)):
        raise NonFiniteError(f"observation map non-finite at t = {t}")
    return GaussianBelief(mean_pred, cov_pred), yhat, f_jac


def observe_gain(
    predicted: GaussianBelief,
    y,
    yhat: np.ndarray,
    model: DynamicalModel,
    family: expfam.ObservationFamily,
    t: int,
) -> GaussianBelief:
    """Classical gain-form update on the innovation T(y) - yhat."""
    u = model.input_at(t)
    h_jac = model.jac_h(predicted.mean, u)
    innov = expfam.sufficient_stats(family, y) - yhat
    r = expfam.cov_suffstats(family, yhat)
    s_mat = symmetrize(h_jac @ predicted.cov @ h_jac.T + r)
    # K = P H^T S^-1, via the SPD solve on S.
    gain = solve_psd(s_mat, h_jac @ predicted.cov).T
    cov = symmetrize((np.eye(model.dim_state) - gain @ h_jac) @ predicted.cov)
    return GaussianBelief(predicted.mean + gain @ innov, cov)


def _information_cov(
    predicted: GaussianBelief,
    h_jac: np.ndarray,
    r: np.ndarray,
) -> np.ndarray:
    """Posterior covariance from P^-1 = P_pred^-1 + H^T R^-1 H."""
    dim = predicted.cov.shape[0]
    prec_pred = solve_psd(predicted.cov, np.eye(dim))
    prec = symmetrize(prec_pred + h_jac.T @ solve_psd(r, h_jac))
    return symmetrize(solve_psd(prec, np.eye(dim)))


def observe_information(
    predicted: GaussianBelief,
    y,
    yhat: np.ndarray,
    model: DynamicalModel,
    family: expfam.ObservationFamily,
    t: int,
) -> GaussianBelief:
    """Inverse-covariance update; the state moves by P H^T R^-1 (T(y) - yhat)."""
    u = model.input_at(t)
    h_jac = model.jac_h(predicted.mean, u)
    innov = expfam.sufficient_stats(family, y) - yhat
    r = expfam.cov_suffstats(family, yhat)
    cov = _information_cov(predicted, h_jac, r)
    mean = predicted.mean + cov @ (h_jac.T @ solve_psd(r, innov))
    return GaussianBelief(mean, cov)


def observe_gradient(
    predicted: GaussianBelief,
    y,
    yhat: np.ndarray,
    model: DynamicalModel,
    family: expfam.ObservationFamily,
    t: int,
) -> GaussianBelief:
    """Preconditioned-gradient update: s += P (d log p / d s)^T.

    The score with respect to the state chains the family score through
    the observation Jacobian.
    """
    u = model.input_at(t)
    h_jac = model.jac_h(predicted.mean, u)
    r = expfam.cov_suffstats(family, yhat)
    cov = _information_cov(predicted, h_jac, r)
    score_state = expfam.grad_logp_wrt_mean(family, y, yhat) @ h_jac
    return GaussianBelief(predicted.mean + cov @ score_state, cov)


_OBSERVERS = {
    GAIN: observe_gain,
    INFORMATION: observe_information,
    GRADIENT: observe_gradient,
}


def run(
    scenario: Scenario,
    config: EkfConfig,
    init_mean,
    init_cov,
) -> FilterTrace:
    """Filter the scenario's observations from the given Gaussian prior."""
    belief = GaussianBelief(init_mean, init_cov)
    observe = _OBSERVERS[config.update_form]
    steps = []
    prior = belief
    for t in range(1, scenario.horizon + 1):
        predicted, yhat, _ = transition(belief, scenario.model, t, config)
        belief = observe(predicted, scenario.obs(t), yhat, scenario.model, scenario.family, t)
        steps.append(
            FilterStep(
                t=t,
                mean_pred=predicted.mean,
                cov_pred=predicted.cov,
                yhat=yhat,
                mean_post=belief.mean,
                cov_post=belief.cov,
            )
        )
    return FilterTrace(prior=prior, steps=steps)
