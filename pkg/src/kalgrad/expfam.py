"""Exponential-family observation models in mean parameterization.

Supported families: Gaussian with known covariance, Bernoulli, and
categorical with the last class dropped.  All quantities are expressed in
the mean parameter ``yhat`` (the expected sufficient statistics), so that

* ``cov_suffstats(yhat)`` is the covariance of the sufficient statistics,
  which doubles as the observation covariance in the generalized filter;
* the Fisher matrix with respect to ``yhat`` is ``cov_suffstats(yhat)^-1``;
* the score is ``(T(y) - yhat)^T cov_suffstats(yhat)^-1``.

Categorical distributions keep K-1 free coordinates (probabilities of the
first K-1 classes) so the covariance stays invertible; the full-simplex
parameterization would be singular.

Log-densities are defined up to an additive constant independent of
``yhat``: only differences and gradients with respect to ``yhat`` enter
any downstream update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OutOfSupportError
from .numerics import solve_psd, symmetrize

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
CATEGORICAL = "categorical"

# Mean parameters within _BOUNDARY_TOL of the probability boundary count as
# boundary points: the covariance would be numerically singular there.
_BOUNDARY_TOL = 0.0


@dataclass(frozen=True)
class ObservationFamily:
    """One exponential family, identified by kind plus fixed parameters.

    Use the :func:`gaussian`, :func:`bernoulli`, :func:`categorical`
    constructors instead of instantiating directly.
    """

    kind: str
    obs_cov: np.ndarray | None = None  # gaussian: fixed covariance of y
    num_classes: int | None = None  # categorical: K >= 2

    @property
    def mean_dim(self) -> int:
        if self.kind == GAUSSIAN:
            return self.obs_cov.shape[0]
        if self.kind == BERNOULLI:
            return 1
        return self.num_classes - 1


def gaussian(obs_cov: np.ndarray) -> ObservationFamily:
    """Gaussian observations with fixed, known covariance."""
    r = symmetrize(np.atleast_2d(np.asarray(obs_cov, dtype=float)))
    eigs = np.linalg.eigvalsh(r)
    if eigs.min() <= 0:
        raise ValueError("gaussian observation covariance must be positive definite")
    return ObservationFamily(kind=GAUSSIAN, obs_cov=r)


def bernoulli() -> ObservationFamily:
    """Bernoulli observations; mean parameter is P(y = 1)."""
    return ObservationFamily(kind=BERNOULLI)


def categorical(num_classes: int) -> ObservationFamily:
    """Categorical observations over num_classes outcomes, last class dropped."""
    if num_classes < 2:
        raise ValueError("categorical family needs at least 2 classes")
    return ObservationFamily(kind=CATEGORICAL, num_classes=num_classes)


def _as_mean(family: ObservationFamily, yhat) -> np.ndarray:
    yhat = np.atleast_1d(np.asarray(yhat, dtype=float))
    if yhat.shape != (family.mean_dim,):
        raise ValueError(
            f"mean parameter must have shape ({family.mean_dim},), got {yhat.shape}"
        )
    return yhat


def check_mean(family: ObservationFamily, yhat) -> np.ndarray:
    """Validate that yhat lies strictly inside the family's mean domain."""
    yhat = _as_mean(family, yhat)
    if family.kind == GAUSSIAN:
        if not np.all(np.isfinite(yhat)):
            raise DomainError("gaussian mean must be finite")
        return yhat
    if np.any(yhat <= _BOUNDARY_TOL) or np.any(yhat >= 1.0):
        raise DomainError(f"{family.kind} mean must lie strictly inside (0, 1)")
    if family.kind == CATEGORICAL and yhat.sum() >= 1.0:
        raise DomainError("categorical mean components must sum to less than 1")
    return yhat


def sufficient_stats(family: ObservationFamily, y) -> np.ndarray:
    """Sufficient statistics T(y) as a vector of length mean_dim.

    Gaussian: T(y) = y.  Bernoulli: T(y) = y in {0, 1}.  Categorical:
    one-hot indicator restricted to the first K-1 classes (the reference
    class maps to the zero vector).
    """
    if family.kind == GAUSSIAN:
        t = np.atleast_1d(np.asarray(y, dtype=float))
        if t.shape != (family.mean_dim,):
            raise OutOfSupportError(
                f"gaussian observation must have dimension {family.mean_dim}"
            )
        if not np.all(np.isfinite(t)):
            raise OutOfSupportError("gaussian observation must be finite")
        return t
    label = _as_label(family, y)
    if family.kind == BERNOULLI:
        return np.array([float(label)])
    t = np.zeros(family.num_classes - 1)
    if label < family.num_classes - 1:
        t[label] = 1.0
    return t


def _as_label(family: ObservationFamily, y) -> int:
    y_arr = np.asarray(y)
    if y_arr.size != 1:
        raise OutOfSupportError(f"{family.kind} observation must be a single label")
    val = float(y_arr.reshape(()))
    if val != int(val):
        raise OutOfSupportError(f"{family.kind} observation must be an integer label")
    label = int(val)
    limit = 2 if family.kind == BERNOULLI else family.num_classes
    if not 0 <= label < limit:
        raise OutOfSupportError(
            f"label {label} outside support of {family.kind} with {limit} outcomes"
        )
    return label


def cov_suffstats(family: ObservationFamily, yhat) -> np.ndarray:
    """Covariance of the sufficient statistics at mean parameter yhat.

    Gaussian: the fixed covariance.  Bernoulli: yhat (1 - yhat).
    Categorical: diag(yhat) - yhat yhat^T over the kept classes.

    Raises DomainError if yhat sits on the boundary, where the covariance
    would be singular.
    """
    yhat = check_mean(family, yhat)
    if family.kind == GAUSSIAN:
        return family.obs_cov.copy()
    if family.kind == BERNOULLI:
        return np.array([[yhat[0] * (1.0 - yhat[0])]])
    return symmetrize(np.diag(yhat) - np.outer(yhat, yhat))


def log_density(family: ObservationFamily, y, yhat) -> float:
    """log p(y | yhat) up to an additive constant independent of yhat."""
    yhat = check_mean(family, yhat)
    if family.kind == GAUSSIAN:
        err = sufficient_stats(family, y) - yhat
        return -0.5 * float(err @ solve_psd(family.obs_cov, err))
    label = _as_label(family, y)
    if family.kind == BERNOULLI:
        p = yhat[0]
        return float(np.log(p) if label == 1 else np.log1p(-p))
    if label < family.num_classes - 1:
        return float(np.log(yhat[label]))
    return float(np.log1p(-yhat.sum()))


def grad_logp_wrt_mean(family: ObservationFamily, y, yhat) -> np.ndarray:
    """Row gradient of log p(y | yhat) with respect to the mean parameter.

    Equals (T(y) - yhat)^T cov_suffstats(yhat)^{-1}.
    """
    yhat = check_mean(family, yhat)
    err = sufficient_stats(family, y) - yhat
    return solve_psd(cov_suffstats(family, yhat), err)


def fisher_wrt_mean(family: ObservationFamily, yhat) -> np.ndarray:
    """Fisher information with respect to the mean parameter: cov(T)^{-1}."""
    cov = cov_suffstats(family, yhat)
    return symmetrize(solve_psd(cov, np.eye(cov.shape[0])))


def sample(family: ObservationFamily, yhat, rng: np.random.Generator, size: int | None = None):
    """Draw from p(. | yhat) using the supplied generator.

    With ``size=None`` returns a single observation in the family's native
    representation (vector for gaussian, integer label otherwise); with
    ``size=n`` returns a batch (n x dim array, or length-n integer array).
    """
    yhat = check_mean(family, yhat)
    n = 1 if size is None else int(size)
    if family.kind == GAUSSIAN:
        chol = np.linalg.cholesky(family.obs_cov)
        draws = yhat + rng.standard_normal((n, family.mean_dim)) @ chol.T
        return draws[0] if size is None else draws
    if family.kind == BERNOULLI:
        draws = (rng.random(n) < yhat[0]).astype(np.int64)
    else:
        probs = np.append(yhat, 1.0 - yhat.sum())
        draws = rng.choice(family.num_classes, size=n, p=probs)
    return int(draws[0]) if size is None else draws


def _suffstats_batch(family: ObservationFamily, draws) -> np.ndarray:
    """Sufficient statistics for a batch of draws, one row per draw."""
    if family.kind == GAUSSIAN:
        return np.asarray(draws, dtype=float)
    labels = np.asarray(draws, dtype=np.int64)
    if family.kind == BERNOULLI:
        return labels[:, None].astype(float)
    t = np.zeros((labels.size, family.num_classes - 1))
    kept = labels < family.num_classes - 1
    t[np.nonzero(kept)[0], labels[kept]] = 1.0
    return t


def natgrad_of_expectation(
    family: ObservationFamily,
    yhat,
    fn,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Monte Carlo natural gradient of E[fn(y)] with respect to yhat.

    For exponential families in mean parameterization this equals
    Cov(fn(y), T(y)), estimated here by the unbiased empirical covariance
    over n draws.  With n = 1 the covariance is identically zero.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    yhat = check_mean(family, yhat)
    draws = sample(family, yhat, rng, size=n)
    stats = _suffstats_batch(family, draws)
    if family.kind == GAUSSIAN:
        values = np.array([float(fn(row)) for row in draws])
    else:
        values = np.array([float(fn(int(label))) for label in draws])
    if n == 1:
        return np.zeros(family.mean_dim)
    dv = values - values.mean()
    dt = stats - stats.mean(axis=0)
    return dv @ dt / (n - 1)
