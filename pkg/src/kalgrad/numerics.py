"""Dense linear-algebra and calculus utilities shared by the filters.

Everything here is a pure function of its inputs; matrices are small and
dense (state dimensions of a few at most), so factorization-based solves
and fixed-step integration are the right tools.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import NonFiniteError, SingularMatrixError

# Diagonal jitter ladder used to rescue marginally non-PD solves, scaled
# by trace(A)/dim.  Exhausting the ladder is a hard failure.
_JITTER_SCALES = (1e-12, 1e-10, 1e-8)

_TINY = float(np.finfo(float).tiny)

ANALYTIC = "analytic"
FINITE_DIFFERENCE = "finite-difference"


@dataclass(frozen=True)
class JacobianSpec:
    """How a model Jacobian is obtained: analytically or by central differences.

    ``step`` applies to finite differences only; ``None`` selects the
    per-coordinate default cbrt(eps) * (1 + |x_j|).
    """

    mode: str = ANALYTIC
    step: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in (ANALYTIC, FINITE_DIFFERENCE):
            raise ValueError(f"unknown jacobian mode: {self.mode!r}")
        if self.step is not None and not self.step > 0:
            raise ValueError("finite-difference step must be > 0")


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T) / 2."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("symmetrize expects a square matrix")
    return 0.5 * (a + a.T)


def _chol_small(a: np.ndarray, n: int):
    """Lower Cholesky factor of a 1x1 or 2x2 matrix, or None if not PD."""
    if n == 1:
        d = a[0, 0]
        if not d > 0:
            return None
        return (np.sqrt(d),)
    l00_sq = a[0, 0]
    if not l00_sq > 0:
        return None
    l00 = np.sqrt(l00_sq)
    l10 = a[1, 0] / l00
    d = a[1, 1] - l10 * l10
    if not d > 0:
        return None
    return (l00, l10, np.sqrt(d))


def _chol_solve_small(factor, b: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return b / (factor[0] * factor[0])
    l00, l10, l11 = factor
    y0 = b[0] / l00
    y1 = (b[1] - l10 * y0) / l11
    x1 = y1 / l11
    x0 = (y0 - l10 * x1) / l00
    if b.ndim == 1:
        return np.array((x0, x1))
    return np.stack([x0, x1])


def solve_psd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric positive definite A without forming A^{-1}.

    Uses a Cholesky factorization plus one step of iterative refinement.
    If the factorization fails, diagonal jitter delta * trace(A)/dim is
    added for delta in {1e-12, 1e-10, 1e-8} before giving up; the residual
    is then measured against the jittered matrix actually solved.

    Dimensions 1 and 2 take a closed-form path; the semantics match the
    general factorization route.

    Raises
    ------
    SingularMatrixError
        If positive definiteness cannot be restored within the jitter
        budget, or the relative residual stays above 1e-10.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("solve_psd expects a square matrix")
    small = n <= 2

    factor = None
    a_used = a
    for attempt in range(1 + len(_JITTER_SCALES)):
        a_used = a if attempt == 0 else a + (_JITTER_SCALES[attempt - 1] * np.trace(a) / n) * np.eye(n)
        if small:
            factor = _chol_small(a_used, n)
            if factor is not None:
                break
        else:
            try:
                factor = scipy.linalg.cho_factor(a_used, lower=True)
                break
            except scipy.linalg.LinAlgError:
                factor = None
    if factor is None:
        raise SingularMatrixError(
            "matrix is not positive definite within the jitter budget"
        )

    if small:
        x = _chol_solve_small(factor, b, n)
        resid = b - a_used @ x
        x = x + _chol_solve_small(factor, resid, n)
    else:
        x = scipy.linalg.cho_solve(factor, b)
        # One refinement pass keeps the residual near machine precision.
        resid = b - a_used @ x
        x = x + scipy.linalg.cho_solve(factor, resid)
    final = b - a_used @ x
    scale = max(float(np.sqrt((b * b).sum())), _TINY)
    rel = float(np.sqrt((final * final).sum())) / scale
    if not rel <= 1e-10:
        raise SingularMatrixError(
            f"SPD solve residual {rel:.3e} exceeds 1e-10; matrix too ill-conditioned"
        )
    return x


def fd_jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    step: float | None = None,
) -> np.ndarray:
    """Central-difference Jacobian of a vector map at x.

    Column j is (fn(x + h_j e_j) - fn(x - h_j e_j)) / (2 h_j), with
    h_j = step if given, else cbrt(eps) * (1 + |x_j|), the usual
    central-difference balance of truncation against roundoff.

    Raises
    ------
    NonFiniteError
        If the map returns a non-finite value at any probe point.
    """
    x = np.asarray(x, dtype=float)
    if step is not None and not step > 0:
        raise ValueError("step must be > 0")
    f0 = np.asarray(fn(x), dtype=float)
    if not np.all(np.isfinite(f0)):
        raise NonFiniteError("map is non-finite at the expansion point")
    n = x.size
    jac = np.zeros((f0.size, n))
    for j in range(n):
        h = step if step is not None else np.cbrt(np.finfo(float).eps) * (1.0 + abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        f_plus = np.asarray(fn(x + e), dtype=float)
        f_minus = np.asarray(fn(x - e), dtype=float)
        if not (np.all(np.isfinite(f_plus)) and np.all(np.isfinite(f_minus))):
            raise NonFiniteError(f"map is non-finite at a probe point for column {j}")
        jac[:, j] = (f_plus - f_minus) / (2.0 * h)
    return jac


def rk4_step(
    deriv: Callable[[float, np.ndarray], np.ndarray],
    state: np.ndarray,
    t: float,
    dt: float,
) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of size dt from time t.

    Raises
    ------
    NonFiniteError
        If any of the four stage evaluations is non-finite.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    state = np.asarray(state, dtype=float)

    def stage(tau: float, y: np.ndarray) -> np.ndarray:
        k = np.asarray(deriv(tau, y), dtype=float)
        if not np.all(np.isfinite(k)):
            raise NonFiniteError(f"derivative non-finite at t = {tau}")
        return k

    k1 = stage(t, state)
    k2 = stage(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = stage(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = stage(t + dt, state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
