"""Analytic empirical variational Bayesian matrix factorization.

Given a matrix observed under i.i.d. Gaussian noise, the empirical-VB
posterior admits a closed form: singular values below a threshold are
discarded, the rest are shrunk, and the noise variance (when not supplied)
is the minimizer of a free-energy objective over a bracketed interval.

With L <= M the matrix shape, alpha = L/M and taubar = 2.5129*sqrt(alpha):

    threshold     = sqrt(M * sigma2 * (1 + taubar) * (1 + alpha/taubar))
    shrinkage     d_i = (g_i/2) * [ 1 - (L+M)*sigma2/g_i^2
                    + sqrt((1 - (L+M)*sigma2/g_i^2)^2 - 4*L*M*sigma2^2/g_i^4) ]

and the free energy, with x_i = g_i^2/(M*sigma2), xubar = (1+taubar)(1+alpha/taubar)
and tau(x) = (x - (1+alpha) + sqrt((x - (1+alpha))^2 - 4*alpha)) / 2:

    F(sigma2) = sum_{x_i <= xubar} (x_i - log x_i)
              + sum_{x_i > xubar} [ x_i - tau(x_i) + log((tau(x_i)+1)/x_i)
                                    + alpha*log(tau(x_i)/alpha + 1) ]
              + residual/(M*sigma2) + (L - H)*log sigma2

where H counts the retained SVD components and residual is the Frobenius
energy outside them. Exactly-zero singular values are folded into the
(L - H)*log sigma2 term, which is their analytic limit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from ranktune.errors import NumericalError, ValidationError
from ranktune.tensors import UnfoldedMatrix

# Coefficient of the empirical-VB threshold curve.
TAU_UBAR_COEF = 2.5129

# Noise variance reported for an all-zero matrix: the smallest positive
# normal double, i.e. "the minimum positive bound".
MIN_NOISE_VARIANCE = float(np.finfo(np.float64).tiny)

# Relative floor on the bracket's lower bound; keeps the objective finite
# when the spectrum has exact zeros below the retained part.
_LO_FLOOR_REL = 1e-15

_MINIMIZER_XATOL = 1e-9
_MINIMIZER_MAXITER = 200


@dataclass(frozen=True)
class FactorizationResult:
    """Low-rank spectrum of one matrix: retained rank, shrunk values, noise."""

    rank: int
    shrunk_singular_values: np.ndarray
    raw_singular_values: np.ndarray
    noise_variance: float
    rows: int
    cols: int
    noise_bounds_degenerate: bool = False


class NoiseEstimate(NamedTuple):
    value: float
    degenerate: bool


def _tau(x: np.ndarray, alpha: float) -> np.ndarray:
    return 0.5 * (x - (1 + alpha) + np.sqrt((x - (1 + alpha)) ** 2 - 4 * alpha))


def free_energy(sigma2: float, L: int, M: int, singular_values: np.ndarray, residual: float) -> float:
    """Empirical-VB free energy; positive singular values only."""
    sv = np.asarray(singular_values, dtype=np.float64)
    H = len(sv)
    alpha = L / M
    taubar = TAU_UBAR_COEF * np.sqrt(alpha)
    xubar = (1 + taubar) * (1 + alpha / taubar)
    x = sv**2 / (M * sigma2)
    above = x > xubar
    z_hi = x[above]
    z_lo = x[~above]
    t = _tau(z_hi, alpha)
    val = (
        np.sum(z_lo - np.log(z_lo))
        + np.sum(z_hi - t)
        + np.sum(np.log((t + 1) / z_hi))
        + alpha * np.sum(np.log(t / alpha + 1))
        + residual / (M * sigma2)
        + (L - H) * np.log(sigma2)
    )
    return float(val)


def noise_variance_bounds(
    singular_values: np.ndarray, L: int, M: int, residual: float = 0.0
) -> tuple[float, float]:
    """Bracket [lo, hi] for the free-energy minimization."""
    sv = np.asarray(singular_values, dtype=np.float64)
    alpha = L / M
    taubar = TAU_UBAR_COEF * np.sqrt(alpha)
    xubar = (1 + taubar) * (1 + alpha / taubar)
    hi = float((np.sum(sv**2) + residual) / (L * M))
    k = int(np.ceil(L / (1 + alpha))) - 1  # 0-based index of the (k+1)-th value
    lo = max(float(sv[k] ** 2) / (M * xubar), float(np.mean(sv[k:] ** 2)) / M)
    lo = max(lo, hi * _LO_FLOOR_REL)
    return lo, hi


def estimate_noise_variance(
    singular_values: np.ndarray, L: int, M: int, residual: float = 0.0
) -> NoiseEstimate:
    """Minimize the free energy over the bracketed noise-variance interval.

    Requires L <= M and at least one positive singular value. Degenerate
    brackets (lo >= hi) return the upper bound with the flag set.
    """
    sv = np.sort(np.asarray(singular_values, dtype=np.float64))[::-1]
    if L > M:
        raise ValidationError(f"expected L <= M, got L={L}, M={M}")
    if len(sv) != L:
        raise ValidationError(f"expected {L} singular values, got {len(sv)}")
    positive = sv[sv > 0]
    if len(positive) == 0:
        raise ValidationError("need at least one positive singular value")
    lo, hi = noise_variance_bounds(sv, L, M, residual)
    if lo >= hi * (1 - 1e-12):  # no usable bracket (up to rounding): take the boundary
        return NoiseEstimate(hi, True)
    # Rescale so the bracket starts at 1; the argmin is scale-equivariant.
    scale = 1.0 / lo
    result = minimize_scalar(
        free_energy,
        bounds=(1.0, hi * scale),
        args=(L, M, positive * np.sqrt(scale), residual * scale),
        method="bounded",
        options={"xatol": _MINIMIZER_XATOL, "maxiter": _MINIMIZER_MAXITER},
    )
    if not result.success:
        raise NumericalError(
            f"noise-variance minimizer failed on bracket [{lo:.3e}, {hi:.3e}]: {result.message}"
        )
    return NoiseEstimate(float(result.x / scale), False)


def evbmf(matrix: UnfoldedMatrix | np.ndarray, noise_variance: float | None = None) -> FactorizationResult:
    """Factorize a matrix into retained shrunk singular values plus noise.

    Orientation is normalized to rows <= cols first (transposition leaves
    the spectrum unchanged). An all-zero matrix yields rank 0 with the
    minimum positive noise variance; it is not an error.
    """
    data = matrix.data if isinstance(matrix, UnfoldedMatrix) else np.asarray(matrix)
    data = data.astype(np.float64, copy=False)
    if data.ndim != 2 or min(data.shape) < 1:
        raise ValidationError(f"expected a non-empty 2-D matrix, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValidationError("matrix contains non-finite values")
    if noise_variance is not None and not (np.isfinite(noise_variance) and noise_variance > 0):
        raise ValidationError(f"noise_variance must be positive and finite, got {noise_variance}")

    if data.shape[0] > data.shape[1]:
        data = data.T
    L, M = data.shape
    alpha = L / M
    taubar = TAU_UBAR_COEF * np.sqrt(alpha)

    sv = np.linalg.svd(data, compute_uv=False)
    residual = max(float(np.sum(data**2) - np.sum(sv**2)), 0.0)

    degenerate = False
    if noise_variance is None:
        if np.all(sv == 0):
            noise_variance = MIN_NOISE_VARIANCE
        else:
            noise_variance, degenerate = estimate_noise_variance(sv, L, M, residual)

    threshold = np.sqrt(M * noise_variance * (1 + taubar) * (1 + alpha / taubar))
    rank = int(np.sum(sv > threshold))
    g = sv[:rank]
    t = 1 - (L + M) * noise_variance / g**2
    shrunk = (g / 2) * (t + np.sqrt(t**2 - 4 * L * M * noise_variance**2 / g**4))
    return FactorizationResult(
        rank=rank,
        shrunk_singular_values=shrunk,
        raw_singular_values=sv,
        noise_variance=float(noise_variance),
        rows=L,
        cols=M,
        noise_bounds_degenerate=degenerate,
    )
