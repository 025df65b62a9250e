"""Kernels and squared maximum mean discrepancy estimators.

Kernels are radial, ``k(x, y) = phi(||x - y||^2)``, which keeps the gradient
of an MMD estimate with respect to the samples a short closed form.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from fairbound.core import TooFewSamples

GAUSSIAN = "gaussian"
RATIONAL_QUADRATIC = "rq"


@dataclasses.dataclass(frozen=True)
class KernelSpec:
    family: str = RATIONAL_QUADRATIC
    lengthscale: float = 2.0 * math.sqrt(2.0)
    shape: float = 2.0

    def __post_init__(self):
        family = self.family.lower()
        if family in ("rational_quadratic", "rationalquadratic"):
            family = RATIONAL_QUADRATIC
        if family not in (GAUSSIAN, RATIONAL_QUADRATIC):
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", family)
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if not self.shape > 0:
            raise ValueError("shape must be positive")

    def profile(self, d2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Kernel value and its derivative with respect to the squared distance."""
        l2 = self.lengthscale**2
        if self.family == GAUSSIAN:
            k = np.exp(-d2 / (2.0 * l2))
            return k, -k / (2.0 * l2)
        inv = 1.0 / (1.0 + d2 / (2.0 * self.shape * l2))
        # integer shapes (the default 2) avoid the slow general power
        k = inv ** int(self.shape) if float(self.shape).is_integer() else inv**self.shape
        return k, -(k * inv) / (2.0 * l2)


def _as_samples(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def sq_distances(X, Y) -> np.ndarray:
    X, Y = _as_samples(X), _as_samples(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d2 = (X * X).sum(axis=1)[:, None] + (Y * Y).sum(axis=1)[None, :] - 2.0 * (X @ Y.T)
    return np.maximum(d2, 0.0)


def kernel_matrix(spec: KernelSpec, X, Y) -> np.ndarray:
    return spec.profile(sq_distances(X, Y))[0]


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """``k(x, y)`` for two vectors of equal dimension.

    >>> round(kernel_eval(KernelSpec("gaussian", 1.0), [0.0], [1.0]), 4)
    0.6065
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError("vectors differ in dimension")
    d2 = float(np.dot(x - y, x - y))
    return float(spec.profile(np.array(d2))[0])


def _pair_weights(m: int, n: int, unbiased: bool) -> np.ndarray:
    """Weights ``W`` with ``MMD^2 = sum_ij W_ij k(z_i, z_j)`` over ``z = [X; Y]``."""
    W = np.empty((m + n, m + n))
    if unbiased:
        W[:m, :m] = 1.0 / (m * (m - 1))
        W[m:, m:] = 1.0 / (n * (n - 1))
        np.fill_diagonal(W, 0.0)
    else:
        W[:m, :m] = 1.0 / (m * m)
        W[m:, m:] = 1.0 / (n * n)
    W[:m, m:] = -1.0 / (m * n)
    W[m:, :m] = -1.0 / (m * n)
    return W


def _check_sizes(m, n, minimum):
    if m < minimum or n < minimum:
        raise TooFewSamples(f"need at least {minimum} samples per side, got {m} and {n}")


_BLOCK = 2048


def _kernel_sum(spec: KernelSpec, X, Y=None) -> float:
    """Sum of ``k(x_i, y_j)`` over all pairs, in fixed row blocks to bound memory.

    With ``Y`` omitted, sums over distinct pairs of ``X`` (diagonal excluded).
    """
    same = Y is None
    Y = X if same else Y
    total = 0.0
    for i in range(0, len(X), _BLOCK):
        for j in range(0, len(Y), _BLOCK):
            d2 = sq_distances(X[i:i + _BLOCK], Y[j:j + _BLOCK])
            K = spec.profile(d2)[0]
            if same and i == j:
                np.fill_diagonal(K, 0.0)
            total += float(K.sum())
    return total


def _canonical_pair(X, Y):
    # fixed argument order makes the cross term bitwise symmetric in (X, Y)
    if (len(X), X.tobytes()) > (len(Y), Y.tobytes()):
        return Y, X
    return X, Y


def mmd2_unbiased(X, Y, spec: KernelSpec = KernelSpec()) -> float:
    """Unbiased U-statistic estimate of the squared MMD; can be negative."""
    X, Y = _as_samples(X), _as_samples(Y)
    m, n = len(X), len(Y)
    _check_sizes(m, n, 2)
    xx = _kernel_sum(spec, X) / (m * (m - 1))
    yy = _kernel_sum(spec, Y) / (n * (n - 1))
    return float(xx + yy - 2.0 * _kernel_sum(spec, *_canonical_pair(X, Y)) / (m * n))


def mmd2_biased(X, Y, spec: KernelSpec = KernelSpec()) -> float:
    """V-statistic estimate of the squared MMD, diagonal terms included."""
    X, Y = _as_samples(X), _as_samples(Y)
    m, n = len(X), len(Y)
    _check_sizes(m, n, 1)
    xx = (_kernel_sum(spec, X) + m) / m**2
    yy = (_kernel_sum(spec, Y) + n) / n**2
    value = xx + yy - 2.0 * _kernel_sum(spec, *_canonical_pair(X, Y)) / (m * n)
    # the V-statistic is a squared RKHS norm; clip rounding noise below zero
    return float(max(value, 0.0))


def mmd2_with_grad(X, Y, spec: KernelSpec = KernelSpec(), unbiased: bool = True):
    """Squared MMD estimate and its gradients with respect to every sample.

    Returns ``(value, grad_X, grad_Y)``.  With ``W`` the symmetric pair
    weights and ``k = phi(d^2)``, the gradient for sample ``z_i`` is
    ``4 * sum_j W_ij phi'(d_ij^2) (z_i - z_j)``.
    """
    X, Y = _as_samples(X), _as_samples(Y)
    m, n = len(X), len(Y)
    _check_sizes(m, n, 2 if unbiased else 1)
    Z = np.vstack([X, Y])
    W = _pair_weights(m, n, unbiased)
    K, dK = spec.profile(sq_distances(Z, Z))
    value = float((W * K).sum())
    C = W * dK
    grad = 4.0 * (C.sum(axis=1)[:, None] * Z - C @ Z)
    return value, grad[:m], grad[m:]
