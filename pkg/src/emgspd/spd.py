r"""SPD edge matrices and Log-Cholesky geometry.

Windows of z-scored EMG become Gram matrices of channel inner products,
regularized toward a scaled identity so they are strictly positive definite.
Under the Log-Cholesky metric the Fréchet mean has a closed form: average the
strictly lower triangular parts of the Cholesky factors and take the geometric
mean of their diagonals,

.. math::

    \bar L = \tfrac1n \sum_i \lfloor L_i \rfloor
             + \exp\big(\tfrac1n \sum_i \log \mathbb D(L_i)\big),
    \qquad F = \bar L \bar L^\top .

The eigenvectors of ``F`` give one fixed basis ``Q`` that approximately
diagonalizes every frame through the congruence ``Q^T E Q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, DefinitenessError, NumericError, ParameterError


def edge_matrix(window) -> np.ndarray:
    """Unnormalized Gram matrix ``X X^T`` of a (channels, samples) window.

    Works on a stack of windows with shape (..., channels, samples) too.
    """
    x = np.asarray(window, dtype=np.float64)
    if x.shape[-1] < 1:
        raise DataError("window has no samples")
    if not np.all(np.isfinite(x)):
        raise DataError("window contains non-finite values")
    return np.matmul(x, np.swapaxes(x, -1, -2))


def regularize(E, eta=0.1) -> np.ndarray:
    """Shrink toward the identity: ``(1 - eta) E + eta * trace(E) * I``."""
    E = np.asarray(E, dtype=np.float64)
    if not 0 <= eta <= 1:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    tr = np.trace(E, axis1=-2, axis2=-1)
    if np.any(tr <= 0):
        raise DataError("edge matrix has non-positive trace (all-zero window?)")
    n = E.shape[-1]
    return (1.0 - eta) * E + (eta * tr)[..., None, None] * np.eye(n)


def _failing_pivot(A) -> int:
    # Column-oriented Cholesky, used only to locate the first bad pivot.
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0:
            return j
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return -1


def cholesky(E) -> np.ndarray:
    """Lower-triangular factor with positive diagonal; stacks are supported."""
    E = np.asarray(E, dtype=np.float64)
    try:
        return np.linalg.cholesky(E)
    except np.linalg.LinAlgError:
        stack = E.reshape(-1, E.shape[-2], E.shape[-1])
        for k, A in enumerate(stack):
            pivot = _failing_pivot(A)
            if pivot >= 0:
                where = f"matrix {k}, " if stack.shape[0] > 1 else ""
                raise DefinitenessError(
                    f"matrix is not positive definite ({where}pivot {pivot})", pivot=pivot
                ) from None
        raise


class FrechetAccumulator:
    """Streaming Log-Cholesky mean.

    Holds the running sum of strictly-lower parts and of log-diagonals, so
    factors can be added in batches and partial accumulators merged in any
    grouping.
    """

    def __init__(self, dim):
        self.dim = dim
        self.count = 0
        self.lower_sum = np.zeros((dim, dim))
        self.logdiag_sum = np.zeros(dim)

    def add(self, factors):
        L = np.asarray(factors, dtype=np.float64)
        if L.ndim == 2:
            L = L[None]
        if L.shape[1:] != (self.dim, self.dim):
            raise ParameterError(f"expected {self.dim}x{self.dim} factors, got {L.shape[1:]}")
        diag = np.diagonal(L, axis1=1, axis2=2)
        if np.any(diag <= 0):
            raise DefinitenessError("Cholesky factor with non-positive diagonal")
        self.lower_sum += np.tril(L, -1).sum(axis=0)
        self.logdiag_sum += np.log(diag).sum(axis=0)
        self.count += L.shape[0]
        return self

    def add_matrices(self, E):
        return self.add(cholesky(E))

    def merge(self, other: "FrechetAccumulator"):
        if other.dim != self.dim:
            raise ParameterError("cannot merge accumulators of different dimension")
        self.lower_sum += other.lower_sum
        self.logdiag_sum += other.logdiag_sum
        self.count += other.count
        return self

    def mean_factor(self) -> np.ndarray:
        if self.count == 0:
            raise ParameterError("Fréchet mean of an empty set")
        return self.lower_sum / self.count + np.diag(np.exp(self.logdiag_sum / self.count))

    def mean(self) -> np.ndarray:
        L = self.mean_factor()
        return L @ L.T


def frechet_mean(factors) -> np.ndarray:
    """Log-Cholesky Fréchet mean of SPD matrices given by their Cholesky factors."""
    factors = np.asarray(factors, dtype=np.float64)
    if factors.ndim != 3 or factors.shape[0] == 0:
        raise ParameterError("need a non-empty stack of square factors")
    return FrechetAccumulator(factors.shape[-1]).add(factors).mean()


@dataclass
class Eigenbasis:
    """Orthonormal ``Q`` (columns are eigenvectors) and descending eigenvalues."""

    Q: np.ndarray
    eigenvalues: np.ndarray

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.Q * self.eigenvalues) @ self.Q.T

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim), np.ones(dim))


def eigenbasis(F) -> Eigenbasis:
    """Eigendecomposition with deterministic order and signs.

    Eigenvalues are sorted descending; each eigenvector is flipped so that its
    largest-magnitude entry is positive (first such entry on ties).
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ParameterError("eigenbasis needs a square matrix")
    try:
        w, V = np.linalg.eigh((F + F.T) / 2)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from None
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return Eigenbasis(V * signs, w)


def diagonalize(E, basis: Eigenbasis) -> np.ndarray:
    """Congruence ``Q^T E Q`` (full matrix kept); broadcasts over stacks."""
    E = np.asarray(E, dtype=np.float64)
    if E.shape[-1] != basis.dim or E.shape[-2] != basis.dim:
        raise ParameterError(f"matrix dim {E.shape[-2:]} does not match basis dim {basis.dim}")
    Q = basis.Q
    sigma = np.matmul(np.matmul(Q.T, E), Q)
    # averaging with the transpose makes the result exactly symmetric
    return 0.5 * (sigma + np.swapaxes(sigma, -1, -2))


def log_cholesky_distance(E1, E2) -> float:
    L1, L2 = cholesky(E1), cholesky(E2)
    lower = np.tril(L1, -1) - np.tril(L2, -1)
    logd = np.log(np.diag(L1)) - np.log(np.diag(L2))
    return float(np.sqrt(np.sum(lower**2) + np.sum(logd**2)))
