"""Gaussian-process belief engine.

Squared-exponential covariance with diagonal length-scales, posterior
inference over *noisy* outputs, correlated sampling and the
log-determinant information-gain term.

Every gram matrix built here carries the noise variance on its diagonal,
for the conditioning block and for the target block alike, so beliefs are
over measurements ``z`` rather than the latent field ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidInputError, NumericalError

Location = Tuple[float, ...]

_JITTER = 1e-10


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the squared-exponential GP prior."""

    prior_mean: float = 0.0
    signal_variance: float = 1.0
    noise_variance: float = 1e-5
    length_scales: Tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(float(v) for v in self.length_scales))
        if not self.noise_variance > 0:
            raise InvalidInputError("noise_variance must be > 0")
        if self.signal_variance < 0:
            raise InvalidInputError("signal_variance must be >= 0")
        if not self.length_scales or any(not v > 0 for v in self.length_scales):
            raise InvalidInputError("length_scales must be non-empty and positive")

    @property
    def dim(self) -> int:
        return len(self.length_scales)


def as_points(points, dim: int | None = None) -> np.ndarray:
    """Coerce a location or a sequence of locations into an ``(n, d)`` array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :] if arr.size else arr.reshape(0, dim or 0)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a list of locations, got shape {arr.shape}")
    if dim is not None and arr.shape[0] and arr.shape[1] != dim:
        raise InvalidInputError(f"location dimension {arr.shape[1]} != kernel dimension {dim}")
    return arr


class ObservationSet:
    """Visited locations and their noisy measurements, in visit order.

    Instances are treated as immutable; :meth:`extend` returns a new set.
    """

    __slots__ = ("locations", "measurements")

    def __init__(self, locations, measurements, dim: int | None = None):
        locs = np.asarray(locations, dtype=float)
        if locs.size == 0:
            locs = locs.reshape(0, dim if dim is not None else (locs.shape[-1] if locs.ndim == 2 else 0))
        locs = as_points(locs, dim)
        z = np.asarray(measurements, dtype=float).reshape(-1)
        if locs.shape[0] != z.shape[0]:
            raise InvalidInputError(
                f"{locs.shape[0]} locations but {z.shape[0]} measurements"
            )
        locs.setflags(write=False)
        z.setflags(write=False)
        self.locations = locs
        self.measurements = z

    @classmethod
    def empty(cls, dim: int) -> "ObservationSet":
        return cls(np.zeros((0, dim)), np.zeros(0), dim=dim)

    def __len__(self) -> int:
        return int(self.measurements.shape[0])

    @property
    def dim(self) -> int:
        return int(self.locations.shape[1])

    def extend(self, locations, measurements) -> "ObservationSet":
        locs = as_points(locations, self.dim)
        return ObservationSet(
            np.vstack([self.locations, locs]),
            np.concatenate([self.measurements, np.asarray(measurements, dtype=float).reshape(-1)]),
            dim=self.dim,
        )

    def __repr__(self) -> str:
        return f"ObservationSet(n={len(self)}, dim={self.dim})"


@dataclass(frozen=True)
class PosteriorBelief:
    """Gaussian belief over the noisy outputs at a set of target locations."""

    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.mean.shape[0])


def kernel_cov(a, b, params: KernelParams) -> float:
    """Latent covariance between two single locations."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape or a.shape[0] != params.dim:
        raise InvalidInputError(
            f"dimension mismatch: {a.shape[0]}, {b.shape[0]} vs kernel {params.dim}"
        )
    scaled = (a - b) / np.asarray(params.length_scales)
    return float(params.signal_variance * np.exp(-0.5 * scaled @ scaled))


def cross_cov(A, B, params: KernelParams) -> np.ndarray:
    """Latent covariance matrix between two location sets (no noise term)."""
    A = as_points(A, params.dim) / np.asarray(params.length_scales)
    B = as_points(B, params.dim) / np.asarray(params.length_scales)
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.maximum(sq, 0.0, out=sq)
    return params.signal_variance * np.exp(-0.5 * sq)


def noisy_gram(A, params: KernelParams) -> np.ndarray:
    A = as_points(A, params.dim)
    K = cross_cov(A, A, params)
    K[np.diag_indices_from(K)] = params.signal_variance + params.noise_variance
    return K


def cholesky(matrix: np.ndarray, params: KernelParams) -> np.ndarray:
    """Lower Cholesky factor with a single jitter retry."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER * params.signal_variance
    try:
        return np.linalg.cholesky(matrix + jitter * np.eye(matrix.shape[0]))
    except np.linalg.LinAlgError as exc:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(matrix)
        raise NumericalError(
            f"Cholesky failed on a {matrix.shape[0]}x{matrix.shape[0]} gram "
            f"(condition number {cond:.3e}, jitter {jitter:.1e})"
        ) from exc


class ConditioningFactor:
    """Cholesky factor of the noisy gram over a fixed set of conditioning locations.

    Grows by block updates, so appending ``m`` points to ``n`` costs
    ``O(n^2 m)`` instead of a fresh ``O(n^3)`` factorization.
    """

    __slots__ = ("params", "locations", "chol")

    def __init__(self, params: KernelParams, locations=None, chol=None):
        self.params = params
        if locations is None:
            locations = np.zeros((0, params.dim))
        self.locations = as_points(locations, params.dim).reshape(-1, params.dim)
        if chol is None:
            chol = (
                cholesky(noisy_gram(self.locations, params), params)
                if len(self.locations)
                else np.zeros((0, 0))
            )
        self.chol = chol

    def __len__(self) -> int:
        return int(self.locations.shape[0])

    def project(self, targets) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(V, prior_block)`` with ``V = L^{-1} K_{s,targets}``."""
        targets = as_points(targets, self.params.dim)
        prior_block = noisy_gram(targets, self.params)
        if len(self) == 0:
            return np.zeros((0, targets.shape[0])), prior_block
        cross = cross_cov(self.locations, targets, self.params)
        V = solve_triangular(self.chol, cross, lower=True, check_finite=False)
        return V, prior_block

    def regression(self, targets) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(W, cov)``: regression weights ``K_ts K_ss^{-1}`` and posterior covariance."""
        V, prior_block = self.project(targets)
        cov = prior_block - V.T @ V
        cov = 0.5 * (cov + cov.T)
        if len(self) == 0:
            return np.zeros((cov.shape[0], 0)), cov
        W = solve_triangular(self.chol.T, V, lower=False, check_finite=False).T
        return W, cov

    def extend(self, new_locations) -> "ConditioningFactor":
        new_locations = as_points(new_locations, self.params.dim)
        V, prior_block = self.project(new_locations)
        schur = prior_block - V.T @ V
        D = cholesky(0.5 * (schur + schur.T), self.params)
        n, m = len(self), new_locations.shape[0]
        chol = np.zeros((n + m, n + m))
        chol[:n, :n] = self.chol
        chol[n:, :n] = V.T
        chol[n:, n:] = D
        return ConditioningFactor(
            self.params, np.vstack([self.locations, new_locations]), chol
        )


def posterior(targets, data: ObservationSet, params: KernelParams,
              factor: ConditioningFactor | None = None) -> PosteriorBelief:
    """Posterior belief over noisy outputs at ``targets`` given ``data``.

    ``factor`` may be passed to reuse a factorization of ``data.locations``.
    """
    targets = as_points(targets, params.dim)
    if targets.shape[0] == 0:
        raise InvalidInputError("targets must be non-empty")
    if factor is None:
        factor = ConditioningFactor(params, data.locations)
    elif len(factor) != len(data):
        raise InvalidInputError("factor does not match the conditioning data")
    W, cov = factor.regression(targets)
    mean = params.prior_mean + W @ (data.measurements - params.prior_mean)
    return PosteriorBelief(mean=mean, covariance=cov, chol=cholesky(cov, params))


def sample_outputs(belief: PosteriorBelief, n: int, rng) -> np.ndarray:
    """Draw ``n`` correlated output vectors as ``mean + chol @ x`` with ``x`` standard normal."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    x = np.asarray(rng.standard_normal((n, belief.size)), dtype=float)
    return belief.mean[None, :] + x @ belief.chol.T


def log_det_gain(covariance: np.ndarray, noise_variance: float) -> float:
    shifted = np.eye(covariance.shape[0]) + covariance / noise_variance
    try:
        L = np.linalg.cholesky(shifted)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("information gain: shifted covariance is not positive definite") from exc
    value = float(np.sum(np.log(np.diag(L))))
    if not np.isfinite(value):
        raise NumericalError(f"information gain is not finite ({value})")
    return value


def info_gain(belief: PosteriorBelief, noise_variance: float) -> float:
    """``0.5 log|I + Sigma / noise_variance|`` for the belief's covariance."""
    return log_det_gain(belief.covariance, noise_variance)


def stack_locations(parts: Sequence[np.ndarray], dim: int) -> np.ndarray:
    parts = [as_points(p, dim) for p in parts if len(p)]
    return np.vstack(parts) if parts else np.zeros((0, dim))
