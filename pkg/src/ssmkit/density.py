"""Gaussian kernel density estimation with conditional and constrained sampling.

The estimator is a plain average of Gaussian kernels centered on the data
rows.  On top of it sit the two sampling modes the risk pipeline needs:
conditioning on a subset of coordinates, and restricting draws to an affine
subspace A v = b (the form produced by the truncated-SVD reduction of
situation pairs).  All kernel weights are computed in log space so that
conditioning far from the data degrades gracefully instead of underflowing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class KdeSupportError(ValueError):
    """Raised when a conditioning point carries no usable kernel weight."""


def _as_2d(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("samples must be a 2-D array (rows are data points)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples must be finite")
    return arr


class BandwidthMatrix:
    """Symmetric positive definite smoothing matrix, scalar h^2*I or full."""

    def __init__(self, matrix: np.ndarray, h: float | None = None):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError("bandwidth matrix must be square")
        if not np.allclose(matrix, matrix.T):
            raise ValueError("bandwidth matrix must be symmetric")
        # Cholesky doubles as the SPD check.
        self.cholesky = np.linalg.cholesky(matrix)
        self.matrix = matrix
        self.h = h
        self.dimension = matrix.shape[0]
        self.inverse = np.linalg.inv(matrix)
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(self.cholesky))))

    @classmethod
    def scalar(cls, h: float, dimension: int) -> "BandwidthMatrix":
        if h <= 0:
            raise ValueError("h must be positive")
        return cls(h * h * np.eye(dimension), h=h)

    @property
    def is_scalar(self) -> bool:
        return self.h is not None

    def __repr__(self):
        if self.is_scalar:
            return f"BandwidthMatrix(h={self.h:.6g}, dim={self.dimension})"
        return f"BandwidthMatrix(full, dim={self.dimension})"


def silverman_bandwidth(samples) -> BandwidthMatrix:
    """Rule-of-thumb scalar bandwidth h^2*I.

    h = sigma * (4 / ((D + 2) N))^(1/(D+4)) with sigma the mean of the
    per-dimension sample standard deviations.
    """
    arr = _as_2d(samples)
    n, dim = arr.shape
    if n < 2:
        raise ValueError("need at least two samples")
    sigma = float(np.mean(np.std(arr, axis=0, ddof=1)))
    if sigma == 0.0:
        raise ValueError("all samples identical: zero bandwidth")
    h = sigma * (4.0 / ((dim + 2) * n)) ** (1.0 / (dim + 4))
    return BandwidthMatrix.scalar(h, dim)


@dataclass(frozen=True)
class KdeModel:
    """Immutable sample matrix plus Gaussian bandwidth."""

    samples: np.ndarray
    bandwidth: BandwidthMatrix

    def __post_init__(self):
        arr = _as_2d(self.samples)
        object.__setattr__(self, "samples", arr)
        if arr.shape[1] != self.bandwidth.dimension:
            raise ValueError("bandwidth dimension does not match samples")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def kde_density(model: KdeModel, point) -> float:
    """Average Gaussian kernel density at a point."""
    x = np.asarray(point, dtype=float).ravel()
    if x.size != model.dim:
        raise ValueError(f"point has dimension {x.size}, expected {model.dim}")
    diff = model.samples - x
    quad = np.einsum("ij,jk,ik->i", diff, model.bandwidth.inverse, diff)
    log_norm = -0.5 * (model.dim * np.log(2 * np.pi) + model.bandwidth.log_det)
    return float(np.mean(np.exp(log_norm - 0.5 * quad)))


def kde_sample(model: KdeModel, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from the estimate: uniform kernel choice, then a Gaussian jitter."""
    n = 1 if size is None else int(size)
    idx = rng.integers(0, model.n, size=n)
    noise = rng.standard_normal((n, model.dim)) @ model.bandwidth.cholesky.T
    out = model.samples[idx] + noise
    return out[0] if size is None else out


def _log_gaussian(diff: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise log N(diff; 0, cov). Overflowing offsets map to -inf."""
    dim = cov.shape[0]
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, diff.T)
    with np.errstate(over="ignore"):
        quad = np.sum(sol * sol, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (dim * np.log(2 * np.pi) + log_det + quad)


def _pick_kernels(log_w: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Categorical draw from unnormalized log weights (max-subtracted)."""
    peak = np.max(log_w)
    if not np.isfinite(peak):
        raise KdeSupportError("conditioning point outside data support")
    w = np.exp(log_w - peak)
    cdf = np.cumsum(w)
    return np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right").clip(0, len(w) - 1)


def kde_sample_conditional(model: KdeModel, given_indices, given_values,
                           rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Sample the remaining coordinates given fixed values for a subset.

    Kernel i is chosen with probability proportional to the marginal Gaussian
    density of the given values under kernel i; the remaining coordinates
    are then drawn from that kernel's conditional Gaussian.
    """
    given = np.asarray(given_indices, dtype=int).ravel()
    values = np.asarray(given_values, dtype=float).ravel()
    if given.size == 0 or given.size >= model.dim:
        raise ValueError("given_indices must be a strict non-empty subset")
    if values.size != given.size:
        raise ValueError("given_values length must match given_indices")
    rest = np.setdiff1d(np.arange(model.dim), given)

    H = model.bandwidth.matrix
    H_gg = H[np.ix_(given, given)]
    H_rg = H[np.ix_(rest, given)]
    H_rr = H[np.ix_(rest, rest)]

    log_w = _log_gaussian(values - model.samples[:, given], H_gg)
    idx = _pick_kernels(log_w, rng, 1 if size is None else int(size))

    gain = H_rg @ np.linalg.inv(H_gg)
    cond_cov = H_rr - gain @ H_rg.T
    chol = np.linalg.cholesky(cond_cov)
    means = model.samples[idx][:, rest] + (values - model.samples[idx][:, given]) @ gain.T
    out = means + rng.standard_normal((len(idx), rest.size)) @ chol.T
    return out[0] if size is None else out


@dataclass(frozen=True)
class ReducedBasis:
    """Truncated-SVD factors mapping situation pairs to d coordinates.

    A pair (x, y) is approximated as
    [x - mean_x; y - mean_y] ~ [U_top; U_bottom] diag(singular_values) v
    with v the reduced coordinate vector of length d.
    """

    mean_x: np.ndarray
    mean_y: np.ndarray
    u_top: np.ndarray
    u_bottom: np.ndarray
    singular_values: np.ndarray
    d: int

    @property
    def d_x(self) -> int:
        return self.u_top.shape[0]

    @property
    def d_y(self) -> int:
        return self.u_bottom.shape[0]

    def constraint(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) of the affine subspace A v = b pinning the initial part to x."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.d_x:
            raise ValueError(f"conditioning vector must have length {self.d_x}")
        a_mat = self.u_top * self.singular_values
        return a_mat, x - self.mean_x

    def future_from_coords(self, coords: np.ndarray) -> np.ndarray:
        """Map reduced coordinates back to the future part y."""
        coords = np.asarray(coords, dtype=float)
        return self.mean_y + (coords * self.singular_values) @ self.u_bottom.T

    def reconstruct(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        stacked = (coords * self.singular_values) @ np.vstack([self.u_top, self.u_bottom]).T
        return stacked + np.concatenate([self.mean_x, self.mean_y])


def fit_svd_basis(x_data, y_data, d: int) -> tuple[ReducedBasis, np.ndarray]:
    """Fit the truncated basis; also return the reduced coordinates (N x d)."""
    x_arr = _as_2d(x_data)
    y_arr = _as_2d(y_data)
    if x_arr.shape[0] != y_arr.shape[0]:
        raise ValueError("x and y must have the same number of rows")
    n = x_arr.shape[0]
    d_x, d_y = x_arr.shape[1], y_arr.shape[1]
    if not (d_x < d < d_x + d_y):
        raise ValueError(f"need d_x < d < d_x + d_y, got d={d}, d_x={d_x}, d_y={d_y}")
    if n < d:
        raise ValueError(f"need at least d={d} pairs, got {n}")

    mean_x = x_arr.mean(axis=0)
    mean_y = y_arr.mean(axis=0)
    stacked = np.hstack([x_arr - mean_x, y_arr - mean_y]).T  # (d_x+d_y, N)
    u, s, vt = np.linalg.svd(stacked, full_matrices=False)
    if s[d - 1] <= 0:
        raise ValueError(f"data rank below requested d={d}")
    basis = ReducedBasis(
        mean_x=mean_x,
        mean_y=mean_y,
        u_top=u[:d_x, :d].copy(),
        u_bottom=u[d_x:, :d].copy(),
        singular_values=s[:d].copy(),
        d=d,
    )
    coords = vt[:d].T.copy()  # row i is the reduced coordinate of pair i
    return basis, coords


@dataclass(frozen=True)
class Standardization:
    """Per-dimension z-score record (kept with a fitted model)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data) -> "Standardization":
        arr = _as_2d(data)
        std = arr.std(axis=0, ddof=1)
        if np.any(std == 0):
            raise ValueError("cannot standardize a zero-variance dimension")
        return cls(mean=arr.mean(axis=0), std=std)

    @classmethod
    def identity(cls, dim: int) -> "Standardization":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def apply(self, data) -> np.ndarray:
        return (np.asarray(data, dtype=float) - self.mean) / self.std

    def invert(self, data) -> np.ndarray:
        return np.asarray(data, dtype=float) * self.std + self.mean


class ConstrainedSampler:
    """Draws from a KDE restricted to the affine subspace A v = b.

    The kernel covariance is shared, so the conditional covariance and its
    square root are computed once; only the per-kernel means and weights
    depend on the data.  ``standardization`` maps between the constraint
    space and the (possibly z-scored) space the KDE was fitted in.
    """

    def __init__(self, kde: KdeModel, a_mat: np.ndarray, b_vec: np.ndarray,
                 standardization: Standardization | None = None):
        a_mat = np.atleast_2d(np.asarray(a_mat, dtype=float))
        b_vec = np.asarray(b_vec, dtype=float).ravel()
        if a_mat.shape[0] != b_vec.size:
            raise ValueError("A and b are inconsistent")
        if a_mat.shape[1] != kde.dim:
            raise ValueError("A must have one column per KDE dimension")
        if np.linalg.matrix_rank(a_mat) < a_mat.shape[0]:
            raise ValueError("A must have full row rank")
        if standardization is None:
            standardization = Standardization.identity(kde.dim)
        self.kde = kde
        self.standardization = standardization
        # Fold the z-score map into the constraint: A (mu + S z) = b.
        self._a_std = a_mat * standardization.std
        self._b_std = b_vec - a_mat @ standardization.mean
        self._a_orig = a_mat
        self._b_orig = b_vec

        H = kde.bandwidth.matrix
        aht = self._a_std @ H                      # (m, d)
        q = self._a_std @ aht.T                    # (m, m), A H A^T
        self._gain = np.linalg.solve(q, aht).T     # (d, m), H A^T Q^-1
        cond_cov = H - self._gain @ aht
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        evals, evecs = np.linalg.eigh(cond_cov)
        evals = np.clip(evals, 0.0, None)
        self._cov_root = evecs * np.sqrt(evals)

        resid = self._b_std - kde.samples @ self._a_std.T   # (N, m)
        self._log_w = _log_gaussian(resid, q)
        if not np.isfinite(np.max(self._log_w)):
            raise KdeSupportError("initial situation outside data support")
        self._cond_means = kde.samples + resid @ self._gain.T
        # Exact-projection factors to scrub numerical constraint drift.
        self._proj = np.linalg.solve(self._a_orig @ self._a_orig.T, self._a_orig).T

    def draw_coords(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Sample reduced coordinates satisfying A v = b (constraint space)."""
        idx = _pick_kernels(self._log_w, rng, size)
        z = self._cond_means[idx] + rng.standard_normal((size, self.kde.dim)) @ self._cov_root.T
        coords = self.standardization.invert(z)
        drift = coords @ self._a_orig.T - self._b_orig
        return coords - drift @ self._proj.T


def sample_future_given_initial(basis: ReducedBasis, reduced_kde: KdeModel,
                                conditioning, rng: np.random.Generator,
                                size: int | None = None,
                                standardization: Standardization | None = None,
                                clamp_at_zero: bool = True) -> np.ndarray:
    """Sample future vectors consistent with the given initial sub-vector.

    The reduced kernel density is restricted to the subspace where the basis
    reproduces ``conditioning`` exactly; the draw is mapped back through the
    basis and (optionally) clamped at zero since the futures are speeds.
    """
    a_mat, b_vec = basis.constraint(conditioning)
    sampler = ConstrainedSampler(reduced_kde, a_mat, b_vec, standardization)
    coords = sampler.draw_coords(rng, 1 if size is None else int(size))
    future = basis.future_from_coords(coords)
    if clamp_at_zero:
        future = np.maximum(future, 0.0)
    return future[0] if size is None else future
