"""Turning replication outputs into verdicts on the limit theorems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .core import SaddleProblem, as_vector
from .kernels import NormalStream, KernelState

PSD_TOL = 1e-8


@dataclass
class CovarianceReport:
    empirical: np.ndarray
    theoretical: np.ndarray
    frobenius_rel_error: float
    projection_variances: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "empirical": self.empirical.tolist(),
            "theoretical": self.theoretical.tolist(),
            "frobenius_rel_error": float(self.frobenius_rel_error),
            "projection_variances": {k: float(v) for k, v in self.projection_variances.items()},
        }


def jacobian_fd(mean_field, z, h: float = None) -> np.ndarray:
    """Central-difference Jacobian; column j is (H(z + h e_j) - H(z - h e_j)) / 2h."""
    z = as_vector(z).astype(float)
    if h is None:
        h = 1e-5 * (1.0 + np.max(np.abs(z)))
    if not h > 0:
        raise ValueError("h must be positive")
    d = z.size
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        up, down = np.asarray(mean_field(z + e)), np.asarray(mean_field(z - e))
        if not (np.all(np.isfinite(up)) and np.all(np.isfinite(down))):
            raise FloatingPointError(f"non-finite mean field near coordinate {j}")
        cols.append((up - down) / (2.0 * h))
    return np.column_stack(cols)


def sample_covariance(x: np.ndarray) -> np.ndarray:
    """Unbiased covariance of the rows of x, symmetrised."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean(axis=0)
    cov = c.T @ c / (x.shape[0] - 1)
    return (cov + cov.T) / 2.0


def _frozen_draws(problem: SaddleProblem, z_star, kernel, lanes: int, steps: int,
                  seed: int, channel: int, burn_in: int = 0) -> np.ndarray:
    """H(z*, w_k) along ``lanes`` independent kernel chains frozen at z*.

    Returns an array of shape (lanes, steps, d).
    """
    z = np.broadcast_to(as_vector(z_star), (lanes, problem.dim))
    stream = NormalStream(seed, np.arange(lanes), kernel.width, channel=channel)
    state = KernelState(kernel.initial(z), stream)
    for _ in range(burn_in):
        state = kernel.sample(state, z)
    out = np.empty((lanes, steps, problem.dim))
    for t in range(steps):
        state = kernel.sample(state, z)
        out[:, t] = problem.oracle(z, state.w)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite gradient sample")
    return out


def gradient_noise_covariance_iid(problem: SaddleProblem, z_star, kernel, n_samples: int,
                                  seed: int = 0, channel: int = 1, lanes: int = 1000) -> np.ndarray:
    """Sample covariance of H(z*, w) over ``n_samples`` independent draws.

    Draws are laid out over ``lanes`` streams; for an i.i.d. kernel the
    successive draws of one lane are independent as well.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    lanes = min(lanes, n_samples)
    steps = -(-n_samples // lanes)
    draws = _frozen_draws(problem, z_star, kernel, lanes, steps, seed, channel)
    return sample_covariance(draws.transpose(1, 0, 2).reshape(-1, problem.dim)[:n_samples])


def batch_means_covariance(samples: np.ndarray, n_batches: int, check: bool = True) -> np.ndarray:
    """Batch-means long-run covariance of a contiguous stream (rows = time).

    Splits the stream into ``n_batches`` contiguous batches and returns
    ``batch_length * Cov(batch means)``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    if n_batches < 2 or n % n_batches:
        raise ValueError("n_samples must be divisible by n_batches >= 2")
    length = n // n_batches
    means = samples.reshape(n_batches, length, -1).mean(axis=1)
    if check and n_batches > 2:
        c = means - means.mean(axis=0)
        lag1 = np.sum(c[1:] * c[:-1], axis=0) / np.maximum(np.sum(c * c, axis=0), 1e-300)
        if np.max(lag1) > 0.1:
            raise ValueError(f"insufficient batch length: lag-1 autocorrelation {np.max(lag1):.3f}")
    return length * sample_covariance(means)


def longrun_covariance_batch_means(problem: SaddleProblem, z_star, kernel, n_samples: int,
                                   n_batches: int, seed: int = 0, channel: int = 2) -> np.ndarray:
    """Long-run covariance of H(z*, w_k) along the chain frozen at z*.

    Each batch is simulated as its own chain segment (with a 10% burn-in
    from the kernel's initial state) so that all batches advance together.
    """
    if n_batches < 2 or n_samples % n_batches:
        raise ValueError("n_samples must be divisible by n_batches >= 2")
    length = n_samples // n_batches
    draws = _frozen_draws(problem, z_star, kernel, n_batches, length, seed, channel,
                          burn_in=max(10, length // 10))
    return batch_means_covariance(draws.reshape(n_samples, -1), n_batches)


def _symmetrize(m):
    return (m + m.T) / 2.0


def asymptotic_covariance(Qstar, Sigma) -> np.ndarray:
    """Q*^{-1} Sigma Q*^{-T}, symmetrised."""
    Qstar = np.atleast_2d(np.asarray(Qstar, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if np.linalg.svd(Qstar, compute_uv=False).min() <= 1e-10:
        raise np.linalg.LinAlgError("Q* is singular")
    if not np.allclose(Sigma, Sigma.T, atol=1e-10):
        raise ValueError("Sigma must be symmetric")
    if np.linalg.eigvalsh(_symmetrize(Sigma)).min() < -PSD_TOL:
        raise ValueError("Sigma must be positive semidefinite")
    Qinv = np.linalg.inv(Qstar)
    return _symmetrize(Qinv @ Sigma @ Qinv.T)


def clip_psd(m: np.ndarray) -> np.ndarray:
    """Symmetrise and clip eigenvalues in [-PSD_TOL, 0) to zero for reporting."""
    m = _symmetrize(np.asarray(m, dtype=float))
    vals, vecs = np.linalg.eigh(m)
    if vals.min() < -PSD_TOL:
        raise ValueError(f"matrix has eigenvalue {vals.min():.3g} < -{PSD_TOL}")
    return _symmetrize((vecs * np.clip(vals, 0.0, None)) @ vecs.T)


def covariance_report(samples: np.ndarray, theoretical: np.ndarray, directions: dict = None) -> CovarianceReport:
    """Compare the sample covariance of ``samples`` (rows) with a theoretical one."""
    emp = sample_covariance(samples)
    rel = np.linalg.norm(emp - theoretical) / np.linalg.norm(theoretical)
    proj = {}
    for name, u in (directions or {}).items():
        u = np.asarray(u, dtype=float)
        proj[name + "_empirical"] = float(u @ emp @ u)
        proj[name + "_theoretical"] = float(u @ theoretical @ u)
    return CovarianceReport(emp, _symmetrize(theoretical), float(rel), proj)


def normal_cdf(x):
    return ndtr(x)


def ks_statistic(samples, sigma: float) -> float:
    """sup_x |F_m(x) - Phi(x / sigma)| over the jump points of the empirical CDF."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    m = x.size
    if m == 0:
        raise ValueError("ks_statistic needs at least one sample")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    cdf = normal_cdf(x / sigma)
    upper = np.arange(1, m + 1) / m - cdf
    lower = cdf - np.arange(0, m) / m
    return float(max(upper.max(), lower.max()))


def ks_critical_value(m: int, level: float = 0.01) -> float:
    """Asymptotic Kolmogorov critical value c(level) / sqrt(m)."""
    coeff = {0.01: 1.63, 0.05: 1.36, 0.1: 1.22}[level]
    return coeff / np.sqrt(m)


def normal_quantiles(m: int) -> np.ndarray:
    return ndtri((np.arange(1, m + 1) - 0.5) / m)


@dataclass
class HistogramQQ:
    edges: np.ndarray
    densities: np.ndarray
    qq_theoretical: np.ndarray
    qq_sample: np.ndarray


def histogram_and_qq(samples, n_bins: int, sigma: float) -> HistogramQQ:
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if x.size == 0:
        raise ValueError("no samples")
    if n_bins < 2:
        raise ValueError("need at least two bins")
    if x[0] == x[-1]:
        raise ValueError("degenerate sample: all values equal, histogram range is zero")
    densities, edges = np.histogram(x, bins=n_bins, range=(x[0], x[-1]), density=True)
    return HistogramQQ(edges, densities, sigma * normal_quantiles(x.size), x)
