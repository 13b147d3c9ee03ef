"""Shared types: decision points, step-size schedules and the saddle problem."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


class SaddleUnknownError(ValueError):
    """Raised when an operation needs z* (or the objective) and the problem has none."""


class BoundaryEquilibriumError(ValueError):
    pass


class SingularSystemError(ValueError):
    pass


class RunFailure(RuntimeError):
    """A run aborted; ``step`` is the 1-based iteration at which it happened."""

    def __init__(self, reason: str, step: int):
        super().__init__(f"{reason} at step {step}")
        self.reason = reason
        self.step = step


@dataclass(frozen=True)
class DecisionPoint:
    """Joint iterate z = (theta, mu)."""

    theta: Array
    mu: Array

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if theta.size < 1 or mu.size < 1:
            raise ValueError("both players need at least one coordinate")
        theta.flags.writeable = False
        mu.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "mu", mu)

    @property
    def dims(self) -> tuple[int, int]:
        return self.theta.size, self.mu.size

    @property
    def vector(self) -> Array:
        return np.concatenate([self.theta, self.mu])

    @classmethod
    def from_vector(cls, z, d_theta: int) -> "DecisionPoint":
        z = np.asarray(z, dtype=float).reshape(-1)
        if not 1 <= d_theta < z.size:
            raise ValueError(f"cannot split length-{z.size} vector at {d_theta}")
        return cls(z[:d_theta], z[d_theta:])

    def __eq__(self, other):
        if not isinstance(other, DecisionPoint):
            return NotImplemented
        return np.array_equal(self.theta, other.theta) and np.array_equal(self.mu, other.mu)

    def __hash__(self):
        return hash((self.theta.tobytes(), self.mu.tobytes()))


def as_vector(z) -> Array:
    if isinstance(z, DecisionPoint):
        return z.vector
    return np.asarray(z, dtype=float)


@dataclass(frozen=True)
class StepSchedule:
    """eta_k = eta0 * k**(-exponent_a), 1-indexed."""

    eta0: float = 0.1
    exponent_a: float = 0.75

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if not 0.5 < self.exponent_a < 1.0:
            raise ValueError("exponent_a must lie in (1/2, 1)")

    def __call__(self, k: int) -> float:
        return step_size(self, k)


def step_size(schedule: StepSchedule, k: int) -> float:
    if k < 1:
        raise ValueError("step schedule is 1-indexed; got k=%r" % (k,))
    return schedule.eta0 * float(k) ** (-schedule.exponent_a)


@dataclass(frozen=True)
class ConstantStep:
    """Constant step size; used for the SGDA side of the divergence demo."""

    eta: float

    def __call__(self, k: int) -> float:
        if k < 1:
            raise ValueError("step schedule is 1-indexed; got k=%r" % (k,))
        return self.eta


@dataclass(frozen=True)
class SaddleProblem:
    """A stochastic saddle problem.

    ``oracle(z, w)`` and ``mean_field(z)`` act on stacked vectors and must
    broadcast over leading batch axes (z of shape ``(..., d)``).
    ``objective(theta, mu)`` returns f(theta, mu), also batched.
    """

    dims: tuple[int, int]
    oracle: Callable[[Array, Array], Array]
    mean_field: Optional[Callable[[Array], Array]] = None
    saddle: Optional[DecisionPoint] = None
    objective: Optional[Callable[[Array, Array], Array]] = None
    name: str = "problem"
    saddle_tol: float = field(default=1e-8, repr=False)

    def __post_init__(self):
        d_theta, d_mu = self.dims
        if d_theta < 1 or d_mu < 1:
            raise ValueError("dims must be positive")
        if self.saddle is not None:
            if self.saddle.dims != tuple(self.dims):
                raise ValueError("saddle dimensions do not match dims")
            if self.mean_field is not None:
                resid = np.linalg.norm(self.mean_field(self.saddle.vector))
                if resid > self.saddle_tol:
                    raise ValueError(f"mean field at saddle has norm {resid:.3g}")

    @property
    def dim(self) -> int:
        return self.dims[0] + self.dims[1]

    def split(self, z: Array) -> tuple[Array, Array]:
        return z[..., : self.dims[0]], z[..., self.dims[0]:]


def suboptimality(problem: SaddleProblem, z) -> Array:
    """G(theta, mu) = f(theta, mu*) - f(theta*, mu)."""
    if problem.saddle is None or problem.objective is None:
        raise SaddleUnknownError("suboptimality needs both a saddle and an objective")
    theta, mu = problem.split(as_vector(z))
    f = problem.objective
    return f(theta, problem.saddle.mu) - f(problem.saddle.theta, mu)


def running_average(previous_mean, new_iterate, n: int) -> Array:
    if n < 1:
        raise ValueError("n must be >= 1")
    previous_mean = as_vector(previous_mean)
    return previous_mean + (as_vector(new_iterate) - previous_mean) / n


def matvec(M: Array, x: Array) -> Array:
    """M @ x over the last axis of x, summed column by column.

    The fixed summation order keeps each batch row bit-identical no matter
    how many rows are processed together (BLAS gemm does not promise that).
    """
    M = np.asarray(M, dtype=float)
    out = x[..., 0:1] * M[:, 0]
    for j in range(1, M.shape[1]):
        out = out + x[..., j:j + 1] * M[:, j]
    return out


def rownorm(x: Array) -> Array:
    """Euclidean norm over the last axis with a fixed summation order."""
    acc = x[..., 0] * x[..., 0]
    for j in range(1, x.shape[-1]):
        acc = acc + x[..., j] * x[..., j]
    return np.sqrt(acc)
