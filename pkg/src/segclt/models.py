"""Concrete saddle problems: the EV charging game, the spiral game
and linear fields with closed-form limits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (BoundaryEquilibriumError, DecisionPoint, SaddleProblem,
                   SingularSystemError, matvec, rownorm)
from .kernels import (DemandChainParams, DemandKernel, GaussianNoiseKernel,
                      IIDKernel, Remark3Kernel, ramp)

GAMMA_MODES = ("indicator", "smooth")


@dataclass(frozen=True)
class EVGameSpec:
    chain: DemandChainParams
    gamma_mode: str = "indicator"

    def __post_init__(self):
        if self.gamma_mode not in GAMMA_MODES:
            raise ValueError(f"gamma_mode must be one of {GAMMA_MODES}")

    def gamma(self, x: np.ndarray) -> np.ndarray:
        """Quality-of-service weight as a function of one player's block."""
        nrm = rownorm(x)
        if self.gamma_mode == "indicator":
            return (nrm <= 1.0).astype(float)
        # smoothstep taper from 1 at |x| = 0.9 down to 0 at |x| = 1.0
        t = np.clip((nrm - 0.9) / 0.1, 0.0, 1.0)
        return 1.0 - t * t * (3.0 - 2.0 * t)


def _check_ev(z, spec: EVGameSpec):
    if np.shape(z)[-1] != 2 * spec.chain.N:
        raise ValueError(f"EV game iterate must have length {2 * spec.chain.N}")


def ev_gradient(z, w, spec: EVGameSpec) -> np.ndarray:
    """[2 g_A(theta) theta - (a + r); 2 g_B(mu) mu - (b + r)]."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_ev(z, spec)
    N = spec.chain.N
    if w.shape[-1] != 2 * N:
        raise ValueError(f"EV game data must have length {2 * N}")
    theta, mu = z[..., :N], z[..., N:]
    r = spec.chain.r
    g_theta = 2.0 * spec.gamma(theta)[..., None] * theta - (w[..., :N] + r)
    g_mu = 2.0 * spec.gamma(mu)[..., None] * mu - (w[..., N:] + r)
    return np.concatenate([g_theta, g_mu], axis=-1)


def ev_mean_field(z, spec: EVGameSpec) -> np.ndarray:
    """Oracle averaged over the fixed-z stationary law of the demand chain."""
    z = np.asarray(z, dtype=float)
    return ev_gradient(z, spec.chain.stationary_mean(z), spec)


def equilibrium_solve(spec: EVGameSpec) -> DecisionPoint:
    """Solve 2 theta = a_bar(z) + r, 2 mu = b_bar(z) + r as one linear system."""
    p = spec.chain
    N = p.N
    coupling = np.block([[p.A1, p.A2], [p.B1, p.B2]]) / (1.0 - p.rho)
    M = 2.0 * np.eye(2 * N) - coupling
    rhs = np.concatenate([p.mean_DA, p.mean_DB]) / (1.0 - p.rho) + np.concatenate([p.r, p.r])
    if np.linalg.cond(M) > 1e12:
        raise SingularSystemError("equilibrium system is singular")
    try:
        z = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    radius = 1.0 if spec.gamma_mode == "indicator" else 0.9
    for name, block in (("theta", z[:N]), ("mu", z[N:])):
        if np.linalg.norm(block) > radius:
            raise BoundaryEquilibriumError(
                f"|{name}*| = {np.linalg.norm(block):.4f} exceeds {radius}")
    return DecisionPoint(z[:N], z[N:])


def ev_objective(spec: EVGameSpec, saddle: DecisionPoint) -> Callable:
    """f(theta, mu) with the data at its stationary mean under z*."""
    N = spec.chain.N
    w_bar = spec.chain.stationary_mean(saddle.vector)
    a_bar, b_bar, r = w_bar[:N], w_bar[N:], spec.chain.r

    def f(theta, mu):
        theta = np.asarray(theta, dtype=float)
        mu = np.asarray(mu, dtype=float)
        ga = spec.gamma(theta)[..., None]
        gb = spec.gamma(mu)[..., None]
        return (np.sum((ga * theta) ** 2, axis=-1) - np.sum((gb * mu) ** 2, axis=-1)
                - theta @ (a_bar + r) + mu @ (b_bar + r))

    return f


def ev_problem(spec: EVGameSpec) -> SaddleProblem:
    saddle = equilibrium_solve(spec)
    N = spec.chain.N
    name = "martingale-ev" if spec.chain.is_iid else "markov-ev"
    return SaddleProblem(
        dims=(N, N),
        oracle=lambda z, w: ev_gradient(z, w, spec),
        mean_field=lambda z: ev_mean_field(z, spec),
        saddle=saddle,
        objective=ev_objective(spec, saddle),
        name=name,
    )


def ev_kernel(spec: EVGameSpec):
    return IIDKernel(spec.chain) if spec.chain.is_iid else DemandKernel(spec.chain)


def remark3_gradient(z, w) -> np.ndarray:
    """[theta(1-R) + mu + rho1; mu(1-R) - theta + rho2] with R = R(|z|)."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if z.shape[-1] != 2 or w.shape[-1] != 4:
        raise ValueError("the spiral-game oracle needs a scalar pair z and a 4-vector w")
    theta, mu = z[..., 0], z[..., 1]
    damp = 1.0 - ramp(rownorm(z))
    return np.stack([theta * damp + mu + w[..., 2], mu * damp - theta + w[..., 3]], axis=-1)


def remark3_mean_field(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return remark3_gradient(z, np.zeros(z.shape[:-1] + (4,)))


def remark3_problem() -> SaddleProblem:
    return SaddleProblem(
        dims=(1, 1),
        oracle=remark3_gradient,
        mean_field=remark3_mean_field,
        saddle=DecisionPoint([0.0], [0.0]),
        name="remark3",
    )


@dataclass(frozen=True)
class LinearFieldSpec:
    """H(z) = Q z with additive N(0, noise_cov) gradient noise; z* = 0."""

    Q: np.ndarray
    noise_cov: np.ndarray
    d_theta: int = field(default=None)

    def __post_init__(self):
        Q = np.atleast_2d(np.array(self.Q, dtype=float))
        S = np.atleast_2d(np.array(self.noise_cov, dtype=float))
        if Q.shape[0] != Q.shape[1] or Q.shape[0] < 2:
            raise ValueError("Q must be square of order >= 2")
        if S.shape != Q.shape:
            raise ValueError("noise_cov must match Q")
        if np.linalg.eigvals(Q).real.min() <= 0:
            raise ValueError("Q must have eigenvalues with positive real part")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "noise_cov", S)
        if self.d_theta is None:
            object.__setattr__(self, "d_theta", Q.shape[0] // 2)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]


def linear_gradient(z, w, spec: LinearFieldSpec) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if z.shape[-1] != spec.dim or w.shape[-1] != spec.dim:
        raise ValueError(f"linear field needs vectors of length {spec.dim}")
    return matvec(spec.Q, z) + w


def _linear_objective(spec: LinearFieldSpec):
    d = spec.d_theta
    Q = spec.Q
    A, B, C, D = Q[:d, :d], Q[:d, d:], Q[d:, :d], Q[d:, d:]
    # f(theta, mu) = theta'A theta/2 + theta'B mu - mu'D mu/2 needs C = -B'
    if not (np.allclose(C, -B.T) and np.allclose(A, A.T) and np.allclose(D, D.T)):
        return None

    def f(theta, mu):
        theta = np.asarray(theta, dtype=float)
        mu = np.asarray(mu, dtype=float)
        return (0.5 * np.sum(theta * matvec(A, theta), axis=-1)
                + np.sum(theta * matvec(B, mu), axis=-1)
                - 0.5 * np.sum(mu * matvec(D, mu), axis=-1))

    return f


def linear_problem(spec: LinearFieldSpec) -> SaddleProblem:
    d = spec.d_theta
    zero = np.zeros(spec.dim)
    return SaddleProblem(
        dims=(d, spec.dim - d),
        oracle=lambda z, w: linear_gradient(z, w, spec),
        mean_field=lambda z: matvec(spec.Q, np.asarray(z, dtype=float)),
        saddle=DecisionPoint(zero[:d], zero[d:]),
        objective=_linear_objective(spec),
        name="linear",
    )


def linear_kernel(spec: LinearFieldSpec) -> GaussianNoiseKernel:
    return GaussianNoiseKernel(spec.noise_cov)


@dataclass(frozen=True)
class Preset:
    name: str
    problem: SaddleProblem
    kernel: object
    markov: bool
    description: str


def _ev_preset(name, markov, description):
    spec = EVGameSpec(DemandChainParams.reference_preset(markov=markov))
    return Preset(name, ev_problem(spec), ev_kernel(spec), markov, description)


def build_preset(name: str) -> Preset:
    """Built-in problem/kernel pairs, keyed by preset name.

    The ``-clt`` variants share the problem of their base preset; they only
    differ in the run defaults chosen by the experiment harness.
    """
    base = name[:-4] if name.endswith("-clt") else name
    if base == "martingale-ev":
        return _ev_preset(name, False, "EV charging game, i.i.d. demand (rho = 0, no coupling)")
    if base == "markov-ev":
        return _ev_preset(name, True, "EV charging game, state-dependent AR(1) demand")
    if base == "remark3":
        return Preset(name, remark3_problem(), Remark3Kernel(), True,
                      "scalar game whose state-dependent noise makes SGDA spiral out")
    if base == "linear":
        spec = LinearFieldSpec(2.0 * np.eye(2), np.eye(2))
        return Preset(name, linear_problem(spec), linear_kernel(spec), False,
                      "linear field Q = 2I, Sigma = I")
    raise KeyError(f"unknown preset {name!r}")
