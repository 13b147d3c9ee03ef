"""Data-sampling kernels and the seeded normal streams that drive them.

Every kernel is split into a pure transition ``step(w, z, noise)`` and a
:class:`NormalStream` that supplies the standard-normal innovations. Each
replication owns one Philox generator keyed by ``(seed, replication_id,
channel)`` and always draws in fixed-size blocks, so replication ``r`` sees
the same innovations at step ``k`` however replications are batched or
scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import matvec, rownorm

BLOCK_STEPS = 256


def _generator(seed: int, replication_id: int, channel: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(replication_id), int(channel)))
    return np.random.Generator(np.random.Philox(seq))


class NormalStream:
    """Per-replication standard-normal innovations, ``width`` per step.

    ``draw()`` returns an array of shape ``(len(ids), width)``.
    """

    def __init__(self, seed: int, ids: Sequence[int], width: int, channel: int = 0):
        if width < 1:
            raise ValueError("width must be >= 1")
        self.seed = int(seed)
        self.ids = np.asarray(ids, dtype=np.int64)
        if self.ids.ndim != 1 or self.ids.size == 0:
            raise ValueError("ids must be a non-empty 1-D sequence")
        self.width = int(width)
        self.channel = int(channel)
        self._gens = [_generator(self.seed, r, self.channel) for r in self.ids]
        self._buf = np.empty((self.ids.size, BLOCK_STEPS, self.width))
        self._pos = BLOCK_STEPS

    @property
    def size(self) -> int:
        return self.ids.size

    def _refill(self):
        n = BLOCK_STEPS * self.width
        for i, g in enumerate(self._gens):
            self._buf[i] = g.standard_normal(n).reshape(BLOCK_STEPS, self.width)
        self._pos = 0

    def draw(self) -> np.ndarray:
        if self._pos == BLOCK_STEPS:
            self._refill()
        out = self._buf[:, self._pos, :].copy()
        self._pos += 1
        return out


class ZeroStream:
    """Stands in for a NormalStream when a test wants the noise switched off."""

    def __init__(self, size: int, width: int):
        self.size = size
        self.width = width

    def draw(self) -> np.ndarray:
        return np.zeros((self.size, self.width))


@dataclass
class KernelState:
    """Current data sample ``w`` (shape ``(R, dw)``) plus the stream feeding it.

    The arrays are never mutated in place; sampling returns a new state that
    shares the (advanced) stream.
    """

    w: np.ndarray
    stream: NormalStream


def psd_factor(cov) -> np.ndarray:
    """Lower factor L with L @ L.T == cov; rejects non-PSD input."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-10 * max(1.0, abs(vals).max()):
        raise ValueError("covariance is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def ramp(y):
    """Cubic smoothstep: 0 for y <= 1/2, 1 for y >= 1."""
    t = np.clip(2.0 * np.asarray(y, dtype=float) - 1.0, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class DemandChainParams:
    N: int
    rho: float
    A1: np.ndarray
    A2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    mean_DA: np.ndarray
    mean_DB: np.ndarray
    r: np.ndarray
    innovation_cov: np.ndarray = None
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        N = int(self.N)
        if N < 1:
            raise ValueError("N must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        for name in ("A1", "A2", "B1", "B2"):
            m = np.array(getattr(self, name), dtype=float)
            if m.shape != (N, N):
                raise ValueError(f"{name} must be {N}x{N}")
            object.__setattr__(self, name, m)
        for name in ("mean_DA", "mean_DB", "r"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (N,):
                raise ValueError(f"{name} must have length {N}")
            object.__setattr__(self, name, v)
        cov = np.eye(N) if self.innovation_cov is None else np.array(self.innovation_cov, dtype=float)
        if cov.shape != (N, N):
            raise ValueError(f"innovation_cov must be {N}x{N}")
        object.__setattr__(self, "innovation_cov", cov)
        object.__setattr__(self, "chol", psd_factor(cov))

    @classmethod
    def reference_preset(cls, markov: bool = True) -> "DemandChainParams":
        N = 3
        c = 0.3 if markov else 0.0
        A1 = np.diag([-c] * N)
        A2 = np.diag([c] * N)
        return cls(
            N=N,
            rho=0.4 if markov else 0.0,
            A1=A1, A2=A2, B1=A2.copy(), B2=A1.copy(),
            mean_DA=np.full(N, 0.1),
            mean_DB=np.zeros(N),
            r=np.full(N, 0.3),
        )

    @property
    def is_iid(self) -> bool:
        return self.rho == 0.0 and not any(
            np.any(m) for m in (self.A1, self.A2, self.B1, self.B2))

    def stationary_mean(self, z) -> np.ndarray:
        """Fixed-z stationary mean of (a, b): (D̄ + A1 theta + A2 mu) / (1 - rho)."""
        z = np.asarray(z, dtype=float)
        N = self.N
        theta, mu = z[..., :N], z[..., N:]
        a = (self.mean_DA + matvec(self.A1, theta) + matvec(self.A2, mu)) / (1.0 - self.rho)
        b = (self.mean_DB + matvec(self.B1, theta) + matvec(self.B2, mu)) / (1.0 - self.rho)
        return np.concatenate([a, b], axis=-1)


def _check_demand(w, params: DemandChainParams, z=None):
    if w.shape[-1] != 2 * params.N:
        raise ValueError(f"demand state must have length {2 * params.N}, got {w.shape[-1]}")
    if z is not None and np.shape(z)[-1] != 2 * params.N:
        raise ValueError(f"iterate must have length {2 * params.N}, got {np.shape(z)[-1]}")


class DemandKernel:
    """State-dependent AR(1) demand chain of the EV charging game."""

    def __init__(self, params: DemandChainParams):
        self.params = params
        self.dim = 2 * params.N
        self.width = 2 * params.N

    def initial(self, z0: np.ndarray) -> np.ndarray:
        # start the chain at its fixed-z stationary mean
        return self.params.stationary_mean(z0)

    def step(self, w: np.ndarray, z: np.ndarray, noise: np.ndarray) -> np.ndarray:
        p = self.params
        N = p.N
        _check_demand(w, p, z)
        theta, mu = z[..., :N], z[..., N:]
        d_a = p.mean_DA + matvec(p.chol, noise[..., :N])
        d_b = p.mean_DB + matvec(p.chol, noise[..., N:])
        a = d_a + p.rho * w[..., :N] + matvec(p.A1, theta) + matvec(p.A2, mu)
        b = d_b + p.rho * w[..., N:] + matvec(p.B1, theta) + matvec(p.B2, mu)
        return np.concatenate([a, b], axis=-1)

    def sample(self, state: KernelState, z: np.ndarray) -> KernelState:
        return KernelState(self.step(state.w, z, state.stream.draw()), state.stream)


class IIDKernel(DemandKernel):
    """Fresh (D_A, D_B) draws, independent of z and of the past."""

    def step(self, w: np.ndarray, z: np.ndarray, noise: np.ndarray) -> np.ndarray:
        p = self.params
        N = p.N
        _check_demand(w, p)
        d_a = p.mean_DA + matvec(p.chol, noise[..., :N])
        d_b = p.mean_DB + matvec(p.chol, noise[..., N:])
        return np.concatenate([d_a, d_b], axis=-1)


class Remark3Kernel:
    """w' = R(|z|) [-theta^2/2, mu^2/2] + varrho, varrho ~ N(0, I_2).

    The state carries four numbers: the observed sample (2) followed by the
    innovation varrho (2) that the spiral-game oracle adds to its gradient.
    """

    dim = 4
    width = 2

    def initial(self, z0: np.ndarray) -> np.ndarray:
        z0 = np.asarray(z0, dtype=float)
        return np.zeros(z0.shape[:-1] + (4,))

    def step(self, w: np.ndarray, z: np.ndarray, noise: np.ndarray) -> np.ndarray:
        if z.shape[-1] != 2:
            raise ValueError("the spiral-game kernel needs d_theta = d_mu = 1")
        theta, mu = z[..., 0], z[..., 1]
        R = ramp(rownorm(z))
        obs0 = -R * theta * theta / 2.0 + noise[..., 0]
        obs1 = R * mu * mu / 2.0 + noise[..., 1]
        return np.stack([obs0, obs1, noise[..., 0], noise[..., 1]], axis=-1)

    def sample(self, state: KernelState, z: np.ndarray) -> KernelState:
        return KernelState(self.step(state.w, z, state.stream.draw()), state.stream)


class GaussianNoiseKernel:
    """w = xi ~ N(0, cov), i.i.d.; the additive gradient noise of a linear field."""

    def __init__(self, cov):
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.chol = psd_factor(self.cov)
        self.dim = self.cov.shape[0]
        self.width = self.dim

    def initial(self, z0: np.ndarray) -> np.ndarray:
        z0 = np.asarray(z0, dtype=float)
        return np.zeros(z0.shape[:-1] + (self.dim,))

    def step(self, w: np.ndarray, z: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return matvec(self.chol, noise)

    def sample(self, state: KernelState, z: np.ndarray) -> KernelState:
        return KernelState(self.step(state.w, z, state.stream.draw()), state.stream)


def initial_state(kernel, z0: np.ndarray, seed: int, ids: Sequence[int], channel: int = 0) -> KernelState:
    """Kernel state for replications ``ids`` all starting from z0."""
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (len(ids), np.shape(z0)[-1]))
    stream = NormalStream(seed, ids, kernel.width, channel=channel)
    return KernelState(kernel.initial(z0), stream)


def sample_demand(state: KernelState, params: DemandChainParams, z) -> KernelState:
    return DemandKernel(params).sample(state, np.asarray(z, dtype=float))


def sample_iid(state: KernelState, params: DemandChainParams) -> KernelState:
    kernel = IIDKernel(params)
    return kernel.sample(state, np.zeros(state.w.shape[:-1] + (2 * params.N,)))


def sample_remark3(state: KernelState, z) -> KernelState:
    return Remark3Kernel().sample(state, np.asarray(z, dtype=float))
