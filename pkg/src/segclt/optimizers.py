"""SGDA, stochastic extra-gradient and truncated extra-gradient.

The step functions are pure and broadcast over a leading replication axis,
so one call advances a whole batch of independent runs; ``run`` is the
driver that threads kernel sampling, averaging and trace recording.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import RunFailure, SaddleProblem, StepSchedule, rownorm, suboptimality
from .kernels import KernelState

ALGORITHMS = ("sgda", "seg", "tseg")


@dataclass(frozen=True)
class TruncationPolicy:
    """Origin-centred balls of radius ``radius0 + q * radius_growth`` and the
    step-change threshold ``d_k = d_const * (eta_k / eta0) ** ((1 + epsilon) / 2)``."""

    radius0: float = 5.0
    radius_growth: float = 5.0
    d_const: float = 1.0
    epsilon: float = 0.25
    max_truncations: int = 10_000

    def __post_init__(self):
        if self.radius0 <= 0 or self.radius_growth <= 0:
            raise ValueError("truncation radii must grow from a positive start")
        if self.d_const <= 0:
            raise ValueError("d_const must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")

    def radius(self, q):
        return self.radius0 + np.asarray(q) * self.radius_growth

    def threshold(self, k: int, schedule: StepSchedule) -> float:
        return self.d_const * (schedule(k) / schedule.eta0) ** ((1.0 + self.epsilon) / 2.0)


@dataclass(frozen=True)
class TruncationState:
    kappa: np.ndarray
    anchor_z: np.ndarray
    anchor_w: np.ndarray
    reinit_log: tuple = ()

    @classmethod
    def start(cls, anchor_z: np.ndarray, anchor_w: np.ndarray) -> "TruncationState":
        anchor_z = np.array(anchor_z, dtype=float, ndmin=2)
        anchor_w = np.array(anchor_w, dtype=float, ndmin=2)
        n = anchor_z.shape[0]
        return cls(np.zeros(n, dtype=np.int64), anchor_z, anchor_w, tuple(() for _ in range(n)))


@dataclass
class RunRecord:
    """Outputs of a batch of runs; every array has one row per replication."""

    final_z: np.ndarray
    averaged_z: np.ndarray
    n_steps: int
    truncation_count: np.ndarray
    last_truncation_step: np.ndarray
    trace_steps: Optional[np.ndarray] = None
    distance_trace: Optional[np.ndarray] = None
    suboptimality_trace: Optional[np.ndarray] = None
    checkpoint_means: dict = field(default_factory=dict)
    failed_step: Optional[np.ndarray] = None
    failure_reason: list = field(default_factory=list)

    @property
    def ok(self) -> np.ndarray:
        return self.failed_step == 0


def _check_eta(eta):
    if not eta > 0:
        raise ValueError("step size must be positive")


def sgda_step(z, w_next, eta: float, problem: SaddleProblem):
    _check_eta(eta)
    return z - eta * problem.oracle(z, w_next)


def seg_step(z, w_next, eta: float, problem: SaddleProblem):
    """Extrapolate then update, both with the same data sample."""
    _check_eta(eta)
    half = z - eta * problem.oracle(z, w_next)
    return half, z - eta * problem.oracle(half, w_next)


def tseg_step(z, w: KernelState, eta: float, d_k: float, trunc: TruncationState,
              policy: TruncationPolicy, problem: SaddleProblem, k: int = 0):
    """One truncated step; rows that move too far or leave K_kappa restart at the anchor."""
    _, cand = seg_step(z, w.w, eta, problem)
    fire = (rownorm(cand - z) >= d_k) | (rownorm(cand) > policy.radius(trunc.kappa))
    if not np.any(fire):
        return cand, w, trunc
    fire_col = fire[:, None] if cand.ndim > 1 else fire
    next_z = np.where(fire_col, trunc.anchor_z.reshape(cand.shape), cand)
    next_w = np.where(fire[:, None] if w.w.ndim > 1 else fire,
                      trunc.anchor_w.reshape(w.w.shape), w.w)
    log = list(trunc.reinit_log)
    for i in np.flatnonzero(np.atleast_1d(fire)):
        log[i] = log[i] + (k,)
    next_trunc = replace(trunc, kappa=trunc.kappa + np.atleast_1d(fire), reinit_log=tuple(log))
    return next_z, KernelState(next_w, w.stream), next_trunc


def run(algorithm: str, problem: SaddleProblem, kernel, state: KernelState, schedule,
        n_steps: int, z0=None, policy: Optional[TruncationPolicy] = None,
        trace_every: int = 0, checkpoints: Sequence[int] = (),
        restart_average: bool = False, on_failure: str = "raise") -> RunRecord:
    """Run ``state.stream.size`` independent replications for ``n_steps`` steps.

    Step k draws w_k from the kernel driven by z_{k-1} (and w_{k-1}) and then
    applies the chosen update with eta_k. The average covers z_1..z_n. With
    ``on_failure="mark"`` a replication that produces a non-finite iterate
    (or overflows the truncation cap) is frozen and reported instead of
    aborting the batch.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}")
    if (policy is not None) != (algorithm == "tseg"):
        raise ValueError("a truncation policy is required for tseg and only for tseg")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if on_failure not in ("raise", "mark"):
        raise ValueError("on_failure must be 'raise' or 'mark'")
    R = state.w.shape[0]
    d = problem.dim
    z = np.zeros((R, d)) if z0 is None else np.array(np.broadcast_to(z0, (R, d)), dtype=float)
    checkpoints = sorted({int(c) for c in checkpoints if 1 <= int(c) <= n_steps})

    z_star = problem.saddle.vector if problem.saddle is not None else None
    want_sub = problem.saddle is not None and problem.objective is not None
    trace_steps = []
    dist_rows, sub_rows = [], []

    mean = np.zeros((R, d))
    counts = np.zeros(R, dtype=np.int64) if restart_average else None
    failed = np.zeros(R, dtype=np.int64)
    reasons: list = [None] * R
    any_failed = False
    frozen = None
    trunc = None
    kappa = np.zeros(R, dtype=np.int64)
    last_trunc = np.zeros(R, dtype=np.int64)
    snapshots = {}

    for k in range(1, n_steps + 1):
        eta = schedule(k)
        state = kernel.sample(state, z)
        if algorithm == "sgda":
            z_new = sgda_step(z, state.w, eta, problem)
        elif algorithm == "seg" or trunc is None:
            _, z_new = seg_step(z, state.w, eta, problem)
        else:
            z_new, state, trunc = tseg_step(z, state, eta, policy.threshold(k, schedule),
                                            trunc, policy, problem, k)
        bad = ~np.isfinite(z_new).all(axis=1)
        if algorithm == "tseg" and trunc is not None:
            fired = trunc.kappa != kappa
            if fired.any():
                last_trunc = np.where(fired, k, last_trunc)
                if restart_average:
                    counts[fired] = 0
                    mean[fired] = 0.0
                kappa = trunc.kappa
            bad |= kappa > policy.max_truncations
        if any_failed:
            bad &= failed == 0
        if bad.any():
            reason = "non-finite iterate"
            if algorithm == "tseg" and np.any(kappa[bad] > policy.max_truncations):
                reason = "truncation overflow"
            if on_failure == "raise":
                raise RunFailure(reason, k)
            for i in np.flatnonzero(bad):
                failed[i] = k
                reasons[i] = ("truncation overflow" if algorithm == "tseg"
                              and kappa[i] > policy.max_truncations else "non-finite iterate")
            if not any_failed:
                frozen = np.zeros((R, d))
            frozen[bad] = np.nan_to_num(z[bad])
            any_failed = True
        if any_failed:
            dead = failed > 0
            z_new = np.where(dead[:, None], frozen, z_new)
            if not np.isfinite(state.w).all():
                state = KernelState(np.where(dead[:, None], 0.0, state.w), state.stream)
        z = z_new
        if algorithm == "tseg" and trunc is None:
            trunc = TruncationState.start(z, state.w)
        if restart_average:
            counts += 1
            mean += (z - mean) / counts[:, None]
        else:
            mean += (z - mean) / k
        if k in checkpoints:
            snapshots[k] = mean.copy()
        if trace_every and (k == 1 or k % trace_every == 0):
            trace_steps.append(k)
            if z_star is not None:
                dist_rows.append(rownorm(z - z_star))
            if want_sub:
                sub_rows.append(suboptimality(problem, z))

    return RunRecord(
        final_z=z,
        averaged_z=mean,
        n_steps=n_steps,
        truncation_count=kappa.copy(),
        last_truncation_step=last_trunc,
        trace_steps=np.array(trace_steps, dtype=np.int64) if trace_every else None,
        distance_trace=np.array(dist_rows) if dist_rows else None,
        suboptimality_trace=np.array(sub_rows) if sub_rows else None,
        checkpoint_means=snapshots,
        failed_step=failed,
        failure_reason=reasons,
    )
