import numpy as np
import pytest
from hypothesis import given, strategies as st

from segclt.core import ConstantStep, DecisionPoint, RunFailure, SaddleProblem, StepSchedule
from segclt.kernels import KernelState, ZeroStream, initial_state
from segclt.models import build_preset, remark3_problem
from segclt.optimizers import (TruncationPolicy, TruncationState, run, seg_step, sgda_step,
                               tseg_step)

from conftest import zero_state


def bilinear():
    # f = theta * mu, H = [mu, -theta]
    return SaddleProblem(dims=(1, 1), oracle=lambda z, w: np.stack([z[..., 1], -z[..., 0]], -1) + w,
                         mean_field=lambda z: np.stack([z[..., 1], -z[..., 0]], -1),
                         saddle=DecisionPoint([0.0], [0.0]))


def identity_field(d=2):
    return SaddleProblem(dims=(d // 2, d - d // 2), oracle=lambda z, w: z + w,
                         mean_field=lambda z: np.asarray(z), saddle=DecisionPoint(np.zeros(d // 2), np.zeros(d - d // 2)))


class NullKernel:
    """w is always zero; counts how often it is sampled."""

    def __init__(self, dim=2):
        self.dim = self.width = dim
        self.calls = 0

    def initial(self, z0):
        return np.zeros(np.shape(z0))

    def sample(self, state, z):
        self.calls += 1
        return KernelState(np.zeros_like(state.w), state.stream)


class CountingKernel(NullKernel):
    """Each sample is w = (c, c) with c the running sample count."""

    def sample(self, state, z):
        self.calls += 1
        return KernelState(np.full_like(state.w, float(self.calls)), state.stream)


def null_state(kernel, R=1, d=2):
    return KernelState(np.zeros((R, d)), ZeroStream(R, d))


# ---------------------------------------------------------------- single steps

def test_sgda_step_examples():
    z = np.array([[1.0, 0.0]])
    out = sgda_step(z, np.zeros((1, 2)), 0.1, bilinear())
    assert np.allclose(out, [[1.0, 0.1]])
    assert np.sum(out ** 2) == pytest.approx(1.01)
    assert np.allclose(sgda_step(np.ones((1, 2)), np.zeros((1, 2)), 0.1, identity_field()), 0.9)


def test_seg_step_examples():
    half, nxt = seg_step(np.array([[1.0, 0.0]]), np.zeros((1, 2)), 0.1, bilinear())
    assert np.allclose(half, [[1.0, 0.1]]) and np.allclose(nxt, [[0.99, 0.1]])
    assert np.sum(nxt ** 2) == pytest.approx(0.9901)
    half, nxt = seg_step(np.ones((1, 2)), np.zeros((1, 2)), 0.1, identity_field())
    assert np.allclose(half, 0.9) and np.allclose(nxt, 0.91)
    z = np.zeros((1, 2))
    half, nxt = seg_step(z, np.zeros((1, 2)), 0.1, bilinear())
    assert np.array_equal(half, z) and np.array_equal(nxt, z)


@pytest.mark.parametrize("step", [sgda_step, lambda *a: seg_step(*a)[1]])
def test_steps_reject_nonpositive_eta(step):
    with pytest.raises(ValueError):
        step(np.zeros((1, 2)), np.zeros((1, 2)), 0.0, bilinear())


@pytest.mark.parametrize("eta", [0.05, 0.1, 0.3])
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_eg_contracts_sgda_expands_on_bilinear(eta, a, b):
    z = np.array([[a, b]])
    if np.linalg.norm(z) < 1e-6:
        return
    w = np.zeros((1, 2))
    n0 = np.linalg.norm(z)
    assert np.linalg.norm(seg_step(z, w, eta, bilinear())[1]) < n0
    assert np.linalg.norm(sgda_step(z, w, eta, bilinear())) > n0


def test_seg_uses_the_same_sample_in_both_evaluations():
    seen = []

    def oracle(z, w):
        seen.append(w.copy())
        return z + w

    prob = SaddleProblem(dims=(1, 1), oracle=oracle)
    kernel = CountingKernel()
    rec = run("seg", prob, kernel, null_state(kernel), StepSchedule(), 25)
    assert kernel.calls == 25
    assert len(seen) == 50
    for k in range(25):
        assert np.array_equal(seen[2 * k], seen[2 * k + 1])
        assert np.all(seen[2 * k] == k + 1)
    assert rec.n_steps == 25


def test_tseg_samples_once_per_step():
    kernel = CountingKernel()
    run("tseg", identity_field(), kernel, null_state(kernel), StepSchedule(), 40,
        z0=np.array([0.1, 0.1]), policy=TruncationPolicy(d_const=100.0))
    assert kernel.calls == 40


# ---------------------------------------------------------------- truncation

def _tseg_inputs(z, eta):
    prob = identity_field()
    z = np.atleast_2d(np.asarray(z, dtype=float))
    w = KernelState(np.zeros_like(z), ZeroStream(1, 2))
    trunc = TruncationState.start(np.full_like(z, 0.5), np.full_like(z, -1.0))
    return prob, z, w, trunc


def test_tseg_fires_on_large_move():
    # identity field: SEG moves by eta * (1 - eta) * |z|
    eta = 0.1
    prob, z, w, trunc = _tseg_inputs([[0.06 / (eta * (1 - eta)), 0.0]], eta)
    _, cand = seg_step(z, w.w, eta, prob)
    assert np.linalg.norm(cand - z) == pytest.approx(0.06)
    nz, nw, nt = tseg_step(z, w, eta, 0.05, trunc, TruncationPolicy(), prob, k=7)
    assert nt.kappa[0] == 1 and nt.reinit_log[0] == (7,)
    assert np.array_equal(nz, trunc.anchor_z) and np.array_equal(nw.w, trunc.anchor_w)


def test_tseg_fires_outside_ball():
    policy = TruncationPolicy(radius0=5.0, radius_growth=5.0)
    prob, z, w, trunc = _tseg_inputs([[1.0, 0.0]], 0.01)
    trunc = TruncationState(np.array([2]), trunc.anchor_z, trunc.anchor_w, ((3, 4),))
    target = policy.radius(2) + 0.01
    eta = 0.001
    # choose z so that the candidate lands at norm radius + 0.01
    z = np.array([[target / (1 - eta + eta ** 2), 0.0]])
    _, cand = seg_step(z, w.w, eta, prob)
    assert np.linalg.norm(cand) == pytest.approx(target)
    _, _, nt = tseg_step(z, w, eta, 1e9, trunc, policy, prob, k=9)
    assert nt.kappa[0] == 3 and nt.reinit_log[0] == (3, 4, 9)
    assert len(nt.reinit_log[0]) == nt.kappa[0]


def test_tseg_matches_seg_when_never_triggered():
    kernel = NullKernel()
    z0 = np.array([0.4, -0.3])
    a = run("seg", identity_field(), kernel, null_state(kernel), StepSchedule(0.05, 0.8), 300,
            z0=z0, trace_every=1)
    b = run("tseg", identity_field(), kernel, null_state(kernel), StepSchedule(0.05, 0.8), 300,
            z0=z0, trace_every=1, policy=TruncationPolicy())
    assert b.truncation_count[0] == 0
    assert np.array_equal(a.final_z, b.final_z) and np.array_equal(a.averaged_z, b.averaged_z)
    assert np.array_equal(a.distance_trace, b.distance_trace)


def test_truncation_policy_invariants():
    p = TruncationPolicy()
    radii = p.radius(np.arange(50))
    assert np.all(np.diff(radii) > 0)
    s = StepSchedule(0.1, 0.8)
    d = np.array([p.threshold(k, s) for k in range(1, 2000)])
    assert np.all(np.diff(d) < 0)
    # with a = 1/(1 + eps) the threshold is k^(-1/2)
    assert d[99] == pytest.approx(100 ** -0.5)
    for bad in (dict(radius0=0), dict(radius_growth=-1), dict(epsilon=1.0), dict(d_const=0)):
        with pytest.raises(ValueError):
            TruncationPolicy(**bad)


def test_truncation_overflow_aborts():
    # a field that always overshoots: every step fires, the cap is hit
    kernel = NullKernel()
    prob = SaddleProblem(dims=(1, 1), oracle=lambda z, w: -50.0 * np.ones_like(z))
    with pytest.raises(RunFailure, match="truncation overflow"):
        run("tseg", prob, kernel, null_state(kernel), StepSchedule(), 100,
            policy=TruncationPolicy(max_truncations=5))
    rec = run("tseg", prob, kernel, null_state(kernel), StepSchedule(), 100,
              policy=TruncationPolicy(max_truncations=5), on_failure="mark")
    assert rec.failed_step[0] == 7 and rec.failure_reason[0] == "truncation overflow"


# ---------------------------------------------------------------- driver

def test_run_policy_contract():
    kernel = NullKernel()
    with pytest.raises(ValueError):
        run("seg", identity_field(), kernel, null_state(kernel), StepSchedule(), 5,
            policy=TruncationPolicy())
    with pytest.raises(ValueError):
        run("tseg", identity_field(), kernel, null_state(kernel), StepSchedule(), 5)
    with pytest.raises(ValueError):
        run("seg", identity_field(), kernel, null_state(kernel), StepSchedule(), 0)


def test_single_step_average_is_first_iterate():
    kernel = NullKernel()
    rec = run("seg", identity_field(), kernel, null_state(kernel), StepSchedule(), 1,
              z0=np.array([1.0, 1.0]))
    assert np.array_equal(rec.averaged_z, rec.final_z)
    assert np.allclose(rec.final_z, 0.91)


def test_decoupled_field_contracts_to_zero():
    kernel = NullKernel()
    rec = run("seg", identity_field(), kernel, null_state(kernel), StepSchedule(0.5, 0.6), 5000,
              z0=np.array([2.0, -1.0]), trace_every=1)
    d = rec.distance_trace[:, 0]
    assert np.all(np.diff(d) <= 0)
    assert d[-1] < 1e-10 and np.linalg.norm(rec.averaged_z) < 0.01


def test_averaged_equals_batch_mean_of_full_trace():
    prob = build_preset("martingale-ev").problem
    kernel = build_preset("martingale-ev").kernel
    seen = []

    class Spy:
        dim, width = kernel.dim, kernel.width
        initial = staticmethod(kernel.initial)

        def sample(self, state, z):
            seen.append(z.copy())
            return kernel.sample(state, z)

    st_ = initial_state(kernel, np.zeros(6), 3, [0, 1])
    rec = run("seg", prob, Spy(), st_, StepSchedule(), 500)
    iterates = np.array(seen[1:] + [rec.final_z])  # z_1..z_n
    batch = iterates.mean(axis=0)
    assert np.max(np.abs(rec.averaged_z - batch) / np.abs(batch)) <= 1e-10


@pytest.mark.filterwarnings("ignore:overflow")
def test_run_raises_on_non_finite():
    kernel = NullKernel()
    prob = SaddleProblem(dims=(1, 1), oracle=lambda z, w: -z * 1e200)
    with pytest.raises(RunFailure) as err:
        run("sgda", prob, kernel, null_state(kernel), ConstantStep(1.0), 10,
            z0=np.array([1.0, 1.0]))
    assert err.value.step == 2


@pytest.mark.filterwarnings("ignore:overflow")
def test_run_marks_failures_per_row():
    kernel = NullKernel()
    prob = SaddleProblem(dims=(1, 1), oracle=lambda z, w: -z * 1e200)
    z0 = np.array([[1.0, 1.0], [0.0, 0.0]])
    rec = run("sgda", prob, kernel, null_state(kernel, R=2), ConstantStep(1.0), 10, z0=z0,
              on_failure="mark")
    assert rec.failed_step.tolist() == [2, 0]
    assert rec.failure_reason[0] == "non-finite iterate" and rec.failure_reason[1] is None
    assert np.all(np.isfinite(rec.averaged_z))


def test_martingale_single_run_near_equilibrium():
    pre = build_preset("martingale-ev")
    st_ = initial_state(pre.kernel, np.zeros(6), 2024, [0])
    rec = run("seg", pre.problem, pre.kernel, st_, StepSchedule(0.1, 0.75), 5000)
    assert np.all(np.abs(rec.averaged_z[0] - pre.problem.saddle.vector) < 0.05)


def test_batch_size_does_not_change_replications():
    pre = build_preset("markov-ev")
    kw = dict(z0=np.zeros(6), policy=TruncationPolicy(), trace_every=50, checkpoints=[100])
    big = run("tseg", pre.problem, pre.kernel, initial_state(pre.kernel, np.zeros(6), 5, range(6)),
              StepSchedule(0.1, 0.8), 300, **kw)
    small = run("tseg", pre.problem, pre.kernel, initial_state(pre.kernel, np.zeros(6), 5, [4]),
                StepSchedule(0.1, 0.8), 300, **kw)
    assert np.array_equal(big.final_z[4], small.final_z[0])
    assert np.array_equal(big.averaged_z[4], small.averaged_z[0])
    assert np.array_equal(big.checkpoint_means[100][4], small.checkpoint_means[100][0])
    assert np.array_equal(big.suboptimality_trace[:, 4], small.suboptimality_trace[:, 0])


def test_restart_average_flag():
    kernel = NullKernel()
    prob = SaddleProblem(dims=(1, 1), oracle=lambda z, w: np.where(np.abs(z) > 0, -0.2, -0.2))
    pol = TruncationPolicy(radius0=1.0, radius_growth=100.0, d_const=10.0)
    # drifts outward at constant speed until it leaves K_0, then restarts at the anchor
    a = run("tseg", prob, kernel, null_state(kernel), StepSchedule(1.0, 0.6), 30, policy=pol)
    b = run("tseg", prob, kernel, null_state(kernel), StepSchedule(1.0, 0.6), 30, policy=pol,
            restart_average=True)
    assert a.truncation_count[0] >= 1
    assert np.array_equal(a.final_z, b.final_z)
    assert not np.array_equal(a.averaged_z, b.averaged_z)


def test_sgda_one_step_second_moment_remark3():
    prob = remark3_problem()
    pre = build_preset("remark3")
    eta = 0.1
    n = 10 ** 5
    z0 = np.array([1.0, 0.0])
    rec = run("sgda", prob, pre.kernel, initial_state(pre.kernel, z0, 8, np.arange(n)),
              ConstantStep(eta), 1, z0=z0)
    sq = np.sum(rec.final_z ** 2, axis=1)
    pred = (1 + eta ** 2) + 2 * eta ** 2
    assert abs(sq.mean() - pred) <= 3 * sq.std(ddof=1) / np.sqrt(n)
