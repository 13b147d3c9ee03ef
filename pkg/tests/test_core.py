import numpy as np
import pytest
from hypothesis import given, strategies as st

from segclt.core import (DecisionPoint, SaddleProblem, SaddleUnknownError, StepSchedule,
                         matvec, rownorm, running_average, step_size, suboptimality)
from segclt.models import LinearFieldSpec, build_preset, linear_problem


def quad_problem():
    # f(theta, mu) = theta^2 - mu^2, H = [2 theta, 2 mu]
    return SaddleProblem(
        dims=(1, 1),
        oracle=lambda z, w: 2.0 * z + w,
        mean_field=lambda z: 2.0 * np.asarray(z),
        saddle=DecisionPoint([0.0], [0.0]),
        objective=lambda th, mu: np.sum(th ** 2, axis=-1) - np.sum(mu ** 2, axis=-1),
    )


@pytest.mark.parametrize("eta, a, k, expected", [
    (0.5, 0.75, 16, 0.0625),
    (0.5, 0.75, 1, 0.5),
    (1.0, 2 / 3, 8, 0.25),
])
def test_step_size_examples(eta, a, k, expected):
    assert step_size(StepSchedule(eta, a), k) == pytest.approx(expected, rel=1e-12)


def test_step_size_is_one_indexed():
    with pytest.raises(ValueError):
        step_size(StepSchedule(), 0)


@pytest.mark.parametrize("a", [0.5, 1.0, 0.3, 1.2])
def test_schedule_exponent_must_be_in_open_interval(a):
    with pytest.raises(ValueError):
        StepSchedule(0.1, a)


@given(st.floats(0.51, 0.99), st.integers(1, 10 ** 6 - 1))
def test_step_size_strictly_decreasing(a, k):
    s = StepSchedule(0.3, a)
    assert s(k + 1) < s(k)


def test_schedule_partial_sums_trend():
    s = StepSchedule(1.0, 0.75)
    k = np.arange(1, 10 ** 6 + 1, dtype=float)
    eta = s.eta0 * k ** -s.exponent_a
    lin = np.cumsum(eta)[[10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6 - 1]]
    sq = np.cumsum(eta ** 2)[[10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6 - 1]]
    # sum eta_k keeps growing by a roughly constant factor; sum eta_k^2 flattens
    assert np.all(np.diff(lin) > 0) and lin[-1] / lin[-2] > 1.5
    assert sq[-1] - sq[-2] < sq[1] - sq[0]


def test_decision_point_roundtrip():
    p = DecisionPoint([1.0, 2.0], [3.0])
    assert p.dims == (2, 1)
    assert DecisionPoint.from_vector(p.vector, 2) == p
    with pytest.raises(ValueError):
        p.theta[0] = 5.0


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=20), st.data())
def test_split_concat_identity(values, data):
    d_theta = data.draw(st.integers(1, len(values) - 1))
    z = np.array(values)
    assert np.array_equal(DecisionPoint.from_vector(z, d_theta).vector, z)


def test_decision_point_needs_both_players():
    with pytest.raises(ValueError):
        DecisionPoint([], [1.0])


def test_suboptimality_examples():
    prob = quad_problem()
    assert suboptimality(prob, np.zeros(2)) == 0.0
    assert suboptimality(prob, np.array([1.0, 1.0])) == pytest.approx(2.0)
    assert suboptimality(prob, np.array([0.5, 0.0])) == pytest.approx(0.25)


def test_suboptimality_needs_saddle():
    prob = SaddleProblem(dims=(1, 1), oracle=lambda z, w: z)
    with pytest.raises(SaddleUnknownError):
        suboptimality(prob, np.zeros(2))


def test_problem_rejects_wrong_saddle():
    with pytest.raises(ValueError):
        SaddleProblem(dims=(1, 1), oracle=lambda z, w: z, mean_field=lambda z: z,
                      saddle=DecisionPoint([1.0], [0.0]))


def test_running_average_examples():
    m = np.zeros(1)
    for n, x in enumerate([1.0, 2.0, 3.0], start=1):
        m = running_average(m, np.array([x]), n)
    assert m == pytest.approx([2.0])
    z = np.array([4.0, -1.0])
    assert np.array_equal(running_average(np.array([9.0, 9.0]), z, 1), z)
    c = np.array([0.3, 0.7])
    m = np.zeros(2)
    for n in range(1, 50):
        m = running_average(m, c, n)
        assert m == pytest.approx(c, rel=1e-14)


def test_running_average_matches_batch_mean_long_stream(rng):
    xs = rng.normal(size=(10 ** 5, 2)) + 3.0
    m = np.zeros(2)
    for n, x in enumerate(xs, start=1):
        m = m + (x - m) / n
    assert np.max(np.abs(m - xs.mean(axis=0)) / np.abs(xs.mean(axis=0))) <= 1e-12


def _eq14_cases():
    # convex-concave problems with known saddle and objective
    yield build_preset("martingale-ev").problem, 0.9
    yield build_preset("markov-ev").problem, 0.9
    spec = LinearFieldSpec(np.array([[1.5, 0.7], [-0.7, 0.8]]), np.eye(2))
    yield linear_problem(spec), 3.0


@pytest.mark.parametrize("case", range(3))
def test_monotone_inequality_on_random_points(case, rng):
    # H(z)'(z - z*) >= G(z) >= 0 in the local region
    prob, scale = list(_eq14_cases())[case]
    z_star = prob.saddle.vector
    d = prob.dim
    pts = []
    while len(pts) < 1000:
        z = z_star + rng.uniform(-scale, scale, size=d) / np.sqrt(d)
        th, mu = prob.split(z)
        if np.linalg.norm(th) < 1 and np.linalg.norm(mu) < 1:
            pts.append(z)
    z = np.array(pts)
    lhs = np.sum(prob.mean_field(z) * (z - z_star), axis=1)
    gap = suboptimality(prob, z)
    assert np.all(gap >= -1e-12)
    assert np.all(lhs >= gap - 1e-12)


@given(st.integers(1, 7), st.integers(1, 5))
def test_matvec_and_rownorm_agree_with_numpy(rows, d):
    r = np.random.default_rng(rows * 10 + d)
    M = r.normal(size=(d, d))
    x = r.normal(size=(rows, d))
    assert np.allclose(matvec(M, x), x @ M.T, rtol=1e-13, atol=1e-13)
    assert np.allclose(rownorm(x), np.linalg.norm(x, axis=1), rtol=1e-13)


def test_matvec_is_batch_independent(rng):
    M = rng.normal(size=(6, 6))
    x = rng.normal(size=(300, 6))
    full = matvec(M, x)
    assert all(np.array_equal(full[i], matvec(M, x[i:i + 1])[0]) for i in range(300))
