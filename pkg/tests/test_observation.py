import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semispde.calculus import GridFunction
from semispde.mesh import build_mesh, gamma_plus
from semispde.observation import (
    Lambda1Data,
    ObservationError,
    lambda1,
    lambda2,
    normal_derivative,
    normal_traces_array,
    observe,
    observed_shell_mask,
    x1_components,
    x1_norm,
    x2_components,
    x2_norm,
)
from semispde.solver import SPDEProblem, Stepper, TimeGrid, sample_increments, sample_path, solve_forward


def _problem(n=1, N=7, **kw):
    mesh = build_mesh(n=n, N=N)
    base = dict(gamma=1.0, g=lambda x, t: np.sin(np.pi * x[0]) * (1 + t), w0=lambda x: np.prod(np.sin(np.pi * x), axis=0))
    base.update(kw)
    return SPDEProblem(mesh, **base)


def test_normal_trace_of_zero_boundary_function():
    mesh = build_mesh(n=1, N=3)
    u = GridFunction(mesh, mesh.closure_placement, [0.0, 1.0, 2.0, 3.0, 0.0])
    tr = normal_derivative(u)[0].values
    # outward normal derivative is -(adjacent value)/h on both faces
    np.testing.assert_allclose(tr, [-1.0 / mesh.h, -3.0 / mesh.h])
    np.testing.assert_allclose(normal_traces_array(u.values, mesh)[0], tr)


def test_observe_matches_stored_trajectory():
    prob = _problem(n=2, N=5, a3=0.3)
    tg = TimeGrid(0.1, 20)
    gp = gamma_plus(prob.mesh, (-0.5, 1.7))
    path = sample_path(4, tg, 0)
    stored = lambda1(solve_forward(prob, path), gp)
    streamed = observe(prob, tg, path.increments[:, None], gp)
    for a, b in zip(stored.traces, streamed.traces):
        np.testing.assert_allclose(a, b, rtol=1e-12)
    np.testing.assert_allclose(stored.terminal, streamed.terminal, rtol=1e-12)
    assert [t.shape[1] for t in stored.traces] == [gp.count(0), gp.count(1)]


def test_x1_quadrature_by_hand():
    mesh = build_mesh(n=1, N=3)
    gp = gamma_plus(mesh, (-0.5,))
    tr = np.array([[[1.0]], [[2.0]], [[5.0]]])  # M = 2, one observed point, one path
    term = np.array([[1.0], [0.0], [1.0]])
    d = Lambda1Data(mesh, gp, 0.5, [tr], term)
    trace_part = np.sqrt(0.5 * (1.0 + 4.0))  # the final step enters only through the terminal state
    terminal_part = np.sqrt(mesh.h * 2.0)
    assert x1_norm(d) == pytest.approx(trace_part + terminal_part)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-4, 4).filter(lambda v: abs(v) > 1e-3), seed=st.integers(0, 100))
def test_data_norms_absolutely_homogeneous(c, seed):
    prob = _problem(xi=lambda x, t: t * x[0])
    tg = TimeGrid(0.1, 10)
    gp = gamma_plus(prob.mesh, (-0.5,))
    dB = sample_increments(seed, tg, range(3))
    st_ = Stepper(prob, tg, "direct")
    d1 = observe(prob, tg, dB, gp, "lambda1", stepper=st_)
    d2 = observe(prob, tg, dB, gp, "lambda2", stepper=st_)
    assert x1_norm(c * d1) == pytest.approx(abs(c) * x1_norm(d1), rel=1e-12)
    assert x2_norm(c * d2) == pytest.approx(abs(c) * x2_norm(d2), rel=1e-12)


def test_unobserved_faces_do_not_enter_boundary_data():
    mesh = build_mesh(n=1, N=7)
    tg = TimeGrid(0.1, 10)
    gp = gamma_plus(mesh, (-0.5,))  # observes x = 1 only
    far = SPDEProblem(mesh, xi=lambda x, t: t * (x[0] == 0.0))
    near = SPDEProblem(mesh, xi=lambda x, t: t * (x[0] == 1.0))
    d_far = observe(far, tg, np.zeros((10, 1)), gp, "lambda2")
    d_near = observe(near, tg, np.zeros((10, 1)), gp, "lambda2")
    assert x2_components(d_far)[0][0] == 0.0
    assert x2_components(d_near)[0][0] > 0.0


def test_observed_shell_mask():
    mesh = build_mesh(n=2, N=3)
    mask = observed_shell_mask(gamma_plus(mesh, (-0.5, -0.5)))
    X = mesh.coords(mesh.closure_placement)
    np.testing.assert_array_equal(mask, (X[0] == 1.0) | (X[1] == 1.0))


def test_lambda2_keeps_face_values():
    prob = _problem(xi=lambda x, t: t + 0 * x[0])
    tg = TimeGrid(0.1, 10)
    traj = solve_forward(prob, sample_path(1, tg))
    d = lambda2(traj, gamma_plus(prob.mesh, (-0.5,)))
    np.testing.assert_allclose(d.values[0][:, 0, 0], tg.times)


def test_mismatched_realizations_rejected():
    mesh = build_mesh(n=1, N=3)
    gp = gamma_plus(mesh, (-0.5,))
    with pytest.raises(ObservationError):
        Lambda1Data(mesh, gp, 0.1, [np.zeros((3, 1, 2))], np.zeros((3, 4)))
    with pytest.raises(ObservationError):
        Lambda1Data(mesh, gp, 0.1, [np.zeros((3, 2, 2))], np.zeros((3, 2)))


def test_combining_observations():
    mesh = build_mesh(n=1, N=3)
    gp = gamma_plus(mesh, (-0.5,))
    a = Lambda1Data(mesh, gp, 0.1, [np.ones((3, 1, 1))], np.ones((3, 1)))
    b = (a + a) - a * 3.0
    np.testing.assert_array_equal(b.traces[0], -1.0)
    tr, term = x1_components(b)
    assert tr.shape == (1, 1) and term.shape == (1,)
