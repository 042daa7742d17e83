import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ito_terminal_energy, manufactured

from semispde.calculus import integral_array, interior_array
from semispde.linalg import ConvergenceError, cg
from semispde.mesh import build_mesh
from semispde.solver import (
    AdaptedSource,
    ProblemError,
    SPDEProblem,
    Stepper,
    TimeGrid,
    march,
    monte_carlo,
    problem_hash,
    sample_increments,
    sample_path,
    solve_deterministic,
    solve_forward,
    system_matrix,
)


def manufactured_errors(levels=(7, 15, 31)):
    m = manufactured()
    errs, hs = [], []
    for N in levels:
        mesh = build_mesh(n=1, N=N)
        tg = TimeGrid.from_dt(m["T"], mesh.h**2 / 4)
        prob = SPDEProblem(mesh, gamma=m["gamma"], a1=m["a1"], a2=m["a2"], f=m["f"], xi=m["xi"], w0=m["w0"])
        traj = solve_deterministic(prob, tg)
        e = traj.terminal.values - m["exact"](mesh.coords(mesh.primal), tg.T)
        errs.append(np.sqrt(mesh.h * np.sum(e**2)))
        hs.append(mesh.h)
    return np.array(hs), np.array(errs)


def test_manufactured_solution_converges_at_second_order():
    h, e = manufactured_errors()
    slope = np.polyfit(np.log(h), np.log(e), 1)[0]
    assert slope >= 1.8


def test_time_grid_validation():
    with pytest.raises(ProblemError):
        TimeGrid(0.0, 10)
    with pytest.raises(ProblemError):
        TimeGrid(1.0, 1)
    assert TimeGrid.from_dt(1.0, 0.3).M == 4


def test_increments_are_reproducible_per_index():
    tg = TimeGrid(1.0, 16)
    a = sample_increments(42, tg, [0, 1, 2])
    b = sample_increments(42, tg, [2])
    np.testing.assert_array_equal(a[:, 2], b[:, 0])
    assert not np.array_equal(a[:, 0], a[:, 1])
    assert np.std(sample_increments(1, TimeGrid(1.0, 4000), [0])) == pytest.approx(np.sqrt(1 / 4000), rel=0.05)


def test_direct_and_iterative_solvers_agree():
    mesh = build_mesh(n=2, N=6)
    tg = TimeGrid(0.1, 20)
    prob = SPDEProblem(mesh, gamma=lambda x: 1 + 0.3 * x[0] * x[1], a2=0.5, w0=lambda x: np.sin(np.pi * x[0]) * x[1], g=0.3, a3=0.2)
    path = sample_path(5, tg, 0)
    a = solve_forward(prob, path, "cg").states
    b = solve_forward(prob, path, "direct").states
    np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-10)


def test_system_matrix_is_symmetric_positive():
    mesh = build_mesh(n=2, N=4)
    gd = [np.full(mesh.shape(mesh.dual(i)), 1.0 + i) for i in range(2)]
    A = system_matrix(mesh, gd, 0.01).toarray()
    np.testing.assert_allclose(A, A.T)
    assert np.linalg.eigvalsh(A).min() > 0.99


def test_cg_solves_spd_system():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((12, 12))
    A = B @ B.T + 12 * np.eye(12)
    b = rng.standard_normal(12)
    x, info = cg(lambda v: A @ v, b, ndim=1, rtol=1e-12)
    np.testing.assert_allclose(A @ x, b, atol=1e-9)
    assert info.iterations <= 12


def test_cg_reports_stagnation():
    A = np.diag(np.logspace(0, 12, 50))
    with pytest.raises(ConvergenceError):
        cg(lambda v: A @ v, np.ones(50), ndim=1, rtol=1e-14, maxiter=3)


def test_batched_columns_solve_independently():
    mesh = build_mesh(n=1, N=9)
    tg = TimeGrid(0.2, 30)
    prob = SPDEProblem(mesh, g=1.0, a3=0.4, w0=lambda x: np.sin(np.pi * x[0]))
    dB = sample_increments(11, tg, range(4))
    batch = np.stack([w for _, w in march(prob, tg, dB)])
    for p in range(4):
        single = np.stack([w for _, w in march(prob, tg, dB[:, p])])
        np.testing.assert_allclose(batch[..., p], single, rtol=1e-9, atol=1e-12)


def test_adaptedness_truncation_is_exact():
    # altering increments from step m on cannot change states up to m
    mesh = build_mesh(n=1, N=9)
    tg = TimeGrid(0.2, 30)
    src = AdaptedSource(lambda x, t, past: np.sin(np.pi * x[0]) * (1.0 + np.sum(past)))
    prob = SPDEProblem(mesh, g=src, a3=0.5, w0=lambda x: x[0] * (1 - x[0]))
    dB = sample_path(3, tg, 0).increments
    base = np.stack([w for _, w in march(prob, tg, dB)])
    for m in (1, 7, 29):
        alt = dB.copy()
        alt[m:] = np.random.default_rng(m).standard_normal(tg.M - m)
        states = np.stack([w for _, w in march(prob, tg, alt)])
        assert np.array_equal(states[: m + 1], base[: m + 1])
        assert not np.array_equal(states[m + 1], base[m + 1])


def test_adapted_source_sees_only_the_past():
    tg = TimeGrid(0.1, 10)
    seen = []

    def fn(x, t, past):
        seen.append(past.shape[0])
        return 0.0 * x[0]

    prob = SPDEProblem(build_mesh(n=1, N=3), g=AdaptedSource(fn))
    list(march(prob, tg, sample_path(0, tg).increments))
    assert seen == list(range(10))


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_superposition_for_linear_data(alpha, beta, seed):
    mesh = build_mesh(n=1, N=7)
    tg = TimeGrid(0.1, 12)
    dB = sample_path(seed, tg).increments
    gam = lambda x: 1.0 + 0.4 * x[0]  # noqa: E731
    p1 = dict(w0=lambda x: np.sin(np.pi * x[0]), g=lambda x, t: x[0] + t, f=1.0, xi=lambda x, t: t * x[0])
    p2 = dict(w0=lambda x: x[0] ** 2, g=0.5, f=lambda x, t: np.cos(x[0]), xi=lambda x, t: t**2)
    comb = {k: (lambda *a, k=k: alpha * _v(p1[k], *a) + beta * _v(p2[k], *a)) for k in p1}

    def run(data):
        prob = SPDEProblem(mesh, gamma=gam, a1=[0.3], a2=0.2, **data)
        return np.stack([w for _, w in march(prob, tg, dB, solver="direct")])

    lhs = run(comb)
    rhs = alpha * run(p1) + beta * run(p2)
    scale = max(np.max(np.abs(lhs)), 1e-300)
    assert np.max(np.abs(lhs - rhs)) / scale <= 1e-10


def _v(c, *args):
    return c(*args) if callable(c) else c


def test_ito_isometry():
    N, T = 15, 0.5
    mesh = build_mesh(n=1, N=N)
    tg = TimeGrid.from_dt(T, mesh.h**2 / 4)
    prob = SPDEProblem(mesh, gamma=1.0, g=1.0)
    st_ = Stepper(prob, tg)

    def work(dB, ix):
        last = None
        for _, w in march(prob, tg, dB, stepper=st_):
            last = w
        return {"sq": integral_array(interior_array(last, [0]) ** 2, mesh.h, 1)}

    est = np.mean(monte_carlo(work, 200, 12345, tg, chunk=50)["sq"])
    ref = ito_terminal_energy(N, T, tg.M)
    assert abs(est / ref - 1) <= 0.15


def test_monte_carlo_independent_of_threads():
    tg = TimeGrid(0.1, 8)

    def work(dB, ix):
        return {"s": np.cumsum(dB, axis=0)[-1], "i": np.asarray(list(ix), float)}

    a = monte_carlo(work, 23, 9, tg, chunk=5, threads=1)
    b = monte_carlo(work, 23, 9, tg, chunk=5, threads=4)
    np.testing.assert_array_equal(a["s"], b["s"])
    np.testing.assert_array_equal(a["i"], np.arange(23))


def test_problem_validation_and_hash():
    mesh = build_mesh(n=1, N=5)
    with pytest.raises(ProblemError):
        Stepper(SPDEProblem(mesh, gamma=-1.0), TimeGrid(1.0, 4))
    with pytest.raises(ProblemError):
        Stepper(SPDEProblem(mesh, a1=[0.1, 0.2]), TimeGrid(1.0, 4))
    with pytest.raises(ProblemError):
        solve_deterministic(SPDEProblem(mesh, g=1.0), TimeGrid(1.0, 4))
    tg = TimeGrid(1.0, 4)
    assert problem_hash(SPDEProblem(mesh, g=1.0), tg) == problem_hash(SPDEProblem(mesh, g=1.0), tg)
    assert problem_hash(SPDEProblem(mesh, g=1.0), tg) != problem_hash(SPDEProblem(mesh, g=2.0), tg)


def test_dirichlet_data_held_on_shell():
    mesh = build_mesh(n=2, N=4)
    tg = TimeGrid(0.1, 5)
    xi = lambda x, t: t * (x[0] + x[1])  # noqa: E731
    traj = solve_deterministic(SPDEProblem(mesh, xi=xi), tg)
    X = mesh.coords(mesh.closure_placement)
    shell = np.ones(mesh.shape(mesh.closure_placement), bool)
    shell[1:-1, 1:-1] = False
    for m in range(tg.M + 1):
        np.testing.assert_allclose(traj.states[m][shell], xi(X, tg.times[m])[shell])
