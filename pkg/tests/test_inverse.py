import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semispde.inverse import (
    CauchyPerturbation,
    InverseError,
    LinearSourceMap,
    SourcePair,
    cauchy_stability_experiment,
    default_perturbations,
    fit_hoelder,
    hoelder_branches,
    reconstruct_source,
    relative_source_error,
    smooth_pairs,
    source_stability_experiment,
    tabulate_source,
    witness_constant,
)
from semispde.mesh import build_mesh, gamma_plus
from semispde.observation import Lambda1Data, observe
from semispde.solver import SPDEProblem, Stepper, TimeGrid, sample_path


def _map(n, N, basis, T=0.2):
    mesh = build_mesh(n=n, N=N)
    gp = gamma_plus(mesh, (-0.5,) * n)
    tg = TimeGrid.from_dt(T, mesh.h**2 / 4)
    prob = SPDEProblem(
        mesh, gamma=lambda x: 1 + 0.3 * np.sin(2 * x[0]), a1=[lambda x, t: 0.5 + 0 * x[0]] * n, a2=lambda x, t: np.cos(x[0]) + t
    )
    path = sample_path(7, tg, 0)
    return LinearSourceMap(prob, tg, path.increments, gp, basis, time_profile=lambda t: 1 + t)


@pytest.mark.parametrize("n,N", [(1, 15), (2, 5)])
@pytest.mark.parametrize("basis", ["profile", "field"])
def test_adjoint_inner_product(n, N, basis):
    F = _map(n, N, basis)
    rng = np.random.default_rng(1)
    c = rng.standard_normal(F.param_shape)
    probe = F.forward(np.zeros(F.param_shape))
    d = Lambda1Data(probe.mesh, probe.gamma_plus, probe.dt, [rng.standard_normal(t.shape) for t in probe.traces], rng.standard_normal(probe.terminal.shape))
    a = F.data_inner(F.forward(c), d)
    b = F.param_inner(c, F.adjoint(d))
    assert abs(a - b) / max(abs(a), abs(b)) <= 1e-10


def test_forward_map_matches_simulation():
    mesh = build_mesh(n=1, N=9)
    gp = gamma_plus(mesh, (-0.5,))
    tg = TimeGrid(0.1, 30)
    path = sample_path(2, tg, 0)
    shape = lambda x: np.sin(np.pi * x[0])  # noqa: E731
    prob = SPDEProblem(mesh, gamma=1.0, a2=0.3, g=lambda x, t: (1 + t) * shape(x))
    sim = observe(prob, tg, path.increments[:, None], gp, stepper=Stepper(prob, tg, "direct"))
    F = LinearSourceMap(prob, tg, path.increments, gp, "profile", lambda t: 1 + t)
    lin = F.forward(shape(mesh.coords(mesh.primal)))
    np.testing.assert_allclose(lin.traces[0], sim.traces[0], rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(lin.terminal, sim.terminal, rtol=1e-10, atol=1e-13)


def _inverse_crime(N=15, T=0.2, alpha=1e-8, basis="profile"):
    mesh = build_mesh(n=1, N=N)
    gp = gamma_plus(mesh, (-0.5,))
    tg = TimeGrid.from_dt(T, mesh.h**2 / 4)
    g = lambda x, t: np.sin(np.pi * x[0]) + 0.5 * x[0]  # noqa: E731
    prob = SPDEProblem(mesh, gamma=1.0, g=g, w0=lambda x: x[0] * (1 - x[0]))
    path = sample_path(3, tg, 0)
    obs = observe(prob, tg, path.increments[:, None], gp)
    res = reconstruct_source(obs, path, prob, alpha, basis)
    return relative_source_error(res.estimate, tabulate_source(g, mesh, tg)), res


def test_noise_free_reconstruction_recovers_source():
    err, res = _inverse_crime()
    assert err <= 0.01
    assert res.misfit < 1e-5


def test_regularization_trades_misfit_for_size():
    e_small, r_small = _inverse_crime(alpha=1e-8)
    e_big, r_big = _inverse_crime(alpha=1e-1)
    assert r_big.misfit > r_small.misfit
    assert np.linalg.norm(r_big.coefficients) < np.linalg.norm(r_small.coefficients)


def test_zero_data_gives_zero_minimizer():
    mesh = build_mesh(n=1, N=9)
    gp = gamma_plus(mesh, (-0.5,))
    tg = TimeGrid(0.1, 20)
    prob = SPDEProblem(mesh, gamma=1.0, w0=lambda x: np.sin(np.pi * x[0]))
    path = sample_path(1, tg, 0)
    obs = observe(prob, tg, path.increments[:, None], gp, stepper=Stepper(prob, tg, "direct"))
    res = reconstruct_source(obs, path, prob, 1e-6)
    assert np.max(np.abs(res.coefficients)) <= 1e-12


def test_reconstruction_input_checks():
    mesh = build_mesh(n=1, N=5)
    gp = gamma_plus(mesh, (-0.5,))
    tg = TimeGrid(0.1, 10)
    path = sample_path(1, tg, 0)
    prob = SPDEProblem(mesh, g=1.0)
    obs = observe(prob, tg, path.increments[:, None], gp)
    with pytest.raises(InverseError):
        reconstruct_source(obs, path, prob, 0.0)
    with pytest.raises(InverseError):
        LinearSourceMap(SPDEProblem(mesh, a3=0.5), tg, path.increments, gp)
    two = observe(prob, tg, np.stack([path.increments] * 2, axis=-1), gp)
    with pytest.raises(InverseError):
        reconstruct_source(two, path, prob, 1e-6)


def test_identical_sources_are_skipped_by_the_floor():
    g = lambda x, t: 1.0 + x[0]  # noqa: E731
    pairs = [SourcePair(g, g, "same"), smooth_pairs(1, 1, 0)[0]]
    rep = source_stability_experiment(1, (7,), pairs, n_paths=5, seed=1, T=0.1)
    assert np.isnan(rep.ratios[0, 0]) and np.isfinite(rep.ratios[0, 1])
    assert rep.skipped and rep.skipped[0]["instance"] == 0


@settings(max_examples=5, deadline=None)
@given(c=st.sampled_from([-3.0, 0.1, 2.5, 40.0]))
def test_source_ratio_invariant_under_gap_scaling(c):
    base = smooth_pairs(1, 1, 4)[0]
    scaled = SourcePair(lambda x, t: c * base.g1(x, t), lambda x, t: c * base.g2(x, t))
    rep = source_stability_experiment(1, (7,), [base, scaled], n_paths=6, seed=3, T=0.1, solver="direct")
    assert rep.ratios[0, 1] == pytest.approx(rep.ratios[0, 0], rel=1e-10)


def test_source_report_layout():
    rep = source_stability_experiment(1, (5, 7), smooth_pairs(1, 2, 0), n_paths=4, seed=2, T=0.1)
    rows = rep.rows()
    assert len(rows) == 4 and {"N", "h", "ratio", "numerator", "denominator", "denominator_se", "witness"} <= set(rows[0])
    s = rep.summary()
    assert s["levels"] == [5, 7] and len(s["max"]) == 2 and s["variation"] >= 1.0


def test_witness_constant_of_exponential_gap():
    mesh = build_mesh(n=1, N=9)
    tg = TimeGrid(0.1, 3)
    h = mesh.h
    got = witness_constant(lambda x, t: np.exp(2 * x[0]), mesh, tg)
    assert got == pytest.approx(2 / h * np.tanh(h), rel=1e-12)
    # a gap whose average vanishes between two nodes while its difference does not
    assert witness_constant(lambda x, t: np.round(10 * x[0]) - 4.5, mesh, tg) == float("inf")


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), kappa=st.floats(0.05, 0.95), ci=st.floats(0, 5))
def test_hoelder_branches_scale_with_abs_c(c, kappa, ci):
    rng = np.random.default_rng(0)
    data, bound, h = rng.uniform(0.01, 1, 6), rng.uniform(1, 5, 6), rng.uniform(0.02, 0.2, 6)
    a = hoelder_branches(abs(c) * data, abs(c) * bound, h, kappa, ci)
    b = abs(c) * hoelder_branches(data, bound, h, kappa, ci)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_hoelder_fit_recovers_synthetic_exponent():
    rng = np.random.default_rng(5)
    data = np.exp(rng.uniform(-8, -1, 20))
    bound = np.exp(rng.uniform(0, 1, 20))
    h = np.full(20, 1 / 32)
    lhs = 0.7 * bound**0.4 * data**0.6
    fit = fit_hoelder(lhs, data, bound, h)
    assert fit["kappa"] == pytest.approx(0.4, abs=1e-4)
    assert fit["covers_all"] and fit["rms"] < 1e-6


def test_hoelder_fit_flags_degenerate_data():
    fit = fit_hoelder([1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [0.1, 0.1])
    assert fit["degenerate"]


def test_cauchy_measurements_scale_with_abs_c():
    p = default_perturbations(1)[1]
    rep = cauchy_stability_experiment(1, (7,), [p, p.scaled(-2.0), p.scaled(0.5)], n_paths=4, seed=1, T=0.5, solver="direct")
    for name in ("lhs", "bound", "data_boundary", "data_traces"):
        col = rep.columns[name][0]
        assert col[1] == pytest.approx(2.0 * col[0], rel=1e-9)
        assert col[2] == pytest.approx(0.5 * col[0], rel=1e-9)


def test_cauchy_input_checks():
    bad = CauchyPerturbation(None, lambda x, t: 1.0 + 0 * x[0], "jump")
    with pytest.raises(InverseError):
        cauchy_stability_experiment(1, (5,), [bad], n_paths=2, seed=0)
    with pytest.raises(InverseError):
        cauchy_stability_experiment(1, (5,), None, eps=0.3, T=0.5, n_paths=2, seed=0)
    with pytest.raises(InverseError):
        cauchy_stability_experiment(1, (3,), None, subdomain=(0.3, 0.4), n_paths=2, seed=0)
