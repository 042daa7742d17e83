import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semispde.mesh import Mesh, MeshSpec, build_mesh, gamma_plus
from semispde.solver import SPDEProblem, TimeGrid, sample_increments
from semispde.verifier import (
    VerificationError,
    carleman_sides,
    conjugated_laplacian_direct,
    conjugation_terms,
    decomposition_residual,
    energy_estimate_check,
    face_ramp,
    fit_boundary_constant,
    mh_bound_constant,
    random_interior,
    smooth_field,
    sobolev_check,
    verify_spatial_conjugation,
)
from semispde.weights import CarlemanParams, build_weights

GAMMAS = {
    "constant": 1.0,
    "smooth": lambda x: 1.0 + 0.3 * np.sin(np.pi * x[0]),
    "anisotropic": lambda x: 1.0 + 0.2 * x[0] * x[-1],
}


def _weights(n, N, lam=1.0, tau=1.0, x_star=-0.1, T=0.5, M=20):
    mesh = Mesh(MeshSpec(n, N))
    return build_weights(CarlemanParams((x_star,) * n, lam, tau), mesh, TimeGrid(T, M))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 2), N=st.integers(4, 9), lam=st.sampled_from([1.0, 2.0]), gname=st.sampled_from(sorted(GAMMAS)), seed=st.integers(0, 2**31))
def test_spatial_conjugation_identity(n, N, lam, gname, seed):
    w = _weights(n, N, lam)
    z = random_interior(w.mesh, np.random.default_rng(seed), 4)
    for m in (0, 10):
        assert verify_spatial_conjugation(z, w, m, GAMMAS[gname]) <= 1e-10


def test_direct_conjugated_operator_matches_weighted_stencil():
    # r * L(rho z) computed the slow way with explicit exponentials
    w = _weights(1, 6, lam=1.0, tau=1.0)
    mesh = w.mesh
    z = random_interior(mesh, np.random.default_rng(0), 1)[:, 0]
    m = 10
    xc = mesh.coords(mesh.closure_placement)
    rho = np.exp(-w.s[m] * w.phi(xc))
    y = rho * z
    h = mesh.h
    lap = (y[2:] - 2 * y[1:-1] + y[:-2]) / h**2
    slow = -np.exp(w.s[m] * w.phi(mesh.coords(mesh.primal))) * lap
    np.testing.assert_allclose(conjugated_laplacian_direct(z, w, m), slow, rtol=1e-11)


@pytest.mark.parametrize("n", [1, 2])
def test_full_decomposition_cancels(n):
    w = _weights(n, 6, lam=1.0, tau=2.0)
    rng = np.random.default_rng(n)
    z, z1 = random_interior(w.mesh, rng, 3), random_interior(w.mesh, rng, 3)
    terms = conjugation_terms(z, w, 10, GAMMAS["smooth"], z1)
    assert decomposition_residual(terms, w.mesh.h, n) <= 1e-12
    assert set(terms.as_dict()) >= {"C1", "C2", "C3", "C4", "C5", "C6", "B1", "B2", "B3", "Rh", "Mh"}


def test_remainder_vanishes_for_constant_diffusion():
    w = _weights(2, 5)
    z = random_interior(w.mesh, np.random.default_rng(2), 2)
    assert np.max(np.abs(conjugation_terms(z, w, 5).Rh)) == 0.0


def test_nonzero_boundary_rejected():
    w = _weights(1, 5)
    z = random_interior(w.mesh, np.random.default_rng(2), 1)
    z[0] = 1.0
    with pytest.raises(VerificationError):
        conjugation_terms(z, w, 0)


def test_remainder_bound_constant_finite():
    for n in (1, 2):
        w = _weights(n, 7, lam=1.0, tau=4.0)
        z = random_interior(w.mesh, np.random.default_rng(3), 10)
        K = mh_bound_constant(z, w, 10)
        assert np.isfinite(K) and K > 0


def _carleman_setup(N=7, P=8, K=3, boundary=False, solver="direct", scale=1.0):
    mesh = build_mesh(n=1, N=N)
    tg = TimeGrid.from_dt(0.5, mesh.h**2 / 4)
    xs = (-0.2,) if boundary else (-0.5,)
    w = build_weights(CarlemanParams(xs, 1.0, 0.125 / mesh.h), mesh, tg)
    f0, g0 = smooth_field(1, K, 1), smooth_field(2, K, 1)
    xi0 = face_ramp(1, K, 3) if boundary else None
    prob = SPDEProblem(
        mesh,
        gamma=lambda x: 1 + 0.2 * np.sin(np.pi * x[0]),
        f=lambda x, t: scale * f0(x, t),
        g=lambda x, t: scale * g0(x, t),
        xi=None if xi0 is None else (lambda x, t: scale * xi0(x, t)),
    )
    dB = sample_increments(99, tg, range(P))[:, None, :]
    return carleman_sides(prob, tg, w, dB, gamma_plus(mesh, xs), (K, P), boundary, solver)


def test_weighted_estimate_constant_is_scale_free():
    a = _carleman_setup()
    b = _carleman_setup(scale=3.0)
    np.testing.assert_allclose(b.constant, a.constant, rtol=1e-8)
    np.testing.assert_allclose(b.lhs_total, 9.0 * a.lhs_total, rtol=1e-8)


def test_boundary_constant_fit_is_scale_free():
    a = _carleman_setup(boundary=True)
    b = _carleman_setup(boundary=True, scale=-0.7)
    ca, cb = fit_boundary_constant([a]), fit_boundary_constant([b])
    assert cb == pytest.approx(ca, rel=1e-8)
    np.testing.assert_allclose(b.with_boundary_constant(cb).constant, a.with_boundary_constant(ca).constant, rtol=1e-8)


def test_lift_constant_solves_its_equation():
    sd = _carleman_setup(boundary=True)
    c = sd.lift_constant()
    np.testing.assert_allclose(c * sd.tau**3 * np.exp(sd.tau * c - sd.log_shift) * sd.xi_sq, sd.lift, rtol=1e-9)
    bound = sd.with_boundary_constant(float(np.max(c)))
    assert np.all(bound.rhs["boundary_data"] >= sd.lift * (1 - 1e-9))


def test_weighted_estimate_needs_zero_initial_state():
    mesh = build_mesh(n=1, N=5)
    tg = TimeGrid(0.5, 20)
    w = build_weights(CarlemanParams((-0.5,), 1.0, 1.0), mesh, tg)
    prob = SPDEProblem(mesh, w0=1.0)
    with pytest.raises(VerificationError):
        carleman_sides(prob, tg, w, np.zeros((20, 1)), gamma_plus(mesh, (-0.5,)), (1,))


def test_smooth_field_layout_and_determinism():
    f = smooth_field(4, 3, 2)
    x = Mesh(MeshSpec(2, 4)).coords(Mesh(MeshSpec(2, 4)).closure_placement)
    v = f(x, 0.3)
    assert v.shape == (6, 6, 3)
    np.testing.assert_array_equal(v, smooth_field(4, 3, 2)(x, 0.3))


def test_energy_bound_ratios_stay_bounded():
    ratios = []
    for N in (7, 15):
        mesh = build_mesh(n=1, N=N)
        tg = TimeGrid.from_dt(0.5, mesh.h**2 / 4)
        res = energy_estimate_check(mesh, tg, face_ramp(1, 3, 0), 3, gamma_plus(mesh, (-0.5,)))
        ratios.append(np.max(res.energy_ratio))
        assert np.all(np.isfinite(res.boundary_ratio)) and np.all(res.boundary_vs_h2 < 10)
    assert max(ratios) / min(ratios) < 1.5


def test_energy_check_needs_compatible_data():
    mesh = build_mesh(n=1, N=5)
    with pytest.raises(VerificationError):
        energy_estimate_check(mesh, TimeGrid(0.1, 4), lambda x, t: np.ones(x.shape[1:] + (1,)), 1, gamma_plus(mesh, (-0.5,)))


def test_face_ramp_vanishes_initially():
    mesh = Mesh(MeshSpec(2, 4))
    fn = face_ramp(2, 3, 1)
    x = mesh.coords(mesh.closure_placement)
    assert np.all(fn(x, 0.0) == 0)
    assert np.all(fn(x, 0.5)[x[0] < 1.0] == 0)


def test_sobolev_constants_stable():
    curve = sobolev_check(2, 2.0, 4.0, (4, 8), 30, seed=1)
    assert curve.variation < 2.0


def test_sobolev_exponent_rules():
    with pytest.raises(VerificationError):
        sobolev_check(1, 1.0, 2.0, (4,), 5, 0)
    with pytest.raises(VerificationError):
        sobolev_check(3, 2.0, 5.0, (4,), 5, 0)
    with pytest.raises(VerificationError):
        sobolev_check(2, 2.0, 1.0, (4,), 5, 0)
    assert sobolev_check(3, 2.0, 6.0, (3,), 5, 0).constants[0] > 0
