"""
Numerical certification of the weighted-energy machinery.

* :func:`conjugation_terms` evaluates every piece of the decomposition of the
  conjugated operator ``r A_h(rho z)`` for a given ``z``;
* :func:`verify_spatial_conjugation` checks the exact spatial identity
  against an independent direct evaluation of ``-r sum_i D_i(gamma_i D_i(rho z))``;
* :func:`carleman_sides` estimates both sides of the weighted estimate for
  simulated solutions by Monte Carlo;
* :func:`energy_estimate_check` and :func:`sobolev_check` measure the
  constants of the deterministic energy/boundary bounds and the discrete
  Sobolev embedding.

All weighted integrals are formed with ``exp(2 s phi - 2K)``,
``K = tau * max phi``; the shift cancels in every ratio.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .calculus import (
    GridFunction,
    _along,
    _bcast,
    avg_array,
    boundary_h1_sq_array,
    central_diff_array,
    diff_array,
    h2_sq_array,
    integral_array,
    interior_array,
    second_diffs_array,
    shell_mask,
)
from .mesh import GammaPlus, Mesh, MeshSpec, Placement
from .observation import boundary_time_sq, normal_traces_array
from .solver import SPDEProblem, Stepper, TimeGrid, march
from .weights import WeightFields

FLOOR = 1e-14


class VerificationError(ValueError):
    pass


def _gamma_list(gamma, n):
    return list(gamma) if isinstance(gamma, (list, tuple)) else [gamma] * n


def _sample(coef, x):
    if callable(coef):
        return np.asarray(coef(x), dtype=float)
    return np.full(x.shape[1:], float(coef))


def _along_closure(mesh: Mesh, i: int) -> Placement:
    return Placement(tuple("c" if j == i else "p" for j in range(mesh.n)))


def _closure_values(z) -> np.ndarray:
    if isinstance(z, GridFunction):
        if z.placement.kind != "closure":
            raise VerificationError("z must be a closure function")
        return z.values
    return np.asarray(z, dtype=float)


# ---------------------------------------------------------------------------
# decomposition of the conjugated operator


@dataclass
class ConjugationTerms:
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    C4: np.ndarray
    C5: np.ndarray
    C6: np.ndarray
    B1: np.ndarray | None
    B2: np.ndarray
    B3: np.ndarray
    Rh: np.ndarray
    Mh: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def conjugation_terms(z, weights: WeightFields, m: int, gamma=1.0, z_next=None) -> ConjugationTerms:
    """All terms at time index ``m`` for closure data ``z`` (zero on the shell).

    ``z`` may carry trailing batch axes.  ``z_next`` (same layout) gives the
    discrete time increment ``B1 = z_{m+1} - z_m``.
    """
    mesh = weights.mesh
    n, h = mesh.n, mesh.h
    Z = _closure_values(z)
    nd = Z.ndim
    shell = np.broadcast_to(_bcast(shell_mask(mesh.N, n), nd), Z.shape)
    if np.any(Z[shell] != 0):
        raise VerificationError("z must vanish on the boundary")
    gam = _gamma_list(gamma, n)
    X = mesh.coords(mesh.primal)
    z_in = interior_array(Z, range(n))
    s = weights.s[m]
    b = lambda a: _bcast(a, nd)  # noqa: E731

    C1 = C2 = B2 = Rh = C4 = C5 = 0.0
    lap_phi = 0.0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        Zi = interior_array(Z, others)
        Xd = mesh.coords(mesh.dual(i))
        Xc = mesh.coords(_along_closure(mesh, i))
        g_p, g_d, g_c = _sample(gam[i], X), _sample(gam[i], Xd), _sample(gam[i], Xc)
        Ag = avg_array(g_d, i)
        Dg = diff_array(g_d, i, h)
        delta = Ag - g_p

        rA2 = weights.r_a2_rho(m, i, X)
        rD2 = weights.r_d2_rho(m, i, X)
        rDA = weights.r_da_rho(m, i, X)

        A2z = avg_array(avg_array(Zi, i), i)
        DAz = (Zi[_along(nd, i, slice(2, None))] - Zi[_along(nd, i, slice(None, -2))]) / (2 * h)
        D2z = diff_array(diff_array(Zi, i, h), i, h)
        Az = avg_array(Zi, i)
        flux = diff_array(b(g_d) * diff_array(Zi, i, h), i, h)

        C1 = C1 - b(rA2) * flux
        C2 = C2 - b(g_p * rD2) * A2z
        B2 = B2 - 2 * b(g_p * rDA) * DAz
        Rh = (
            Rh
            + b(delta * rD2 + Dg * rDA) * A2z
            + 2 * b(delta * rDA) * DAz
            + h**2 / 4 * b(Dg * rD2) * DAz
            + h**2 / 4 * b(Dg * rDA) * D2z
        )
        q = diff_array(weights.r_d2_rho(m, i, Xc), i, h)
        C4 = C4 - h**2 / 4 * diff_array(b(g_d * q) * Az, i, h)
        q = diff_array(g_c * weights.r_d2_rho(m, i, Xc), i, h)
        C5 = C5 - h**2 / 4 * diff_array(b(q) * Az, i, h)
        lap_phi = lap_phi + g_p * weights.d2phi(X, i)

    C3 = b(weights.r_dt_rho(m, X)) * z_in
    C6 = -2 * s * b(lap_phi) * z_in
    B1 = None if z_next is None else interior_array(_closure_values(z_next), range(n)) - z_in
    Mh = C4 + C5 + Rh
    return ConjugationTerms(C1, C2, C3, C4, C5, C6, B1, B2, -C6, Rh, Mh)


def conjugated_laplacian_direct(z, weights: WeightFields, m: int, gamma=1.0) -> np.ndarray:
    """``-r sum_i D_i(gamma_i D_i(rho z))`` evaluated straight from the stencil."""
    mesh = weights.mesh
    n, h = mesh.n, mesh.h
    Z = _closure_values(z)
    nd = Z.ndim
    gam = _gamma_list(gamma, n)
    X = mesh.coords(mesh.primal)
    out = 0.0
    for i in range(n):
        Zi = interior_array(Z, [j for j in range(n) if j != i])
        zp, z0, zm = (Zi[_along(nd, i, sl)] for sl in (slice(2, None), slice(1, -1), slice(None, -2)))
        g_d = _sample(gam[i], mesh.coords(mesh.dual(i)))
        gp, gm = g_d[_along(n, i, slice(1, None))], g_d[_along(n, i, slice(None, -1))]
        ep, em = weights._ratios(m, i, X, h)
        out = out - (_bcast(gp, nd) * (_bcast(ep, nd) * zp - z0) - _bcast(gm, nd) * (z0 - _bcast(em, nd) * zm)) / h**2
    return out


def _l2(a, h, n):
    return np.sqrt(integral_array(a**2, h, n))


def verify_spatial_conjugation(z, weights: WeightFields, m: int, gamma=1.0) -> float:
    """Worst relative residual of the spatial identity over the batch."""
    mesh = weights.mesh
    h, n = mesh.h, mesh.n
    t = conjugation_terms(z, weights, m, gamma)
    lhs = conjugated_laplacian_direct(z, weights, m, gamma)
    res = lhs - (t.C1 + t.C2 + t.B2 - t.Rh)
    scale = np.max(np.stack([_l2(a, h, n) for a in (lhs, t.C1, t.C2, t.B2, t.Rh)]), axis=0)
    num = _l2(res, h, n)
    rel = np.where(num == 0, 0.0, num / np.where(scale > 0, scale, np.inf))
    return float(np.max(rel))


def decomposition_residual(terms: ConjugationTerms, h: float, n: int) -> float:
    """``C + B - M_h`` against ``C1 + C2 + C3 + B2 - R_h`` (plus ``B1``)."""
    b1 = 0.0 if terms.B1 is None else terms.B1
    full = terms.C1 + terms.C2 + terms.C3 + terms.C4 + terms.C5 + terms.C6 + b1 + terms.B2 + terms.B3 - terms.Mh
    reduced = terms.C1 + terms.C2 + terms.C3 + b1 + terms.B2 - terms.Rh
    scale = max(float(np.max(_l2(a, h, n))) for a in (terms.C4, terms.C5, terms.C6, terms.Rh, reduced))
    num = float(np.max(_l2(full - reduced, h, n)))
    return 0.0 if num == 0 else num / scale


def mh_bound_constant(z, weights: WeightFields, m: int, gamma=1.0) -> float:
    """Largest ``int |M_h z|^2 / (int s^2 |z|^2 + h^2 sum_i int s^2 |D_i z|^2)``."""
    mesh = weights.mesh
    h, n = mesh.h, mesh.n
    Z = _closure_values(z)
    t = conjugation_terms(Z, weights, m, gamma)
    s2 = weights.s[m] ** 2
    den = s2 * integral_array(interior_array(Z, range(n)) ** 2, h, n)
    for i in range(n):
        dz = interior_array(diff_array(Z, i, h), [j for j in range(n) if j != i])
        den = den + h**2 * s2 * integral_array(dz**2, h, n)
    num = integral_array(t.Mh**2, h, n)
    return float(np.max(num / den))


def random_interior(mesh: Mesh, rng: np.random.Generator, count: int) -> np.ndarray:
    """Closure arrays with standard normal interior and zero shell."""
    shape = mesh.shape(mesh.closure_placement) + (count,)
    Z = np.zeros(shape)
    Z[(slice(1, -1),) * mesh.n] = rng.standard_normal(mesh.shape(mesh.primal) + (count,))
    return Z


# ---------------------------------------------------------------------------
# random smooth data


def smooth_field(seed: int, count: int, n: int, modes: int = 3, time_modes: int = 2, amplitude: float = 1.0) -> Callable:
    """``count`` random smooth space-time fields as one callable ``(x, t)``.

    The returned array has the instance axis last.
    """
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((count, time_modes) + (modes,) * n)
    shifts = rng.uniform(0, 2 * np.pi, size=(count, n, modes))
    decay = np.ones((modes,) * n)
    for ks in np.ndindex(*decay.shape):
        decay[ks] = 1.0 / (1.0 + sum(k * k for k in ks))

    def fn(x, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[1:] + (count,))
        for c in range(count):
            for ks in np.ndindex(*decay.shape):
                basis = np.ones(x.shape[1:])
                for d, k in enumerate(ks):
                    basis = basis * np.cos((k + 1) * np.pi * x[d] + shifts[c, d, k])
                tw = sum(coef[(c, j) + ks] * np.cos(j * np.pi * t) for j in range(time_modes))
                out[..., c] += amplitude * decay[ks] * tw * basis
        return out

    return fn


# ---------------------------------------------------------------------------
# weighted estimate sides


@dataclass
class CarlemanSides:
    lhs: dict[str, np.ndarray]
    rhs: dict[str, np.ndarray]
    log_shift: float
    boundary_constant: float
    tau: float
    h: float
    lam: float
    xi_sq: np.ndarray | None = None
    lift: np.ndarray | None = None

    def boundary_term(self, constant: float) -> np.ndarray:
        """``C tau^3 e^{tau C} |xi|^2`` in the shifted weight scale."""
        return constant * self.tau**3 * np.exp(self.tau * constant - self.log_shift) * self.xi_sq

    def with_boundary_constant(self, constant: float) -> "CarlemanSides":
        """Copy whose boundary-data term uses the given ``C``."""
        if self.xi_sq is None:
            raise VerificationError("these sides carry no boundary data")
        rhs = dict(self.rhs)
        rhs["boundary_data"] = self.boundary_term(constant)
        return replace(self, rhs=rhs, boundary_constant=constant)

    def lift_constant(self) -> np.ndarray:
        """Per instance, the smallest ``C`` with ``lift <= C tau^3 e^{tau C} |xi|^2``."""
        out = np.full(np.shape(self.lift), np.nan)
        for idx in np.ndindex(out.shape):
            target, xi_sq = float(self.lift[idx]), float(self.xi_sq[idx])
            if xi_sq <= FLOOR:
                continue
            f = lambda c: np.log(c) + self.tau * c - self.log_shift + 3 * np.log(self.tau) + np.log(xi_sq) - np.log(target)  # noqa: E731
            hi = 1.0
            while f(hi) < 0:
                hi *= 2.0
            lo = 1e-300
            out[idx] = brentq(f, lo, hi, xtol=1e-300, rtol=1e-12) if target > 0 and f(lo) < 0 else 0.0
        return out

    @property
    def lhs_total(self) -> np.ndarray:
        return sum(self.lhs.values())

    @property
    def rhs_total(self) -> np.ndarray:
        return sum(self.rhs.values())

    @property
    def degenerate(self) -> np.ndarray:
        return self.rhs_total <= FLOOR

    @property
    def constant(self) -> np.ndarray:
        """Empirical ``LHS / RHS`` per instance (``nan`` when degenerate)."""
        rhs = self.rhs_total
        return np.where(rhs > FLOOR, self.lhs_total / np.where(rhs > FLOOR, rhs, 1.0), np.nan)


def fit_boundary_constant(sides: Sequence[CarlemanSides]) -> float:
    """One ``C`` bounding every lift in the sweep, as the lifting step requires."""
    vals = np.concatenate([np.ravel(sd.lift_constant()) for sd in sides])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise VerificationError("no boundary data to fit against")
    return float(np.max(vals))


def _sample_t(coef, x, t):
    if coef is None:
        return None
    return np.asarray(coef(x, t) if callable(coef) else coef, dtype=float)


def carleman_sides(
    problem: SPDEProblem,
    timegrid: TimeGrid,
    weights: WeightFields,
    increments: np.ndarray,
    gamma_plus: GammaPlus,
    batch_shape: tuple,
    boundary_data: bool = False,
    solver: str = "cg",
) -> CarlemanSides:
    """Accumulate both sides of the weighted estimate along simulated paths.

    ``f`` and ``g`` must be callables ``(x, t)`` so they can be sampled on
    the closure (the right-hand side needs ``D_i g``).  Arrays in the result
    are indexed by the batch axes except the last, which is averaged.
    ``boundary_data=True`` adds ``tau^3 exp(tau C) |xi|^2`` with
    ``C = 2 max phi``.
    """
    mesh = problem.mesh
    n, h, dt = mesh.n, mesh.h, timegrid.dt
    if not np.all(problem.initial_primal() == 0):
        raise VerificationError("the weighted estimate is stated for zero initial data")
    lam = weights.params.lam
    tau = weights.params.tau
    phi_max = weights.phi_max()
    K = tau * phi_max
    nd = n + len(batch_shape)
    b = lambda a: _bcast(a, nd)  # noqa: E731

    Xp = mesh.coords(mesh.primal)
    Xc = mesh.coords(mesh.closure_placement)
    phi_p = weights.phi(Xp)
    phi_d = [weights.phi(mesh.coords(mesh.dual(i))) for i in range(n)]
    phi_2 = {(i, j): weights.phi(mesh.coords(mesh.dual2(i, j))) for i in range(n) for j in range(n)}

    names_l = ("gradient_dual", "gradient_primal", "mass", "second", "source")
    names_r = ("forcing", "source_gradient", "observed_boundary", "terminal")
    acc_l = {k: 0.0 for k in names_l}
    acc_r = {k: 0.0 for k in names_r}
    st = Stepper(problem, timegrid, solver)
    M = timegrid.M
    for m, w in march(problem, timegrid, increments, batch_shape, stepper=st):
        s = weights.s[m]
        t = timegrid.times[m]
        Wp = np.exp(2 * s * phi_p - 2 * K)
        if m == M:
            acc_r["terminal"] = integral_array(b(s**2 * Wp) * interior_array(w, range(n)) ** 2, h, n)
            break
        w_in = interior_array(w, range(n))
        grad_d = grad_p = second = bdry = 0.0
        for i in range(n):
            Wd = np.exp(2 * s * phi_d[i] - 2 * K)
            Dw = interior_array(diff_array(w, i, h), [j for j in range(n) if j != i])
            grad_d = grad_d + integral_array(b(s * lam**2 * phi_d[i] * Wd) * Dw**2, h, n)
            ADw = central_diff_array(w, i, h, n)
            grad_p = grad_p + integral_array(b(s * lam**2 * phi_p * Wp) * ADw**2, h, n)
            tr = np.take(b(Wd) * Dw**2, [0, -1], axis=i)
            bdry = bdry + h ** (n - 1) * s * np.sum(gamma_plus.restrict(tr, i), axis=0)
        for i, j, q in second_diffs_array(w, h, n):
            W2 = np.exp(2 * s * phi_2[(i, j)] - 2 * K)
            second = second + integral_array(b(W2 / s) * q**2, h, n)
        acc_l["gradient_dual"] = acc_l["gradient_dual"] + dt * grad_d
        acc_l["gradient_primal"] = acc_l["gradient_primal"] + dt * grad_p
        acc_l["mass"] = acc_l["mass"] + dt * integral_array(b(s**3 * lam**4 * phi_p**3 * Wp) * w_in**2, h, n)
        acc_l["second"] = acc_l["second"] + dt * second
        acc_r["observed_boundary"] = acc_r["observed_boundary"] + dt * bdry
        g_c = _sample_t(problem.g, Xc, t)
        if g_c is not None:
            g_c = b(np.broadcast_to(g_c, Xc.shape[1:] + g_c.shape[n:]))
            g_in = interior_array(g_c, range(n))
            acc_l["source"] = acc_l["source"] + dt * integral_array(b(s * lam**2 * phi_p * Wp) * g_in**2, h, n)
            dg = 0.0
            for i in range(n):
                Wd = np.exp(2 * s * phi_d[i] - 2 * K)
                Dg = interior_array(diff_array(g_c, i, h), [j for j in range(n) if j != i])
                dg = dg + integral_array(b(Wd) * Dg**2, h, n)
            acc_r["source_gradient"] = acc_r["source_gradient"] + dt * dg
        f_p = _sample_t(problem.f, Xp, t)
        if f_p is not None:
            acc_r["forcing"] = acc_r["forcing"] + dt * integral_array(b(Wp) * b(f_p) ** 2, h, n)

    def expect(v):
        v = np.asarray(v, dtype=float)
        v = v.reshape(v.shape + (1,) * (len(batch_shape) - v.ndim))
        return np.mean(np.broadcast_to(v, tuple(batch_shape)), axis=-1)

    lhs = {k: expect(v) for k, v in acc_l.items()}
    rhs = {k: expect(v) for k, v in acc_r.items()}
    sides = CarlemanSides(lhs, rhs, 2 * K, 2.0 * phi_max, tau, h, lam)
    if boundary_data:
        xi = np.stack([st.boundary(m) if st.boundary(m) is not None else np.zeros(Xc.shape[1:]) for m in range(M + 1)])
        sides.xi_sq = expect(boundary_time_sq_h1(xi, dt, mesh))
        # weighted energy of the source-free lift carrying the same boundary data
        lift_problem = replace(problem, f=None, g=None)
        quiet = np.zeros((M,) + (1,) * len(batch_shape))
        lift = carleman_sides(lift_problem, timegrid, weights, quiet, gamma_plus, tuple(batch_shape[:-1]) + (1,), False, solver)
        sides.lift = lift.lhs_total + lift.rhs["terminal"]
        sides = sides.with_boundary_constant(sides.boundary_constant)
    return sides


def boundary_time_sq_h1(xi: np.ndarray, dt: float, mesh: Mesh) -> np.ndarray:
    """``int_0^T (|xi|^2_{H^1(bd)} + |d_t xi|^2_{H^1(bd)})`` with forward differences."""
    n, h = mesh.n, mesh.h
    vals = np.moveaxis(xi[:-1], 0, n)
    rates = np.moveaxis((xi[1:] - xi[:-1]) / dt, 0, n)
    return dt * (np.sum(boundary_h1_sq_array(vals, h, n), axis=0) + np.sum(boundary_h1_sq_array(rates, h, n), axis=0))


# ---------------------------------------------------------------------------
# deterministic energy and boundary estimates


@dataclass
class EnergyCheck:
    N: int
    energy_lhs: np.ndarray
    boundary_lhs: np.ndarray
    data_norm: np.ndarray
    h2_sq: np.ndarray

    @property
    def energy_ratio(self) -> np.ndarray:
        return _safe_ratio(self.energy_lhs, self.data_norm)

    @property
    def boundary_ratio(self) -> np.ndarray:
        return _safe_ratio(self.boundary_lhs, self.data_norm**2)

    @property
    def boundary_vs_h2(self) -> np.ndarray:
        return _safe_ratio(self.boundary_lhs, self.h2_sq)


def _safe_ratio(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.where(b > FLOOR, a / np.where(b > FLOOR, b, 1.0), np.nan)


def energy_estimate_check(
    mesh: Mesh,
    timegrid: TimeGrid,
    xi: Callable,
    count: int,
    gamma_plus: GammaPlus,
    gamma=1.0,
    solver: str = "cg",
) -> EnergyCheck:
    """Both sides of the energy and boundary bounds for ``count`` boundary data.

    ``xi(x, t)`` returns closure-shaped values with a trailing instance axis
    and must vanish at ``t = 0``.
    """
    n, h, dt = mesh.n, mesh.h, timegrid.dt
    xc = mesh.coords(mesh.closure_placement)
    if np.max(np.abs(xi(xc, 0.0))) > 0:
        raise VerificationError("boundary data must vanish at t = 0")
    problem = SPDEProblem(mesh, gamma=gamma, xi=xi)
    st = Stepper(problem, timegrid, solver)
    h2 = 0.0
    sup_l2 = np.zeros(count)
    bdry = 0.0
    shells = []
    for m, w in march(problem, timegrid, None, (count,), stepper=st):
        shells.append(np.where(_bcast(st.shell, w.ndim), w, 0.0))
        sup_l2 = np.maximum(sup_l2, np.sqrt(integral_array(interior_array(w, range(n)) ** 2, h, n)))
        if m == timegrid.M:
            break
        h2 = h2 + dt * h2_sq_array(w, h, n)
        for i, tr in enumerate(normal_traces_array(w, mesh)):
            bdry = bdry + dt * h ** (n - 1) * np.sum(gamma_plus.restrict(tr**2, i), axis=0)
    data = np.sqrt(boundary_time_sq(np.stack(shells), dt, mesh))
    return EnergyCheck(mesh.N, np.sqrt(h2) + sup_l2, np.asarray(bdry), data, np.asarray(h2))


def face_ramp(n: int, count: int, seed: int = 0) -> Callable:
    """Data ``c_k t^p_k`` on the face ``x_1 = 1`` (tapered by ``sin`` across it)."""
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.5, 2.0, size=count)
    power = rng.uniform(1.0, 2.0, size=count)

    def fn(x, t):
        taper = np.prod(np.sin(np.pi * x[1:]), axis=0) if n > 1 else np.ones(x.shape[1:])
        face = np.isclose(x[0], 1.0) * taper
        return face[..., None] * amp * np.power(t, power)

    return fn


# ---------------------------------------------------------------------------
# discrete Sobolev embedding


@dataclass
class SobolevCurve:
    n: int
    p: float
    p_star: float
    levels: list[int]
    constants: list[float]

    @property
    def variation(self) -> float:
        return max(self.constants) / min(self.constants)


def _check_exponents(n, p, p_star):
    if n <= 1:
        raise VerificationError("the embedding is stated for n > 1")
    if not 1 <= p <= n:
        raise VerificationError(f"need 1 <= p <= n (got p={p}, n={n})")
    if p < n:
        expected = n * p / (n - p)
        if not np.isclose(p_star, expected):
            raise VerificationError(f"for p < n the exponent must be np/(n-p) = {expected} (got {p_star})")
    elif p_star < p:
        raise VerificationError(f"for p = n the exponent must be >= p (got {p_star})")


def sine_samples(mesh: Mesh, rng: np.random.Generator, count: int, decay: float = 3.0) -> np.ndarray:
    """Random sine series with ``|k|^{-decay}`` coefficients, zero on the shell."""
    N, n = mesh.N, mesh.n
    x = mesh.axis_coords("c")
    k = np.arange(1, N + 1)
    S = np.sin(np.pi * np.outer(x, k))
    S[[0, -1]] = 0.0
    kk = np.stack(np.meshgrid(*([k] * n), indexing="ij"))
    weight = np.sqrt(np.sum(kk**2, axis=0)) ** (-decay)
    coef = rng.standard_normal((N,) * n + (count,)) * weight[..., None]
    out = coef
    for d in range(n):
        out = np.moveaxis(np.tensordot(S, out, axes=([1], [d])), 0, d)
    return out


def sobolev_check(n: int, p: float, p_star: float, levels: Sequence[int], n_samples: int, seed: int, decay: float = 3.0) -> SobolevCurve:
    _check_exponents(n, p, p_star)
    consts = []
    for N in levels:
        mesh = Mesh(MeshSpec(n, int(N)))
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(N),)))
        U = sine_samples(mesh, rng, n_samples, decay)
        h = mesh.h
        num = integral_array(np.abs(interior_array(U, range(n))) ** p_star, h, n) ** (1 / p_star)
        den = integral_array(np.abs(interior_array(U, range(n))) ** p, h, n)
        for i in range(n):
            d = interior_array(diff_array(U, i, h), [j for j in range(n) if j != i])
            den = den + integral_array(np.abs(d) ** p, h, n)
        den = den ** (1 / p)
        ok = den > FLOOR
        consts.append(float(np.max(num[ok] / den[ok])))
    return SobolevCurve(n, p, p_star, [int(N) for N in levels], consts)
