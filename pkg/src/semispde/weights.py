"""
Carleman weight families.

The spatial weight is ``phi = exp(lam * psi)`` with either the quadratic
``psi(x) = |x - x_star|^2`` or a user-supplied profile; the temporal factor is
``s(t) = tau * exp(-lam * beta * (t - t0)^2)``.  Products such as
``r(x) * rho(y) = exp(s phi(x) - s phi(y))`` are always formed from exponent
differences, so the stencil weights stay finite even when ``exp(s phi)``
itself would overflow.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .calculus import GridFunction, central_diff_array
from .mesh import Mesh, MeshSpec, Placement


class WeightError(ValueError):
    pass


class QuadraticPsi:
    """``|x - x_star|^2`` with exact derivatives."""

    def __init__(self, x_star):
        self.x_star = np.asarray(x_star, dtype=float).reshape(-1)

    def _shift(self, x):
        return x - self.x_star.reshape((-1,) + (1,) * (x.ndim - 1))

    def __call__(self, x):
        return np.sum(self._shift(x) ** 2, axis=0)

    def grad(self, x):
        return 2.0 * self._shift(x)

    def hess_diag(self, x):
        return np.full_like(np.asarray(x, dtype=float), 2.0)


class GeneralPsi:
    """Arbitrary smooth profile; derivatives default to central differences."""

    def __init__(self, fn: Callable, grad: Callable | None = None, hess_diag: Callable | None = None, step: float = 1e-4):
        self.fn = fn
        self._grad = grad
        self._hess = hess_diag
        self.step = step

    def __call__(self, x):
        return np.asarray(self.fn(x), dtype=float)

    def _shifted(self, x, i, d):
        y = np.array(x, dtype=float)
        y[i] = y[i] + d
        return self(y)

    def grad(self, x):
        if self._grad is not None:
            return np.asarray(self._grad(x), dtype=float)
        e = self.step
        return np.stack([(self._shifted(x, i, e) - self._shifted(x, i, -e)) / (2 * e) for i in range(len(x))])

    def hess_diag(self, x):
        if self._hess is not None:
            return np.asarray(self._hess(x), dtype=float)
        e = self.step
        c = self(x)
        return np.stack(
            [(self._shifted(x, i, e) - 2 * c + self._shifted(x, i, -e)) / e**2 for i in range(len(x))]
        )


@dataclass(frozen=True)
class CarlemanParams:
    x_star: tuple[float, ...] | None = None
    lam: float = 2.0
    tau: float = 1.0
    beta: float = 1.0
    t0: float | None = None
    psi: GeneralPsi | None = None
    eps0: float = 0.5

    def __post_init__(self):
        if self.lam < 1:
            raise WeightError(f"lambda must be >= 1 (got {self.lam})")
        if self.tau < 1:
            raise WeightError(f"tau must be >= 1 (got {self.tau})")
        if self.beta <= 0:
            raise WeightError(f"beta must be positive (got {self.beta})")
        if self.eps0 <= 0:
            raise WeightError("eps0 must be positive")
        if self.psi is None:
            if self.x_star is None:
                raise WeightError("quadratic weight needs x_star")
            xs = np.asarray(self.x_star, dtype=float)
            if np.all((xs >= 0) & (xs <= 1)):
                raise WeightError(f"x_star {tuple(xs)} must lie outside the closed unit cube")

    def profile(self):
        return self.psi if self.psi is not None else QuadraticPsi(self.x_star)

    def with_tau(self, tau: float) -> "CarlemanParams":
        return CarlemanParams(self.x_star, self.lam, tau, self.beta, self.t0, self.psi, self.eps0)


def _times(timegrid) -> np.ndarray:
    return np.asarray(getattr(timegrid, "times", timegrid), dtype=float)


@dataclass
class WeightFields:
    params: CarlemanParams
    mesh: Mesh
    times: np.ndarray
    t0: float
    psi: object = field(repr=False)

    # temporal factors -------------------------------------------------------
    @property
    def theta(self) -> np.ndarray:
        return self.params.beta * (self.times - self.t0) ** 2

    @property
    def s(self) -> np.ndarray:
        return self.params.tau * np.exp(-self.params.lam * self.theta)

    @property
    def ds(self) -> np.ndarray:
        """Time derivative of ``s``."""
        return -self.params.lam * self.s * 2 * self.params.beta * (self.times - self.t0)

    @property
    def admissible(self) -> np.ndarray:
        """Per-time flag ``s(t) h <= eps0``."""
        return self.s * self.mesh.h <= self.params.eps0

    # spatial fields --------------------------------------------------------
    def phi(self, x) -> np.ndarray:
        return np.exp(self.params.lam * self.psi(x))

    def dphi(self, x, i: int) -> np.ndarray:
        return self.params.lam * self.psi.grad(x)[i] * self.phi(x)

    def d2phi(self, x, i: int) -> np.ndarray:
        lam = self.params.lam
        return (lam * self.psi.hess_diag(x)[i] + lam**2 * self.psi.grad(x)[i] ** 2) * self.phi(x)

    def laplace_gamma_phi(self, x, gammas: Sequence[np.ndarray]) -> np.ndarray:
        """``sum_i gamma_i d_i^2 phi`` with ``gammas[i]`` sampled at ``x``."""
        return sum(g * self.d2phi(x, i) for i, g in enumerate(gammas))

    def phi_max(self) -> float:
        return float(np.max(self.phi(self.mesh.coords(self.mesh.closure_placement))))

    def log_r(self, m: int, placement: Placement) -> GridFunction:
        """``s(t_m) phi`` on a placement, i.e. ``log r``."""
        x = self.mesh.coords(placement)
        return GridFunction(self.mesh, placement, self.s[m] * self.phi(x))

    def r(self, m: int, placement: Placement) -> GridFunction:
        return GridFunction(self.mesh, placement, np.exp(self.log_r(m, placement).values))

    def rho(self, m: int, placement: Placement) -> GridFunction:
        return GridFunction(self.mesh, placement, np.exp(-self.log_r(m, placement).values))

    # r * (stencil of rho) at points x --------------------------------------
    def _ratios(self, m, i, x, step):
        s = self.s[m]
        up = np.array(x, dtype=float)
        dn = np.array(x, dtype=float)
        up[i] += step
        dn[i] -= step
        base = self.phi(x)
        return np.exp(s * (base - self.phi(up))), np.exp(s * (base - self.phi(dn)))

    def r_d2_rho(self, m: int, i: int, x) -> np.ndarray:
        """``r D_i^2 rho`` at points ``x``."""
        h = self.mesh.h
        ep, em = self._ratios(m, i, x, h)
        return (ep - 2.0 + em) / h**2

    def r_a2_rho(self, m: int, i: int, x) -> np.ndarray:
        ep, em = self._ratios(m, i, x, self.mesh.h)
        return (ep + 2.0 + em) / 4.0

    def r_da_rho(self, m: int, i: int, x) -> np.ndarray:
        h = self.mesh.h
        ep, em = self._ratios(m, i, x, h)
        return (ep - em) / (2 * h)

    def r_dt_rho(self, m: int, x) -> np.ndarray:
        """``r d_t rho = -s'(t) phi``."""
        return -self.ds[m] * self.phi(x)


def build_weights(params: CarlemanParams, mesh: Mesh, timegrid) -> WeightFields:
    times = _times(timegrid)
    T = float(times[-1])
    t0 = params.t0 if params.t0 is not None else 0.5 * T
    if not 0.0 < t0 < T:
        raise WeightError(f"t0 must lie inside (0, {T}) (got {t0})")
    if params.x_star is not None and len(params.x_star) != mesh.n:
        raise WeightError(f"x_star must have {mesh.n} components")
    psi = params.profile()
    if params.psi is not None:
        # gradient sampled by the same central stencil that acts on grid functions
        xc = mesh.coords(mesh.closure_placement)
        vals = psi(xc)
        grad = np.stack([central_diff_array(vals, k, mesh.h, mesh.n) for k in range(mesh.n)])
        mag = np.sqrt(np.sum(grad**2, axis=0))
        scale = max(float(np.max(np.abs(vals))), 1.0)
        if np.any(mag <= 1e-12 * scale):
            raise WeightError("weight profile has a vanishing sampled gradient on the primal mesh")
    return WeightFields(params, mesh, times, float(t0), psi)


# ---------------------------------------------------------------------------
# scaling laws


@dataclass(frozen=True)
class ScalingFit:
    sh: np.ndarray
    errors: np.ndarray
    slope: float


def _fit(sh, err) -> ScalingFit:
    sh = np.asarray(sh, dtype=float)
    err = np.asarray(err, dtype=float)
    slope = float(np.polyfit(np.log(sh), np.log(err), 1)[0])
    return ScalingFit(sh, err, slope)


def _levels(params, levels, n):
    if len(levels) < 3:
        raise WeightError("a scaling sweep needs at least 3 mesh levels")
    out = []
    for N in levels:
        mesh = Mesh(MeshSpec(n, int(N)))
        if params.tau * mesh.h > params.eps0:
            raise WeightError(f"s h = {params.tau * mesh.h:.3g} exceeds eps0 = {params.eps0} at N={N}")
        out.append(mesh)
    return out


def average_ratio_error(fields: WeightFields, m: int, i: int = 0) -> float:
    """``sup |exp(-2 s phi) A_i(exp(2 s phi)) - 1|`` over ``dual(i)``."""
    mesh = fields.mesh
    x = mesh.coords(mesh.dual(i))
    ep, em = fields._ratios(m, i, x, mesh.h / 2)
    # ep = exp(s(phi(x) - phi(x + h/2))); the average needs exp(2 s (phi(x +- h/2) - phi(x)))
    return float(np.max(np.abs(0.5 * (ep**-2 + em**-2) - 1.0)))


def derivative_ratio_gap(fields: WeightFields, m: int, i: int = 0) -> tuple[float, float]:
    """Gap between ``exp(-2 s phi) A_i(|D_i exp(s phi)|^2)`` and ``(s d_i phi)^2``.

    Returns ``(sup |gap|, max gap)``; the second number is the one-sided excess.
    """
    mesh = fields.mesh
    h = mesh.h
    x = mesh.coords(mesh.primal)
    ep, em = fields._ratios(m, i, x, h)
    # D_i r at x +- h/2, divided by r(x)
    fwd = (1.0 / ep - 1.0) / h
    bwd = (1.0 - 1.0 / em) / h
    value = 0.5 * (fwd**2 + bwd**2)
    lead = (fields.s[m] * fields.dphi(x, i)) ** 2
    gap = value - lead
    return float(np.max(np.abs(gap))), float(np.max(gap))


def weight_ratio_scaling(params: CarlemanParams, levels: Sequence[int], n: int = 1, i: int = 0, T: float = 1.0) -> ScalingFit:
    """Log-log slope of the averaged-weight defect against ``s h`` at ``t = t0``."""
    sh, err = [], []
    for mesh in _levels(params, levels, n):
        t0 = params.t0 if params.t0 is not None else 0.5 * T
        fields = build_weights(params, mesh, np.array([0.0, t0, T]))
        sh.append(fields.s[1] * mesh.h)
        err.append(average_ratio_error(fields, 1, i))
    return _fit(sh, err)


def derivative_weight_scaling(params: CarlemanParams, levels: Sequence[int], n: int = 1, i: int = 0, T: float = 1.0) -> ScalingFit:
    """Log-log slope of the derivative-weight gap against ``s h`` at ``t = t0``."""
    sh, err = [], []
    for mesh in _levels(params, levels, n):
        t0 = params.t0 if params.t0 is not None else 0.5 * T
        fields = build_weights(params, mesh, np.array([0.0, t0, T]))
        sh.append(fields.s[1] * mesh.h)
        err.append(derivative_ratio_gap(fields, 1, i)[0])
    return _fit(sh, err)


# ---------------------------------------------------------------------------
# generalized weight for the Cauchy problem


def box_profile(n: int, length: float) -> GeneralPsi:
    """``prod_k 4 x_k (L - x_k) / L^2``: zero on the faces of ``(0, L)^n``, max 1."""

    def fn(x):
        return np.prod(4.0 * x * (length - x) / length**2, axis=0)

    def grad(x):
        f = 4.0 * x * (length - x) / length**2
        df = 4.0 * (length - 2.0 * x) / length**2
        out = []
        for k in range(len(x)):
            others = np.prod(np.delete(f, k, axis=0), axis=0) if len(x) > 1 else 1.0
            out.append(df[k] * others)
        return np.stack(out)

    def hess(x):
        f = 4.0 * x * (length - x) / length**2
        out = []
        for k in range(len(x)):
            others = np.prod(np.delete(f, k, axis=0), axis=0) if len(x) > 1 else 1.0
            out.append(-8.0 / length**2 * others * np.ones_like(x[k]))
        return np.stack(out)

    return GeneralPsi(fn, grad, hess)


@dataclass
class CauchyWeight:
    params: CarlemanParams
    psi_values: GridFunction
    psi_sup: float
    level: int
    eps: float
    mu: np.ndarray
    times: np.ndarray
    level_sets: list[np.ndarray]  # each (M+1, *primal) boolean
    subdomain: np.ndarray  # primal boolean mask

    def inclusion_holds(self) -> bool:
        """Subdomain times the window around t0 lies inside the fourth level set."""
        t0 = self.params.t0
        window = np.abs(self.times - t0) < self.eps / np.sqrt(self.level)
        inner = self.level_sets[3][window]
        return bool(np.all(inner[:, self.subdomain]))


def cauchy_weight(
    mesh: Mesh,
    timegrid,
    margin: float = 1.5,
    level: int = 8,
    beta: float | None = None,
    eps: float = 0.5,
    lam: float = 2.0,
    t0: float | None = None,
    psi: GeneralPsi | None = None,
    psi_sup: float | None = None,
) -> CauchyWeight:
    """Level-set weight ``Phi = exp(lam (Psi(x) - beta (t - t0)^2))``.

    By default ``Psi`` is :func:`box_profile` on ``(0, 1 + margin)^n``, which
    vanishes on the faces through the origin and has sup norm 1.
    """
    times = _times(timegrid)
    if psi is None:
        psi = box_profile(mesh.n, 1.0 + margin)
        psi_sup = 1.0
    elif psi_sup is None:
        psi_sup = float(np.max(np.abs(psi(mesh.coords(mesh.closure_placement)))))
    if beta is None:
        beta = 0.75 * psi_sup / eps**2
    if not (2 * beta * eps**2 > psi_sup > beta * eps**2):
        raise WeightError(
            f"beta={beta} violates 2 beta eps^2 > |Psi| > beta eps^2 with |Psi|={psi_sup}, eps={eps}"
        )
    if t0 is None:
        t0 = 0.5 * float(times[-1])
    params = CarlemanParams(None, lam, 1.0, beta, t0, psi)
    build_weights(params, mesh, times)  # gradient check
    x = mesh.coords(mesh.primal)
    pv = psi(x)
    k = np.arange(1, 5)
    mu = np.exp(lam * (k / level * psi_sup - beta * eps**2 / level))
    log_Phi = lam * (pv[None] - beta * ((times - t0) ** 2).reshape((-1,) + (1,) * mesh.n))
    sets = [log_Phi > np.log(m) for m in mu]
    subdomain = pv > 4.0 / level * psi_sup
    return CauchyWeight(params, GridFunction(mesh, mesh.primal, pv), psi_sup, level, eps, mu, times, sets, subdomain)
