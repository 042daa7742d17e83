"""
Stability experiments for the two inverse problems and a Tikhonov
reconstruction of the random source.

Source problem: two sources driven by the same Brownian paths are observed
through normal-derivative traces on the observed boundary plus the terminal
state; the ratio of the source gap to the observation gap is estimated by
Monte Carlo for every mesh level.

Cauchy problem: perturbations of the initial and boundary data are observed
through boundary values and traces; the interior energy on a subdomain away
from the initial and final times is compared with the three-branch Hölder
bound, whose constants are fitted across all instances and levels.

Reconstruction: for a known path and ``a3 = 0`` the map from the source to
the observations is affine.  Its linear part and the discrete adjoint of the
time stepping give a matrix-free normal-equations solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .calculus import (
    _along,
    avg_array,
    central_diff_array,
    diff_array,
    h2_sq_array,
    integral_array,
    interior_array,
    masked_h2_sq_array,
    pad_array,
)
from .linalg import ConvergenceError, cg
from .mesh import GammaPlus, Mesh, build_mesh, gamma_plus
from .observation import (
    Lambda1Data,
    boundary_time_sq,
    normal_traces_array,
    observe,
    observed_boundary_values,
    x1_components,
)
from .solver import (
    BrownianPath,
    SPDEProblem,
    Stepper,
    TimeGrid,
    _eval,
    _is_zero,
    march,
    monte_carlo,
)

FLOOR = 1e-14


class InverseError(ValueError):
    pass


def _level_grid(N: int, T: float, dt_factor: float) -> TimeGrid:
    h = 1.0 / (N + 1)
    return TimeGrid.from_dt(T, dt_factor * h * h)


def _quantiles(a: np.ndarray) -> list[float]:
    a = a[np.isfinite(a)]
    if a.size == 0:
        return [float("nan")] * 3
    return [float(q) for q in np.quantile(a, [0.25, 0.5, 0.75])]


@dataclass
class StabilityReport:
    """Per-level, per-instance ratios plus whatever the experiment fitted.

    ``ratios[l, k]`` is NaN where instance ``k`` was skipped at level ``l``.
    """

    kind: str
    levels: list[int]
    ratios: np.ndarray
    n_paths: int
    seed: int
    labels: list[str] = field(default_factory=list)
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: list[dict] = field(default_factory=list)
    fit: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def h(self) -> list[float]:
        return [1.0 / (N + 1) for N in self.levels]

    def max_per_level(self) -> np.ndarray:
        return np.array([np.nanmax(r) if np.any(np.isfinite(r)) else np.nan for r in self.ratios])

    def mean_per_level(self) -> np.ndarray:
        return np.array([np.nanmean(r) if np.any(np.isfinite(r)) else np.nan for r in self.ratios])

    def variation(self) -> float:
        """Largest over smallest per-level maximum."""
        m = self.max_per_level()
        m = m[np.isfinite(m)]
        return float(np.max(m) / np.min(m)) if m.size else float("nan")

    def rows(self) -> list[dict]:
        out = []
        for l, N in enumerate(self.levels):
            for k in range(self.ratios.shape[1]):
                row = {"N": N, "h": 1.0 / (N + 1), "instance": k, "ratio": float(self.ratios[l, k])}
                for name, col in self.columns.items():
                    row[name] = float(col[l, k])
                out.append(row)
        return out

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "levels": list(self.levels),
            "h": self.h,
            "max": self.max_per_level().tolist(),
            "mean": self.mean_per_level().tolist(),
            "quantiles": [_quantiles(r) for r in self.ratios],
            "variation": self.variation(),
            "n_paths": self.n_paths,
            "seed": self.seed,
            "labels": list(self.labels),
            "skipped": list(self.skipped),
            "fit": dict(self.fit),
            "config": dict(self.config),
        }


# ---------------------------------------------------------------------------
# source stability


@dataclass
class SourcePair:
    """Two deterministic sources ``g(x, t)``; ``x`` has shape ``(n, *grid)``."""

    g1: Callable
    g2: Callable
    label: str = ""

    def gap(self, x, t):
        return np.asarray(self.g1(x, t), dtype=float) - np.asarray(self.g2(x, t), dtype=float)


def _positive_bump(n, rng, scale):
    k = rng.integers(1, 4, size=n)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    omega = rng.uniform(0.5, 3.0)
    amp = scale * rng.uniform(0.5, 2.0)

    def bump(x, t):
        out = amp * (1.0 + 0.4 * np.cos(omega * np.pi * t))
        for i in range(n):
            out = out * (1.5 + np.sin(k[i] * np.pi * x[i] + phase[i]))
        return out

    return bump


def smooth_pairs(n: int, count: int = 10, seed: int = 0) -> list[SourcePair]:
    """Pairs whose gap is a positive smooth bump, so ``|D g| <= C |A g|`` holds."""
    rng = np.random.default_rng(seed)
    pairs = []
    for j in range(count):
        base = _positive_bump(n, rng, 1.0)
        bump = _positive_bump(n, rng, 1.0)

        def g1(x, t, base=base, bump=bump):
            return base(x, t) + bump(x, t)

        pairs.append(SourcePair(g1, base, label=f"pair{j}"))
    return pairs


def witness_constant(gap: Callable, mesh: Mesh, timegrid: TimeGrid) -> float:
    """Smallest ``C`` with ``|D_i gap| <= C |A_i gap|`` on every dual set and step."""
    x = mesh.coords(mesh.closure_placement)
    worst = 0.0
    for t in timegrid.times[:-1]:
        v = np.asarray(gap(x, t), dtype=float)
        for i in range(mesh.n):
            others = [j for j in range(mesh.n) if j != i]
            d = np.abs(interior_array(diff_array(v, i, mesh.h), others))
            a = np.abs(interior_array(avg_array(v, i), others))
            if np.any((a == 0) & (d > 0)):
                return float("inf")
            q = np.divide(d, a, out=np.zeros_like(d), where=a > 0)
            worst = max(worst, float(np.max(q)))
    return worst


def _stacked(fns: Sequence[Callable]):
    # source with trailing instance axes (K, 2) after the grid axes
    def g(x, t):
        return np.stack([np.stack([np.asarray(a(x, t), float), np.asarray(b(x, t), float)], axis=-1) for a, b in fns], axis=-2)

    return g


def source_stability_experiment(
    n: int = 1,
    levels: Sequence[int] = (7, 15, 31),
    pairs: Sequence[SourcePair] | None = None,
    n_paths: int = 200,
    seed: int = 12345,
    T: float = 0.5,
    dt_factor: float = 0.25,
    gamma=1.0,
    a1=None,
    a2=None,
    x_star=None,
    chunk: int = 50,
    threads: int = 1,
    solver: str = "cg",
) -> StabilityReport:
    """Monte Carlo Lipschitz ratios ``|g1 - g2| / |Lambda1(g1) - Lambda1(g2)|``."""
    pairs = list(pairs) if pairs is not None else smooth_pairs(n, 10, seed)
    x_star = tuple(x_star) if x_star is not None else (-0.5,) * n
    K = len(pairs)
    L = len(levels)
    ratios = np.full((L, K), np.nan)
    cols = {name: np.full((L, K), np.nan) for name in ("numerator", "denominator", "denominator_se", "witness")}
    skipped = []
    g = _stacked([(p.g1, p.g2) for p in pairs])
    for l, N in enumerate(levels):
        mesh = build_mesh(n=n, N=N)
        gp = gamma_plus(mesh, x_star)
        tg = _level_grid(N, T, dt_factor)
        problem = SPDEProblem(mesh, gamma=gamma, a1=a1, a2=a2, g=g, label="source-stability")
        stepper = Stepper(problem, tg, solver)

        def work(dB, ix, problem=problem, tg=tg, gp=gp, stepper=stepper):
            obs = observe(problem, tg, dB[:, None, None, :], gp, "lambda1", (K, 2, len(ix)), stepper)
            d = Lambda1Data(
                obs.mesh,
                obs.gamma_plus,
                obs.dt,
                [t[..., 0, :] - t[..., 1, :] for t in obs.traces],
                obs.terminal[..., 0, :] - obs.terminal[..., 1, :],
            )
            tr, term = x1_components(d)
            return {"trace": tr, "terminal": term}

        mc = monte_carlo(work, n_paths, seed, tg, chunk, threads)
        den, se = _x1_with_error(mc["trace"], mc["terminal"])
        xp = mesh.coords(mesh.primal)
        for k, pair in enumerate(pairs):
            gap_sq = sum(tg.dt * float(integral_array(pair.gap(xp, t) ** 2, mesh.h, n)) for t in tg.times[:-1])
            num = np.sqrt(gap_sq)
            cols["numerator"][l, k] = num
            cols["denominator"][l, k] = den[k]
            cols["denominator_se"][l, k] = se[k]
            cols["witness"][l, k] = witness_constant(pair.gap, mesh, tg)
            if den[k] <= FLOOR:
                skipped.append({"N": N, "instance": k, "reason": f"observation gap {den[k]:.3e} below floor"})
                continue
            ratios[l, k] = num / den[k]
    config = {"n": n, "T": T, "dt_factor": dt_factor, "x_star": list(x_star), "chunk": chunk, "solver": solver}
    return StabilityReport(
        "source", list(levels), ratios, n_paths, seed, [p.label for p in pairs], cols, skipped, {}, config
    )


def _x1_with_error(trace_sq: np.ndarray, terminal_sq: np.ndarray):
    """X_1 norm from per-realization pieces and a delta-method standard error."""
    P = trace_sq.shape[-1]

    def part(a):
        m = np.mean(a, axis=-1)
        se = np.std(a, axis=-1, ddof=1) / np.sqrt(P) if P > 1 else np.zeros_like(m)
        root = np.sqrt(m)
        return root, np.divide(se, 2 * root, out=np.zeros_like(se), where=root > 0)

    r_tr, e_tr = part(trace_sq)
    r_te, e_te = part(terminal_sq)
    return np.sum(r_tr, axis=0) + r_te, np.sum(e_tr, axis=0) + e_te


# ---------------------------------------------------------------------------
# reconstruction


class LinearSourceMap:
    """Linear part of ``g -> Lambda1(g)`` for a fixed path, with its adjoint.

    ``basis="profile"`` parametrizes ``g(x, t_m) = q(t_m) c(x)`` with a known
    time profile ``q``; ``basis="field"`` takes one spatial array per step.
    Steps use a factorized implicit matrix, so the map is exactly linear.
    """

    def __init__(
        self,
        problem: SPDEProblem,
        timegrid: TimeGrid,
        increments: np.ndarray,
        gamma_plus: GammaPlus,
        basis: str = "profile",
        time_profile: Callable | np.ndarray | None = None,
    ):
        if not _is_zero(problem.a3):
            raise InverseError("the source map is affine only for a3 = 0")
        if basis not in ("profile", "field"):
            raise InverseError(f"unknown basis {basis!r}")
        self.problem = problem
        self.mesh = mesh = problem.mesh
        self.tg = timegrid
        self.gp = gamma_plus
        self.basis = basis
        self.dB = np.asarray(increments, dtype=float).reshape(timegrid.M)
        self.stepper = Stepper(replace(problem, g=None, f=None, xi=None, w0=None), timegrid, solver="direct")
        times = timegrid.times[:-1]
        if time_profile is None:
            self.q = np.ones(timegrid.M)
        elif callable(time_profile):
            self.q = np.array([float(time_profile(t)) for t in times])
        else:
            self.q = np.asarray(time_profile, dtype=float).reshape(timegrid.M)
        xp = mesh.coords(mesh.primal)
        self._a1 = [[_eval(a, xp, t) for a in (problem.a1 or [])] for t in times]
        self._a2 = [_eval(problem.a2, xp, t) for t in times]

    @property
    def param_shape(self) -> tuple:
        p = self.mesh.shape(self.mesh.primal)
        return p if self.basis == "profile" else (self.tg.M,) + p

    def _source(self, c, m):
        return self.q[m] * c if self.basis == "profile" else c[m]

    # spatial pieces
    def _explicit(self, w, m):
        n, h, dt = self.mesh.n, self.mesh.h, self.tg.dt
        drift = 0.0
        wc = pad_array(w, n)
        for i, a in enumerate(self._a1[m]):
            if a is not None:
                drift = drift + a * central_diff_array(wc, i, h, n)
        if self._a2[m] is not None:
            drift = drift + self._a2[m] * w
        return w + dt * drift

    def _explicit_T(self, v, m):
        n, h, dt = self.mesh.n, self.mesh.h, self.tg.dt
        drift = 0.0
        for i, a in enumerate(self._a1[m]):
            if a is not None:
                drift = drift - central_diff_array(pad_array(a * v, n), i, h, n)
        if self._a2[m] is not None:
            drift = drift + self._a2[m] * v
        return v + dt * drift

    def _observe(self, w):
        return [self.gp.restrict(t, k) for k, t in enumerate(normal_traces_array(pad_array(w, self.mesh.n), self.mesh))]

    def _observe_T(self, ys):
        mesh = self.mesh
        n, h = mesh.n, mesh.h
        out = np.zeros(mesh.shape(mesh.primal))
        for k, y in enumerate(ys):
            face = np.zeros(mesh.shape(mesh.boundary(k)))
            face.reshape(-1)[self.gp.members(k)] = y
            # both faces observe -w/h at the adjacent interior layer
            out[_along(n, k, 0)] -= face[_along(n, k, 0)] / h
            out[_along(n, k, -1)] -= face[_along(n, k, 1)] / h
        return out

    def forward(self, c: np.ndarray) -> Lambda1Data:
        c = np.asarray(c, dtype=float).reshape(self.param_shape)
        w = np.zeros(self.mesh.shape(self.mesh.primal))
        traces = [[y] for y in self._observe(w)]
        for m in range(self.tg.M):
            w = self.stepper.solve(self._explicit(w, m) + self.dB[m] * self._source(c, m))
            for k, y in enumerate(self._observe(w)):
                traces[k].append(y)
        return Lambda1Data(
            self.mesh, self.gp, self.tg.dt, [np.stack(t)[..., None] for t in traces], w[..., None]
        )

    def transpose(self, d: Lambda1Data) -> np.ndarray:
        """Euclidean transpose of :meth:`forward` applied to the weighted data ``d``."""
        M = self.tg.M
        tr = [t.reshape(t.shape[:2]) for t in d.traces]
        grad = np.zeros(self.param_shape)
        p = d.terminal.reshape(self.mesh.shape(self.mesh.primal)) + self._observe_T([t[M] for t in tr])
        for m in range(M - 1, -1, -1):
            v = self.stepper.solve(p)
            if self.basis == "profile":
                grad += self.q[m] * self.dB[m] * v
            else:
                grad[m] = self.dB[m] * v
            p = self._explicit_T(v, m) + self._observe_T([t[m] for t in tr])
        return grad

    # inner products matching the X_1 quadrature and L^2(Q)
    def data_weights(self, d: Lambda1Data) -> Lambda1Data:
        h, n, dt = self.mesh.h, self.mesh.n, self.tg.dt
        w = np.full(self.tg.M + 1, dt * h ** (n - 1))
        w[-1] = 0.0
        traces = [t * w.reshape((-1,) + (1,) * (t.ndim - 1)) for t in d.traces]
        return Lambda1Data(d.mesh, d.gamma_plus, d.dt, traces, d.terminal * h**n)

    def data_inner(self, a: Lambda1Data, b: Lambda1Data) -> float:
        wb = self.data_weights(b)
        return float(sum(np.sum(x * y) for x, y in zip(a.traces, wb.traces)) + np.sum(a.terminal * wb.terminal))

    def param_weight(self) -> float:
        h, n, dt = self.mesh.h, self.mesh.n, self.tg.dt
        if self.basis == "profile":
            return float(dt * np.sum(self.q**2) * h**n)
        return dt * h**n

    def param_inner(self, a, b) -> float:
        return self.param_weight() * float(np.sum(np.asarray(a) * np.asarray(b)))

    def adjoint(self, d: Lambda1Data) -> np.ndarray:
        return self.transpose(self.data_weights(d)) / self.param_weight()

    def source_field(self, c) -> np.ndarray:
        """``g(x, t_m)`` for ``m < M`` as an ``(M, *primal)`` array."""
        c = np.asarray(c, dtype=float).reshape(self.param_shape)
        return np.stack([self._source(c, m) for m in range(self.tg.M)])


@dataclass
class ReconstructionResult:
    coefficients: np.ndarray
    estimate: np.ndarray  # (M, *primal) source values at the left endpoints
    iterations: int
    residual: float
    misfit: float
    alpha: float
    basis: str


def affine_offset(problem: SPDEProblem, timegrid: TimeGrid, gp: GammaPlus) -> Lambda1Data:
    """Observations of the problem with the source switched off."""
    base = replace(problem, g=None)
    st = Stepper(base, timegrid, solver="direct")
    return observe(base, timegrid, None, gp, "lambda1", stepper=st)


def reconstruct_source(
    observed: Lambda1Data,
    path: BrownianPath,
    problem: SPDEProblem,
    alpha: float,
    basis: str = "profile",
    time_profile=None,
    rtol: float = 1e-8,
    maxiter: int | None = None,
) -> ReconstructionResult:
    """Tikhonov estimate of the source from one path's observations."""
    if not alpha > 0:
        raise InverseError("alpha must be positive")
    if observed.realizations != 1:
        raise InverseError("reconstruction uses the observations of a single path")
    tg, gp = path.timegrid, observed.gamma_plus
    fmap = LinearSourceMap(problem, tg, path.increments, gp, basis, time_profile)
    y = observed - affine_offset(problem, tg, gp)
    rhs = fmap.adjoint(y)

    def normal(c):
        return fmap.adjoint(fmap.forward(c)) + alpha * c

    try:
        c, info = cg(normal, rhs, ndim=rhs.ndim, rtol=rtol, maxiter=maxiter)
    except ConvergenceError as err:
        raise InverseError(f"normal equations stagnated: {err}") from err
    r = fmap.forward(c) - y
    misfit = np.sqrt(fmap.data_inner(r, r))
    return ReconstructionResult(c, fmap.source_field(c), info.iterations, info.residual, float(misfit), alpha, basis)


def relative_source_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Relative discrete ``L^2(Q)`` error; both arrays are ``(M, *primal)``."""
    return float(np.linalg.norm(estimate - truth) / np.linalg.norm(truth))


def tabulate_source(g: Callable, mesh: Mesh, timegrid: TimeGrid) -> np.ndarray:
    xp = mesh.coords(mesh.primal)
    shape = mesh.shape(mesh.primal)
    return np.stack([np.broadcast_to(np.asarray(g(xp, t), dtype=float), shape) for t in timegrid.times[:-1]])


# ---------------------------------------------------------------------------
# Cauchy stability


@dataclass
class CauchyPerturbation:
    """Initial data ``w0(x)`` and boundary data ``xi(x, t)`` with ``xi(x, 0) = 0``."""

    w0: Callable | None = None
    xi: Callable | None = None
    label: str = ""

    def scaled(self, c: float) -> "CauchyPerturbation":
        w0 = None if self.w0 is None else (lambda x, f=self.w0: c * np.asarray(f(x), float))
        xi = None if self.xi is None else (lambda x, t, f=self.xi: c * np.asarray(f(x, t), float))
        return CauchyPerturbation(w0, xi, f"{c:g}*{self.label}")


def _face_drive(n, omega):
    # oscillating data on the face x_0 = 0, zero on every other face
    def xi(x, t):
        out = np.sin(omega * t) * (1.0 - x[0]) ** 4
        for i in range(1, n):
            out = out * np.sin(np.pi * x[i])
        return out

    return xi


def default_perturbations(n: int = 1) -> list[CauchyPerturbation]:
    """Eight boundary drives on the face ``x_0 = 0`` at rising frequencies.

    Faster drives penetrate less, so the interior energy and the observed
    data shrink at different exponential rates.
    """
    return [CauchyPerturbation(None, _face_drive(n, om), f"drive{om:g}") for om in (4, 7, 12, 20, 35, 60, 100, 160)]


def _stack_instances(fns, spatial: bool):
    if all(f is None for f in fns):
        return None
    if spatial:
        def w0(x):
            return np.stack([np.zeros(x.shape[1:]) if f is None else np.broadcast_to(np.asarray(f(x), float), x.shape[1:]) for f in fns], axis=-1)

        return w0

    def xi(x, t):
        return np.stack([np.zeros(x.shape[1:]) if f is None else np.broadcast_to(np.asarray(f(x, t), float), x.shape[1:]) for f in fns], axis=-1)

    return xi


def box_mask(mesh: Mesh, lower: float, upper: float) -> np.ndarray:
    x = mesh.coords(mesh.primal)
    return np.all((x >= lower - 1e-12) & (x <= upper + 1e-12), axis=0)


def hoelder_branches(data, bound, h, kappa: float, c_inner: float) -> np.ndarray:
    """``(|data|, M e^{-c/h}, M^kappa |data|^{1-kappa})`` stacked on the last axis."""
    data, bound, h = (np.asarray(v, dtype=float) for v in (data, bound, h))
    return np.stack(
        [data, bound * np.exp(-c_inner / h), bound**kappa * data ** (1.0 - kappa)], axis=-1
    )


def fit_hoelder(lhs, data, bound, h) -> dict:
    """Least-squares fit of ``log lhs ~ log C + log max(branches)``.

    ``kappa`` is bounded to ``[0, 1]`` and the inner constant to ``c >= 0``;
    ``cover`` is the smallest outer constant making the bound hold for every
    instance under the fitted ``(kappa, c)``.
    """
    lhs, data, bound, h = (np.asarray(v, dtype=float).ravel() for v in (lhs, data, bound, h))
    use = (lhs > FLOOR) & (data > FLOOR) & (bound > FLOOR)
    out = {"points": int(use.sum()), "degenerate": False}
    if use.sum() < 2 or np.ptp(np.log(data[use])) < 1e-12:
        out.update(degenerate=True, kappa=float("nan"), c_inner=float("nan"), c_fit=float("nan"), cover=float("nan"))
        return out
    y = np.log(lhs[use])

    def resid(p):
        logc, kappa, c_inner = p
        br = hoelder_branches(data[use], bound[use], h[use], kappa, c_inner)
        return logc + np.log(np.max(br, axis=-1)) - y

    fits = []
    for k0 in (0.2, 0.5, 0.8):
        for c0 in (0.5, 5.0):
            p0 = [float(np.mean(y - np.log(bound[use]))), k0, c0]
            fits.append(least_squares(resid, p0, bounds=([-np.inf, 0.0, 0.0], [np.inf, 1.0, np.inf])))
    best = min(fits, key=lambda r: (r.cost, r.x[1]))
    logc, kappa, c_inner = (float(v) for v in best.x)
    br = hoelder_branches(data, bound, h, kappa, c_inner)
    top = np.max(br, axis=-1)
    ok = top > 0
    cover = float(np.max(lhs[ok] / top[ok])) if np.any(ok) else float("nan")
    rel = np.log(data[use] / bound[use])
    slope = np.polyfit(rel, np.log(lhs[use] / bound[use]), 1)[0] if np.ptp(rel) > 1e-12 else float("nan")
    out.update(
        kappa=kappa,
        c_inner=c_inner,
        c_fit=float(np.exp(logc)),
        cover=cover,
        rms=float(np.sqrt(2 * best.cost / use.sum())),
        loglog_slope=float(slope),
        covers_all=bool(np.all(lhs <= cover * top * (1 + 1e-12) + FLOOR)),
    )
    return out


def cauchy_stability_experiment(
    n: int = 1,
    levels: Sequence[int] = (15, 31),
    perturbations: Sequence[CauchyPerturbation] | None = None,
    subdomain: tuple[float, float] = (0.25, 0.75),
    eps: float = 0.1,
    T: float = 0.5,
    n_paths: int = 100,
    seed: int = 2024,
    dt_factor: float = 0.25,
    gamma=1.0,
    a1=None,
    a2=None,
    a3=0.5,
    x_star=None,
    chunk: int = 50,
    threads: int = 1,
    solver: str = "cg",
) -> StabilityReport:
    """Interior energy on ``subdomain x (eps, T - eps)`` against the Hölder bound."""
    perts = list(perturbations) if perturbations is not None else default_perturbations(n)
    if not 0 < eps < T / 2:
        raise InverseError("need 0 < eps < T/2")
    x_star = tuple(x_star) if x_star is not None else (-0.5,) * n
    K, L = len(perts), len(levels)
    cols = {name: np.zeros((L, K)) for name in ("lhs", "bound", "data", "data_boundary", "data_traces", "h")}
    w0 = _stack_instances([p.w0 for p in perts], True)
    xi = _stack_instances([p.xi for p in perts], False)
    for l, N in enumerate(levels):
        mesh = build_mesh(n=n, N=N)
        gp = gamma_plus(mesh, x_star)
        tg = _level_grid(N, T, dt_factor)
        mask = box_mask(mesh, *subdomain)
        if not mask.any():
            raise InverseError(f"subdomain {subdomain} holds no mesh point at N={N}")
        problem = SPDEProblem(mesh, gamma=gamma, a1=a1, a2=a2, a3=a3, xi=xi, w0=w0, label="cauchy-stability")
        stepper = Stepper(problem, tg, solver)
        shells = [stepper.boundary(m) for m in range(tg.M + 1)]
        if shells[0] is not None and np.any(shells[0] != 0):
            raise InverseError("boundary data must vanish at t = 0")
        if shells[0] is None:
            xi_sq = np.zeros(K)
        else:
            full = np.broadcast_to(np.stack(shells), (tg.M + 1,) + mesh.shape(mesh.closure_placement) + (K,))
            xi_sq = boundary_time_sq(observed_boundary_values(full, gp), tg.dt, mesh)
        window = (tg.times >= eps - 1e-12) & (tg.times <= T - eps + 1e-12)

        def work(dB, ix, problem=problem, tg=tg, gp=gp, stepper=stepper, mask=mask, window=window, mesh=mesh):
            h, dt = mesh.h, tg.dt
            P = len(ix)
            full = np.zeros((K, P))
            inner = np.zeros((K, P))
            traces = np.zeros((mesh.n, K, P))
            for m, w in march(problem, tg, dB[:, None, :], (K, P), stepper=stepper):
                if m == tg.M:
                    break
                full += dt * h2_sq_array(w, h, mesh.n)
                if window[m]:
                    inner += dt * masked_h2_sq_array(w, h, mesh.n, mask)
                for k, tr in enumerate(normal_traces_array(w, mesh)):
                    traces[k] += dt * h ** (mesh.n - 1) * np.sum(gp.restrict(tr, k) ** 2, axis=0)
            return {"full": full, "inner": inner, "traces": traces}

        mc = monte_carlo(work, n_paths, seed, tg, chunk, threads)
        cols["lhs"][l] = np.sqrt(np.mean(mc["inner"], axis=-1))
        cols["bound"][l] = np.sqrt(np.mean(mc["full"], axis=-1))
        cols["data_boundary"][l] = np.sqrt(xi_sq)
        cols["data_traces"][l] = np.sum(np.sqrt(np.mean(mc["traces"], axis=-1)), axis=0)
        cols["data"][l] = cols["data_boundary"][l] + cols["data_traces"][l]
        cols["h"][l] = mesh.h
    fit = fit_hoelder(cols["lhs"], cols["data"], cols["bound"], cols["h"])
    if fit["degenerate"]:
        ratios = np.full((L, K), np.nan)
    else:
        br = hoelder_branches(cols["data"], cols["bound"], cols["h"], fit["kappa"], fit["c_inner"])
        top = np.max(br, axis=-1)
        ratios = np.divide(cols["lhs"], top, out=np.zeros_like(top), where=top > 0)
        for j, name in enumerate(("branch_data", "branch_exponential", "branch_hoelder")):
            cols[name] = br[..., j]
    config = {
        "n": n, "T": T, "eps": eps, "subdomain": list(subdomain), "dt_factor": dt_factor,
        "x_star": list(x_star), "chunk": chunk, "solver": solver,
    }
    return StabilityReport("cauchy", list(levels), ratios, n_paths, seed, [p.label for p in perts], cols, [], fit, config)
