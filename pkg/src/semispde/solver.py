"""
Semi-implicit Euler--Maruyama for the semidiscrete stochastic heat equation

    dw - sum_i D_i(gamma_i D_i w) dt = (sum_i a1_i A_i D_i w + a2 w + f) dt + (a3 w + g) dB

with Dirichlet data ``xi`` on the boundary shell.  The diffusion is implicit,
drift and noise are explicit at the left endpoint.

States are closure arrays of shape ``(*closure, *batch)``: grid axes first,
then any number of batch axes (instances, realizations).  Coefficients may
carry leading batch axes after the grid axes; they are broadcast against the
state by appending singleton axes.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .calculus import (
    GridFunction,
    _bcast,
    central_diff_array,
    interior_array,
    laplacian_array,
    pad_array,
    shell_mask,
)
from .linalg import cg
from .mesh import Mesh


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not self.T > 0:
            raise ProblemError(f"T must be positive (got {self.T})")
        if int(self.M) != self.M or self.M < 2:
            raise ProblemError(f"M must be an integer >= 2 (got {self.M})")

    @classmethod
    def from_dt(cls, T: float, dt: float) -> "TimeGrid":
        return cls(float(T), max(2, int(np.ceil(T / dt - 1e-9))))

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt


# ---------------------------------------------------------------------------
# Brownian increments


def realization_rng(seed: int, index: int | None = None) -> np.random.Generator:
    """Independent stream per realization index, derived from one root seed."""
    ss = np.random.SeedSequence(seed) if index is None else np.random.SeedSequence(seed, spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class BrownianPath:
    seed: int
    timegrid: TimeGrid
    increments: np.ndarray
    index: int | None = None


def sample_path(seed: int, timegrid: TimeGrid, index: int | None = None) -> BrownianPath:
    dB = realization_rng(seed, index).standard_normal(timegrid.M) * np.sqrt(timegrid.dt)
    return BrownianPath(int(seed), timegrid, dB, index)


def sample_increments(seed: int, timegrid: TimeGrid, indices: Sequence[int]) -> np.ndarray:
    """Increments of the given realizations, shape ``(M, len(indices))``."""
    cols = [sample_path(seed, timegrid, i).increments for i in indices]
    return np.stack(cols, axis=-1) if cols else np.zeros((timegrid.M, 0))


# ---------------------------------------------------------------------------
# problem description


class AdaptedSource:
    """Source whose value at step ``m`` may use the increments before ``m``.

    ``fn(x, t, past)`` receives ``past`` of shape ``(m, *batch)``.
    """

    def __init__(self, fn: Callable):
        self.fn = fn


Coefficient = float | Callable | np.ndarray | None


def _eval(coef, x, t):
    if coef is None:
        return None
    if callable(coef):
        return np.asarray(coef(x, t), dtype=float)
    return np.asarray(coef, dtype=float)


def _eval_space(coef, x):
    if callable(coef):
        return np.asarray(coef(x), dtype=float)
    return np.broadcast_to(np.asarray(coef, dtype=float), x.shape[1:])


def _is_zero(coef) -> bool:
    return coef is None or (not callable(coef) and np.all(np.asarray(coef) == 0))


@dataclass
class SPDEProblem:
    """Coefficients of the forward problem.

    ``gamma`` is a scalar, a callable of ``x`` or a list of those (one per
    direction).  ``a1`` is a list of per-direction coefficients.  ``a2``,
    ``a3``, ``f``, ``g`` and ``xi`` are scalars or callables ``(x, t)``;
    ``g`` may also be an :class:`AdaptedSource`.  ``w0`` is a scalar, a
    callable of ``x`` or a primal array.
    """

    mesh: Mesh
    gamma: object = 1.0
    a1: Sequence[Coefficient] | None = None
    a2: Coefficient = None
    a3: Coefficient = None
    f: Coefficient = None
    g: Coefficient | AdaptedSource = None
    xi: Coefficient = None
    w0: object = None
    label: str = ""

    def gammas(self) -> list:
        if isinstance(self.gamma, (list, tuple)):
            if len(self.gamma) != self.mesh.n:
                raise ProblemError(f"need {self.mesh.n} diffusion coefficients")
            return list(self.gamma)
        return [self.gamma] * self.mesh.n

    def gamma_on(self, i: int, placement) -> np.ndarray:
        return _eval_space(self.gammas()[i], self.mesh.coords(placement))

    def validate(self):
        mesh = self.mesh
        for i in range(mesh.n):
            for pl in (mesh.primal, mesh.dual(i), mesh.closure_placement):
                if not np.all(self.gamma_on(i, pl) > 0):
                    raise ProblemError(f"gamma_{i} must be positive on {pl}")
        if self.a1 is not None and len(self.a1) != mesh.n:
            raise ProblemError(f"a1 needs {mesh.n} components")
        return self

    def reg(self) -> float:
        """``sup (gamma_i + 1/gamma_i) + sum_i sup |D_i gamma_i|^2`` on the mesh."""
        mesh = self.mesh
        out = 0.0
        grads = 0.0
        for i in range(mesh.n):
            gd = self.gamma_on(i, mesh.dual(i))
            out = max(out, float(np.max(gd + 1.0 / gd)))
            grads += float(np.max(np.diff(gd, axis=i) / mesh.h) ** 2)
        return out + grads

    def initial_primal(self) -> np.ndarray:
        x = self.mesh.coords(self.mesh.primal)
        if self.w0 is None:
            return np.zeros(x.shape[1:])
        if callable(self.w0):
            return np.asarray(self.w0(x), dtype=float)
        return np.asarray(self.w0, dtype=float)

    def is_homogeneous(self) -> bool:
        return _is_zero(self.xi)


def problem_hash(problem: SPDEProblem, timegrid: TimeGrid) -> str:
    """Digest of the problem tabulated on its mesh at a few times."""
    mesh = problem.mesh
    h = hashlib.sha256()
    h.update(f"{mesh.n}:{mesh.N}:{timegrid.T!r}:{timegrid.M}:{problem.label}".encode())
    for i in range(mesh.n):
        h.update(np.ascontiguousarray(problem.gamma_on(i, mesh.dual(i))).tobytes())
    h.update(np.ascontiguousarray(problem.initial_primal()).tobytes())
    xp = mesh.coords(mesh.primal)
    xc = mesh.coords(mesh.closure_placement)
    for t in (0.0, 0.5 * timegrid.T, timegrid.T):
        coefs = list(problem.a1 or []) + [problem.a2, problem.a3, problem.f]
        if not isinstance(problem.g, AdaptedSource):
            coefs.append(problem.g)
        for c in coefs:
            v = _eval(c, xp, t)
            h.update(b"-" if v is None else np.ascontiguousarray(v).tobytes())
        v = _eval(problem.xi, xc, t)
        h.update(b"-" if v is None else np.ascontiguousarray(v).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# stepping


def system_matrix(mesh: Mesh, gamma_dual: Sequence[np.ndarray], dt: float) -> sp.csc_matrix:
    """Sparse ``I - dt L_gamma`` on interior unknowns (row-major order)."""
    N, n, h = mesh.N, mesh.n, mesh.h
    d1 = sp.diags([np.ones(N), -np.ones(N)], [0, -1], shape=(N + 1, N)) / h
    eye = sp.identity(N, format="csr")
    A = sp.identity(N**n, format="csr")
    for k in range(n):
        factors = [eye] * n
        factors[k] = d1
        D = factors[0]
        for fct in factors[1:]:
            D = sp.kron(D, fct, format="csr")
        A = A + dt * (D.T @ sp.diags(np.ravel(gamma_dual[k])) @ D)
    return sp.csc_matrix(A)


class Stepper:
    """One time step of the scheme for a fixed problem and time grid.

    ``solver="cg"`` uses matrix-free conjugate gradients (relative residual
    ``rtol``); ``solver="direct"`` factorizes the sparse system once, which
    makes the step an exactly linear map.
    """

    def __init__(self, problem: SPDEProblem, timegrid: TimeGrid, solver: str = "cg", rtol: float = 1e-10):
        problem.validate()
        self.problem = problem
        self.timegrid = timegrid
        self.mesh = mesh = problem.mesh
        self.n, self.h, self.dt = mesh.n, mesh.h, timegrid.dt
        self.times = timegrid.times
        self.xp = mesh.coords(mesh.primal)
        self.xc = mesh.coords(mesh.closure_placement)
        self.gamma_dual = [problem.gamma_on(i, mesh.dual(i)) for i in range(mesh.n)]
        self.shell = shell_mask(mesh.N, mesh.n)
        self.rtol = rtol
        if solver not in ("cg", "direct"):
            raise ProblemError(f"unknown linear solver {solver!r}")
        self.solver = solver
        self._lu = splu(system_matrix(mesh, self.gamma_dual, self.dt)) if solver == "direct" else None

    # operators on batched arrays
    def L(self, w: np.ndarray) -> np.ndarray:
        return laplacian_array(w, self.h, self.n, self.gamma_dual)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        n = self.n
        if self._lu is not None:
            shape = rhs.shape
            flat = rhs.reshape((self.mesh.N**n, -1))
            return self._lu.solve(np.ascontiguousarray(flat)).reshape(shape)
        dt = self.dt

        def apply(x):
            return x - dt * self.L(pad_array(x, n))

        x, _ = cg(apply, rhs, ndim=n, rtol=self.rtol)
        return x

    def boundary(self, m: int) -> np.ndarray | None:
        """Closure array with ``xi(t_m)`` on the shell and zero inside."""
        v = _eval(self.problem.xi, self.xc, self.times[m])
        if v is None:
            return None
        return np.where(_bcast(self.shell, max(v.ndim, self.n)), v, 0.0)

    def initial(self, batch_shape: tuple = ()) -> np.ndarray:
        w0 = self.problem.initial_primal()
        full = tuple(s + 2 for s in w0.shape[: self.n]) + tuple(batch_shape)
        bd = self.boundary(0)
        w = pad_array(w0, self.n, bd)
        return np.array(np.broadcast_to(_bcast(w, len(full)), full))

    def step(self, w: np.ndarray, m: int, dB=None, past: np.ndarray | None = None) -> np.ndarray:
        """Advance the closure state ``w`` from ``t_m`` to ``t_{m+1}``."""
        p, n, dt, h = self.problem, self.n, self.dt, self.h
        t = self.times[m]
        nd = w.ndim
        x_in = interior_array(w, range(n))
        drift = 0.0
        if p.a1 is not None:
            for i, a in enumerate(p.a1):
                c = _eval(a, self.xp, t)
                if c is not None:
                    drift = drift + _bcast(c, nd) * central_diff_array(w, i, h, n)
        c = _eval(p.a2, self.xp, t)
        if c is not None:
            drift = drift + _bcast(c, nd) * x_in
        c = _eval(p.f, self.xp, t)
        if c is not None:
            drift = drift + _bcast(c, nd)
        rhs = x_in + dt * drift
        if dB is not None:
            noise = 0.0
            c = _eval(p.a3, self.xp, t)
            if c is not None:
                noise = noise + _bcast(c, nd) * x_in
            if isinstance(p.g, AdaptedSource):
                noise = noise + _bcast(np.asarray(p.g.fn(self.xp, t, past), dtype=float), nd)
            else:
                c = _eval(p.g, self.xp, t)
                if c is not None:
                    noise = noise + _bcast(c, nd)
            dB = np.asarray(dB, dtype=float)
            rhs = rhs + noise * dB.reshape((1,) * n + dB.shape)
        bd = self.boundary(m + 1)
        if bd is not None:
            lb = self.L(bd)
            nd = max(np.ndim(rhs), lb.ndim)
            rhs = _bcast(rhs, nd) + dt * _bcast(lb, nd)
        rhs = np.broadcast_to(rhs, np.broadcast_shapes(np.shape(rhs), x_in.shape))
        return pad_array(self.solve(rhs), n, bd)


def march(
    problem: SPDEProblem,
    timegrid: TimeGrid,
    increments: np.ndarray | None = None,
    batch_shape: tuple | None = None,
    solver: str = "cg",
    rtol: float = 1e-10,
    stepper: Stepper | None = None,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(m, w_m)`` for ``m = 0..M``.

    ``increments`` has shape ``(M, *batch)``; step ``m`` only ever sees
    ``increments[:m + 1]`` (its own increment and the past).
    """
    st = stepper or Stepper(problem, timegrid, solver, rtol)
    if increments is not None:
        increments = np.asarray(increments, dtype=float)
        if increments.shape[0] != timegrid.M:
            raise ProblemError(f"expected {timegrid.M} increments, got {increments.shape[0]}")
    if batch_shape is None:
        batch_shape = () if increments is None else increments.shape[1:]
    w = st.initial(tuple(batch_shape))
    yield 0, w
    for m in range(timegrid.M):
        if increments is None:
            w = st.step(w, m)
        else:
            w = st.step(w, m, increments[m], increments[:m])
        yield m + 1, w


@dataclass
class Trajectory:
    mesh: Mesh
    timegrid: TimeGrid
    states: np.ndarray  # (M+1, *closure)
    provenance: dict = field(default_factory=dict)

    def closure(self, m: int) -> GridFunction:
        return GridFunction(self.mesh, self.mesh.closure_placement, self.states[m])

    def primal(self, m: int) -> GridFunction:
        return GridFunction(self.mesh, self.mesh.primal, self.states[m][(slice(1, -1),) * self.mesh.n])

    @property
    def terminal(self) -> GridFunction:
        return self.primal(self.timegrid.M)


def solve_forward(problem: SPDEProblem, path: BrownianPath, solver: str = "cg", rtol: float = 1e-10) -> Trajectory:
    tg = path.timegrid
    states = np.stack([w for _, w in march(problem, tg, path.increments, (), solver, rtol)])
    prov = {"problem_hash": problem_hash(problem, tg), "seed": path.seed, "index": path.index}
    return Trajectory(problem.mesh, tg, states, prov)


def solve_deterministic(problem: SPDEProblem, timegrid: TimeGrid, solver: str = "cg", rtol: float = 1e-10) -> Trajectory:
    if not (_is_zero(problem.g) and not isinstance(problem.g, AdaptedSource)) or not _is_zero(problem.a3):
        raise ProblemError("deterministic solve requires g = 0 and a3 = 0")
    states = np.stack([w for _, w in march(problem, timegrid, None, (), solver, rtol)])
    prov = {"problem_hash": problem_hash(problem, timegrid), "seed": None, "index": None}
    return Trajectory(problem.mesh, timegrid, states, prov)


# ---------------------------------------------------------------------------
# Monte Carlo orchestration


def monte_carlo(
    fn: Callable[[np.ndarray, Sequence[int]], dict],
    n_paths: int,
    seed: int,
    timegrid: TimeGrid,
    chunk: int = 50,
    threads: int = 1,
) -> dict[str, np.ndarray]:
    """Run ``fn(increments, indices)`` over fixed-size realization chunks.

    Each returned array must end in a realization axis of the chunk's
    length; chunks are concatenated in realization order.  The chunking does
    not depend on ``threads``, so results are identical for any thread count.
    """
    if n_paths < 1:
        raise ProblemError("n_paths must be positive")
    blocks = [range(a, min(a + chunk, n_paths)) for a in range(0, n_paths, chunk)]

    def work(ix):
        return fn(sample_increments(seed, timegrid, ix), ix)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, blocks))
    else:
        parts = [work(ix) for ix in blocks]
    return {k: np.concatenate([np.asarray(p[k]) for p in parts], axis=-1) for k in parts[0]}
