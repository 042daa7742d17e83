"""
Boundary observations of simulated solutions and the norms used to measure
them.

All observation arrays carry a time axis first, then the observed points,
then batch axes; the last batch axis is the realization axis over which
expectations are taken.  Time integrals use the left-endpoint rule, so the
final time level enters only through the terminal snapshot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import (
    GridFunction,
    _bcast,
    boundary_h1_sq_array,
    diff,
    dual_diff_array,
    hhalf_sq_array,
    integral_array,
    interior_array,
    trace,
)
from .mesh import GammaPlus, Mesh
from .solver import SPDEProblem, Stepper, TimeGrid, Trajectory, march


class ObservationError(ValueError):
    pass


def normal_derivative(w: GridFunction) -> list[GridFunction]:
    """Component ``i`` is ``t_r^i(D_i w) nu_i`` on ``boundary(i)``."""
    if w.placement.kind != "closure":
        raise ObservationError("the normal derivative needs boundary values")
    mesh = w.mesh
    return [trace(diff(w, i), i) * mesh.normals(i) for i in range(mesh.n)]


def normal_traces_array(w: np.ndarray, mesh: Mesh) -> list[np.ndarray]:
    """Batched :func:`normal_derivative` of closure arrays."""
    out = []
    for i in range(mesh.n):
        q = np.take(dual_diff_array(w, i, mesh.h, mesh.n), [0, -1], axis=i)
        out.append(q * _bcast(mesh.normals(i), q.ndim))
    return out


def _observed(values: np.ndarray, gp: GammaPlus, k: int) -> np.ndarray:
    return gp.restrict(values, k)


def _realizations(arrays):
    counts = {a.shape[-1] for a in arrays if a.ndim}
    if len(counts) > 1:
        raise ObservationError(f"mismatched realization counts {sorted(counts)}")
    return counts.pop() if counts else 1


@dataclass
class Lambda1Data:
    """Normal-derivative traces on the observed boundary plus the terminal state.

    ``traces[i]`` has shape ``(M+1, |observed in direction i|, *batch)``,
    ``terminal`` has shape ``(*primal, *batch)``.
    """

    mesh: Mesh
    gamma_plus: GammaPlus
    dt: float
    traces: list[np.ndarray]
    terminal: np.ndarray

    def __post_init__(self):
        for k, tr in enumerate(self.traces):
            if tr.shape[1] != self.gamma_plus.count(k):
                raise ObservationError(f"direction {k}: {tr.shape[1]} traces for {self.gamma_plus.count(k)} points")
        self.realizations = _realizations(list(self.traces) + [self.terminal])

    @property
    def steps(self) -> int:
        return self.traces[0].shape[0] - 1

    def _combine(self, other, op):
        if isinstance(other, Lambda1Data):
            return Lambda1Data(
                self.mesh,
                self.gamma_plus,
                self.dt,
                [op(a, b) for a, b in zip(self.traces, other.traces)],
                op(self.terminal, other.terminal),
            )
        return Lambda1Data(self.mesh, self.gamma_plus, self.dt, [op(a, other) for a in self.traces], op(self.terminal, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, c):
        return self._combine(c, np.multiply)

    __rmul__ = __mul__


@dataclass
class Lambda2Data:
    """Boundary values and normal-derivative traces on the observed boundary.

    ``xi`` keeps the full boundary shell per step, shape
    ``(M+1, *closure, *batch)``; norms use its part on the observed faces.
    """

    mesh: Mesh
    gamma_plus: GammaPlus
    dt: float
    values: list[np.ndarray]
    traces: list[np.ndarray]
    xi: np.ndarray

    def __post_init__(self):
        self.realizations = _realizations(list(self.values) + list(self.traces) + [self.xi])

    def __mul__(self, c):
        return Lambda2Data(
            self.mesh, self.gamma_plus, self.dt, [v * c for v in self.values], [t * c for t in self.traces], self.xi * c
        )

    __rmul__ = __mul__


class _Recorder:
    def __init__(self, mesh: Mesh, gp: GammaPlus, values: bool):
        if gp.count() == 0:
            raise ObservationError("the observed boundary set is empty")
        self.mesh, self.gp, self.want_values = mesh, gp, values
        self.traces = [[] for _ in range(mesh.n)]
        self.values = [[] for _ in range(mesh.n)]
        self.shells = []
        self.last = None

    def __call__(self, w: np.ndarray):
        mesh = self.mesh
        for k, tr in enumerate(normal_traces_array(w, mesh)):
            self.traces[k].append(_observed(tr, self.gp, k))
            if self.want_values:
                face = interior_array(np.take(w, [0, -1], axis=k), [j for j in range(mesh.n) if j != k])
                self.values[k].append(_observed(face, self.gp, k))
        if self.want_values:
            self.shells.append(w)
        self.last = w


def _with_realization_axis(a: np.ndarray, extra: int) -> np.ndarray:
    return a.reshape(a.shape + (1,) * extra)


def _finish1(rec: _Recorder, dt: float, extra: int) -> Lambda1Data:
    mesh = rec.mesh
    traces = [_with_realization_axis(np.stack(t), extra) for t in rec.traces]
    terminal = _with_realization_axis(interior_array(rec.last, range(mesh.n)), extra)
    return Lambda1Data(mesh, rec.gp, dt, traces, terminal)


def _finish2(rec: _Recorder, dt: float, extra: int) -> Lambda2Data:
    traces = [_with_realization_axis(np.stack(t), extra) for t in rec.traces]
    values = [_with_realization_axis(np.stack(v), extra) for v in rec.values]
    shells = _with_realization_axis(np.stack(rec.shells), extra)
    return Lambda2Data(rec.mesh, rec.gp, dt, values, traces, shells)


def lambda1(traj: Trajectory, gamma_plus: GammaPlus) -> Lambda1Data:
    rec = _Recorder(traj.mesh, gamma_plus, values=False)
    for w in traj.states:
        rec(w)
    return _finish1(rec, traj.timegrid.dt, 1)


def lambda2(traj: Trajectory, gamma_plus: GammaPlus) -> Lambda2Data:
    rec = _Recorder(traj.mesh, gamma_plus, values=True)
    for w in traj.states:
        rec(w)
    return _finish2(rec, traj.timegrid.dt, 1)


def observe(
    problem: SPDEProblem,
    timegrid: TimeGrid,
    increments: np.ndarray | None,
    gamma_plus: GammaPlus,
    kind: str = "lambda1",
    batch_shape: tuple | None = None,
    stepper: Stepper | None = None,
    solver: str = "cg",
):
    """Simulate a batch and record its observations without storing states."""
    rec = _Recorder(problem.mesh, gamma_plus, values=(kind == "lambda2"))
    for _, w in march(problem, timegrid, increments, batch_shape, solver, stepper=stepper):
        rec(w)
    extra = 1 if rec.last.ndim == problem.mesh.n else 0
    return (_finish1 if kind == "lambda1" else _finish2)(rec, timegrid.dt, extra)


# ---------------------------------------------------------------------------
# norms


def _trace_sq(traces, dt, h, n):
    # per direction and realization: sum_{m<M} dt h^{n-1} sum |f|^2
    return np.stack([dt * h ** (n - 1) * np.sum(t[:-1] ** 2, axis=(0, 1)) for t in traces])


def x1_components(d: Lambda1Data) -> tuple[np.ndarray, np.ndarray]:
    """Per-realization squared pieces: ``(trace part per direction, terminal part)``."""
    mesh = d.mesh
    return _trace_sq(d.traces, d.dt, mesh.h, mesh.n), integral_array(d.terminal**2, mesh.h, mesh.n)


def x1_from_components(trace_sq: np.ndarray, terminal_sq: np.ndarray):
    """Monte Carlo mean over the last axis, then the X_1 combination."""
    return np.sum(np.sqrt(np.mean(trace_sq, axis=-1)), axis=0) + np.sqrt(np.mean(terminal_sq, axis=-1))


def x1_norm(d: Lambda1Data):
    out = x1_from_components(*x1_components(d))
    return float(out) if np.ndim(out) == 0 else out


def boundary_time_sq(xi: np.ndarray, dt: float, mesh: Mesh) -> np.ndarray:
    """``int_0^T (|xi|^2 + |d_t xi|^2)`` in the ``H^1 cap H^{1/2}`` boundary norm.

    ``xi`` has shape ``(M+1, *closure, *batch)``; forward differences in time.
    """
    n, h = mesh.n, mesh.h
    vals = xi[:-1]
    rates = (xi[1:] - xi[:-1]) / dt
    both = np.concatenate([vals, rates], axis=0)
    cols = np.moveaxis(both, 0, n)
    sq = boundary_h1_sq_array(cols, h, n) + hhalf_sq_array(cols, h, n)
    M = xi.shape[0] - 1
    return dt * (np.sum(sq[:M], axis=0) + np.sum(sq[M:], axis=0))


def observed_shell_mask(gp: GammaPlus) -> np.ndarray:
    """Closure points lying on a closed face of the observed boundary."""
    mesh = gp.mesh
    X = mesh.coords(mesh.closure_placement)
    keep = np.zeros(mesh.shape(mesh.closure_placement), dtype=bool)
    for k in range(mesh.n):
        for side, nu in ((0.0, -1.0), (1.0, 1.0)):
            if (side - gp.x_star[k]) * nu >= 0.0:
                keep |= X[k] == side
    return keep


def observed_boundary_values(xi: np.ndarray, gp: GammaPlus) -> np.ndarray:
    """Zero-extend the boundary values on the observed faces to the whole shell."""
    mask = observed_shell_mask(gp)
    return xi * _bcast(mask, xi.ndim - 1)[None]


def x2_components(d: Lambda2Data) -> tuple[np.ndarray, np.ndarray]:
    mesh = d.mesh
    xi = observed_boundary_values(d.xi, d.gamma_plus)
    return boundary_time_sq(xi, d.dt, mesh), _trace_sq(d.traces, d.dt, mesh.h, mesh.n)


def x2_from_components(xi_sq: np.ndarray, trace_sq: np.ndarray):
    return np.sqrt(np.mean(xi_sq, axis=-1)) + np.sum(np.sqrt(np.mean(trace_sq, axis=-1)), axis=0)


def x2_norm(d: Lambda2Data):
    out = x2_from_components(*x2_components(d))
    return float(out) if np.ndim(out) == 0 else out
