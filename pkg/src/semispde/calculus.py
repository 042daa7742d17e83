"""
Difference, average and trace operators on staggered placements, discrete
integrals, the discrete norm family and exact identity checks.

Two layers are provided.  The ``*_array`` kernels operate on raw arrays whose
first ``n`` axes are grid axes and whose trailing axes (if any) are batch
axes; they are what the solver and the Monte Carlo drivers use.  The
:class:`GridFunction` layer wraps a single function together with its mesh
and placement and checks placement compatibility on every operation.

Axis-kind transitions under a half shift along axis ``k``::

    "c" (closure)  --D_k / A_k-->  "d" (dual)  --D_k / A_k-->  "p" (primal)

After an operation along ``k`` other closure axes are restricted to their
interior, so ``diff(u, k)`` of a closure function lands on ``dual(k)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import cg
from .mesh import Mesh, Placement

_SHIFT = {"c": "d", "d": "p"}


class PlacementError(ValueError):
    """Operands live on incompatible placements."""


# ---------------------------------------------------------------------------
# array kernels


def _along(ndim, axis, s):
    key = [slice(None)] * ndim
    key[axis] = s
    return tuple(key)


def diff_array(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    return np.diff(a, axis=axis) / h


def avg_array(a: np.ndarray, axis: int) -> np.ndarray:
    return 0.5 * (a[_along(a.ndim, axis, slice(1, None))] + a[_along(a.ndim, axis, slice(None, -1))])


def interior_array(a: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    key = [slice(None)] * a.ndim
    for ax in axes:
        key[ax] = slice(1, -1)
    return a[tuple(key)]


def face_array(a: np.ndarray, k: int, n: int) -> np.ndarray:
    """Face set ``boundary(k)`` of a closure array (edges dropped)."""
    return interior_array(np.take(a, [0, -1], axis=k), [j for j in range(n) if j != k])


def central_diff_array(a: np.ndarray, k: int, h: float, n: int) -> np.ndarray:
    """``A_k D_k`` of a closure array, on the primal mesh."""
    up = a[_along(a.ndim, k, slice(2, None))]
    down = a[_along(a.ndim, k, slice(None, -2))]
    return interior_array((up - down) / (2 * h), [j for j in range(n) if j != k])


def second_diff_array(a: np.ndarray, k: int, h: float, n: int) -> np.ndarray:
    """``D_k D_k`` of a closure array, on the primal mesh."""
    up = a[_along(a.ndim, k, slice(2, None))]
    mid = a[_along(a.ndim, k, slice(1, -1))]
    down = a[_along(a.ndim, k, slice(None, -2))]
    return interior_array((up - 2 * mid + down) / h**2, [j for j in range(n) if j != k])


def dual_diff_array(a: np.ndarray, k: int, h: float, n: int) -> np.ndarray:
    """``D_k`` of a closure array restricted to ``dual(k)``."""
    return interior_array(diff_array(a, k, h), [j for j in range(n) if j != k])


def _bcast(coef, ndim):
    # append singleton batch axes to a grid-shaped coefficient
    coef = np.asarray(coef)
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim))


def laplacian_array(a: np.ndarray, h: float, n: int, gammas: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """``sum_k D_k(gamma_k D_k a)`` of a closure array, on the primal mesh.

    ``gammas[k]`` is sampled on ``dual(k)``.
    """
    out = 0.0
    for k in range(n):
        q = dual_diff_array(a, k, h, n)
        if gammas is not None:
            q = _bcast(gammas[k], q.ndim) * q
        out = out + diff_array(q, k, h)
    return out


def pad_array(interior: np.ndarray, n: int, shell: np.ndarray | None = None) -> np.ndarray:
    """Closure array with the given interior and boundary shell (zero if None)."""
    interior = np.asarray(interior, dtype=float)
    shape = tuple(s + 2 for s in interior.shape[:n]) + interior.shape[n:]
    if shell is None:
        out = np.zeros(shape, dtype=float)
    else:
        shell = np.asarray(shell, dtype=float)
        nd = max(len(shape), shell.ndim)
        shell = _bcast(shell, nd)
        shape = np.broadcast_shapes(shape + (1,) * (nd - len(shape)), shell.shape)
        out = np.array(np.broadcast_to(shell, shape))
        interior = _bcast(interior, nd)
    out[(slice(1, -1),) * n] = interior
    return out


def shell_mask(N: int, n: int) -> np.ndarray:
    m = np.ones((N + 2,) * n, dtype=bool)
    m[(slice(1, -1),) * n] = False
    return m


def integral_array(values: np.ndarray, h: float, n: int, boundary: bool = False) -> np.ndarray:
    """``h^n`` (or ``h^{n-1}`` on a face set) times the sum over grid axes."""
    w = h ** (n - 1 if boundary else n)
    return w * np.sum(values, axis=tuple(range(n)))


def boundary_l2_sq_array(shell: np.ndarray, h: float, n: int) -> np.ndarray:
    return sum(integral_array(face_array(shell, k, n) ** 2, h, n, boundary=True) for k in range(n))


def boundary_h1_sq_array(shell: np.ndarray, h: float, n: int) -> np.ndarray:
    out = boundary_l2_sq_array(shell, h, n)
    for i in range(n):
        face = np.take(shell, [0, -1], axis=i)
        for j in range(n):
            if j == i:
                continue
            dj = diff_array(face, j, h)
            dj = interior_array(dj, [l for l in range(n) if l not in (i, j)])
            out = out + integral_array(dj**2, h, n, boundary=True)
    return out


def h1_sq_array(a: np.ndarray, h: float, n: int) -> np.ndarray:
    out = integral_array(interior_array(a, range(n)) ** 2, h, n)
    for k in range(n):
        out = out + integral_array(dual_diff_array(a, k, h, n) ** 2, h, n)
    return out


def second_diffs_array(a: np.ndarray, h: float, n: int):
    """Yield ``(i, j, D_j D_i a)`` for all ordered pairs; ``i == j`` on primal."""
    for i in range(n):
        for j in range(n):
            if i == j:
                yield i, j, second_diff_array(a, i, h, n)
            else:
                q = diff_array(diff_array(a, i, h), j, h)
                yield i, j, interior_array(q, [l for l in range(n) if l not in (i, j)])


def h2_sq_array(a: np.ndarray, h: float, n: int) -> np.ndarray:
    out = h1_sq_array(a, h, n)
    for _, _, q in second_diffs_array(a, h, n):
        out = out + integral_array(q**2, h, n)
    return out


def dual_mask(mask: np.ndarray, k: int) -> np.ndarray:
    """Dual points along ``k`` with at least one neighbour in ``mask``."""
    widths = [(0, 0)] * mask.ndim
    widths[k] = (1, 1)
    p = np.pad(mask, widths, constant_values=False)
    return p[_along(p.ndim, k, slice(1, None))] | p[_along(p.ndim, k, slice(None, -1))]


def primal_mask(mask: np.ndarray, k: int) -> np.ndarray:
    """Primal points along ``k`` with at least one neighbouring dual point in ``mask``."""
    return mask[_along(mask.ndim, k, slice(1, None))] | mask[_along(mask.ndim, k, slice(None, -1))]


def masked_h2_sq_array(a: np.ndarray, h: float, n: int, mask: np.ndarray) -> np.ndarray:
    """Squared ``H^2`` norm on the subdomain given by a primal ``mask``.

    Derivatives are summed over the dual sets adjacent to the subdomain, so a
    full mask reproduces :func:`h2_sq_array`.
    """

    def masked(values, m):
        return integral_array(values**2 * _bcast(m, values.ndim), h, n)

    out = masked(interior_array(a, range(n)), mask)
    for k in range(n):
        out = out + masked(dual_diff_array(a, k, h, n), dual_mask(mask, k))
    for i, j, q in second_diffs_array(a, h, n):
        m = primal_mask(dual_mask(mask, i), i) if i == j else dual_mask(dual_mask(mask, i), j)
        out = out + masked(q, m)
    return out


def harmonic_extension_array(shell: np.ndarray, h: float, n: int, rtol: float = 1e-10) -> np.ndarray:
    """Minimal-H^1 extension of boundary values: solve ``(I - Lap) u = 0`` inside.

    ``shell`` is a closure array; only its face values matter.
    """
    shell = np.array(shell, dtype=float)
    mask = shell_mask(shell.shape[0] - 2, n)
    ext = np.where(_bcast(mask, shell.ndim), shell, 0.0)
    rhs = laplacian_array(ext, h, n)

    def apply(x):
        return x - laplacian_array(pad_array(x, n), h, n)

    x, _ = cg(apply, rhs, ndim=n, rtol=rtol)
    return pad_array(x, n, ext)


def hhalf_sq_array(shell: np.ndarray, h: float, n: int, rtol: float = 1e-10) -> np.ndarray:
    return h1_sq_array(harmonic_extension_array(shell, h, n, rtol), h, n)


# ---------------------------------------------------------------------------
# grid functions


class GridFunction:
    """Real values on one placement of a mesh, stored as an ``n``-d array."""

    __slots__ = ("mesh", "placement", "values")

    def __init__(self, mesh: Mesh, placement: Placement, values):
        values = np.asarray(values, dtype=float)
        shape = mesh.shape(placement)
        if values.shape != shape:
            if values.size != int(np.prod(shape)):
                raise PlacementError(
                    f"{values.size} values given for placement {placement} with {int(np.prod(shape))} points"
                )
            values = values.reshape(shape)
        self.mesh = mesh
        self.placement = placement
        self.values = values

    @classmethod
    def from_function(cls, mesh: Mesh, placement: Placement, fn: Callable[[np.ndarray], np.ndarray]):
        """Sample ``fn(x)`` where ``x`` has shape ``(n, *shape)``."""
        x = mesh.coords(placement)
        return cls(mesh, placement, np.broadcast_to(fn(x), x.shape[1:]))

    @classmethod
    def zeros(cls, mesh: Mesh, placement: Placement):
        return cls(mesh, placement, np.zeros(mesh.shape(placement)))

    @classmethod
    def constant(cls, mesh: Mesh, placement: Placement, c: float):
        return cls(mesh, placement, np.full(mesh.shape(placement), float(c)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __repr__(self):
        return f"GridFunction({self.mesh!r}, {self.placement}, shape={self.values.shape})"

    def _same(self, other):
        if isinstance(other, GridFunction):
            if other.mesh != self.mesh or other.placement != self.placement:
                raise PlacementError(f"cannot combine {self.placement} with {other.placement}")
            return other.values
        return other

    def _new(self, values):
        return GridFunction(self.mesh, self.placement, values)

    def __add__(self, other):
        return self._new(self.values + self._same(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.values - self._same(other))

    def __rsub__(self, other):
        return self._new(self._same(other) - self.values)

    def __mul__(self, other):
        return self._new(self.values * self._same(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._new(self.values / self._same(other))

    def __neg__(self):
        return self._new(-self.values)

    def __pow__(self, p):
        return self._new(self.values**p)

    def __abs__(self):
        return self._new(np.abs(self.values))

    def restrict(self, target: Placement) -> "GridFunction":
        """Drop closure points: ``"c"`` axes may become ``"p"`` or ``"b"``."""
        if target.n != self.placement.n:
            raise PlacementError("dimension mismatch")
        key = []
        for src, dst in zip(self.placement.axes, target.axes):
            if src == dst:
                key.append(slice(None))
            elif src == "c" and dst == "p":
                key.append(slice(1, -1))
            elif src == "c" and dst == "b":
                key.append([0, -1])
            else:
                raise PlacementError(f"cannot restrict {self.placement} to {target}")
        values = self.values
        for ax, k in enumerate(key):
            if isinstance(k, list):
                values = np.take(values, k, axis=ax)
            else:
                values = values[_along(values.ndim, ax, k)]
        return GridFunction(self.mesh, target, values)


def _restricted_axes(axes, keep):
    return tuple("p" if (a == "c" and j not in keep) else a for j, a in enumerate(axes))


def _half_shift(u: GridFunction, k: int, op, restrict: bool) -> GridFunction:
    axes = u.placement.axes
    if axes[k] not in _SHIFT:
        raise PlacementError(
            f"missing boundary extension along axis {k}: {u.placement} has no values outside the primal set"
        )
    new_axes = list(axes)
    new_axes[k] = _SHIFT[axes[k]]
    values = op(u.values)
    keep = {k} if restrict else set(range(u.mesh.n))
    if restrict:
        values = interior_array(values, [j for j, a in enumerate(axes) if a == "c" and j != k])
    return GridFunction(u.mesh, Placement(_restricted_axes(tuple(new_axes), keep)), values)


def diff(u: GridFunction, k: int, restrict: bool = True) -> GridFunction:
    """``D_k u``: forward half-shift minus backward half-shift over ``h``."""
    return _half_shift(u, k, lambda a: diff_array(a, k, u.mesh.h), restrict)


def avg(u: GridFunction, k: int, restrict: bool = True) -> GridFunction:
    """``A_k u``: mean of the two half-shifted neighbours."""
    return _half_shift(u, k, lambda a: avg_array(a, k), restrict)


def diff2(u: GridFunction, k: int, l: int) -> GridFunction:
    """``D_l D_k u``; ``k == l`` lands on the primal mesh, else on ``dual2(k, l)``."""
    if k == l:
        return diff(diff(u, k, restrict=False), k)
    first = diff(u, k, restrict=False)
    out = diff(first, l, restrict=False)
    return out.restrict(Placement(_restricted_axes(out.placement.axes, set())))


def trace(u: GridFunction, i: int) -> GridFunction:
    """Inward dual neighbour of each boundary point in direction ``i``."""
    if u.placement.axes[i] != "d":
        raise PlacementError(f"trace in direction {i} needs a dual axis, got {u.placement}")
    return GridFunction(u.mesh, u.placement.replace(i, "b"), np.take(u.values, [0, -1], axis=i))


def faces(u: GridFunction) -> list[GridFunction]:
    """The ``n`` face sets of a closure function."""
    if u.placement.kind != "closure":
        raise PlacementError(f"faces() needs a closure function, got {u.placement}")
    n = u.mesh.n
    return [u.restrict(Placement(tuple("b" if j == k else "p" for j in range(n)))) for k in range(n)]


def lift(u: GridFunction, boundary=0.0) -> GridFunction:
    """Closure function with ``u`` inside and ``boundary`` on the shell.

    ``boundary`` may be a scalar, a callable of coordinates or a closure
    :class:`GridFunction` whose shell is copied.
    """
    mesh = u.mesh
    if u.placement != mesh.primal:
        raise PlacementError(f"lift() needs a primal function, got {u.placement}")
    cp = mesh.closure_placement
    if isinstance(boundary, GridFunction):
        if boundary.placement != cp:
            raise PlacementError("boundary data must be a closure function")
        shell = boundary.values
    elif callable(boundary):
        shell = np.broadcast_to(boundary(mesh.coords(cp)), mesh.shape(cp))
    else:
        shell = np.full(mesh.shape(cp), float(boundary))
    return GridFunction(mesh, cp, pad_array(u.values, mesh.n, shell))


def integral(u: GridFunction) -> float:
    axes = u.placement.axes
    if "c" in axes:
        raise PlacementError("integrals are defined on primal, dual or face placements, not closures")
    return float(integral_array(u.values, u.mesh.h, u.mesh.n, boundary="b" in axes))


def boundary_integral(u) -> float:
    """Sum of face-set integrals; ``u`` is a closure function or a list of faces."""
    parts = faces(u) if isinstance(u, GridFunction) else list(u)
    for k, f in enumerate(parts):
        if f.placement != f.mesh.boundary(k):
            raise PlacementError(f"face {k} has placement {f.placement}")
    return float(sum(integral(f) for f in parts))


# ---------------------------------------------------------------------------
# norms

_NORMS = ("Lp", "W1p", "H2", "Linf", "BoundaryL2", "BoundaryH1", "Hhalf")


@dataclass(frozen=True)
class NormKind:
    name: str
    p: float = 2.0

    def __post_init__(self):
        if self.name not in _NORMS:
            raise ValueError(f"unknown norm {self.name!r}")
        if not (1.0 <= self.p < np.inf):
            raise ValueError(f"p must lie in [1, inf), got {self.p}")


def Lp(p: float = 2.0) -> NormKind:
    return NormKind("Lp", p)


def W1p(p: float = 2.0) -> NormKind:
    return NormKind("W1p", p)


H2 = NormKind("H2")
Linf = NormKind("Linf")
BoundaryL2 = NormKind("BoundaryL2")
BoundaryH1 = NormKind("BoundaryH1")
Hhalf = NormKind("Hhalf")


def _primal_values(u: GridFunction) -> np.ndarray:
    if u.placement == u.mesh.primal:
        return u.values
    if u.placement.kind == "closure":
        return u.values[(slice(1, -1),) * u.mesh.n]
    raise PlacementError(f"expected a primal or closure function, got {u.placement}")


def _closure(u: GridFunction, what: str) -> np.ndarray:
    if u.placement.kind != "closure":
        raise PlacementError(f"{what} needs boundary values (a closure function), got {u.placement}")
    return u.values


def _shell_of(u) -> tuple[Mesh, np.ndarray]:
    if isinstance(u, GridFunction):
        return u.mesh, _closure(u, "a boundary norm")
    parts = list(u)
    mesh = parts[0].mesh
    shell = np.zeros(mesh.shape(mesh.closure_placement))
    n = mesh.n
    for k, f in enumerate(parts):
        if f.placement != mesh.boundary(k):
            raise PlacementError(f"face {k} has placement {f.placement}")
        key = [slice(1, -1)] * n
        key[k] = [0, -1]
        shell[tuple(key)] = f.values
    return mesh, shell


def norm(u, kind: NormKind) -> float:
    name, p = kind.name, kind.p
    if name == "Lp":
        m = u.mesh
        return float(integral_array(np.abs(_primal_values(u)) ** p, m.h, m.n)) ** (1.0 / p)
    if name == "Linf":
        return float(np.max(np.abs(_primal_values(u))))
    if name == "W1p":
        a = _closure(u, "W1p")
        m = u.mesh
        total = integral_array(np.abs(interior_array(a, range(m.n))) ** p, m.h, m.n)
        for k in range(m.n):
            total = total + integral_array(np.abs(dual_diff_array(a, k, m.h, m.n)) ** p, m.h, m.n)
        return float(total) ** (1.0 / p)
    if name == "H2":
        a = _closure(u, "H2")
        m = u.mesh
        total = h1_sq_array(a, m.h, m.n)
        for i in range(m.n):
            for j in range(m.n):
                total = total + integral(diff2(u, i, j) ** 2)
        return float(np.sqrt(total))
    mesh, shell = _shell_of(u)
    h, n = mesh.h, mesh.n
    if name == "BoundaryL2":
        return float(np.sqrt(boundary_l2_sq_array(shell, h, n)))
    if name == "BoundaryH1":
        if n > 1 and not isinstance(u, GridFunction):
            raise PlacementError("BoundaryH1 needs edge values; pass a closure function")
        return float(np.sqrt(boundary_h1_sq_array(shell, h, n)))
    return float(np.sqrt(hhalf_sq_array(shell, h, n)))


# ---------------------------------------------------------------------------
# exact identities


def _rel(residual, scale):
    residual = abs(residual)
    if residual == 0.0:
        return 0.0
    return residual / scale if scale > 0 else np.inf


def _split_closure_along(u: GridFunction, k: int):
    """Accept ``u`` on the closure or on ``primal + boundary(k)``."""
    n = u.mesh.n
    along = Placement(tuple("c" if j == k else "p" for j in range(n)))
    if u.placement.kind == "closure":
        u = u.restrict(along)
    if u.placement != along:
        raise PlacementError(f"expected a function on primal + boundary({k}), got {u.placement}")
    return u


def check_ibp(u: GridFunction, v: GridFunction, k: int, variant: str = "difference") -> float:
    """Relative residual of summation by parts in direction ``k``.

    ``u`` lives on the primal mesh plus ``boundary(k)``, ``v`` on ``dual(k)``.
    """
    mesh = u.mesh
    u = _split_closure_along(u, k)
    if v.placement != mesh.dual(k):
        raise PlacementError(f"v must live on dual({k}), got {v.placement}")
    u_in = u.restrict(mesh.primal)
    u_bd = u.restrict(mesh.boundary(k))
    tv = trace(v, k)
    nu = mesh.normals(k)
    if variant == "difference":
        lhs_f = u_in * diff(v, k)
        vol_f = v * diff(u, k)
        bd_f = u_bd * tv * nu
        lhs = integral(lhs_f)
        rhs = -integral(vol_f) + integral(bd_f)
    elif variant == "average":
        lhs_f = u_in * avg(v, k)
        vol_f = v * avg(u, k)
        bd_f = u_bd * tv * (mesh.h / 2)
        lhs = integral(lhs_f)
        rhs = integral(vol_f) - integral(bd_f)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    scale = integral(abs(lhs_f)) + integral(abs(vol_f)) + integral(abs(bd_f))
    return _rel(lhs - rhs, scale)


def _pointwise_rel(lhs: np.ndarray, *terms: np.ndarray) -> float:
    res = float(np.max(np.abs(lhs - sum(terms))))
    scale = max(float(np.max(np.abs(t))) for t in (lhs,) + terms)
    return _rel(res, scale)


def check_product_rules(u: GridFunction, v: GridFunction, k: int) -> dict[str, float]:
    """Relative residuals of the three pointwise product identities along ``k``."""
    if u.placement.kind != "closure" or v.placement.kind != "closure":
        raise PlacementError("product rules need closure functions")
    h = u.mesh.h
    uv = u * v
    Du, Dv, Au, Av = diff(u, k), diff(v, k), avg(u, k), avg(v, k)
    difference = _pointwise_rel(diff(uv, k).values, (Du * Av).values, (Au * Dv).values)
    average = _pointwise_rel(avg(uv, k).values, (Au * Av).values, (h**2 / 4 * Du * Dv).values)
    AAu = avg(avg(u, k, restrict=False), k)
    DDu = diff2(u, k, k)
    average_difference = _pointwise_rel(_primal_values(u), AAu.values, -(h**2 / 4) * DDu.values)
    return {"difference": difference, "average": average, "average_difference": average_difference}


def average_square_gap(u: GridFunction, k: int) -> GridFunction:
    """``A_k(u^2) - (A_k u)^2``, which is ``h^2/4 (D_k u)^2 >= 0``."""
    return avg(u * u, k) - avg(u, k) ** 2
