"""
Staggered meshes on the unit hypercube.

Every grid function lives on a *placement*: a per-axis choice of one of four
one-dimensional point sets, all measured in units of the step ``h = 1/(N+1)``.

============  ===========================  ==================
axis kind     coordinates                  integer index range
============  ===========================  ==================
``"p"``       ``i h``                      ``1 .. N``
``"d"``       ``(j + 1/2) h``              ``0 .. N``
``"c"``       ``i h`` (with both ends)     ``0 .. N+1``
``"b"``       ``0`` and ``1``              ``0, N+1``
============  ===========================  ==================

The primal mesh is all-``"p"``, the dual mesh in direction ``k`` has a ``"d"``
axis at position ``k``, and the boundary face set in direction ``k`` has a
``"b"`` axis at ``k``.  The ``"c"`` kind is used for functions that also carry
values on the boundary (including edges and corners), which the difference
and average operators need at the outermost dual points.

Points are always enumerated in row-major lexicographic order of the integer
multi-index.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

AXIS_KINDS = ("p", "d", "c", "b")


class MeshError(ValueError):
    """Invalid mesh parameters, placements or indices."""


@dataclass(frozen=True)
class Placement:
    """Per-axis kinds identifying where the values of a grid function live."""

    axes: tuple[str, ...]

    def __post_init__(self):
        if not self.axes or any(a not in AXIS_KINDS for a in self.axes):
            raise MeshError(f"invalid placement axes {self.axes!r}")
        if self.axes.count("b") > 1:
            raise MeshError("a placement can sit on at most one boundary face set")

    @classmethod
    def primal(cls, n: int) -> "Placement":
        return cls(("p",) * n)

    @classmethod
    def closure(cls, n: int) -> "Placement":
        return cls(("c",) * n)

    @classmethod
    def dual(cls, n: int, k: int) -> "Placement":
        return cls._with(n, {k: "d"})

    @classmethod
    def dual2(cls, n: int, k: int, l: int) -> "Placement":
        if k == l:
            return cls.primal(n)
        return cls._with(n, {k: "d", l: "d"})

    @classmethod
    def boundary(cls, n: int, k: int) -> "Placement":
        return cls._with(n, {k: "b"})

    @classmethod
    def _with(cls, n, kinds):
        axes = ["p"] * n
        for k, kind in kinds.items():
            if not 0 <= k < n:
                raise MeshError(f"direction {k} out of range for n={n}")
            axes[k] = kind
        return cls(tuple(axes))

    @property
    def n(self) -> int:
        return len(self.axes)

    def replace(self, k: int, kind: str) -> "Placement":
        axes = list(self.axes)
        axes[k] = kind
        return Placement(tuple(axes))

    @property
    def kind(self) -> str:
        """One of primal, dual, dual2, boundary, closure or mixed."""
        a = self.axes
        if all(x == "p" for x in a):
            return "primal"
        if all(x == "c" for x in a):
            return "closure"
        rest = [x for x in a if x != "p"]
        if rest == ["b"]:
            return "boundary"
        if rest == ["d"]:
            return "dual"
        if rest == ["d", "d"]:
            return "dual2"
        return "mixed"

    @property
    def directions(self) -> tuple[int, ...]:
        """Axes that are half-shifted or on a boundary face."""
        return tuple(k for k, x in enumerate(self.axes) if x in ("d", "b"))

    def __str__(self):
        kind = self.kind
        if kind in ("dual", "dual2", "boundary"):
            return f"{kind}{list(self.directions)}"
        if kind == "mixed":
            return "mixed(" + "".join(self.axes) + ")"
        return kind


@dataclass(frozen=True)
class MeshSpec:
    n: int
    N: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or not 1 <= self.n <= 3:
            raise MeshError(f"n must be 1, 2 or 3 (got {self.n!r})")
        if not isinstance(self.N, (int, np.integer)) or self.N < 2:
            raise MeshError(f"N must be an integer >= 2 (got {self.N!r})")

    @property
    def h(self) -> float:
        return 1.0 / (self.N + 1)


class Mesh:
    """Tensor-product staggered mesh of (0,1)^n. Immutable."""

    def __init__(self, spec: MeshSpec):
        self.spec = spec
        self.n = int(spec.n)
        self.N = int(spec.N)
        self.h = spec.h

    def __repr__(self):
        return f"Mesh(n={self.n}, N={self.N})"

    def __eq__(self, other):
        return isinstance(other, Mesh) and other.spec == self.spec

    def __hash__(self):
        return hash(self.spec)

    # common placements
    @cached_property
    def primal(self) -> Placement:
        return Placement.primal(self.n)

    @cached_property
    def closure_placement(self) -> Placement:
        return Placement.closure(self.n)

    def dual(self, k: int) -> Placement:
        return Placement.dual(self.n, k)

    def dual2(self, k: int, l: int) -> Placement:
        return Placement.dual2(self.n, k, l)

    def boundary(self, k: int) -> Placement:
        return Placement.boundary(self.n, k)

    def _check(self, placement):
        if placement.n != self.n:
            raise MeshError(f"placement {placement} has dimension {placement.n}, mesh has {self.n}")

    def axis_indices(self, kind: str) -> np.ndarray:
        N = self.N
        return {
            "p": np.arange(1, N + 1),
            "d": np.arange(0, N + 1),
            "c": np.arange(0, N + 2),
            "b": np.array([0, N + 1]),
        }[kind]

    def axis_coords(self, kind: str) -> np.ndarray:
        idx = self.axis_indices(kind).astype(float)
        if kind == "d":
            return (idx + 0.5) * self.h
        if kind == "b":
            return np.array([0.0, 1.0])
        return idx * self.h

    def shape(self, placement: Placement) -> tuple[int, ...]:
        self._check(placement)
        return tuple(len(self.axis_indices(a)) for a in placement.axes)

    def size(self, placement: Placement) -> int:
        return int(np.prod(self.shape(placement)))

    def coords(self, placement: Placement) -> np.ndarray:
        """Coordinates as an array of shape ``(n, *shape)``."""
        self._check(placement)
        axes = [self.axis_coords(a) for a in placement.axes]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def points(self, placement: Placement) -> np.ndarray:
        """Coordinates as ``(size, n)`` rows in enumeration order."""
        return self.coords(placement).reshape(self.n, -1).T

    def normals(self, k: int) -> np.ndarray:
        """Outward normal component on the face set ``boundary(k)``."""
        shape = self.shape(self.boundary(k))
        nu = np.ones(shape)
        nu[(slice(None),) * k + (0,)] = -1.0
        return nu

    def locate(self, placement: Placement, multi_index) -> int:
        """Flat position of an integer multi-index within a placement."""
        self._check(placement)
        multi_index = tuple(int(i) for i in multi_index)
        if len(multi_index) != self.n:
            raise MeshError(f"expected {self.n} indices, got {len(multi_index)}")
        pos = []
        for i, kind in zip(multi_index, placement.axes):
            idx = self.axis_indices(kind)
            hit = np.flatnonzero(idx == i)
            if hit.size == 0:
                raise MeshError(
                    f"index {i} out of range for axis kind {kind!r} (valid {idx[0]}..{idx[-1]})"
                )
            pos.append(int(hit[0]))
        return int(np.ravel_multi_index(pos, self.shape(placement)))

    def unlocate(self, placement: Placement, flat: int) -> tuple[int, ...]:
        """Inverse of :meth:`locate`."""
        size = self.size(placement)
        if not 0 <= int(flat) < size:
            raise MeshError(f"flat index {flat} out of range 0..{size - 1}")
        pos = np.unravel_index(int(flat), self.shape(placement))
        return tuple(int(self.axis_indices(kind)[p]) for p, kind in zip(pos, placement.axes))


def build_mesh(spec: MeshSpec | None = None, *, n: int | None = None, N: int | None = None) -> Mesh:
    if spec is None:
        spec = MeshSpec(n, N)
    return Mesh(spec)


@dataclass(frozen=True)
class GammaPlus:
    """Observed part of the boundary, split by face direction.

    ``masks[k]`` is a boolean array shaped like ``boundary(k)``.
    """

    mesh: Mesh
    x_star: tuple[float, ...]
    masks: tuple[np.ndarray, ...]

    def members(self, k: int) -> np.ndarray:
        """Flat indices (within ``boundary(k)``) of the observed points."""
        return np.flatnonzero(self.masks[k].ravel())

    def count(self, k: int | None = None) -> int:
        if k is None:
            return sum(int(m.sum()) for m in self.masks)
        return int(self.masks[k].sum())

    def points(self, k: int) -> np.ndarray:
        return self.mesh.points(self.mesh.boundary(k))[self.members(k)]

    def restrict(self, values: np.ndarray, k: int) -> np.ndarray:
        """Select observed points of face-set values; trailing batch axes kept."""
        n = self.mesh.n
        flat = values.reshape((-1,) + values.shape[n:])
        return flat[self.members(k)]


def gamma_plus(mesh: Mesh, x_star) -> GammaPlus:
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if x_star.size != mesh.n:
        raise MeshError(f"x_star must have {mesh.n} components")
    if np.all((x_star >= 0.0) & (x_star <= 1.0)):
        raise MeshError(f"x_star {tuple(x_star)} lies inside the closed unit cube")
    masks = []
    for k in range(mesh.n):
        X = mesh.coords(mesh.boundary(k))
        masks.append((X[k] - x_star[k]) * mesh.normals(k) >= 0.0)
    return GammaPlus(mesh, tuple(float(c) for c in x_star), tuple(masks))
