"""Interval meshes, Lagrange elements, and primal/dual function spaces.

All geometry in this package is one dimensional: a mesh is a uniform
partition of ``[0, length]``, elements are continuous Lagrange elements with
equispaced nodes, and the dual basis of every space is point evaluation at
those nodes.  Spaces are value objects; taking the dual flips a flag and
taking it twice gives back a space that compares equal to the original.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as _dc_replace
from functools import lru_cache

import numpy as np

from .errors import (
    InvalidArgumentError,
    OutOfDomainError,
    PrimalRequiredError,
    UnsupportedElementError,
)

__all__ = [
    "Mesh",
    "Element",
    "Space",
    "DofMap",
    "P1",
    "P2",
    "make_interval_mesh",
    "function_space",
    "dual",
    "dof_map",
    "node_coordinates",
    "tabulate_basis",
]


@dataclass(frozen=True, slots=True)
class Mesh:
    """Uniform partition of the interval ``[0, length]`` into ``n_cells`` cells."""

    n_cells: int
    length: float

    def __post_init__(self) -> None:
        if not isinstance(self.n_cells, int) or self.n_cells < 1:
            raise InvalidArgumentError(f"n_cells must be a positive integer, got {self.n_cells!r}")
        length = float(self.length)
        if not length > 0.0:
            raise InvalidArgumentError(f"length must be positive, got {self.length!r}")
        object.__setattr__(self, "length", length)

    @property
    def cell_size(self) -> float:
        return self.length / self.n_cells

    @property
    def vertices(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n_cells + 1)

    def cell_containing(self, x: float) -> int:
        """Index of the cell containing ``x`` (right endpoint goes to the last cell)."""
        if x < 0.0 or x > self.length:
            raise OutOfDomainError(f"x = {x} outside [0, {self.length}]")
        return min(int(x / self.cell_size), self.n_cells - 1)


@dataclass(frozen=True, slots=True)
class Element:
    """Continuous Lagrange element with equispaced nodes on the reference cell."""

    family: str = "Lagrange"
    degree: int = 1

    def __post_init__(self) -> None:
        if self.family != "Lagrange":
            raise UnsupportedElementError(f"unsupported element family {self.family!r}")
        if not isinstance(self.degree, int) or self.degree < 1:
            raise UnsupportedElementError(f"Lagrange degree must be an integer >= 1, got {self.degree!r}")


P1 = Element("Lagrange", 1)
P2 = Element("Lagrange", 2)


@dataclass(frozen=True, slots=True)
class Space:
    """A finite element space, or the dual of one.

    The optional ``name`` only affects printing; equality is structural over
    mesh, element and primality.
    """

    mesh: Mesh
    element: Element
    is_dual: bool = False
    name: str | None = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.mesh.n_cells * self.element.degree + 1

    @property
    def dual(self) -> Space:
        """The dual space; an involution, so ``S.dual.dual == S``."""
        return _dc_replace(self, is_dual=not self.is_dual)

    @property
    def primal(self) -> Space:
        """The space itself if primal, otherwise its primal counterpart."""
        return self.dual if self.is_dual else self

    @property
    def label(self) -> str:
        base = self.name if self.name is not None else f"P{self.element.degree}({self.mesh.n_cells})"
        return base + "*" if self.is_dual else base

    def __str__(self) -> str:
        return self.label


def make_interval_mesh(n_cells: int, length: float) -> Mesh:
    """Uniform mesh of ``[0, length]`` with ``n_cells + 1`` vertices."""
    return Mesh(n_cells, length)


def function_space(mesh: Mesh, element: Element, name: str | None = None) -> Space:
    """Primal space of continuous piecewise polynomials on ``mesh``."""
    return Space(mesh, element, is_dual=False, name=name)


def dual(space: Space) -> Space:
    return space.dual


@lru_cache(maxsize=None)
def _equispaced_nodes(degree: int) -> tuple[float, ...]:
    return tuple(i / degree for i in range(degree + 1))


def lagrange_shape_values(degree: int, t: float) -> np.ndarray:
    """Values of the ``degree + 1`` reference shape functions at ``t`` in [0, 1]."""
    nodes = _equispaced_nodes(degree)
    out = np.empty(degree + 1)
    for i, ti in enumerate(nodes):
        v = 1.0
        for j, tj in enumerate(nodes):
            if j != i:
                v *= (t - tj) / (ti - tj)
        out[i] = v
    return out


@dataclass(frozen=True)
class DofMap:
    """Cell-to-global index map and the global node coordinates of a space."""

    cell_dofs: tuple[tuple[int, ...], ...]
    node_coords: np.ndarray


@lru_cache(maxsize=None)
def dof_map(space: Space) -> DofMap:
    d = space.element.degree
    cells = tuple(tuple(c * d + j for j in range(d + 1)) for c in range(space.mesh.n_cells))
    coords = np.linspace(0.0, space.mesh.length, space.dim)
    coords.setflags(write=False)
    return DofMap(cells, coords)


def node_coordinates(space: Space) -> np.ndarray:
    """Coordinates of the nodes defining the (dual) basis, left to right."""
    return dof_map(space).node_coords


def tabulate_basis(space: Space, x: float) -> np.ndarray:
    """Values of every global basis function of a primal space at ``x``."""
    if space.is_dual:
        raise PrimalRequiredError("basis tabulation is defined on primal spaces")
    cell = space.mesh.cell_containing(x)
    h = space.mesh.cell_size
    t = (x - cell * h) / h
    shapes = lagrange_shape_values(space.element.degree, t)
    out = np.zeros(space.dim)
    out[list(dof_map(space).cell_dofs[cell])] = shapes
    return out
