"""Structured quadrilateral grids and boundary-condition bookkeeping."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, InvalidConfig


def scatter_add(target: np.ndarray, index, values) -> None:
    """In-place ``target[index] += values`` with repeated indices accumulated.

    Values are broadcast against ``index`` explicitly; ``np.add.at`` with
    broadcast operands is unreliable on some numpy releases.
    """
    index = np.asarray(index)
    vals = np.broadcast_to(np.asarray(values, dtype=float), index.shape)
    target += np.bincount(index.ravel(), weights=vals.ravel(), minlength=target.size)


@dataclass(frozen=True)
class Grid2D:
    """Uniform nx-by-ny grid of bilinear quads covering [0, lx] x [0, ly].

    Nodes are numbered x-fastest: node (i, j) -> j*(nx+1) + i.
    Elements likewise: element (i, j) -> j*nx + i, with counterclockwise
    connectivity (i, j), (i+1, j), (i+1, j+1), (i, j+1).
    """

    nx: int
    ny: int
    lx: float
    ly: float
    nodes: np.ndarray = field(repr=False)  # (n_nodes, 2)
    elements: np.ndarray = field(repr=False)  # (n_elem, 4)

    @property
    def n_elem(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def element_area(self) -> np.ndarray:
        return np.full(self.n_elem, self.dx * self.dy)

    @property
    def tolerance(self) -> float:
        return 1e-9 * max(self.lx, self.ly)

    def element_dofs(self) -> np.ndarray:
        """(n_elem, 8) displacement DOFs ordered [u0x, u0y, u1x, u1y, ...]."""
        e = self.elements
        return np.stack([2 * e, 2 * e + 1], axis=-1).reshape(self.n_elem, 8)


def build_grid(nx: int, ny: int, lx: float, ly: float) -> Grid2D:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgument(f"element counts must be integers >= 1, got nx={nx}, ny={ny}")
    if not (lx > 0 and ly > 0):
        raise InvalidArgument(f"domain size must be positive, got lx={lx}, ly={ly}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return Grid2D(nx, ny, float(lx), float(ly), nodes, elements)


def element_centers(grid: Grid2D) -> np.ndarray:
    i, j = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny))
    return np.column_stack([((i + 0.5) * grid.dx).ravel(), ((j + 0.5) * grid.dy).ravel()])


@dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned box; degenerate boxes select lines or single points."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise InvalidArgument(f"inverted region box {self}")


def select_nodes(grid: Grid2D, region: RegionSpec, warn: bool = True) -> np.ndarray:
    tol = grid.tolerance
    x, y = grid.nodes[:, 0], grid.nodes[:, 1]
    mask = (
        (x >= region.xmin - tol)
        & (x <= region.xmax + tol)
        & (y >= region.ymin - tol)
        & (y <= region.ymax + tol)
    )
    idx = np.flatnonzero(mask)
    if idx.size == 0 and warn:
        warnings.warn(f"region {region} selects no nodes", stacklevel=2)
    return idx


def tributary_weights(grid: Grid2D, nodes: np.ndarray) -> np.ndarray:
    """Lumped edge-length weights for distributing a line load over ``nodes``.

    Nodes must lie on a common horizontal or vertical line. A single node gets
    weight 1 (point load semantics).
    """
    if nodes.size <= 1:
        return np.ones(nodes.size)
    pts = grid.nodes[nodes]
    tol = grid.tolerance
    if np.ptp(pts[:, 1]) <= tol:
        coord = pts[:, 0]
    elif np.ptp(pts[:, 0]) <= tol:
        coord = pts[:, 1]
    else:
        raise InvalidConfig("distributed loads need a region that selects a straight line of nodes")
    order = np.argsort(coord)
    c = coord[order]
    seg = np.diff(c)
    w_sorted = np.zeros_like(c)
    w_sorted[:-1] += seg / 2
    w_sorted[1:] += seg / 2
    w = np.empty_like(w_sorted)
    w[order] = w_sorted
    return w


@dataclass
class BoundaryConditions:
    """Nodal boundary data for the coupled thermal and structural problems.

    Displacement DOFs are indexed 2*node + axis. ``forces`` and ``heat`` are
    full-length nodal load vectors; body loads are stored separately because
    they are integrated per element.
    """

    n_nodes: int
    fixed_dofs: dict[int, float] = field(default_factory=dict)
    forces: np.ndarray | None = None
    fixed_temps: dict[int, float] = field(default_factory=dict)
    heat: np.ndarray | None = None
    body_force: tuple[float, float] = (0.0, 0.0)
    heat_source: float = 0.0

    def __post_init__(self):
        if self.forces is None:
            self.forces = np.zeros(2 * self.n_nodes)
        if self.heat is None:
            self.heat = np.zeros(self.n_nodes)

    @classmethod
    def empty(cls, grid: Grid2D) -> "BoundaryConditions":
        return cls(grid.n_nodes)

    @property
    def thermal_active(self) -> bool:
        return bool(self.fixed_temps)

    def fix(self, nodes, axes: str = "xy", values=(0.0, 0.0)) -> None:
        for n in np.atleast_1d(nodes):
            for a, name in enumerate("xy"):
                if name in axes:
                    self.fixed_dofs[int(2 * n + a)] = float(values[a])
        self.check()

    def add_force(self, nodes, value, weights=None) -> None:
        nodes = np.atleast_1d(nodes)
        w = np.ones(nodes.size) if weights is None else np.asarray(weights)
        scatter_add(self.forces, 2 * nodes, w * value[0])
        scatter_add(self.forces, 2 * nodes + 1, w * value[1])
        self.check()

    def fix_temperature(self, nodes, value: float) -> None:
        for n in np.atleast_1d(nodes):
            self.fixed_temps[int(n)] = float(value)
        self.check()

    def add_heat(self, nodes, value: float, weights=None) -> None:
        nodes = np.atleast_1d(nodes)
        w = np.ones(nodes.size) if weights is None else np.asarray(weights)
        scatter_add(self.heat, nodes, w * value)
        self.check()

    def check(self) -> None:
        for dof in self.fixed_dofs:
            if self.forces[dof] != 0.0:
                raise InvalidConfig(f"displacement DOF {dof} (node {dof // 2}) is both fixed and loaded")
        for node in self.fixed_temps:
            if self.heat[node] != 0.0:
                raise InvalidConfig(f"node {node} has both a fixed temperature and a heat load")
