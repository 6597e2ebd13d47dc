"""Structured triangular meshes of axis-aligned rectangles.

Every grid cell ``(i, j)`` is split along its lower-left to upper-right
diagonal into two counter-clockwise triangles::

    d ---- c
    |    / |
    |  /   |
    a ---- b        lower = (a, b, c), upper = (a, c, d)

Nodes are numbered row by row (``i + j*(nx+1)``) and triangles cell by cell
(``2*(i + j*nx)`` for the lower one, ``+1`` for the upper one).  Because the
split direction never changes, a mesh with ``m*nx`` cells per side is nested
in the one with ``nx`` cells: every fine triangle lies inside exactly one
coarse triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidDomainError, InvalidRegionError

Rectangle = tuple[float, float, float, float]

_REGION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation of ``domain = (x0, y0, x1, y1)``.

    Attributes
    ----------
    nodes : (N, 2) float array
    triangles : (M, 3) int array, counter-clockwise
    boundary_edges : (B, 2) int array, oriented so the domain lies to the left
    boundary_normals : (B, 2) outward unit normals
    interior_faces : (F, 2) int array, oriented counter-clockwise in the left triangle
    face_left, face_right : (F,) triangle indices on either side of each face
    face_length : (F,) face lengths
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    interior_faces: np.ndarray
    face_left: np.ndarray
    face_right: np.ndarray
    face_length: np.ndarray
    domain: Rectangle
    nx: int
    ny: int
    _areas: np.ndarray = field(repr=False)
    _grads: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def areas(self) -> np.ndarray:
        return self._areas

    @property
    def basis_gradients(self) -> np.ndarray:
        """(M, 3, 2) constant gradients of the barycentric basis on each triangle."""
        return self._grads

    @property
    def barycenters(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @property
    def boundary_lengths(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.hypot(*(p[:, 1] - p[:, 0]).T)

    @property
    def cell_size(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.domain
        return (x1 - x0) / self.nx, (y1 - y0) / self.ny

    @property
    def h(self) -> float:
        """Mesh size: the longest edge (a cell diagonal)."""
        return float(np.hypot(*self.cell_size))

    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return np.linalg.norm(p[:, [1, 2, 0]] - p, axis=2)

    def same_as(self, other: "Mesh") -> bool:
        return self is other or (
            self.nx == other.nx and self.ny == other.ny and self.domain == other.domain
        )


def build_structured_mesh(domain: Sequence[float], nx: int, ny: int) -> Mesh:
    """Triangulate the rectangle ``domain = (x0, y0, x1, y1)`` with ``2*nx*ny`` triangles."""
    x0, y0, x1, y1 = (float(v) for v in domain)
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidDomainError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    if not all(np.isfinite([x0, y0, x1, y1])) or not (x1 > x0 and y1 > y0):
        raise InvalidDomainError(f"degenerate rectangle {(x0, y0, x1, y1)}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    a = i + j * (nx + 1)
    b = a + 1
    c = b + nx + 1
    d = a + nx + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    areas, grads = _geometry(nodes, triangles)
    bedges, bnormals, faces, left, right, flen = _connectivity(nodes, triangles)
    return Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=bedges,
        boundary_normals=bnormals,
        interior_faces=faces,
        face_left=left,
        face_right=right,
        face_length=flen,
        domain=(x0, y0, x1, y1),
        nx=nx,
        ny=ny,
        _areas=areas,
        _grads=grads,
    )


def _geometry(nodes, triangles):
    p = nodes[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    areas = 0.5 * det
    # grad(phi_i) = rot90(opposite edge) / (2 area), opposite edge taken counter-clockwise
    opp = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    grads = np.stack([-opp[..., 1], opp[..., 0]], axis=-1) / det[:, None, None]
    return areas, grads


def _connectivity(nodes, triangles):
    n_tri = len(triangles)
    local = np.array([[0, 1], [1, 2], [2, 0]])
    directed = triangles[:, local].reshape(-1, 2)
    owner = np.repeat(np.arange(n_tri), 3)
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(
        key[:, 0] * len(nodes) + key[:, 1], return_inverse=True, return_counts=True
    )
    inverse = inverse.ravel()

    once = counts[inverse] == 1
    bedges = directed[once]
    t = nodes[bedges[:, 1]] - nodes[bedges[:, 0]]
    t /= np.hypot(*t.T)[:, None]
    bnormals = np.column_stack([t[:, 1], -t[:, 0]])

    twice = np.flatnonzero(counts[inverse] == 2)
    # pair the two half-edges of each interior face; first occurrence is "left"
    order = twice[np.argsort(inverse[twice], kind="stable")]
    first, second = order[0::2], order[1::2]
    faces = directed[first]
    left, right = owner[first], owner[second]
    flen = np.hypot(*(nodes[faces[:, 1]] - nodes[faces[:, 0]]).T)
    return bedges, bnormals, faces, left, right, flen


def element_geometry(mesh: Mesh, t: int) -> tuple[float, np.ndarray]:
    """Area and the three barycentric-basis gradients of triangle ``t``."""
    return float(mesh.areas[t]), mesh.basis_gradients[t].copy()


def _as_rectangles(region) -> list[Rectangle]:
    if region is None:
        return []
    region = list(region)
    if region and np.isscalar(region[0]):
        region = [region]
    rects = []
    for r in region:
        r = tuple(float(v) for v in r)
        if len(r) != 4 or not (r[2] >= r[0] and r[3] >= r[1]):
            raise InvalidRegionError(f"malformed rectangle {r}")
        rects.append(r)
    return rects


def locate_region_elements(mesh: Mesh, region: Iterable) -> np.ndarray:
    """Sorted indices of triangles whose barycenter lies in a union of rectangles.

    ``region`` is a single ``(x0, y0, x1, y1)`` tuple or a list of them;
    rectangles are closed.
    """
    rects = _as_rectangles(region)
    x0, y0, x1, y1 = mesh.domain
    tol = _REGION_TOL * max(x1 - x0, y1 - y0)
    inside = np.zeros(mesh.n_triangles, dtype=bool)
    bc = mesh.barycenters
    for r in rects:
        if r[0] < x0 - tol or r[1] < y0 - tol or r[2] > x1 + tol or r[3] > y1 + tol:
            raise InvalidRegionError(f"rectangle {r} is not inside the domain {mesh.domain}")
        inside |= (
            (bc[:, 0] >= r[0] - tol)
            & (bc[:, 0] <= r[2] + tol)
            & (bc[:, 1] >= r[1] - tol)
            & (bc[:, 1] <= r[3] + tol)
        )
    return np.flatnonzero(inside)


def locate_points(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Index of the triangle containing each point (points on shared edges resolve arbitrarily)."""
    x0, y0, _, _ = mesh.domain
    hx, hy = mesh.cell_size
    pts = np.atleast_2d(points)
    u = (pts[:, 0] - x0) / hx
    v = (pts[:, 1] - y0) / hy
    i = np.clip(np.floor(u).astype(np.int64), 0, mesh.nx - 1)
    j = np.clip(np.floor(v).astype(np.int64), 0, mesh.ny - 1)
    upper = (v - j) > (u - i)
    return 2 * (i + j * mesh.nx) + upper


def parent_triangles(fine: Mesh, coarse: Mesh) -> np.ndarray:
    """For nested structured meshes, the coarse triangle containing each fine triangle."""
    if fine.domain != coarse.domain or fine.nx % coarse.nx or fine.ny % coarse.ny:
        raise InvalidDomainError(
            f"mesh {fine.nx}x{fine.ny} is not nested in {coarse.nx}x{coarse.ny}"
        )
    return locate_points(coarse, fine.barycenters)
