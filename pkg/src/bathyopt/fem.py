"""P1/P0 fields, closed-form assembly of the Helmholtz forms, norms and discrete TV.

The sesquilinear form is

    a(q; psi, phi) = int (1+q) grad psi . grad conj(phi) - k0^2 int psi conj(phi)
                     - i k0 int_{boundary} psi conj(phi)

and for real P1 test functions the matrix ``A[i, j] = a(q; phi_j, phi_i)`` is
complex symmetric (``A == A.T``), not Hermitian.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConstraintViolationError,
    IncompatibleFieldError,
    InvalidDirectionError,
)
from .mesh import Mesh

# slack on the box bounds so that e.g. q = -0.9 passes 1 + q >= 0.1
BOX_TOL = 1e-12

# 2-point Gauss rule on [0, 1]
_GAUSS2_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS2_W = np.array([0.5, 0.5])


@dataclass(frozen=True, eq=False)
class P1Field:
    """Continuous piecewise-linear complex field, one value per node."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.mesh.n_nodes,):
            raise IncompatibleFieldError(
                f"P1 field needs {self.mesh.n_nodes} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("P1 field has non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "P1Field":
        return cls(mesh, np.zeros(mesh.n_nodes, dtype=complex))

    @classmethod
    def interpolate(cls, mesh: Mesh, func: Callable[[np.ndarray], np.ndarray]) -> "P1Field":
        return cls(mesh, func(mesh.nodes))


@dataclass(frozen=True, eq=False)
class P0Field:
    """Piecewise-constant real field, one value per triangle."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 0:
            v = np.full(self.mesh.n_triangles, float(v))
        if v.shape != (self.mesh.n_triangles,):
            raise IncompatibleFieldError(
                f"P0 field needs {self.mesh.n_triangles} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("P0 field has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "P0Field":
        return cls(mesh, np.zeros(mesh.n_triangles))

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[np.ndarray], np.ndarray]) -> "P0Field":
        """Sample ``func`` at triangle barycenters."""
        return cls(mesh, func(mesh.barycenters))

    def with_values(self, values) -> "P0Field":
        return P0Field(self.mesh, values)


@dataclass(frozen=True)
class AdmissibleBox:
    """Pointwise bounds ``alpha - 1 <= q <= lambda_max``.

    ``support_mask`` lists triangles where q must vanish.  ``kappa`` is a TV
    threshold that is only monitored, never enforced.
    """

    alpha: float = 0.1
    lambda_max: float = 2.0
    support_mask: Optional[tuple[int, ...]] = None
    kappa: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.alpha - 1 > self.lambda_max:
            raise ValueError(f"empty box: alpha-1={self.alpha - 1} > lambda_max={self.lambda_max}")
        if self.support_mask is not None:
            object.__setattr__(
                self, "support_mask", tuple(sorted({int(t) for t in self.support_mask}))
            )

    @property
    def lower(self) -> float:
        return self.alpha - 1.0

    def violations(self, q: P0Field) -> np.ndarray:
        v = q.values
        bad = (v < self.lower - BOX_TOL) | (v > self.lambda_max + BOX_TOL)
        if self.support_mask:
            mask = np.zeros(len(v), dtype=bool)
            mask[list(self.support_mask)] = True
            bad |= mask & (v != 0.0)
        return np.flatnonzero(bad)

    def check(self, q: P0Field) -> None:
        bad = self.violations(q)
        if len(bad):
            raise ConstraintViolationError(
                f"{len(bad)} triangle(s) violate {self.lower} <= q <= {self.lambda_max}"
                f" or the support constraint (first: {bad[:10].tolist()})",
                offending=bad,
            )

    def project(self, values: np.ndarray) -> np.ndarray:
        out = np.clip(values, self.lower, self.lambda_max)
        if self.support_mask:
            out[list(self.support_mask)] = 0.0
        return out

    def tv_exceeded(self, q: P0Field) -> bool:
        return self.kappa is not None and discrete_tv(q) > self.kappa


@dataclass(frozen=True)
class PlaneWave:
    """Incident wave ``psi0(x) = exp(i k0 x . d)``."""

    k0: float
    direction: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,) or abs(np.hypot(*d) - 1.0) > 1e-12:
            raise InvalidDirectionError(f"direction {self.direction} is not a unit 2-vector")
        object.__setattr__(self, "direction", (float(d[0]), float(d[1])))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.exp(1j * self.k0 * (x @ np.asarray(self.direction)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(self.direction)
        return 1j * self.k0 * self(x)[..., None] * d

    def normal_derivative(self, x: np.ndarray, normals: np.ndarray) -> np.ndarray:
        return 1j * self.k0 * (normals @ np.asarray(self.direction)) * self(x)


# --------------------------------------------------------------------------
# element matrices


@lru_cache(maxsize=16)
def element_stiffness(mesh: Mesh) -> np.ndarray:
    """(M, 3, 3) real element stiffness ``area * grad phi_i . grad phi_j``."""
    g = mesh.basis_gradients
    return mesh.areas[:, None, None] * np.einsum("tik,tjk->tij", g, g)


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def element_mass(mesh: Mesh) -> np.ndarray:
    return mesh.areas[:, None, None] * _MASS_REF


@lru_cache(maxsize=16)
def _pattern(mesh: Mesh):
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    be = mesh.boundary_edges
    brows = np.repeat(be, 2, axis=1).ravel()
    bcols = np.tile(be, (1, 2)).ravel()
    return rows, cols, brows, bcols


def _scatter(mesh: Mesh, data, bdata=None) -> sp.csr_matrix:
    rows, cols, brows, bcols = _pattern(mesh)
    n = mesh.n_nodes
    if bdata is not None:
        rows = np.concatenate([rows, brows])
        cols = np.concatenate([cols, bcols])
        data = np.concatenate([data, bdata])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def _boundary_mass_data(mesh: Mesh) -> np.ndarray:
    ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    return (mesh.boundary_lengths[:, None, None] * ref).ravel()


@lru_cache(maxsize=16)
def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    return _scatter(mesh, element_mass(mesh).ravel())


@lru_cache(maxsize=16)
def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    return _scatter(mesh, element_stiffness(mesh).ravel())


@lru_cache(maxsize=16)
def boundary_mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    n = mesh.n_nodes
    _, _, brows, bcols = _pattern(mesh)
    return sp.coo_matrix((_boundary_mass_data(mesh), (brows, bcols)), shape=(n, n)).tocsr()


def region_mass_matrix(mesh: Mesh, region_elements) -> sp.csr_matrix:
    """Mass matrix integrating only over the listed triangles."""
    w = np.zeros(mesh.n_triangles)
    w[np.asarray(region_elements, dtype=np.int64)] = 1.0
    return _scatter(mesh, (w[:, None, None] * element_mass(mesh)).ravel())


# --------------------------------------------------------------------------
# assembly


def _check_mesh(mesh: Mesh, *fields) -> None:
    for f in fields:
        if f is not None and not f.mesh.same_as(mesh):
            raise IncompatibleFieldError("field lives on a different mesh")


def check_ellipticity(q: P0Field, alpha: float) -> None:
    bad = np.flatnonzero(1.0 + q.values < alpha - BOX_TOL)
    if len(bad):
        raise ConstraintViolationError(
            f"1+q < alpha={alpha} on {len(bad)} triangle(s) (first: {bad[:10].tolist()})",
            offending=bad,
        )


def assemble_a(mesh: Mesh, q: P0Field, k0: float, alpha: Optional[float] = None) -> sp.csr_matrix:
    """Complex symmetric Helmholtz matrix with weak impedance boundary term."""
    _check_mesh(mesh, q)
    if alpha is not None:
        check_ellipticity(q, alpha)
    vol = (1.0 + q.values)[:, None, None] * element_stiffness(mesh) - k0**2 * element_mass(mesh)
    return _scatter(mesh, vol.ravel().astype(complex), -1j * k0 * _boundary_mass_data(mesh))


BoundaryData = Union[None, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _boundary_load(mesh: Mesh, g: BoundaryData) -> np.ndarray:
    """``int_{boundary} g phi_i`` by 2-point Gauss on every boundary edge.

    ``g`` is a callable ``g(points, normals)``, or an array with one complex
    value per boundary edge (constant on the edge).
    """
    out = np.zeros(mesh.n_nodes, dtype=complex)
    if g is None:
        return out
    be = mesh.boundary_edges
    lengths = mesh.boundary_lengths
    if callable(g):
        p0 = mesh.nodes[be[:, 0]]
        p1 = mesh.nodes[be[:, 1]]
        loc = np.zeros((len(be), 2), dtype=complex)
        for t, w in zip(_GAUSS2_T, _GAUSS2_W):
            gv = np.asarray(g((1 - t) * p0 + t * p1, mesh.boundary_normals), dtype=complex)
            loc[:, 0] += w * gv * (1 - t)
            loc[:, 1] += w * gv * t
        loc *= lengths[:, None]
    else:
        gv = np.asarray(g, dtype=complex)
        if gv.shape != (len(be),):
            raise IncompatibleFieldError(
                f"boundary data needs {len(be)} per-edge values, got shape {gv.shape}"
            )
        loc = 0.5 * (gv * lengths)[:, None] * np.ones(2)
    np.add.at(out, be, loc)
    return out


def incident_load_elements(mesh: Mesh, wave: PlaneWave) -> np.ndarray:
    """(M, 3) per-triangle ``-area * grad psi0(barycenter) . grad phi_i`` (times q_T gives the load)."""
    gpsi = wave.gradient(mesh.barycenters)
    return -mesh.areas[:, None] * np.einsum("tk,tik->ti", gpsi, mesh.basis_gradients)


def _volume_load(mesh: Mesh, q: P0Field, wave: PlaneWave) -> np.ndarray:
    out = np.zeros(mesh.n_nodes, dtype=complex)
    nz = np.flatnonzero(q.values)
    if len(nz):
        loc = q.values[nz, None] * incident_load_elements(mesh, wave)[nz]
        np.add.at(out, mesh.triangles[nz], loc)
    return out


def assemble_b_general(
    mesh: Mesh, q: P0Field, wave: PlaneWave, boundary_g: BoundaryData = None
) -> np.ndarray:
    """``b_i = -int q grad psi0 . grad phi_i + int_{boundary} g phi_i``."""
    _check_mesh(mesh, q)
    return _volume_load(mesh, q, wave) + _boundary_load(mesh, boundary_g)


def total_wave_boundary_data(wave: PlaneWave) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """``g = d_n psi0 - i k0 psi0`` for the total-wave problem."""

    def g(x, n):
        return wave.normal_derivative(x, n) - 1j * wave.k0 * wave(x)

    return g


def assemble_b_total(mesh: Mesh, wave: PlaneWave) -> np.ndarray:
    return _boundary_load(mesh, total_wave_boundary_data(wave))


def assemble_b_scattered(mesh: Mesh, q: P0Field, wave: PlaneWave) -> np.ndarray:
    _check_mesh(mesh, q)
    return _volume_load(mesh, q, wave)


# --------------------------------------------------------------------------
# norms and functionals


def l2_norm_sq(psi: P1Field) -> float:
    v = psi.values
    return float(np.real(np.vdot(v, mass_matrix(psi.mesh) @ v)))


def h1_seminorm_sq(psi: P1Field) -> float:
    v = psi.values
    return float(np.real(np.vdot(v, stiffness_matrix(psi.mesh) @ v)))


def norm_1k0(psi: P1Field, k0: float, alpha: float) -> float:
    """Wavenumber-weighted energy norm ``sqrt(k0^2 |psi|_L2^2 + alpha |grad psi|_L2^2)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return float(np.sqrt(max(k0**2 * l2_norm_sq(psi) + alpha * h1_seminorm_sq(psi), 0.0)))


def face_jumps(q: P0Field) -> np.ndarray:
    m = q.mesh
    return q.values[m.face_left] - q.values[m.face_right]


def discrete_tv(q: P0Field) -> float:
    """Sum over interior faces of ``|F| * |jump of q across F|``."""
    return float(np.sum(q.mesh.face_length * np.abs(face_jumps(q))))


def smoothed_tv(q: P0Field, delta: float) -> tuple[float, np.ndarray]:
    """TV with ``|j|`` replaced by ``sqrt(j^2 + delta^2)``; returns value and gradient."""
    m = q.mesh
    j = face_jumps(q)
    r = np.sqrt(j**2 + delta**2)
    value = float(np.sum(m.face_length * r))
    dj = m.face_length * j / r
    grad = np.zeros(m.n_triangles)
    np.add.at(grad, m.face_left, dj)
    np.add.at(grad, m.face_right, -dj)
    return value, grad


def l2_region_misfit(
    psi: P1Field, psi_ref: Optional[P1Field], region_elements, weight: float
) -> float:
    """``weight/2 * sum_{T in region} int_T |psi - psi_ref|^2`` (exact for P1)."""
    mesh = psi.mesh
    _check_mesh(mesh, psi_ref)
    region = np.asarray(region_elements, dtype=np.int64)
    if len(region) == 0:
        return 0.0
    if region.min() < 0 or region.max() >= mesh.n_triangles:
        raise IncompatibleFieldError("region lists triangles that are not in the mesh")
    e = psi.values if psi_ref is None else psi.values - psi_ref.values
    loc = e[mesh.triangles[region]]
    val = np.einsum("ti,tij,tj->", loc.conj(), element_mass(mesh)[region], loc)
    return 0.5 * weight * float(np.real(val))


# --------------------------------------------------------------------------
# CSV serialization

_FMT = "%.17g"


def write_p1_csv(psi: P1Field, path: Union[str, Path]) -> None:
    x = psi.mesh.nodes
    with open(path, "w", newline="") as fh:
        fh.write("x,y,re,im\n")
        for (px, py), v in zip(x, psi.values):
            fh.write(",".join(_FMT % c for c in (px, py, v.real, v.imag)) + "\n")


def read_p1_csv(mesh: Mesh, path: Union[str, Path]) -> P1Field:
    rows = _read_rows(path, ["x", "y", "re", "im"])
    return P1Field(mesh, rows[:, 2] + 1j * rows[:, 3])


def write_p0_csv(q: P0Field, path: Union[str, Path]) -> None:
    bc = q.mesh.barycenters
    with open(path, "w", newline="") as fh:
        fh.write("t,barycenter_x,barycenter_y,value\n")
        for t, ((bx, by), v) in enumerate(zip(bc, q.values)):
            fh.write(f"{t}," + ",".join(_FMT % c for c in (bx, by, v)) + "\n")


def read_p0_csv(mesh: Mesh, path: Union[str, Path]) -> P0Field:
    rows = _read_rows(path, ["t", "barycenter_x", "barycenter_y", "value"])
    values = np.zeros(mesh.n_triangles)
    values[rows[:, 0].astype(np.int64)] = rows[:, 3]
    return P0Field(mesh, values)


def _read_rows(path, header) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader)
        if got != header:
            raise IncompatibleFieldError(f"{path}: expected header {header}, got {got}")
        return np.array([[float(c) for c in row] for row in reader if row])
