"""Discrete Helmholtz problems for the wave amplitude over a variable bottom.

Three right-hand sides share the same matrix ``A(q)``:

* ``total``: no volume load, impedance data ``g = d_n psi0 - i k0 psi0``;
  the solution approximates the total amplitude.
* ``scattered``: volume load ``-div(q grad psi0)``, ``g = 0``.
* ``general``: volume load plus user boundary data.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .errors import (
    AccuracyFailureError,
    ConstraintViolationError,
    IncompatibleFieldError,
    SolverFailureError,
)
from .fem import (
    BOX_TOL,
    AdmissibleBox,
    BoundaryData,
    P0Field,
    P1Field,
    PlaneWave,
    assemble_a,
    assemble_b_general,
    assemble_b_scattered,
    assemble_b_total,
    l2_norm_sq,
    norm_1k0,
)
from .mesh import Mesh

KINDS = ("total", "scattered", "general")
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class PhysicalParams:
    T0: float = 20.0
    g_grav: float = 9.81
    z0: float = 3.0
    direction: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not (self.T0 > 0 and self.g_grav > 0 and self.z0 > 0):
            raise ValueError("T0, g_grav and z0 must be positive")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,) or abs(np.hypot(*d) - 1.0) > 1e-12:
            raise ValueError(f"direction {self.direction} is not a unit 2-vector")
        object.__setattr__(self, "direction", (float(d[0]), float(d[1])))

    @property
    def omega0(self) -> float:
        return 2.0 * np.pi / self.T0

    @property
    def k0(self) -> float:
        return wavenumber_from_physical(self)

    @property
    def L(self) -> float:
        """Side of the square computational domain, five wavelengths."""
        return 10.0 * np.pi / self.k0


def wavenumber_from_physical(p: PhysicalParams) -> float:
    """Shallow-water wavenumber ``omega0 / sqrt(g z0)``."""
    return (2.0 * np.pi / p.T0) / np.sqrt(p.g_grav * p.z0)


def bathymetry_to_q(delta_zb: P0Field, z0: float, alpha: float = 0.1) -> P0Field:
    """Normalized bottom perturbation ``delta_zb / z0``; refuses to clamp."""
    if not z0 > 0:
        raise ValueError("z0 must be positive")
    q = delta_zb.with_values(delta_zb.values / z0)
    bad = np.flatnonzero(1.0 + q.values < alpha - BOX_TOL)
    if len(bad):
        raise ConstraintViolationError(
            f"1+q < {alpha} on triangles {bad.tolist()[:50]}", offending=bad
        )
    return q


@dataclass(frozen=True, eq=False)
class HelmholtzModel:
    mesh: Mesh
    k0: float
    kind: str = "total"
    box: AdmissibleBox = field(default_factory=AdmissibleBox)
    direction: tuple[float, float] = (0.0, 1.0)
    boundary_g: BoundaryData = None

    def __post_init__(self):
        if not self.k0 > 0:
            raise ValueError("k0 must be positive")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind != "general" and self.boundary_g is not None:
            raise ValueError("boundary data can only be set for kind='general'")
        object.__setattr__(self, "direction", PlaneWave(self.k0, self.direction).direction)
        if self.kind == "scattered" and self.box.support_mask is not None:
            band = boundary_band(self.mesh)
            free = np.setdiff1d(band, self.box.support_mask)
            if len(free):
                raise ConstraintViolationError(
                    "scattered-wave model needs q to vanish next to the boundary",
                    offending=free,
                )

    @property
    def wave(self) -> PlaneWave:
        return PlaneWave(self.k0, self.direction)

    def rhs(self, q: P0Field) -> np.ndarray:
        if self.kind == "total":
            return assemble_b_total(self.mesh, self.wave)
        if self.kind == "scattered":
            return assemble_b_scattered(self.mesh, q, self.wave)
        return assemble_b_general(self.mesh, q, self.wave, self.boundary_g)

    def observed(self, psi: P1Field) -> P1Field:
        """Total amplitude carried by a state of this model."""
        if self.kind == "scattered":
            return total_from_scattered(psi, self.wave)
        return psi


def boundary_band(mesh: Mesh) -> np.ndarray:
    """Triangles touching the boundary."""
    on_boundary = np.zeros(mesh.n_nodes, dtype=bool)
    on_boundary[mesh.boundary_edges.ravel()] = True
    return np.flatnonzero(on_boundary[mesh.triangles].any(axis=1))


@dataclass
class SolveReport:
    state: P1Field
    residual_norm: float
    norm_1k0_value: float
    c0_max: float
    wall_time: float

    def to_dict(self, timing: bool = True) -> dict:
        rec = {
            "residual_norm": self.residual_norm,
            "norm_1k0": self.norm_1k0_value,
            "c0_max": self.c0_max,
            "dofs": self.state.mesh.n_nodes,
        }
        if timing:
            rec["wall_time_s"] = self.wall_time
        return rec


@dataclass
class StateSolve:
    """A solved state together with the factorization that produced it."""

    psi: P1Field
    matrix: object
    rhs: np.ndarray
    lu: object
    residual: float

    def solve_transpose(self, rhs: np.ndarray) -> np.ndarray:
        # A is complex symmetric, so A^T x = rhs reuses the same factors
        return self.lu.solve(np.asarray(rhs, dtype=complex))


def _relative_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def solve_state(model: HelmholtzModel, q: P0Field) -> StateSolve:
    if not q.mesh.same_as(model.mesh):
        raise IncompatibleFieldError("q lives on a different mesh than the model")
    model.box.check(q)
    A = assemble_a(model.mesh, q, model.k0, model.box.alpha)
    b = model.rhs(q)
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise SolverFailureError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverFailureError("factorization produced non-finite solution")
    res = _relative_residual(A, x, b)
    if res > RESIDUAL_TOL:
        raise AccuracyFailureError(f"relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    return StateSolve(P1Field(model.mesh, x), A, b, lu, res)


def solve(model: HelmholtzModel, q: P0Field) -> SolveReport:
    """Assemble and factorize ``A(q) psi = b(q)`` for the model's kind."""
    t0 = time.perf_counter()
    st = solve_state(model, q)
    elapsed = time.perf_counter() - t0
    return SolveReport(
        state=st.psi,
        residual_norm=st.residual,
        norm_1k0_value=norm_1k0(st.psi, model.k0, model.box.alpha),
        c0_max=float(np.max(np.abs(st.psi.values))),
        wall_time=elapsed,
    )


def total_from_scattered(psi_sc: P1Field, wave: PlaneWave) -> P1Field:
    """``psi_sc`` plus the nodal interpolant of the incident wave."""
    return P1Field(psi_sc.mesh, psi_sc.values + wave(psi_sc.mesh.nodes))


def garding_check(model: HelmholtzModel, q: P0Field, psi: P1Field) -> float:
    """``Re a(q; psi, psi) + 2 k0^2 |psi|^2 - |psi|_{1,k0}^2``; nonnegative for admissible q."""
    if not psi.mesh.same_as(model.mesh):
        raise IncompatibleFieldError("psi lives on a different mesh than the model")
    A = assemble_a(model.mesh, q, model.k0)
    v = psi.values
    re_a = float(np.real(np.vdot(v, A @ v)))
    return re_a + 2 * model.k0**2 * l2_norm_sq(psi) - norm_1k0(psi, model.k0, model.box.alpha) ** 2
