"""Reduced cost functionals, discrete adjoint gradients and projected L-BFGS.

The control is a P0 field ``q`` that is free on the triangles of a design
region and pinned to zero elsewhere.  The smooth part of the cost is

    J0(q) = weight/2 * int_{obs} |psi_tot(q) - psi_ref|^2

(``psi_ref = 0`` for damping).  Its gradient is computed from one extra solve
with the transposed matrix, which for the complex symmetric ``A(q)`` reuses
the state factorization.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConstraintViolationError
from .fem import (
    AdmissibleBox,
    P0Field,
    P1Field,
    discrete_tv,
    element_stiffness,
    incident_load_elements,
    region_mass_matrix,
    smoothed_tv,
)
from .helmholtz import HelmholtzModel, solve_state
from .mesh import Mesh, locate_region_elements

log = logging.getLogger(__name__)

TERMINATIONS = ("gradient-tol", "max-iter", "line-search-failure")


@dataclass(frozen=True, eq=False)
class CostSpec:
    kind: str
    weight: float
    observation_region: list
    reference: Optional[P1Field] = None
    tv_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("damping", "tracking"):
            raise ValueError(f"cost kind must be 'damping' or 'tracking', got {self.kind!r}")
        if self.kind == "tracking" and self.reference is None:
            raise ValueError("tracking cost needs a reference field")
        if not self.weight > 0:
            raise ValueError("cost weight must be positive")
        if not self.tv_weight >= 0:
            raise ValueError("tv_weight must be nonnegative")


@dataclass(frozen=True, eq=False)
class ControlSpec:
    design_region: list
    box: AdmissibleBox
    initial_q: P0Field

    def design_elements(self, mesh: Mesh) -> np.ndarray:
        return locate_region_elements(mesh, self.design_region)

    def effective_box(self, mesh: Mesh) -> AdmissibleBox:
        """The box with every triangle outside the design region masked to zero."""
        outside = np.setdiff1d(np.arange(mesh.n_triangles), self.design_elements(mesh))
        mask = set(outside.tolist()) | set(self.box.support_mask or ())
        return AdmissibleBox(self.box.alpha, self.box.lambda_max, tuple(mask), self.box.kappa)


@dataclass
class OptimReport:
    q_star: P0Field
    cost_history: list = field(default_factory=list)
    gradient_norm_history: list = field(default_factory=list)
    tv_history: list = field(default_factory=list)
    iterations: int = 0
    termination: str = "max-iter"
    n_solves: int = 0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "termination": self.termination,
            "initial_cost": self.cost_history[0],
            "final_cost": self.cost_history[-1],
            "final_gradient_norm": self.gradient_norm_history[-1],
            "final_tv": self.tv_history[-1],
            "n_solves": self.n_solves,
        }

    def history_rows(self):
        return zip(
            range(len(self.cost_history)),
            self.cost_history,
            self.gradient_norm_history,
            self.tv_history,
        )


class _Functional:
    """Cached pieces shared by the evaluate/gradient/oracle entry points."""

    def __init__(self, model: HelmholtzModel, cost: CostSpec, control: ControlSpec):
        self.model = model
        self.cost = cost
        self.mesh = model.mesh
        self.obs_elements = locate_region_elements(self.mesh, cost.observation_region)
        self.M_obs = region_mass_matrix(self.mesh, self.obs_elements)
        self.design = control.design_elements(self.mesh)
        self.box = control.effective_box(self.mesh)
        self.n_solves = 0

    def check(self, q: P0Field) -> None:
        self.box.check(q)

    def state(self, q: P0Field):
        self.check(q)
        self.n_solves += 1
        st = solve_state(self.model, q)
        obs = self.model.observed(st.psi).values
        e = obs if self.cost.reference is None else obs - self.cost.reference.values
        j0 = 0.5 * self.cost.weight * float(np.real(np.vdot(e, self.M_obs @ e)))
        return j0, st, e

    def gradient(self, q: P0Field, st, e) -> np.ndarray:
        mesh = self.mesh
        lam = st.solve_transpose(self.M_obs @ np.conj(e))
        tri = mesh.triangles
        lam_t = lam[tri]
        psi_t = st.psi.values[tri]
        # d/dq_T of (b - A psi) restricted to T: db_T - K_T psi_T
        local = -np.einsum("tij,tj->ti", element_stiffness(mesh), psi_t)
        if self.model.kind != "total":
            local = local + incident_load_elements(mesh, self.model.wave)
        g = self.cost.weight * np.real(np.einsum("ti,ti->t", lam_t, local))
        out = np.zeros(mesh.n_triangles)
        out[self.design] = g[self.design]
        return out


def evaluate_reduced(
    model: HelmholtzModel, cost: CostSpec, control: ControlSpec, q: P0Field
) -> tuple[float, P1Field]:
    """Cost ``J0 + tv_weight * TV(q)`` at the state solving the model for ``q``."""
    fn = _Functional(model, cost, control)
    j0, st, _ = fn.state(q)
    return j0 + cost.tv_weight * discrete_tv(q), st.psi


def adjoint_gradient(
    model: HelmholtzModel, cost: CostSpec, control: ControlSpec, q: P0Field
) -> P0Field:
    """Exact gradient of the smooth part ``J0`` with respect to each triangle value."""
    fn = _Functional(model, cost, control)
    _, st, e = fn.state(q)
    return P0Field(model.mesh, fn.gradient(q, st, e))


def fd_gradient_oracle(
    model: HelmholtzModel,
    cost: CostSpec,
    control: ControlSpec,
    q: P0Field,
    direction: P0Field,
    step: float,
) -> float:
    """Central difference ``(J0(q + step v) - J0(q - step v)) / (2 step)``."""
    v = direction.values
    if not np.any(v):
        return 0.0
    fn = _Functional(model, cost, control)
    plus = q.with_values(q.values + step * v)
    minus = q.with_values(q.values - step * v)
    for trial in (plus, minus):
        bad = fn.box.violations(trial)
        if len(bad):
            raise ConstraintViolationError(
                f"perturbation of size {step:g} leaves the admissible set", offending=bad
            )
    jp, _, _ = fn.state(plus)
    jm, _, _ = fn.state(minus)
    return (jp - jm) / (2.0 * step)


def tv_smoothing(q_values: np.ndarray) -> float:
    return 1e-6 * max(float(np.max(np.abs(q_values), initial=0.0)), 1.0)


def _two_loop(g, s_list, y_list):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        a = (s @ q) / (y @ s)
        alphas.append(a)
        q -= a * y
    s, y = s_list[-1], y_list[-1]
    r = q * ((s @ y) / (y @ y))
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        b = (y @ r) / (y @ s)
        r += s * (a - b)
    return r


def minimize(
    model: HelmholtzModel,
    cost: CostSpec,
    control: ControlSpec,
    max_iter: int = 500,
    grad_tol: Optional[float] = None,
    memory: int = 10,
    initial_step: float = 0.1,
    armijo: float = 1e-4,
    max_backtracks: int = 30,
) -> OptimReport:
    """Projected L-BFGS with Armijo backtracking over the design triangles.

    Iterates stay in ``[alpha - 1, lambda_max]`` and vanish outside the design
    region.  The objective is ``J0`` plus ``tv_weight`` times a smoothed TV.
    ``grad_tol`` defaults to ``1e-8 * (1 + |J(q0)|)`` and applies to the norm of
    the projected gradient step ``P(x - g) - x``.
    """
    fn = _Functional(model, cost, control)
    mesh = model.mesh
    design = fn.design
    lo, hi = fn.box.lower, fn.box.lambda_max
    beta = cost.tv_weight
    base = np.zeros(mesh.n_triangles)

    def to_q(x):
        v = base.copy()
        v[design] = x
        return P0Field(mesh, v)

    def value(x):
        q = to_q(x)
        j0, st, e = fn.state(q)
        if beta > 0:
            tv, _ = smoothed_tv(q, tv_smoothing(q.values))
            j0 += beta * tv
        return j0, (q, st, e)

    def grad(cache):
        q, st, e = cache
        g = fn.gradient(q, st, e)
        if beta > 0:
            _, gtv = smoothed_tv(q, tv_smoothing(q.values))
            g = g + beta * gtv
        return g[design]

    fn.check(control.initial_q)
    x = np.clip(control.initial_q.values[design], lo, hi)
    f, cache = value(x)
    g = grad(cache)
    if grad_tol is None:
        grad_tol = 1e-8 * (1.0 + abs(f))

    def pgrad(x, g):
        return np.clip(x - g, lo, hi) - x

    report = OptimReport(q_star=cache[0])
    s_list, y_list = [], []

    def record(x, f, g):
        report.cost_history.append(float(f))
        report.gradient_norm_history.append(float(np.linalg.norm(pgrad(x, g))))
        report.tv_history.append(discrete_tv(to_q(x)))

    record(x, f, g)
    termination = "max-iter"
    it = 0
    while True:
        if report.gradient_norm_history[-1] <= grad_tol:
            termination = "gradient-tol"
            break
        if it >= max_iter:
            break
        eps = 1e-12 * max(1.0, hi - lo)
        active = ((x <= lo + eps) & (g > 0)) | ((x >= hi - eps) & (g < 0))
        gf = np.where(active, 0.0, g)
        d = -_two_loop(gf, s_list, y_list) if s_list else None
        if d is not None:
            d[active] = 0.0
        if d is None or g @ d >= 0:
            s_list.clear()
            y_list.clear()
            gmax = np.max(np.abs(gf))
            if gmax == 0:
                # every free direction blocked by a bound: fall back to the projected step
                gf = -pgrad(x, g)
                gmax = np.max(np.abs(gf))
            d = -gf * (initial_step / gmax)

        t = 1.0
        for _ in range(max_backtracks):
            xn = np.clip(x + t * d, lo, hi)
            decrease = g @ (xn - x)
            if decrease < 0:
                fn_val, cache_n = value(xn)
                if fn_val <= f + armijo * decrease and fn_val < f:
                    break
            t *= 0.5
        else:
            termination = "line-search-failure"
            log.warning("line search failed at iteration %d", it)
            break

        gn = grad(cache_n)
        s, y = xn - x, gn - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
        x, f, g, cache = xn, fn_val, gn, cache_n
        it += 1
        record(x, f, g)
        log.debug("iter %d  J=%.10g  |pg|=%.3e", it, f, report.gradient_norm_history[-1])

    report.q_star = to_q(x)
    report.iterations = it
    report.termination = termination
    report.n_solves = fn.n_solves
    return report


def make_reference_bathymetry(mesh: Mesh, tau: float, L: float) -> P0Field:
    """Two Gaussian bumps centred at ``(L/4, L/4)`` and ``(3L/4, 3L/4)``, sampled at barycenters."""

    def profile(x):
        r1 = (x[:, 0] - L / 4) ** 2 + (x[:, 1] - L / 4) ** 2
        r2 = (x[:, 0] - 3 * L / 4) ** 2 + (x[:, 1] - 3 * L / 4) ** 2
        return np.exp(-tau * r1) + np.exp(-tau * r2)

    return P0Field.from_function(mesh, profile)
