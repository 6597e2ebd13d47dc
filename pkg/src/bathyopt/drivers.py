"""Refinement studies, gradient checks and stability diagnostics."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, build_problem, q_from_source
from .errors import InvalidLevelsError
from .fem import P0Field, P1Field, assemble_a, l2_norm_sq, norm_1k0
from .helmholtz import HelmholtzModel, garding_check, solve
from .mesh import build_structured_mesh, locate_points, locate_region_elements, parent_triangles
from .optim import adjoint_gradient, fd_gradient_oracle

# degree-5 seven-point rule on the reference triangle (barycentric coordinates)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD7_POINTS = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
QUAD7_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def error_against_exact(psi: P1Field, exact, exact_grad, k0: float, alpha: float) -> tuple[float, float]:
    """L2 and ``1,k0`` norms of ``psi - exact`` with the seven-point rule per triangle."""
    m = psi.mesh
    x = np.einsum("qi,tik->tqk", QUAD7_POINTS, m.nodes[m.triangles])
    loc = psi.values[m.triangles]
    uh = np.einsum("qi,ti->tq", QUAD7_POINTS, loc)
    gh = np.einsum("ti,tik->tk", loc, m.basis_gradients)
    w = m.areas[:, None] * QUAD7_WEIGHTS
    e0 = np.sum(w * np.abs(uh - exact(x)) ** 2)
    e1 = np.sum(w * np.sum(np.abs(gh[:, None, :] - exact_grad(x)) ** 2, axis=2))
    return float(np.sqrt(e0)), float(np.sqrt(k0**2 * e0 + alpha * e1))


def prolong_p1(psi: P1Field, fine_mesh) -> P1Field:
    """Evaluate a coarse P1 field at the nodes of a nested finer mesh."""
    m = psi.mesh
    t = locate_points(m, fine_mesh.nodes)
    p = m.nodes[m.triangles[t]]
    # barycentric coordinates: lambda_i = phi_i(x) = 1/3 + grad phi_i . (x - barycenter)
    bc = p.mean(axis=1)
    lam = 1 / 3 + np.einsum("tik,tk->ti", m.basis_gradients[t], fine_mesh.nodes - bc)
    return P1Field(fine_mesh, np.einsum("ti,ti->t", lam, psi.values[m.triangles[t]]))


def prolong_p0(q: P0Field, fine_mesh) -> P0Field:
    return P0Field(fine_mesh, q.values[parent_triangles(fine_mesh, q.mesh)])


def run_convergence(base: RunConfig, levels: Sequence[int]) -> list[dict]:
    """Errors and observed rates ``log2(e_h / e_{h/2})`` over a list of nx levels.

    With ``q = 0`` the reference is the exact solution (the incident wave
    for the total-wave model, zero for the scattered one).  Otherwise q is
    sampled on the coarsest mesh, inherited by the nested finer meshes, and
    errors are measured against the finest level.
    """
    levels = [int(n) for n in levels]
    if len(levels) < 2 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidLevelsError(f"levels must be strictly ascending, got {levels}")
    coarse = build_problem(base.with_mesh(levels[0]))
    source = (base.control or {}).get("initial_q")
    q_coarse = q_from_source(coarse.mesh, source)
    analytic = not np.any(q_coarse.values) and coarse.model.kind != "general"
    if not analytic and any(levels[-1] % n for n in levels):
        raise InvalidLevelsError(f"levels {levels} are not nested in the finest level")

    k0, alpha = coarse.model.k0, coarse.model.box.alpha
    wave = coarse.model.wave
    states = []
    for nx in levels:
        ny = nx * base.mesh.get("ny", base.mesh["nx"]) // base.mesh["nx"]
        mesh = build_structured_mesh(base.domain, nx, ny)
        model = HelmholtzModel(mesh, k0, coarse.model.kind, coarse.model.box, coarse.model.direction)
        q = P0Field.zeros(mesh) if analytic else prolong_p0(q_coarse, mesh)
        states.append((mesh, solve(model, q).state))

    errors = []
    if analytic:
        if coarse.model.kind == "total":
            exact, exact_grad = wave, wave.gradient
        else:
            exact = lambda x: np.zeros(x.shape[:-1], dtype=complex)  # noqa: E731
            exact_grad = lambda x: np.zeros(x.shape, dtype=complex)  # noqa: E731
        errors = [error_against_exact(psi, exact, exact_grad, k0, alpha) for _, psi in states]
    else:
        fine_mesh, fine = states[-1]
        for mesh, psi in states[:-1]:
            diff = P1Field(fine_mesh, prolong_p1(psi, fine_mesh).values - fine.values)
            errors.append((np.sqrt(l2_norm_sq(diff)), norm_1k0(diff, k0, alpha)))
        states = states[:-1]
        levels = levels[:-1]

    rows = []
    for i, (nx, (mesh, psi), (el2, e1)) in enumerate(zip(levels, states, errors)):
        row = {"nx": nx, "h": mesh.h, "dofs": mesh.n_nodes, "err_l2": el2, "err_1k0": e1, "rate_l2": None, "rate_1k0": None}
        if i:
            prev = rows[-1]
            row["rate_l2"] = float(np.log2(prev["err_l2"] / el2))
            row["rate_1k0"] = float(np.log2(prev["err_1k0"] / e1))
        rows.append(row)
    return rows


def random_admissible_q(mesh, elements, rng, amplitude: float = 0.3) -> P0Field:
    v = np.zeros(mesh.n_triangles)
    v[elements] = rng.uniform(-amplitude, amplitude, len(elements))
    return P0Field(mesh, v)


def gradcheck(
    cfg: RunConfig,
    n_directions: int = 10,
    step: float = 1e-5,
    threads: int = 1,
    base_amplitude: float = 0.3,
    problem=None,
) -> list[dict]:
    """Compare adjoint directional derivatives with central differences.

    The base point is a seeded random admissible q on the design region;
    the difference step is ``step * max(|q|_inf, 1)``.
    """
    prob = problem or build_problem(cfg)
    rng = np.random.default_rng(cfg.seed)
    design = prob.control.design_elements(prob.mesh)
    q = random_admissible_q(prob.mesh, design, rng, base_amplitude)
    g = adjoint_gradient(prob.model, prob.cost, prob.control, q)
    directions = []
    for _ in range(n_directions):
        v = np.zeros(prob.mesh.n_triangles)
        v[design] = rng.standard_normal(len(design))
        directions.append(P0Field(prob.mesh, v))
    eps = step * max(float(np.max(np.abs(q.values))), 1.0)

    def fd(v):
        return fd_gradient_oracle(prob.model, prob.cost, prob.control, q, v, eps)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        fds = list(pool.map(fd, directions))
    rows = []
    for i, (v, f) in enumerate(zip(directions, fds)):
        adj = float(g.values @ v.values)
        rows.append({"direction": i, "adjoint": adj, "fd": f, "rel_err": abs(adj - f) / max(abs(f), 1e-30)})
    return rows


def garding_sweep(model: HelmholtzModel, rng, n: int = 100) -> list[tuple[float, float]]:
    """(slack, |psi|_{1,k0}^2) for random admissible q and random complex psi."""
    mesh, box = model.mesh, model.box
    out = []
    for _ in range(n):
        q = P0Field(mesh, rng.uniform(box.lower, box.lambda_max, mesh.n_triangles))
        psi = P1Field(mesh, rng.standard_normal(mesh.n_nodes) + 1j * rng.standard_normal(mesh.n_nodes))
        out.append((garding_check(model, q, psi), norm_1k0(psi, model.k0, box.alpha) ** 2))
    return out


def symmetry_sweep(model: HelmholtzModel, rng, n: int = 20) -> list[float]:
    """``max|A - A^T| / max|A|`` for random admissible q."""
    mesh, box = model.mesh, model.box
    out = []
    for _ in range(n):
        q = P0Field(mesh, rng.uniform(box.lower, box.lambda_max, mesh.n_triangles))
        A = assemble_a(mesh, q, model.k0, box.alpha)
        d = abs(A - A.T)
        out.append(float(d.max() / abs(A).max()) if d.nnz else 0.0)
    return out


def scattered_scaling(model: HelmholtzModel, region_elements, amplitudes=(0.02, 0.01), rng=None) -> dict:
    """Ratio of scattered-wave norms when a fixed q pattern is rescaled."""
    mesh = model.mesh
    sc = HelmholtzModel(mesh, model.k0, "scattered", model.box, model.direction)
    pattern = np.zeros(mesh.n_triangles)
    if rng is None:
        pattern[region_elements] = 1.0
    else:
        pattern[region_elements] = rng.uniform(-1.0, 1.0, len(region_elements))
        pattern /= np.max(np.abs(pattern))
    norms = [solve(sc, P0Field(mesh, a * pattern)).norm_1k0_value for a in amplitudes]
    return {"amplitudes": list(amplitudes), "norms": norms, "ratio": norms[1] / norms[0]}


def diagnostics(cfg: RunConfig, n_garding: int = 100, n_symmetry: int = 20) -> dict:
    prob = build_problem(cfg)
    rng = np.random.default_rng(cfg.seed)
    g = garding_sweep(prob.model, rng, n_garding)
    min_rel = min(s / n for s, n in g)
    sym = symmetry_sweep(prob.model, rng, n_symmetry)
    L = cfg.L
    x0, y0, x1, y1 = cfg.domain
    cx, cy, r = (x0 + x1) / 2, (y0 + y1) / 2, min(x1 - x0, y1 - y0) / 4
    inner = locate_region_elements(prob.mesh, [(cx - r, cy - r, cx + r, cy + r)])
    scal = scattered_scaling(prob.model, inner)
    return {
        "garding_min_relative_slack": min_rel,
        "garding_pass": bool(min_rel >= -1e-10),
        "symmetry_max_relative": max(sym),
        "symmetry_pass": bool(max(sym) <= 1e-14),
        "scattered_ratio": scal["ratio"],
        "scattered_norms": scal["norms"],
        "scattered_pass": bool(0.45 <= scal["ratio"] <= 0.55),
        "L": L,
    }


def region_relative_error(q: P0Field, q_ref: P0Field, elements) -> float:
    """``|q - q_ref|_{L2(region)} / |q_ref|_{L2(region)}`` over a set of triangles."""
    a = q.mesh.areas[elements]
    num = np.sum(a * (q.values[elements] - q_ref.values[elements]) ** 2)
    den = np.sum(a * q_ref.values[elements] ** 2)
    return float(np.sqrt(num / den))


def lobe_errors(prob, q: P0Field) -> list[dict]:
    """Reconstruction error of ``q`` on each design rectangle, with its overlap with the observation region."""
    obs = set(locate_region_elements(prob.mesh, prob.cost.observation_region).tolist())
    zero = P0Field.zeros(prob.mesh)
    out = []
    for rect in prob.config.control["design_region"]:
        el = locate_region_elements(prob.mesh, [rect])
        out.append(
            {
                "rectangle": list(rect),
                "observed_fraction": len(obs.intersection(el.tolist())) / len(el),
                "rel_err": region_relative_error(q, prob.q_reference, el),
                "rel_err_initial": region_relative_error(zero, prob.q_reference, el),
            }
        )
    return out
