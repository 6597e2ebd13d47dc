import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from bathyopt.errors import ConstraintViolationError, IncompatibleFieldError, InvalidDirectionError
from bathyopt.fem import (
    AdmissibleBox,
    P0Field,
    P1Field,
    PlaneWave,
    assemble_a,
    assemble_b_general,
    assemble_b_scattered,
    assemble_b_total,
    boundary_mass_matrix,
    discrete_tv,
    element_mass,
    l2_region_misfit,
    mass_matrix,
    norm_1k0,
    read_p0_csv,
    read_p1_csv,
    smoothed_tv,
    stiffness_matrix,
    total_wave_boundary_data,
    write_p0_csv,
    write_p1_csv,
)
from bathyopt.mesh import build_structured_mesh, locate_region_elements

from oracles import QUAD_BARY, QUAD_W

K0 = 1.7


def random_q(mesh, rng, box=AdmissibleBox(0.1, 2.0)):
    return P0Field(mesh, rng.uniform(box.lower, box.lambda_max, mesh.n_triangles))


def random_psi(mesh, rng):
    return P1Field(mesh, rng.standard_normal(mesh.n_nodes) + 1j * rng.standard_normal(mesh.n_nodes))


# ---------------------------------------------------------------- fields


def test_field_shapes(unit_mesh):
    with pytest.raises(IncompatibleFieldError):
        P1Field(unit_mesh, np.zeros(3))
    with pytest.raises(IncompatibleFieldError):
        P0Field(unit_mesh, np.zeros(unit_mesh.n_nodes))
    with pytest.raises(ValueError):
        P0Field(unit_mesh, np.full(unit_mesh.n_triangles, np.nan))
    assert P0Field(unit_mesh, 0.5).values.shape == (unit_mesh.n_triangles,)


def test_box():
    box = AdmissibleBox(0.1, 2.0, support_mask=[3, 1])
    m = build_structured_mesh((0, 0, 1, 1), 2, 1)
    assert box.lower == pytest.approx(-0.9)
    q = P0Field(m, [-0.9, 0.0, 2.0, 0.0])
    box.check(q)
    assert box.violations(P0Field(m, [-0.95, 0.1, 2.5, 0.0])).tolist() == [0, 1, 2]
    np.testing.assert_array_equal(box.project(np.array([-3.0, 1.0, 5.0, 1.0])), [-0.9, 0.0, 2.0, 0.0])
    with pytest.raises(ValueError):
        AdmissibleBox(0.0, 1.0)
    with pytest.raises(ValueError):
        AdmissibleBox(0.5, -0.6)


def test_box_projection_idempotent(rng):
    box = AdmissibleBox(0.1, 2.0, support_mask=[0, 5])
    v = box.project(rng.uniform(-5, 5, 10))
    np.testing.assert_array_equal(box.project(v), v)


def test_plane_wave_direction():
    with pytest.raises(InvalidDirectionError):
        PlaneWave(1.0, (1.0, 1.0))


# ---------------------------------------------------------------- element matrices vs quadrature oracle


def test_element_mass_matches_quadrature(rng):
    m = build_structured_mesh((0, 0, 2.0, 1.3), 3, 2)
    M = element_mass(m)
    # int phi_i phi_j by a degree-5 rule (exact for quadratics)
    Q = np.einsum("q,qi,qj->ij", QUAD_W, QUAD_BARY, QUAD_BARY)
    np.testing.assert_allclose(M, m.areas[:, None, None] * Q, rtol=1e-13)


def test_stiffness_of_linear_field(rng):
    m = build_structured_mesh((0, 0, 2.0, 1.3), 3, 2)
    a, b = rng.standard_normal(2)
    f = a * m.nodes[:, 0] + b * m.nodes[:, 1]
    assert f @ stiffness_matrix(m) @ f == pytest.approx((a * a + b * b) * 2.0 * 1.3, rel=1e-12)


def test_boundary_mass_of_constant():
    m = build_structured_mesh((0, 0, 2.0, 1.3), 3, 2)
    one = np.ones(m.n_nodes)
    assert one @ boundary_mass_matrix(m) @ one == pytest.approx(2 * (2.0 + 1.3), rel=1e-14)
    assert one @ mass_matrix(m) @ one == pytest.approx(2.0 * 1.3, rel=1e-14)


# ---------------------------------------------------------------- sesquilinear form


def test_constant_field_quadratic_form():
    m = build_structured_mesh((0, 0, 1, 1), 1, 1)
    A = assemble_a(m, P0Field.zeros(m), K0)
    c = 0.3 - 0.8j
    v = np.full(4, c)
    # grad = 0: only -k0^2 |c|^2 |Omega| - i k0 |c|^2 |boundary|
    assert np.vdot(v, A @ v) == pytest.approx(-(K0**2) * abs(c) ** 2 - 4j * K0 * abs(c) ** 2, rel=1e-14)


def test_symmetry(rng, unit_mesh):
    for _ in range(5):
        A = assemble_a(unit_mesh, random_q(unit_mesh, rng), K0, 0.1)
        d = abs(A - A.T)
        assert (d.max() if d.nnz else 0.0) <= 1e-14 * abs(A).max()


def test_not_hermitian(rng, unit_mesh):
    A = assemble_a(unit_mesh, random_q(unit_mesh, rng), K0)
    assert abs(A - A.conj().T).max() > 0


def test_stiffness_linear_in_one_plus_q(unit_mesh):
    zero = assemble_a(unit_mesh, P0Field.zeros(unit_mesh), K0)
    c = 0.7
    shifted = assemble_a(unit_mesh, P0Field(unit_mesh, c), K0)
    K = stiffness_matrix(unit_mesh)
    np.testing.assert_allclose((shifted - zero).toarray(), c * K.toarray(), atol=1e-13)


def test_affine_in_q(rng, unit_mesh):
    q1, q2 = random_q(unit_mesh, rng), random_q(unit_mesh, rng)
    qs = P0Field(unit_mesh, q1.values + q2.values)
    A = lambda q: assemble_a(unit_mesh, q, K0).toarray()  # noqa: E731
    lhs = A(qs) - A(q2)
    rhs = A(q1) - A(P0Field.zeros(unit_mesh))
    assert np.abs(lhs - rhs).max() <= 1e-13 * np.abs(A(qs)).max()


def test_ellipticity_violation(unit_mesh):
    q = P0Field(unit_mesh, np.full(unit_mesh.n_triangles, -0.95))
    with pytest.raises(ConstraintViolationError) as err:
        assemble_a(unit_mesh, q, K0, alpha=0.1)
    assert len(err.value.offending) == unit_mesh.n_triangles


def test_floor_is_admissible(unit_mesh):
    assemble_a(unit_mesh, P0Field(unit_mesh, -0.9), K0, alpha=0.1)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_garding_property(seed):
    rng = np.random.default_rng(seed)
    m = build_structured_mesh((0, 0, 3.0, 2.0), 5, 4)
    alpha = 0.1
    q = random_q(m, rng)
    psi = random_psi(m, rng)
    A = assemble_a(m, q, K0, alpha)
    v = psi.values
    n2 = norm_1k0(psi, K0, alpha) ** 2
    l2 = np.real(np.vdot(v, mass_matrix(m) @ v))
    assert np.real(np.vdot(v, A @ v)) + 2 * K0**2 * l2 >= n2 - 1e-10 * n2


# ---------------------------------------------------------------- right-hand sides


WAVE = PlaneWave(K0, (0.6, 0.8))


def test_b_general_zero(unit_mesh):
    b = assemble_b_general(unit_mesh, P0Field.zeros(unit_mesh), WAVE, None)
    assert np.all(b == 0)


def test_b_general_locality(unit_mesh):
    v = np.zeros(unit_mesh.n_triangles)
    v[7] = 0.4
    b = assemble_b_general(unit_mesh, P0Field(unit_mesh, v), WAVE, None)
    assert set(np.flatnonzero(b)) <= set(unit_mesh.triangles[7])
    assert np.count_nonzero(b) == 3


def test_b_general_linear_in_q(unit_mesh):
    b1 = assemble_b_general(unit_mesh, P0Field(unit_mesh, 0.3), WAVE)
    b2 = assemble_b_general(unit_mesh, P0Field(unit_mesh, 0.6), WAVE)
    np.testing.assert_allclose(b2, 2 * b1, rtol=1e-14)


def test_b_volume_matches_quadrature(rng):
    # one-point rule for grad psi0 vs 7-point rule: agreement O(h^2)
    errs = []
    for n in (4, 8, 16):
        m = build_structured_mesh((0, 0, 1, 1), n, n)
        q = P0Field.from_function(m, lambda x: np.sin(3 * x[:, 0]) * x[:, 1])
        b = assemble_b_scattered(m, q, WAVE)
        x = np.einsum("qi,tik->tqk", QUAD_BARY, m.nodes[m.triangles])
        gpsi = WAVE.gradient(x)  # (t, q, 2)
        loc = -m.areas[:, None] * q.values[:, None] * np.einsum(
            "q,tqk,tik->ti", QUAD_W, gpsi, m.basis_gradients
        )
        ref = np.zeros(m.n_nodes, dtype=complex)
        np.add.at(ref, m.triangles, loc)
        errs.append(np.abs(b - ref).max() / np.abs(ref).max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_b_general_boundary_per_edge():
    m = build_structured_mesh((0, 0, 1, 1), 2, 2)
    g = np.zeros(len(m.boundary_edges), dtype=complex)
    g[0] = 2.0 + 1.0j
    b = assemble_b_general(m, P0Field.zeros(m), WAVE, g)
    a, c = m.boundary_edges[0]
    np.testing.assert_allclose(b[[a, c]], 0.5 * 0.5 * g[0])
    assert np.count_nonzero(b) == 2
    with pytest.raises(IncompatibleFieldError):
        assemble_b_general(m, P0Field.zeros(m), WAVE, g[:3])


def test_b_total_against_adaptive_quadrature():
    m = build_structured_mesh((0, 0, 2.0, 1.0), 6, 3)
    b = assemble_b_total(m, WAVE)
    ref = np.zeros(m.n_nodes, dtype=complex)
    d = np.asarray(WAVE.direction)
    for (a, c), n in zip(m.boundary_edges, m.boundary_normals):
        pa, pc = m.nodes[a], m.nodes[c]
        length = np.linalg.norm(pc - pa)
        for node, shape in ((a, lambda t: 1 - t), (c, lambda t: t)):
            def f(t, part):
                x = (1 - t) * pa + t * pc
                val = 1j * K0 * (d @ n - 1.0) * np.exp(1j * K0 * (x @ d)) * shape(t)
                return getattr(val, part) * length
            ref[node] += quad(f, 0, 1, args=("real",), epsabs=1e-14)[0]
            ref[node] += 1j * quad(f, 0, 1, args=("imag",), epsabs=1e-14)[0]
    np.testing.assert_allclose(b, ref, atol=2e-4 * np.abs(ref).max())


def test_b_total_interior_zero():
    m = build_structured_mesh((0, 0, 1, 1), 4, 4)
    b = assemble_b_total(m, WAVE)
    interior = np.setdiff1d(np.arange(m.n_nodes), m.boundary_edges.ravel())
    assert np.all(b[interior] == 0)
    assert np.all(b[m.boundary_edges.ravel()] != 0)


def test_b_total_tangential_direction():
    # d = (1, 0) is tangent to the bottom and top edges: the data there is -i k0 psi0 only
    m = build_structured_mesh((0, 0, 1, 1), 1, 1)
    wave = PlaneWave(K0, (1.0, 0.0))
    g = total_wave_boundary_data(wave)
    for x, n in [((0.3, 0.0), (0.0, -1.0)), ((0.7, 1.0), (0.0, 1.0))]:
        x, n = np.array([x]), np.array([n])
        assert g(x, n)[0] == pytest.approx(-1j * K0 * wave(x)[0], rel=1e-15)
    # on the right edge d.n = 1 and the two terms cancel
    assert abs(g(np.array([[1.0, 0.4]]), np.array([[1.0, 0.0]]))[0]) < 1e-15


def test_b_total_small_k0():
    m = build_structured_mesh((0, 0, 1, 1), 3, 3)
    mags = [np.abs(assemble_b_total(m, PlaneWave(k, (0.0, 1.0)))).max() for k in (1e-2, 1e-4, 1e-6)]
    assert mags[0] > mags[1] > mags[2]
    assert mags[2] < 1e-5


def test_b_scattered(unit_mesh, rng):
    assert np.all(assemble_b_scattered(unit_mesh, P0Field.zeros(unit_mesh), WAVE) == 0)
    v = np.zeros(unit_mesh.n_triangles)
    v[:4] = rng.uniform(-1, 1, 4)
    b1 = assemble_b_scattered(unit_mesh, P0Field(unit_mesh, 0.01 * v), WAVE)
    b2 = assemble_b_scattered(unit_mesh, P0Field(unit_mesh, 0.02 * v), WAVE)
    assert np.linalg.norm(b2) / np.linalg.norm(b1) == pytest.approx(2.0, rel=1e-13)
    far = np.setdiff1d(np.arange(unit_mesh.n_nodes), unit_mesh.triangles[:4].ravel())
    assert np.all(b1[far] == 0)


# ---------------------------------------------------------------- norms, TV, misfit


def test_norm_1k0(unit_mesh):
    assert norm_1k0(P1Field.zeros(unit_mesh), K0, 0.1) == 0.0
    c = 0.6 + 0.8j
    assert norm_1k0(P1Field(unit_mesh, np.full(unit_mesh.n_nodes, c)), 1.0, 1.0) == pytest.approx(1.0, rel=1e-14)


def test_norm_homogeneous(unit_mesh, rng):
    psi = random_psi(unit_mesh, rng)
    two = P1Field(unit_mesh, 2 * psi.values)
    assert norm_1k0(two, K0, 0.3) == pytest.approx(2 * norm_1k0(psi, K0, 0.3), rel=1e-14)


def test_norm_of_linear_field():
    m = build_structured_mesh((0, 0, 1, 1), 3, 3)
    psi = P1Field(m, m.nodes[:, 0].astype(complex))
    # |x|^2_L2 = 1/3, |grad|^2 = 1
    assert norm_1k0(psi, 2.0, 0.5) == pytest.approx(np.sqrt(4 / 3 + 0.5), rel=1e-13)


def test_tv_fixtures(rng):
    m = build_structured_mesh((0, 0, 1, 1), 1, 1)
    assert discrete_tv(P0Field(m, [0.0, 1.0])) == np.sqrt(2)
    m = build_structured_mesh((0, 0, 1, 1), 5, 3)
    assert discrete_tv(P0Field(m, 0.7)) == 0.0
    q = rng.standard_normal(m.n_triangles)
    assert discrete_tv(P0Field(m, q + 3.0)) == pytest.approx(discrete_tv(P0Field(m, q)), rel=1e-13)


def test_tv_of_step_aligned_with_grid():
    # q = 1 for x > 1/2: jump across one vertical grid line of length 1
    m = build_structured_mesh((0, 0, 1, 1), 8, 8)
    q = P0Field.from_function(m, lambda x: (x[:, 0] > 0.5).astype(float))
    assert discrete_tv(q) == pytest.approx(1.0, rel=1e-14)


def _ramp_tv(n, a, b):
    m = build_structured_mesh((0, 0, 1, 1), n, n)
    return discrete_tv(P0Field.from_function(m, lambda x: a * x[:, 0] + b * x[:, 1]))


def test_tv_ramp_limit():
    # per cell of side h, the barycenter samples of a*x + b*y jump by (a-b)h/3 across
    # the diagonal, (2a+b)h/3 across vertical and (a+2b)h/3 across horizontal faces
    for a, b in [(1.0, 0.0), (0.6, 0.8), (1.0, -1.0)]:
        limit = (np.sqrt(2) * abs(a - b) + abs(2 * a + b) + abs(a + 2 * b)) / 3
        vals = [_ramp_tv(n, a, b) for n in (16, 32, 64, 128)]
        errs = np.abs(np.array(vals) - limit)
        assert errs[-1] < 0.01 * limit
        assert np.all(np.diff(errs) < 0)
        # lower semicontinuity: the limit never falls below the exact TV
        assert limit >= np.hypot(a, b) - 1e-12


@pytest.mark.xfail(strict=True, reason="P0 TV on a fixed-diagonal mesh converges to 1+sqrt(2)/3, not 1")
def test_tv_ramp_converges_to_exact():
    assert _ramp_tv(128, 1.0, 0.0) == pytest.approx(1.0, rel=0.05)


def test_smoothed_tv_gradient(rng):
    m = build_structured_mesh((0, 0, 1, 1), 3, 3)
    q = P0Field(m, rng.standard_normal(m.n_triangles))
    delta = 1e-3
    val, g = smoothed_tv(q, delta)
    assert val >= discrete_tv(q)
    v = rng.standard_normal(m.n_triangles)
    eps = 1e-6
    fp, _ = smoothed_tv(P0Field(m, q.values + eps * v), delta)
    fm, _ = smoothed_tv(P0Field(m, q.values - eps * v), delta)
    assert g @ v == pytest.approx((fp - fm) / (2 * eps), rel=1e-6)


def test_misfit():
    m = build_structured_mesh((0, 0, 1, 1), 3, 3)
    all_t = np.arange(m.n_triangles)
    one = P1Field(m, np.ones(m.n_nodes))
    assert l2_region_misfit(one, None, all_t, 2.0) == pytest.approx(1.0, rel=1e-14)
    assert l2_region_misfit(one, one, all_t, 2.0) == 0.0
    assert l2_region_misfit(one, None, [], 2.0) == 0.0
    other = build_structured_mesh((0, 0, 1, 1), 2, 2)
    with pytest.raises(IncompatibleFieldError):
        l2_region_misfit(one, P1Field.zeros(other), all_t, 1.0)


def test_misfit_exact_mass(rng):
    m = build_structured_mesh((0, 0, 2, 1), 4, 3)
    psi = random_psi(m, rng)
    region = locate_region_elements(m, [(0, 0, 1, 1)])
    # oracle: seven-point quadrature of |psi|^2 (exact for quadratics)
    loc = psi.values[m.triangles[region]]
    vals = np.einsum("qi,ti->tq", QUAD_BARY, loc)
    ref = 0.5 * 3.0 * np.sum(m.areas[region, None] * QUAD_W * np.abs(vals) ** 2)
    assert l2_region_misfit(psi, None, region, 3.0) == pytest.approx(ref, rel=1e-13)


# ---------------------------------------------------------------- CSV


def test_csv_roundtrip(tmp_path, rng):
    m = build_structured_mesh((0, 0, 3.3, 1.1), 3, 2)
    psi = random_psi(m, rng)
    q = P0Field(m, rng.standard_normal(m.n_triangles) * 1e-7)
    write_p1_csv(psi, tmp_path / "p.csv")
    write_p0_csv(q, tmp_path / "q.csv")
    assert np.array_equal(read_p1_csv(m, tmp_path / "p.csv").values, psi.values)
    assert np.array_equal(read_p0_csv(m, tmp_path / "q.csv").values, q.values)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "x,y,re,im"
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "t,barycenter_x,barycenter_y,value"


def test_csv_zero_field(tmp_path, unit_mesh):
    write_p1_csv(P1Field.zeros(unit_mesh), tmp_path / "z.csv")
    rows = (tmp_path / "z.csv").read_text().splitlines()[1:]
    assert all(r.endswith(",0,0") for r in rows)
