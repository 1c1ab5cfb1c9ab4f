"""Stiffness/load assembly oracles and the direct solver contract."""

import numpy as np
import pytest
import scipy.sparse as sp

from gdmopt.assembly import (
    SolverError,
    assemble_load,
    assemble_stiffness,
    cell_source_load,
    check_symmetry,
    solve_pde,
    solve_spd,
)
from gdmopt.gd_core import compute_cd
from gdmopt.mesh import (
    PolytopalMesh,
    build_cartesian_mesh,
    build_lshape_triangulation,
    build_unit_square_triangulation,
)
from gdmopt.schemes import SCHEMES, build_scheme


def make_gd(scheme, m, bc="dirichlet"):
    mesh = (
        build_cartesian_mesh(m) if scheme == "hmm"
        else build_unit_square_triangulation(m)
    )
    return build_scheme(scheme, mesh, bc)


def p1_stiffness_oracle(mesh):
    """Dense conforming-P1 stiffness assembled with explicit loops."""
    n = mesh.n_vertices
    a = np.zeros((n, n))
    for cell in mesh.cells:
        tri = mesh.vertices[cell]
        # Gradients of the barycentric coordinates.
        grads = np.empty((3, 2))
        for i in range(3):
            e = tri[(i + 2) % 3] - tri[(i + 1) % 3]
            grads[i] = [-e[1], e[0]]
        u, v = tri[1] - tri[0], tri[2] - tri[0]
        area = 0.5 * abs(u[0] * v[1] - u[1] * v[0])
        grads /= 2.0 * area
        for i in range(3):
            for j in range(3):
                a[cell[i], cell[j]] += area * grads[i] @ grads[j]
    return a


def test_hmm_single_cell_dirichlet_matrix():
    # Frozen by hand: unit cell, centroid point, all face DOFs clamped.
    # Each of the four sub-triangle gradients is -2*sqrt(2)*v_K*n, so the
    # energy is 4 * (1/4) * 8 * v_K^2.
    mesh = build_cartesian_mesh(1)
    gd = build_scheme("hmm", mesh, "dirichlet")
    a = assemble_stiffness(gd).toarray()
    np.testing.assert_allclose(a, [[8.0]], rtol=1e-14)


def test_p1_m2_interior_row():
    # One interior vertex on the m=2 criss-cross mesh; the classic
    # five-point stencil gives the diagonal value 4.
    gd = make_gd("p1", 2)
    a = assemble_stiffness(gd).toarray()
    np.testing.assert_allclose(a, [[4.0]], rtol=1e-14)


def test_p1_matches_dense_oracle():
    for mesh in (build_unit_square_triangulation(3), build_lshape_triangulation(2)):
        gd = build_scheme("p1", mesh, "dirichlet")
        dense = p1_stiffness_oracle(mesh)[np.ix_(gd.free, gd.free)]
        ours = assemble_stiffness(gd).toarray()
        np.testing.assert_allclose(ours, dense, atol=1e-13)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_stiffness_symmetric_positive_definite(scheme):
    gd = make_gd(scheme, 3)
    a = assemble_stiffness(gd)
    check_symmetry(a)
    eigs = np.linalg.eigvalsh(a.toarray())
    assert eigs[0] > 0.0


def test_anisotropic_diffusion_symmetric():
    tensor = np.array([[2.0, 0.5], [0.5, 1.0]])
    diffusion = lambda pts: np.tile(tensor, (len(pts), 1, 1))
    for scheme in SCHEMES:
        gd = make_gd(scheme, 3)
        a = assemble_stiffness(gd, diffusion=diffusion)
        check_symmetry(a)
        assert np.linalg.eigvalsh(a.toarray())[0] > 0.0


def test_constant_load_hmm():
    # F = 1 loads each free cell DOF with the cell area and leaves face
    # DOFs untouched (piecewise-constant reconstruction).
    gd = make_gd("hmm", 2)
    load = assemble_load(gd, volume_source=lambda pts: np.ones(len(pts)))
    n_cells = gd.mesh.n_cells
    np.testing.assert_allclose(load[:n_cells], 0.25, rtol=1e-14)
    np.testing.assert_allclose(load[n_cells:], 0.0, atol=1e-15)


def test_constant_load_p1():
    # F = 1: each vertex collects one third of its incident cell areas;
    # the single interior vertex of the m=2 mesh touches 6 cells.
    gd = make_gd("p1", 2)
    load = assemble_load(gd, volume_source=lambda pts: np.ones(len(pts)))
    assert load[gd.free][0] == pytest.approx(6.0 / 3.0 / 8.0, rel=1e-13)
    total = load.sum()
    assert total == pytest.approx(1.0, rel=1e-13)


def test_cell_source_load_matches_quadrature():
    gd = make_gd("ncp1", 3)
    rng = np.random.default_rng(8)
    f_cells = rng.standard_normal(gd.mesh.n_cells)
    exact = cell_source_load(gd, f_cells)
    # Quadrature route: sample the cellwise-constant field.
    from gdmopt.analysis import cell_quadrature

    cells, pts, wts = cell_quadrature(gd.mesh, "gauss3")
    quad = gd.value_load(cells, pts, wts, f_cells[cells])
    np.testing.assert_allclose(exact, quad, atol=1e-13)


def test_solve_spd_contract():
    rng = np.random.default_rng(1)
    n = 30
    q = rng.standard_normal((n, n))
    a = sp.csc_matrix(q @ q.T + n * np.eye(n))
    x = rng.standard_normal(n)
    b = a @ x
    np.testing.assert_allclose(solve_spd(a, b), x, rtol=1e-9)
    # Zero right-hand side short-circuits.
    assert np.all(solve_spd(a, np.zeros(n)) == 0.0)
    # Asymmetric input is rejected.
    bad = sp.csc_matrix(q + 10 * np.eye(n))
    with pytest.raises(SolverError):
        solve_spd(bad, b)
    # Singular input is rejected.
    sing = sp.csc_matrix((n, n))
    with pytest.raises(SolverError):
        solve_spd(sing, b)


def test_boundary_source_rejected_under_dirichlet():
    gd = make_gd("p1", 2)
    with pytest.raises(ValueError):
        assemble_load(gd, boundary_source=lambda pts: np.ones(len(pts)))


def test_zero_source_zero_solution():
    for scheme in SCHEMES:
        gd = make_gd(scheme, 3)
        psi = solve_pde(gd, volume_source=lambda pts: np.zeros(len(pts)))
        assert np.all(psi == 0.0)


def test_galerkin_residual():
    for scheme in SCHEMES:
        gd = make_gd(scheme, 4)
        f = lambda pts: np.cos(3.0 * pts[:, 0]) + pts[:, 1]
        a = assemble_stiffness(gd)
        b = gd.restrict(assemble_load(gd, volume_source=f))
        x = solve_spd(a, b)
        assert np.linalg.norm(b - a @ x) <= 1e-10 * np.linalg.norm(b)


def test_poisson_manufactured_convergence():
    # -lap(y) = 2 pi^2 sin(pi x) sin(pi y), zero boundary values.
    exact = lambda pts: np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1])
    source = lambda pts: 2.0 * np.pi ** 2 * exact(pts)
    errs = []
    for m in (4, 8, 16):
        gd = make_gd("p1", m)
        psi = solve_pde(gd, volume_source=source)
        diff = gd.restrict(psi) - exact(gd.dof_points[gd.free])
        errs.append(np.max(np.abs(diff)))
    # Nodal max error decays at second order.
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.08)
    assert errs[2] / errs[1] == pytest.approx(0.25, abs=0.08)


def l2_error(gd, vec, exact):
    from gdmopt.analysis import cell_quadrature

    cells, pts, wts = cell_quadrature(gd.mesh, "gauss7")
    diff = gd.value_at(vec, cells, pts) - exact(pts)
    return np.sqrt(float(wts @ diff ** 2))


def test_neumann_reaction_solve():
    # -lap(y) + y = (2 pi^2 + 1) cos(pi x) cos(pi y) with natural
    # boundary conditions (the exact normal derivative vanishes).
    exact = lambda pts: np.cos(np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 1])
    source = lambda pts: (2.0 * np.pi ** 2 + 1.0) * exact(pts)
    errs = []
    for m in (4, 8, 16):
        gd = make_gd("p1", m, bc="neumann")
        psi = solve_pde(gd, volume_source=source, reaction=1.0)
        errs.append(l2_error(gd, psi, exact))
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.05)
    assert errs[2] / errs[1] == pytest.approx(0.25, abs=0.05)


def test_neumann_boundary_source():
    # y = x^2/2 solves -lap(y) + y = -1 + x^2/2 with flux x on the
    # boundary (only the x=1 edge contributes on the unit square).
    exact = lambda pts: 0.5 * pts[:, 0] ** 2
    source = lambda pts: -1.0 + 0.5 * pts[:, 0] ** 2

    def flux(pts):
        out = np.zeros(len(pts))
        out[np.isclose(pts[:, 0], 1.0)] = 1.0
        out[np.isclose(pts[:, 0], 0.0)] = 0.0
        return out

    errs = []
    for m in (4, 8):
        gd = make_gd("p1", m, bc="neumann")
        psi = solve_pde(gd, volume_source=source, boundary_source=flux,
                        reaction=1.0)
        errs.append(l2_error(gd, psi, exact))
    assert errs[1] <= 0.35 * errs[0]
    assert errs[1] <= 5e-3


@pytest.mark.parametrize("scheme", SCHEMES)
def test_stability_bound(scheme):
    # Solutions of the identity-diffusion problem obey the coercivity
    # bound: gradient norm at most C_D times the L2 norm of the source.
    gd = make_gd(scheme, 4)
    cd = compute_cd(gd)
    rng = np.random.default_rng(42)
    area = gd.mesh.cell_area
    for _ in range(20):
        f_cells = rng.standard_normal(gd.mesh.n_cells)
        psi = solve_pde(gd, extra_load=cell_source_load(gd, f_cells))
        fnorm = np.sqrt(float(area @ f_cells ** 2))
        assert gd.gradient_norm(psi) <= cd * fnorm * (1.0 + 1e-10)
