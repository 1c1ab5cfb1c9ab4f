"""Builders for the three gradient discretisations.

* conforming P1: DOFs at vertices, continuous piecewise-affine functions;
* non-conforming P1: DOFs at face midpoints, broken affine functions
  continuous at the midpoints (Crouzeix-Raviart);
* hybrid cell/face scheme ("hmm"): one DOF per cell and per face, a
  piecewise-constant function reconstruction and a stabilised
  cell-plus-face gradient that is constant on the sub-triangle joining
  each face to the cell point.

All three produce a GradientDiscretisation with identical downstream
interfaces; Dirichlet conditions mask the boundary DOFs of each scheme.
"""

import numpy as np
import scipy.sparse as sp

from .gd_core import GradientDiscretisation

SCHEMES = ("p1", "ncp1", "hmm")


def build_scheme(name, mesh, bc):
    if name == "p1":
        return make_conforming_p1(mesh, bc)
    if name == "ncp1":
        return make_ncp1(mesh, bc)
    if name == "hmm":
        return make_hmm(mesh, bc)
    raise ValueError(f"unknown scheme {name!r}")


def _barycentric_gradients(mesh):
    """Gradients of the three barycentric coordinates per triangle,
    shape (n_cells, 3, 2); entry i is the gradient of the coordinate
    attached to local vertex i."""
    tri = mesh.vertices[mesh.cells]
    grads = np.empty((mesh.n_cells, 3, 2))
    for i in range(3):
        e = tri[:, (i + 2) % 3] - tri[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= (2.0 * mesh.cell_area)[:, None, None]
    return grads


def _require_triangles(mesh, name):
    if mesh.cells.shape[1] != 3:
        raise ValueError(f"{name} requires a simplicial mesh")


def _csr(rows, cols, vals, shape):
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def _first_owner_halffaces(mesh):
    """Index of the first-owner halfface of every face."""
    hf_face = mesh.cell_faces.ravel()
    first = mesh.cell_face_sign.ravel() == 1
    out = np.empty(mesh.n_faces, dtype=int)
    out[hf_face[first]] = np.flatnonzero(first)
    return out


def make_conforming_p1(mesh, bc="dirichlet"):
    """Conforming piecewise-affine scheme with vertex DOFs."""
    _require_triangles(mesh, "conforming p1")
    n_dofs = mesh.n_vertices
    grads = _barycentric_gradients(mesh)

    rows = np.repeat(np.arange(mesh.n_cells), 3)
    cols = mesh.cells.ravel()
    shape = (mesh.n_cells, n_dofs)
    value_center = _csr(rows, cols, np.full(3 * mesh.n_cells, 1.0 / 3.0), shape)
    slope_x = _csr(rows, cols, grads[:, :, 0].ravel(), shape)
    slope_y = _csr(rows, cols, grads[:, :, 1].ravel(), shape)

    n_hf = 3 * mesh.n_cells
    hf_face = mesh.cell_faces.ravel()
    ends = mesh.faces[hf_face]  # (n_hf, 2) vertex ids in stored face order
    hrows = np.repeat(np.arange(n_hf), 2)
    hcols = ends.ravel()
    inv_len = 1.0 / mesh.face_length[hf_face]
    hf_mid = _csr(hrows, hcols, np.full(2 * n_hf, 0.5), (n_hf, n_dofs))
    slope_vals = np.column_stack([-inv_len, inv_len]).ravel()
    hf_slope = _csr(hrows, hcols, slope_vals, (n_hf, n_dofs))

    first = _first_owner_halffaces(mesh)[mesh.boundary_faces]
    mask = np.zeros(n_dofs, dtype=bool)
    if bc == "dirichlet":
        mask = mesh.boundary_vertices.copy()
    return GradientDiscretisation(
        mesh, "p1", bc, n_dofs, mesh.vertices.copy(), mask,
        value_center, slope_x, slope_y,
        np.arange(mesh.n_cells), mesh.vertices[mesh.cells], slope_x, slope_y,
        hf_mid, hf_slope, hf_mid[first], hf_slope[first],
        grad_matches_value_slope=True, sample_policy="identity",
    )


def make_ncp1(mesh, bc="dirichlet"):
    """Non-conforming piecewise-affine scheme with face-midpoint DOFs."""
    _require_triangles(mesh, "non-conforming p1")
    n_dofs = mesh.n_faces
    grads = _barycentric_gradients(mesh)
    # Basis attached to local face i (joining vertices i, i+1) is
    # 1 - 2 * lambda_{i+2}; its gradient is -2 grad(lambda_{i+2}).
    basis_grad = -2.0 * grads[:, [2, 0, 1], :]

    rows = np.repeat(np.arange(mesh.n_cells), 3)
    cols = mesh.cell_faces.ravel()
    shape = (mesh.n_cells, n_dofs)
    value_center = _csr(rows, cols, np.full(3 * mesh.n_cells, 1.0 / 3.0), shape)
    slope_x = _csr(rows, cols, basis_grad[:, :, 0].ravel(), shape)
    slope_y = _csr(rows, cols, basis_grad[:, :, 1].ravel(), shape)

    n_hf = 3 * mesh.n_cells
    hf_face = mesh.cell_faces.ravel()
    hf_mid = _csr(np.arange(n_hf), hf_face, np.ones(n_hf), (n_hf, n_dofs))
    # Tangential slope of the cell-side function along the face: all
    # three cell basis functions contribute.
    tang = mesh.face_tangent[hf_face].reshape(mesh.n_cells, 3, 2)
    svals = np.einsum("cjd,cid->cij", basis_grad, tang)  # (cell, face i, dof j)
    hrows = np.repeat(np.arange(n_hf), 3)
    hcols = np.tile(mesh.cell_faces[:, None, :], (1, 3, 1)).ravel()
    hf_slope = _csr(hrows, hcols, svals.ravel(), (n_hf, n_dofs))

    first = _first_owner_halffaces(mesh)[mesh.boundary_faces]
    mask = np.zeros(n_dofs, dtype=bool)
    if bc == "dirichlet":
        mask = mesh.boundary_faces.copy()
    return GradientDiscretisation(
        mesh, "ncp1", bc, n_dofs, mesh.face_center.copy(), mask,
        value_center, slope_x, slope_y,
        np.arange(mesh.n_cells), mesh.vertices[mesh.cells], slope_x, slope_y,
        hf_mid, hf_slope, hf_mid[first], hf_slope[first],
        grad_matches_value_slope=True, sample_policy="identity",
    )


def make_hmm(mesh, bc="dirichlet"):
    """Hybrid cell/face scheme with piecewise-constant reconstruction.

    The gradient on the sub-triangle between a face and the cell point
    is the cell-average gradient plus a stabilisation proportional to
    the deviation of the face value from the affine prediction; the
    stabilisation weight sqrt(2) is the square root of the space
    dimension.
    """
    k = mesh.cells.shape[1]
    n_cells, n_faces = mesh.n_cells, mesh.n_faces
    n_dofs = n_cells + n_faces
    dof_points = np.vstack([mesh.cell_point, mesh.face_center])

    normals = mesh.outward_normals()  # (n_c, k, 2)
    ell = mesh.face_length[mesh.cell_faces]  # (n_c, k)
    dx = mesh.face_center[mesh.cell_faces] - mesh.cell_point[:, None, :]
    d = np.sum(dx * normals, axis=2)
    if np.any(d <= 0.0):
        raise ValueError("cell point outside its cell: distances must be positive")

    # Cell-average gradient coefficients: grad = sum_j coef[c, j] v_(face j).
    coef = ell[:, :, None] * normals / mesh.cell_area[:, None, None]
    # proj[c, i, j] = coef[c, j] . (face_center_i - cell_point)
    proj = np.einsum("cjd,cid->cij", coef, dx)
    stab = np.sqrt(2.0) / d  # (n_c, k)
    eye = np.eye(k)[None, :, :]
    face_coef = (
        coef[:, None, :, :]
        + stab[:, :, None, None] * (eye - proj)[:, :, :, None] * normals[:, :, None, :]
    )  # (cell, piece i, face j, xy)
    cell_coef = -stab[:, :, None] * normals  # (cell, piece i, xy)

    n_pieces = n_cells * k
    prow_face = np.repeat(np.arange(n_pieces), k)
    pcol_face = np.tile(mesh.cell_faces[:, None, :], (1, k, 1)).ravel() + n_cells
    prow_cell = np.arange(n_pieces)
    pcol_cell = np.repeat(np.arange(n_cells), k)
    shape = (n_pieces, n_dofs)
    grad_x = _csr(
        np.concatenate([prow_face, prow_cell]),
        np.concatenate([pcol_face, pcol_cell]),
        np.concatenate([face_coef[..., 0].ravel(), cell_coef[..., 0].ravel()]),
        shape,
    )
    grad_y = _csr(
        np.concatenate([prow_face, prow_cell]),
        np.concatenate([pcol_face, pcol_cell]),
        np.concatenate([face_coef[..., 1].ravel(), cell_coef[..., 1].ravel()]),
        shape,
    )

    # Pieces: triangle joining the cell point to each face, oriented ccw.
    ends = mesh.faces[mesh.cell_faces]  # (n_c, k, 2)
    flip = mesh.cell_face_sign < 0
    ends[flip] = ends[flip][:, ::-1]
    piece_tri = np.empty((n_pieces, 3, 2))
    piece_tri[:, 0] = np.repeat(mesh.cell_point, k, axis=0)
    piece_tri[:, 1] = mesh.vertices[ends[:, :, 0].ravel()]
    piece_tri[:, 2] = mesh.vertices[ends[:, :, 1].ravel()]

    cshape = (n_cells, n_dofs)
    value_center = _csr(np.arange(n_cells), np.arange(n_cells), np.ones(n_cells), cshape)
    zero_c = sp.csr_matrix(cshape)
    hf_mid = _csr(
        np.arange(n_pieces), np.repeat(np.arange(n_cells), k), np.ones(n_pieces), shape
    )
    hf_slope = sp.csr_matrix(shape)

    bids = np.flatnonzero(mesh.boundary_faces)
    trace_mid = _csr(np.arange(len(bids)), n_cells + bids, np.ones(len(bids)),
                     (len(bids), n_dofs))
    trace_slope = sp.csr_matrix((len(bids), n_dofs))

    mask = np.zeros(n_dofs, dtype=bool)
    if bc == "dirichlet":
        mask[n_cells + bids] = True
    return GradientDiscretisation(
        mesh, "hmm", bc, n_dofs, dof_points, mask,
        value_center, zero_c, zero_c,
        np.repeat(np.arange(n_cells), k), piece_tri, grad_x, grad_y,
        hf_mid, hf_slope, trace_mid, trace_slope,
        grad_matches_value_slope=False, sample_policy="cell_point",
    )
