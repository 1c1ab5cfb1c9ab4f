"""Box-constrained linear-quadratic optimal control on gradient discretisations.

The discrete problem minimises

    1/2 ||reconstructed state - target||^2 + alpha/2 ||u - u_d||^2
        (+ beta/2 ||u_b||^2 for Neumann boundary control)

over piecewise-constant controls confined to a box, subject to the
discrete elliptic state equation.  Two independent solvers are provided:
a primal-dual active-set iteration that solves one symmetric block
system in (state, adjoint) per active-set guess, and a dense
projected-gradient reference used to cross-check it on small meshes.
"""

import math

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analysis import cell_quadrature, segment_quadrature
from .assembly import SolverError, assemble_load, check_symmetry

DEFAULT_PDAS_MAX_ITER = 100
DEFAULT_PDAS_TOL = 1e-10


def project_box(values, lower, upper):
    """Pointwise projection onto the box [lower, upper]."""
    if lower > upper:
        raise ValueError("empty box: lower bound exceeds upper bound")
    return np.clip(values, lower, upper)


def project_onto_cells(mesh, fn, rule="gauss7"):
    """Cell averages of a function under a named quadrature rule."""
    cells, pts, wts = cell_quadrature(mesh, rule)
    vals = np.asarray(fn(pts), dtype=float)
    sums = np.bincount(cells, wts * vals, mesh.n_cells)
    return sums / np.bincount(cells, wts, mesh.n_cells)


def project_onto_faces(mesh, fn, face_ids, npoints=3):
    """Averages of a function along the given faces."""
    a = mesh.vertices[mesh.faces[face_ids, 0]]
    b = mesh.vertices[mesh.faces[face_ids, 1]]
    pts, wts, _ = segment_quadrature(a, b, npoints)
    faces = np.repeat(np.arange(len(face_ids)), npoints)
    vals = np.asarray(fn(pts), dtype=float)
    return np.bincount(faces, wts * vals, len(face_ids)) / np.bincount(
        faces, wts, len(face_ids)
    )


class OptimalControlProblem:
    """Data of one discrete control problem on a gradient discretisation.

    Parameters
    ----------
    gd : GradientDiscretisation
    alpha : float
        Distributed control cost weight, positive.
    bounds : (float, float)
        Box constraints; infinite entries disable a side.
    y_target : callable
        Desired state, evaluated at quadrature points.
    volume_source, boundary_source : callables or None
        Fixed sources of the state equation (boundary only for Neumann).
    control_target : callable or None
        Distributed control shift u_d (defaults to zero).
    diffusion : callable or None
        2x2 diffusion tensor field; None means the identity.
    reaction : float
        Zero-order coefficient; must be positive for Neumann problems.
    distributed : bool
        Enable the piecewise-constant control on cells (default).
    boundary_control : bool
        Enable a piecewise-constant control on boundary faces (Neumann).
    beta : float
        Boundary control cost weight, positive when boundary_control.
    """

    def __init__(self, gd, alpha, bounds, y_target, volume_source=None,
                 control_target=None, diffusion=None, reaction=0.0,
                 distributed=True, boundary_control=False, beta=1.0,
                 boundary_source=None):
        lower, upper = float(bounds[0]), float(bounds[1])
        if not alpha > 0.0:
            raise ValueError("alpha must be positive")
        if lower > upper:
            raise ValueError("empty box: lower bound exceeds upper bound")
        if gd.bc == "neumann" and not reaction > 0.0:
            raise ValueError("Neumann problems need a positive reaction coefficient")
        if gd.bc == "dirichlet" and (boundary_control or boundary_source is not None):
            raise ValueError("boundary data supplied under Dirichlet conditions")
        if boundary_control and not beta > 0.0:
            raise ValueError("beta must be positive with boundary control")
        if not (distributed or boundary_control):
            raise ValueError("at least one control family must be enabled")
        self.distributed = distributed
        self.gd = gd
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.lower = lower
        self.upper = upper
        self.y_target = y_target
        self.volume_source = volume_source
        self.control_target = control_target
        self.diffusion = diffusion
        self.reaction = float(reaction)
        self.boundary_control = boundary_control
        self.boundary_source = boundary_source
        self._asm = None

    def assembled(self):
        if self._asm is None:
            self._asm = _Assembly(self)
        return self._asm


class _Assembly:
    """Matrices and vectors of a control problem, restricted to free DOFs."""

    def __init__(self, problem):
        gd = problem.gd
        self.stiffness = gd.restrict_matrix(
            gd.stiffness(diffusion=problem.diffusion, reaction=problem.reaction)
        )
        check_symmetry(self.stiffness)
        self.mass = gd.restrict_matrix(gd.mass_matrix())
        self.coupling = gd.cell_coupling()[gd.free].tocsr()
        self.cell_weight = gd.mesh.cell_area
        self.source_load = gd.restrict(
            assemble_load(gd, problem.volume_source,
                          problem.boundary_source if gd.bc == "neumann" else None)
        )
        self.target_load = gd.restrict(assemble_load(gd, problem.y_target))
        if problem.control_target is None:
            self.control_target_cells = np.zeros(gd.mesh.n_cells)
        else:
            self.control_target_cells = project_onto_cells(
                gd.mesh, problem.control_target
            )
        if problem.boundary_control:
            self.b_coupling = gd.boundary_coupling()[gd.free].tocsr()
            self.face_weight = gd.mesh.face_length[gd.boundary_face_ids]
        else:
            self.b_coupling = None
            self.face_weight = None


class KKTSolution:
    """State/adjoint DOF vectors and cellwise (facewise) controls."""

    def __init__(self, y, p, u, u_b, iterations, active_lower, active_upper):
        self.y = y
        self.p = p
        self.u = u
        self.u_b = u_b
        self.iterations = iterations
        self.active_lower = active_lower
        self.active_upper = active_upper


def _solve_symmetric(a, b, tol):
    """Direct solve of a symmetric (possibly indefinite) sparse system
    with iterative refinement against the residual."""
    try:
        lu = spla.splu(sp.csc_matrix(a))
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorisation failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("sparse solve produced non-finite values")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    for _ in range(2):
        r = b - a @ x
        if np.linalg.norm(r) <= tol * bnorm:
            break
        x = x + lu.solve(r)
    return x


def cell_adjoint_averages(problem, p_full):
    """Exact cell averages of the reconstructed adjoint."""
    return problem.gd.value_center @ p_full


def face_adjoint_averages(problem, p_full):
    """Exact boundary-face averages of the adjoint trace."""
    return problem.gd.trace_mid @ p_full


def solve_kkt_pdas(problem, max_iter=DEFAULT_PDAS_MAX_ITER, tol=DEFAULT_PDAS_TOL):
    """Primal-dual active-set solve of the discrete optimality system.

    Each iteration pins the control at its bounds on the current active
    sets, eliminates it elsewhere through the optimality relation, and
    solves one symmetric block system in (state, adjoint).  The active
    sets are then refreshed from the unclamped candidate control;
    termination is reached when they repeat.  The returned control
    satisfies the discrete projection identity by construction.
    """
    gd = problem.gd
    asm = problem.assembled()
    alpha, lower, upper = problem.alpha, problem.lower, problem.upper
    n = gd.n_free
    n_cells = gd.mesh.n_cells
    ud = asm.control_target_cells
    k, m, b_mat = asm.stiffness, asm.mass, asm.coupling
    w = asm.cell_weight

    lo = np.zeros(n_cells, dtype=bool)
    hi = np.zeros(n_cells, dtype=bool)
    if problem.boundary_control:
        nb = len(asm.face_weight)
        blo = np.zeros(nb, dtype=bool)
        bhi = np.zeros(nb, dtype=bool)

    for it in range(1, max_iter + 1):
        rhs_state = asm.source_load
        s = sp.csr_matrix((n, n))
        if problem.distributed:
            inactive = ~(lo | hi)
            b_in = b_mat[:, inactive]
            s = (b_in @ sp.diags(1.0 / (alpha * w[inactive])) @ b_in.T).tocsr()
            rhs_state = rhs_state + b_in @ ud[inactive]
            if lo.any():
                rhs_state = rhs_state + b_mat[:, lo] @ np.full(lo.sum(), lower)
            if hi.any():
                rhs_state = rhs_state + b_mat[:, hi] @ np.full(hi.sum(), upper)
        if problem.boundary_control:
            b_inactive = ~(blo | bhi)
            bb_in = asm.b_coupling[:, b_inactive]
            s = s + bb_in @ sp.diags(
                1.0 / (problem.beta * asm.face_weight[b_inactive])
            ) @ bb_in.T
            if blo.any():
                rhs_state = rhs_state + asm.b_coupling[:, blo] @ np.full(
                    blo.sum(), lower
                )
            if bhi.any():
                rhs_state = rhs_state + asm.b_coupling[:, bhi] @ np.full(
                    bhi.sum(), upper
                )
        block = sp.bmat([[m, -k], [-k, -s]], format="csc")
        rhs = np.concatenate([asm.target_load, -rhs_state])
        sol = _solve_symmetric(block, rhs, tol)
        y, p = sol[:n], sol[n:]

        p_full = gd.expand(p)
        done = True
        if problem.distributed:
            candidate = ud - cell_adjoint_averages(problem, p_full) / alpha
            new_lo = candidate < lower
            new_hi = candidate > upper
            done = bool(np.array_equal(new_lo, lo) and np.array_equal(new_hi, hi))
            lo, hi = new_lo, new_hi
        if problem.boundary_control:
            b_candidate = -face_adjoint_averages(problem, p_full) / problem.beta
            new_blo = b_candidate < lower
            new_bhi = b_candidate > upper
            done = done and bool(
                np.array_equal(new_blo, blo) and np.array_equal(new_bhi, bhi)
            )
            blo, bhi = new_blo, new_bhi
        if done:
            u = project_box(candidate, lower, upper) if problem.distributed else None
            u_b = None
            if problem.boundary_control:
                u_b = project_box(b_candidate, lower, upper)
            return KKTSolution(gd.expand(y), p_full, u, u_b, it, lo, hi)
    raise SolverError(f"active-set iteration did not settle in {max_iter} steps")


def solve_kkt_reference(problem, tol=1e-12, max_iter=200000):
    """Projected-gradient reference solve of the same optimality system.

    Assembles the control-to-state map densely (only sensible on meshes
    with a few hundred DOFs) and runs a fixed-step projected gradient in
    the control-cost metric to stationarity ``tol``.  Shares no code path
    with the active-set solver beyond problem assembly.
    """
    gd = problem.gd
    if gd.n_dofs > 500:
        raise ValueError("reference solver is restricted to at most 500 DOFs")
    asm = problem.assembled()
    alpha, lower, upper = problem.alpha, problem.lower, problem.upper
    k = asm.stiffness.toarray()
    m = asm.mass.toarray()
    couplings, weights, targets = [], [], []
    if problem.distributed:
        couplings.append(asm.coupling.toarray())
        weights.append(alpha * asm.cell_weight)
        targets.append(asm.control_target_cells)
    if problem.boundary_control:
        couplings.append(asm.b_coupling.toarray())
        weights.append(problem.beta * asm.face_weight)
        targets.append(np.zeros(len(asm.face_weight)))
    b_all = np.hstack(couplings)
    w_all = np.concatenate(weights)
    u_target = np.concatenate(targets)

    cho = la.cho_factor(k)
    y0 = la.cho_solve(cho, asm.source_load)
    state_map = la.cho_solve(cho, b_all)
    hess = state_map.T @ (m @ state_map)
    lam = la.eigh(hess, np.diag(w_all), eigvals_only=True)[-1]
    step = 1.0 / (1.0 + lam)

    u = project_box(u_target, lower, upper)
    for it in range(1, max_iter + 1):
        y = y0 + state_map @ u
        p = la.cho_solve(cho, m @ y - asm.target_load)
        grad = (b_all.T @ p) / w_all + (u - u_target)
        candidate = project_box(u_target - (b_all.T @ p) / w_all, lower, upper)
        if np.max(np.abs(u - candidate)) <= tol * max(1.0, np.max(np.abs(u))):
            u = candidate
            break
        u = project_box(u - step * grad, lower, upper)
    else:
        raise SolverError("projected gradient did not reach stationarity")

    n_cells = gd.mesh.n_cells if problem.distributed else 0
    u_cells = u[:n_cells] if problem.distributed else None
    u_b = u[n_cells:] if problem.boundary_control else None
    y = y0 + state_map @ u
    p = la.cho_solve(cho, m @ y - asm.target_load)
    return KKTSolution(
        gd.expand(y), gd.expand(p), u_cells, u_b, it,
        u_cells <= lower if problem.distributed else None,
        u_cells >= upper if problem.distributed else None,
    )


class PostprocessedControls:
    """Post-processed control pair; cellwise arrays or pointwise closures.

    kind == "cellwise": tilde_u and tilde_u_h are per-cell arrays.
    kind == "pointwise": both are callables (cells, points) -> values.
    """

    def __init__(self, kind, tilde_u, tilde_u_h):
        self.kind = kind
        self.tilde_u = tilde_u
        self.tilde_u_h = tilde_u_h


def postprocess(problem, solution, adjoint):
    """Projection-formula controls from the exact and discrete adjoints.

    ``adjoint`` is the exact adjoint closure.  Nodal schemes yield
    pointwise closures clamp(cell_avg(u_d) - adjoint/alpha); cell-centred
    schemes yield cellwise values with the exact adjoint sampled at cell
    centroids, and their discrete post-processed control coincides with
    the optimal control itself.
    """
    gd = problem.gd
    asm = problem.assembled()
    alpha, lower, upper = problem.alpha, problem.lower, problem.upper
    ud = asm.control_target_cells
    if gd.sample_policy == "cell_point":
        exact_vals = np.asarray(adjoint(gd.mesh.cell_centroid), dtype=float)
        tilde_u = project_box(ud - exact_vals / alpha, lower, upper)
        p_cells = cell_adjoint_averages(problem, solution.p)
        tilde_u_h = project_box(ud - p_cells / alpha, lower, upper)
        return PostprocessedControls("cellwise", tilde_u, tilde_u_h)

    def tilde_u(cells, pts):
        return project_box(
            ud[cells] - np.asarray(adjoint(pts), dtype=float) / alpha, lower, upper
        )

    def tilde_u_h(cells, pts):
        return project_box(
            ud[cells] - gd.value_at(solution.p, cells, pts) / alpha, lower, upper
        )

    return PostprocessedControls("pointwise", tilde_u, tilde_u_h)


def variational_inequality_gap(problem, solution, trial_cells, trial_faces=None):
    """Inner product of the control-equation residual with (trial - u).

    Nonnegative (up to solver tolerance) for every admissible trial
    control exactly when the discrete variational inequality holds.
    """
    asm = problem.assembled()
    gap = 0.0
    if problem.distributed:
        d = cell_adjoint_averages(problem, solution.p)
        w = asm.cell_weight
        gap += float(
            w @ (
                (d + problem.alpha * (solution.u - asm.control_target_cells))
                * (trial_cells - solution.u)
            )
        )
    if problem.boundary_control and trial_faces is not None:
        t = face_adjoint_averages(problem, solution.p)
        gap += float(
            asm.face_weight @ ((t + problem.beta * solution.u_b) * (trial_faces - solution.u_b))
        )
    return gap


def projection_identity_gap(problem, solution):
    """Max-norm residual of the discrete projection identity."""
    asm = problem.assembled()
    gap = 0.0
    if problem.distributed:
        d = cell_adjoint_averages(problem, solution.p)
        candidate = project_box(
            asm.control_target_cells - d / problem.alpha, problem.lower, problem.upper
        )
        gap = float(np.max(np.abs(solution.u - candidate)))
    if problem.boundary_control:
        t = face_adjoint_averages(problem, solution.p)
        b_candidate = project_box(-t / problem.beta, problem.lower, problem.upper)
        gap = max(gap, float(np.max(np.abs(solution.u_b - b_candidate))))
    return gap
