"""Quadrature rules, discretisation errors, convergence rates and CSV output.

Every integral in the package is evaluated with one of a small set of
named quadrature rules defined on the reference triangle and the
reference square.  The error measures follow a fixed protocol: function
errors use a degree-5 rule for nodal schemes and the one-point centroid
rule for cell-centred schemes (whose reconstructions are piecewise
constant), gradient errors always use one centroid point per region of
constant discrete gradient, and control errors use a degree-2 rule.
Relative errors are reported; numerator and denominator share a rule.
"""

import math

import numpy as np

CSV_HEADER = (
    "level,h,dofs,err_y,err_grad_y,err_p,err_grad_p,err_u,err_u_tilde,"
    "eoc_y,eoc_grad_y,eoc_p,eoc_grad_p,eoc_u,eoc_u_tilde,pdas_iters"
)

DIAGNOSTICS_HEADER = "level,h,c_d,w_d_y,s_d_y,s_d_p"

_SQRT15 = math.sqrt(15.0)


def _triangle_rule(name):
    """Points and weights on the reference triangle (area 1/2)."""
    if name == "midpoint":
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if name == "gauss3":
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return pts, np.full(3, 1 / 6)
    if name == "gauss7":
        # Degree-5 rule: centroid plus two symmetric orbits.
        b1 = (6.0 + _SQRT15) / 21.0
        b2 = (6.0 - _SQRT15) / 21.0
        w1 = (155.0 + _SQRT15) / 2400.0
        w2 = (155.0 - _SQRT15) / 2400.0
        pts = [[1 / 3, 1 / 3]]
        wts = [9.0 / 80.0]
        for b, w in ((b1, w1), (b2, w2)):
            pts += [[b, b], [1.0 - 2.0 * b, b], [b, 1.0 - 2.0 * b]]
            wts += [w, w, w]
        return np.array(pts), np.array(wts)
    if name == "degree10":
        # Collapsed tensor Gauss rule, exact well beyond degree 10; used
        # as an oracle against the production rules.
        u, wu = np.polynomial.legendre.leggauss(8)
        u = 0.5 * (u + 1.0)
        wu = 0.5 * wu
        uu, vv = np.meshgrid(u, u, indexing="ij")
        ww = np.outer(wu, wu) * (1.0 - uu)
        pts = np.column_stack([uu.ravel(), (vv * (1.0 - uu)).ravel()])
        return pts, ww.ravel()
    raise ValueError(f"unknown quadrature rule {name!r}")


_SQUARE_ORDER = {"midpoint": 1, "gauss3": 2, "gauss7": 3, "degree10": 6}


def _square_rule(name):
    """Tensor Gauss points and weights on the reference square (area 1)."""
    try:
        n = _SQUARE_ORDER[name]
    except KeyError:
        raise ValueError(f"unknown quadrature rule {name!r}") from None
    u, wu = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (u + 1.0)
    wu = 0.5 * wu
    uu, vv = np.meshgrid(u, u, indexing="ij")
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    return pts, np.outer(wu, wu).ravel()


class QuadratureRule:
    """Named rule with reference tables for triangles and squares.

    midpoint is exact to degree 1, gauss3 to degree 2, gauss7 to degree 5
    and degree10 to (at least) degree 10, on both reference cells.
    """

    def __init__(self, name):
        self.name = name
        self.triangle = _triangle_rule(name)
        self.square = _square_rule(name)


_RULES = {}


def get_rule(name):
    if name not in _RULES:
        _RULES[name] = QuadratureRule(name)
    return _RULES[name]


def triangle_quadrature(tris, rule):
    """Map a reference rule onto a batch of triangles.

    Parameters
    ----------
    tris : (n, 3, 2) array
        Vertex coordinates, counter-clockwise.
    rule : str

    Returns
    -------
    points : (n * q, 2), weights : (n * q,)
        Flattened per-triangle points and physical weights; the weights
        of each triangle sum to its area.
    """
    tris = np.asarray(tris, dtype=float)
    ref, wref = get_rule(rule).triangle
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    jac = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = (
        tris[:, None, 0, :]
        + ref[None, :, 0, None] * e1[:, None, :]
        + ref[None, :, 1, None] * e2[:, None, :]
    )
    wts = jac[:, None] * wref[None, :]
    return pts.reshape(-1, 2), wts.reshape(-1)


def cell_quadrature(mesh, rule):
    """Quadrature points of a named rule on every cell of a mesh.

    Returns
    -------
    cells : (N,) int
        Owning cell of each point.
    points : (N, 2), weights : (N,)
    """
    k = mesh.cells.shape[1]
    loops = mesh.vertices[mesh.cells]
    if k == 3:
        pts, wts = triangle_quadrature(loops, rule)
        q = len(get_rule(rule).triangle[1])
    else:
        ref, wref = get_rule(rule).square
        e1 = loops[:, 1] - loops[:, 0]
        e2 = loops[:, 3] - loops[:, 0]
        jac = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        pts = (
            loops[:, None, 0, :]
            + ref[None, :, 0, None] * e1[:, None, :]
            + ref[None, :, 1, None] * e2[:, None, :]
        )
        wts = jac[:, None] * wref[None, :]
        pts, wts = pts.reshape(-1, 2), wts.reshape(-1)
        q = len(wref)
    cells = np.repeat(np.arange(mesh.n_cells), q)
    return cells, pts, wts


def segment_quadrature(a, b, npoints=3):
    """Gauss rule on a batch of segments from a to b, both (n, 2) arrays.

    Returns flattened points (n * q, 2), weights (n * q,) summing to the
    segment lengths, and the signed arclength offsets (n * q,) of the
    points from the segment midpoints.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u, wu = np.polynomial.legendre.leggauss(npoints)
    lengths = np.sqrt(((b - a) ** 2).sum(1))
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[:, None, :] + u[None, :, None] * half[:, None, :]
    wts = 0.5 * lengths[:, None] * wu[None, :]
    arc = 0.5 * lengths[:, None] * u[None, :]
    return pts.reshape(-1, 2), wts.reshape(-1), arc.reshape(-1)


class ErrorReport:
    """Relative errors of one optimal-control solve on one mesh."""

    FIELDS = ("err_y", "err_grad_y", "err_p", "err_grad_p", "err_u", "err_u_tilde")

    def __init__(self, level, h, dofs, err_y, err_grad_y, err_p, err_grad_p,
                 err_u, err_u_tilde, pdas_iters):
        self.level = level
        self.h = h
        self.dofs = dofs
        self.err_y = err_y
        self.err_grad_y = err_grad_y
        self.err_p = err_p
        self.err_grad_p = err_grad_p
        self.err_u = err_u
        self.err_u_tilde = err_u_tilde
        self.pdas_iters = pdas_iters

    def errors(self):
        return [getattr(self, f) for f in self.FIELDS]


def _relative(num_sq, den_sq):
    if den_sq <= 0.0:
        raise ValueError("error denominator vanishes")
    return math.sqrt(num_sq / den_sq)


def function_error(gd, vec, exact):
    """Relative L2 distance between the reconstructed function and a target.

    Nodal schemes compare against the target itself under the degree-5
    rule; cell-centred schemes compare cell values against the target
    sampled at the cell points, under the centroid rule.
    """
    if gd.sample_policy == "identity":
        cells, pts, wts = cell_quadrature(gd.mesh, "gauss7")
        target = exact(pts)
    else:
        cells, pts, wts = cell_quadrature(gd.mesh, "midpoint")
        target = exact(gd.mesh.cell_point[cells])
    approx = gd.value_at(vec, cells, pts)
    return _relative(wts @ (approx - target) ** 2, wts @ target ** 2)


def gradient_error(gd, vec, exact_grad):
    """Relative L2 distance between the reconstructed gradient and a target.

    One centroid point per region of constant discrete gradient.
    """
    g = gd.gradient_table(vec)
    target = exact_grad(gd.piece_center)
    w = gd.piece_area
    num = float(w @ ((g - target) ** 2).sum(1))
    den = float(w @ (target ** 2).sum(1))
    return _relative(num, den)


def control_error(mesh, u_cells, exact_u):
    """Relative L2 distance of a piecewise-constant control, degree-2 rule."""
    cells, pts, wts = cell_quadrature(mesh, "gauss3")
    target = exact_u(pts)
    num = wts @ (u_cells[cells] - target) ** 2
    return _relative(float(num), float(wts @ target ** 2))


def postprocessed_error(gd, post, exact_u):
    """Relative L2 distance between the two post-processed controls.

    The denominator is the norm of the exact control under the same rule.
    """
    if post.kind == "cellwise":
        mesh = gd.mesh
        num = float(mesh.cell_area @ (post.tilde_u_h - post.tilde_u) ** 2)
        den = float(mesh.cell_area @ exact_u(mesh.cell_centroid) ** 2)
        return _relative(num, den)
    cells, pts, wts = cell_quadrature(gd.mesh, "gauss7")
    diff = post.tilde_u_h(cells, pts) - post.tilde_u(cells, pts)
    den = float(wts @ exact_u(pts) ** 2)
    return _relative(float(wts @ diff ** 2), den)


def compute_errors(gd, exact, y_vec, p_vec, u_cells, post, level=0, pdas_iters=0):
    """Assemble the full error report for one solved problem.

    Parameters
    ----------
    gd : gradient discretisation used for the solve
    exact : object with callables y, grad_y, p, grad_p, u on (n, 2) arrays
    y_vec, p_vec : DOF vectors of state and adjoint
    u_cells : (n_cells,) control values
    post : PostprocessedControls
    """
    return ErrorReport(
        level=level,
        h=gd.mesh.h,
        dofs=gd.n_free,
        err_y=function_error(gd, y_vec, exact.y),
        err_grad_y=gradient_error(gd, y_vec, exact.grad_y),
        err_p=function_error(gd, p_vec, exact.p),
        err_grad_p=gradient_error(gd, p_vec, exact.grad_p),
        err_u=control_error(gd.mesh, u_cells, exact.u),
        err_u_tilde=postprocessed_error(gd, post, exact.u),
        pdas_iters=pdas_iters,
    )


def compute_eoc(hs, errors):
    """Experimental orders of convergence between consecutive mesh levels.

    Entry i holds log(e[i-1]/e[i]) / log(h[i-1]/h[i]); the first entry is
    nan because it has no predecessor.
    """
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    out = np.full(len(hs), np.nan)
    for i in range(1, len(hs)):
        if errors[i - 1] > 0.0 and errors[i] > 0.0:
            out[i] = math.log(errors[i - 1] / errors[i]) / math.log(hs[i - 1] / hs[i])
    return out


def eoc_slope(hs, errors):
    """Least-squares slope of log(error) against log(h) over a level window."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def _fmt(x):
    return f"{x:.9e}"


def render_csv(reports, failure=None):
    """Render study reports as CSV text (10 significant digits).

    failure, if given, is a (level, h) pair appended as a trailing marker
    row whose err_y field carries the literal FAILED.
    """
    lines = [CSV_HEADER]
    hs = [r.h for r in reports]
    eocs = [compute_eoc(hs, [getattr(r, f) for r in reports]) for f in ErrorReport.FIELDS]
    for i, r in enumerate(reports):
        row = [str(r.level), _fmt(r.h), str(r.dofs)]
        row += [_fmt(e) for e in r.errors()]
        row += ["" if math.isnan(col[i]) else _fmt(col[i]) for col in eocs]
        row.append(str(r.pdas_iters))
        lines.append(",".join(row))
    if failure is not None:
        level, h = failure
        row = [str(level), "" if h is None else _fmt(h), "", "FAILED"]
        row += [""] * 11
        row.append("")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def render_diagnostics_csv(rows):
    """Render diagnostics rows (level, h, c_d, w_d_y, s_d_y, s_d_p) as CSV."""
    lines = [DIAGNOSTICS_HEADER]
    for level, h, cd, wd, sdy, sdp in rows:
        lines.append(
            ",".join([str(level), _fmt(h), _fmt(cd), _fmt(wd), _fmt(sdy), _fmt(sdp)])
        )
    return "\n".join(lines) + "\n"


def emit_csv(reports, out, failure=None):
    """Write the study CSV to a path or file handle; returns the text."""
    text = render_csv(reports, failure=failure)
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def emit_diagnostics_csv(rows, out):
    """Write the diagnostics CSV to a path or file handle; returns the text."""
    text = render_diagnostics_csv(rows)
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
