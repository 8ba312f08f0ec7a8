"""Interior-penalty DG discretization of -laplace(u) = f on the unit square.

Piecewise-bilinear (Q1) elements on the structured mesh from the mesh module,
homogeneous Dirichlet data imposed weakly through boundary edge terms.  The
bilinear form is

    sum_E int_E grad(w).grad(v)
    - sum_edges int ({grad(w).n}[v] - eps {grad(v).n}[w] - p [w][v])

with eps = -1 the symmetric variant (SIPG) and eps = +1 the non-symmetric one
(NIPG).  Boundary edges use full traces in place of averages/jumps.  The
penalty weight is p = sigma/(h/2): the length scale is the element half-width,
which keeps the operator definite down to sigma = 1 (with p = sigma/h the
SIPG sigma = 1 diagonal degenerates and the solve breaks down).

Everything on the uniform grid is assembled from a handful of reference
matrices: one 4x4 volume block plus one 8x8 coupling block per interior edge
orientation and one 4x4 block per boundary face, scattered with index
arithmetic.
"""

import numpy as np
import scipy.sparse as sp

from . import symbolic
from .mesh import gauss_rule
from .sparse import BreakdownError, CsrMatrix, bicgstab, spmv


class SourceEvaluationError(RuntimeError):
    pass


class SolverConvergenceError(RuntimeError):
    """Linear solve failed; carries the SolveReport."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


# reference square (-1,1)^2, corners counterclockwise from bottom-left
_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


def shape_values(xh, yh):
    """The four bilinear shape functions at reference coordinates.

    Returns an array of shape (4,) + broadcast(xh, yh).
    """
    xh = np.asarray(xh, dtype=np.float64)
    yh = np.asarray(yh, dtype=np.float64)
    return np.stack([(1.0 + cx * xh) * (1.0 + cy * yh) / 4.0 for cx, cy in _CORNERS])


def shape_gradients(xh, yh):
    """Reference-coordinate gradients (d/dxh, d/dyh) of the shape functions."""
    xh = np.asarray(xh, dtype=np.float64)
    yh = np.asarray(yh, dtype=np.float64)
    gx = np.stack([cx * (1.0 + cy * yh) / 4.0 + 0.0 * xh for cx, cy in _CORNERS])
    gy = np.stack([cy * (1.0 + cx * xh) / 4.0 + 0.0 * yh for cx, cy in _CORNERS])
    return gx, gy


def local_stiffness():
    """int_E grad(psi_i).grad(psi_j); scale-invariant, computed on (-1,1)^2."""
    g = gauss_rule(2)
    xh = g.points[:, None] + 0.0 * g.points[None, :]
    yh = g.points[None, :] + 0.0 * g.points[:, None]
    gx, gy = shape_gradients(xh, yh)
    w = g.weights[:, None] * g.weights[None, :]
    return np.einsum("ab,iab,jab->ij", w, gx, gx) + np.einsum("ab,iab,jab->ij", w, gy, gy)


def local_mass(h):
    """int_E psi_i psi_j on an element of side h: (h^2/4) * M_ref."""
    if not h > 0:
        raise ValueError("element side must be positive")
    g = gauss_rule(2)
    xh = g.points[:, None] + 0.0 * g.points[None, :]
    yh = g.points[None, :] + 0.0 * g.points[:, None]
    psi = shape_values(xh, yh)
    w = g.weights[:, None] * g.weights[None, :]
    return (h * h / 4.0) * np.einsum("ab,iab,jab->ij", w, psi, psi)


class DgConfig:
    """Discretization parameters: epsilon in {-1,+1}, penalty sigma > 0, grid n."""

    def __init__(self, epsilon, sigma, n):
        if epsilon not in (-1, 1):
            raise ValueError("epsilon must be -1 (SIPG) or +1 (NIPG)")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        if int(n) < 2:
            raise ValueError("n must be at least 2")
        self.epsilon = int(epsilon)
        self.sigma = float(sigma)
        self.n = int(n)

    def __repr__(self):
        return f"DgConfig(epsilon={self.epsilon}, sigma={self.sigma}, n={self.n})"


class DgOperators:
    """Assembled operators for one (mesh, config, source) triple.

    A        system matrix (4n^2 x 4n^2)
    load     right-hand side int f psi_i per DOF
    proj_coeffs  coefficients of the element-wise L2 projection of f
    M_blk    block-diagonal global mass matrix
    K_blk    block-diagonal broken-stiffness matrix
    B, c     element mass-error operator (n^2 x 4n^2) and data vector, B = S.A
    J        unweighted interior-edge jump form sum int [w][v]
    """

    def __init__(self, mesh, cfg, A, load, proj_coeffs, M_blk, K_blk, B, c, J):
        self.mesh = mesh
        self.cfg = cfg
        self.A = A
        self.load = load
        self.proj_coeffs = proj_coeffs
        self.M_blk = M_blk
        self.K_blk = K_blk
        self.B = B
        self.c = c
        self.J = J


class DgFunction:
    """DG function: coefficient vector (4 per element) on a mesh."""

    def __init__(self, coeffs, mesh):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (4 * mesh.num_elements,):
            raise ValueError("coefficient length does not match mesh")
        self.coeffs = coeffs
        self.mesh = mesh


def _edge_trace(face, t):
    """Trace values and outward-normal reference derivative on one face.

    face is one of 'l','r','b','t'; t is the 1D coordinate along the face.
    The returned derivative is d(psi)/d(outward direction) in reference
    coordinates; multiply by 2/h for the physical normal derivative.
    """
    one = np.ones_like(t)
    if face == "r":
        phi = shape_values(one, t)
        gx, _ = shape_gradients(one, t)
        return phi, gx
    if face == "l":
        phi = shape_values(-one, t)
        gx, _ = shape_gradients(-one, t)
        return phi, -gx
    if face == "t":
        phi = shape_values(t, one)
        _, gy = shape_gradients(t, one)
        return phi, gy
    if face == "b":
        phi = shape_values(t, -one)
        _, gy = shape_gradients(t, -one)
        return phi, -gy
    raise ValueError(f"unknown face {face!r}")


def _edge_kernels(h, eps, sigma):
    """The 8x8 interior-edge blocks, 4x4 boundary blocks, and jump blocks.

    Interior blocks have E1 DOFs first, E2 DOFs second, with the edge normal
    pointing from E1 into E2 ('v' = vertical edge, 'h' = horizontal edge).
    """
    p = sigma / (0.5 * h)   # penalty length scale: element half-width
    g = gauss_rule(2)
    t, w = g.points, g.weights
    out = {}
    for key, f1, f2 in (("v", "r", "l"), ("h", "t", "b")):
        phi1, d1 = _edge_trace(f1, t)           # outward of E1 = +n
        phi2, d2 = _edge_trace(f2, t)           # outward of E2 = -n
        b = np.concatenate([phi1, -phi2])       # jump [v] = v1 - v2
        d = np.concatenate([d1, -d2]) * (2.0 / h)
        avg = 0.5 * d                           # {grad(v).n}
        m8 = np.einsum("q,iq,jq->ij", w, -b, avg) \
            + eps * np.einsum("q,iq,jq->ij", w, avg, b) \
            + p * np.einsum("q,iq,jq->ij", w, b, b)
        j8 = np.einsum("q,iq,jq->ij", w, b, b)
        out[key] = (h / 2.0) * m8
        out["j" + key] = (h / 2.0) * j8
    for face in "lrbt":
        phi, dref = _edge_trace(face, t)
        d = dref * (2.0 / h)
        m4 = np.einsum("q,iq,jq->ij", w, -phi, d) \
            + eps * np.einsum("q,iq,jq->ij", w, d, phi) \
            + p * np.einsum("q,iq,jq->ij", w, phi, phi)
        out[face] = (h / 2.0) * m4
    return out


def _scatter(gdofs, block):
    """COO triplets for one edge family: same local block at every edge."""
    m, k = gdofs.shape
    rows = np.repeat(gdofs, k, axis=1).ravel()
    cols = np.tile(gdofs, (1, k)).ravel()
    vals = np.tile(block.ravel(), m)
    return rows, cols, vals


_FACE_OF_NORMAL = {(-1.0, 0.0): "l", (1.0, 0.0): "r", (0.0, -1.0): "b", (0.0, 1.0): "t"}


def assemble(mesh, cfg, f):
    """Assemble all operators for source f (an Expr, or an n^2 raster of
    element-wise constant values)."""
    if mesh.n != cfg.n:
        raise ValueError("mesh and config grid sizes differ")
    n, h = mesh.n, mesh.h
    ne = n * n
    ndof = 4 * ne

    kern = _edge_kernels(h, cfg.epsilon, cfg.sigma)
    kref = local_stiffness()

    elem_dofs = 4 * np.arange(ne)[:, None] + np.arange(4)[None, :]
    rows, cols, vals = [], [], []
    r, c, v = _scatter(elem_dofs, kref)
    rows.append(r); cols.append(c); vals.append(v)

    jrows, jcols, jvals = [], [], []
    by_normal = {}
    for e in mesh.interior_edges:
        by_normal.setdefault(e.normal, []).append((e.e1, e.e2))
    for normal, pairs in by_normal.items():
        pairs = np.asarray(pairs)
        gd = np.concatenate([4 * pairs[:, 0:1] + np.arange(4)[None, :],
                             4 * pairs[:, 1:2] + np.arange(4)[None, :]], axis=1)
        key = "v" if normal == (1.0, 0.0) else "h"
        r, c, v = _scatter(gd, kern[key])
        rows.append(r); cols.append(c); vals.append(v)
        r, c, v = _scatter(gd, kern["j" + key])
        jrows.append(r); jcols.append(c); jvals.append(v)

    by_face = {}
    for e in mesh.boundary_edges:
        by_face.setdefault(_FACE_OF_NORMAL[e.normal], []).append(e.e1)
    for face, elems in by_face.items():
        elems = np.asarray(elems)
        gd = 4 * elems[:, None] + np.arange(4)[None, :]
        r, c, v = _scatter(gd, kern[face])
        rows.append(r); cols.append(c); vals.append(v)

    A_sp = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof)).tocsr()
    J_sp = sp.coo_matrix(
        (np.concatenate(jvals), (np.concatenate(jrows), np.concatenate(jcols))),
        shape=(ndof, ndof)).tocsr()

    load, proj = source_terms(mesh, f)
    mloc = local_mass(h)

    M_blk = CsrMatrix(sp.kron(sp.eye(ne, format="csr"), mloc, format="csr"))
    K_blk = CsrMatrix(sp.kron(sp.eye(ne, format="csr"), kref, format="csr"))
    S = sp.kron(sp.eye(ne, format="csr"), np.ones((1, 4)), format="csr")
    B = CsrMatrix(S @ A_sp)
    c = S @ load

    return DgOperators(mesh, cfg, CsrMatrix(A_sp), load, proj, M_blk, K_blk,
                       B, c, CsrMatrix(J_sp))


def residual_floor(A, x, b):
    """Relative residual level below which b - Ax is pure rounding noise.

    Evaluating b - Ax in float64 carries elementwise error of order
    eps * (|A||x| + |b|), so no iterate can be certified below this level.
    """
    a_abs = A.to_scipy().copy()
    a_abs.data = np.abs(a_abs.data)
    noise = a_abs @ np.abs(x) + np.abs(b)
    return float(np.finfo(np.float64).eps * np.linalg.norm(noise) / np.linalg.norm(b))


def source_terms(mesh, f):
    """Load vector int f psi_i (q=4 tensor Gauss) and the coefficients of the
    element-wise L2 projection of f.

    f is either an Expr or a length-n^2 raster of element-wise constants;
    raster loads are exact: f_E * h^2/4 per local DOF.
    """
    n, h = mesh.n, mesh.h
    ne = n * n
    g = gauss_rule(4)
    if isinstance(f, symbolic.Expr):
        ox = (np.arange(ne) % n) * h
        oy = (np.arange(ne) // n) * h
        X = ox[:, None, None] + (g.points[None, :, None] + 1.0) * (h / 2.0)
        Y = oy[:, None, None] + (g.points[None, None, :] + 1.0) * (h / 2.0)
        psi = shape_values(g.points[:, None] + 0.0 * g.points[None, :],
                           g.points[None, :] + 0.0 * g.points[:, None])
        with np.errstate(all="ignore"):
            fv = np.asarray(f.eval(X, Y), dtype=np.float64)
        if not np.all(np.isfinite(fv)):
            bad = np.argwhere(~np.isfinite(fv))[0]
            raise SourceEvaluationError(
                f"source is not finite at quadrature point "
                f"({X[tuple(bad)]:.6g}, {Y[tuple(bad)]:.6g})")
        loc = np.einsum("a,b,iab,eab->ei", g.weights, g.weights, psi, fv) * (h / 2.0) ** 2
    else:
        fr = np.asarray(f, dtype=np.float64)
        if fr.shape != (ne,):
            raise ValueError(f"raster source must have length n^2 = {ne}")
        if not np.all(np.isfinite(fr)):
            raise SourceEvaluationError("raster source contains non-finite values")
        loc = fr[:, None] * (h * h / 4.0) * np.ones(4)
    proj = np.linalg.solve(local_mass(h), loc.T).T.ravel()
    return loc.ravel(), proj


def solve_dg(ops, tol=1e-12, max_iter=20000, load=None):
    """Solve A alpha = load to relative residual tol.

    load defaults to ops.load; passing another right-hand side reuses the
    assembled operator.  The stiffest configurations (large sigma on fine
    grids) have a float64 residual floor above 1e-12; a stagnated solve is
    still accepted when its residual sits within a factor 10 of that floor.
    """
    if load is None:
        load = ops.load
    try:
        rep = bicgstab(ops.A, load, tol=tol, max_iter=max_iter)
    except BreakdownError as e:
        rep = e.report
    if not rep.converged:
        achieved = float(np.linalg.norm(load - spmv(ops.A, rep.x))
                         / np.linalg.norm(load))
        if achieved > max(tol, 10.0 * residual_floor(ops.A, rep.x, load)):
            raise SolverConvergenceError(
                f"linear solve stalled at relative residual {achieved:.3e} "
                f"after {rep.iterations} iterations", rep)
    return DgFunction(rep.x, ops.mesh)


def mass_error(ops, alpha):
    """Per-element mass error B alpha - c."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return spmv(ops.B, alpha) - ops.c


def error_norm(ref, dg_hat, which="L2", quad_order=4):
    """Error of dg_hat against ref in the L2 norm or broken H1 seminorm.

    ref may be a DgFunction (or raw coefficient vector) on the same mesh, in
    which case the norms are evaluated exactly through the local mass and
    stiffness forms, or a symbolic Expr compared by tensor Gauss quadrature
    of order quad_order per element.
    """
    if which not in ("L2", "brokenH1"):
        raise ValueError("which must be 'L2' or 'brokenH1'")
    mesh = dg_hat.mesh
    n, h = mesh.n, mesh.h
    ne = n * n
    ahat = dg_hat.coeffs.reshape(ne, 4)

    if isinstance(ref, DgFunction) or isinstance(ref, np.ndarray):
        if isinstance(ref, DgFunction):
            if ref.mesh.n != n:
                raise ValueError("mesh mismatch between reference and candidate")
            aref = ref.coeffs
        else:
            aref = np.asarray(ref, dtype=np.float64)
            if aref.shape != (4 * ne,):
                raise ValueError("coefficient length does not match mesh")
        d = aref.reshape(ne, 4) - ahat
        loc = local_mass(h) if which == "L2" else local_stiffness()
        return float(np.sqrt(np.einsum("ei,ij,ej->", d, loc, d)))

    g = gauss_rule(quad_order)
    ox = (np.arange(ne) % n) * h
    oy = (np.arange(ne) // n) * h
    X = ox[:, None, None] + (g.points[None, :, None] + 1.0) * (h / 2.0)
    Y = oy[:, None, None] + (g.points[None, None, :] + 1.0) * (h / 2.0)
    W = g.weights[:, None] * g.weights[None, :] * (h / 2.0) ** 2
    xh = g.points[:, None] + 0.0 * g.points[None, :]
    yh = g.points[None, :] + 0.0 * g.points[:, None]
    if which == "L2":
        psi = shape_values(xh, yh)
        uh = np.einsum("ei,iab->eab", ahat, psi)
        uex = np.asarray(ref.eval(X, Y), dtype=np.float64)
        return float(np.sqrt(np.einsum("ab,eab->", W, (uex - uh) ** 2)))
    gx, gy = shape_gradients(xh, yh)
    uhx = np.einsum("ei,iab->eab", ahat, gx) * (2.0 / h)
    uhy = np.einsum("ei,iab->eab", ahat, gy) * (2.0 / h)
    ux = np.asarray(symbolic.differentiate(ref, "x").eval(X, Y), dtype=np.float64)
    uy = np.asarray(symbolic.differentiate(ref, "y").eval(X, Y), dtype=np.float64)
    return float(np.sqrt(np.einsum("ab,eab->", W, (ux - uhx) ** 2 + (uy - uhy) ** 2)))


def convergence_rate(e_coarse, e_fine):
    """log2(e_coarse / e_fine) for errors at grid sizes n and 2n."""
    if not (e_coarse > 0 and e_fine > 0):
        raise ValueError("errors must be positive")
    return float(np.log2(e_coarse / e_fine))


def darcy_source(n):
    """Two-box source raster: +1 on (7/64, 17/64)^2, -1 on (47/64, 57/64)^2.

    Element values are box-overlap area fractions, so on n = 64 (where the
    boxes are element-aligned) the raster is exactly 0/+1/-1.
    """
    h = 1.0 / n
    f = np.zeros(n * n)
    for lo, hi, val in ((7 / 64, 17 / 64, 1.0), (47 / 64, 57 / 64, -1.0)):
        for j in range(n):
            oy = min((j + 1) * h, hi) - max(j * h, lo)
            if oy <= 0:
                continue
            for i in range(n):
                ox = min((i + 1) * h, hi) - max(i * h, lo)
                if ox > 0:
                    f[j * n + i] += val * ox * oy / (h * h)
    return f
