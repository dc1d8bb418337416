"""P1 finite elements on interface-fitted triangulations of the slab
Omega = (0, 1) x (-1, 1).

Meshes are tensor grids whose columns follow the perturbed interface: below
it, the reference levels in [-1, 0] are stretched by 1 + zeta(x); above it,
the levels in [0, 1] by 1 - zeta(x).  Each quad is split into two triangles.
Region 1 (below the interface) carries coefficient k1 and a Dirichlet outer
boundary; region 2 carries k2/eps and a Neumann outer boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .geometry import Perturbation, validate_admissible
from .quadrature import gauss_rule, triangle_rule


class SolverConvergenceError(RuntimeError):
    """Conjugate gradients failed to reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Mesh2D:
    """Interface-fitted triangulation with structured-column metadata."""

    nodes: np.ndarray            # (n_nodes, 2) coordinates (x, z)
    triangles: np.ndarray        # (n_tri, 3) positively oriented node triples
    region: np.ndarray           # (n_tri,) 1 below the interface, 2 above
    dirichlet_edges: np.ndarray  # (k, 2) edges on the Dirichlet part of the boundary
    neumann_edges: np.ndarray    # (k, 2) edges on the Neumann part
    interface_edges: np.ndarray  # (nx, 2) ordered polyline along the interface
    nx: int
    nz: int
    col_x: np.ndarray            # (nx+1,) column abscissae
    zeta_at_cols: np.ndarray     # (nx+1,) interface height per column
    node_grid: np.ndarray        # (nx+1, 2*nz+1) node id per (column, level)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.unique(self.dirichlet_edges)

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def basis_gradients(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-triangle gradients of the three hat functions and the areas."""
        p = self.nodes[self.triangles]
        area = self.triangle_areas()
        grads = np.empty((len(self.triangles), 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            grads[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / (2.0 * area)
            grads[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / (2.0 * area)
        return grads, area

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        p = self.nodes[self.triangles]
        angles = []
        for a in range(3):
            u = p[:, (a + 1) % 3] - p[:, a]
            v = p[:, (a + 2) % 3] - p[:, a]
            cosang = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        return float(np.min(angles))


@dataclass(frozen=True)
class Field2D:
    """Nodal scalar field over a mesh; Dirichlet nodes carry value 0."""

    mesh: Mesh2D
    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def gradients(self) -> np.ndarray:
        """(n_tri, 2) constant gradient per triangle."""
        grads, _ = self.mesh.basis_gradients()
        return np.einsum("tad,ta->td", grads, self.values[self.mesh.triangles])

    def value(self, x, z):
        """P1 interpolation at points whose abscissae match mesh columns."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        cols = _match_columns(x, self.mesh.col_x)
        out = np.empty_like(z)
        for j in np.unique(cols):
            sel = cols == j
            ids = self.mesh.node_grid[j]
            out[sel] = np.interp(z[sel], self.mesh.nodes[ids, 1], self.values[ids])
        return out

    def gradient(self, x, z):
        """Piecewise-constant gradient at arbitrary interior points."""
        tri = _locate_triangles(self.mesh, np.asarray(x, dtype=float), np.asarray(z, dtype=float))
        g = self.gradients()[tri]
        return g[..., 0], g[..., 1]


def _match_columns(x: np.ndarray, col_x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    idx = np.clip(np.searchsorted(col_x, x), 0, len(col_x) - 1)
    idx = np.where((idx > 0) & (np.abs(col_x[np.maximum(idx - 1, 0)] - x) < np.abs(col_x[idx] - x)),
                   idx - 1, idx)
    if np.any(np.abs(col_x[idx] - x) > tol):
        bad = x[np.abs(col_x[idx] - x) > tol][:3]
        raise ValueError(f"abscissae {bad} do not match mesh columns")
    return idx


def _locate_triangles(mesh: Mesh2D, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Structured point location: column strip, then quad row, then sub-triangle."""
    shape = x.shape
    x = x.ravel()
    z = z.ravel()
    j = np.clip(np.searchsorted(mesh.col_x, x, side="right") - 1, 0, mesh.nx - 1)
    # interpolate the column z-levels horizontally across the strip
    t = (x - mesh.col_x[j]) / (mesh.col_x[j + 1] - mesh.col_x[j])
    lev_left = mesh.nodes[mesh.node_grid[j], 1]
    lev_right = mesh.nodes[mesh.node_grid[j + 1], 1]
    lev = lev_left + t[:, None] * (lev_right - lev_left)
    rows = np.clip(np.sum(lev <= z[:, None], axis=1) - 1, 0, 2 * mesh.nz - 1)
    # quad (j, row) is split into triangles 2*(j*2nz+row) and its pair; decide by
    # the diagonal from (j, row) to (j+1, row+1)
    quad = j * (2 * mesh.nz) + rows
    p0 = mesh.nodes[mesh.node_grid[j, rows]]
    p2 = mesh.nodes[mesh.node_grid[np.minimum(j + 1, mesh.nx), np.minimum(rows + 1, 2 * mesh.nz)]]
    below_diag = (x - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (z - p0[:, 1]) * (p2[:, 0] - p0[:, 0]) >= 0.0
    tri = 2 * quad + np.where(below_diag, 0, 1)
    return tri.reshape(shape)


def build_fitted_mesh(zeta: Perturbation, nx: int, nz: int) -> Mesh2D:
    """Tensor-grid triangulation of Omega fitted to the interface z = zeta(x)."""
    if nx < 2 or nz < 2:
        raise ValueError(f"need nx, nz >= 2, got {nx}, {nz}")
    report = validate_admissible(zeta)
    if not report.admissible:
        raise ValueError("inadmissible perturbation: " + "; ".join(report.violations))

    xs = np.linspace(0.0, 1.0, nx + 1)
    zv = zeta.value(xs)
    if np.any(np.abs(zv) >= 1.0):
        raise ValueError("|zeta| >= 1 at a column: cells would invert")

    lower_ref = np.linspace(-1.0, 0.0, nz + 1)
    upper_ref = np.linspace(0.0, 1.0, nz + 1)
    # column levels: pullback of the reference levels through the column map
    levels = np.empty((nx + 1, 2 * nz + 1))
    levels[:, : nz + 1] = lower_ref[None, :] * (1.0 + zv[:, None]) + zv[:, None]
    levels[:, nz:] = upper_ref[None, :] * (1.0 - zv[:, None]) + zv[:, None]

    n_levels = 2 * nz + 1
    node_grid = np.arange((nx + 1) * n_levels).reshape(nx + 1, n_levels)
    nodes = np.empty(((nx + 1) * n_levels, 2))
    nodes[:, 0] = np.repeat(xs, n_levels)
    nodes[:, 1] = levels.ravel()

    tris = []
    regions = []
    for j in range(nx):
        for l in range(2 * nz):
            a = node_grid[j, l]
            b = node_grid[j + 1, l]
            c = node_grid[j + 1, l + 1]
            d = node_grid[j, l + 1]
            tris.append((a, b, c))
            tris.append((a, c, d))
            regions.extend([1 if l < nz else 2] * 2)
    triangles = np.array(tris, dtype=np.int64)
    region = np.array(regions, dtype=np.int64)

    dirichlet = []
    neumann = []
    for j in range(nx):  # bottom z = -1 and top z = 1
        dirichlet.append((node_grid[j, 0], node_grid[j + 1, 0]))
        neumann.append((node_grid[j, -1], node_grid[j + 1, -1]))
    for j_col in (0, nx):  # lateral walls: Dirichlet below the interface level
        for l in range(2 * nz):
            edge = (node_grid[j_col, l], node_grid[j_col, l + 1])
            (dirichlet if l < nz else neumann).append(edge)
    interface = np.array([(node_grid[j, nz], node_grid[j + 1, nz]) for j in range(nx)], dtype=np.int64)

    mesh = Mesh2D(
        nodes=nodes,
        triangles=triangles,
        region=region,
        dirichlet_edges=np.array(dirichlet, dtype=np.int64),
        neumann_edges=np.array(neumann, dtype=np.int64),
        interface_edges=interface,
        nx=nx,
        nz=nz,
        col_x=xs,
        zeta_at_cols=zv,
        node_grid=node_grid,
    )
    if np.min(mesh.triangle_areas()) <= 1e-14:
        raise ValueError("degenerate triangle in fitted mesh")
    return mesh


def _fn2(fn) -> Callable:
    def wrapped(x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        return np.asarray(fn(x, z), dtype=float) * np.ones_like(x)

    return wrapped


def assemble_stiffness(mesh: Mesh2D, eps: float, k1: float, k2: float) -> sp.csr_matrix:
    """Stiffness of the perturbed energy form on the fitted mesh."""
    grads, area = mesh.basis_gradients()
    coef = np.where(mesh.region == 1, k1, k2 / eps) * area
    local = np.einsum("t,tad,tbd->tab", coef, grads, grads)
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return K.tocsr()


def assemble_volume_load(mesh: Mesh2D, F, *, degree: int = 2) -> np.ndarray:
    """Load vector of int_Omega F r by per-triangle quadrature."""
    F = _fn2(F)
    bary, w = triangle_rule(degree)
    p = mesh.nodes[mesh.triangles]                      # (t, 3, 2)
    qp = np.einsum("qa,tad->tqd", bary, p)              # (t, q, 2)
    Fq = F(qp[..., 0].ravel(), qp[..., 1].ravel()).reshape(qp.shape[:2])
    area = mesh.triangle_areas()
    # basis value of hat a at barycentric point q is bary[q, a]
    contrib = np.einsum("t,tq,q,qa->ta", area, Fq, w, bary)
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.triangles.ravel(), contrib.ravel())
    return load


def assemble_interface_load(mesh: Mesh2D, f, *, order: int = 4) -> np.ndarray:
    """Load vector of int_{Gamma^zeta} f r dS along the interface polyline."""
    f = _fn2(f)
    t, w = gauss_rule(order)
    load = np.zeros(mesh.n_nodes)
    a = mesh.nodes[mesh.interface_edges[:, 0]]
    b = mesh.nodes[mesh.interface_edges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    lam = 0.5 * (t + 1.0)                               # (q,)
    pts = a[:, None, :] + lam[None, :, None] * (b - a)[:, None, :]
    fq = f(pts[..., 0].ravel(), pts[..., 1].ravel()).reshape(pts.shape[:2])
    w_half = 0.5 * w
    c0 = length * np.einsum("eq,q,q->e", fq, w_half, 1.0 - lam)
    c1 = length * np.einsum("eq,q,q->e", fq, w_half, lam)
    np.add.at(load, mesh.interface_edges[:, 0], c0)
    np.add.at(load, mesh.interface_edges[:, 1], c1)
    return load


def cg_solve(K: sp.csr_matrix, load: np.ndarray, dirichlet: np.ndarray,
             *, rtol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Solve the SPD system on the free nodes with Jacobi-preconditioned CG."""
    n = K.shape[0]
    free = np.setdiff1d(np.arange(n), dirichlet)
    if len(free) == 0:
        raise SolverConvergenceError("no free nodes: empty Dirichlet complement", np.inf)
    if len(dirichlet) == 0:
        raise SolverConvergenceError("singular system: empty Dirichlet set", np.inf)
    A = K[free][:, free]
    b = load[free]
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise SolverConvergenceError("non-SPD reduced system", np.inf)
    M = LinearOperator(A.shape, matvec=lambda v: v / diag)
    if maxiter is None:
        maxiter = int(50 * np.sqrt(len(free))) + 10
    x, info = cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    if info != 0:
        res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
        raise SolverConvergenceError(
            f"CG did not converge within {maxiter} iterations (relative residual {res:.3e})", res
        )
    values = np.zeros(n)
    values[free] = x
    return values


def assemble_solve(mesh: Mesh2D, forcing, eps: float, k1: float = 1.0, k2: float = 1.0,
                   *, rtol: float = 1e-10, maxiter: int | None = None) -> Field2D:
    """Galerkin solution of the perturbed weak problem on the fitted mesh."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    K = assemble_stiffness(mesh, eps, k1, k2)
    degree = 2 if forcing.quadrature_order <= 4 else 4
    load = assemble_volume_load(mesh, forcing.F, degree=degree)
    load += assemble_interface_load(mesh, forcing.f, order=max(2, forcing.quadrature_order))
    values = cg_solve(K, load, mesh.dirichlet_nodes, rtol=rtol, maxiter=maxiter)
    meta = {
        "eps": eps,
        "k1": k1,
        "k2": k2,
        "load_functional": float(load @ values),
        "bilinear_energy": float(values @ (K @ values)),
    }
    return Field2D(mesh=mesh, values=values, label="fitted-solve", meta=meta)


def resample(b: Field2D, mesh: Mesh2D) -> tuple[Field2D, float]:
    """P1-interpolate a field onto another mesh with matching columns.

    Returns the resampled field and the interpolation-layer thickness (the
    largest vertical node displacement between the two meshes).
    """
    cols = _match_columns(mesh.col_x, b.mesh.col_x)
    values = np.empty(mesh.n_nodes)
    layer = 0.0
    for j_out, j_in in enumerate(cols):
        ids_out = mesh.node_grid[j_out]
        ids_in = b.mesh.node_grid[j_in]
        z_out = mesh.nodes[ids_out, 1]
        z_in = b.mesh.nodes[ids_in, 1]
        values[ids_out] = np.interp(z_out, z_in, b.values[ids_in])
        if len(z_out) == len(z_in):
            layer = max(layer, float(np.max(np.abs(z_out - z_in))))
        else:
            layer = max(layer, float(abs(mesh.zeta_at_cols[j_out] - b.mesh.zeta_at_cols[j_in])))
    return Field2D(mesh=mesh, values=values, label=f"resampled[{b.label}]"), layer


def vnorm_diff_2d(a: Field2D, b: Field2D, *, return_info: bool = False):
    """V-norm (int |grad a - grad b|^2)^(1/2), resampling b onto a's mesh."""
    if b.mesh is a.mesh:
        b_on_a, layer = b, 0.0
    else:
        b_on_a, layer = resample(b, a.mesh)
    diff = a.gradients() - b_on_a.gradients()
    _, area = a.mesh.basis_gradients()
    val = float(np.sqrt(max(np.sum(area * np.sum(diff * diff, axis=1)), 0.0)))
    if return_info:
        return val, {"layer_thickness": layer}
    return val


def vnorm_2d(a: Field2D) -> float:
    g = a.gradients()
    area = a.mesh.triangle_areas()
    return float(np.sqrt(max(np.sum(area * np.sum(g * g, axis=1)), 0.0)))


def energy_split(fld: Field2D, eps: float, k1: float = 1.0, k2: float = 1.0) -> tuple[float, float, float]:
    """(e1, e2, total) with regions read from the mesh tags (diagonal split)."""
    g = fld.gradients()
    area = fld.mesh.triangle_areas()
    g2 = np.sum(g * g, axis=1) * area
    e1 = k1 * float(np.sum(g2[fld.mesh.region == 1]))
    e2 = (k2 / eps) * float(np.sum(g2[fld.mesh.region == 2]))
    return e1, e2, e1 + e2


def _area_below_zero(p: np.ndarray) -> np.ndarray:
    """Area of each triangle's part with z < 0 (exact halfplane clip)."""
    areas = np.empty(len(p))
    for i, tri in enumerate(p):
        # Sutherland-Hodgman against z <= 0
        poly = list(tri)
        out = []
        for k in range(len(poly)):
            cur, nxt = poly[k], poly[(k + 1) % len(poly)]
            cin, nin = cur[1] <= 0.0, nxt[1] <= 0.0
            if cin:
                out.append(cur)
            if cin != nin:
                t = cur[1] / (cur[1] - nxt[1])
                out.append(cur + t * (nxt - cur))
        if len(out) < 3:
            areas[i] = 0.0
            continue
        v = np.asarray(out)
        x, z = v[:, 0], v[:, 1]
        areas[i] = 0.5 * abs(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1)))
    return areas


def energy_split_flat(fld: Field2D, eps: float, k1: float = 1.0, k2: float = 1.0) -> tuple[float, float, float]:
    """(e1, e2, total) measured in the unperturbed split at z = 0.

    Triangles straddling z = 0 are clipped exactly, which is enough because
    P1 gradients are constant per triangle.
    """
    g = fld.gradients()
    g2 = np.sum(g * g, axis=1)
    p = fld.mesh.nodes[fld.mesh.triangles]
    area = fld.mesh.triangle_areas()
    below = _area_below_zero(p)
    above = area - below
    e1 = k1 * float(np.sum(g2 * below))
    e2 = (k2 / eps) * float(np.sum(g2 * above))
    return e1, e2, e1 + e2
