"""Column-wise fractional maps that flatten the perturbed interface, the
induced gradient-transfer matrices, the pullback operator on fields, and the
flattened variational problems on the reference domain.

Region i in {1, 2} maps Omega_i^zeta onto Omega_i by
    Lambda_i(x, X_N) = (x, (X_N - zeta(x)) / (1 - (-1)^i zeta(x))),
whose inverse stretches the reference level z back to z (1 - (-1)^i zeta) + zeta.
Gradients transfer through A_i with inverse [[1, (1 - (-1)^i z) grad zeta],
[0, 1 - (-1)^i zeta]]; the flattened weak form carries the metric
(1 - (-1)^i zeta) A^T A.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Perturbation
from .quadrature import gauss_rule, triangle_rule
from . import solver1d
from .fem2d import (
    Field2D,
    Mesh2D,
    assemble_interface_load,
    cg_solve,
    _fn2,
)
import scipy.sparse as sp

REGIONS = (1, 2)


def _sign(i: int) -> float:
    if i not in REGIONS:
        raise ValueError(f"region index must be 1 or 2, got {i}")
    return float((-1) ** i)


@dataclass(frozen=True)
class GradTransfer:
    """Gradient-transfer data of one region at one reference point."""

    region: int
    point: tuple[float, float]
    A: np.ndarray
    A_inv: np.ndarray
    det_jacobian: float


def lambda_map(i: int, zeta: Perturbation, point, direction: str = "forward"):
    """Apply the region-i fractional map (forward flattens, inverse unflattens).

    `point` is one (x, z) pair or an (n, 2) array.  Forward expects points of
    the perturbed region Omega_i^zeta, inverse expects reference points.
    """
    s = _sign(i)
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    x, z = pts[:, 0], pts[:, 1]
    zv = zeta.value(x)
    denom = 1.0 - s * zv
    tol = 1e-12
    if direction == "forward":
        lo = np.where(i == 1, -1.0, zv)
        hi = np.where(i == 1, zv, 1.0)
        if np.any(z < lo - tol) or np.any(z > hi + tol):
            raise ValueError(f"point outside region {i} of the perturbed domain")
        out_z = (z - zv) / denom
    elif direction == "inverse":
        lo, hi = (-1.0, 0.0) if i == 1 else (0.0, 1.0)
        if np.any(z < lo - tol) or np.any(z > hi + tol):
            raise ValueError(f"point outside reference region {i}")
        out_z = z * denom + zv
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    out = np.column_stack([x, out_z])
    return out if np.ndim(point) == 2 else out[0]


def _matrix_entries(i: int, zeta: Perturbation, x, z):
    """Vectorized (denom, stretch, g) with stretch = 1 - (-1)^i z."""
    s = _sign(i)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    zv = zeta.value(x)
    g = zeta.gradient(x)
    denom = 1.0 - s * zv
    stretch = 1.0 - s * z
    return denom, stretch, g


def grad_transfer(i: int, zeta: Perturbation, point) -> GradTransfer:
    """Matrices A, A^{-1} and det of the region-i map at a reference point.

    At a knot of a piecewise zeta the one-sided (right) gradient is used.
    """
    x, z = float(point[0]), float(point[1])
    denom, stretch, g = _matrix_entries(i, zeta, x, z)
    A = np.array([[1.0, -stretch * g / denom], [0.0, 1.0 / denom]])
    A_inv = np.array([[1.0, stretch * g], [0.0, denom]])
    return GradTransfer(region=i, point=(x, z), A=A, A_inv=A_inv, det_jacobian=float(denom))


def metric_matrix(i: int, zeta: Perturbation, point) -> np.ndarray:
    """Symmetric flattened-form coefficient (1 - (-1)^i zeta) A^T A at a point."""
    x, z = float(point[0]), float(point[1])
    denom, stretch, g = _matrix_entries(i, zeta, x, z)
    off = -stretch * g
    return np.array([[denom, off], [off, (stretch**2 * g**2 + 1.0) / denom]])


def pullback_norm_bound(zeta: Perturbation) -> float:
    """Operator-norm bound of the pullback on H1: sqrt(max(2, 4 ||zeta||_W1inf^2))."""
    return float(np.sqrt(max(2.0, 4.0 * zeta.norm_w1inf**2)))


def ainv_norm_bound(zeta: Perturbation, dim: int = 2) -> float:
    """Frobenius bound for A^{-1}: sqrt(N + 3 + 4 ||zeta||_W1inf^2)."""
    return float(np.sqrt(dim + 3.0 + 4.0 * zeta.norm_w1inf**2))


def coercivity_constant(zeta: Perturbation, dim: int = 2) -> float:
    """Uniform lower bound e(zeta) on the metric spectrum, positive while
    ||zeta||_C < 1."""
    return float((1.0 - zeta.norm_sup) / (dim + 3.0 + 4.0 * zeta.norm_w1inf**2))


def t_apply(zeta: Perturbation, field, direction: str, out_mesh: Mesh2D) -> Field2D:
    """Pull a field through the fractional maps onto `out_mesh` nodes.

    direction "T": (T r)(x) = r(Lambda_i^{-1}(x)) for reference points x;
    direction "T_inverse": compose with the forward map at perturbed points.
    Discrete fields are evaluated by column-wise P1 interpolation.
    """
    if direction not in ("T", "T_inverse"):
        raise ValueError(f"direction must be 'T' or 'T_inverse', got {direction!r}")
    x = out_mesh.nodes[:, 0]
    z = out_mesh.nodes[:, 1]
    zv = zeta.value(x)
    if direction == "T":
        s = np.where(z < 0.0, -1.0, 1.0)
        src_z = z * (1.0 - s * zv) + zv
    else:
        s = np.where(z < zv, -1.0, 1.0)
        src_z = (z - zv) / (1.0 - s * zv)
    src_z = np.clip(src_z, -1.0, 1.0)
    if isinstance(field, Field2D):
        values = field.value(x, src_z)
    else:
        values = np.asarray(_fn2(field)(x, src_z), dtype=float)
    return Field2D(mesh=out_mesh, values=values, label=f"{direction}[{getattr(field, 'label', 'fn')}]")


def t_apply_smooth(zeta: Perturbation, value, grad):
    """Analytic pullback of a smooth field: returns (value, gradient) callables.

    With w(x, z) = z (1 - (-1)^i zeta) + zeta the chain rule gives
    d/dx (T u) = u_x + u_z * grad zeta * (1 - (-1)^i z) and
    d/dz (T u) = u_z * (1 - (-1)^i zeta).
    """
    value = _fn2(value)

    def tv(x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        s = np.where(z < 0.0, -1.0, 1.0)
        zv = zeta.value(x)
        return value(x, z * (1.0 - s * zv) + zv)

    def tg(x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        s = np.where(z < 0.0, -1.0, 1.0)
        zv = zeta.value(x)
        g = zeta.gradient(x)
        w = z * (1.0 - s * zv) + zv
        ux, uz = grad(x, w)
        return ux + uz * g * (1.0 - s * z), uz * (1.0 - s * zv)

    return tv, tg


def h1_norm_smooth(value, grad, *, nx: int = 64, nz: int = 64, order: int = 4) -> float:
    """Full H1 norm of an analytic field by tensor quadrature on an nx-by-nz grid
    per region (cells never straddle the interface line z = 0)."""
    value = _fn2(value)
    total = 0.0
    t, w = gauss_rule(order)
    xs = np.linspace(0.0, 1.0, nx + 1)
    for lo, hi in ((-1.0, 0.0), (0.0, 1.0)):
        zs = np.linspace(lo, hi, nz + 1)
        hx = 0.5 * np.diff(xs)
        hz = 0.5 * np.diff(zs)
        xq = xs[:-1, None] + hx[:, None] * (t[None, :] + 1.0)
        zq = zs[:-1, None] + hz[:, None] * (t[None, :] + 1.0)
        # tensor product; loop over z cells to bound memory
        for kz in range(nz):
            Zrow = zq[kz]
            XX, ZZ = np.meshgrid(xq.ravel(), Zrow, indexing="ij")
            v = value(XX, ZZ)
            gx, gz = grad(XX, ZZ)
            dens = (v * v + gx * gx + gz * gz).reshape(nx, order, order)
            wxz = (hx[:, None, None] * w[None, :, None]) * (hz[kz] * w[None, None, :])
            total += float(np.sum(dens * wxz))
    return float(np.sqrt(max(total, 0.0)))


def assemble_flattened_stiffness(mesh: Mesh2D, zeta: Perturbation, eps: float,
                                 k1: float = 1.0, k2: float = 1.0) -> sp.csr_matrix:
    """Stiffness of the flattened form sum_i int (k_i/eps^{i-1}) (1-(-1)^i zeta) A^T A grad.grad."""
    grads, area = mesh.basis_gradients()
    bary, wq = triangle_rule(2)
    p = mesh.nodes[mesh.triangles]
    qp = np.einsum("qa,tad->tqd", bary, p)
    xq, zq = qp[..., 0], qp[..., 1]

    m11 = np.empty_like(xq)
    m12 = np.empty_like(xq)
    m22 = np.empty_like(xq)
    scale = np.where(mesh.region == 1, k1, k2 / eps)
    for i in REGIONS:
        sel = mesh.region == i
        denom, stretch, g = _matrix_entries(i, zeta, xq[sel], zq[sel])
        m11[sel] = denom
        m12[sel] = -stretch * g
        m22[sel] = (stretch**2 * g**2 + 1.0) / denom

    gx, gz = grads[..., 0], grads[..., 1]
    # K[t,a,b] = area_t * scale_t * sum_q w_q (m11 gx_a gx_b + m12 (gx_a gz_b + gz_a gx_b) + m22 gz_a gz_b)
    s11 = np.einsum("tq,q->t", m11, wq)
    s12 = np.einsum("tq,q->t", m12, wq)
    s22 = np.einsum("tq,q->t", m22, wq)
    coef = area * scale
    local = (
        np.einsum("t,ta,tb->tab", coef * s11, gx, gx)
        + np.einsum("t,ta,tb->tab", coef * s12, gx, gz)
        + np.einsum("t,ta,tb->tab", coef * s12, gz, gx)
        + np.einsum("t,ta,tb->tab", coef * s22, gz, gz)
    )
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def assemble_flattened_load(mesh: Mesh2D, zeta: Perturbation, forcing) -> np.ndarray:
    """Volume load sum_i int (1-(-1)^i zeta) (T F) r plus the weighted interface load.

    The interface weight is the surface-measure Jacobian |(-grad zeta, 1)|, so
    the flattened load replicates int_{Gamma^zeta} f r dS.
    """
    F = _fn2(forcing.F)
    bary, wq = triangle_rule(2 if forcing.quadrature_order <= 4 else 4)
    p = mesh.nodes[mesh.triangles]
    qp = np.einsum("qa,tad->tqd", bary, p)
    xq, zq = qp[..., 0], qp[..., 1]
    dens = np.empty_like(xq)
    for i in REGIONS:
        sel = mesh.region == i
        s = _sign(i)
        zv = zeta.value(xq[sel])
        denom = 1.0 - s * zv
        dens[sel] = denom * F(xq[sel], zq[sel] * denom + zv)
    area = mesh.triangle_areas()
    contrib = np.einsum("t,tq,q,qa->ta", area, dens, wq, bary)
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.triangles.ravel(), contrib.ravel())

    f = _fn2(forcing.f)

    def weighted_f(x, z):
        g = zeta.gradient(x)
        return np.sqrt(1.0 + g**2) * f(x, zeta.value(x))

    load += assemble_interface_load(mesh, weighted_f, order=max(2, forcing.quadrature_order))
    return load


def solve_flattened(zeta: Perturbation, forcing, eps: float, ref_mesh: Mesh2D,
                    k1: float = 1.0, k2: float = 1.0, *, rtol: float = 1e-10,
                    maxiter: int | None = None) -> Field2D:
    """Galerkin solve of the flattened problem on the fixed reference mesh."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if np.max(np.abs(ref_mesh.zeta_at_cols)) > 1e-14:
        raise ValueError("reference mesh must be the flat-interface mesh")
    K = assemble_flattened_stiffness(ref_mesh, zeta, eps, k1, k2)
    load = assemble_flattened_load(ref_mesh, zeta, forcing)
    values = cg_solve(K, load, ref_mesh.dirichlet_nodes, rtol=rtol, maxiter=maxiter)
    meta = {
        "eps": eps,
        "k1": k1,
        "k2": k2,
        "load_functional": float(load @ values),
        "bilinear_energy": float(values @ (K @ values)),
    }
    return Field2D(mesh=ref_mesh, values=values, label="flattened-solve", meta=meta)


def flattened_energy_split(rho: Field2D, zeta: Perturbation, eps: float,
                           k1: float = 1.0, k2: float = 1.0) -> tuple[float, float, float]:
    """Per-region energies of the flattened form (pullbacks of the energies of
    the unflattened field over the perturbed regions)."""
    mesh = rho.mesh
    bary, wq = triangle_rule(2)
    p = mesh.nodes[mesh.triangles]
    qp = np.einsum("qa,tad->tqd", bary, p)
    xq, zq = qp[..., 0], qp[..., 1]
    g = rho.gradients()
    gx, gz = g[:, 0], g[:, 1]
    area = mesh.triangle_areas()
    parts = {}
    for i in REGIONS:
        sel = mesh.region == i
        denom, stretch, grad = _matrix_entries(i, zeta, xq[sel], zq[sel])
        m11 = denom
        m12 = -stretch * grad
        m22 = (stretch**2 * grad**2 + 1.0) / denom
        dens = (m11 * gx[sel, None] ** 2 + 2.0 * m12 * gx[sel, None] * gz[sel, None]
                + m22 * gz[sel, None] ** 2)
        scale = k1 if i == 1 else k2 / eps
        parts[i] = scale * float(np.sum(area[sel] * (dens @ wq)))
    return parts[1], parts[2], parts[1] + parts[2]


def solve_flattened_1d(zeta: float, forcing, eps: float) -> solver1d.PiecewiseField1D:
    """Exact solution of the 1D flattened problem; equals q^zeta composed with
    the inverse column map."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    z0 = float(zeta)
    if not -1.0 < z0 < 1.0:
        raise ValueError(f"zeta must lie in (-1, 1), got {z0}")
    F = solver1d._fn_vec(forcing.F)
    f = solver1d._fn_vec(forcing.f)
    c_left = 1.0 / (1.0 + z0)
    c_right = 1.0 / (eps * (1.0 - z0))

    def F_left(x):
        return (1.0 + z0) * F(np.asarray(x) * (1.0 + z0) + z0)

    def F_right(x):
        return (1.0 - z0) * F(np.asarray(x) * (1.0 - z0) + z0)

    flux = float(f(np.asarray([z0]))[0])
    return solver1d._two_region_exact(
        F_left, F_right, c_left, c_right, flux, 0.0,
        label=f"flattened(zeta={z0:g})",
    )


def _stacked_matrices(i: int, zeta: Perturbation, x: np.ndarray, z: np.ndarray):
    """(n, 2, 2) arrays of A and A^{-1} at the sample points."""
    denom, stretch, g = _matrix_entries(i, zeta, x, z)
    n = len(x)
    A = np.zeros((n, 2, 2))
    A[:, 0, 0] = 1.0
    A[:, 0, 1] = -stretch * g / denom
    A[:, 1, 1] = 1.0 / denom
    A_inv = np.zeros((n, 2, 2))
    A_inv[:, 0, 0] = 1.0
    A_inv[:, 0, 1] = stretch * g
    A_inv[:, 1, 1] = denom
    return A, A_inv, denom


def matrix_property_report(shapes, *, n_points: int = 1000, seed: int = 0,
                           fd_step: float = 1e-6) -> dict:
    """Sampled verification of the matrix identities and the chain rule.

    Returns maxima of |A A^{-1} - I|, |det A^{-1} - (1 - (-1)^i zeta)|, the
    spectral-norm excess max(||A^{-1}||_2 - bound, 0), the coercivity margin
    min(lambda_min(metric) - e(zeta)) and the worst chain-rule error.
    """
    rng = np.random.default_rng(seed)
    report = {
        "aainv_max": 0.0,
        "det_max": 0.0,
        "norm_excess": 0.0,
        "coercivity_margin": np.inf,
        "chain_rule_max": 0.0,
    }
    tests = _chain_rule_test_functions()
    for zeta in shapes:
        x = rng.uniform(0.0, 1.0, n_points)
        if zeta.knots:
            # keep sample and finite-difference stencils away from the knots
            for knot in zeta.knots:
                x[np.abs(x - knot) < 10 * fd_step] += 20 * fd_step
        x = np.clip(x, 10 * fd_step, 1.0 - 10 * fd_step)
        for i in REGIONS:
            z = rng.uniform(-1.0, 0.0, n_points) if i == 1 else rng.uniform(0.0, 1.0, n_points)
            A, A_inv, denom = _stacked_matrices(i, zeta, x, z)
            prod = np.einsum("nab,nbc->nac", A, A_inv)
            report["aainv_max"] = max(
                report["aainv_max"], float(np.max(np.abs(prod - np.eye(2)[None])))
            )
            det_expected = 1.0 - _sign(i) * zeta.value(x)
            report["det_max"] = max(
                report["det_max"], float(np.max(np.abs(np.linalg.det(A_inv) - det_expected)))
            )
            sigma = np.linalg.svd(A_inv, compute_uv=False)[:, 0]
            report["norm_excess"] = max(
                report["norm_excess"], float(np.max(sigma - ainv_norm_bound(zeta)))
            )
            metric = denom[:, None, None] * np.einsum("nba,nbc->nac", A, A)
            lam_min = np.linalg.eigvalsh(metric)[:, 0]
            report["coercivity_margin"] = min(
                report["coercivity_margin"], float(np.min(lam_min - coercivity_constant(zeta)))
            )
        # chain rule on an interior subsample
        sub = rng.choice(n_points, size=min(40, n_points), replace=False)
        xs = x[sub]
        for i in REGIONS:
            zs = rng.uniform(-0.9, -0.1, len(xs)) if i == 1 else rng.uniform(0.1, 0.9, len(xs))
            err = _chain_rule_error(i, zeta, xs, zs, tests, fd_step)
            report["chain_rule_max"] = max(report["chain_rule_max"], err)
    return report


def _chain_rule_test_functions():
    return [
        (lambda X, Z: Z, lambda X, Z: (np.zeros_like(X), np.ones_like(Z))),
        (lambda X, Z: X * Z, lambda X, Z: (Z, X)),
        (lambda X, Z: np.sin(np.pi * X) * Z**2, lambda X, Z: (np.pi * np.cos(np.pi * X) * Z**2, 2 * np.sin(np.pi * X) * Z)),
        (lambda X, Z: np.exp(0.3 * Z) * X, lambda X, Z: (np.exp(0.3 * Z), 0.3 * np.exp(0.3 * Z) * X)),
        (lambda X, Z: np.cos(2 * X + Z), lambda X, Z: (-2 * np.sin(2 * X + Z), -np.sin(2 * X + Z))),
    ]


def _chain_rule_error(i: int, zeta: Perturbation, x: np.ndarray, z: np.ndarray,
                      tests, h: float) -> float:
    """max |A grad_x(u o Lambda^{-1}) - (grad u) o Lambda^{-1}| by central differences."""
    s = _sign(i)

    def composed(u, xx, zz):
        zv = zeta.value(xx)
        return u(xx, zz * (1.0 - s * zv) + zv)

    worst = 0.0
    denom, stretch, g = _matrix_entries(i, zeta, x, z)
    zv = zeta.value(x)
    w = z * denom + zv
    for u, grad_u in tests:
        dx = (composed(u, x + h, z) - composed(u, x - h, z)) / (2.0 * h)
        dz = (composed(u, x, z + h) - composed(u, x, z - h)) / (2.0 * h)
        tx = dx - (stretch * g / denom) * dz
        tz = dz / denom
        ux, uz = grad_u(x, w)
        worst = max(worst, float(np.max(np.hypot(tx - ux, tz - uz))))
    return worst
