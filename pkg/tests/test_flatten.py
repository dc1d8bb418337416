import numpy as np
import pytest

from darcyperturb.geometry import ForcingSpec, make_perturbation
from darcyperturb import fem2d, solver1d
from darcyperturb.flatten import (
    ainv_norm_bound,
    coercivity_constant,
    grad_transfer,
    h1_norm_smooth,
    lambda_map,
    matrix_property_report,
    metric_matrix,
    pullback_norm_bound,
    solve_flattened,
    solve_flattened_1d,
    t_apply,
    t_apply_smooth,
)

ZERO2 = lambda x, z: np.zeros_like(x)
ONE2 = lambda x, z: np.ones_like(x)


def sine(amp, k=1):
    return make_perturbation("sine", {"wavenumber": k}, amp)


def shapes5():
    return [
        sine(0.25),
        sine(0.2, k=2),
        make_perturbation("bump", {}, 0.3),
        make_perturbation("hat", {"knot": 0.5}, 0.3),
        sine(0.1, k=3),
    ]


# --- maps --------------------------------------------------------------------


def test_lambda_map_identity_at_zero():
    z0 = sine(0.0)
    pts = np.array([[0.3, -0.5], [0.7, -0.1]])
    assert np.allclose(lambda_map(1, z0, pts, "forward"), pts)
    assert np.allclose(lambda_map(1, z0, pts, "inverse"), pts)


def test_lambda_map_column_endpoints():
    # at the peak of the sine, zeta = 0.25 exactly
    z = sine(0.25)
    out = lambda_map(1, z, (0.5, -1.0), "forward")
    assert np.allclose(out, [0.5, -1.0])
    out = lambda_map(1, z, (0.5, 0.25), "forward")
    assert np.allclose(out, [0.5, 0.0], atol=1e-15)
    out = lambda_map(2, z, (0.5, 0.5), "inverse")
    assert np.allclose(out, [0.5, 0.5 * 0.75 + 0.25])


def test_lambda_map_round_trip():
    rng = np.random.default_rng(2)
    for zeta in shapes5():
        x = rng.uniform(0, 1, 1000)
        zv = zeta.value(x)
        for i, lo, hi in ((1, -np.ones_like(x), zv), (2, zv, np.ones_like(x))):
            z = lo + rng.uniform(0, 1, 1000) * (hi - lo)
            pts = np.column_stack([x, z])
            flat = lambda_map(i, zeta, pts, "forward")
            back = lambda_map(i, zeta, flat, "inverse")
            assert np.max(np.abs(back - pts)) < 1e-12
    # the two inverse maps agree on the flat interface
    zeta = sine(0.3)
    on_gamma = np.column_stack([rng.uniform(0, 1, 50), np.zeros(50)])
    a = lambda_map(1, zeta, on_gamma, "inverse")
    b = lambda_map(2, zeta, on_gamma, "inverse")
    assert np.max(np.abs(a - b)) == 0.0


def test_lambda_map_rejects_outside():
    z = sine(0.25)
    with pytest.raises(ValueError):
        lambda_map(1, z, (0.5, 0.5), "forward")  # above the interface
    with pytest.raises(ValueError):
        lambda_map(2, z, (0.5, -0.5), "inverse")


# --- matrices ----------------------------------------------------------------


def test_grad_transfer_identity_at_zero():
    gt = grad_transfer(1, sine(0.0), (0.4, -0.3))
    assert np.allclose(gt.A, np.eye(2))
    assert np.allclose(gt.A_inv, np.eye(2))
    assert gt.det_jacobian == 1.0


def test_grad_transfer_flat_gradient_sample():
    # at the sine peak the gradient vanishes, reproducing the constant-zeta case
    gt = grad_transfer(2, sine(0.25), (0.5, 0.3))
    assert np.allclose(gt.A, np.diag([1.0, 4.0 / 3.0]), atol=1e-14)
    assert gt.det_jacobian == pytest.approx(0.75)
    m = metric_matrix(2, sine(0.25), (0.5, 0.3))
    assert np.allclose(m, np.diag([0.75, 4.0 / 3.0]), atol=1e-14)


def test_matrix_products_random():
    rng = np.random.default_rng(8)
    for zeta in shapes5():
        for _ in range(20):
            x = rng.uniform(0.05, 0.95)
            if zeta.knots and min(abs(x - k) for k in zeta.knots) < 1e-3:
                continue
            i = int(rng.integers(1, 3))
            z = rng.uniform(-1, 0) if i == 1 else rng.uniform(0, 1)
            gt = grad_transfer(i, zeta, (x, z))
            assert np.max(np.abs(gt.A @ gt.A_inv - np.eye(2))) < 1e-12
            s = (-1.0) ** i
            assert gt.det_jacobian == pytest.approx(1.0 - s * float(zeta.value(x)), abs=1e-14)
            m = metric_matrix(i, zeta, (x, z))
            assert np.allclose(m, gt.det_jacobian * gt.A.T @ gt.A, atol=1e-12)


def test_grad_transfer_one_sided_at_knot():
    # at the tent peak the right-hand slope is reported
    hat = make_perturbation("hat", {"knot": 0.5}, 0.3)
    gt = grad_transfer(1, hat, (0.5, -0.5))
    right_slope = -0.3 / 0.5
    stretch = 1.0 + (-0.5)  # 1 - (-1)^1 z
    assert gt.A_inv[0, 1] == pytest.approx(stretch * right_slope, abs=1e-14)
    assert gt.det_jacobian == pytest.approx(1.3)


def test_bounds_arithmetic():
    z0 = sine(0.0)
    assert ainv_norm_bound(z0) == pytest.approx(np.sqrt(5.0))
    assert coercivity_constant(z0) == pytest.approx(0.2)
    assert pullback_norm_bound(z0) == pytest.approx(np.sqrt(2.0))

    # ||zeta||_W1inf = 0.5 -> bound sqrt(6), pullback stays sqrt(2)
    class Fake:
        norm_sup = 0.1
        norm_w1inf = 0.5

    assert ainv_norm_bound(Fake()) == pytest.approx(np.sqrt(6.0))
    assert pullback_norm_bound(Fake()) == pytest.approx(np.sqrt(2.0))

    class Fake2:
        norm_sup = 0.25
        norm_w1inf = 1.0

    assert coercivity_constant(Fake2()) == pytest.approx(0.75 / 9.0)


def test_matrix_property_report():
    rep = matrix_property_report(shapes5(), n_points=1000, seed=3)
    assert rep["aainv_max"] < 1e-12
    assert rep["det_max"] < 1e-12
    assert rep["norm_excess"] <= 0.0
    assert rep["coercivity_margin"] >= 0.0
    assert rep["chain_rule_max"] < 1e-6


# --- pullback operator --------------------------------------------------------


def test_t_apply_identity_at_zero():
    z0 = sine(0.0)
    mesh = fem2d.build_fitted_mesh(z0, 12, 12)
    fr = ForcingSpec(F=ZERO2, f=ONE2)
    q = fem2d.assemble_solve(mesh, fr, eps=0.5)
    tq = t_apply(z0, q, "T", mesh)
    assert np.max(np.abs(tq.values - q.values)) == 0.0


def test_t_apply_linear_profile():
    # r(x, z) = z with constant-like zeta at the sine peak column
    z = sine(0.25)
    mesh = fem2d.build_fitted_mesh(sine(0.0), 16, 16)
    tq = t_apply(z, lambda x, zz: zz, "T", mesh)
    # on the peak column x = 0.5, upper region: T r = 0.75 z + 0.25
    ids = mesh.node_grid[8]
    zs = mesh.nodes[ids, 1]
    upper = zs > 0
    assert np.allclose(tq.values[ids][upper], 0.75 * zs[upper] + 0.25, atol=1e-14)


def test_t_apply_round_trip_discrete():
    z = sine(0.2)
    fitted = fem2d.build_fitted_mesh(z, 32, 32)
    ref = fem2d.build_fitted_mesh(sine(0.0), 32, 32)
    fr = ForcingSpec(F=lambda x, zz: x + zz, f=ONE2)
    q = fem2d.assemble_solve(fitted, fr, eps=0.5)
    back = t_apply(z, t_apply(z, q, "T", ref), "T_inverse", fitted)
    # fitted nodes are exact pullbacks of reference nodes: round trip is exact
    assert np.max(np.abs(back.values - q.values)) < 1e-13


def test_t_operator_strong_continuity_and_bound():
    u = lambda x, z: np.sin(np.pi * x) * np.cos(0.5 * np.pi * z)
    gu = lambda x, z: (
        np.pi * np.cos(np.pi * x) * np.cos(0.5 * np.pi * z),
        -0.5 * np.pi * np.sin(np.pi * x) * np.sin(0.5 * np.pi * z),
    )
    nu = h1_norm_smooth(u, gu)
    prev = np.inf
    for n in range(1, 9):
        zz = sine(2.0**-n)
        tv, tg = t_apply_smooth(zz, u, gu)
        diff_v = lambda x, z: tv(x, z) - u(x, z)

        def diff_g(x, z):
            ax, az = tg(x, z)
            bx, bz = gu(x, z)
            return ax - bx, az - bz

        dn = h1_norm_smooth(diff_v, diff_g)
        assert dn < prev
        prev = dn
        tn = h1_norm_smooth(tv, tg)
        assert tn <= pullback_norm_bound(zz) * nu + 1e-9
    assert prev < 1e-2


# --- flattened solves ----------------------------------------------------------


def test_flattened_1d_reduces_to_original():
    fr = ForcingSpec(F=lambda x: np.cos(x), f=lambda x: 1.0 + x)
    rho = solve_flattened_1d(0.0, fr, eps=0.5)
    p = solver1d.solve_exact_1d(fr, 0.0, 0.5)
    xs = np.linspace(-1, 1, 301)
    assert np.max(np.abs(rho.value(xs) - p.value(xs))) < 1e-13


@pytest.mark.parametrize("zeta,eps", [(0.25, 0.5), (0.25, 0.1), (-0.3, 0.5)])
def test_flattened_1d_is_pullback_of_exact(zeta, eps):
    fr = ForcingSpec(F=lambda x: x**2, f=lambda x: np.cos(x))
    rho = solve_flattened_1d(zeta, fr, eps)
    q = solver1d.solve_exact_1d(fr, zeta, eps)
    xs = np.linspace(-1, 1, 401)
    s = np.where(xs < 0, -1.0, 1.0)
    assert np.max(np.abs(rho.value(xs) - q.value(xs * (1 - s * zeta) + zeta))) < 1e-12


def test_flattened_1d_linearity():
    f1 = ForcingSpec(F=lambda x: x, f=lambda x: np.ones_like(x))
    f2 = ForcingSpec(F=lambda x: 2 * x, f=lambda x: 2 * np.ones_like(x))
    a = solve_flattened_1d(0.25, f1, 0.5)
    b = solve_flattened_1d(0.25, f2, 0.5)
    xs = np.linspace(-1, 1, 101)
    assert np.max(np.abs(b.value(xs) - 2 * a.value(xs))) < 1e-12


def test_flattened_2d_zero_perturbation_matches_fitted():
    z0 = sine(0.0)
    ref = fem2d.build_fitted_mesh(z0, 24, 24)
    fr = ForcingSpec(F=ONE2, f=ONE2)
    fitted = fem2d.assemble_solve(ref, fr, eps=0.5)
    rho = solve_flattened(z0, fr, 0.5, ref)
    assert np.max(np.abs(fitted.values - rho.values)) < 1e-10


def test_flattened_2d_energy_identity():
    ref = fem2d.build_fitted_mesh(sine(0.0), 24, 24)
    rho = solve_flattened(sine(0.1), ForcingSpec(F=ZERO2, f=ONE2), 0.1, ref)
    assert rho.meta["bilinear_energy"] == pytest.approx(rho.meta["load_functional"], rel=1e-8)


def test_flattened_2d_requires_reference_mesh():
    fitted = fem2d.build_fitted_mesh(sine(0.2), 8, 8)
    with pytest.raises(ValueError):
        solve_flattened(sine(0.1), ForcingSpec(F=ZERO2, f=ONE2), 0.5, fitted)


def test_two_path_consistency_coarse():
    zeta = sine(0.1)
    fr = ForcingSpec(F=ZERO2, f=ONE2)
    eps = 0.1
    gaps = {}
    for n in (16, 32):
        fitted = fem2d.build_fitted_mesh(zeta, n, n)
        ref = fem2d.build_fitted_mesh(sine(0.0), n, n)
        q = fem2d.assemble_solve(fitted, fr, eps=eps)
        tq = t_apply(zeta, q, "T", ref)
        rho = solve_flattened(zeta, fr, eps, ref)
        gaps[n] = fem2d.vnorm_diff_2d(tq, rho)
    assert gaps[32] < gaps[16]
    assert gaps[32] <= 2.0 * gaps[16] * (16.0 / 32.0)


def test_two_path_consistency_sign_changing_shape():
    # k = 2 sine sweeps strips on both sides of the flat interface
    zeta = sine(0.15, k=2)
    fr = ForcingSpec(F=lambda x, z: np.cos(x + z), f=lambda x, z: 1.0 + 0.5 * x)
    gaps = {}
    for n in (16, 32):
        fitted = fem2d.build_fitted_mesh(zeta, n, n)
        ref = fem2d.build_fitted_mesh(sine(0.0), n, n)
        q = fem2d.assemble_solve(fitted, fr, eps=0.5)
        rho = solve_flattened(zeta, fr, 0.5, ref)
        gaps[n] = fem2d.vnorm_diff_2d(t_apply(zeta, q, "T", ref), rho)
    assert gaps[32] < 0.6 * gaps[16]


def test_two_path_consistency_piecewise_linear_shape():
    # piecewise-C1 displacement: quadrature points never hit the knot
    zeta = make_perturbation("hat", {"knot": 0.5}, 0.15)
    fr = ForcingSpec(F=lambda x, z: x, f=ONE2)
    fitted = fem2d.build_fitted_mesh(zeta, 24, 24)
    ref = fem2d.build_fitted_mesh(sine(0.0), 24, 24)
    q = fem2d.assemble_solve(fitted, fr, eps=0.5)
    rho = solve_flattened(zeta, fr, 0.5, ref)
    gap = fem2d.vnorm_diff_2d(t_apply(zeta, q, "T", ref), rho)
    assert gap < 0.05 * fem2d.vnorm_2d(rho)
