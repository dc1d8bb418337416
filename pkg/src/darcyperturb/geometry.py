"""Reference slab geometry, admissible interface perturbations, and the scalar
constants of the perturbation theory.

The reference domain is Omega = Gamma x (-1, 1) with Gamma = (0, 1), split by
the flat interface at height z = 0 into the lower region Omega_1 (slow flow,
Dirichlet outer boundary) and the upper region Omega_2 (fast flow, coefficient
k2/eps, Neumann outer boundary).  A perturbation zeta moves the interface to
the graph z = zeta(x) while keeping it pinned at the lateral walls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .quadrature import DEFAULT_ORDER, integrate_cells

ENDPOINT_TOL = 1e-12

PERTURBATION_FAMILIES = ("sine", "bump", "hat")


@dataclass(frozen=True)
class DomainConfig:
    """Parameters of the reference slab and the two-scale coupling."""

    dim: int = 2
    gamma_extent: tuple[float, float] = (0.0, 1.0)
    epsilon: float = 1.0
    k1: float = 1.0
    k2: float = 1.0
    poincare_bound: float | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.k1 <= 0.0 or self.k2 <= 0.0:
            raise ValueError("permeabilities k1, k2 must be positive")
        if self.gamma_extent[1] <= self.gamma_extent[0]:
            raise ValueError(f"empty gamma extent {self.gamma_extent}")
        if self.poincare_bound is not None and self.poincare_bound <= 0.0:
            raise ValueError("poincare_bound must be positive when given")


@dataclass(frozen=True)
class Perturbation:
    """An interface displacement x -> zeta(x) on Gamma = (0, 1).

    `value` and `gradient` are vectorized callables; the gradient is one-sided
    (right limit) at the declared knots.  norm_sup is the C(Gamma) norm and
    norm_w1inf = norm_sup + ess-sup |grad zeta|.
    """

    representation: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    norm_sup: float
    norm_w1inf: float
    amplitude: float
    knots: tuple[float, ...] = ()
    family: str = ""

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True)
class ForcingSpec:
    """Volume source F and interface flux source f.

    In 1D both are callables of x on (-1, 1); in 2D, F(x, z) on Omega and
    f(x, z) on the slab Gamma x (-1, 1) so it is defined on Gamma and on any
    perturbed interface.
    """

    F: Callable
    f: Callable
    quadrature_order: int = DEFAULT_ORDER

    def __post_init__(self):
        if self.quadrature_order < 1:
            raise ValueError("quadrature_order must be a positive integer")


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    violations: tuple[str, ...] = ()


def _as_shape(fn):
    """Wrap a scalar expression so it maps float arrays to float arrays."""

    def wrapped(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(fn(x), dtype=float) * np.ones_like(x)

    return wrapped


def make_perturbation(family: str, params: dict | None = None, amplitude: float = 0.0) -> Perturbation:
    """Build an admissible perturbation amplitude * shape(x) with sup|shape| = 1.

    Families: sine (params: wavenumber, positive integer), bump (smooth,
    compactly flat at the walls), hat (params: knot in (0,1), piecewise
    linear tent).
    """
    params = dict(params or {})
    if amplitude < 0.0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    if amplitude >= 1.0:
        raise ValueError(f"amplitude must be < 1 so the graph stays inside Omega, got {amplitude}")

    knots: tuple[float, ...] = ()
    if family == "sine":
        raw = params.pop("wavenumber", 1)
        k = int(raw)
        if k < 1 or float(k) != float(raw):
            raise ValueError(f"sine wavenumber must be a positive integer, got {raw}")
        shape = _as_shape(lambda x: np.sin(k * np.pi * x))
        grad_shape = _as_shape(lambda x: k * np.pi * np.cos(k * np.pi * x))
        grad_sup = k * np.pi
        label = f"sine(k={k})"
    elif family == "bump":
        def raw(x):
            g = x * (1.0 - x)
            out = np.zeros_like(g)
            inside = g > 1e-12
            out[inside] = np.exp(4.0 - 1.0 / g[inside])
            return out

        def raw_grad(x):
            g = x * (1.0 - x)
            out = np.zeros_like(g)
            inside = g > 1e-3  # derivative underflows to 0 well before this
            gi = g[inside]
            out[inside] = np.exp(4.0 - 1.0 / gi) * (1.0 - 2.0 * x[inside]) / gi**2
            return out

        shape = _as_shape(raw)
        grad_shape = _as_shape(raw_grad)
        xs = np.linspace(0.0, 1.0, 20001)
        grad_sup = float(np.max(np.abs(grad_shape(xs))))  # sampled ess-sup
        label = "bump"
    elif family == "hat":
        c = float(params.pop("knot", 0.5))
        if not 0.0 < c < 1.0:
            raise ValueError(f"hat knot must lie in (0, 1), got {c}")
        shape = _as_shape(lambda x: np.where(x <= c, x / c, (1.0 - x) / (1.0 - c)))
        grad_shape = _as_shape(lambda x: np.where(x < c, 1.0 / c, -1.0 / (1.0 - c)))
        grad_sup = max(1.0 / c, 1.0 / (1.0 - c))
        knots = (c,)
        label = f"hat(knot={c})"
    else:
        raise ValueError(f"unknown perturbation family {family!r}; choose from {PERTURBATION_FAMILIES}")
    if params:
        raise ValueError(f"unused parameters for family {family!r}: {sorted(params)}")

    for endpoint in (0.0, 1.0):
        if abs(float(shape(endpoint))) > ENDPOINT_TOL:
            raise ValueError(f"shape does not vanish at x = {endpoint}")

    a = float(amplitude)
    value = _as_shape(lambda x, s=shape: a * s(x))
    gradient = _as_shape(lambda x, g=grad_shape: a * g(x))
    return Perturbation(
        representation="analytic-expression",
        value=value,
        gradient=gradient,
        norm_sup=a,
        norm_w1inf=a + a * grad_sup,
        amplitude=a,
        knots=knots,
        family=label,
    )


def perturbation_from_table(x: np.ndarray, z: np.ndarray) -> Perturbation:
    """Piecewise-linear perturbation through tabulated (x, zeta) samples."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.ndim != 1 or x.shape != z.shape or len(x) < 2:
        raise ValueError("need two equal-length 1D columns with at least 2 rows")
    if np.any(np.diff(x) <= 0.0):
        raise ValueError("abscissae must be strictly increasing")
    if abs(x[0]) > ENDPOINT_TOL or abs(x[-1] - 1.0) > ENDPOINT_TOL:
        raise ValueError("table must span Gamma = [0, 1]")
    if abs(z[0]) > ENDPOINT_TOL or abs(z[-1]) > ENDPOINT_TOL:
        raise ValueError("tabulated zeta must vanish at the walls")
    if np.max(np.abs(z)) >= 1.0:
        raise ValueError("tabulated |zeta| must stay below 1")

    slopes = np.diff(z) / np.diff(x)

    def value(t):
        return np.interp(np.asarray(t, dtype=float), x, z)

    def gradient(t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    sup = float(np.max(np.abs(z)))
    return Perturbation(
        representation="piecewise-linear-on-knots",
        value=_as_shape(value),
        gradient=_as_shape(gradient),
        norm_sup=sup,
        norm_w1inf=sup + float(np.max(np.abs(slopes))),
        amplitude=sup,
        knots=tuple(float(t) for t in x[1:-1]),
        family="table",
    )


def validate_admissible(zeta: Perturbation, cfg: DomainConfig | None = None,
                        samples: int = 1024) -> AdmissibilityReport:
    """Check boundary vanishing, |zeta| < 1 and gradient boundedness by sampling."""
    a, b = cfg.gamma_extent if cfg is not None else (0.0, 1.0)
    violations: list[str] = []

    for endpoint in (a, b):
        v = float(zeta.value(endpoint))
        if abs(v) > ENDPOINT_TOL:
            violations.append(f"zeta does not vanish on the boundary of Gamma: zeta({endpoint}) = {v:g}")

    xs = np.linspace(a, b, samples)
    vals = zeta.value(xs)
    if not np.all(np.isfinite(vals)):
        violations.append("zeta takes non-finite values")
    elif float(np.max(np.abs(vals))) >= 1.0:
        violations.append(f"|zeta| reaches {np.max(np.abs(vals)):g} >= 1: graph leaves Omega")

    interior = xs[1:-1]
    if zeta.knots:
        keep = np.all(np.abs(interior[:, None] - np.array(zeta.knots)[None, :]) > 1e-9, axis=1)
        interior = interior[keep]
    grads = zeta.gradient(interior)
    if not np.all(np.isfinite(grads)):
        violations.append("gradient of zeta is unbounded at a sampled point")

    return AdmissibilityReport(admissible=not violations, violations=tuple(violations))


def _segment_edges(zeta: Perturbation, samples: int = 2048) -> np.ndarray:
    """Edges of smooth one-signed segments of zeta: knots plus root-found sign changes."""
    edges = {0.0, 1.0}
    edges.update(zeta.knots)
    xs = np.linspace(0.0, 1.0, samples + 1)
    vals = zeta.value(xs)
    sgn = np.sign(vals)
    for i in np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]:
        edges.add(brentq(lambda t: float(zeta.value(t)), xs[i], xs[i + 1], xtol=1e-14))
    zero_hits = [float(x) for x, v in zip(xs, vals) if v == 0.0]
    if len(zero_hits) <= 64:  # isolated touch points; skip for flat stretches
        edges.update(zero_hits)
    return np.array(sorted(edges))


def strip_measures(zeta: Perturbation, *, order: int = 8, subcells: int = 16) -> tuple[float, float]:
    """Lebesgue measures of the strips the perturbed interface sweeps.

    m1 = meas(Omega_1^zeta - Omega_1) = int max(zeta, 0),
    m2 = meas(Omega_2^zeta - Omega_2) = int max(-zeta, 0).
    """
    edges = _segment_edges(zeta)
    cells = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        cells.append(np.linspace(lo, hi, subcells + 1))
    all_edges = np.unique(np.concatenate(cells))
    m1 = integrate_cells(lambda x: np.maximum(zeta.value(x), 0.0), all_edges, order=order)
    m2 = integrate_cells(lambda x: np.maximum(-zeta.value(x), 0.0), all_edges, order=order)
    return max(m1, 0.0), max(m2, 0.0)


def lower_bound_constant(zeta: Perturbation, eps: float) -> float:
    """Constant 1 - eps*|1 - 1/eps|*(m1 + m2) bounding the perturbed energy form
    from below against the unperturbed one (coefficient as derived, see README
    notes on the displayed form)."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    m1, m2 = strip_measures(zeta)
    return 1.0 - eps * abs(1.0 - 1.0 / eps) * (m1 + m2)


def xi_perturbation(field, zeta: Perturbation, *, order: int = 8, x_subcells: int = 32) -> float:
    """Signed gradient-energy difference over the swept strips.

    Returns int_{Omega_2^zeta - Omega_2} |grad r|^2 - int_{Omega_1^zeta - Omega_1} |grad r|^2.
    `field` is either a callable (x, z) -> (gx, gz) or an object with such a
    `gradient` attribute.
    """
    grad = getattr(field, "gradient", field)

    def energy_column(x):
        # for each abscissa, +/- the z-integral of |grad|^2 between 0 and zeta(x)
        x = np.asarray(x, dtype=float)
        zv = zeta.value(x)
        t, w = np.polynomial.legendre.leggauss(order)
        half = 0.5 * zv  # from 0 to zeta(x)
        zq = half[:, None] * (t[None, :] + 1.0)
        xq = np.broadcast_to(x[:, None], zq.shape)
        gx, gz = grad(xq.ravel(), zq.ravel())
        g2 = (np.asarray(gx, dtype=float) ** 2 + np.asarray(gz, dtype=float) ** 2).reshape(zq.shape)
        col = half * (g2 @ w)  # signed: negative where zeta < 0
        # zeta > 0 strip lies in Omega_1^z - Omega_1 (minus sign); zeta < 0 strip
        # in Omega_2^z - Omega_2 (plus sign): both give -col.
        return -col

    edges = _segment_edges(zeta)
    cells = [np.linspace(lo, hi, x_subcells + 1) for lo, hi in zip(edges[:-1], edges[1:])]
    return integrate_cells(energy_column, np.unique(np.concatenate(cells)), order=order)
