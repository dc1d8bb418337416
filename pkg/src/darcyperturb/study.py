"""Convergence-study harness: perturbation sweeps, measured V-norm gaps and
energies, numeric checks of the perturbation inequalities, and machine-readable
reports (records.csv + summary.json)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter
from typing import Callable, Sequence

import numpy as np

from . import fem2d, flatten, solver1d
from .geometry import Perturbation, lower_bound_constant, make_perturbation, xi_perturbation

SCHEMA_VERSION = 1

MODES = ("oned", "fitted2d", "flattened2d")

# column order of records.csv (runtime is reported in summary.json only, so
# reruns of the same config are byte-identical)
CSV_COLUMNS = (
    "amplitude",
    "norm_sup",
    "norm_w1inf",
    "resolution",
    "vnorm_gap",
    "energy_e1",
    "energy_e2",
    "energy_total",
    "energy_flat_total",
    "lower_bound_c",
    "coercivity_e",
    "xi_p",
    "bound_h_part",
    "bound_hperp_part",
    "bound_total",
    "status",
)


@dataclass
class ConvergenceRecord:
    """One row of a perturbation sweep."""

    amplitude: float
    norm_sup: float
    norm_w1inf: float
    resolution: int
    vnorm_gap: float = math.nan
    energy_e1: float = math.nan
    energy_e2: float = math.nan
    energy_total: float = math.nan
    energy_flat_total: float = math.nan
    lower_bound_c: float = math.nan
    coercivity_e: float = math.nan
    xi_p: float = math.nan
    bound_h_part: float = math.nan
    bound_hperp_part: float = math.nan
    bound_total: float = math.nan
    runtime: float = math.nan
    status: str = "ok"


def shape_family(family: str, params: dict | None = None) -> Callable[[float], Perturbation]:
    """Factory turning an amplitude into a perturbation of a fixed shape."""
    params = dict(params or {})

    def build(amplitude: float) -> Perturbation:
        return make_perturbation(family, dict(params), amplitude)

    return build


def _check_amplitudes(amplitudes: Sequence[float]):
    amps = [float(a) for a in amplitudes]
    if not amps:
        raise ValueError("no amplitudes given")
    if any(a < 0.0 or a >= 1.0 for a in amps):
        raise ValueError("amplitudes must lie in [0, 1)")
    if any(a2 >= a1 for a1, a2 in zip(amps, amps[1:])):
        raise ValueError("amplitudes must be strictly decreasing")
    return amps


def run_sequence(shape: Callable[[float], Perturbation] | None, amplitudes: Sequence[float],
                 forcing, eps: float, resolution: int, mode: str) -> list[ConvergenceRecord]:
    """Solve the perturbed problem along a decreasing amplitude sequence.

    The unperturbed solution is computed once and reused.  Solver errors mark
    the affected row as failed without aborting the sweep.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    amps = _check_amplitudes(amplitudes)
    if mode == "oned":
        return _run_oned(amps, forcing, eps, resolution)
    if shape is None:
        raise ValueError("2D modes need a perturbation shape")
    return _run_twod(shape, amps, forcing, eps, resolution, mode)


def _run_oned(amps, forcing, eps, resolution) -> list[ConvergenceRecord]:
    p = solver1d.solve_exact_1d(forcing, 0.0, eps)
    records = []
    for amp in amps:
        rec = ConvergenceRecord(amplitude=amp, norm_sup=abs(amp), norm_w1inf=abs(amp),
                                resolution=int(resolution))
        t0 = perf_counter()
        try:
            q = solver1d.solve_exact_1d(forcing, amp, eps)
            rec.vnorm_gap = solver1d.vnorm_diff_1d(p, q)
            e1, e2, tot = solver1d.energy_split_1d(q, amp, eps)
            rec.energy_e1, rec.energy_e2, rec.energy_total = e1, e2, tot
            rec.energy_flat_total = solver1d.energy_split_1d(q, 0.0, eps)[2]
            rec.lower_bound_c = 1.0 - eps * abs(1.0 - 1.0 / eps) * abs(amp)
            rec.coercivity_e = (1.0 - abs(amp)) / (1.0 + 3.0 + 4.0 * amp * amp)
            rec.xi_p = solver1d.xi_1d(p, amp)
            bound = solver1d.estimate_rhs_1d(forcing.F, forcing.f, amp, eps)
            rec.bound_h_part = bound.h_part
            rec.bound_hperp_part = bound.hperp_part
            rec.bound_total = bound.total
        except Exception as exc:  # keep sweeping
            rec.status = f"failed: {exc}"
        rec.runtime = perf_counter() - t0
        records.append(rec)
    return records


def _run_twod(shape, amps, forcing, eps, resolution, mode) -> list[ConvergenceRecord]:
    n = int(resolution)
    ref_mesh = fem2d.build_fitted_mesh(shape(0.0), n, n)
    p = fem2d.assemble_solve(ref_mesh, forcing, eps=eps)
    records = []
    for amp in amps:
        zeta = shape(amp)
        rec = ConvergenceRecord(amplitude=amp, norm_sup=zeta.norm_sup,
                                norm_w1inf=zeta.norm_w1inf, resolution=n)
        t0 = perf_counter()
        try:
            rec.lower_bound_c = lower_bound_constant(zeta, eps)
            rec.coercivity_e = flatten.coercivity_constant(zeta)
            rec.xi_p = xi_perturbation(p, zeta) if amp > 0.0 else 0.0
            if mode == "fitted2d":
                mesh = fem2d.build_fitted_mesh(zeta, n, n)
                q = fem2d.assemble_solve(mesh, forcing, eps=eps)
                rec.vnorm_gap = fem2d.vnorm_diff_2d(p, q)
                e1, e2, tot = fem2d.energy_split(q, eps)
                rec.energy_flat_total = fem2d.energy_split_flat(q, eps)[2]
            else:
                rho = flatten.solve_flattened(zeta, forcing, eps, ref_mesh)
                rec.vnorm_gap = fem2d.vnorm_diff_2d(p, rho)
                e1, e2, tot = flatten.flattened_energy_split(rho, zeta, eps)
                rec.energy_flat_total = fem2d.energy_split(rho, eps)[2]
            rec.energy_e1, rec.energy_e2, rec.energy_total = e1, e2, tot
        except Exception as exc:
            rec.status = f"failed: {exc}"
        rec.runtime = perf_counter() - t0
        records.append(rec)
    return records


@dataclass(frozen=True)
class EstimateReport:
    passed: bool
    failures: tuple[str, ...] = ()


def check_estimates(records: Sequence[ConvergenceRecord], mode: str,
                    gap_target: float | None = None) -> EstimateReport:
    """Assert the measured rows against the perturbation inequalities.

    Per row: the 1D gap must respect the explicit bound, and the diagonal
    energy must dominate lower_bound_c times the flat-split energy.  The last
    row's gap is checked against `gap_target` when given.
    """
    failures: list[str] = []
    for k, rec in enumerate(records):
        if rec.status != "ok":
            failures.append(f"row {k}: {rec.status}")
            continue
        if mode == "oned" and not math.isnan(rec.bound_total):
            if rec.vnorm_gap > rec.bound_total + 1e-9:
                failures.append(
                    f"row {k}: gap {rec.vnorm_gap:.6e} exceeds bound {rec.bound_total:.6e}"
                )
        tol = 1e-9 * max(1.0, abs(rec.energy_flat_total))
        if rec.energy_total < rec.lower_bound_c * rec.energy_flat_total - tol:
            failures.append(
                f"row {k}: diagonal energy {rec.energy_total:.6e} below "
                f"C_zeta * flat energy {rec.lower_bound_c * rec.energy_flat_total:.6e}"
            )
    if gap_target is not None and records:
        last = records[-1]
        if last.status == "ok" and not last.vnorm_gap < gap_target:
            failures.append(f"final gap {last.vnorm_gap:.6e} not below target {gap_target:.6e}")
    return EstimateReport(passed=not failures, failures=tuple(failures))


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return repr(v)


def loglog_slope(records: Sequence[ConvergenceRecord], *, points: int = 4) -> float | None:
    """Least-squares slope of log gap vs log amplitude on the last `points` rows."""
    pairs = [
        (r.amplitude, r.vnorm_gap)
        for r in records
        if r.status == "ok" and r.amplitude > 0.0 and r.vnorm_gap > 0.0
    ]
    if len(pairs) < 2:
        return None
    pairs = pairs[-points:]
    la = np.log([a for a, _ in pairs])
    lg = np.log([g for _, g in pairs])
    return float(np.polyfit(la, lg, 1)[0])


def emit_report(records: Sequence[ConvergenceRecord], out_dir,
                estimate_report: EstimateReport | None = None) -> dict:
    """Write records.csv (stable column order, runtime excluded) and summary.json."""
    if not records:
        raise ValueError("no records")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        lines.append(",".join(_fmt(getattr(rec, col)) for col in CSV_COLUMNS))
    csv_path = out / "records.csv"
    csv_path.write_text("\n".join(lines) + "\n")

    gaps = [r.vnorm_gap for r in records if r.status == "ok"]
    monotone = all(b < a for a, b in zip(gaps, gaps[1:])) if len(gaps) > 1 else True
    summary = {
        "schema_version": SCHEMA_VERSION,
        "n_records": len(records),
        "n_failed": sum(1 for r in records if r.status != "ok"),
        "gap_monotone_decreasing": monotone,
        "loglog_slope": loglog_slope(records),
        "final_gap": gaps[-1] if gaps else None,
        "runtimes": [r.runtime for r in records],
    }
    if estimate_report is not None:
        summary["estimates_passed"] = estimate_report.passed
        summary["estimate_failures"] = list(estimate_report.failures)
    json_path = out / "summary.json"
    json_path.write_text(json.dumps(summary, indent=2) + "\n")
    return {"records": str(csv_path), "summary": str(json_path)}
