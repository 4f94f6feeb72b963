"""Sharp versus rounded corners: how far apart are the two solutions?

The sharp domain is solved once.  Its volume quadrature points carry the
comparison: the rounded-corner solution is evaluated there, which is
possible because the sharp domain lies inside every rounded one.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..adapt import adaptive_solve
from ..fem.norms import element_fields, evaluate, rect_fields
from .problems import X_STAR, get_problem, modeling_sigma

__all__ = ["StudyRow", "StudyReport", "modeling_error_study", "fit_slope", "sample_points"]


def _solve(name, p, tol, reference, max_dofs, max_iter, log=None):
    pr = get_problem(name)
    rec = adaptive_solve(pr.domain, p, pr.f, pr.g, pr.g_grad, tol=tol, max_iter=max_iter,
                         max_dofs=max_dofs, n0=pr.n0, reference=reference, log=log)
    return pr, rec


def sample_points(dofs, U):
    """Volume quadrature of the solved field: points, weights and gradients."""
    nv = dofs.prolong @ U
    pts, w, gx, gy = [], [], [], []
    if dofs.n_rect:
        rf = rect_fields(dofs, nv)
        pts.append(rf["pts"].reshape(-1, 2))
        w.append(rf["w"].ravel())
        gx.append(rf["gx"].ravel())
        gy.append(rf["gy"].ravel())
    for t_id in range(len(dofs.tris)):
        e = dofs.n_rect + t_id
        q, W = dofs.element_quadrature(e)
        fv = element_fields(dofs, nv, e, q)
        pts.append(q)
        w.append(W)
        gx.append(fv["gx"])
        gy.append(fv["gy"])
    return np.concatenate(pts), np.concatenate(w), np.concatenate(gx), np.concatenate(gy)


def _rounded_gradients(eps, p, tol, reference, max_dofs, max_iter, pts):
    """Worker: solve on the rounded domain and return its gradient at ``pts``."""
    pr, rec = _solve(f"ex3_eps{eps:g}", p, tol, reference, max_dofs, max_iter)
    ev = evaluate(rec.dofs, rec.dofs.prolong @ rec.U, pts)
    return rec.dofs.n_dofs, len(rec.rows), rec.reason, ev["gx"], ev["gy"]


def fit_slope(eps, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(eps log(1/eps))``."""
    eps = np.asarray(eps, dtype=float)
    x = np.log(eps * np.log(1.0 / eps))
    return float(np.polyfit(x, np.log(np.asarray(values, dtype=float)), 1)[0])


@dataclass
class StudyRow:
    eps: float
    dofs_sharp: int
    dofs_rounded: int | None
    energy: float | None
    point: float | None
    error: str = ""


@dataclass
class StudyReport:
    p: int
    tol: float
    sigma: float
    rows: list
    energy_slope: float | None = None
    point_slope: float | None = None
    seconds: float = 0.0
    notes: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "dofs_sharp", "dofs_rounded", "energy", "point", "error"])
        for r in self.rows:
            w.writerow([repr(r.eps), r.dofs_sharp, "" if r.dofs_rounded is None else r.dofs_rounded,
                        "" if r.energy is None else repr(r.energy), "" if r.point is None else repr(r.point),
                        r.error])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"p": self.p, "tol": self.tol, "sigma": self.sigma, "two_sigma": 2 * self.sigma,
                "energy_slope": self.energy_slope, "point_slope": self.point_slope,
                "seconds": self.seconds, "notes": list(self.notes)}

    def to_text(self) -> str:
        lines = [f"p = {self.p}, TOL = {self.tol:g}, sigma = {self.sigma:.4f}",
                 f"{'eps':>10} {'dofs D1':>9} {'dofs D2':>9} {'energy':>11} {'point':>11}"]
        for r in self.rows:
            if r.error:
                lines.append(f"{r.eps:10.3g} {r.dofs_sharp:9d} failed: {r.error}")
            else:
                lines.append(f"{r.eps:10.3g} {r.dofs_sharp:9d} {r.dofs_rounded:9d} "
                             f"{r.energy:11.4e} {r.point:11.4e}")
        if self.energy_slope is not None:
            lines.append(f"energy slope {self.energy_slope:.3f} (sigma {self.sigma:.3f})")
            lines.append(f"point slope  {self.point_slope:.3f} (2 sigma {2 * self.sigma:.3f})")
        return "\n".join(lines)


def modeling_error_study(eps_list, p: int = 4, tol: float = 1e-4, max_dofs: int | None = None,
                         max_iter: int = 200, workers: int = 1, log=None) -> StudyReport:
    """Relative energy and point-gradient differences between the sharp and
    rounded solutions for each ``eps``, with slopes against ``eps log(1/eps)``.

    Every run stops once its estimator falls below ``tol`` times the first
    estimator of the sharp run, so all solutions meet one absolute target.
    """
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps values must be positive")
    t0 = time.perf_counter()
    say = log or (lambda msg: None)
    pr, rec = _solve("ex3", p, tol, None, max_dofs, max_iter)
    reference = rec.rows[0].estimator
    dofs, U = rec.dofs, rec.U
    say(f"sharp domain: {dofs.n_dofs} dofs after {len(rec.rows)} iterations ({rec.reason})")
    pts, w, gx, gy = sample_points(dofs, U)
    energy_ref = math.sqrt(float(np.sum(w * (gx * gx + gy * gy))))
    star = evaluate(dofs, dofs.prolong @ U, np.array([X_STAR]))
    g_star = np.array([star["gx"][0], star["gy"][0]])
    allpts = np.vstack([pts, [X_STAR]])
    args = [(e, p, tol, reference, max_dofs, max_iter, allpts) for e in eps_list]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_rounded_gradients, *a) for a in args]
            results = []
            for fut in futures:
                try:
                    results.append(fut.result())
                except Exception as exc:         # noqa: BLE001 - reported per eps
                    results.append(exc)
    else:
        results = []
        for a in args:
            try:
                results.append(_rounded_gradients(*a))
            except Exception as exc:             # noqa: BLE001 - reported per eps
                results.append(exc)
    rows = []
    for e, res in zip(eps_list, results):
        if isinstance(res, Exception):
            rows.append(StudyRow(e, dofs.n_dofs, None, None, None, f"{type(res).__name__}: {res}"))
            say(f"eps={e:g}: failed ({res})")
            continue
        n2, iters, reason, hx, hy = res
        dx, dy = gx - hx[:-1], gy - hy[:-1]
        if not np.all(np.isfinite(dx) & np.isfinite(dy)):
            rows.append(StudyRow(e, dofs.n_dofs, n2, None, None, "rounded field undefined on the sharp domain"))
            continue
        energy = math.sqrt(float(np.sum(w * (dx * dx + dy * dy)))) / energy_ref
        point = float(np.hypot(g_star[0] - hx[-1], g_star[1] - hy[-1]) / np.hypot(*g_star))
        rows.append(StudyRow(e, dofs.n_dofs, n2, energy, point))
        say(f"eps={e:g}: {n2} dofs after {iters} iterations ({reason}); energy {energy:.4e}, point {point:.4e}")
    report = StudyReport(p, tol, modeling_sigma(), rows)
    good = [r for r in rows if not r.error]
    if len(good) >= 2:
        report.energy_slope = fit_slope([r.eps for r in good], [r.energy for r in good])
        report.point_slope = fit_slope([r.eps for r in good], [r.point for r in good])
    report.seconds = time.perf_counter() - t0
    return report
