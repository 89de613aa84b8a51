"""Executable audits of the gradient potential estimates and the borderline
regularity criteria.

Estimates with unspecified constants are audited by fitting one constant per
run (the max of LHS/RHS over the sample) and checking that it moves by less
than 20% between the two finest grids (and, where asked, under halving r).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DomainError, ResolutionError
from .grid import Ball, GridField, _rho_key, gradient, restrict_mask, unit_ball_volume
from .potentials import modified_riesz
from .spaces import (
    rearranged_bound,
    lorentz_functional,
    marcinkiewicz_holder,
    morrey_functional,
    oscillation_modulus,
    rearrange,
)

STABILITY = 0.2
DEGENERATE = 1e-12
OMEGA1_MARGIN = 0.25  # Omega'
OMEGA2_MARGIN = 0.125  # Omega''


def spread(values):
    """Relative spread (max - min)/max of positive numbers."""
    v = np.asarray(values, dtype=float)
    top = np.max(np.abs(v))
    return float((v.max() - v.min()) / top) if top > 0 else 0.0


def stable(a, b, tol=STABILITY):
    return spread([a, b]) < tol


def default_n_e(n):
    return n / 2 + 0.01 * n


@dataclass
class EstimateAudit:
    estimate: str
    params: dict
    samples: list
    fitted_c: float
    trend: list
    verdict: str
    meta: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict in ("pass", "negative-control", "signal")

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "params": self.params,
            "samples": self.samples,
            "fitted_c": self.fitted_c,
            "trend": self.trend,
            "verdict": self.verdict,
            "meta": self.meta,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self, path):
        keys = ["run", "lhs", "rhs"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys + ["point"])
            for row in self.samples:
                w.writerow([row.get("run"), repr(float(row["lhs"])), repr(float(row["rhs"])), json.dumps(row.get("x"))])


# --------------------------------------------------------------------------
# ball helpers


def _ball_cells(grid, center, radius, inside=True):
    if radius < 2 * grid.h * (1 - 1e-12):
        raise ResolutionError(f"ball radius {radius} is below 2h = {2 * grid.h}")
    if inside and not grid.contains_ball(Ball(center, radius)):
        raise DomainError(f"ball B({list(center)}, {radius}) leaves the grid box")
    d2, flat = grid.profile(center, radius)
    return flat[flat >= 0]


def snap(grid, x):
    """Nearest cell centre."""
    return grid.center_of(grid.index_of(np.clip(x, grid.low + 1e-12, grid.high - 1e-12)))


def _du(u):
    return u if u.kind == "vector" else gradient(u)


def excess(u: GridField, B: Ball, q, Du=None):
    """(mean_B |Du - (Du)_B|^q)^(1/q); ``u`` may already be the gradient field."""
    if q < 1:
        raise ArgumentError("q must be >= 1")
    Du = Du if Du is not None else _du(u)
    cells = _ball_cells(Du.grid, B.center, B.radius)
    vals = Du.flat()[cells]
    dev = np.linalg.norm(vals - vals.mean(0), axis=1)
    return float(np.mean(dev**q) ** (1.0 / q))


def ball_lq(Du: GridField, center, radius, q):
    cells = _ball_cells(Du.grid, center, radius)
    return float(np.mean(Du.magnitude()[cells] ** q) ** (1.0 / q))


def ball_lp_mean(f: GridField, center, radius, p):
    cells = _ball_cells(f.grid, center, radius, inside=False)
    d2, flat = f.grid.profile(center, radius)
    return float((np.sum(f.magnitude()[cells] ** p) / flat.size) ** (1.0 / p))


def sup_norm(field: GridField, mask=None):
    mag = field.magnitude()
    return float(mag[mask.reshape(-1)].max() if mask is not None else mag.max())


def sample_points(grid, count, seed=0, margin=OMEGA1_MARGIN):
    """Seeded points in the sub-box Omega' (same physical points on every grid)."""
    rng = np.random.default_rng(seed)
    width = grid.high - grid.low
    lo = grid.low + margin * width
    hi = grid.high - margin * width
    return lo + (hi - lo) * rng.random((count, grid.dim))


# --------------------------------------------------------------------------
# dyadic chains


@dataclass
class DyadicChain:
    center: list
    r: float
    sigma: float
    depth: int
    radii: list
    records: list

    def telescoping(self):
        """(lhs, rhs) of sum_i |(Du)_{B_i+1} - (Du)_{B_i}| <= sigma^(-n/q) sum_i E_q(B_i)."""
        n, q = self.records[0]["n"], self.records[0]["q"]
        means = [np.asarray(r["mean_Du"]) for r in self.records]
        lhs = sum(float(np.linalg.norm(means[i + 1] - means[i])) for i in range(len(means) - 1))
        rhs = self.sigma ** (-n / q) * sum(r["excess"] for r in self.records[:-1])
        return lhs, rhs

    def summation_constant(self):
        """Measured K in sum_{i<=j+1} E_i <= K (E_0 + sum_i r_i (mean |f|^p)^(1/p)), max over j."""
        E = np.array([r["excess"] for r in self.records])
        P = np.array([r["potential_term"] for r in self.records])
        denom = E[0] + P.sum()
        if denom <= DEGENERATE:
            return 0.0
        return float(np.max(np.cumsum(E)) / denom)

    def to_dict(self):
        return {"center": self.center, "r": self.r, "sigma": self.sigma, "depth": self.depth,
                "radii": self.radii, "records": self.records}


def build_chain(u: GridField, f: GridField, x0, r, sigma, p, q, depth=None, Du=None):
    """Balls B_i = B(x0, sigma^i r/2), i = 0..depth, with per-ball records."""
    if not 0.05 <= sigma <= 0.5:
        raise ArgumentError("sigma must lie in [0.05, 0.5]")
    grid = u.grid
    h = grid.h
    if depth is None:
        depth = int(math.floor(math.log(2 * h / (r / 2)) / math.log(sigma) + 1e-9))
    radii = [sigma**i * r / 2 for i in range(depth + 1)]
    if radii[-1] < 2 * h * (1 - 1e-12):
        raise ResolutionError(f"chain depth {depth} reaches radius {radii[-1]:.3g} below 2h")
    Du = Du if Du is not None else _du(u)
    records = []
    for rho in radii:
        cells = _ball_cells(grid, x0, rho)
        vals = Du.flat()[cells]
        mean = vals.mean(0)
        E = float(np.mean(np.linalg.norm(vals - mean, axis=1) ** q) ** (1.0 / q))
        records.append({"radius": rho, "excess": E, "mean_Du": mean.tolist(), "count": int(cells.size),
                        "potential_term": rho * ball_lp_mean(f, x0, rho, p), "n": grid.dim, "q": q})
    return DyadicChain(list(map(float, x0)), r, sigma, depth, radii, records)


# --------------------------------------------------------------------------
# gradient potential estimate


def gradient_potential_run(u, f, p, q, points, r, Du=None):
    grid = u.grid
    Du = Du if Du is not None else _du(u)
    rows = []
    for x in points:
        xc = snap(grid, x)
        lhs = float(np.linalg.norm(Du.flat()[np.ravel_multi_index(grid.index_of(xc), grid.cells)]))
        pot = modified_riesz(f, xc, r, p).value
        avg = ball_lq(Du, xc, r, q)
        rows.append({"x": xc.tolist(), "lhs": lhs, "rhs": pot + avg, "potential": pot, "lq_mean": avg})
    ratios = [row["lhs"] / row["rhs"] for row in rows if row["rhs"] > DEGENERATE]
    return (max(ratios) if ratios else 0.0), rows


def _check_pq(n, p, q, n_e):
    if q <= n:
        raise ArgumentError("q must exceed n")
    if not n_e < p <= n:
        raise ArgumentError(f"p must lie in (n_E, n] = ({n_e}, {n}]")


def gradient_potential_audit(solutions, p, q, points, r, n_e=None):
    """Fit c in |Du(x0)| <= c [I_p~(x0, r) + (mean_{B_r} |Du|^q)^(1/q)].

    ``solutions`` lists, per refining grid, either one (u, f) pair or a list
    of pairs (a problem suite; c is then the max over the suite).  Verdict
    "pass" when c moves < 20% between the two finest grids and under r -> r/2
    on the finest grid.  Both r and r/2 must be at least 16h.
    """
    levels = [s if isinstance(s, list) else [s] for s in solutions]
    grids = [lvl[0][0].grid for lvl in levels]
    n = grids[-1].dim
    _check_pq(n, p, q, n_e if n_e is not None else default_n_e(n))
    if r < 16 * max(g.h for g in grids) * (1 - 1e-12):
        raise ResolutionError("r must be at least 16h on the coarsest grid")
    if r / 2 < 16 * grids[-1].h * (1 - 1e-12):
        raise ResolutionError("r/2 must be at least 16h on the finest grid")

    def run(level, radius, tag):
        cs, rows = [], []
        for k, (u, f) in enumerate(level):
            c, rr = gradient_potential_run(u, f, p, q, points, radius)
            cs.append(c)
            rows += [dict(row, run=f"{u.grid.cells[0]}:{tag}", problem=k) for row in rr]
        return cs, rows

    trend, samples = [], []
    for level in levels:
        cs, rows = run(level, r, "r")
        trend.append({"cells": level[0][0].grid.cells[0], "r": r, "c": max(cs), "per_problem": cs})
        samples += rows
    cs, rows = run(levels[-1], r / 2, "r/2")
    trend.append({"cells": grids[-1].cells[0], "r": r / 2, "c": max(cs), "per_problem": cs})
    samples += rows
    c_fine, c_half = trend[-2]["c"], trend[-1]["c"]
    checks = {"refinement": len(levels) >= 2 and stable(trend[-3]["c"], c_fine),
              "r_halving": stable(c_fine, c_half)}
    verdict = "pass" if all(checks.values()) else "fail"
    return EstimateAudit("gradient-potential", {"p": p, "q": q, "r": r, "problems": len(levels[0])},
                         samples, float(max(t["c"] for t in trend)), trend, verdict, {"checks": checks})


# --------------------------------------------------------------------------
# excess decay


def excess_ratios(u, points, r, q, sigmas, Du=None):
    """Per point: {sigma: E_q(B_{sigma r})/E_q(B_r)}; points with E_q(B_r) < 1e-12 are skipped."""
    grid = u.grid
    Du = Du if Du is not None else _du(u)
    out = []
    for x in points:
        xc = snap(grid, x)
        top = excess(None, Ball(xc, r), q, Du)
        if top < DEGENERATE:
            continue
        out.append({"x": xc.tolist(), "top": top,
                    "ratios": {s: excess(None, Ball(xc, s * r), q, Du) / top for s in sigmas}})
    return out


def best_sigma(per_point, sigmas, share=0.95, target=1 / 3):
    """Largest sigma with ratio <= target at >= ``share`` of the points."""
    best = None
    for s in sorted(sigmas):
        ok = np.mean([pp["ratios"][s] <= target for pp in per_point]) if per_point else 0.0
        if ok >= share:
            best = s
    return best


def excess_decay_audit(solutions, q, sigmas, points, r, share=0.95):
    """Search sigma with E_q(B_sigma r)/E_q(B_r) <= 1/3 at >= 95% of the centres.

    Ratios below 2h on the coarsest grid are dropped from the search.
    """
    hmax = max(u.grid.h for u in solutions)
    dropped = [s for s in sigmas if s * r < 2 * hmax * (1 - 1e-12)]
    sigmas = [s for s in sigmas if s not in dropped]
    trend, samples = [], []
    for u in solutions:
        per = excess_ratios(u, points, r, q, sigmas)
        s = best_sigma(per, sigmas, share)
        fractions = {repr(float(sg)): float(np.mean([pp["ratios"][sg] <= 1 / 3 for pp in per])) if per else 0.0
                     for sg in sigmas}
        trend.append({"cells": u.grid.cells[0], "sigma": s, "used_points": len(per), "fractions": fractions})
        for pp in per:
            for sg in sigmas:
                samples.append({"run": str(u.grid.cells[0]), "x": pp["x"], "sigma": sg,
                                "lhs": pp["ratios"][sg], "rhs": 1 / 3})
    found = [t["sigma"] for t in trend]
    ok = found[-1] is not None and (len(found) < 2 or found[-2] is not None)
    small = ok and any(s <= 0.2 for s in sigmas if all(
        t["fractions"][repr(float(s))] >= share for t in trend[-2:]))
    verdict = "pass" if ok and small else "fail"
    return EstimateAudit("excess-decay", {"q": q, "r": r, "sigmas": list(sigmas), "share": share},
                         samples, float(found[-1]) if found[-1] is not None else math.nan, trend, verdict,
                         {"dropped_sigmas": dropped})


def amplitude_ladder_sigma(make_solution, amplitudes, q, sigmas, points, r, share=0.95):
    """Achieved sigma per rhs amplitude; ``make_solution(a) -> u``."""
    out = []
    for a in amplitudes:
        per = excess_ratios(make_solution(a), points, r, q, sigmas)
        out.append({"amplitude": a, "sigma": best_sigma(per, sigmas, share)})
    return out


# --------------------------------------------------------------------------
# VMO decay and modulus of continuity


def vmo_alpha(sigma):
    """alpha = -log 3 / log sigma."""
    return -math.log(3) / math.log(sigma)


def vmo_decay_run(u, f, p, q, sigma, points, r, fractions, Du=None):
    grid = u.grid
    Du = Du if Du is not None else _du(u)
    alpha = vmo_alpha(sigma)
    dmax = sup_norm(Du, restrict_mask(grid, OMEGA2_MARGIN))
    rows = []
    for x in points:
        xc = snap(grid, x)
        pot = modified_riesz(f, xc, 2 * r, p).value
        for t in fractions:
            rho = t * r
            lhs = excess(None, Ball(xc, rho), q, Du)
            rhs = (rho / r) ** alpha * dmax + pot
            rows.append({"x": xc.tolist(), "rho": rho, "lhs": lhs, "rhs": rhs})
    ratios = [row["lhs"] / row["rhs"] for row in rows if row["rhs"] > DEGENERATE]
    return (max(ratios) if ratios else 0.0), rows


def vmo_decay_audit(solutions, p, q, sigma, points, r, fractions=(0.125, 0.25, 0.5, 1.0)):
    """Fit c in E_q(B_rho) <= c [(rho/r)^alpha ||Du||_inf(Omega'') + I_p~(x0, 2r)].

    rho = t r for t in ``fractions``; fractions below 2h on the coarsest grid are dropped.
    """
    hmax = max(u.grid.h for u, _ in solutions)
    fractions = [t for t in fractions if t * r >= 2 * hmax * (1 - 1e-12)]
    trend, samples = [], []
    for u, f in solutions:
        c, rows = vmo_decay_run(u, f, p, q, sigma, points, r, fractions)
        trend.append({"cells": u.grid.cells[0], "c": c})
        samples += [dict(row, run=str(u.grid.cells[0])) for row in rows]
    ok = len(trend) >= 2 and stable(trend[-2]["c"], trend[-1]["c"])
    return EstimateAudit("vmo-decay", {"p": p, "q": q, "sigma": sigma, "alpha": vmo_alpha(sigma), "r": r},
                         samples, float(max(t["c"] for t in trend)), trend, "pass" if ok else "fail")


def make_pairs(points, separations, seed=0):
    """Pairs (x, x + d e) with seeded unit directions e."""
    rng = np.random.default_rng(seed)
    pairs = []
    for x in points:
        ang = rng.normal(size=len(x))
        ang /= np.linalg.norm(ang)
        for d in separations:
            pairs.append((np.asarray(x, float), np.asarray(x, float) + d * ang))
    return pairs


def continuity_run(u, f, p, delta, pairs, alpha, Du=None):
    grid = u.grid
    n = grid.dim
    Du = Du if Du is not None else _du(u)
    dmax = sup_norm(Du, restrict_mask(grid, OMEGA2_MARGIN))
    rear = rearrange(f.power(p))
    rows = []
    for a, b in pairs:
        xa, xb = snap(grid, a), snap(grid, b)
        d = float(np.linalg.norm(xa - xb))
        if d < 4 * grid.h * (1 - 1e-12):
            continue
        ia = np.ravel_multi_index(grid.index_of(xa), grid.cells)
        ib = np.ravel_multi_index(grid.index_of(xb), grid.cells)
        lhs = float(np.linalg.norm(Du.flat()[ia] - Du.flat()[ib]))
        rad = 4 * d**delta
        pot = max(modified_riesz(f, xa, rad, p).value, modified_riesz(f, xb, rad, p).value)
        rows.append({"x": [xa.tolist(), xb.tolist()], "d": d, "lhs": lhs,
                     "rhs": dmax * d ** (alpha * (1 - delta)) + pot, "potential": pot,
                     "lorentz_form": dmax * d ** (alpha * (1 - delta)) + rearranged_bound(rear, p, rad, n)})
    ratios = [row["lhs"] / row["rhs"] for row in rows if row["rhs"] > DEGENERATE]
    return (max(ratios) if ratios else 0.0), rows


def continuity_modulus_audit(solutions, p, delta, pairs, alpha=1.0):
    """Fit c in |Du(x1) - Du(x2)| <= c [||Du||_inf |x1-x2|^(alpha(1-delta)) + max I_p~(x, 4|x1-x2|^delta)]."""
    if not 0 < delta <= 1:
        raise ArgumentError("delta must lie in (0, 1]")
    trend, samples = [], []
    for u, f in solutions:
        c, rows = continuity_run(u, f, p, delta, pairs, alpha)
        trend.append({"cells": u.grid.cells[0], "c": c})
        samples += [dict(row, run=str(u.grid.cells[0])) for row in rows]
    ok = len(trend) >= 2 and stable(trend[-2]["c"], trend[-1]["c"])
    return EstimateAudit("continuity", {"p": p, "delta": delta, "alpha": alpha}, samples,
                         float(max(t["c"] for t in trend)), trend, "pass" if ok else "fail")


def potential_term_trend(fields, p, delta, base_separation, center=None):
    """Pair-shrinking trend of the potential term of the continuity estimate.

    On the k-th grid the pair straddles ``center`` at separation
    base_separation * 2^-k (constant in cells when grids double), and the term
    is max over the pair of I_p~(x, 4 d^delta).
    """
    out = []
    for k, f in enumerate(fields):
        grid = f.grid
        c = np.zeros(grid.dim) if center is None else np.asarray(center, float)
        d = base_separation * 2.0**-k
        e = np.zeros(grid.dim)
        e[0] = d / 2
        xa, xb = snap(grid, c - e), snap(grid, c + e)
        dd = float(np.linalg.norm(xa - xb))
        rad = 4 * dd**delta
        term = max(modified_riesz(f, xa, rad, p).value, modified_riesz(f, xb, rad, p).value)
        out.append({"cells": grid.cells[0], "d": dd, "radius": rad, "term": term})
    return out


def sharpness_signal(trend_finite, trend_borderline):
    """Relative pair-shrinking signal between the two witnesses.

    The signal holds when the L(n,1) witness term decreases strictly along the
    trend while the borderline-to-finite term ratio increases strictly, i.e.
    the borderline term does not vanish at the rate of the finite one.
    """
    tf = np.array([t["term"] for t in trend_finite])
    tb = np.array([t["term"] for t in trend_borderline])
    rel = tb / tf
    decreasing = bool(np.all(np.diff(tf) < 0))
    separating = bool(np.all(np.diff(rel) > 0))
    return decreasing and separating, {
        "finite_ratio": float(tf[-1] / tf[0]),
        "borderline_ratio": float(tb[-1] / tb[0]),
        "relative": rel.tolist(),
        "finite_decreasing": decreasing,
        "separating": separating,
    }


# --------------------------------------------------------------------------
# BMO / VMO criteria


def morrey_profile(f: GridField, x, p, radii):
    """(rho^(p-n) int_{B_rho(x)} |f|^p)^(1/p) per radius (zero extension)."""
    grid = f.grid
    n = grid.dim
    d2, flat = grid.profile(x, max(radii))
    vals = np.zeros(flat.size)
    inside = flat >= 0
    vals[inside] = f.magnitude()[flat[inside]] ** p
    cum = np.concatenate([[0.0], np.cumsum(vals)])
    k = np.searchsorted(d2, [_rho_key(rho, grid.h) for rho in radii], side="left")
    return (np.asarray(radii) ** (p - n) * cum[k] * grid.cell_volume) ** (1.0 / p)


def M_function(f, x, p, r):
    """M(r) = sup over ladder radii 2h * 2^(k/4) < r of the Morrey-type quantity."""
    h = f.grid.h
    radii = 2 * h * 2.0 ** (np.arange(0, 64) / 4)
    radii = radii[radii < r * (1 + 1e-12)]
    if radii.size == 0:
        raise ResolutionError("r is below 2h")
    return float(morrey_profile(f, x, p, radii).max())


def classify_M(values, vanish=0.5):
    """Classify M over decreasing radii: 'vanishing' if it decays monotonically below
    ``vanish`` of its largest-r value, 'bounded' if finite and not vanishing."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return "unbounded"
    if v[0] <= DEGENERATE:
        return "vanishing"
    decreasing = np.all(np.diff(v) <= 1e-12 * v[0])
    return "vanishing" if decreasing and v[-1] <= vanish * v[0] else "bounded"


def bmo_vmo_criteria_audit(u, f, p, q, radii, points, sigma=1 / 3, osc_radii=None):
    """Classify the input through M(r) and cross-check the oscillation of Du.

    radii: decreasing list of r values.  Also fits c in
    E_q(B_rho) <= c [r^(-n/q) (rho/r)^alpha ||Du||_{L^q(B_r)} + M(r)] with rho = r/4.
    """
    grid = u.grid
    n = grid.dim
    radii = sorted(radii, reverse=True)
    Du = _du(u)
    alpha = vmo_alpha(sigma)
    Mrows, rows = [], []
    for x in points:
        xc = snap(grid, x)
        Ms = [M_function(f, xc, p, r) for r in radii]
        Mrows.append({"x": xc.tolist(), "M": Ms, "class": classify_M(Ms)})
        for r, M in zip(radii, Ms):
            rho = r / 4
            if rho < 2 * grid.h:
                continue
            lhs = excess(None, Ball(xc, rho), q, Du)
            cells = _ball_cells(grid, xc, r)
            lq = float(np.sum(Du.magnitude()[cells] ** q) * grid.cell_volume) ** (1.0 / q)
            rhs = r ** (-n / q) * (rho / r) ** alpha * lq + M
            rows.append({"x": xc.tolist(), "r": r, "lhs": lhs, "rhs": rhs})
    classes = {m["class"] for m in Mrows}
    input_class = "vanishing" if classes == {"vanishing"} else "bounded"
    osc_radii = osc_radii or [R for R in radii if R >= 2 * grid.h]
    osc = oscillation_modulus(Du, sorted(osc_radii))
    osc_vals = [w for _, w in osc]
    osc_class = "vanishing" if classify_M(osc_vals[::-1]) == "vanishing" else "bounded"
    verdict = {"vanishing": "VMO", "bounded": "BMO-not-VMO"}[input_class]
    ratios = [row["lhs"] / row["rhs"] for row in rows if row["rhs"] > DEGENERATE]
    return EstimateAudit(
        "bmo-vmo", {"p": p, "q": q, "radii": radii, "alpha": alpha}, rows,
        float(max(ratios)) if ratios else 0.0,
        [{"cells": grid.cells[0], "M": Mrows, "oscillation": osc}],
        verdict,
        {"input_class": input_class, "oscillation_class": osc_class, "consistent": input_class == osc_class},
    )


def weak_holder_check(f: GridField, points, radii, p, tol=0.05):
    """Marcinkiewicz-Hoelder bound on every (point, radius); returns (ok, rows)."""
    rows = []
    for x in points:
        for r in radii:
            lhs, rhs = marcinkiewicz_holder(f, Ball(tuple(x), r), p)
            rows.append({"x": list(map(float, x)), "r": r, "lhs": lhs, "rhs": rhs, "ratio": lhs / rhs})
    ok = all(row["lhs"] <= (1 + tol) * row["rhs"] for row in rows)
    return ok, rows


# --------------------------------------------------------------------------
# W^{1,q} bound


def w1q_ratio(u, f, p, q, center, radius, Du=None):
    """(mean_{B_R/2} |Du|^q)^(1/q) / [sup_{B_R}|u|/R + R (mean_{B_R} |f|^p)^(1/p)].

    The unit-ball normalization u~(y) = u(x0 + R y)/R, f~ = R f(x0 + R y)
    leaves Du unchanged.
    """
    grid = u.grid
    Du = Du if Du is not None else _du(u)
    lhs = ball_lq(Du, center, radius / 2, q)
    cells = _ball_cells(grid, center, radius)
    rhs = float(np.abs(u.flat()[cells]).max()) / radius + radius * ball_lp_mean(f, center, radius, p)
    return lhs, rhs


def w1q_bound_audit(solutions, p, q, center, radius):
    n = solutions[-1][0].grid.dim
    if p < n and not 1 <= q < n * p / (n - p):
        raise ArgumentError("q must lie in [1, np/(n-p))")
    trend, samples = [], []
    for u, f in solutions:
        lhs, rhs = w1q_ratio(u, f, p, q, center, radius)
        c = lhs / rhs if rhs > DEGENERATE else 0.0
        trend.append({"cells": u.grid.cells[0], "c": c})
        samples.append({"run": str(u.grid.cells[0]), "x": list(map(float, center)), "lhs": lhs, "rhs": rhs})
    ok = len(trend) >= 2 and stable(trend[-2]["c"], trend[-1]["c"])
    return EstimateAudit("w1q", {"p": p, "q": q, "radius": radius}, samples,
                         float(max(t["c"] for t in trend)), trend, "pass" if ok else "fail")


# --------------------------------------------------------------------------
# mapping properties


def mol_exponents(q, s):
    """Target exponents of the Morrey mapping: literal (theta q/(s-q), theta) and Adams (s q/(s-q), s).

    The literal form leaves theta unspecified; it matches the Adams pair
    exactly when theta = s.
    """
    if not q < s:
        raise ArgumentError("need q < s")
    return {
        "literal": {"exponent": f"theta*{q}/({s}-{q})", "second": "theta", "factor": q / (s - q)},
        "adams": {"exponent": s * q / (s - q), "second": s},
        "reduces_when": "theta = s",
    }


def lol_exponent(n, q):
    return n * q / (n - q)


def growth_verdict(values, tol=0.1):
    """'stable' if the last relative change is below ``tol``, else 'growing'."""
    v = np.asarray(values, dtype=float)
    change = abs(v[-1] - v[-2]) / max(abs(v[-1]), 1e-300)
    return "stable" if change < tol else "growing"


def mapping_property_audit(solve_family, exponents, p, q, gamma, grids, s=None, mask_margin=OMEGA1_MARGIN):
    """Lorentz (and optionally Morrey) functionals of Du along a radial family.

    ``solve_family(a, cells) -> (u, f)`` for f ~ |x|^(-a).  For each a the
    output functional of |Du| restricted to Omega' is tracked over ``grids``
    and classified stable/growing; the prediction is "stable" iff a q < n.
    """
    n = None
    t = None
    rows, trend = [], []
    agree = True
    for a in exponents:
        vals, ins, morrey = [], [], []
        for cells in grids:
            u, f = solve_family(a, cells)
            grid = u.grid
            n = grid.dim
            t = lol_exponent(n, q)
            mask = restrict_mask(grid, mask_margin).reshape(-1)
            Du = _du(u)
            dvals = Du.magnitude()[mask]
            vals.append(lorentz_functional((dvals, grid.cell_volume), t, gamma).value)
            ins.append(lorentz_functional(f, q, gamma).value)
            if s is not None:
                ex = mol_exponents(q, s)["adams"]
                morrey.append(morrey_functional(Du.abs(), ex["exponent"], min(ex["second"], n)).value)
        predicted = "stable" if a * q < n else "growing"
        observed = growth_verdict(vals)
        agree &= predicted == observed
        row = {"a": a, "output": vals, "input": ins, "predicted": predicted, "observed": observed,
               "operator_norm": [(o / i) ** (1 / gamma) if i > 0 else None for o, i in zip(vals, ins)]}
        if s is not None:
            row["morrey_output"] = morrey
        rows.append(row)
        trend.append({"a": a, "observed": observed})
    meta = {"target_exponent": t, "threshold_a": (n / q) if n else None}
    if s is not None:
        meta["mol"] = mol_exponents(q, s)
    samples = [{"run": f"a={r['a']}", "lhs": r["output"][-1], "rhs": r["input"][-1]} for r in rows]
    return EstimateAudit("mapping", {"p": p, "q": q, "gamma": gamma, "s": s, "grids": list(grids)},
                         samples, 0.0, trend, "pass" if agree else "fail", dict(meta, rows=rows))


# --------------------------------------------------------------------------
# radial witnesses


def witness_expression(kind):
    """Closed forms used by the borderline suites (n = 2)."""
    return {
        "lorentz-finite": "1/(r*log(e/r)**2)",
        "lorentz-borderline": "1/(r*log(e/r))",
        "weak": "1/r",
    }[kind]


def hardy_littlewood_suite(fields, radii, p, stride=8, tol=0.05):
    """Worst ratios of the two ball inequalities over probe balls inside the box.

    hl: mean_B |f| / |f|**(|B|); mh: ||f||_{L^1(B)} / (weak-Hoelder bound with
    exponent p).  Both should stay below 1 + tol.
    """
    worst_hl, worst_mh, count = 0.0, 0.0, 0
    rows = []
    for f in fields:
        grid = f.grid
        g = f.abs()
        field_hl, field_mh = 0.0, 0.0
        r = rearrange(g)
        vals = g.magnitude()
        wn = unit_ball_volume(grid.dim)
        for rho in radii:
            for i in grid.lattice_indices(stride):
                B = Ball(tuple(grid.center_of(i)), rho)
                if not grid.contains_ball(B):
                    continue
                d2, flat = grid.profile(B.center, rho)
                inside = flat[flat >= 0]
                avg = vals[inside].sum() / inside.size
                hl = float(avg / r.star_star(wn * rho**grid.dim))
                lhs, rhs = marcinkiewicz_holder(f, B, p)
                field_hl, field_mh = max(field_hl, hl), max(field_mh, lhs / rhs)
                count += 1
        rows.append({"cells": grid.cells[0], "worst_hl": field_hl, "worst_mh": field_mh})
        worst_hl, worst_mh = max(worst_hl, field_hl), max(worst_mh, field_mh)
    ok = worst_hl <= 1 + tol and worst_mh <= 1 + tol
    return ok, {"worst_hl": worst_hl, "worst_mh": worst_mh, "balls": count, "rows": rows}
