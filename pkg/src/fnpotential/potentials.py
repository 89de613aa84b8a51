"""Truncated and modified Riesz potentials, Wolff, Riesz and Havin-Mazya
potentials of grid densities, and the inequality chain that links them.

Scale integrals run over a geometric radius ladder from 2h to r (ratio at most
2**(1/4)) with the composite midpoint rule; the segment (0, 2h] is integrated
analytically by freezing the smallest-ball average.  Densities are extended by
zero outside the grid box.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ArgumentError, ResolutionError
from .grid import GridField, _rho_key, unit_ball_volume
from .pucci import AuditReport
from .spaces import rearrange, rearranged_bound

LADDER_RATIO = 2.0 ** 0.25
MIN_LEVELS = 8


@dataclass
class PotentialCurve:
    """r -> potential value at one base point; values[k] is the integral up to radii[k]."""

    kind: str
    base_point: list
    radii: np.ndarray
    values: np.ndarray
    params: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=dict)

    @property
    def value(self):
        return float(self.values[-1])

    def header(self):
        return {
            "kind": self.kind,
            "params": self.params,
            "base_point": [float(v) for v in self.base_point],
            "quadrature": self.quadrature,
        }

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
            fh.write("r,value\n")
            for r, v in zip(self.radii, self.values):
                fh.write(f"{float(r)!r},{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            head = json.loads(fh.readline()[2:])
            fh.readline()
            rows = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(head["kind"], head["base_point"], rows[:, 0], rows[:, 1], head["params"], head["quadrature"])


def ladder(r, h, levels=MIN_LEVELS, ratio=LADDER_RATIO):
    """Nodes 2h = rho_0 < ... < rho_m = r, log-uniform with step <= ``ratio``."""
    if r < 4 * h * (1 - 1e-12):
        raise ResolutionError(f"radius {r} is below 4h = {4 * h}")
    if levels < MIN_LEVELS:
        raise ArgumentError(f"levels must be >= {MIN_LEVELS}")
    base = 2 * h
    m = max(levels, math.ceil(math.log(r / base) / math.log(ratio) - 1e-9))
    return base * (r / base) ** (np.arange(m + 1) / m)


class _Profile:
    """Running sums of a density over lattice centres sorted by distance to x."""

    def __init__(self, grid, x, r):
        self.grid = grid
        self.d2, self.flat = grid.profile(x, r)
        self.inside = self.flat >= 0

    def cumsum(self, vals):
        v = np.zeros(self.flat.size)
        v[self.inside] = vals[self.flat[self.inside]]
        return np.concatenate([[0.0], np.cumsum(v)])

    def counts(self, radii):
        keys = np.array([_rho_key(rho, self.grid.h) for rho in radii])
        return np.searchsorted(self.d2, keys, side="left")


def _quadrature(nodes, integrand_mid, bottom):
    seg = np.diff(nodes) * integrand_mid
    return np.concatenate([[bottom], bottom + np.cumsum(seg)])


def _scale_means(f: GridField, x, r, p, levels, normalization, ratio):
    """Ladder nodes and the L^p ball means at the midpoints and at 2h."""
    grid = f.grid
    nodes = ladder(r, grid.h, levels, ratio)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    prof = _Profile(grid, x, r)
    radii = np.concatenate([[nodes[0]], mids])
    k = prof.counts(radii)
    cum = prof.cumsum(f.magnitude() ** p)[k]
    if normalization == "count":
        if np.any(k == 0):
            raise ResolutionError("ladder ball contains no lattice centre")
        mean = cum / k
    elif normalization == "volume":
        mean = cum * grid.cell_volume / (unit_ball_volume(grid.dim) * radii**grid.dim)
    else:
        raise ArgumentError(f"unknown normalization {normalization!r}")
    return nodes, mean


def _ip_curve(f, x, r, p, levels, normalization, ratio, kind):
    if f.kind != "scalar":
        raise ArgumentError("potentials need a scalar density")
    nodes, mean = _scale_means(f, x, r, p, levels, normalization, ratio)
    a = mean ** (1.0 / p)
    values = _quadrature(nodes, a[1:], nodes[0] * a[0])
    quad = {
        "ladder": "geometric",
        "ratio": float(nodes[1] / nodes[0]),
        "bottom": float(nodes[0]),
        "nodes": int(nodes.size),
        "normalization": normalization,
    }
    return PotentialCurve(kind, list(map(float, x)), nodes, values, {"p": p, "r": r}, quad)


def truncated_riesz(f: GridField, x, r, levels=MIN_LEVELS, normalization="count", ratio=LADDER_RATIO):
    """I_1^f(x, r) = int_0^r mean_{B_rho(x)} |f| drho."""
    return _ip_curve(f, x, r, 1.0, levels, normalization, ratio, "I1")


def modified_riesz(f: GridField, x, r, p, levels=MIN_LEVELS, normalization="count", ratio=LADDER_RATIO):
    """Modified potential int_0^r (mean_{B_rho(x)} |f|^p)^(1/p) drho.

    ``normalization="count"`` divides ball sums by the number of lattice
    centres (the grid-fields ball average); ``"volume"`` divides by
    omega_n rho^n, the quadrature that matches the Wolff potential.
    """
    if p < 1:
        raise ArgumentError("p must be >= 1")
    curve = _ip_curve(f, x, r, p, levels, normalization, ratio, f"Ip_modified({p})")
    return curve


def wolff_potential(mu: GridField, x, r, beta, pp1, levels=MIN_LEVELS, ratio=LADDER_RATIO):
    """W^mu_{beta,pp1}(x, r) = int_0^r (mu(B_rho)/rho^(n-beta*pp1))^(1/(pp1-1)) drho/rho."""
    grid = mu.grid
    n = grid.dim
    if not pp1 > 1:
        raise ArgumentError("pp1 must exceed 1")
    if not 0 < beta <= n / pp1 + 1e-15:
        raise ArgumentError(f"beta must lie in (0, n/pp1] = (0, {n / pp1}]")
    p = pp1 - 1
    s = beta * pp1
    nodes = ladder(r, grid.h, levels, ratio)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    prof = _Profile(grid, x, r)
    radii = np.concatenate([[nodes[0]], mids])
    mass = prof.cumsum(mu.magnitude())[prof.counts(radii)] * grid.cell_volume
    integrand = (mass[1:] / mids ** (n - s)) ** (1.0 / p) / mids
    wn = unit_ball_volume(n)
    # bottom: mu(B_rho) = avg * omega_n rho^n with avg frozen at rho = 2h
    avg = mass[0] / (wn * nodes[0] ** n)
    bottom = (avg * wn) ** (1.0 / p) * nodes[0] ** (s / p) / (s / p)
    values = _quadrature(nodes, integrand, bottom)
    quad = {"ladder": "geometric", "ratio": float(nodes[1] / nodes[0]), "bottom": float(nodes[0]), "nodes": int(nodes.size)}
    return PotentialCurve(
        f"wolff({beta},{pp1})", list(map(float, x)), nodes, values, {"beta": beta, "pp1": pp1, "r": r}, quad
    )


def ladder_change(f: GridField, x, r, p, levels=MIN_LEVELS):
    """Relative change of the modified potential when the ladder ratio is square-rooted."""
    coarse = modified_riesz(f, x, r, p, levels).value
    fine = modified_riesz(f, x, r, p, 2 * levels, ratio=LADDER_RATIO**0.5).value
    return abs(fine - coarse) / max(abs(fine), 1e-300)


# --------------------------------------------------------------------------
# whole-grid maps


def _ball_kernel(grid, rho):
    offs = grid.ball_offsets(rho)
    R = int(np.abs(offs).max()) if offs.size else 0
    ker = np.zeros((2 * R + 1,) * grid.dim)
    ker[tuple((offs + R).T)] = 1.0
    return ker, offs.shape[0]


def ball_mean_map(vals, grid, rho):
    """Mean of ``vals`` (shape grid.cells) over B_rho(centre) at every cell centre, zero extension."""
    ker, count = _ball_kernel(grid, rho)
    sums = fftconvolve(vals, ker, mode="same")
    return np.maximum(sums, 0.0) / count


def modified_riesz_map(f: GridField, r, p, levels=MIN_LEVELS):
    """Modified potential at every cell centre (count normalization)."""
    grid = f.grid
    nodes = ladder(r, grid.h, levels)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    vals = f.magnitude().reshape(grid.cells) ** p
    total = nodes[0] * ball_mean_map(vals, grid, nodes[0]) ** (1.0 / p)
    for lo, hi, m in zip(nodes[:-1], nodes[1:], mids):
        total = total + (hi - lo) * ball_mean_map(vals, grid, m) ** (1.0 / p)
    return GridField(grid, total)


# --------------------------------------------------------------------------
# Riesz and Havin-Mazya


def _self_cell(n, beta, h):
    """int over the ball of volume h^n centred at 0 of |y|^(beta-n) dy."""
    wn = unit_ball_volume(n)
    a = h / wn ** (1.0 / n)
    return n * wn * a**beta / beta


def riesz_potential(mu: GridField, x, beta):
    """I_beta(mu)(x) = sum over cells of mu(cell) |x - y|^(beta-n).

    The cell containing ``x`` is replaced by the equal-volume ball centred at x.
    """
    grid = mu.grid
    n = grid.dim
    if not 0 < beta <= n:
        raise ArgumentError(f"beta must lie in (0, {n}]")
    x = np.asarray(x, dtype=float)
    dens = mu.flat() if mu.kind == "scalar" else mu.magnitude()
    pts = grid.cell_centers()
    dist = np.linalg.norm(pts - x, axis=1)
    if beta == n:
        return float(dens.sum() * grid.cell_volume)
    own = None
    if np.all((x >= grid.low) & (x < grid.high)):
        own = int(np.ravel_multi_index(grid.index_of(x), grid.cells))
    kern = np.empty_like(dist)
    mask = np.ones(dist.size, bool)
    if own is not None:
        mask[own] = False
    kern[mask] = dist[mask] ** (beta - n) * grid.cell_volume
    total = float(np.dot(dens[mask], kern[mask]))
    if own is not None:
        total += float(dens[own] * _self_cell(n, beta, grid.h))
    return total


def riesz_field(mu: GridField, beta):
    """I_beta(mu) at every cell centre via FFT, same self-cell rule as riesz_potential."""
    grid = mu.grid
    n = grid.dim
    if not 0 < beta <= n:
        raise ArgumentError(f"beta must lie in (0, {n}]")
    axes = [np.arange(-(c - 1), c) for c in grid.cells]
    mesh = np.meshgrid(*axes, indexing="ij")
    d = np.sqrt(sum(m.astype(float) ** 2 for m in mesh)) * grid.h
    with np.errstate(divide="ignore"):
        ker = d ** (beta - n) * grid.cell_volume
    ker[tuple(c - 1 for c in grid.cells)] = _self_cell(n, beta, grid.h)
    vals = mu.magnitude().reshape(grid.cells)
    out = fftconvolve(vals, ker, mode="full")
    sl = tuple(slice(c - 1, 2 * c - 1) for c in grid.cells)
    return GridField(grid, np.maximum(out[sl], 0.0))


def havin_mazya_potential(mu: GridField, x, beta, p, intermediate=None):
    """V_{beta,p+1}(mu)(x) = I_beta[(I_beta |mu|)^(1/p)](x).

    The intermediate field I_beta|mu| lives on the grid box; pass it in via
    ``intermediate`` to share it between base points.
    """
    n = mu.grid.dim
    if beta * (p + 1) >= n:
        raise ArgumentError("Havin-Mazya potential needs beta*(p+1) < n")
    if intermediate is None:
        intermediate = havin_mazya_intermediate(mu, beta, p)
    return riesz_potential(intermediate, x, beta)


def havin_mazya_intermediate(mu: GridField, beta, p):
    inner = riesz_field(mu.abs(), beta)
    return GridField(mu.grid, inner.values ** (1.0 / p))


def havin_mazya_constant(mus, beta, p, xs, radii):
    """Fitted C in W^mu_{beta,p+1}(x,r) <= C V_{beta,p+1}(mu)(x): max ratio over the sample."""
    best = 0.0
    for mu in mus:
        mid = havin_mazya_intermediate(mu, beta, p)
        for x in xs:
            v = havin_mazya_potential(mu, x, beta, p, intermediate=mid)
            for r in radii:
                w = wolff_potential(mu, x, r, beta, p + 1).value
                if v > 0:
                    best = max(best, w / v)
    return best


# --------------------------------------------------------------------------
# chain audit


def dyadic_bracket(n, p, sigma):
    """Bracket constant asserted in the dyadic-sum comparison."""
    return 2.0 ** (-n / p) / math.log(2) + sigma ** (-n / p) / (-math.log(sigma))


def dyadic_bracket_derived(n, p, sigma):
    """Bracket obtained when the first block is compared on [r/2, r] via (rho/r_0)^n <= 2^n."""
    return 2.0 ** (n / p) / math.log(2) + sigma ** (-n / p) / (-math.log(sigma))


def dyadic_sum(f: GridField, x, r, p, sigma):
    """sum_i r_i (mean_{B_i} |f|^p)^(1/p), r_i = sigma^i r/2, down to r_i >= 2h."""
    grid = f.grid
    radii = []
    ri = r / 2
    while ri >= 2 * grid.h * (1 - 1e-12):
        radii.append(ri)
        ri *= sigma
    if not radii:
        raise ResolutionError("r/2 is below 2h")
    prof = _Profile(grid, x, r)
    k = prof.counts(radii)
    cum = prof.cumsum(f.magnitude() ** p)[k]
    radii = np.array(radii)
    return float(np.sum(radii * (cum / k) ** (1.0 / p))), len(radii)


def potential_chain_audit(f: GridField, p, x_samples, r_samples, sigma=0.25, slack=1e-6, seed=0, hm_constant=None):
    """Check the chain I_1 <= I_p~ = omega_n^(-1/p) W <= C V, the rearrangement
    bound on sup_x I_p~ and the dyadic-sum comparison.

    Identity (b) is checked at matched quadrature (volume normalization on
    both sides); (a), (d) and the dyadic sum use the count-normalized
    potential.  (c) fits a single constant; it is reported, never violated.
    """
    grid = f.grid
    n = grid.dim
    if not 1 < p < n:
        raise ArgumentError(f"p must lie in (1, {n})")
    wn = unit_ball_volume(n)
    beta = p / (p + 1)
    g = f.power(p)
    violations = []
    worst = math.inf
    ratios = []
    intermediate = havin_mazya_intermediate(g, beta, p)
    bracket = dyadic_bracket(n, p, sigma)
    rows = []

    def note(check, margin, x, r, lhs, rhs):
        nonlocal worst
        worst = min(worst, margin)
        if margin < 0:
            violations.append({"check": check, "x": list(map(float, x)), "r": float(r), "lhs": lhs, "rhs": rhs})

    for x in x_samples:
        v = havin_mazya_potential(g, x, beta, p, intermediate=intermediate)
        for r in r_samples:
            i1 = truncated_riesz(f, x, r).value
            ip = modified_riesz(f, x, r, p).value
            note("a", ip - i1 + 1e-10, x, r, i1, ip)
            ipv = modified_riesz(f, x, r, p, normalization="volume").value
            w = wn ** (-1.0 / p) * wolff_potential(g, x, r, beta, p + 1).value
            note("b", 1e-9 * max(1.0, abs(ipv)) - abs(ipv - w), x, r, ipv, w)
            if v > 0:
                ratios.append(ipv / v)
            ds, terms = dyadic_sum(f, x, r, p, sigma)
            note("dyadic", bracket * ip + slack - ds, x, r, ds, bracket * ip)
            rows.append({"x": list(map(float, x)), "r": float(r), "I1": i1, "Ip": ip, "Ip_volume": ipv,
                         "wolff_scaled": w, "havin_mazya": v, "dyadic_sum": ds})
    rear = rearrange(g)
    sups = {}
    for r in r_samples:
        field_r = modified_riesz_map(f, r, p).values
        at = np.unravel_index(int(np.argmax(field_r)), grid.cells)
        sup = float(field_r[at])
        bound = rearranged_bound(rear, p, r, n)
        sups[repr(float(r))] = {"sup": sup, "bound": bound, "argmax": grid.center_of(at).tolist()}
        note("d", bound + slack * max(1.0, bound) - sup, grid.center_of(at), r, sup, bound)
    C = max(ratios) if ratios else 0.0
    meta = {
        "p": p,
        "sigma": sigma,
        "slack": slack,
        "dyadic_bracket": bracket,
        "dyadic_bracket_derived": dyadic_bracket_derived(n, p, sigma),
        "havin_mazya_fitted_constant": C,
        "rearrangement": sups,
        "rows": rows,
    }
    if hm_constant is not None:
        meta["havin_mazya_reference_constant"] = hm_constant
    return AuditReport("potential_chain", len(rows), float(worst), violations, seed, meta)
