"""Non-increasing rearrangements and the Lorentz, Marcinkiewicz, Morrey and
BMO functionals of grid fields.

Distribution-function integrals are evaluated exactly for the step function
that a grid field defines (each cell carries measure h**n); no quadrature in
the level variable is involved.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .grid import Ball, GridField, unit_ball_volume

PROBE_STRIDE = 4


@dataclass(frozen=True)
class Rearrangement:
    """g* as a right-continuous step function on [0, total_measure)."""

    values: np.ndarray  # |g| sorted descending, one per cell
    cell_measure: float

    @property
    def total_measure(self):
        return self.values.size * self.cell_measure

    @property
    def cumulative(self):
        # integral of g* over [0, k * cell_measure], k = 0..N
        return np.concatenate([[0.0], np.cumsum(self.values) * self.cell_measure])

    def star(self, s):
        s = np.asarray(s, dtype=float)
        k = np.floor(s / self.cell_measure).astype(np.int64)
        inside = (s >= 0) & (k < self.values.size)
        out = np.zeros(s.shape)
        out[inside] = self.values[k[inside]]
        return out if out.ndim else float(out)

    def integral(self, s):
        """Exact integral of g* over [0, s]."""
        s = np.asarray(s, dtype=float)
        k = np.minimum(np.floor(s / self.cell_measure).astype(np.int64), self.values.size)
        cum = self.cumulative
        rest = np.where(k < self.values.size, self.values[np.minimum(k, self.values.size - 1)], 0.0)
        out = cum[k] + rest * (s - k * self.cell_measure)
        return out if out.ndim else float(out)

    def star_star(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise ArgumentError("g** needs s > 0")
        out = self.integral(s) / s
        return out if np.ndim(out) else float(out)

    def distribution(self, lam):
        """|{|g| > lam}|."""
        desc = self.values
        count = np.searchsorted(-desc, -np.asarray(lam, dtype=float), side="left")
        return count * self.cell_measure


def rearrange(g) -> Rearrangement:
    if isinstance(g, GridField):
        if g.kind != "scalar":
            raise ArgumentError("rearrangement is defined for scalar fields")
        vals, cell = g.magnitude(), g.grid.cell_volume
    else:
        vals, cell = np.abs(np.asarray(g[0], dtype=float)).reshape(-1), float(g[1])
    desc = np.sort(vals)[::-1].copy()
    desc.setflags(write=False)
    return Rearrangement(desc, cell)


def maximal_rearrangement(r: Rearrangement, s):
    """g**(s) = s^-1 * integral_0^s g*."""
    if np.any(np.asarray(s) <= 0):
        raise ArgumentError("s must be positive")
    return r.star_star(s)


# --------------------------------------------------------------------------
# reports


@dataclass
class NormReport:
    space: str
    params: dict
    value: float
    probe_config: dict = field(default_factory=dict)
    attaining_ball: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "space": self.space,
            "params": self.params,
            "value": self.value,
            "probe_config": self.probe_config,
            "meta": self.meta,
        }
        if self.attaining_ball is not None:
            out["attaining_ball"] = self.attaining_ball
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _levels(g):
    """Distinct positive levels w_1 > ... > w_m and measures |{|g| >= w_k}|."""
    r = rearrange(g)
    desc = r.values[r.values > 0]
    if desc.size == 0:
        return np.zeros(0), np.zeros(0), r
    change = np.flatnonzero(np.diff(desc) < 0)
    last = np.concatenate([change, [desc.size - 1]])
    return desc[last], (last + 1) * r.cell_measure, r


def lorentz_functional(g, q, gamma, tail=False) -> NormReport:
    """Integral over lambda > 0 of (lambda^q |{|g| > lambda}|)^(gamma/q) dlambda/lambda.

    On [w_{k+1}, w_k) the distribution function equals m_k, so each piece
    integrates in closed form to m_k^(gamma/q) (w_k^gamma - w_{k+1}^gamma) / gamma.
    """
    if not q > 1:
        raise ArgumentError("Lorentz functional needs q > 1")
    if not gamma > 0:
        raise ArgumentError("Lorentz functional needs gamma > 0")
    w, m, r = _levels(g)
    w_next = np.concatenate([w[1:], [0.0]])
    value = float(np.sum(m ** (gamma / q) * (w**gamma - w_next**gamma)) / gamma)
    meta = {"levels": int(w.size), "exact": True}
    if tail:
        meta["tail_exponent"] = _tail_exponent(r)
    return NormReport(f"lorentz({q},{gamma})", {"q": q, "gamma": gamma}, value, meta=meta)


def _tail_exponent(r: Rearrangement, octaves=8):
    """Slope of log |{|g|>lam}| against log lam over the top dyadic levels."""
    top = r.values[0] if r.values.size else 0.0
    if top <= 0:
        return None
    lam = top * 2.0 ** -np.arange(1, octaves + 1)
    mu = r.distribution(lam)
    ok = mu > 0
    if ok.sum() < 3:
        return None
    slope = np.polyfit(np.log(lam[ok]), np.log(mu[ok]), 1)[0]
    return float(slope)


def marcinkiewicz_functional(g, q) -> NormReport:
    """sup over lambda of lambda^q |{|g| > lambda}|, attained as lambda -> w_k from below."""
    if q < 1:
        raise ArgumentError("Marcinkiewicz functional needs q >= 1")
    w, m, _ = _levels(g)
    value = float(np.max(w**q * m)) if w.size else 0.0
    return NormReport(f"marcinkiewicz({q})", {"q": q}, value, meta={"exact": True})


def lorentz_n1_functional(f, n) -> NormReport:
    """Integral over lambda of |{|f| > lambda}|^(1/n): the L(n, 1) quantity."""
    if isinstance(f, GridField) and f.grid.dim != n:
        raise ArgumentError("n must equal the grid dimension")
    rep = lorentz_functional(f, n, 1)
    rep.space = f"lorentz({n},1)"
    return rep


# --------------------------------------------------------------------------
# ball scans


def probe_radii(grid, rmax=None):
    """Dyadic radii 2h * 2^k up to ``rmax`` (default: half the shortest side)."""
    if rmax is None:
        rmax = 0.5 * float(np.min(grid.high - grid.low))
    out = []
    rho = 2 * grid.h
    while rho <= rmax * (1 + 1e-12):
        out.append(rho)
        rho *= 2
    return out


def _inside_centres(grid, rho, stride):
    # centre spacing never exceeds the radius, so neighbouring probe balls overlap
    stride = max(1, min(stride, int(np.floor(rho / grid.h + 1e-9))))
    idx = grid.lattice_indices(stride)
    centres = grid.low + (idx + 0.5) * grid.h
    keep = np.all((centres - rho >= grid.low - 1e-12) & (centres + rho <= grid.high + 1e-12), axis=1)
    return idx[keep]


def _gather(grid, idx, offsets):
    cells = idx[None, :] + offsets
    return np.ravel_multi_index(tuple(cells.T), grid.cells)


def morrey_functional(g: GridField, q, s, stride=PROBE_STRIDE) -> NormReport:
    """sup of rho^s * mean_{B_rho} |g|^q over probe balls fully inside the grid box.

    Probe set: radii 2h * 2^k, centres every min(stride, rho/h) cells.
    """
    n = g.grid.dim
    if q < 1:
        raise ArgumentError("Morrey functional needs q >= 1")
    if not 0 <= s <= n:
        raise ArgumentError(f"Morrey exponent s must lie in [0, {n}]")
    vals = g.magnitude() ** q
    best, where = -1.0, None
    for rho in probe_radii(g.grid):
        offsets = g.grid.ball_offsets(rho)
        for idx in _inside_centres(g.grid, rho, stride):
            avg = vals[_gather(g.grid, idx, offsets)].mean()
            v = rho**s * avg
            if v > best:
                best, where = v, (idx, rho)
    if where is None:
        raise ArgumentError("no probe ball fits inside the grid")
    ball = {"center": g.grid.center_of(where[0]).tolist(), "radius": where[1]}
    return NormReport(
        f"morrey({q},{s})",
        {"q": q, "s": s},
        float(best),
        probe_config={"center_stride": stride, "radii": "2h*2^k", "balls": "inside"},
        attaining_ball=ball,
    )


def oscillation_modulus(g: GridField, radii, stride=PROBE_STRIDE):
    """[(R, omega_g(R))]: sup over probe balls with rho <= R of mean |g - (g)_B|.

    Probe radii are the dyadic ladder 2h * 2^k together with the requested
    radii; only balls fully inside the grid box are used.  Nested probe sets
    make the result nondecreasing in R.
    """
    grid = g.grid
    radii = sorted(float(R) for R in radii)
    if radii and radii[0] < 2 * grid.h * (1 - 1e-12):
        raise ArgumentError("oscillation radii must be >= 2h")
    flat = g.flat()
    ladder = sorted(set(probe_radii(grid, max(radii) if radii else None)) | set(radii))
    per_rho = {}
    for rho in ladder:
        offsets = grid.ball_offsets(rho)
        best = 0.0
        for idx in _inside_centres(grid, rho, stride):
            block = flat[_gather(grid, idx, offsets)]
            dev = block - block.mean(0)
            mag = np.abs(dev) if g.kind == "scalar" else np.linalg.norm(dev, axis=-1)
            best = max(best, float(mag.mean()))
        per_rho[rho] = best
    out = []
    for R in radii:
        out.append((R, max([v for rho, v in per_rho.items() if rho <= R * (1 + 1e-12)], default=0.0)))
    return out


# --------------------------------------------------------------------------
# ball inequalities


def hardy_littlewood_margins(g: GridField, balls):
    """For g >= 0: g**(omega_n rho^n) + 4h/rho * max g - mean_B g, per ball."""
    r = rearrange(g)
    n, h = g.grid.dim, g.grid.h
    wn = unit_ball_volume(n)
    gmax = g.max_abs()
    vals = g.magnitude()
    out = []
    for B in balls:
        d2, flat = g.grid.profile(B.center, B.radius)
        avg = vals[flat[flat >= 0]].sum() / flat.size
        bound = r.star_star(wn * B.radius**n) + 4 * h / B.radius * gmax
        out.append(float(bound - avg))
    return np.array(out)


def ball_weak_norm(f: GridField, ball: Ball, n=None):
    """sup over lambda of lambda * |{x in B : |f| > lambda}|^(1/n)."""
    n = n or f.grid.dim
    d2, flat = f.grid.profile(ball.center, ball.radius)
    vals = f.magnitude()[flat[flat >= 0]]
    return marcinkiewicz_functional((vals, f.grid.cell_volume), n).value ** (1.0 / n)


def marcinkiewicz_holder(f: GridField, ball: Ball, p):
    """(lhs, rhs) of  int_{B_r} |f|^p <= omega_n^(1-p/n) n/(n-p) r^(n-p) ||f||_{L(n,inf)(B_r)}^p."""
    n = f.grid.dim
    if not 1 <= p < n:
        raise ArgumentError("need 1 <= p < n")
    d2, flat = f.grid.profile(ball.center, ball.radius)
    vals = f.magnitude()[flat[flat >= 0]]
    lhs = float(np.sum(vals**p) * f.grid.cell_volume)
    const = unit_ball_volume(n) ** (1 - p / n) * n / (n - p)
    rhs = const * ball.radius ** (n - p) * ball_weak_norm(f, ball, n) ** p
    return lhs, float(rhs)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


def _gauss(func, a, b):
    """Composite Gauss-Legendre over consecutive segments [a_i, b_i]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    return float(np.sum(half[:, None] * _GL_W[None, :] * func(x)))


def rearranged_bound(r: Rearrangement, p, radius, n):
    """Rearrangement bound for sup_x of the modified Riesz potential:

        (n omega_n^(1/n))^-1 * int_0^{omega_n r^n} [g**(s) s^(p/n)]^(1/p) ds / s

    with g = |f|^p.  Computed as int_0^r [g**(omega_n rho^n)]^(1/p) drho, the
    same integral after s = omega_n rho^n, split at the jumps of g*.
    """
    if p <= 0 or radius <= 0:
        raise ArgumentError("need p > 0 and radius > 0")
    wn = unit_ball_volume(n)
    smax = wn * radius**n
    cell = r.cell_measure
    kmax = int(min(np.floor(smax / cell), r.values.size))
    ks = np.arange(kmax + 1)
    edges = (ks * cell / wn) ** (1.0 / n)
    if edges[-1] < radius:
        tail_start = edges[-1]
        # past the support of g* the integrand is smooth; split geometrically
        extra = np.geomspace(max(tail_start, 1e-300), radius, 17)[1:] if tail_start > 0 else np.array([radius])
        edges = np.concatenate([edges, extra])

    def integrand(rho):
        s = wn * rho**n
        return np.power(r.integral(s) / s, 1.0 / p)

    return _gauss(integrand, edges[:-1], edges[1:])


# --------------------------------------------------------------------------
# refinement trends


def refinement_trend(hs, values):
    """Summarize how a functional moves under grid refinement.

    Fits value ~ a + b*L over L in {log(1/h), log(log(1/h))} and a power law
    value ~ C h^-k, and reports the slopes together with successive increments.
    """
    hs = np.asarray(hs, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(-hs)
    hs, v = hs[order], v[order]
    inv = np.log(1 / hs)
    out = {
        "h": hs.tolist(),
        "values": v.tolist(),
        "increments": np.diff(v).tolist(),
        "relative_change": (np.abs(np.diff(v)) / np.maximum(np.abs(v[1:]), 1e-300)).tolist(),
    }
    if hs.size >= 2 and np.all(v > 0):
        out["power_slope"] = float(np.polyfit(inv, np.log(v), 1)[0])
        out["log_slope"] = float(np.polyfit(inv, v, 1)[0])
        if np.all(hs < 1):
            loglog = np.log(np.log(np.e / hs))
            out["loglog_slope"] = float(np.polyfit(loglog, v, 1)[0])
    return out
