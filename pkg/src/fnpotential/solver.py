"""Dirichlet solver for F(x, D^2 u) = f on the grid box.

Second derivatives are taken along the directions e_i and e_i +- e_j
(axis plus face diagonals; 8 directions in the plane).  Each coefficient
matrix A is split as sum_v c_v v v^T with c_v >= 0, which is possible for
diagonally dominant A and gives a monotone scheme.  Pucci operators are
replaced by the maximum (or minimum) over orthonormal stencil frames of
sum_v max(Lambda t_v, lambda t_v) with t_v the curvature along v, so every
operator becomes min_j max_k of linear monotone stencils.  The discrete
system is solved by policy iteration with sparse direct sub-solves.

Sign convention: F is nondecreasing in X, so the Laplacian problem reads
tr(D^2 u) = f and u = |x|^2 has f = 2n.
"""
from __future__ import annotations

import csv
import itertools
import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ArgumentError, ConvergenceError, InputError, SchemeError
from .expr import Expression
from .grid import Ball, Grid, GridField
from .pucci import Coefficients, OperatorSpec, averaged_operator, ellipticity_audit

DAMPING = 0.5
MIN_CELLS = 32


def stencil_directions(n):
    dirs = [tuple(int(i == k) for k in range(n)) for i in range(n)]
    for i, j in itertools.combinations(range(n), 2):
        for s in (1, -1):
            v = [0] * n
            v[i], v[j] = 1, s
            dirs.append(tuple(v))
    return np.array(dirs, dtype=np.int64)


def stencil_weights(A, tol=1e-12):
    """c_v >= 0 with sum_v c_v v v^T = A for diagonally dominant A (..., n, n)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    w = []
    off = np.abs(A) * (1 - np.eye(n))
    for i in range(n):
        w.append(A[..., i, i] - off[..., i, :].sum(-1))
    for i, j in itertools.combinations(range(n), 2):
        a = A[..., i, j]
        w.append(np.maximum(a, 0.0))
        w.append(np.maximum(-a, 0.0))
    w = np.stack(w, axis=-1)
    if np.any(w < -tol):
        raise SchemeError("coefficient matrix is not diagonally dominant; the axis+diagonal stencil is not monotone for it")
    return np.maximum(w, 0.0)


def _pucci_frames(n, e):
    """Matrices sum_v w_v v v^T over orthonormal stencil frames, w_v in {lambda, Lambda}."""
    frames = [np.eye(n)]
    if n == 2:
        s = 1 / np.sqrt(2)
        frames.append(np.array([[s, s], [s, -s]]))
    mats = []
    for fr in frames:
        for choice in itertools.product((e.Lam, e.lam), repeat=n):
            mats.append(sum(c * np.outer(v, v) for c, v in zip(choice, fr)))
    return np.array(mats)


def _family(F: OperatorSpec, points):
    """Stencil weights (m or 1, M, J, K, ndir) for F at ``points``."""
    form = F.base_form if F.form == "averaged" and F.samples is None else F.form
    if form in ("pucci-plus", "pucci-minus"):
        mats = _pucci_frames(F.dim, F.ellipticity)
        stack = mats[None, :] if form == "pucci-plus" else mats[:, None]
        return stencil_weights(stack)[None, None]
    if F.x_independent:
        return stencil_weights(F.coefficient_stack(points[:1]))
    return stencil_weights(F.coefficient_stack(points))


# --------------------------------------------------------------------------
# problems


def _values_on(spec, grid):
    if isinstance(spec, GridField):
        if spec.grid != grid:
            raise InputError("boundary field lives on a different grid")
        return np.array(spec.values, dtype=float)
    if isinstance(spec, str):
        spec = Expression(spec, grid.dim)
    if isinstance(spec, (int, float)):
        return np.full(grid.cells, float(spec))
    vals = np.asarray(spec(grid.cell_centers()), dtype=float)
    return vals.reshape(grid.cells)


class Problem:
    """F(x, D^2 u) = f in the grid box, u = boundary on the outer cell layer."""

    def __init__(self, operator: OperatorSpec, rhs, boundary, grid: Grid = None, audit_samples=64):
        if isinstance(rhs, GridField):
            grid = grid or rhs.grid
        if grid is None:
            raise ArgumentError("a grid is required")
        if operator.dim != grid.dim:
            raise ArgumentError("operator and grid dimensions differ")
        self.operator = operator
        self.grid = grid
        rhs_vals = _values_on(rhs, grid)
        bnd = _values_on(boundary, grid)
        if not np.all(np.isfinite(rhs_vals)):
            raise InputError("right-hand side contains non-finite values")
        if not np.all(np.isfinite(bnd[boundary_mask(grid)])):
            raise InputError("boundary data contains non-finite values")
        self.rhs = GridField(grid, rhs_vals)
        bnd = np.where(boundary_mask(grid), bnd, 0.0)
        self.boundary = GridField(grid, bnd)
        self.boundary_source = boundary if isinstance(boundary, str) else getattr(boundary, "source", None)
        if audit_samples:
            rep = ellipticity_audit(operator, operator.ellipticity, samples=audit_samples, seed=0)
            if not rep.passed:
                raise InputError(f"operator fails the ellipticity audit (worst margin {rep.worst_margin:.3g})")

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        self.rhs.save(os.path.join(directory, "rhs.bin"))
        self.boundary.save(os.path.join(directory, "boundary.bin"))
        doc = {"operator": self.operator.to_document(), "grid": self.grid.to_dict(),
               "rhs": "rhs.bin", "boundary": "boundary.bin"}
        if self.boundary_source is not None:
            doc["boundary_expression"] = self.boundary_source
        with open(os.path.join(directory, "problem.json"), "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "problem.json")) as fh:
            doc = json.load(fh)
        op = OperatorSpec.from_document(doc["operator"])
        rhs = GridField.load(os.path.join(directory, doc["rhs"]))
        bnd = GridField.load(os.path.join(directory, doc["boundary"]))
        return cls(op, rhs, bnd, rhs.grid, audit_samples=0)


def boundary_mask(grid):
    mask = np.zeros(grid.cells, dtype=bool)
    for ax in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[ax] = 0
        mask[tuple(sl)] = True
        sl[ax] = -1
        mask[tuple(sl)] = True
    return mask


@dataclass
class SolveResult:
    u: GridField
    iterations: int
    residual: float
    history: list
    meta: dict = field(default_factory=dict)

    def save(self, path):
        self.u.save(path)

    def history_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for i, r in enumerate(self.history):
                w.writerow([i, repr(float(r))])

    def summary(self):
        return {"iterations": self.iterations, "residual": self.residual, "history": self.history, **self.meta}


class _Discretization:
    def __init__(self, prob: Problem):
        grid = prob.grid
        self.grid = grid
        self.h2 = grid.h**2
        n = grid.dim
        self.dirs = stencil_directions(n)
        interior = ~boundary_mask(grid)
        self.interior = interior
        self.int_flat = np.flatnonzero(interior.reshape(-1))
        self.unknown = np.full(grid.size, -1, dtype=np.int64)
        self.unknown[self.int_flat] = np.arange(self.int_flat.size)
        idx = np.array(np.unravel_index(self.int_flat, grid.cells)).T
        self.plus = np.stack([np.ravel_multi_index(tuple((idx + v).T), grid.cells) for v in self.dirs], 1)
        self.minus = np.stack([np.ravel_multi_index(tuple((idx - v).T), grid.cells) for v in self.dirs], 1)
        pts = grid.cell_centers()[self.int_flat]
        self.C = _family(prob.operator, pts)
        self.f = prob.rhs.values.reshape(-1)[self.int_flat]
        self.bvals = prob.boundary.values.reshape(-1)

    def curvatures(self, u):
        uc = u[self.int_flat][:, None]
        return (u[self.plus] - 2 * uc + u[self.minus]) / self.h2

    def evaluate(self, u):
        D = self.curvatures(u)
        if self.C.shape[0] == 1:
            vals = np.einsum("sjkd,md->msjk", self.C[0], D)
        else:
            vals = np.einsum("msjkd,md->msjk", self.C, D)
        inner = vals.max(-1)
        kidx = vals.argmax(-1)
        jstar = inner.argmin(-1)
        kstar = np.take_along_axis(kidx, jstar[..., None], -1)[..., 0]
        Fh = np.take_along_axis(inner, jstar[..., None], -1)[..., 0].mean(-1)
        return Fh, (jstar, kstar)

    def policy_weights(self, policy):
        jstar, kstar = policy
        m, M = jstar.shape
        C = np.broadcast_to(self.C, (m,) + self.C.shape[1:])
        mi = np.arange(m)[:, None]
        si = np.arange(M)[None, :]
        return C[mi, si, jstar, kstar].mean(1)

    def linear_solve(self, W):
        m = self.int_flat.size
        rows, cols, data = [np.arange(m)], [np.arange(m)], [-2 * W.sum(1) / self.h2]
        rhs = self.f.copy()
        for nb in (self.plus, self.minus):
            col = self.unknown[nb]
            coef = W / self.h2
            inner = col >= 0
            r_i, d_i = np.nonzero(inner)
            rows.append(r_i)
            cols.append(col[r_i, d_i])
            data.append(coef[r_i, d_i])
            r_b, d_b = np.nonzero(~inner)
            np.subtract.at(rhs, r_b, coef[r_b, d_b] * self.bvals[nb[r_b, d_b]])
        A = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
        if np.any(W.sum(1) <= 0):
            raise SchemeError("policy stencil has a vanishing diagonal")
        return splu(A).solve(rhs)

    def full(self, interior_values):
        u = self.bvals.copy()
        u[self.int_flat] = interior_values
        return u


def solve(prob: Problem, tol=1e-8, max_iter=50, min_cells=MIN_CELLS) -> SolveResult:
    """Policy iteration for the monotone scheme.

    Damping by 0.5 is switched on after the first residual increase.  Ties
    in the min/max index selection go to the lowest index.
    """
    if min(prob.grid.cells) < min_cells:
        raise ArgumentError(f"solve needs at least {min_cells} cells per axis")
    if tol < 1e-10:
        raise ArgumentError("tol must be >= 1e-10")
    disc = _Discretization(prob)
    m, M = disc.int_flat.size, disc.C.shape[1]
    policy = (np.zeros((m, M), dtype=np.int64), np.zeros((m, M), dtype=np.int64))
    u = disc.full(disc.linear_solve(disc.policy_weights(policy)))
    history, changes = [], []
    damping = 1.0
    for it in range(max_iter + 1):
        Fh, new_policy = disc.evaluate(u)
        res = float(np.max(np.abs(Fh - disc.f))) if m else 0.0
        if history and res > history[-1]:
            damping = DAMPING
        history.append(res)
        if res <= tol:
            meta = {"stencil": "axis+diagonal", "width": 1, "directions": int(2 * len(disc.dirs)),
                    "damping": damping, "policy_changes": changes, "tol": tol}
            return SolveResult(GridField(prob.grid, u.reshape(prob.grid.cells)), it, res, history, meta)
        if it == max_iter:
            break
        changes.append(int(np.sum(np.any((new_policy[0] != policy[0]) | (new_policy[1] != policy[1]), axis=1))))
        policy = new_policy
        target = disc.full(disc.linear_solve(disc.policy_weights(policy)))
        u = target if damping == 1.0 else u + damping * (target - u)
    raise ConvergenceError(f"policy iteration did not reach tol={tol} in {max_iter} iterations", history)


def discrete_residual(prob: Problem, u: GridField):
    disc = _Discretization(prob)
    Fh, _ = disc.evaluate(u.values.reshape(-1))
    out = np.zeros(prob.grid.size)
    out[disc.int_flat] = Fh - disc.f
    return GridField(prob.grid, out.reshape(prob.grid.cells))


# --------------------------------------------------------------------------
# manufactured problems


def hessian_field(u_exact, grid):
    """Exact Hessians (m, n, n) of a closed-form function at the cell centres."""
    expr = u_exact if isinstance(u_exact, Expression) else Expression(u_exact, grid.dim)
    pts = grid.cell_centers()
    H = np.empty((pts.shape[0], grid.dim, grid.dim))
    for a, row in enumerate(expr.hessian()):
        for b, e in enumerate(row):
            H[:, a, b] = e(pts)
    return H


def manufacture(u_exact, F: OperatorSpec, grid: Grid, audit_samples=64) -> Problem:
    """f := F(x, D^2 u*) from the symbolic Hessian; boundary = u*."""
    expr = u_exact if isinstance(u_exact, Expression) else Expression(u_exact, grid.dim)
    f = F(grid.cell_centers(), hessian_field(expr, grid)).reshape(grid.cells)
    prob = Problem(F, GridField(grid, f), expr, grid, audit_samples=audit_samples)
    prob.exact = expr
    return prob


def max_error(result: SolveResult, exact, mask=None):
    grid = result.u.grid
    ref = _values_on(exact, grid)
    err = np.abs(result.u.values - ref)
    if mask is not None:
        err = err[mask]
    return float(err.max())


# --------------------------------------------------------------------------
# frozen coefficients, scaling


def inscribed_subgrid(grid: Grid, ball: Ball):
    """Cells whose centres lie in the cube inscribed in ``ball``; returns (subgrid, index slices)."""
    if not grid.contains_ball(ball):
        raise ArgumentError("ball must lie inside the grid box")
    half = ball.radius / np.sqrt(grid.dim)
    lo = np.ceil((ball.center - half - grid.low) / grid.h - 0.5).astype(int)
    hi = np.floor((ball.center + half - grid.low) / grid.h - 0.5).astype(int)
    cells = hi - lo + 1
    if np.any(cells < 8):
        raise ArgumentError("inscribed cube holds fewer than 8 cells per axis")
    k = int(cells.min())
    sl = tuple(slice(int(a), int(a) + k) for a in lo)
    sub = Grid(grid.low + lo * grid.h, grid.low + (lo + k) * grid.h, [k] * grid.dim)
    return sub, sl


def frozen_coefficient_solve(prob: Problem, u: GridField, ball: Ball, tol=1e-8, max_iter=50) -> SolveResult:
    """Solve (F)_B(D^2 h) = 0 on the cube inscribed in ``ball`` with h = u on its boundary layer."""
    sub, sl = inscribed_subgrid(prob.grid, ball)
    Fb = averaged_operator(prob.operator, ball, prob.grid)
    trace = GridField(sub, np.array(u.values[sl]))
    sub_prob = Problem(Fb, 0.0, trace, sub, audit_samples=0)
    res = solve(sub_prob, tol, max_iter, min_cells=8)
    dist = float(np.max(np.abs(res.u.values - u.values[sl])))
    res.meta.update({"distance": dist, "subgrid": sub.to_dict()})
    return res


def rescale_problem(prob: Problem, A=1.0):
    """Rescaling onto [-1, 1]^n with the same cell count.

    With x0 the box centre and r its half width: u~(y) = u(x0 + r y)/(A r),
    F~(y, X) = (r/A) F(x0 + r y, (A/r) X) = F(x0 + r y, X) for the positively
    homogeneous forms used here, f~(y) = (r/A) f(x0 + r y).
    """
    grid = prob.grid
    widths = grid.high - grid.low
    if not np.allclose(widths, widths[0]):
        raise ArgumentError("rescaling needs a cubic box")
    r = widths[0] / 2
    x0 = (grid.low + grid.high) / 2
    unit = Grid([-1.0] * grid.dim, [1.0] * grid.dim, grid.cells)
    F = prob.operator
    if F.form in ("pucci-plus", "pucci-minus") or F.x_independent:
        Ft = F
    else:
        jk = F.coefficients.jk_shape
        Ft = OperatorSpec(F.form, F.dim, F.ellipticity,
                          Coefficients(lambda y, _c=F.coefficients: _c.stack(x0 + r * y), F.dim, jk))
    rhs = GridField(unit, prob.rhs.values * (r / A))
    bnd = GridField(unit, prob.boundary.values / (A * r))
    return Problem(Ft, rhs, bnd, unit, audit_samples=0), (x0, r, A)


# --------------------------------------------------------------------------
# convergence studies


def convergence_study(cells_list, make_problem, tol=1e-9, max_iter=50):
    """Solve on a refinement ladder and fit the observed order.

    ``make_problem(cells) -> (Problem, exact)``; ``exact`` may be an
    Expression, callable or GridField.  Errors are max-norm over all cells.
    """
    cells_list = list(cells_list)
    if len(cells_list) < 2 or any(b <= a for a, b in zip(cells_list, cells_list[1:])):
        raise ArgumentError("cells ladder must be strictly refining with at least 2 entries")
    rows = []
    for cells in cells_list:
        prob, exact = make_problem(cells)
        res = solve(prob, tol, max_iter)
        rows.append({"cells": cells, "h": prob.grid.h, "error": max_error(res, exact),
                     "iterations": res.iterations, "residual": res.residual})
    errs = np.array([r["error"] for r in rows])
    hs = np.array([r["h"] for r in rows])
    report = {"rows": rows}
    if np.all(errs < 1e-10):
        report["order"] = None
        report["note"] = "errors at round-off; order fit skipped"
        return report
    report["pairwise_orders"] = (np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])).tolist()
    report["order"] = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    return report
