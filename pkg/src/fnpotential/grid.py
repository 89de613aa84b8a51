"""Uniform Cartesian grids on boxes, balls, cell-centre averages and discrete
gradients.

Values live at cell centres.  A ball contains the cell centres strictly
inside it.  Scalar data is extended by zero outside the grid box, so the
average over a ball that leaves the box still divides by the number of
lattice centres in the whole ball (``extension="zero"``); pass
``extension="restrict"`` to average over the part inside the box only.
"""
from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DomainError, InputError

MIN_CELLS = 8


def unit_ball_volume(n):
    """Lebesgue measure of the unit ball in R^n."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def _rho_key(rho, h):
    # squared radius in cell units; every inclusion test goes through here
    return (rho / h) ** 2


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ArgumentError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


class Grid:
    """Cell-centred grid over ``[low, high]`` per axis with equal spacing ``h``."""

    def __init__(self, low, high, cells):
        low = np.asarray(low, dtype=float).reshape(-1)
        high = np.asarray(high, dtype=float).reshape(-1)
        cells = tuple(int(c) for c in np.atleast_1d(cells))
        if len(cells) == 1:
            cells = cells * low.size
        if not (low.size == high.size == len(cells)):
            raise ArgumentError("low, high and cells must have the same length")
        if low.size < 2:
            raise ArgumentError("grids need dim >= 2")
        if min(cells) < MIN_CELLS:
            raise ArgumentError(f"need at least {MIN_CELLS} cells per axis")
        widths = (high - low) / np.array(cells)
        if np.any(widths <= 0) or np.ptp(widths) > 1e-14 * max(1.0, widths.max()):
            raise ArgumentError(f"cell widths differ across axes: {widths}")
        self.low = low
        self.high = high
        self.cells = cells
        self.h = float(widths[0])
        self.low.setflags(write=False)
        self.high.setflags(write=False)

    @classmethod
    def square(cls, cells, half_width=1.0, dim=2):
        return cls([-half_width] * dim, [half_width] * dim, [cells] * dim)

    @property
    def dim(self):
        return len(self.cells)

    @property
    def size(self):
        return int(np.prod(self.cells))

    @property
    def cell_volume(self):
        return self.h**self.dim

    @property
    def volume(self):
        return self.size * self.cell_volume

    def __repr__(self):
        return f"Grid(low={self.low.tolist()}, high={self.high.tolist()}, cells={self.cells})"

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.cells == other.cells
            and np.array_equal(self.low, other.low)
            and np.array_equal(self.high, other.high)
        )

    def __hash__(self):
        return hash((self.cells, tuple(self.low), tuple(self.high)))

    def to_dict(self):
        return {
            "dim": self.dim,
            "extent": [[float(a), float(b)] for a, b in zip(self.low, self.high)],
            "cells": list(self.cells),
        }

    def axis(self, i):
        return self.low[i] + (np.arange(self.cells[i]) + 0.5) * self.h

    def mesh(self):
        return np.meshgrid(*[self.axis(i) for i in range(self.dim)], indexing="ij")

    @functools.cached_property
    def _centers(self):
        pts = np.stack([m.reshape(-1) for m in self.mesh()], axis=1)
        pts.setflags(write=False)
        return pts

    def cell_centers(self):
        """All cell centres, shape (size, dim), C order."""
        return self._centers

    def center_of(self, idx):
        return self.low + (np.asarray(idx, dtype=float) + 0.5) * self.h

    def index_of(self, point):
        """Index of the cell containing ``point``."""
        t = (np.asarray(point, dtype=float) - self.low) / self.h
        idx = np.floor(t).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.cells)):
            raise DomainError(f"point {point} outside the grid box")
        return tuple(int(i) for i in idx)

    def contains_ball(self, ball):
        c = np.asarray(ball.center)
        return bool(np.all(c - ball.radius >= self.low - 1e-12) and np.all(c + ball.radius <= self.high + 1e-12))

    def lattice_indices(self, stride, margin=0):
        """Cell indices every ``stride`` cells, at least ``margin`` cells from the edge."""
        axes = [np.arange(margin + stride // 2, c - margin, stride) for c in self.cells]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    # balls --------------------------------------------------------------

    def ball_offsets(self, rho):
        """Integer offsets k with |k| h < rho (balls centred at cell centres)."""
        return _offsets(self.dim, _rho_key(rho, self.h))

    def clip_offsets(self, idx, offsets):
        cells = np.asarray(idx)[None, :] + offsets
        keep = np.all((cells >= 0) & (cells < np.array(self.cells)), axis=1)
        return cells[keep]

    def profile(self, point, rmax):
        """Lattice centres within ``rmax`` of ``point`` sorted by distance.

        Returns ``(d2, flat)``: squared distances in cell units (ascending)
        and flat cell indices, ``-1`` for centres outside the grid box.
        """
        return _profile(self, tuple(float(v) for v in point), float(rmax))

    def points_in_ball(self, ball):
        d2, flat = self.profile(ball.center, ball.radius)
        keep = flat[(d2 < _rho_key(ball.radius, self.h)) & (flat >= 0)]
        return self.cell_centers()[np.sort(keep)]


@functools.lru_cache(maxsize=256)
def _offsets(dim, key):
    r = int(math.floor(math.sqrt(key))) + 1
    ax = np.arange(-r, r + 1)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    k = np.stack([m.reshape(-1) for m in mesh], axis=1)
    d2 = (k**2).sum(1)
    keep = d2 < key
    k, d2 = k[keep], d2[keep]
    order = np.lexsort(tuple(k.T[::-1]) + (d2,))
    out = k[order]
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=128)
def _profile(grid, point, rmax):
    h = grid.h
    t = (np.asarray(point) - grid.low) / h - 0.5
    snapped = np.abs(t - np.round(t)) < 1e-9
    t = np.where(snapped, np.round(t), t)
    rad = rmax / h
    axes = [np.arange(math.ceil(ti - rad), math.floor(ti + rad) + 1) for ti in t]
    mesh = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([m.reshape(-1) for m in mesh], axis=1)
    d2 = ((idx - t) ** 2).sum(1)
    keep = d2 < _rho_key(rmax, h)
    idx, d2 = idx[keep], d2[keep]
    order = np.argsort(d2, kind="stable")
    idx, d2 = idx[order], d2[order]
    inside = np.all((idx >= 0) & (idx < np.array(grid.cells)), axis=1)
    flat = np.full(idx.shape[0], -1, dtype=np.int64)
    if inside.any():
        flat[inside] = np.ravel_multi_index(tuple(idx[inside].T), grid.cells)
    d2.setflags(write=False)
    flat.setflags(write=False)
    return d2, flat


# --------------------------------------------------------------------------
# fields


class GridField:
    """Scalar or vector samples at the cell centres of a grid."""

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.shape == tuple(grid.cells):
            kind = "scalar"
        elif values.shape == tuple(grid.cells) + (grid.dim,):
            kind = "vector"
        else:
            raise ArgumentError(f"values of shape {values.shape} do not fit {grid}")
        if not np.all(np.isfinite(values)):
            raise InputError("field values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.kind = kind

    @classmethod
    def from_function(cls, grid, func):
        vals = np.asarray(func(grid.cell_centers()), dtype=float)
        if vals.ndim == 2:
            return cls(grid, vals.reshape(tuple(grid.cells) + (grid.dim,)))
        return cls(grid, vals.reshape(grid.cells))

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.cells, float(c)))

    def __repr__(self):
        return f"GridField({self.kind}, {self.grid})"

    def magnitude(self):
        """|g| per cell (Euclidean norm for vector fields), flattened."""
        if self.kind == "scalar":
            return np.abs(self.values).reshape(-1)
        return np.linalg.norm(self.values, axis=-1).reshape(-1)

    def flat(self):
        if self.kind == "scalar":
            return self.values.reshape(-1)
        return self.values.reshape(-1, self.grid.dim)

    def __add__(self, other):
        if isinstance(other, GridField):
            return GridField(self.grid, self.values + other.values)
        return GridField(self.grid, self.values + other)

    def __mul__(self, c):
        return GridField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other

    def abs(self):
        return GridField(self.grid, self.magnitude().reshape(self.grid.cells))

    def power(self, p):
        return GridField(self.grid, (self.magnitude() ** p).reshape(self.grid.cells))

    def max_abs(self):
        return float(self.magnitude().max())

    # io ------------------------------------------------------------------

    def sidecar(self):
        doc = self.grid.to_dict()
        doc["kind"] = self.kind
        doc["dtype"] = "<f8"
        doc["order"] = "C"
        return doc

    def save(self, path):
        """Write ``path`` (raw little-endian float64, C order) and ``path.json``."""
        path = Path(path)
        path.write_bytes(self.values.astype("<f8").tobytes(order="C"))
        Path(str(path) + ".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta_path = Path(str(path) + ".json")
        try:
            meta = json.loads(meta_path.read_text())
            extent = np.asarray(meta["extent"], dtype=float)
            grid = Grid(extent[:, 0], extent[:, 1], meta["cells"])
            kind = meta.get("kind", "scalar")
        except (OSError, KeyError, ValueError) as exc:
            raise InputError(f"cannot read field sidecar {meta_path}: {exc}") from None
        shape = tuple(grid.cells) + ((grid.dim,) if kind == "vector" else ())
        raw = np.frombuffer(path.read_bytes(), dtype="<f8")
        if raw.size != int(np.prod(shape)):
            raise InputError(f"{path} holds {raw.size} values, sidecar expects {int(np.prod(shape))}")
        return cls(grid, raw.reshape(shape))

    def to_csv(self, path):
        ncomp = 1 if self.kind == "scalar" else self.grid.dim
        idx = np.indices(self.grid.cells).reshape(self.grid.dim, -1).T
        vals = self.values.reshape(idx.shape[0], ncomp)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i{k + 1}" for k in range(self.grid.dim)] + [f"v{c + 1}" for c in range(ncomp)])
            for row_idx, row_val in zip(idx, vals):
                w.writerow([int(i) for i in row_idx] + [repr(float(v)) for v in row_val])
        Path(str(path) + ".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path):
        meta = json.loads(Path(str(path) + ".json").read_text())
        extent = np.asarray(meta["extent"], dtype=float)
        grid = Grid(extent[:, 0], extent[:, 1], meta["cells"])
        ncomp = 1 if meta.get("kind", "scalar") == "scalar" else grid.dim
        out = np.zeros(tuple(grid.cells) + (ncomp,))
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            next(rows)
            for row in rows:
                idx = tuple(int(v) for v in row[: grid.dim])
                out[idx] = [float(v) for v in row[grid.dim :]]
        return cls(grid, out[..., 0] if ncomp == 1 else out)


# --------------------------------------------------------------------------
# averages and derivatives


def _ball_cells(g, ball, extension):
    d2, flat = g.grid.profile(ball.center, ball.radius)
    inside = flat >= 0
    if not inside.any():
        raise DomainError(f"ball {ball} contains no cell centre of the grid")
    count = flat.size if extension == "zero" else int(inside.sum())
    if extension not in ("zero", "restrict"):
        raise ArgumentError(f"unknown extension {extension!r}")
    return flat[inside], count


def ball_average(g: GridField, B: Ball, extension="zero"):
    """Mean of ``g`` over lattice centres strictly inside ``B``."""
    cells, count = _ball_cells(g, B, extension)
    vals = g.flat()[cells]
    return vals.sum(0) / count if g.kind == "vector" else float(vals.sum() / count)


def lp_ball_average(g: GridField, B: Ball, p, extension="zero"):
    """(mean of |g|^p over B)^(1/p)."""
    if p < 1:
        raise ArgumentError("p must be >= 1")
    cells, count = _ball_cells(g, B, extension)
    return float((np.sum(g.magnitude()[cells] ** p) / count) ** (1.0 / p))


def gradient(u: GridField) -> GridField:
    """Second-order central differences inside, second-order one-sided at the edges."""
    if u.kind != "scalar":
        raise ArgumentError("gradient needs a scalar field")
    if min(u.grid.cells) < 3:
        raise ArgumentError("gradient needs at least 3 cells per axis")
    parts = np.gradient(u.values, u.grid.h, edge_order=2)
    return GridField(u.grid, np.stack(parts, axis=-1))


def restrict_mask(grid, margin_fraction):
    """Boolean mask of cells inside the concentric sub-box shrunk by
    ``margin_fraction`` of the box width on every side."""
    width = grid.high - grid.low
    lo = grid.low + margin_fraction * width
    hi = grid.high - margin_fraction * width
    pts = grid.cell_centers()
    return np.all((pts >= lo) & (pts <= hi), axis=1).reshape(grid.cells)
