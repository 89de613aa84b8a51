"""Symmetric-matrix kernels, Pucci extremal operators and concrete uniformly
elliptic operator families F(x, X).

Every operator is evaluated in the convention where F is nondecreasing in X,
so that the trace form with A = I is the Laplacian and

    P^-(X - Y) <= F(x, X) - F(x, Y) <= P^+(X - Y).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DomainError, NumericalFailure
from .expr import Expression

FORMS = ("trace", "bellman", "isaacs", "pucci-plus", "pucci-minus", "averaged")
AUDIT_TOL = 1e-9


# --------------------------------------------------------------------------
# matrices


@dataclass(frozen=True)
class EllipticityPair:
    lam: float
    Lam: float

    def __post_init__(self):
        if not (self.lam > 0 and self.Lam >= self.lam):
            raise ArgumentError(f"need 0 < lambda <= Lambda, got ({self.lam}, {self.Lam})")

    def to_dict(self):
        return {"lambda": self.lam, "Lambda": self.Lam}


@dataclass(frozen=True)
class SymMatrix:
    """Dense symmetric n x n matrix stored by its upper triangle (row major)."""

    dim: int
    upper: tuple

    def __post_init__(self):
        if self.dim < 2:
            raise ArgumentError("SymMatrix needs dim >= 2")
        if len(self.upper) != self.dim * (self.dim + 1) // 2:
            raise ArgumentError("wrong number of upper-triangle entries")

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ArgumentError("expected a square matrix")
        iu = np.triu_indices(n)
        # average the two triangles so slightly asymmetric input is projected
        sym = 0.5 * (a + a.T)
        return cls(n, tuple(float(v) for v in sym[iu]))

    @classmethod
    def diag(cls, *values):
        return cls.from_dense(np.diag(values))

    def dense(self):
        n = self.dim
        out = np.zeros((n, n))
        out[np.triu_indices(n)] = self.upper
        return out + np.triu(out, 1).T

    def __neg__(self):
        return SymMatrix(self.dim, tuple(-v for v in self.upper))

    def __sub__(self, other):
        return SymMatrix(self.dim, tuple(a - b for a, b in zip(self.upper, other.upper)))

    def __mul__(self, t):
        return SymMatrix(self.dim, tuple(t * v for v in self.upper))

    __rmul__ = __mul__

    def frobenius(self):
        return float(np.linalg.norm(self.dense()))

    def eigh(self):
        """Eigenpairs with eigenvalues sorted descending."""
        w, q = _eigh(self.dense())
        return w[::-1], q[:, ::-1]

    def eigenvalues(self):
        return self.eigh()[0]


def _eigh(a):
    try:
        return np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"symmetric eigensolver failed: {exc}") from None


def _as_array(X):
    if isinstance(X, SymMatrix):
        return X.dense()
    a = np.asarray(X, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ArgumentError("expected (..., n, n) symmetric matrices")
    return a


def eigenvalues(X):
    """Eigenvalues of one or a stack of symmetric matrices, descending."""
    a = _as_array(X)
    try:
        w = np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"symmetric eigensolver failed: {exc}") from None
    return w[..., ::-1]


def pucci_minus(X, e: EllipticityPair):
    """lambda * (sum of positive eigenvalues) + Lambda * (sum of negative ones)."""
    w = eigenvalues(X)
    out = e.lam * np.where(w > 0, w, 0.0).sum(-1) + e.Lam * np.where(w < 0, w, 0.0).sum(-1)
    return float(out) if np.ndim(out) == 0 else out


def pucci_plus(X, e: EllipticityPair):
    w = eigenvalues(X)
    out = e.Lam * np.where(w > 0, w, 0.0).sum(-1) + e.lam * np.where(w < 0, w, 0.0).sum(-1)
    return float(out) if np.ndim(out) == 0 else out


def random_symmetric(rng, dim, size):
    a = rng.standard_normal((size, dim, dim))
    return 0.5 * (a + np.swapaxes(a, -1, -2))


# --------------------------------------------------------------------------
# coefficients


class Coefficients:
    """Matrix coefficients of an operator, canonically shaped (J, K, n, n).

    ``J`` indexes the outer minimum and ``K`` the inner maximum:
    trace-linear has J = K = 1, Bellman J = 1.  Entries may be numbers,
    expression strings, or a callable ``points -> (m, J, K, n, n)``.
    """

    def __init__(self, spec, dim, jk_shape=None):
        self.dim = dim
        self._func = None
        self._const = None
        self._exprs = None
        if callable(spec):
            if jk_shape is None:
                raise ArgumentError("callable coefficients need an explicit (J, K) shape")
            self._func = spec
            self.jk_shape = tuple(jk_shape)
            return
        arr = np.array(spec, dtype=object)
        if arr.shape[-2:] != (dim, dim):
            raise ArgumentError(f"coefficient matrices must be {dim}x{dim}, got shape {arr.shape}")
        while arr.ndim < 4:
            arr = arr[None]
        self.jk_shape = arr.shape[:2]
        if all(isinstance(v, (int, float, np.integer, np.floating)) for v in arr.flat):
            const = arr.astype(float)
            if not np.allclose(const, np.swapaxes(const, -1, -2), atol=1e-14, rtol=0):
                raise ArgumentError("coefficient matrices must be symmetric")
            const.setflags(write=False)
            self._const = const
        else:
            self._exprs = np.vectorize(lambda v: Expression(v, dim), otypes=[object])(arr)
            if all(not e.sym.free_symbols for e in self._exprs.flat):
                const = np.vectorize(lambda e: float(e.sym), otypes=[float])(self._exprs)
                const.setflags(write=False)
                self._const = const
        self._source = arr

    @property
    def is_constant(self):
        return self._const is not None

    @property
    def serializable(self):
        return self._func is None

    def stack(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m = pts.shape[0]
        if self._const is not None:
            return np.broadcast_to(self._const, (m,) + self._const.shape)
        if self._func is not None:
            out = np.asarray(self._func(pts), dtype=float)
            return out.reshape((m,) + self.jk_shape + (self.dim, self.dim))
        out = np.empty((m,) + self._exprs.shape)
        for idx, e in np.ndenumerate(self._exprs):
            out[(slice(None),) + idx] = e(pts)
        return out

    def to_list(self):
        if self._func is not None:
            raise ArgumentError("callable coefficients cannot be serialized")

        def conv(v):
            if isinstance(v, (np.integer, np.floating)):
                return float(v)
            return v

        return np.vectorize(conv, otypes=[object])(self._source).tolist()


# --------------------------------------------------------------------------
# operators


class OperatorSpec:
    """A concrete family F(x, X).

    Build instances with the classmethods :meth:`trace`, :meth:`bellman`,
    :meth:`isaacs`, :meth:`pucci`.
    """

    def __init__(self, form, dim, ellipticity, coefficients=None, domain=None, samples=None, base_form=None):
        if form not in FORMS:
            raise ArgumentError(f"unknown operator form {form!r}")
        if dim < 2:
            raise ArgumentError("operators need dim >= 2")
        self.form = form
        self.dim = dim
        self.ellipticity = ellipticity
        self.coefficients = coefficients
        self.domain = None if domain is None else (np.asarray(domain[0], float), np.asarray(domain[1], float))
        if samples is not None:
            samples = np.asarray(samples, dtype=float)
            samples.setflags(write=False)
        self.samples = samples
        self.base_form = base_form

    # constructors --------------------------------------------------------

    @classmethod
    def trace(cls, A, ellipticity, dim=None, domain=None):
        dim = dim or _infer_dim(A)
        return cls("trace", dim, ellipticity, _coeffs(A, dim, (1, 1), depth=2), domain)

    @classmethod
    def bellman(cls, matrices, ellipticity, dim=None, domain=None, count=None):
        if callable(matrices):
            coeffs = Coefficients(matrices, dim, (1, count))
        else:
            dim = dim or _infer_dim(matrices[0])
            coeffs = Coefficients([list(matrices)], dim)
        return cls("bellman", dim, ellipticity, coeffs, domain)

    @classmethod
    def isaacs(cls, grid_of_matrices, ellipticity, dim=None, domain=None, shape=None):
        if callable(grid_of_matrices):
            coeffs = Coefficients(grid_of_matrices, dim, shape)
        else:
            dim = dim or _infer_dim(grid_of_matrices[0][0])
            coeffs = Coefficients([list(row) for row in grid_of_matrices], dim)
        return cls("isaacs", dim, ellipticity, coeffs, domain)

    @classmethod
    def pucci(cls, sign, ellipticity, dim):
        form = {"+": "pucci-plus", "-": "pucci-minus"}[sign]
        return cls(form, dim, ellipticity)

    # properties ------------------------------------------------------------

    @property
    def x_independent(self):
        if self.form in ("pucci-plus", "pucci-minus", "averaged"):
            return True
        return self.coefficients.is_constant

    def __repr__(self):
        return f"OperatorSpec(form={self.form!r}, dim={self.dim}, ellipticity={self.ellipticity})"

    def _check_domain(self, pts):
        if self.domain is None:
            return
        lo, hi = self.domain
        if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
            raise DomainError("evaluation point outside the coefficient domain")

    def coefficient_stack(self, points):
        """(m, M, J, K, n, n) matrices; M > 1 only for averaged operators."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.form == "averaged":
            return np.broadcast_to(self.samples, (pts.shape[0],) + self.samples.shape)
        if self.coefficients is None:
            raise ArgumentError(f"{self.form} operators have no coefficient matrices")
        self._check_domain(pts)
        return self.coefficients.stack(pts)[:, None]

    def __call__(self, points, X):
        """F(x, X) for points (m, n) and matrices (n, n) or (m, n, n)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        Xa = _as_array(X)
        if Xa.ndim == 2:
            Xa = np.broadcast_to(Xa, (pts.shape[0],) + Xa.shape)
        if self.form == "pucci-plus":
            self._check_domain(pts)
            return np.asarray(pucci_plus(Xa, self.ellipticity), dtype=float).reshape(-1)
        if self.form == "pucci-minus":
            self._check_domain(pts)
            return np.asarray(pucci_minus(Xa, self.ellipticity), dtype=float).reshape(-1)
        if self.form == "averaged":
            if self.base_form in ("pucci-plus", "pucci-minus"):
                op = pucci_plus if self.base_form == "pucci-plus" else pucci_minus
                return np.asarray(op(Xa, self.ellipticity), dtype=float).reshape(-1)
            tr = np.einsum("sjkab,mab->msjk", self.samples, Xa)
            return tr.max(-1).min(-1).mean(-1)
        self._check_domain(pts)
        tr = np.einsum("mjkab,mab->mjk", self.coefficients.stack(pts), Xa)
        return tr.max(-1).min(-1)

    # serialization -----------------------------------------------------------

    def to_document(self):
        doc = {"form": self.form, "dim": self.dim, "ellipticity": self.ellipticity.to_dict()}
        if self.form in ("trace", "bellman", "isaacs"):
            coeffs = self.coefficients.to_list()
            if self.form == "trace":
                coeffs = coeffs[0][0]
            elif self.form == "bellman":
                coeffs = coeffs[0]
            doc["coefficients"] = coeffs
        if self.form == "averaged":
            doc["base_form"] = self.base_form
            doc["samples"] = None if self.samples is None else self.samples.tolist()
        if self.domain is not None:
            doc["domain"] = [self.domain[0].tolist(), self.domain[1].tolist()]
        return doc

    def dumps(self):
        return json.dumps(self.to_document(), sort_keys=True)

    @classmethod
    def from_document(cls, doc):
        if isinstance(doc, str):
            try:
                doc = json.loads(doc)
            except json.JSONDecodeError as exc:
                raise ArgumentError(f"operator document is not valid JSON: {exc}") from None
        try:
            form = doc["form"]
            dim = int(doc["dim"])
            ell = doc["ellipticity"]
            e = EllipticityPair(float(ell["lambda"]), float(ell["Lambda"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ArgumentError(f"malformed operator document: {exc}") from None
        domain = doc.get("domain")
        if form == "trace":
            return cls.trace(doc["coefficients"], e, dim, domain)
        if form == "bellman":
            return cls.bellman(doc["coefficients"], e, dim, domain)
        if form == "isaacs":
            return cls.isaacs(doc["coefficients"], e, dim, domain)
        if form in ("pucci-plus", "pucci-minus"):
            return cls(form, dim, e, domain=domain)
        if form == "averaged":
            return cls("averaged", dim, e, samples=doc.get("samples"), base_form=doc["base_form"])
        raise ArgumentError(f"unknown operator form {form!r}")


def _infer_dim(A):
    if callable(A):
        raise ArgumentError("dim is required for callable coefficients")
    return len(A)


def _coeffs(A, dim, jk, depth):
    if callable(A):
        def stacked(pts, _A=A):
            return np.asarray(_A(pts), dtype=float)[:, None, None]

        return Coefficients(stacked, dim, jk)
    return Coefficients([[A]], dim)


def evaluate_operator(F: OperatorSpec, x, X):
    """F(x, X) at a single point."""
    return float(F(np.asarray(x, dtype=float)[None], X)[0])


# --------------------------------------------------------------------------
# audits


@dataclass
class AuditReport:
    name: str
    samples: int
    worst_margin: float
    violations: list
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.violations

    def to_dict(self):
        return {
            "name": self.name,
            "samples": self.samples,
            "worst_margin": self.worst_margin,
            "violations": self.violations,
            "seed": self.seed,
            "meta": self.meta,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _sample_points(F, rng, size):
    if F.domain is not None:
        lo, hi = F.domain
    else:
        lo, hi = -np.ones(F.dim), np.ones(F.dim)
    return lo + (hi - lo) * rng.random((size, F.dim))


def ellipticity_audit(F: OperatorSpec, e: EllipticityPair, samples=1000, seed=0, tol=AUDIT_TOL):
    """Check the Pucci sandwich on random (x, X, Y) triples.

    Violations are listed in the report, never raised.
    """
    if samples < 1:
        raise ArgumentError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = _sample_points(F, rng, samples)
    X = random_symmetric(rng, F.dim, samples)
    Y = random_symmetric(rng, F.dim, samples)
    diff = F(pts, X) - F(pts, Y)
    lower = diff - pucci_minus(X - Y, e)
    upper = pucci_plus(X - Y, e) - diff
    margins = np.minimum(lower, upper)
    bad = np.flatnonzero(margins < -tol)
    violations = [
        {"index": int(i), "side": "lower" if lower[i] < upper[i] else "upper", "margin": float(margins[i])}
        for i in bad
    ]
    return AuditReport(
        name=f"ellipticity[{F.form}]",
        samples=samples,
        worst_margin=float(margins.min()),
        violations=violations,
        seed=seed,
        meta={"tolerance": tol, "ellipticity": e.to_dict()},
    )


def averaged_operator(F: OperatorSpec, ball, grid):
    """The x-independent operator Y -> mean of F(x, Y) over grid cells in ``ball``."""
    pts = grid.points_in_ball(ball)
    if pts.shape[0] == 0:
        raise DomainError("ball contains no cell centre of the grid")
    if F.x_independent:
        return F
    stack = F.coefficient_stack(pts)[:, 0]
    if F.form == "trace":
        return OperatorSpec.trace(stack.mean(0)[0, 0].tolist(), F.ellipticity, F.dim)
    return OperatorSpec("averaged", F.dim, F.ellipticity, samples=stack, base_form=F.form)


@dataclass
class CoefficientModulus:
    """omega(R) estimates.  Each value is a lower bound of the true supremum:
    the sup runs over a finite probe set only."""

    radii: list
    omega_values: list
    sampling: dict

    def to_dict(self):
        return {"radii": self.radii, "omega_values": self.omega_values, "sampling": self.sampling}


def _probe_matrices(dim, count, seed):
    rng = np.random.default_rng(seed)
    Y = random_symmetric(rng, dim, count)
    norms = np.linalg.norm(Y, axis=(1, 2))
    return Y / norms[:, None, None]


def _omega_sup(F, R, grid, probes, levels, stride, seed):
    if R <= 0:
        raise ArgumentError("R must be positive")
    Y = _probe_matrices(F.dim, probes, seed)
    pts = grid.cell_centers()
    vals = np.stack([F(pts, Y[j]) for j in range(probes)], axis=1)
    vals = vals.reshape(tuple(grid.cells) + (probes,))
    centres = grid.lattice_indices(stride)
    best = 0.0
    for k in range(levels):
        rho = R / 2**k
        offsets = grid.ball_offsets(rho)
        for idx in centres:
            cells = grid.clip_offsets(idx, offsets)
            block = vals[tuple(cells.T)]
            osc = np.abs(block - block.mean(0)).mean(0)
            best = max(best, float(osc.max()))
    return best


def coefficient_bmo_modulus(F: OperatorSpec, R, grid, probes=64, levels=9, stride=4, seed=0):
    """Estimate omega(R) for one radius.

    Probe set: radii R, R/2, ..., R/2**(levels-1); centres every ``stride``
    cells; ``probes`` random symmetric matrices of unit Frobenius norm shared
    by all balls.  Balls are intersected with the grid box.
    """
    if R <= 0:
        raise ArgumentError("R must be positive")
    if F.x_independent:
        value = 0.0
    else:
        value = _omega_sup(F, R, grid, probes, levels, stride, seed)
    return CoefficientModulus(
        radii=[float(R)],
        omega_values=[value],
        sampling={
            "probe_matrices": probes,
            "levels": levels,
            "center_stride": stride,
            "matrix_norm": "frobenius",
            "seed": seed,
            "bound": "lower",
        },
    )


def coefficient_modulus(F, radii, grid, **kw):
    """omega over a list of radii, made nondecreasing by taking the running sup
    (omega(R) is itself a sup over rho <= R)."""
    radii = sorted(float(r) for r in radii)
    entries = [coefficient_bmo_modulus(F, R, grid, **kw) for R in radii]
    vals = np.maximum.accumulate([e.omega_values[0] for e in entries]).tolist()
    return CoefficientModulus(radii, vals, entries[0].sampling if entries else {})


def theta_bmo(F, theta, grid, radii, **kw):
    """Largest probed radius R with omega(R) <= theta, or None."""
    mod = coefficient_modulus(F, radii, grid, **kw)
    ok = [R for R, w in zip(mod.radii, mod.omega_values) if w <= theta]
    return max(ok) if ok else None

