"""Scenario documents: parsing, static validation and execution.

A scenario is one JSON (or YAML) document::

    {"name": ..., "seed": 0, "grids": [64, 128], "half_width": 1.0,
     "problems": [{"name": ..., "operator": {...}, "rhs": "4", "boundary": "x1**2+x2**2"}],
     "audits": [{"type": "gradient_potential", "p": 1.5, "q": 3, "r": 0.25}],
     "output": "runs/poisson"}

A problem gives either ``rhs`` and ``boundary`` (expressions, numbers, or
{"field": path}) or ``manufactured`` (an exact solution; rhs and boundary
are derived from it).  Every audit may carry ``name``, ``problem`` or
``problems`` (indices into the problem list) and ``expect`` (the verdict it
is supposed to reach, e.g. "fail" for a negative control).
"""
from __future__ import annotations

import copy
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import harness as H
from .errors import ArgumentError, DomainError, ParseError, ResolutionError
from .expr import Expression
from .grid import Grid, GridField
from .potentials import potential_chain_audit
from .pucci import AuditReport, EllipticityPair, OperatorSpec, ellipticity_audit
from .solver import Problem, manufacture, max_error, solve

REACHED = {"pass", "signal", "VMO", "BMO-not-VMO"}


def _laplacian(dim=2):
    return OperatorSpec.trace(np.eye(dim).tolist(), EllipticityPair(1.0, 1.0)).to_document()


def _bellman():
    e = EllipticityPair(1.0, 2.0)
    return OperatorSpec.bellman([np.eye(2).tolist(), [[2.0, 0.0], [0.0, 1.0]]], e).to_document()


BELLMAN_SUITE = [
    "sin(x1)*cos(x2)",
    "exp(x1/2)*sin(x2)",
    "x1**3-x2**2*x1",
    "cos(2*x1+x2)",
    "log(3+x1+x2)",
    "x1*exp(x2)",
    "sin(x1*x2)+x1",
    "(x1+2)**1.5",
    "cosh(x1)*sin(x2)+x2**2",
    "x1**2*x2+x2**3/3",
]

HARMONIC_SUITE = ["exp(x1)*cos(x2)", "x1**2-x2**2", "x1**3-3*x1*x2**2+x2"]

MAPPING_EXPONENTS = [0.5, 1.0, 1.5]


def _builtins():
    lap = _laplacian()
    witness = {k: H.witness_expression(k) for k in ("lorentz-finite", "lorentz-borderline", "weak")}
    return {
        "poisson-radial": (
            "Laplacian with u = |x|^2: gradient potential, VMO decay, continuity and W1q audits.",
            {
                "grids": [256, 512],
                "problems": [{"name": "radial", "operator": lap, "rhs": "4", "boundary": "x1**2+x2**2"}],
                "audits": [
                    {"type": "gradient_potential", "p": 1.5, "q": 3, "r": 0.125, "points": 16},
                    {"type": "vmo_decay", "p": 1.5, "q": 3, "sigma": 1 / 3, "r": 0.25, "points": 16},
                    {"type": "continuity", "p": 1.5, "delta": 0.5, "separations": [0.05, 0.1, 0.2], "points": 8},
                    {"type": "w1q", "p": 1.5, "q": 3, "center": [0.0, 0.0], "radius": 0.5},
                ],
            },
        ),
        "bellman-manufactured": (
            "Ten manufactured two-matrix Bellman problems: suite gradient constant and convergence order.",
            {
                "grids": [128, 256],
                "problems": [{"name": f"bellman-{k}", "operator": _bellman(), "manufactured": u}
                             for k, u in enumerate(BELLMAN_SUITE)],
                "audits": [
                    {"type": "gradient_potential", "p": 1.5, "q": 3, "r": 0.25, "points": 64},
                    {"type": "convergence", "problem": 0},
                ],
            },
        ),
        "borderline-lorentz-witness": (
            "L(2,1) and borderline radial witnesses: pair-shrinking sharpness signal and potential chain.",
            {
                "grids": [64, 128, 256],
                "problems": [
                    {"name": "finite", "operator": lap, "rhs": witness["lorentz-finite"], "boundary": "0"},
                    {"name": "borderline", "operator": lap, "rhs": witness["lorentz-borderline"], "boundary": "0"},
                ],
                "audits": [
                    {"type": "sharpness", "p": 1.5, "delta": 0.5, "base_separation": 0.25,
                     "finite": 0, "borderline": 1},
                    {"type": "hardy_littlewood", "p": 1.5, "radii": [0.0625, 0.125, 0.25, 0.5], "problems": [0, 1]},
                    {"type": "potential_chain", "p": 1.5, "radii": [0.125, 0.25, 0.5], "points": 3, "problem": 0},
                ],
            },
        ),
        "bmo-witness": (
            "Weak-L2 witness 1/|x| against a constant source: BMO/VMO classification and weak Hoelder bound.",
            {
                "grids": [128],
                "problems": [
                    {"name": "constant", "operator": lap, "rhs": "4", "boundary": "x1**2+x2**2"},
                    {"name": "weak", "operator": lap, "rhs": witness["weak"], "boundary": "0"},
                ],
                "audits": [
                    {"type": "bmo_vmo", "name": "bmo_vmo_constant", "problem": 0, "p": 1.5, "q": 3,
                     "radii": [0.5, 0.25, 0.125, 0.0625], "centres": [[0.0, 0.0], [0.2, -0.1]], "expect": "VMO"},
                    {"type": "bmo_vmo", "name": "bmo_vmo_weak", "problem": 1, "p": 1.5, "q": 3,
                     "radii": [0.5, 0.25, 0.125, 0.0625], "centres": [[0.0, 0.0], [0.2, -0.1]],
                     "expect": "BMO-not-VMO"},
                    {"type": "weak_holder", "problem": 1, "p": 1.5, "radii": [0.0625, 0.125, 0.25, 0.5],
                     "centres": [[0.0, 0.0], [0.2, -0.1], [-0.3, 0.25]]},
                ],
            },
        ),
        "mapping-sweep": (
            "Radial sources |x|^-a across the Lorentz threshold: observed vs predicted growth of Du.",
            {
                "grids": [64, 128, 256],
                "problems": [{"name": f"power-{a}", "operator": lap, "rhs": f"r**(-{a})", "boundary": "0",
                              "tags": {"a": a}} for a in MAPPING_EXPONENTS],
                "audits": [{"type": "mapping", "p": 1.5, "q": 1.5, "gamma": 2.0}],
            },
        ),
        "excess-decay-search": (
            "Harmonic problems: search for sigma with q-excess decay by 1/3 at 95% of centres.",
            {
                "grids": [64, 128, 256],
                "seed": 1,
                "problems": [{"name": f"harmonic-{k}", "operator": lap, "rhs": "0", "boundary": u}
                             for k, u in enumerate(HARMONIC_SUITE)],
                "audits": [
                    {"type": "excess_decay", "name": f"excess_decay_{k}", "problem": k, "q": 3, "r": 0.5,
                     "sigmas": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5], "points": 64}
                    for k in range(len(HARMONIC_SUITE))
                ],
            },
        ),
    }


def builtin_names():
    return list(_builtins())


def builtin_descriptions():
    return [(name, desc) for name, (desc, _) in _builtins().items()]


def builtin_document(name):
    table = _builtins()
    if name not in table:
        raise ParseError(f"unknown built-in scenario {name!r}")
    doc = copy.deepcopy(table[name][1])
    doc.setdefault("seed", 0)
    return dict(doc, name=name)


# --------------------------------------------------------------------------
# parsing


@dataclass
class ProblemDoc:
    name: str
    operator: OperatorSpec
    rhs: object = None
    boundary: object = None
    manufactured: str | None = None
    exact: str | None = None
    tags: dict = field(default_factory=dict)


@dataclass
class AuditDoc:
    type: str
    name: str
    params: dict
    problems: list
    expect: str | None = None


@dataclass
class Scenario:
    name: str
    seed: int
    grids: list
    half_width: float
    problems: list
    audits: list
    output: str | None = None
    document: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.problems[0].operator.dim

    def grid(self, cells):
        return Grid.square(cells, self.half_width, self.dim)


def read_document(path):
    """Parse a scenario file (JSON, or YAML by extension) or a built-in name."""
    if not os.path.exists(path):
        if path in _builtins():
            return builtin_document(path)
        raise ParseError(f"scenario file {path!r} not found")
    with open(path) as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        import yaml

        try:
            return yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ParseError(f"{path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _source(value, where):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        Expression(value, 2 if where is None else where)  # parse check
        return value
    if isinstance(value, dict) and set(value) == {"field"}:
        return {"field": str(value["field"])}
    raise ParseError(f"expected an expression, a number or {{'field': path}}, got {value!r}")


def _problem(doc, k):
    if not isinstance(doc, dict):
        raise ParseError(f"problem {k} is not a mapping")
    name = str(doc.get("name", f"problem-{k}"))
    try:
        op = OperatorSpec.from_document(doc["operator"])
    except KeyError:
        raise ParseError(f"problem {name!r} has no operator") from None
    except (ArgumentError, TypeError, ValueError) as exc:
        raise ParseError(f"problem {name!r}: malformed operator document: {exc}") from None
    tags = doc.get("tags", {})
    exact = doc.get("exact")
    if exact is not None:
        _source(exact, op.dim)
    if "manufactured" in doc:
        Expression(doc["manufactured"], op.dim)
        return ProblemDoc(name, op, manufactured=doc["manufactured"], exact=doc["manufactured"], tags=tags)
    if "rhs" not in doc or "boundary" not in doc:
        raise ParseError(f"problem {name!r} needs rhs and boundary, or manufactured")
    return ProblemDoc(name, op, _source(doc["rhs"], op.dim), _source(doc["boundary"], op.dim), exact=exact, tags=tags)


AUDIT_KEYS = {
    "gradient_potential": ({"p", "q", "r"}, {"points": 16}),
    "excess_decay": ({"q", "r", "sigmas"}, {"points": 64, "share": 0.95}),
    "vmo_decay": ({"p", "q", "r"}, {"sigma": 1 / 3, "points": 16, "fractions": [0.125, 0.25, 0.5, 1.0]}),
    "continuity": ({"p", "delta", "separations"}, {"alpha": 1.0, "points": 8}),
    "w1q": ({"p", "q", "center", "radius"}, {}),
    "sharpness": ({"p", "delta", "base_separation", "finite", "borderline"}, {}),
    "bmo_vmo": ({"p", "q", "radii", "centres"}, {"sigma": 1 / 3}),
    "weak_holder": ({"p", "radii", "centres"}, {"tol": 0.05}),
    "hardy_littlewood": ({"p", "radii"}, {"stride": 8, "tol": 0.05}),
    "potential_chain": ({"p", "radii"}, {"points": 3, "sigma": 0.25}),
    "mapping": ({"p", "q", "gamma"}, {"s": None}),
    "convergence": (set(), {"order": 0.9}),
    "ellipticity": (set(), {"samples": 1000}),
}

_META_KEYS = {"type", "name", "problem", "problems", "expect"}


def _audit(doc, k, nproblems):
    if not isinstance(doc, dict) or "type" not in doc:
        raise ParseError(f"audit {k} has no type")
    kind = doc["type"]
    name = str(doc.get("name", kind))
    if kind not in AUDIT_KEYS:
        raise ParseError(f"audit {name!r}: unknown type {kind!r}")
    required, defaults = AUDIT_KEYS[kind]
    missing = required - set(doc)
    if missing:
        raise ParseError(f"audit {name!r}: missing parameters {sorted(missing)}")
    unknown = set(doc) - required - set(defaults) - _META_KEYS
    if unknown:
        raise ParseError(f"audit {name!r}: unknown parameters {sorted(unknown)}")
    params = dict(defaults)
    params.update({key: v for key, v in doc.items() if key not in _META_KEYS})
    if "problems" in doc:
        probs = list(doc["problems"])
    elif "problem" in doc:
        probs = [doc["problem"]]
    elif kind in ("gradient_potential", "mapping", "hardy_littlewood"):
        probs = list(range(nproblems))
    elif kind == "sharpness":
        probs = [params["finite"], params["borderline"]]
    else:
        probs = [0]
    for i in probs:
        if not isinstance(i, int) or not 0 <= i < nproblems:
            raise ParseError(f"audit {name!r}: problem index {i!r} out of range")
    return AuditDoc(kind, name, params, probs, doc.get("expect"))


def parse_scenario(doc, grids=None, output=None) -> Scenario:
    """Structural parse of a scenario document; raises ParseError."""
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a mapping")
    try:
        name = str(doc.get("name", "scenario"))
        seed = int(doc.get("seed", 0))
        ladder = [int(c) for c in (grids or doc.get("grids", [64, 128]))]
        half_width = float(doc.get("half_width", 1.0))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad scenario header: {exc}") from None
    if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ParseError(f"grid ladder must be strictly refining, got {ladder}")
    probs = doc.get("problems")
    if "problem" in doc:
        probs = [doc["problem"]]
    if not probs:
        raise ParseError("scenario declares no problem")
    problems = [_problem(p, k) for k, p in enumerate(probs)]
    if len({p.operator.dim for p in problems}) != 1:
        raise ParseError("problems differ in dimension")
    audits = [_audit(a, k, len(problems)) for k, a in enumerate(doc.get("audits", []))]
    names = [a.name for a in audits]
    if len(set(names)) != len(names):
        raise ParseError(f"audit names must be unique, got {names}")
    return Scenario(name, seed, ladder, half_width, problems, audits, output or doc.get("output"), doc)


# --------------------------------------------------------------------------
# static validation


def _fail(audit, msg, kind=ParseError):
    raise kind(f"audit {audit.name!r}: {msg}")


def validate(sc: Scenario):
    """Check every audit's preconditions against the grid ladder, before any solve."""
    n = sc.dim
    grids = [sc.grid(c) for c in sc.grids]
    hc, hf = grids[0].h, grids[-1].h
    width = 2 * sc.half_width
    inner = H.OMEGA1_MARGIN * width
    for a in sc.audits:
        P = a.params
        try:
            for key in ("p", "q", "r", "sigma", "delta", "radius", "gamma"):
                if key in P and P[key] is not None:
                    P[key] = float(P[key])
                    if not P[key] > 0:
                        _fail(a, f"{key} must be positive")
        except (TypeError, ValueError):
            _fail(a, "numeric parameters expected")
        if a.type == "gradient_potential":
            try:
                H._check_pq(n, P["p"], P["q"], H.default_n_e(n))
            except ArgumentError as exc:
                _fail(a, str(exc))
            if P["r"] < 16 * hc * (1 - 1e-12) or P["r"] / 2 < 16 * hf * (1 - 1e-12):
                _fail(a, f"r = {P['r']} needs r >= 16h on the coarsest grid and r/2 >= 16h on the finest",
                      ResolutionError)
            if P["r"] > inner:
                _fail(a, f"balls of radius {P['r']} around Omega' leave the box", DomainError)
        elif a.type == "excess_decay":
            if P["q"] < 1:
                _fail(a, "q must be at least 1")
            if not all(0 < float(s) < 1 for s in P["sigmas"]):
                _fail(a, "sigmas must lie in (0, 1)")
            if max(P["sigmas"]) * P["r"] < 2 * hc:
                _fail(a, "every sigma r is below 2h on the coarsest grid", ResolutionError)
            if P["r"] > inner:
                _fail(a, f"balls of radius {P['r']} around Omega' leave the box", DomainError)
        elif a.type == "vmo_decay":
            if not 0 < P["sigma"] < 1:
                _fail(a, "sigma must lie in (0, 1)")
            if max(P["fractions"]) * P["r"] < 2 * hc:
                _fail(a, "every rho is below 2h on the coarsest grid", ResolutionError)
            if P["r"] > inner:
                _fail(a, f"balls of radius {P['r']} around Omega' leave the box", DomainError)
        elif a.type == "continuity":
            if not 0 < P["delta"] <= 1:
                _fail(a, "delta must lie in (0, 1]")
            if min(P["separations"]) < hc:
                _fail(a, "pair separations must be at least one cell on the coarsest grid", ResolutionError)
        elif a.type == "w1q":
            if not grids[0].contains_ball(H.Ball(tuple(P["center"]), P["radius"])):
                _fail(a, "ball leaves the box", DomainError)
        elif a.type == "sharpness":
            k = len(grids) - 1
            d = P["base_separation"] * 2.0**-k
            if len(grids) < 3:
                _fail(a, "needs a trend over at least 3 grids")
            if d < 2 * hf:
                _fail(a, "final pair separation is below 2h", ResolutionError)
        elif a.type in ("bmo_vmo", "weak_holder"):
            if min(P["radii"]) < 2 * hf:
                _fail(a, "radii must be at least 2h on the finest grid", ResolutionError)
            for x in P["centres"]:
                if len(x) != n:
                    _fail(a, f"centre {x} has the wrong dimension")
        elif a.type == "hardy_littlewood":
            if min(P["radii"]) < 2 * hc:
                _fail(a, "radii must be at least 2h on the coarsest grid", ResolutionError)
        elif a.type == "potential_chain":
            if not 1 < P["p"] < n:
                _fail(a, f"p must lie in (1, {n})")
            if min(P["radii"]) < 4 * hf:
                _fail(a, "radii must be at least 4h", ResolutionError)
        elif a.type == "mapping":
            if not 1 <= P["q"] < n:
                _fail(a, f"the input exponent q must lie in [1, {n})")
            if len(grids) < 2:
                _fail(a, "needs at least 2 grids")
            for i in a.problems:
                if "a" not in sc.problems[i].tags:
                    _fail(a, f"problem {sc.problems[i].name!r} has no tag 'a'")
        elif a.type == "convergence":
            if len(grids) < 2:
                _fail(a, "needs at least 2 grids")
            if sc.problems[a.problems[0]].exact is None:
                _fail(a, "the problem declares no exact solution")
        if a.expect is not None and not isinstance(a.expect, str):
            _fail(a, "expect must be a verdict string")


# --------------------------------------------------------------------------
# running


def _value(src, grid):
    if isinstance(src, dict):
        fld = GridField.load(src["field"])
        if fld.grid != grid:
            raise ArgumentError(f"field {src['field']} does not live on {grid}")
        return fld
    return src


def build_problems(sc: Scenario):
    """Problem objects for every (problem, grid); runs the ellipticity gate."""
    out = {}
    for k, pd in enumerate(sc.problems):
        for cells in sc.grids:
            g = sc.grid(cells)
            if pd.manufactured is not None:
                out[k, cells] = manufacture(pd.manufactured, pd.operator, g)
            else:
                out[k, cells] = Problem(pd.operator, _value(pd.rhs, g), _value(pd.boundary, g), g)
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default)


class Runner:
    def __init__(self, sc: Scenario, problems, solutions):
        self.sc = sc
        self.problems = problems
        self.solutions = solutions

    def pairs(self, k, cells=None):
        ladder = self.sc.grids if cells is None else [cells]
        return [(self.solutions[k, c].u, self.problems[k, c].rhs) for c in ladder]

    def points(self, count):
        return H.sample_points(self.sc.grid(self.sc.grids[0]), int(count), seed=self.sc.seed)

    def run(self, a: AuditDoc):
        return getattr(self, "_" + a.type)(a, a.params)

    def _gradient_potential(self, a, P):
        suite = [[(self.solutions[k, c].u, self.problems[k, c].rhs) for k in a.problems] for c in self.sc.grids]
        rep = H.gradient_potential_audit(suite, P["p"], P["q"], self.points(P["points"]), P["r"])
        return rep, rep.verdict

    def _excess_decay(self, a, P):
        us = [u for u, _ in self.pairs(a.problems[0])]
        rep = H.excess_decay_audit(us, P["q"], [float(s) for s in P["sigmas"]], self.points(P["points"]),
                                   P["r"], P["share"])
        return rep, rep.verdict

    def _vmo_decay(self, a, P):
        rep = H.vmo_decay_audit(self.pairs(a.problems[0]), P["p"], P["q"], P["sigma"], self.points(P["points"]),
                                P["r"], P["fractions"])
        return rep, rep.verdict

    def _continuity(self, a, P):
        pairs = H.make_pairs(self.points(P["points"]), P["separations"], seed=self.sc.seed)
        rep = H.continuity_modulus_audit(self.pairs(a.problems[0]), P["p"], P["delta"], pairs, P["alpha"])
        return rep, rep.verdict

    def _w1q(self, a, P):
        rep = H.w1q_bound_audit(self.pairs(a.problems[0]), P["p"], P["q"], P["center"], P["radius"])
        return rep, rep.verdict

    def _sharpness(self, a, P):
        fin = [f for _, f in self.pairs(P["finite"])]
        bor = [f for _, f in self.pairs(P["borderline"])]
        tf = H.potential_term_trend(fin, P["p"], P["delta"], P["base_separation"])
        tb = H.potential_term_trend(bor, P["p"], P["delta"], P["base_separation"])
        ok, details = H.sharpness_signal(tf, tb)
        verdict = "signal" if ok else "no-signal"
        rep = H.EstimateAudit("sharpness", dict(P), [], 0.0, [{"finite": tf, "borderline": tb}],
                              verdict, details)
        return rep, verdict

    def _bmo_vmo(self, a, P):
        u, f = self.pairs(a.problems[0], self.sc.grids[-1])[0]
        rep = H.bmo_vmo_criteria_audit(u, f, P["p"], P["q"], P["radii"], P["centres"], P["sigma"])
        return rep, rep.verdict

    def _weak_holder(self, a, P):
        rows = []
        ok = True
        for _, f in self.pairs(a.problems[0]):
            good, rr = H.weak_holder_check(f, P["centres"], P["radii"], P["p"], P["tol"])
            ok &= good
            rows += [dict(row, run=str(f.grid.cells[0])) for row in rr]
        worst = max(row["ratio"] for row in rows)
        rep = AuditReport("weak-holder", len(rows), float(1 + P["tol"] - worst),
                          [row for row in rows if row["ratio"] > 1 + P["tol"]], self.sc.seed,
                          {"rows": rows, "tol": P["tol"]})
        return rep, "pass" if ok else "fail"

    def _hardy_littlewood(self, a, P):
        fields = [f for k in a.problems for _, f in self.pairs(k)]
        ok, info = H.hardy_littlewood_suite(fields, P["radii"], P["p"], P["stride"], P["tol"])
        margin = 1 + P["tol"] - max(info["worst_hl"], info["worst_mh"])
        rep = AuditReport("hardy-littlewood", info["balls"], float(margin), [] if ok else [info], self.sc.seed, info)
        return rep, "pass" if ok else "fail"

    def _potential_chain(self, a, P):
        f = self.pairs(a.problems[0], self.sc.grids[-1])[0][1]
        pts = [H.snap(f.grid, x) for x in self.points(P["points"])]
        rep = potential_chain_audit(f, P["p"], pts, P["radii"], sigma=P["sigma"], seed=self.sc.seed)
        return rep, "pass" if rep.passed else "fail"

    def _mapping(self, a, P):
        index = {self.sc.problems[k].tags["a"]: k for k in a.problems}

        def family(alpha, cells):
            k = index[alpha]
            return self.solutions[k, cells].u, self.problems[k, cells].rhs

        rep = H.mapping_property_audit(family, list(index), P["p"], P["q"], P["gamma"], self.sc.grids, P["s"])
        return rep, rep.verdict

    def _convergence(self, a, P):
        k = a.problems[0]
        exact = self.sc.problems[k].exact
        rows = [{"cells": c, "h": self.sc.grid(c).h, "error": max_error(self.solutions[k, c], exact)}
                for c in self.sc.grids]
        orders = []
        for lo, hi in zip(rows, rows[1:]):
            if lo["error"] > 1e-10 and hi["error"] > 1e-10:
                orders.append(float(np.log(lo["error"] / hi["error"]) / np.log(lo["h"] / hi["h"])))
        exact_hit = all(r["error"] <= 1e-10 for r in rows)
        ok = exact_hit or (orders and min(orders) >= P["order"])
        samples = [{"run": str(r["cells"]), "lhs": r["error"], "rhs": r["h"]} for r in rows]
        rep = H.EstimateAudit("solver-convergence", dict(P), samples, float(min(orders)) if orders else 0.0,
                              rows, "pass" if ok else "fail", {"orders": orders})
        return rep, rep.verdict

    def _ellipticity(self, a, P):
        op = self.sc.problems[a.problems[0]].operator
        rep = ellipticity_audit(op, op.ellipticity, samples=int(P["samples"]), seed=self.sc.seed)
        return rep, "pass" if rep.passed else "fail"


def status_of(verdict, expect):
    if expect is not None:
        if verdict != expect:
            return "fail"
        return "negative-control" if expect == "fail" else "pass"
    return "pass" if verdict in REACHED else "fail"


@dataclass
class RunOutcome:
    scenario: str
    verdicts: dict
    timings: dict
    out: str

    @property
    def ok(self):
        return all(v["status"] in ("pass", "negative-control") for v in self.verdicts.values())


def run_scenario(sc: Scenario, out=None, jobs=1, log=None) -> RunOutcome:
    """Validate, solve on the ladder, run the audits, write all artifacts.

    Nothing is written until validation and problem construction succeed.
    """
    log = log or (lambda msg: None)
    validate(sc)
    problems = build_problems(sc)
    out = out or sc.output or os.path.join("runs", sc.name)
    timings = {"solve": {}, "audits": {}}
    solutions = {}
    for (k, cells), prob in problems.items():
        t0 = time.perf_counter()
        solutions[k, cells] = solve(prob)
        timings["solve"][f"{sc.problems[k].name}@{cells}"] = time.perf_counter() - t0
        log(f"solved {sc.problems[k].name} on {cells}^{sc.dim}")

    os.makedirs(os.path.join(out, "solutions"), exist_ok=True)
    solves = {}
    for (k, cells), res in solutions.items():
        stem = os.path.join(out, "solutions", f"{sc.problems[k].name}_{cells}")
        res.save(stem + ".bin")
        res.history_csv(stem + "_residual.csv")
        solves[f"{sc.problems[k].name}@{cells}"] = res.summary()
    with open(os.path.join(out, "solves.json"), "w") as fh:
        fh.write(dumps(solves))

    runner = Runner(sc, problems, solutions)

    def work(a):
        t0 = time.perf_counter()
        rep, verdict = runner.run(a)
        return rep, verdict, time.perf_counter() - t0

    if jobs > 1 and len(sc.audits) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, sc.audits))
    else:
        results = [work(a) for a in sc.audits]

    os.makedirs(os.path.join(out, "audits"), exist_ok=True)
    verdicts = {}
    for a, (rep, verdict, dt) in zip(sc.audits, results):
        status = status_of(verdict, a.expect)
        verdicts[a.name] = {"type": a.type, "verdict": verdict, "status": status}
        timings["audits"][a.name] = dt
        doc = {"audit": a.name, "type": a.type, "seed": sc.seed, "grids": sc.grids,
               "problems": [sc.problems[k].name for k in a.problems], "expect": a.expect,
               "status": status, "report": rep.to_dict()}
        with open(os.path.join(out, "audits", f"{a.name}.json"), "w") as fh:
            fh.write(dumps(doc))
        if isinstance(rep, H.EstimateAudit):
            rep.to_csv(os.path.join(out, "audits", f"{a.name}.csv"))
        log(f"{a.name}: {verdict} ({status})")

    with open(os.path.join(out, "scenario.json"), "w") as fh:
        fh.write(dumps(sc.document))
    with open(os.path.join(out, "summary.json"), "w") as fh:
        fh.write(dumps({"scenario": sc.name, "seed": sc.seed, "verdicts": verdicts, "timings": timings}))
    return RunOutcome(sc.name, verdicts, timings, out)
