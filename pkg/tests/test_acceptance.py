"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the criterion lines are
printed even when output capture is on.
"""
import filecmp
import json
import time

import numpy as np
import pytest

from fnpotential.cli import main
from fnpotential.expr import Expression
from fnpotential.grid import Grid, GridField, unit_ball_volume
from fnpotential.harness import gradient_potential_audit, hardy_littlewood_suite, sample_points, snap, vmo_alpha, witness_expression
from fnpotential.potentials import modified_riesz, potential_chain_audit, wolff_potential
from fnpotential.pucci import EllipticityPair, OperatorSpec, pucci_minus, pucci_plus, random_symmetric
from fnpotential.scenarios import build_problems, builtin_document, builtin_names, parse_scenario
from fnpotential.solver import Problem, convergence_study, manufacture, max_error, solve

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number, ok, text):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {text}")
        assert ok, text
    return emit


def run_all(root):
    codes = {}
    for name in builtin_names():
        codes[name] = main(["run", name, "--out", str(root / name), "--jobs", "1"])
    return codes


@pytest.fixture(scope="session")
def builtin_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("builtin")
    return root, run_all(root)


def audit(root, scenario, name):
    return json.loads((root / scenario / "audits" / f"{name}.json").read_text())


def test_crit01_pucci_kernels(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    X = random_symmetric(rng, 3, 1000)
    Y = random_symmetric(rng, 3, 1000)
    lam, Lam = 0.5, 2.0
    e = EllipticityPair(lam, Lam)
    t = rng.uniform(0.0, 10.0, 1000)
    errs = {
        "order": float(np.max(pucci_minus(X, e) - pucci_plus(X, e))),
        "homogeneity": float(np.max(np.abs(pucci_plus(t[:, None, None] * X, e) - t * pucci_plus(X, e))
                                    / (1 + np.abs(t * pucci_plus(X, e))))),
        "odd": float(np.max(np.abs(pucci_plus(-Y, e) + pucci_minus(Y, e)))),
        "trace": float(np.max(np.abs(pucci_plus(X, EllipticityPair(1.5, 1.5)) - 1.5 * np.trace(X, axis1=1, axis2=2)))),
    }
    elapsed = time.perf_counter() - t0
    ok = errs["order"] <= 1e-10 and max(errs["homogeneity"], errs["odd"], errs["trace"]) <= 1e-10 and elapsed < 1.0
    report(1, ok, f"Pucci kernels on 10^3 matrices: {errs}, {elapsed:.3f}s")


def test_crit02_wolff_identity(report):
    p = 1.5
    wn = unit_ball_volume(2)
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        g = Grid.square(128)
        f = GridField(g, rng.standard_normal(g.cells))
        for x in sample_points(g, 3, seed=seed):
            x = snap(g, x)
            for r in (0.125, 0.25, 0.5):
                lhs = modified_riesz(f, x, r, p, normalization="volume").value
                rhs = wn ** (-1 / p) * wolff_potential(f.power(p), x, r, p / (p + 1), p + 1).value
                worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    elapsed = time.perf_counter() - t0
    report(2, worst <= 1e-9 and elapsed < 30, f"Wolff identity, 20 fields x 3 points x 3 radii at 128^2: "
                                               f"max rel gap {worst:.2e}, {elapsed:.1f}s")


def test_crit03_potential_chain(report):
    fields = []
    for name in builtin_names():
        sc = parse_scenario(builtin_document(name), grids=[128])
        fields += [(f"{name}/{k}", prob.rhs) for (k, _), prob in build_problems(sc).items()]
    g = Grid.square(128)
    for kind in ("lorentz-finite", "lorentz-borderline", "weak"):
        fields.append((kind, GridField.from_function(g, Expression(witness_expression(kind), 2))))
    violations, checked = [], 0
    for label, f in fields:
        pts = [snap(f.grid, x) for x in sample_points(f.grid, 3, seed=0)]
        rep = potential_chain_audit(f, 1.5, pts, [0.125, 0.25, 0.5])
        checked += rep.samples
        violations += [(label, v["check"]) for v in rep.violations]
    report(3, not violations, f"potential chain (a), (b), rearrangement and dyadic checks on {len(fields)} fields, "
                              f"{checked} samples: {len(violations)} violations")


def test_crit04_hardy_littlewood(report):
    fields = []
    for kind in ("lorentz-finite", "lorentz-borderline", "weak"):
        for cells in (64, 128, 256):
            g = Grid.square(cells)
            fields.append(GridField.from_function(g, Expression(witness_expression(kind), 2)))
    ok, info = hardy_littlewood_suite(fields, [0.0625, 0.125, 0.25, 0.5], 1.5)
    report(4, ok, f"Hardy-Littlewood worst {info['worst_hl']:.4f}, Marcinkiewicz-Hoelder worst "
                  f"{info['worst_mh']:.4f} over {info['balls']} balls (limit 1.05)")


def test_crit05_solver(report, bellman):
    t0 = time.perf_counter()
    quad = max_error(solve(Problem(OperatorSpec.trace(np.eye(2).tolist(), EllipticityPair(1.0, 1.0)), 4.0,
                                   "x1**2+x2**2", Grid.square(64))), "x1**2+x2**2")
    study = convergence_study([64, 128, 256], lambda c: (lambda p: (p, p.exact))(
        manufacture("sin(x1)*cos(x2)", bellman, Grid.square(c))))
    g = Grid.square(256)
    lo = solve(Problem(bellman, "sin(x1)+exp(-10*(x1**2+x2**2))", "x1*x2 - 0.1", g)).u.values
    hi = solve(Problem(bellman, "sin(x1)", "x1*x2", g)).u.values
    gap = float((lo - hi).max())
    elapsed = time.perf_counter() - t0
    ok = quad <= 1e-8 and study["order"] >= 0.9 and gap <= 1e-9 and elapsed < 180
    report(5, ok, f"solver: quadratic error {quad:.1e}, Bellman order {study['order']:.3f}, "
                  f"comparison max(u1-u2) {gap:.1e}, {elapsed:.1f}s")


def test_crit06_gradient_potential(report, builtin_runs):
    root, codes = builtin_runs
    poisson = audit(root, "poisson-radial", "gradient_potential")
    bell = audit(root, "bellman-manufactured", "gradient_potential")
    sols = []
    for cells in (64, 128):
        g = Grid.square(cells)
        sols.append((GridField.from_function(g, Expression("0.5+2*x1-x2", 2)), GridField.constant(g, 0.0)))
    affine = gradient_potential_audit(sols, 1.5, 3, sample_points(sols[0][0].grid, 8), 0.5)
    cs = [t["c"] for t in affine.trend]
    ok = poisson["status"] == "pass" and bell["status"] == "pass" and all(abs(c - 1.0) <= 1e-12 for c in cs)
    report(6, ok, "gradient potential c trend: poisson " +
           str([round(t["c"], 3) for t in poisson["report"]["trend"]]) + ", bellman suite " +
           str([round(t["c"], 3) for t in bell["report"]["trend"]]) + f", affine max |c-1| {max(abs(c - 1) for c in cs):.1e}")


def test_crit07_excess_decay(report, builtin_runs):
    root, _ = builtin_runs
    reps = [audit(root, "excess-decay-search", f"excess_decay_{k}") for k in range(3)]
    sig = [[t["sigma"] for t in r["report"]["trend"]] for r in reps]
    ok = all(r["status"] == "pass" for r in reps)
    report(7, ok, f"excess decay: best sigma per grid {sig}, some sigma <= 0.2 at >= 95% of centres")


def test_crit08_vmo_continuity_sharpness(report, builtin_runs):
    root, _ = builtin_runs
    vmo = audit(root, "poisson-radial", "vmo_decay")
    cont = audit(root, "poisson-radial", "continuity")
    sharp = audit(root, "borderline-lorentz-witness", "sharpness")
    ok = (vmo_alpha(1 / 3) == 1.0 and vmo["status"] == "pass" and cont["status"] == "pass"
          and sharp["report"]["verdict"] == "signal")
    report(8, ok, "alpha(1/3) = 1.0, vmo c " + str([round(t["c"], 3) for t in vmo["report"]["trend"]]) +
           ", continuity c " + str([round(t["c"], 3) for t in cont["report"]["trend"]]) +
           f", sharpness {sharp['report']['verdict']}")


def test_crit09_bmo_classification(report, builtin_runs):
    root, _ = builtin_runs
    const = audit(root, "bmo-witness", "bmo_vmo_constant")
    weak = audit(root, "bmo-witness", "bmo_vmo_weak")
    holder = audit(root, "bmo-witness", "weak_holder")
    worst = max(r["ratio"] for r in holder["report"]["meta"]["rows"])
    ok = (const["report"]["verdict"] == "VMO" and weak["report"]["verdict"] == "BMO-not-VMO"
          and holder["status"] == "pass" and worst <= 1.05)
    report(9, ok, f"f const -> {const['report']['verdict']}, |x|^-1 -> {weak['report']['verdict']}, "
                  f"weak-Hoelder worst ratio {worst:.4f}")


def test_crit10_determinism(report, builtin_runs, tmp_path):
    root, codes = builtin_runs
    again = run_all(tmp_path)
    diffs = []
    for name in builtin_names():
        for path in sorted((root / name).rglob("*")):
            if path.is_dir() or path.name == "summary.json":
                continue
            other = tmp_path / name / path.relative_to(root / name)
            if not other.exists() or not filecmp.cmp(path, other, shallow=False):
                diffs.append(str(path.relative_to(root)))
    ok = not diffs and codes == again and all(c == 0 for c in codes.values())
    report(10, ok, f"re-run of {len(codes)} built-ins: exit codes {sorted(set(codes.values()))}, "
                   f"{len(diffs)} differing files")
