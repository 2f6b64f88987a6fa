"""Solve conic program JSON files with cvxpy, independently of the Rust
solver. Binaries are enumerated exhaustively. Every support is tried with
tight Clarabel, default Clarabel and CVXOPT; the first certified optimum is
kept and any other certified optimum must agree with it.

usage: python3 tools/reference_objectives.py DIR > DIR/objectives.json
"""

import itertools
import warnings
import json
import pathlib
import sys

import cvxpy as cp


SOLVERS = [
    (cp.CLARABEL, dict(tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)),
    (cp.CLARABEL, dict(tol_gap_abs=1e-8, tol_gap_rel=1e-8, tol_feas=1e-8)),
    (cp.CVXOPT, dict(abstol=1e-10, reltol=1e-10, feastol=1e-10)),
]
AGREEMENT = 1e-6


def pinned_heads(ir, bins, z):
    """Variables bounded above by zero through a single-variable row once
    the binaries are fixed."""
    out = set()
    for r in ir["inequalities"]:
        free = [(n, c) for n, c in r["terms"] if n not in bins]
        rhs = r["rhs"] - sum(c * z[bins[n]] for n, c in r["terms"] if n in bins)
        if len(free) == 1 and free[0][1] > 0 and rhs <= 0.0:
            out.add(free[0][0])
    return out


def solve(ir):
    names = {n: i for i, n in enumerate(ir["variables"])}
    bins = {n: i for i, n in enumerate(ir["binaries"])}
    best = None
    for z in itertools.product([0.0, 1.0], repeat=len(bins)):
        x = cp.Variable(len(names))

        def term(name, coef):
            return coef * x[names[name]] if name in names else coef * z[bins[name]]

        def lin(terms):
            return sum((term(n, c) for n, c in terms), start=cp.Constant(0.0))

        pinned = pinned_heads(ir, bins, z)
        cons = [lin(r["terms"]) == r["rhs"] for r in ir["equalities"]]
        cons += [lin(r["terms"]) <= r["rhs"] for r in ir["inequalities"]]
        for cone in ir["soc_cones"]:
            head = x[names[cone["head"]]]
            tail = [lin(a["terms"]) + a["constant"] for a in cone["tail"]]
            if cone["head"] in pinned:
                # A cone whose head is capped at zero has no interior;
                # state it as the equivalent equalities instead.
                cons += [head == 0] + [t == 0 for t in tail]
            else:
                cons.append(cp.SOC(head, cp.hstack(tail)))
        obj = lin(ir["objective"]["terms"]) + ir["objective"]["constant"]
        values = []
        for solver, opts in SOLVERS:
            prob = cp.Problem(cp.Minimize(obj), cons)
            try:
                prob.solve(solver=solver, **opts)
            except cp.SolverError:
                values.append(None)
                continue
            values.append(prob.value if prob.status == cp.OPTIMAL else None)
        found = [v for v in values if v is not None]
        if not found:
            continue
        v = found[0]
        if any(abs(w - v) > AGREEMENT * abs(v) + 1e-9 for w in found[1:]):
            raise SystemExit(f"solvers disagree on support {z}: {values}")
        if best is None or v < best:
            best = v
    return best


def main():
    warnings.simplefilter("ignore")
    root = pathlib.Path(sys.argv[1])
    out = {}
    for path in sorted(root.glob("*_t*.json")):
        out[path.name] = solve(json.loads(path.read_text()))
    json.dump(out, sys.stdout, indent=2)
    print()


if __name__ == "__main__":
    main()
