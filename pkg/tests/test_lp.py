import itertools
import random
from fractions import Fraction as F

import pytest

from miabp.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram


def test_textbook_maximum():
    lp = LinearProgram(maximize=True)
    lp.add_var("x")
    lp.add_var("y")
    lp.add_constraint({"x": 1, "y": 2}, "<=", 4)
    lp.add_constraint({"x": 3, "y": 1}, "<=", 6)
    lp.set_objective({"x": 1, "y": 1})
    res = lp.solve()
    assert res.status == OPTIMAL
    assert (res["x"], res["y"], res.objective) == (F(8, 5), F(6, 5), F(14, 5))


def test_infeasible_and_unbounded():
    lp = LinearProgram()
    lp.add_var("x")
    lp.add_constraint({"x": 1}, ">=", 2)
    lp.add_constraint({"x": 1}, "<=", 1)
    assert lp.solve().status == INFEASIBLE

    lp = LinearProgram(maximize=True)
    lp.add_var("x")
    lp.add_var("y")
    lp.add_constraint({"x": 1, "y": -1}, "<=", 1)
    lp.set_objective({"x": 1})
    assert lp.solve().status == UNBOUNDED


def test_free_variable_and_equality():
    lp = LinearProgram(maximize=False)
    lp.add_var("z", free=True)
    lp.add_var("x")
    lp.add_constraint({"z": 1, "x": 1}, "==", -3)
    lp.set_objective({"x": 1})
    res = lp.solve()
    assert res.status == OPTIMAL and res.objective == 0 and res["z"] == -3


def test_beale_cycling_example_terminates():
    # classic instance on which Dantzig's rule with naive tie-breaking cycles
    lp = LinearProgram(maximize=False)
    for v in "abcd":
        lp.add_var(v)
    lp.add_constraint({"a": F(1, 4), "b": -60, "c": F(-1, 25), "d": 9}, "<=", 0)
    lp.add_constraint({"a": F(1, 2), "b": -90, "c": F(-1, 50), "d": 3}, "<=", 0)
    lp.add_constraint({"c": 1}, "<=", 1)
    lp.set_objective({"a": F(-3, 4), "b": 150, "c": F(-1, 50), "d": 6})
    res = lp.solve()
    assert res.status == OPTIMAL and res.objective == F(-1, 20)


def test_floats_rejected():
    lp = LinearProgram()
    lp.add_var("x")
    with pytest.raises(TypeError):
        lp.add_constraint({"x": 0.5}, "<=", 1)


def _solve_2x2(a, b):
    det = a[0][0] * a[1][1] - a[0][1] * a[1][0]
    if det == 0:
        return None
    return (F(b[0] * a[1][1] - b[1] * a[0][1], det), F(a[0][0] * b[1] - a[1][0] * b[0], det))


def _vertex_oracle(rows, c, maximize):
    """Best objective over vertices of a bounded 2-D polygon {x >= 0, rows}."""
    lines = [(r, rhs) for r, rhs in rows] + [((1, 0), 0), ((0, 1), 0)]
    best = None
    for (r1, b1), (r2, b2) in itertools.combinations(lines, 2):
        p = _solve_2x2((r1, r2), (b1, b2))
        if p is None or min(p) < 0 or any(r[0] * p[0] + r[1] * p[1] > rhs for r, rhs in rows):
            continue
        v = c[0] * p[0] + c[1] * p[1]
        if best is None or (v > best if maximize else v < best):
            best = v
    return best


def test_matches_vertex_enumeration_on_bounded_polygons():
    rng = random.Random(7)
    for _ in range(150):
        rows = [((rng.randint(0, 5), rng.randint(0, 5)), rng.randint(0, 12)) for _ in range(rng.randint(1, 4))]
        rows.append(((1, 1), rng.randint(1, 10)))  # keeps the polygon bounded
        c = (rng.randint(-4, 4), rng.randint(-4, 4))
        maximize = rng.random() < 0.5
        lp = LinearProgram(maximize=maximize)
        lp.add_var(0)
        lp.add_var(1)
        for r, rhs in rows:
            lp.add_constraint({0: r[0], 1: r[1]}, "<=", rhs)
        lp.set_objective({0: c[0], 1: c[1]})
        res = lp.solve()
        assert res.status == OPTIMAL
        assert res.objective == _vertex_oracle(rows, c, maximize)


def _scipy_status(linprog, c, kw):
    res = linprog(c, **kw, method="highs")
    if res.status == 2:
        # "infeasible or unbounded": settle it with a zero objective
        probe = linprog([0] * len(c), **kw, method="highs")
        return ("unbounded" if probe.status == 0 else "infeasible"), res
    return {0: "optimal", 2: "infeasible", 3: "unbounded"}[res.status], res


def test_matches_scipy_on_random_programs():
    linprog = pytest.importorskip("scipy.optimize").linprog
    rng = random.Random(1)
    for trial in range(300):
        n, m = rng.randint(1, 6), rng.randint(1, 6)
        lp = LinearProgram(maximize=rng.random() < 0.5)
        free = [rng.random() < 0.2 for _ in range(n)]
        for j in range(n):
            lp.add_var(j, free=free[j])
        a_ub, b_ub, a_eq, b_eq = [], [], [], []
        for _ in range(m):
            row = [rng.randint(-3, 3) for _ in range(n)]
            sense = rng.choice(["<=", ">=", "=="]) if rng.random() < 0.3 else "<="
            rhs = rng.randint(-4, 6)
            lp.add_constraint(dict(enumerate(row)), sense, rhs)
            if sense == "<=":
                a_ub.append(row), b_ub.append(rhs)
            elif sense == ">=":
                a_ub.append([-x for x in row]), b_ub.append(-rhs)
            else:
                a_eq.append(row), b_eq.append(rhs)
        c = [rng.randint(-3, 3) for _ in range(n)]
        lp.set_objective(dict(enumerate(c)))
        res = lp.solve()
        sign = -1 if lp.maximize else 1
        kw = dict(A_ub=a_ub or None, b_ub=b_ub or None, A_eq=a_eq or None, b_eq=b_eq or None,
                  bounds=[(None, None) if f else (0, None) for f in free])
        status, ref = _scipy_status(linprog, [sign * x for x in c], kw)
        assert res.status == status, trial
        if status == OPTIMAL:
            assert abs(sign * ref.fun - float(res.objective)) < 1e-7, trial
            assert min(lp.residuals(res.values)) >= 0
