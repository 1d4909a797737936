"""Exact rational linear programming.

A small two-phase simplex over the rationals.  The tableau is kept in
integer form (fraction-free pivoting: every entry is the true rational
value times the current basis determinant), so pivots cost integer
multiplications and one exact division instead of gcd-heavy ``Fraction``
arithmetic.

Entering variables follow Dantzig's rule while the objective improves and
switch to Bland's rule for any run of degenerate pivots, which rules out
cycling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm
from typing import Hashable, Mapping

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_SENSES = ("<=", ">=", "==")


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        raise TypeError("floats are not accepted in exact LPs; pass int, Fraction or str")
    return Fraction(x)


@dataclass
class LPResult:
    status: str
    objective: Fraction | None = None
    values: dict = field(default_factory=dict)
    pivots: int = 0

    def __getitem__(self, name):
        return self.values.get(name, Fraction(0))


class LinearProgram:
    """Builder for ``max/min c.x  s.t.  rows, x >= 0`` with exact coefficients.

    Variables are identified by arbitrary hashable names.  ``free=True``
    variables are split internally into a positive and a negative part.
    """

    def __init__(self, maximize: bool = True):
        self.maximize = maximize
        self._vars: dict[Hashable, bool] = {}
        self._rows: list[tuple[dict, str, Fraction]] = []
        self._objective: dict = {}

    def add_var(self, name: Hashable, free: bool = False) -> Hashable:
        if name in self._vars:
            raise ValueError(f"duplicate variable {name!r}")
        self._vars[name] = free
        return name

    def has_var(self, name: Hashable) -> bool:
        return name in self._vars

    @property
    def variables(self) -> list:
        return list(self._vars)

    @property
    def rows(self) -> list[tuple[dict, str, Fraction]]:
        return list(self._rows)

    def add_constraint(self, coeffs: Mapping, sense: str, rhs=0) -> int:
        if sense not in _SENSES:
            raise ValueError(f"bad constraint sense {sense!r}")
        row = {}
        for name, a in coeffs.items():
            if name not in self._vars:
                raise KeyError(f"unknown variable {name!r}")
            a = as_fraction(a)
            if a:
                row[name] = row.get(name, 0) + a
        self._rows.append((row, sense, as_fraction(rhs)))
        return len(self._rows) - 1

    def set_objective(self, coeffs: Mapping) -> None:
        for name in coeffs:
            if name not in self._vars:
                raise KeyError(f"unknown variable {name!r}")
        self._objective = {k: as_fraction(v) for k, v in coeffs.items() if v}

    def residuals(self, values: Mapping) -> list[Fraction]:
        """Signed slack of each row under ``values`` (negative means violated)."""
        out = []
        for row, sense, rhs in self._rows:
            lhs = sum((a * as_fraction(values.get(n, 0)) for n, a in row.items()), Fraction(0))
            if sense == "<=":
                out.append(rhs - lhs)
            elif sense == ">=":
                out.append(lhs - rhs)
            else:
                out.append(-abs(lhs - rhs))
        return out

    def solve(self) -> LPResult:
        return _Simplex(self).run()


class _Simplex:
    def __init__(self, lp: LinearProgram):
        self.lp = lp
        # column layout: structural (free vars split), slacks, artificials, rhs
        cols: list[tuple[Hashable, int]] = []
        for name, free in lp._vars.items():
            cols.append((name, 1))
            if free:
                cols.append((name, -1))
        self.struct = cols
        n_struct = len(cols)
        col_of: dict = {}
        for idx, (name, sign) in enumerate(cols):
            col_of[(name, sign)] = idx

        rows = []
        for coeffs, sense, rhs in lp._rows:
            dense = {}
            for name, a in coeffs.items():
                dense[col_of[(name, 1)]] = a
                if lp._vars[name]:
                    dense[col_of[(name, -1)]] = -a
            if rhs < 0:
                dense = {k: -v for k, v in dense.items()}
                rhs = -rhs
                sense = {"<=": ">=", ">=": "<=", "==": "=="}[sense]
            rows.append((dense, sense, rhs))

        n_slack = sum(1 for _, s, _ in rows if s != "==")
        n_art = sum(1 for _, s, _ in rows if s != "<=")
        self.n_struct = n_struct
        self.first_art = n_struct + n_slack
        self.n_cols = n_struct + n_slack + n_art
        width = self.n_cols + 1

        tab = []
        basis = []
        slack = n_struct
        art = self.first_art
        for dense, sense, rhs in rows:
            den = lcm(rhs.denominator, *(v.denominator for v in dense.values())) if dense else rhs.denominator
            r = [0] * width
            for k, v in dense.items():
                r[k] = int(v * den)
            r[-1] = int(rhs * den)
            if sense == "<=":
                r[slack] = 1
                basis.append(slack)
                slack += 1
            elif sense == ">=":
                r[slack] = -1
                slack += 1
                r[art] = 1
                basis.append(art)
                art += 1
            else:
                r[art] = 1
                basis.append(art)
                art += 1
            tab.append(r)
        self.tab = tab
        self.basis = basis
        self.det = 1
        self.pivots = 0

    # -- integer pivoting -------------------------------------------------
    def _pivot(self, r: int, s: int, obj: list[int]) -> list[int]:
        tab, d = self.tab, self.det
        prow = tab[r]
        p = prow[s]
        nz = [j for j, v in enumerate(prow) if v]
        for i, row in enumerate(tab):
            if i == r:
                continue
            f = row[s]
            if f:
                for j in range(len(row)):
                    row[j] = row[j] * p
                for j in nz:
                    row[j] -= f * prow[j]
                for j in range(len(row)):
                    row[j] //= d
            else:
                for j in range(len(row)):
                    if row[j]:
                        row[j] = row[j] * p // d
        f = obj[s]
        if f:
            obj = [(obj[j] * p - f * prow[j]) // d for j in range(len(obj))]
        else:
            obj = [v * p // d if v else 0 for v in obj]
        self.det = p
        self.basis[r] = s
        self.pivots += 1
        if self.det < 0:
            for row in tab:
                for j in range(len(row)):
                    row[j] = -row[j]
            obj = [-v for v in obj]
            self.det = -self.det
        return obj

    def _optimize(self, obj: list[int], allowed: int) -> str:
        """Maximize; ``obj`` holds D times the reduced-cost row (entries -c_j)."""
        tab = self.tab
        bland = False
        while True:
            if bland:
                s = next((j for j in range(allowed) if obj[j] < 0), None)
            else:
                s = None
                best = 0
                for j in range(allowed):
                    if obj[j] < best:
                        best, s = obj[j], j
            if s is None:
                self.obj = obj
                return OPTIMAL
            r = None
            for i, row in enumerate(tab):
                a = row[s]
                if a > 0:
                    if r is None:
                        r = i
                        continue
                    # compare row[-1]/a with tab[r][-1]/tab[r][s]
                    lhs = row[-1] * tab[r][s]
                    rhs = tab[r][-1] * a
                    if lhs < rhs or (lhs == rhs and self.basis[i] < self.basis[r]):
                        r = i
            if r is None:
                self.obj = obj
                return UNBOUNDED
            degenerate = tab[r][-1] == 0
            obj = self._pivot(r, s, obj)
            bland = degenerate

    def run(self) -> LPResult:
        lp = self.lp
        width = self.n_cols + 1
        # phase 1: maximize -sum(artificials)
        obj = [0] * width
        for j in range(self.first_art, self.n_cols):
            obj[j] = 1
        for i, b in enumerate(self.basis):
            if b >= self.first_art:
                row = self.tab[i]
                obj = [o - v for o, v in zip(obj, row)]
        if any(b >= self.first_art for b in self.basis):
            self._optimize(obj, self.n_cols)
            obj = self.obj
            if obj[-1] < 0:
                return LPResult(INFEASIBLE, pivots=self.pivots)
            self._expel_artificials(obj)

        # phase 2: drop artificial columns
        keep = self.first_art
        for row in self.tab:
            del row[keep:-1]
        obj_scale = lcm(*(v.denominator for v in lp._objective.values())) if lp._objective else 1
        sign = 1 if lp.maximize else -1
        cvec = [0] * (keep + 1)
        for j, (name, s) in enumerate(self.struct):
            c = lp._objective.get(name)
            if c:
                cvec[j] = int(c * obj_scale) * s * sign
        d = self.det
        obj = [-c * d for c in cvec]
        for i, b in enumerate(self.basis):
            cb = cvec[b]
            if cb:
                row = self.tab[i]
                obj = [o + cb * v for o, v in zip(obj, row)]
        status = self._optimize(obj, keep)
        if status == UNBOUNDED:
            return LPResult(UNBOUNDED, pivots=self.pivots)
        obj = self.obj
        values: dict = {name: Fraction(0) for name in lp._vars}
        for i, b in enumerate(self.basis):
            if b < self.n_struct:
                name, s = self.struct[b]
                values[name] += s * Fraction(self.tab[i][-1], self.det)
        objective = Fraction(obj[-1], self.det * obj_scale) * sign
        return LPResult(OPTIMAL, objective, values, self.pivots)

    def _expel_artificials(self, obj: list[int]) -> None:
        i = 0
        while i < len(self.tab):
            if self.basis[i] >= self.first_art:
                row = self.tab[i]
                s = next((j for j in range(self.first_art) if row[j]), None)
                if s is None:
                    # redundant row
                    del self.tab[i]
                    del self.basis[i]
                    continue
                obj = self._pivot(i, s, obj)
            i += 1
