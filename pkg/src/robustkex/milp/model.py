"""Backend-neutral mixed-integer linear program container."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy import sparse

BINARY = "binary"
CONTINUOUS = "continuous"

LE, EQ, GE = "<=", "==", ">="
_RELATIONS = {LE: LE, EQ: EQ, GE: GE, "=": EQ}


class ModelError(ValueError):
    """Raised for invalid model construction (duplicate names, unknown variables)."""


@dataclass(frozen=True)
class Var:
    """Handle to a declared variable; supports linear arithmetic."""

    index: int
    name: str

    def _expr(self) -> "LinExpr":
        return LinExpr({self.index: 1.0})

    def __add__(self, other):
        return self._expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return (-1.0) * self._expr() + other

    def __mul__(self, coef):
        return self._expr() * coef

    __rmul__ = __mul__

    def __neg__(self):
        return self._expr() * -1.0


class LinExpr:
    """Sparse linear expression ``sum(coef * var) + constant``."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Optional[Mapping[int, float]] = None, constant: float = 0.0):
        self.terms: Dict[int, float] = dict(terms or {})
        self.constant = float(constant)

    @staticmethod
    def of(value: "ExprLike") -> "LinExpr":
        if isinstance(value, LinExpr):
            return value
        if isinstance(value, Var):
            return value._expr()
        return LinExpr(constant=float(value))

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.constant)

    def add_term(self, var: Var, coef: float) -> "LinExpr":
        self.terms[var.index] = self.terms.get(var.index, 0.0) + coef
        return self

    def __add__(self, other):
        out = self.copy()
        o = LinExpr.of(other)
        for k, v in o.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        out.constant += o.constant
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + LinExpr.of(other) * -1.0

    def __rsub__(self, other):
        return LinExpr.of(other) - self

    def __mul__(self, coef):
        if isinstance(coef, (Var, LinExpr)):
            raise TypeError("products of variables are not linear")
        c = float(coef)
        return LinExpr({k: v * c for k, v in self.terms.items()}, self.constant * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __repr__(self) -> str:
        return f"LinExpr({self.terms!r}, {self.constant!r})"


ExprLike = Union[LinExpr, Var, float, int]


def quicksum(items: Iterable[ExprLike]) -> LinExpr:
    out = LinExpr()
    for it in items:
        if isinstance(it, Var):
            out.terms[it.index] = out.terms.get(it.index, 0.0) + 1.0
        elif isinstance(it, LinExpr):
            for k, v in it.terms.items():
                out.terms[k] = out.terms.get(k, 0.0) + v
            out.constant += it.constant
        else:
            out.constant += float(it)
    return out


@dataclass
class VarSpec:
    name: str
    kind: str
    lb: float
    ub: float


@dataclass
class Constraint:
    name: str
    terms: Dict[int, float]
    relation: str
    rhs: float


@dataclass
class MilpModel:
    """Variables, linear constraints and a linear objective.

    Constraints store their expression with the constant folded into ``rhs``.
    """

    name: str = "model"
    variables: List[VarSpec] = field(default_factory=list)
    constraints: List[Constraint] = field(default_factory=list)
    objective: Dict[int, float] = field(default_factory=dict)
    objective_constant: float = 0.0
    sense: str = "max"
    _var_index: Dict[str, int] = field(default_factory=dict, repr=False)
    _con_index: Dict[str, int] = field(default_factory=dict, repr=False)

    # -- builders -----------------------------------------------------------

    def add_variable(self, name: str, kind: str = CONTINUOUS,
                     lb: float = 0.0, ub: float = np.inf) -> Var:
        if name in self._var_index:
            raise ModelError(f"duplicate variable name {name!r}")
        if kind not in (BINARY, CONTINUOUS):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lb, ub = max(0.0, lb), min(1.0, ub)
        if lb > ub:
            raise ModelError(f"variable {name!r} has lb {lb} > ub {ub}")
        idx = len(self.variables)
        self.variables.append(VarSpec(name, kind, float(lb), float(ub)))
        self._var_index[name] = idx
        return Var(idx, name)

    def add_binary(self, name: str) -> Var:
        return self.add_variable(name, BINARY, 0.0, 1.0)

    def var(self, name: str) -> Var:
        try:
            return Var(self._var_index[name], name)
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def has_var(self, name: str) -> bool:
        return name in self._var_index

    def _check_expr(self, expr: LinExpr, where: str) -> None:
        n = len(self.variables)
        for k in expr.terms:
            if not (0 <= k < n):
                raise ModelError(f"{where} references undeclared variable index {k}")

    def add_constraint(self, lhs: ExprLike, relation: str, rhs: ExprLike = 0.0,
                       name: Optional[str] = None) -> Constraint:
        """Add ``lhs <relation> rhs``; both sides may be expressions."""
        if relation not in _RELATIONS:
            raise ModelError(f"unknown relation {relation!r}")
        relation = _RELATIONS[relation]
        expr = LinExpr.of(lhs) - LinExpr.of(rhs)
        self._check_expr(expr, "constraint")
        if name is None:
            name = f"c{len(self.constraints)}"
        if name in self._con_index:
            raise ModelError(f"duplicate constraint name {name!r}")
        terms = {k: v for k, v in expr.terms.items() if v != 0.0}
        con = Constraint(name, terms, relation, -expr.constant)
        self._con_index[name] = len(self.constraints)
        self.constraints.append(con)
        return con

    def set_objective(self, expr: ExprLike, sense: str = "max") -> None:
        if sense not in ("max", "min"):
            raise ModelError(f"unknown sense {sense!r}")
        e = LinExpr.of(expr)
        self._check_expr(e, "objective")
        self.objective = {k: v for k, v in e.terms.items() if v != 0.0}
        self.objective_constant = e.constant
        self.sense = sense

    def constraint(self, name: str) -> Constraint:
        return self.constraints[self._con_index[name]]

    # -- views ----------------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    def binary_indices(self) -> np.ndarray:
        return np.array([i for i, v in enumerate(self.variables) if v.kind == BINARY], dtype=int)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lb = np.array([v.lb for v in self.variables], dtype=float)
        ub = np.array([v.ub for v in self.variables], dtype=float)
        return lb, ub

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for k, v in self.objective.items():
            c[k] = v
        return c

    def evaluate(self, values: np.ndarray) -> float:
        return float(self.objective_vector() @ values) + self.objective_constant

    def matrix_form(self) -> "MatrixForm":
        """Rows split into ``A_ub x <= b_ub`` and ``A_eq x == b_eq`` (GE rows negated)."""
        ub_rows, ub_cols, ub_vals, b_ub, ub_map = [], [], [], [], []
        eq_rows, eq_cols, eq_vals, b_eq, eq_map = [], [], [], [], []
        for ci, con in enumerate(self.constraints):
            if con.relation == EQ:
                r = len(b_eq)
                for k, v in con.terms.items():
                    eq_rows.append(r); eq_cols.append(k); eq_vals.append(v)
                b_eq.append(con.rhs)
                eq_map.append(ci)
            else:
                sign = 1.0 if con.relation == LE else -1.0
                r = len(b_ub)
                for k, v in con.terms.items():
                    ub_rows.append(r); ub_cols.append(k); ub_vals.append(sign * v)
                b_ub.append(sign * con.rhs)
                ub_map.append((ci, sign))
        n = self.num_vars
        a_ub = sparse.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(len(b_ub), n))
        a_eq = sparse.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(len(b_eq), n))
        return MatrixForm(a_ub, np.array(b_ub, dtype=float), ub_map,
                          a_eq, np.array(b_eq, dtype=float), eq_map)

    def check_feasible(self, values: np.ndarray, tol: float = 1e-6) -> List[str]:
        """Names of violated constraints, bounds and integrality requirements."""
        bad = []
        for i, v in enumerate(self.variables):
            x = values[i]
            if x < v.lb - tol or x > v.ub + tol:
                bad.append(f"bound:{v.name}")
            if v.kind == BINARY and min(abs(x), abs(x - 1.0)) > tol:
                bad.append(f"integrality:{v.name}")
        for con in self.constraints:
            lhs = sum(c * values[k] for k, c in con.terms.items())
            if con.relation == LE and lhs > con.rhs + tol:
                bad.append(con.name)
            elif con.relation == GE and lhs < con.rhs - tol:
                bad.append(con.name)
            elif con.relation == EQ and abs(lhs - con.rhs) > tol:
                bad.append(con.name)
        return bad

    def to_lp_format(self) -> str:
        """CPLEX-LP style text dump, for debugging."""

        def fmt(terms: Mapping[int, float]) -> str:
            parts = []
            for k in sorted(terms):
                c = terms[k]
                sign = "-" if c < 0 else "+"
                parts.append(f"{sign} {abs(c):.12g} {self.variables[k].name}")
            s = " ".join(parts) if parts else "0"
            return s[2:] if s.startswith("+ ") else s

        lines = ["\\ model " + self.name, "Maximize" if self.sense == "max" else "Minimize"]
        obj = fmt(self.objective)
        if self.objective_constant:
            obj += f" + {self.objective_constant:.12g} __const"
        lines.append(f" obj: {obj}")
        lines.append("Subject To")
        rel = {LE: "<=", GE: ">=", EQ: "="}
        for con in self.constraints:
            lines.append(f" {con.name}: {fmt(con.terms)} {rel[con.relation]} {con.rhs:.12g}")
        lines.append("Bounds")
        for v in self.variables:
            if v.kind == BINARY:
                continue
            ub = "+inf" if np.isinf(v.ub) else f"{v.ub:.12g}"
            lb = "-inf" if np.isinf(v.lb) else f"{v.lb:.12g}"
            lines.append(f" {lb} <= {v.name} <= {ub}")
        if self.objective_constant:
            lines.append(" __const = 1")
        bins = [v.name for v in self.variables if v.kind == BINARY]
        if bins:
            lines.append("Binary")
            lines.extend(f" {b}" for b in bins)
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class MatrixForm:
    a_ub: sparse.csr_matrix
    b_ub: np.ndarray
    ub_map: List[Tuple[int, float]]
    a_eq: sparse.csr_matrix
    b_eq: np.ndarray
    eq_map: List[int]
