"""Sparse multivariate polynomials over a fixed, named variable space.

Monomials are exponent tuples aligned with the owning :class:`VariableSpace`
(time variable first when present, then states, then controls).  Terms are
kept in a plain dict and every operation returns a new polynomial.
"""

from __future__ import annotations

import itertools
import math
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DROP_TOL = 1e-14

Monomial = tuple  # exponent tuple, one entry per variable of the space


class VariableSpace:
    """Ordered collection of variable names ``(t, x_1..x_n, u_1..u_m)``."""

    def __init__(self, state_vars: Sequence[str], control_vars: Sequence[str],
                 time_var: str | None = None):
        state_vars = tuple(state_vars)
        control_vars = tuple(control_vars)
        if not state_vars or not control_vars:
            raise ValueError("need at least one state and one control variable")
        names = ((time_var,) if time_var else ()) + state_vars + control_vars
        if len(set(names)) != len(names):
            raise ValueError(f"variable names must be distinct: {names}")
        self.time_var = time_var
        self.state_vars = state_vars
        self.control_vars = control_vars
        self.names = names
        self._index = {v: i for i, v in enumerate(names)}

    @classmethod
    def standard(cls, n: int, m: int, time: bool = False) -> "VariableSpace":
        return cls([f"x{i + 1}" for i in range(n)], [f"u{i + 1}" for i in range(m)],
                   "t" if time else None)

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def n(self) -> int:
        return len(self.state_vars)

    @property
    def m(self) -> int:
        return len(self.control_vars)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown variable {name!r} (space has {self.names})") from None

    def indices(self, names: Iterable[str]) -> list[int]:
        return [self.index(v) for v in names]

    def __contains__(self, name) -> bool:
        return name in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, VariableSpace) and (
            self.names == other.names and self.time_var == other.time_var
            and self.state_vars == other.state_vars)

    def __hash__(self) -> int:
        return hash((self.names, self.time_var, self.state_vars))

    def __repr__(self) -> str:
        return (f"VariableSpace(state={list(self.state_vars)}, control={list(self.control_vars)}, "
                f"time={self.time_var!r})")

    def to_dict(self) -> dict:
        return {"time_var": self.time_var, "state_vars": list(self.state_vars),
                "control_vars": list(self.control_vars)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "VariableSpace":
        return cls(d["state_vars"], d["control_vars"], d.get("time_var"))


def grlex_key(mono: Monomial):
    """Sort key: total degree first, then lexicographic with the first variable largest."""
    return (sum(mono), tuple(-e for e in mono))


def monomials_up_to(nvars: int, degree: int) -> list[tuple]:
    """All exponent tuples of length ``nvars`` with total degree <= degree, in grlex order."""
    out = []
    for d in range(degree + 1):
        # combinations_with_replacement on variable indices enumerates lex order
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    out.sort(key=grlex_key)
    return out


@dataclass(frozen=True)
class MonomialBasis:
    """The vector ``m_d(z)`` of all monomials of degree <= d in a subset of variables."""

    space: VariableSpace
    variables: tuple
    degree: int
    elements: tuple = field(repr=False)

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def polynomials(self) -> list["Polynomial"]:
        return [Polynomial(self.space, {e: 1.0}) for e in self.elements]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Rows of ``m_d(z)`` at each point (points given in full-space coordinates)."""
        exps = np.array(self.elements, dtype=np.int64).reshape(len(self.elements), self.space.dim)
        return _monomial_values(np.atleast_2d(points), exps)


def monomial_basis(space: VariableSpace, variables: Sequence[str], degree: int,
                   min_degree: int = 0) -> MonomialBasis:
    """Monomials of total degree in ``[min_degree, degree]``, graded-lex order."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    variables = tuple(variables)
    idx = space.indices(variables)
    elements = []
    for sub in monomials_up_to(len(idx), degree):
        if sum(sub) < min_degree:
            continue
        e = [0] * space.dim
        for i, k in zip(idx, sub):
            e[i] = k
        elements.append(tuple(e))
    elements.sort(key=grlex_key)
    return MonomialBasis(space, variables, degree, tuple(elements))


def _monomial_values(points: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Matrix ``V[k, j] = prod_i points[k, i] ** exps[j, i]``."""
    points = np.asarray(points, dtype=float)
    out = np.ones((points.shape[0], exps.shape[0]))
    if exps.size == 0:
        return out
    maxdeg = int(exps.max(initial=0))
    # power table avoids 0**0 issues and repeated pow calls
    powers = np.ones((maxdeg + 1,) + points.shape)
    for k in range(1, maxdeg + 1):
        powers[k] = powers[k - 1] * points
    for i in range(points.shape[1]):
        col = exps[:, i]
        if col.any():
            out *= powers[col, :, i].T
    return out


class Polynomial:
    """Immutable sparse polynomial ``sum_alpha c_alpha z^alpha`` over a VariableSpace."""

    def __init__(self, space: VariableSpace, terms: Mapping[tuple, float] | None = None):
        self.space = space
        clean = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != space.dim or any(e < 0 for e in mono):
                raise ValueError(f"bad exponent tuple {mono} for space of dim {space.dim}")
            clean[mono] = clean.get(mono, 0.0) + float(c)
        self._terms = {m: c for m, c in clean.items() if abs(c) >= DROP_TOL}

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls, space: VariableSpace) -> "Polynomial":
        return cls(space)

    @classmethod
    def constant(cls, space: VariableSpace, value: float) -> "Polynomial":
        return cls(space, {(0,) * space.dim: value})

    @classmethod
    def variable(cls, space: VariableSpace, name: str) -> "Polynomial":
        e = [0] * space.dim
        e[space.index(name)] = 1
        return cls(space, {tuple(e): 1.0})

    @classmethod
    def variables(cls, space: VariableSpace, names: Iterable[str]) -> list["Polynomial"]:
        return [cls.variable(space, v) for v in names]

    # -- basic accessors ---------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        """Terms in graded-lex order."""
        return sorted(self._terms.items(), key=lambda kv: grlex_key(kv[0]))

    def monomials(self) -> list[tuple]:
        return sorted(self._terms, key=grlex_key)

    def coefficient(self, mono: tuple) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @cached_property
    def degree(self) -> int:
        return max((sum(m) for m in self._terms), default=0)

    def degree_in(self, names: Iterable[str]) -> int:
        idx = self.space.indices(names)
        return max((sum(m[i] for i in idx) for m in self._terms), default=0)

    def used_variables(self) -> set[str]:
        return {self.space.names[i] for m in self._terms for i, e in enumerate(m) if e}

    def depends_on(self, name: str) -> bool:
        i = self.space.index(name)
        return any(m[i] for m in self._terms)

    # -- arithmetic --------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if self.space != other.space:
            raise ValueError("polynomials live in different variable spaces")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.space, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.space, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.space, {m: c * float(other) for m, c in self._terms.items()})
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        out: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(self.space, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("only nonnegative integer powers")
        out = Polynomial.constant(self.space, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.space, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.space == other.space and self._terms == other._terms

    def __hash__(self):
        return hash((self.space, frozenset(self._terms.items())))

    def allclose(self, other: "Polynomial", atol: float = 1e-9) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self.coefficient(k) - other.coefficient(k)) <= atol for k in keys)

    # -- calculus and evaluation ------------------------------------------
    def differentiate(self, name: str) -> "Polynomial":
        i = self.space.index(name)
        out = {}
        for m, c in self._terms.items():
            if m[i]:
                mm = list(m)
                mm[i] -= 1
                out[tuple(mm)] = c * m[i]
        return Polynomial(self.space, out)

    def gradient(self, names: Iterable[str]) -> list["Polynomial"]:
        return [self.differentiate(v) for v in names]

    def substitute(self, values: Mapping[str, float]) -> "Polynomial":
        """Fix some variables to numbers; the result stays in the same space."""
        idx = {self.space.index(k): float(v) for k, v in values.items()}
        out: dict = {}
        for m, c in self._terms.items():
            mm = list(m)
            for i, v in idx.items():
                if mm[i]:
                    c *= v ** mm[i]
                    mm[i] = 0
            key = tuple(mm)
            out[key] = out.get(key, 0.0) + c
        return Polynomial(self.space, out)

    def _point_vector(self, point) -> np.ndarray:
        if isinstance(point, Mapping):
            used = self.used_variables()
            missing = used - set(point)
            if missing:
                raise KeyError(f"assignment misses variables {sorted(missing)}")
            return np.array([float(point.get(v, 0.0)) for v in self.space.names])
        z = np.asarray(point, dtype=float)
        if z.shape != (self.space.dim,):
            raise ValueError(f"point must have {self.space.dim} coordinates, got shape {z.shape}")
        return z

    def evaluate(self, point) -> float:
        """Value at one point, given as a name->value mapping or a full-space vector."""
        z = self._point_vector(point)
        total = 0.0
        for m, c in self.items():
            v = c
            for zi, e in zip(z, m):
                if e:
                    v *= zi ** e
            total += v
        return float(total)

    def __call__(self, point) -> float:
        return self.evaluate(point)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Vectorized evaluation; ``points`` has shape (k, space.dim)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.space.dim:
            raise ValueError(f"points must have {self.space.dim} columns")
        if not self._terms:
            return np.zeros(points.shape[0])
        monos, coefs = zip(*self.items())
        return _monomial_values(points, np.array(monos, dtype=np.int64)) @ np.array(coefs)

    def coefficient_vector(self, monomials: Sequence[tuple]) -> np.ndarray:
        return np.array([self.coefficient(m) for m in monomials])

    # -- text --------------------------------------------------------------
    def to_string(self, precision: int | None = None) -> str:
        """Human-readable form such as ``2*x1^2 + 0.5*x1*x2``.

        With ``precision=None`` coefficients use ``repr`` so :func:`parse` recovers
        them exactly.
        """
        if not self._terms:
            return "0"
        parts = []
        for m, c in self.items():
            mono = "*".join(
                (v if e == 1 else f"{v}^{e}") for v, e in zip(self.space.names, m) if e)
            mag = abs(c)
            cs = repr(mag) if precision is None else f"{mag:.{precision}g}"
            if mono and cs in ("1.0", "1"):
                body = mono
            elif mono:
                body = f"{cs}*{mono}"
            else:
                body = cs
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        out = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            out += f" {sign} {body}"
        return out

    def __str__(self) -> str:
        return self.to_string(precision=6)

    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()!r})"

    @classmethod
    def parse(cls, text: str, space: VariableSpace) -> "Polynomial":
        return parse_polynomial(text, space)


_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)"
                    r"|(?P<op>\*\*|[-+*^()]))")


def parse_polynomial(text: str, space: VariableSpace) -> Polynomial:
    """Parse sums/products/powers of numbers and variable names (``^`` or ``**``)."""
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        mt = _TOKEN.match(text, pos)
        if not mt or mt.end() == pos:
            raise ValueError(f"cannot parse polynomial at {text[pos:]!r}")
        pos = mt.end()
        kind = mt.lastgroup
        tokens.append((kind, mt.group(kind)))
    tokens.append(("end", None))
    i = 0

    def peek():
        return tokens[i]

    def take():
        nonlocal i
        tok = tokens[i]
        i += 1
        return tok

    def expr():
        sign = 1.0
        if peek() == ("op", "-"):
            take()
            sign = -1.0
        elif peek() == ("op", "+"):
            take()
        acc = term() * sign
        while peek() in (("op", "+"), ("op", "-")):
            op = take()[1]
            rhs = term()
            acc = acc + rhs if op == "+" else acc - rhs
        return acc

    def term():
        acc = power()
        while peek() == ("op", "*"):
            take()
            acc = acc * power()
        return acc

    def power():
        base = atom()
        if peek() in (("op", "^"), ("op", "**")):
            take()
            kind, val = take()
            if kind != "num" or not float(val).is_integer():
                raise ValueError("exponent must be a nonnegative integer")
            base = base ** int(float(val))
        return base

    def atom():
        kind, val = take()
        if kind == "num":
            return Polynomial.constant(space, float(val))
        if kind == "name":
            return Polynomial.variable(space, val)
        if (kind, val) == ("op", "("):
            inner = expr()
            if take() != ("op", ")"):
                raise ValueError("unbalanced parentheses")
            return inner
        if (kind, val) == ("op", "-"):
            return -atom()
        raise ValueError(f"unexpected token {val!r}")

    out = expr()
    if peek()[0] != "end":
        raise ValueError(f"trailing input in {text!r}")
    return out


def hjb_operator(L: Polynomial, phi: Polynomial, f: Sequence[Polynomial],
                 mode: str = "fixed") -> Polynomial:
    """``L + dphi/dt + grad_x(phi) . f`` for a fixed- or free-terminal-time problem."""
    space = L.space
    if phi.space != space or any(fi.space != space for fi in f):
        raise ValueError("L, phi and f must share one variable space")
    if len(f) != space.n:
        raise ValueError(f"f must have {space.n} components")
    if mode not in ("fixed", "free"):
        raise ValueError("mode must be 'fixed' or 'free'")
    out = L
    if space.time_var is not None:
        dphi_dt = phi.differentiate(space.time_var)
        if mode == "free" and not dphi_dt.is_zero():
            raise ValueError("phi must not depend on time in free-time mode")
        out = out + dphi_dt
    for xi, fi in zip(space.state_vars, f):
        out = out + phi.differentiate(xi) * fi
    return out


def binomial(n: int, k: int) -> int:
    return math.comb(n, k)
