"""Compact basic semialgebraic sets and polynomial control systems."""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .polynomial import Polynomial, VariableSpace, parse_polynomial


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class BasicSemialgebraicSet:
    """``{z : g_i(z) >= 0, h_j(z) = 0}`` over a subset of a space's variables.

    Points passed to :meth:`contains` and returned by :meth:`sample_uniform` are
    coordinate vectors ordered like ``variables``.
    """

    space: VariableSpace
    variables: tuple
    inequalities: tuple = ()
    equalities: tuple = ()
    bounding_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        object.__setattr__(self, "equalities", tuple(self.equalities))
        allowed = set(self.variables)
        for v in self.variables:
            self.space.index(v)
        for p in self.inequalities + self.equalities:
            if p.space != self.space:
                raise ValueError("constraint polynomial lives in another space")
            extra = p.used_variables() - allowed
            if extra:
                raise ValueError(f"constraint {p} uses undeclared variables {sorted(extra)}")
        if not np.isfinite(self.bounding_radius) or self.bounding_radius <= 0:
            raise ValueError("bounding_radius must be positive and finite")

    @property
    def dim(self) -> int:
        return len(self.variables)

    def embed(self, points: np.ndarray) -> np.ndarray:
        """Lift points in set coordinates to full-space vectors (other coordinates 0)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        full = np.zeros((points.shape[0], self.space.dim))
        full[:, self.space.indices(self.variables)] = points
        return full

    def residuals(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(g values, h values) with shapes (k, #g) and (k, #h)."""
        full = self.embed(points)
        g = np.column_stack([p.evaluate_many(full) for p in self.inequalities]) \
            if self.inequalities else np.zeros((full.shape[0], 0))
        h = np.column_stack([p.evaluate_many(full) for p in self.equalities]) \
            if self.equalities else np.zeros((full.shape[0], 0))
        return g, h

    def contains_many(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValueError(f"points must have {self.dim} coordinates")
        g, h = self.residuals(points)
        return np.all(g >= -tol, axis=1) & np.all(np.abs(h) <= tol, axis=1)

    def contains(self, z, tol: float = 1e-9) -> bool:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"point must have {self.dim} coordinates, got {z.shape}")
        return bool(self.contains_many(z[None, :], tol)[0])

    def _pinned_coordinates(self) -> dict[int, float]:
        """Coordinates fixed by equalities of the form a*v + b = 0."""
        pinned = {}
        for h in self.equalities:
            used = h.used_variables()
            if len(used) != 1 or h.degree != 1:
                raise SamplingError(f"cannot sample a set with equality {h}")
            (v,) = used
            i = self.space.index(v)
            e = [0] * self.space.dim
            e[i] = 1
            a = h.coefficient(tuple(e))
            b = h.coefficient((0,) * self.space.dim)
            pinned[self.variables.index(v)] = -b / a
        return pinned

    def sample_uniform(self, count: int, seed: int, batch: int = 4096,
                       max_proposals: int = 1_000_000) -> np.ndarray:
        """Rejection sampling from the box ``[-R, R]^d``; shape (count, dim)."""
        out = np.zeros((0, self.dim))
        if count <= 0:
            return out
        rng = np.random.default_rng(seed)
        pinned = self._pinned_coordinates()
        free = [i for i in range(self.dim) if i not in pinned]
        R = self.bounding_radius
        accepted = []
        n_acc = 0
        proposals = 0
        while n_acc < count:
            cand = np.empty((batch, self.dim))
            cand[:, free] = rng.uniform(-R, R, size=(batch, len(free)))
            for i, v in pinned.items():
                cand[:, i] = v
            proposals += batch
            ok = self.contains_many(cand, tol=0.0)
            accepted.append(cand[ok])
            n_acc += int(ok.sum())
            if proposals >= max_proposals and n_acc < 1e-4 * proposals:
                raise SamplingError(
                    f"acceptance rate {n_acc / proposals:.2e} too low for rejection sampling")
        return np.vstack(accepted)[:count]

    def to_dict(self) -> dict:
        return {"variables": list(self.variables),
                "inequalities": [p.to_string() for p in self.inequalities],
                "equalities": [p.to_string() for p in self.equalities],
                "bounding_radius": self.bounding_radius}

    @classmethod
    def from_dict(cls, d: Mapping, space: VariableSpace) -> "BasicSemialgebraicSet":
        return cls(space, tuple(d["variables"]),
                   tuple(_load_poly(p, space) for p in d.get("inequalities", [])),
                   tuple(_load_poly(p, space) for p in d.get("equalities", [])),
                   float(d.get("bounding_radius", 1.0)))


def ball(space: VariableSpace, variables: Sequence[str], radius: float = 1.0) -> BasicSemialgebraicSet:
    zs = Polynomial.variables(space, variables)
    g = radius ** 2 - sum((z * z for z in zs), Polynomial.zero(space))
    return BasicSemialgebraicSet(space, tuple(variables), (g,), (), float(radius))


def annulus(space: VariableSpace, variables: Sequence[str], inner: float,
            outer: float = 1.0) -> BasicSemialgebraicSet:
    zs = Polynomial.variables(space, variables)
    sq = sum((z * z for z in zs), Polynomial.zero(space))
    return BasicSemialgebraicSet(space, tuple(variables), (outer ** 2 - sq, sq - inner ** 2), (),
                                 float(outer))


def sphere(space: VariableSpace, variables: Sequence[str], radius: float = 1.0) -> BasicSemialgebraicSet:
    zs = Polynomial.variables(space, variables)
    h = radius ** 2 - sum((z * z for z in zs), Polynomial.zero(space))
    return BasicSemialgebraicSet(space, tuple(variables), (), (h,), float(radius))


def point(space: VariableSpace, variables: Sequence[str], at: Sequence[float] | None = None,
          ) -> BasicSemialgebraicSet:
    at = [0.0] * len(variables) if at is None else list(at)
    hs = tuple(Polynomial.variable(space, v) - float(c) for v, c in zip(variables, at))
    return BasicSemialgebraicSet(space, tuple(variables), (), hs,
                                 max(1.0, float(np.linalg.norm(at)) * 1.01))


def interval(space: VariableSpace, var: str, lo: float, hi: float) -> BasicSemialgebraicSet:
    """``{lo <= var <= hi}`` written as one quadratic ``(var - lo)(hi - var) >= 0``."""
    v = Polynomial.variable(space, var)
    return BasicSemialgebraicSet(space, (var,), ((v - lo) * (hi - v),), (),
                                 float(max(abs(lo), abs(hi))))


def product(*sets: BasicSemialgebraicSet) -> BasicSemialgebraicSet:
    """Cartesian product of sets over disjoint variable groups."""
    space = sets[0].space
    variables: tuple = ()
    for s in sets:
        if set(s.variables) & set(variables):
            raise ValueError("product factors must use disjoint variables")
        variables += s.variables
    return BasicSemialgebraicSet(
        space, variables,
        sum((s.inequalities for s in sets), ()),
        sum((s.equalities for s in sets), ()),
        float(np.sqrt(sum(s.bounding_radius ** 2 for s in sets))))


@dataclass(frozen=True)
class FixedTime:
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    mode = "fixed"


@dataclass(frozen=True)
class FreeTime:
    mode = "free"


@dataclass(frozen=True)
class ControlSystem:
    """``x' = f(x, u)`` with ``x in X``, ``u in U``, terminal set ``X_T`` and a horizon mode."""

    space: VariableSpace
    f: tuple
    X: BasicSemialgebraicSet
    U: BasicSemialgebraicSet
    X_T: BasicSemialgebraicSet
    horizon: FixedTime | FreeTime = field(default_factory=FreeTime)
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        if len(self.f) != self.space.n:
            raise ValueError(f"f must have {self.space.n} components, got {len(self.f)}")
        xu = set(self.space.state_vars) | set(self.space.control_vars)
        for fi in self.f:
            if fi.used_variables() - xu:
                raise ValueError("f may depend on states and controls only")
        if set(self.X.variables) != set(self.space.state_vars):
            raise ValueError("X must be described over the state variables")
        if not set(self.X_T.variables) <= set(self.space.state_vars):
            raise ValueError("X_T must be described over state variables")
        if set(self.U.variables) != set(self.space.control_vars):
            raise ValueError("U must be described over the control variables")
        if self.fixed_time and self.space.time_var is None:
            raise ValueError("a fixed-time system needs a time variable in its space")

    @property
    def fixed_time(self) -> bool:
        return isinstance(self.horizon, FixedTime)

    @property
    def mode(self) -> str:
        return self.horizon.mode

    def time_set(self) -> BasicSemialgebraicSet | None:
        if not self.fixed_time:
            return None
        return interval(self.space, self.space.time_var, 0.0, self.horizon.T)

    def positivity_set(self) -> BasicSemialgebraicSet:
        """``[0,T] x X x U`` (or ``X x U`` for free terminal time)."""
        parts = [self.X, self.U]
        ts = self.time_set()
        if ts is not None:
            parts.insert(0, ts)
        return product(*parts)

    def f_values(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Vector field at rows of states/controls; shape (k, n)."""
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        full = np.zeros((x.shape[0], self.space.dim))
        full[:, self.space.indices(self.space.state_vars)] = x
        full[:, self.space.indices(self.space.control_vars)] = u
        return np.column_stack([fi.evaluate_many(full) for fi in self.f])

    def to_dict(self) -> dict:
        horizon = {"mode": self.mode}
        if self.fixed_time:
            horizon["T"] = self.horizon.T
        return {"name": self.name, "variables": self.space.to_dict(),
                "f": [fi.to_string() for fi in self.f],
                "X": self.X.to_dict(), "U": self.U.to_dict(), "X_T": self.X_T.to_dict(),
                "horizon": horizon}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ControlSystem":
        space = VariableSpace.from_dict(d["variables"])
        h = d.get("horizon", {"mode": "free"})
        horizon = FixedTime(float(h["T"])) if h["mode"] == "fixed" else FreeTime()
        return cls(space, tuple(_load_poly(p, space) for p in d["f"]),
                   BasicSemialgebraicSet.from_dict(d["X"], space),
                   BasicSemialgebraicSet.from_dict(d["U"], space),
                   BasicSemialgebraicSet.from_dict(d["X_T"], space),
                   horizon, d.get("name", "custom"))


def _load_poly(obj, space: VariableSpace) -> Polynomial:
    """A polynomial given as text or as a list of ``[coef, [exponents...]]`` terms."""
    if isinstance(obj, str):
        return parse_polynomial(obj, space)
    terms: dict = {}
    for coef, exps in obj:
        if isinstance(exps, Mapping):
            e = [0] * space.dim
            for v, k in exps.items():
                e[space.index(v)] = int(k)
            exps = e
        terms[tuple(exps)] = terms.get(tuple(exps), 0.0) + float(coef)
    return Polynomial(space, terms)


def load_system(path: str | Path) -> ControlSystem:
    with open(path, encoding="utf-8") as fh:
        return ControlSystem.from_dict(json.load(fh))


def save_system(system: ControlSystem, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(system.to_dict(), fh, indent=2)
