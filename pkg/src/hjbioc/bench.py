"""Benchmark control problems and generators of optimal trajectory databases.

Each generator samples start states per trajectory from a generator seeded by
``(seed, index)``, so trajectories do not depend on generation order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.integrate import trapezoid

from .polynomial import Polynomial, VariableSpace
from .semialgebraic import (BasicSemialgebraicSet, ControlSystem, FixedTime, FreeTime, annulus,
                            ball, point, sphere)

LQ_Q = np.array([[2.0, 0.25], [0.25, 1.0]])
LQ_R = 1.0
LQ_A = np.array([[0.0, 1.0], [0.0, 0.0]])
LQ_B = np.array([0.0, 1.0])


# -- systems -----------------------------------------------------------------

def lq_system(T: float = 1.0, u_radius: float = 2.0) -> ControlSystem:
    """x' = (x2, u) on the unit disk; U truncated to [-u_radius, u_radius]; X_T = X."""
    space = VariableSpace(["x1", "x2"], ["u"], "t")
    x1, x2, u = Polynomial.variables(space, ["x1", "x2", "u"])
    X = ball(space, ["x1", "x2"])
    U = ball(space, ["u"], u_radius)
    return ControlSystem(space, (x2, u), X, U, X, FixedTime(T), "lq")


def exitnorm_system() -> ControlSystem:
    space = VariableSpace(["x1", "x2"], ["u1", "u2"])
    u1, u2 = Polynomial.variables(space, ["u1", "u2"])
    X = ball(space, ["x1", "x2"])
    return ControlSystem(space, (u1, u2), X, ball(space, ["u1", "u2"]),
                         sphere(space, ["x1", "x2"]), FreeTime(), "exitnorm")


def exittime_system() -> ControlSystem:
    sys_ = exitnorm_system()
    return ControlSystem(sys_.space, sys_.f, sys_.X, sys_.U, sys_.X_T, FreeTime(), "exittime")


def brockett_system() -> ControlSystem:
    space = VariableSpace(["x1", "x2", "x3"], ["u1", "u2"])
    x1, x2, x3, u1, u2 = Polynomial.variables(space, space.names)
    f = (u1, u2, x2 * u1 - x1 * u2)
    X = ball(space, ["x1", "x2", "x3"], 3.0)
    return ControlSystem(space, f, X, ball(space, ["u1", "u2"]),
                         point(space, ["x1", "x2", "x3"]), FreeTime(), "brockett")


def target_lagrangian(problem: str, space: VariableSpace, p: int | None = None) -> Polynomial:
    """The Lagrangian a benchmark database was generated with (polynomial cases)."""
    if problem == "lq":
        x1, x2, u = Polynomial.variables(space, ["x1", "x2", "u"])
        return 2 * x1 * x1 + 0.5 * x1 * x2 + x2 * x2 + u * u
    if problem == "exitnorm":
        return sum((v * v for v in Polynomial.variables(space, space.state_vars + space.control_vars)),
                   Polynomial.zero(space))
    if problem in ("exittime", "brockett", "plp0"):
        return Polynomial.constant(space, 1.0)
    if problem.startswith("plp") and int(problem[3:]) % 2 == 0:
        k = int(problem[3:]) // 2
        sq = sum((v * v for v in Polynomial.variables(space, space.state_vars)), Polynomial.zero(space))
        return sq ** k
    raise KeyError(f"no polynomial target Lagrangian for {problem!r}")


def conserved_lagrangian(space: VariableSpace) -> Polynomial:
    """``(1 - |u|^2)^2``, the Lagrangian vanishing on unit-speed controls."""
    us = Polynomial.variables(space, space.control_vars)
    g = 1.0 - sum((v * v for v in us), Polynomial.zero(space))
    return g * g


# -- databases ---------------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    terminal: bool = True

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if not (len(self.t) == len(self.x) == len(self.u)):
            raise ValueError("t, x and u must have one row per sample")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def left_weights(self) -> np.ndarray:
        """Left-endpoint Riemann weights; the last sample gets weight 0."""
        w = np.zeros(len(self.t))
        w[:-1] = np.diff(self.t)
        return w

    def is_terminal(self) -> np.ndarray:
        flags = np.zeros(len(self.t), dtype=bool)
        flags[-1] = self.terminal
        return flags


@dataclass
class TrajectoryDatabase:
    system: ControlSystem
    trajectories: list
    seed: int
    problem: str
    sample_region: BasicSemialgebraicSet | None = None
    labels: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_samples(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    def full_points(self, tr: Trajectory) -> np.ndarray:
        space = self.system.space
        pts = np.zeros((len(tr), space.dim))
        if space.time_var is not None:
            pts[:, space.index(space.time_var)] = tr.t
        pts[:, space.indices(space.state_vars)] = tr.x
        pts[:, space.indices(space.control_vars)] = tr.u
        return pts

    def sample_points(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples as full-space points with their left-endpoint weights."""
        if not self.trajectories:
            return np.zeros((0, self.system.space.dim)), np.zeros(0)
        pts = np.vstack([self.full_points(tr) for tr in self.trajectories])
        w = np.concatenate([tr.left_weights() for tr in self.trajectories])
        return pts, w

    def per_trajectory_points(self):
        for tr in self.trajectories:
            yield self.full_points(tr), tr.left_weights()

    def terminal_states(self) -> np.ndarray:
        rows = [tr.x[-1] for tr in self.trajectories if tr.terminal]
        return np.array(rows).reshape(-1, self.system.space.n)

    def all_states(self) -> np.ndarray:
        return np.vstack([tr.x for tr in self.trajectories])

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "problem": self.problem, "seed": self.seed, "labels": self.labels,
            "system": self.system.to_dict(),
            "sample_region": None if self.sample_region is None else self.sample_region.to_dict(),
            "trajectories": [{"t": tr.t.tolist(), "x": tr.x.tolist(), "u": tr.u.tolist(),
                              "terminal": bool(tr.terminal)} for tr in self.trajectories],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryDatabase":
        system = ControlSystem.from_dict(d["system"])
        region = d.get("sample_region")
        region = None if region is None else BasicSemialgebraicSet.from_dict(region, system.space)
        trajs = [Trajectory(np.array(tr["t"]), np.array(tr["x"]).reshape(-1, system.space.n),
                            np.array(tr["u"]).reshape(-1, system.space.m), tr["terminal"])
                 for tr in d["trajectories"]]
        return cls(system, trajs, int(d["seed"]), d["problem"], region, d.get("labels", {}))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryDatabase":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path: str | Path) -> None:
        space = self.system.space
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["trajectory", "k", "t", *space.state_vars, *space.control_vars, "terminal"])
            for i, tr in enumerate(self.trajectories):
                flags = tr.is_terminal()
                for k in range(len(tr)):
                    w.writerow([i, k, repr(tr.t[k]), *map(repr, tr.x[k]), *map(repr, tr.u[k]),
                                int(flags[k])])


def check_database(db: TrajectoryDatabase, tol: float = 1e-9, terminal_tol: float = 1e-6,
                   dynamics_factor: float = 5.0) -> list[str]:
    """Sample invariants; returns human-readable violations (empty when clean)."""
    sys_ = db.system
    issues = []
    jac_max = _jacobian_bound(db)
    for i, tr in enumerate(db.trajectories):
        if len(tr) > 1 and np.any(np.diff(tr.t) <= 0):
            issues.append(f"trajectory {i}: times not strictly increasing")
        bad_x = ~sys_.X.contains_many(tr.x, tol)
        bad_u = ~sys_.U.contains_many(tr.u, tol)
        if bad_x.any():
            issues.append(f"trajectory {i}: {int(bad_x.sum())} states outside X")
        if bad_u.any():
            issues.append(f"trajectory {i}: {int(bad_u.sum())} controls outside U")
        if tr.terminal:
            xt = tr.x[-1][[sys_.space.state_vars.index(v) for v in sys_.X_T.variables]]
            if not sys_.X_T.contains(xt, terminal_tol):
                issues.append(f"trajectory {i}: terminal state {tr.x[-1]} not in X_T")
        if len(tr) > 1:
            dt = np.diff(tr.t)
            fd = np.diff(tr.x, axis=0) / dt[:, None]
            fv = sys_.f_values(tr.x[:-1], tr.u[:-1])
            err = np.linalg.norm(fd - fv, axis=1)
            bound = dynamics_factor * dt * jac_max
            if np.any(err > bound):
                k = int(np.argmax(err - bound))
                issues.append(f"trajectory {i}: finite differences disagree with f at sample {k} "
                              f"({err[k]:.3e} > {bound[k]:.3e})")
    return issues


def _jacobian_bound(db: TrajectoryDatabase) -> float:
    """max over samples of the spectral norm of d f / d(x, u)."""
    space = db.system.space
    xu = space.state_vars + space.control_vars
    jac = [[fi.differentiate(v) for v in xu] for fi in db.system.f]
    pts, _ = db.sample_points()
    if not len(pts):
        return 0.0
    vals = np.stack([np.column_stack([d.evaluate_many(pts) for d in row]) for row in jac], axis=1)
    return float(np.max(np.linalg.norm(vals, ord=2, axis=(1, 2))))


# -- generators --------------------------------------------------------------

def _points_only(tr: Trajectory, s: int) -> Trajectory:
    """``s == 0`` turns a trajectory into its start sample (a state/control pair)."""
    if s > 0 or len(tr) == 1:
        return tr
    return Trajectory(tr.t[:1], tr.x[:1], tr.u[:1], False)


def _rotate_orbits(trajs: list, N: int, rotations: int, region: BasicSemialgebraicSet) -> list:
    """Each trajectory followed by its copies rotated by multiples of ``2 pi / rotations``.

    Only valid for planar problems whose dynamics and sets are rotation invariant;
    the sampled data then share that symmetry exactly.
    """
    if rotations == 1:
        return trajs[:N]
    out = []
    for tr in trajs:
        for k in range(rotations):
            a = 2.0 * math.pi * k / rotations
            R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
            x, u = tr.x @ R.T, tr.u @ R.T
            if not region.contains_many(x[:1], 1e-9).all():
                raise ValueError("sample region is not invariant under the requested rotations")
            out.append(Trajectory(tr.t.copy(), x, u, tr.terminal))
    return out[:N]


def _base_count(N: int, rotations: int) -> int:
    if rotations < 1:
        raise ValueError("rotations must be a positive integer")
    return -(-N // rotations)


def _check_sizes(N: int, s: int) -> None:
    if N < 1:
        raise ValueError("N must be at least 1")
    if s < 0:
        raise ValueError("s must be nonnegative")


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _draw(region: BasicSemialgebraicSet, rng: np.random.Generator, accept=None) -> np.ndarray:
    R = region.bounding_radius
    while True:
        cand = rng.uniform(-R, R, size=(64, region.dim))
        ok = region.contains_many(cand, 0.0)
        if accept is not None:
            ok &= accept(cand)
        if ok.any():
            return cand[np.argmax(ok)]


def riccati(T: float = 1.0, steps: int = 2000, Q=LQ_Q, R=LQ_R, A=LQ_A, B=LQ_B):
    """Backward RK4 for ``-P' = A^T P + P A - P B R^-1 B^T P + Q``, ``P(T) = 0``.

    Returns grid times and P on the grid; the value function is ``x^T P(t) x``.
    """
    def rhs(P):
        PB = P @ B
        return -(A.T @ P + P @ A - np.outer(PB, PB) / R + Q)

    h = T / steps
    ts = np.linspace(0.0, T, steps + 1)
    Ps = np.zeros((steps + 1, 2, 2))
    P = np.zeros((2, 2))
    Ps[-1] = P
    for k in range(steps, 0, -1):
        # integrate backward: dt = -h
        k1 = rhs(P)
        k2 = rhs(P - 0.5 * h * k1)
        k3 = rhs(P - 0.5 * h * k2)
        k4 = rhs(P - h * k3)
        P = P - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        P = 0.5 * (P + P.T)
        Ps[k - 1] = P
    return ts, Ps


class LqLaw:
    """Closed-loop LQ feedback ``u = -R^-1 B^T P(t) x`` with spline-interpolated P."""

    def __init__(self, T: float = 1.0, steps: int = 2000):
        self.T = T
        ts, Ps = riccati(T, steps)
        self.spline = CubicSpline(ts, Ps.reshape(len(ts), 4), axis=0)

    def P(self, t) -> np.ndarray:
        return self.spline(t).reshape(np.shape(t) + (2, 2))

    def E(self, t) -> np.ndarray:
        return -self.P(t)

    def control(self, t: float, x: np.ndarray) -> float:
        return float(-(LQ_B @ self.P(t) @ x) / LQ_R)

    def value(self, t: float, x: np.ndarray) -> float:
        return float(x @ self.P(t) @ x)

    def rhs(self, t, x):
        u = self.control(t, x)
        return np.array([x[1], u])


def gen_lq(N: int, seed: int, s: int = 50, T: float = 1.0, x0_radius: float = 0.9,
           substeps: int = 20, law: LqLaw | None = None, system: ControlSystem | None = None,
           max_attempts: int = 100) -> TrajectoryDatabase:
    _check_sizes(N, s)
    system = system or lq_system(T)
    law = law or LqLaw(T)
    region = ball(system.space, ["x1", "x2"], x0_radius)
    trajs = []
    for i in range(N):
        rng = _rng(seed, i)
        for _ in range(max_attempts):
            t0 = float(rng.uniform(0.0, T))
            x0 = _draw(region, rng)
            tr = _points_only(_integrate_lq(law, t0, x0, T, max(s, 1), substeps), s)
            if (system.X.contains_many(tr.x, 1e-9).all()
                    and system.U.contains_many(tr.u, 1e-9).all()):
                trajs.append(tr)
                break
        else:
            raise RuntimeError(f"LQ trajectory {i} kept leaving X")
    labels = {"lagrangian": "2*x1^2 + 0.5*x1*x2 + x2^2 + u^2",
              "value_function": "x^T P(t) x with P the Riccati solution, P(T)=0"}
    return TrajectoryDatabase(system, trajs, seed, "lq", region, labels)


def _integrate_lq(law: LqLaw, t0, x0, T, s, substeps) -> Trajectory:
    ts = t0 + (T - t0) * np.arange(s + 1) / s
    xs = np.zeros((s + 1, 2))
    xs[0] = x = np.array(x0, dtype=float)
    for k in range(s):
        h = (ts[k + 1] - ts[k]) / substeps
        t = ts[k]
        for _ in range(substeps):
            k1 = law.rhs(t, x)
            k2 = law.rhs(t + h / 2, x + h / 2 * k1)
            k3 = law.rhs(t + h / 2, x + h / 2 * k2)
            k4 = law.rhs(t + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        xs[k + 1] = x
    us = np.array([[law.control(t, x)] for t, x in zip(ts, xs)])
    return Trajectory(ts, xs, us, True)


def gen_exitnorm(N: int, seed: int, s: int = 50, region: BasicSemialgebraicSet | None = None,
                 min_radius: float = 0.1, rotations: int = 1) -> TrajectoryDatabase:
    """Trajectories ``x(t) = x0 e^t`` under ``u = x`` until the unit circle is reached.

    Starts closer than ``min_radius`` to the origin are redrawn: the exit time
    ``-ln |x0|`` blows up there.  ``rotations > 1`` adds rotated copies of every
    draw (see :func:`_rotate_orbits`).
    """
    _check_sizes(N, s)
    system = exitnorm_system()
    region = region or system.X
    trajs = []
    for i in range(_base_count(N, rotations)):
        rng = _rng(seed, i)
        x0 = _draw(region, rng, lambda c: np.linalg.norm(c, axis=1) >= min_radius)
        r0 = float(np.linalg.norm(x0))
        if r0 >= 1.0:
            xt = x0 / r0
            trajs.append(Trajectory(np.zeros(1), xt[None], xt[None], True))
            continue
        T = -math.log(r0)
        k = max(s, 1)
        ts = T * np.arange(k + 1) / k
        xs = x0[None, :] * np.exp(ts)[:, None]
        xs[-1] = x0 / r0
        trajs.append(_points_only(Trajectory(ts, xs, xs.copy(), True), s))
    trajs = _rotate_orbits(trajs, N, rotations, region)
    labels = {"lagrangian": "x1^2 + x2^2 + u1^2 + u2^2", "value_function": "1 - |x|^2"}
    return TrajectoryDatabase(system, trajs, seed, "exitnorm", region, labels)


def gen_exittime(N: int, seed: int, s: int = 50, region: BasicSemialgebraicSet | None = None,
                 rotations: int = 1) -> TrajectoryDatabase:
    """Radial unit-speed trajectories ``x0 + t x0/|x0|`` until the unit circle."""
    _check_sizes(N, s)
    system = exittime_system()
    region = region or system.X
    trajs = []
    for i in range(_base_count(N, rotations)):
        rng = _rng(seed, i)
        x0 = _draw(region, rng, lambda c: np.linalg.norm(c, axis=1) > 1e-12)
        r0 = float(np.linalg.norm(x0))
        u = x0 / r0
        if r0 >= 1.0:
            trajs.append(Trajectory(np.zeros(1), u[None], u[None], True))
            continue
        k = max(s, 1)
        ts = (1.0 - r0) * np.arange(k + 1) / k
        xs = x0[None, :] + ts[:, None] * u[None, :]
        xs[-1] = u
        trajs.append(_points_only(Trajectory(ts, xs, np.repeat(u[None], k + 1, axis=0), True), s))
    trajs = _rotate_orbits(trajs, N, rotations, region)
    labels = {"lagrangian": "1", "value_function": "1 - |x|"}
    return TrajectoryDatabase(system, trajs, seed, "exittime", region, labels)


def gen_plp(p: int, N: int, seed: int, s: int = 50,
            region: BasicSemialgebraicSet | None = None, rotations: int = 1) -> TrajectoryDatabase:
    """Same trajectories as :func:`gen_exittime`, labeled with ``L_p = |x|^p``."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    db = gen_exittime(N, seed, s, region, rotations)
    db.problem = f"plp{p}"
    db.labels = {"lagrangian": f"|x|^{p}", "value_function": f"1/{p + 1} * (1 - |x|^{p + 1})",
                 "p": p}
    return db


def plp_value(p: int, x0) -> float:
    r = float(np.linalg.norm(x0))
    return (1.0 - r ** (p + 1)) / (p + 1)


def gen_brockett(N: int, seed: int, subcase: str = "mixed", s: int = 50,
                 planar_fraction: float = 0.8, c_range=(0.1, 2.5)) -> TrajectoryDatabase:
    """Minimum-time trajectories of the Brockett integrator for two analytic subcases.

    ``planar``: start ``(a, b, 0)``, radial control toward the origin.
    ``axis``: start ``(0, 0, c)``, unit-speed circular arc enclosing area ``|c|``.
    ``mixed``: each trajectory is planar with probability ``planar_fraction``.
    """
    if subcase not in ("planar", "axis", "mixed"):
        raise ValueError("subcase must be planar, axis or mixed")
    _check_sizes(N, s)
    system = brockett_system()
    disk = ball(system.space, ["x1", "x2"], 3.0)
    trajs = []
    for i in range(N):
        rng = _rng(seed, i)
        kind = subcase
        if subcase == "mixed":
            kind = "planar" if rng.uniform() < planar_fraction else "axis"
        while True:
            if kind == "planar":
                ab = _draw(disk, rng, lambda c: np.linalg.norm(c, axis=1) > 1e-12)
                tr = _brockett_planar(ab, max(s, 1))
            else:
                c = rng.uniform(*c_range) * rng.choice([-1.0, 1.0])
                theta = rng.uniform(0.0, 2 * np.pi)
                tr = _brockett_axis(c, theta, max(s, 1))
            if system.X.contains_many(tr.x, 1e-9).all():
                trajs.append(_points_only(tr, s))
                break
    labels = {"lagrangian": "1", "subcase": subcase, "value_function": "minimum time"}
    return TrajectoryDatabase(system, trajs, seed, "brockett", None, labels)


def _brockett_planar(ab, s) -> Trajectory:
    r = float(np.linalg.norm(ab))
    u = -np.asarray(ab) / r
    ts = r * np.arange(s + 1) / s
    xy = ab[None, :] + ts[:, None] * u[None, :]
    xy[-1] = 0.0
    xs = np.column_stack([xy, np.zeros(s + 1)])
    return Trajectory(ts, xs, np.repeat(u[None], s + 1, axis=0), True)


def _brockett_axis(c, theta, s) -> Trajectory:
    sgn = 1.0 if c > 0 else -1.0
    w = math.sqrt(2 * math.pi / abs(c))
    T = 2 * math.pi / w
    ts = T * np.arange(s + 1) / s
    ang = sgn * w * ts + theta
    u = np.column_stack([np.cos(ang), np.sin(ang)])
    x1 = (np.sin(ang) - math.sin(theta)) / (sgn * w)
    x2 = (math.cos(theta) - np.cos(ang)) / (sgn * w)
    x3 = c - sgn * (ts - np.sin(w * ts) / w) / w
    xs = np.column_stack([x1, x2, x3])
    xs[-1] = 0.0
    return Trajectory(ts, xs, u, True)


def trapezoid_cost(db: TrajectoryDatabase, L: Polynomial) -> np.ndarray:
    """Trapezoidal integral of ``L`` along each trajectory."""
    out = []
    for tr in db.trajectories:
        vals = L.evaluate_many(db.full_points(tr))
        out.append(float(trapezoid(vals, tr.t)) if len(tr) > 1 else 0.0)
    return np.array(out)


def generate(problem: str, N: int, seed: int, s: int = 50, region: str = "ball",
             p: int = 0, subcase: str = "mixed", rotations: int = 1) -> TrajectoryDatabase:
    """Dispatch by problem id: lq, exitnorm, exittime, plp, brockett."""
    if rotations != 1 and problem not in ("exitnorm", "exittime", "plp"):
        raise ValueError(f"rotated sampling is not available for {problem!r}")
    if problem == "lq":
        return gen_lq(N, seed, s)
    if problem == "exitnorm":
        return gen_exitnorm(N, seed, s, rotations=rotations)
    if problem in ("exittime", "plp"):
        space = exittime_system().space
        reg = annulus(space, ["x1", "x2"], 0.5, 1.0) if region == "annulus" else None
        if problem == "plp":
            return gen_plp(p, N, seed, s, reg, rotations)
        return gen_exittime(N, seed, s, reg, rotations)
    if problem == "brockett":
        return gen_brockett(N, seed, subcase, s)
    raise ValueError(f"unknown problem {problem!r}")
