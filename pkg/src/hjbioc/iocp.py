"""Inverse optimal control through relaxed HJB certificates.

Given optimal trajectories of ``x' = f(x, u)``, search a Lagrangian ``L`` in a
class of SOS polynomials together with a polynomial ``phi`` such that

* ``H = L + d_t phi + grad_x phi . f >= 0`` on ``[0,T] x X x U`` (or ``X x U``),
* ``phi(T, .) <= 0`` on ``X_T`` and ``phi(T, x_end) >= -eps`` at trajectory ends,
* the Riemann sum of ``H`` along the data is at most ``eps``,

minimizing ``eps``.  A small ``eps`` certifies the data as ``2 eps``-optimal for ``L``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bench import TrajectoryDatabase
from .polynomial import Polynomial, hjb_operator, monomial_basis
from .sdp import SdpProblem, SdpSolution, SolverOptions, free_key, solve
from .semialgebraic import BasicSemialgebraicSet, ControlSystem, SamplingError
from .sos import (CONST, CertificateError, CompiledCertificate, GramVariable, PolyTemplate,
                  PutinarCertificate, compile_positivity, gram_parametrize, reconstruct)

EPS_LOWER = -1.0


@dataclass(frozen=True)
class LagrangianClass:
    """``m_a(x)^T Cx m_a(x) + m_b(u)^T Cu m_b(u)`` with ``tr Cx + tr Cu = C``."""

    a: int
    b: int
    C: float = 1.0
    constant: bool | None = None   # include the monomial 1; None: only for free terminal time

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("class degrees must be nonnegative")
        if not self.C > 0:
            raise ValueError("normalization constant must be positive")

    @classmethod
    def parse(cls, text: str) -> "LagrangianClass":
        a, b = (int(v) for v in text.split(","))
        return cls(a, b)

    def __str__(self) -> str:
        return f"L_{{{self.a},{self.b}}}"

    def min_degree(self, system: ControlSystem) -> int:
        """With a fixed horizon a constant Lagrangian is certified by ``phi = c (T - t)``
        whatever the data, so constants are left out of the bases by default."""
        keep = (not system.fixed_time) if self.constant is None else self.constant
        return 0 if keep else 1


@dataclass
class IocpAssembly:
    problem: SdpProblem
    system: ControlSystem
    cls: LagrangianClass
    deg_phi: int
    half_degree: int
    gram_x: GramVariable
    gram_u: GramVariable
    L: PolyTemplate
    phi: PolyTemplate
    H: PolyTemplate
    eps_id: int
    certificates: list
    terminal_rows: list
    integral_row: int
    trace_row: int | None
    normalized: bool
    weighting: str = "time"
    terminal_points: np.ndarray | None = None   # states carrying phi(T, x) >= -eps


def _phi_variables(system: ControlSystem) -> list:
    sp = system.space
    return ([sp.time_var] if system.fixed_time else []) + list(sp.state_vars)


def required_half_degree(system: ControlSystem, cls: LagrangianClass, deg_phi: int) -> int:
    """Smallest certificate half-degree covering ``phi`` and ``H``."""
    f_deg = max((fi.degree for fi in system.f), default=0)
    deg_H = max(2 * cls.a, 2 * cls.b, deg_phi - 1 + f_deg,
                deg_phi - 1 if system.fixed_time else 0)
    return max(math.ceil(deg_phi / 2), math.ceil(deg_H / 2), 1)


def _terminal_template(system: ControlSystem, phi: PolyTemplate) -> PolyTemplate:
    if system.fixed_time:
        return phi.substitute({system.space.time_var: system.horizon.T})
    return phi


def _row_from_linear(lin: dict, scale: float = 1.0) -> tuple[dict, float]:
    """Split a linear expression into (row, rhs) for ``row . v + const``."""
    const = lin.get(CONST, 0.0) * scale
    return {k: c * scale for k, c in lin.items() if k is not CONST}, const


def assemble(system: ControlSystem, db: TrajectoryDatabase, cls: LagrangianClass, deg_phi: int,
             half_degree: int | None = None, normalize: bool = True,
             terminal_at_all_samples: bool | None = None, weighting: str = "auto",
             max_terminal_rows: int = 5000) -> IocpAssembly:
    """Build the SDP for one level of the hierarchy.

    ``weighting="time"`` sums ``dt * H`` over samples (left-endpoint rule per
    trajectory); ``"samples"`` gives every sample weight one, which suits
    databases of isolated state/control pairs; ``"auto"`` picks between them
    (:func:`resolve_weighting`).

    The lower bound ``phi(T, x) >= -eps`` is imposed at terminal samples; with
    ``terminal_at_all_samples`` it is imposed at every sample instead.  ``None``
    picks the latter only when the database has no terminal samples (point
    databases), where otherwise nothing bounds the constant of ``phi`` from below.
    Each bounded sample is one SDP row, so the count is capped by
    ``max_terminal_rows``.
    """
    if db is None or len(db) == 0 or db.n_samples == 0:
        raise ValueError("trajectory database is empty")
    if deg_phi < 0:
        raise ValueError("deg_phi must be nonnegative")
    weighting = resolve_weighting(db, weighting)
    space = system.space
    need = required_half_degree(system, cls, deg_phi)
    p = need if half_degree is None else int(half_degree)

    prob = SdpProblem()
    lo = cls.min_degree(system)
    gx = gram_parametrize(space, space.state_vars, cls.a, prob, "Cx", lo)
    gu = gram_parametrize(space, space.control_vars, cls.b, prob, "Cu", lo)
    if not (gx.size or gu.size):
        raise ValueError(f"class {cls} has no monomials for this system")
    L = PolyTemplate.from_gram(gx) + PolyTemplate.from_gram(gu)
    phi, _ = PolyTemplate.free_polynomial(prob, monomial_basis(space, _phi_variables(system), deg_phi),
                                          "phi")
    eps = prob.add_free("eps")
    ekey = free_key(eps)

    H = L.copy()
    if system.fixed_time:
        H = H + phi.differentiate(space.time_var)
    for xi, fi in zip(space.state_vars, system.f):
        H = H + phi.differentiate(xi) * fi

    if H.degree > 2 * p:
        bad = max(H.terms, key=sum)
        label = "*".join(f"{v}^{e}" for v, e in zip(space.names, bad) if e)
        raise CertificateError(
            f"certificate degree too low: H has degree {H.degree} (term {label}) "
            f"but half-degree {p} allows only {2 * p}")

    certs = [compile_positivity(prob, PutinarCertificate(H, system.positivity_set(), p, "H"))]
    phiT = _terminal_template(system, phi)
    certs.append(compile_positivity(prob, PutinarCertificate(-phiT, system.X_T, p, "phiT")))

    # phi(T, x) + eps >= 0 at terminal samples
    term_rows = []
    if terminal_at_all_samples is None:
        terminal_at_all_samples = len(db.terminal_states()) == 0
    states = db.all_states() if terminal_at_all_samples else db.terminal_states()
    if len(states) > max_terminal_rows:
        raise ValueError(f"{len(states)} terminal lower-bound rows exceed max_terminal_rows="
                         f"{max_terminal_rows}; the dense Schur complement grows quadratically")
    xi = space.indices(space.state_vars)
    pts = np.zeros((len(states), space.dim))
    pts[:, xi] = states
    for k, z in enumerate(pts):
        row, const = _row_from_linear(phiT.linear_functional(z[None]))
        row[ekey] = row.get(ekey, 0.0) + 1.0
        term_rows.append(prob.add_ineq(row, -const, f"terminal{k}"))

    # eps - sum_i sum_k dt H(z_ik) >= 0
    Z, w = sample_weights(db, weighting)
    row, const = _row_from_linear(H.linear_functional(Z, w), -1.0)
    row[ekey] = row.get(ekey, 0.0) + 1.0
    integral_row = prob.add_ineq(row, -const, "integral")

    prob.add_ineq({ekey: 1.0}, EPS_LOWER, "eps_lower")

    trace_row = None
    if normalize:
        tr = {}
        for g in (gx, gu):
            for i in range(g.size):
                tr[("b", g.block, i, i)] = 1.0
        trace_row = prob.add_eq(tr, cls.C, "trace")
    prob.set_objective({ekey: 1.0})
    return IocpAssembly(prob, system, cls, deg_phi, p, gx, gu, L, phi, H, eps, certs,
                        term_rows, integral_row, trace_row, normalize, weighting, states)


def resolve_weighting(db: TrajectoryDatabase, weighting: str) -> str:
    """``"auto"`` means time weights unless the database has zero total duration."""
    if weighting != "auto":
        return weighting
    _, w = db.sample_points()
    return "time" if np.any(w > 0) else "samples"


def sample_weights(db: TrajectoryDatabase, weighting: str = "time") -> tuple[np.ndarray, np.ndarray]:
    Z, w = db.sample_points()
    weighting = resolve_weighting(db, weighting)
    if weighting == "samples":
        return Z, np.ones(len(Z))
    if weighting != "time":
        raise ValueError(f"unknown weighting {weighting!r}")
    if not np.any(w > 0):
        raise ValueError("database has zero total duration; use weighting='samples'")
    return Z, w


@dataclass
class IocpSolution:
    L: Polynomial
    phi: Polynomial
    epsilon: float
    gram_x: np.ndarray
    gram_u: np.ndarray
    sdp: SdpSolution
    half_degree: int
    deg_phi: int
    cls: LagrangianClass
    status: str
    trajectory_sums: np.ndarray = field(default_factory=lambda: np.zeros(0))
    notes: list = field(default_factory=list)
    weighting: str = "time"

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def gram_norms(self) -> dict:
        out = {}
        for name, G in (("Cx", self.gram_x), ("Cu", self.gram_u)):
            out[name] = {"frobenius": float(np.linalg.norm(G)),
                         "spectral": float(np.linalg.norm(G, 2)) if G.size else 0.0}
        return out


IOCP_SOLVER_OPTIONS = SolverOptions(gap_tol=1e-9, feas_tol=1e-9)


def solve_iocp(system: ControlSystem, db: TrajectoryDatabase, cls: LagrangianClass, deg_phi: int,
               options: SolverOptions | None = None, select: str | None = "lowest_degree",
               exact_tol: float = 1e-6, slack: float = 3e-7, **kw) -> IocpSolution:
    """Assemble and solve one level.

    When the data are certified exactly (``eps* <= exact_tol``) every member of a
    cone of exact Lagrangians is optimal and an interior-point solver returns a
    blend of them.  ``select="lowest_degree"`` then re-solves with
    ``eps <= eps* + slack`` minimizing the degree-weighted trace of the Gram
    blocks, which picks the lowest-degree Lagrangian of that face.
    """
    # the certified epsilon is limited by the feasibility residual of the
    # aggregated data row, so inverse problems default to tighter tolerances
    options = options or IOCP_SOLVER_OPTIONS
    asm = assemble(system, db, cls, deg_phi, **kw)
    raw = solve(asm.problem, options)
    retried = False
    if raw.status == "max_iter" and options is IOCP_SOLVER_OPTIONS:
        # large levels can stall short of the tight tolerances; fall back to the defaults
        raw, retried = solve(asm.problem, SolverOptions()), True
    sol = extract(asm, raw, db)
    if retried:
        sol.notes.append("tight tolerances stalled; solved at default tolerances")
    if select is None or not sol.optimal or sol.epsilon > exact_tol:
        return sol
    if select != "lowest_degree":
        raise ValueError(f"unknown selection rule {select!r}")
    prob = asm.problem
    ekey = free_key(asm.eps_id)
    prob.add_ineq({ekey: -1.0}, -(sol.epsilon + slack), "eps_face")
    weights = {}
    for g in (asm.gram_x, asm.gram_u):
        for i, mono in enumerate(g.basis.elements):
            if g.block is not None:
                weights[("b", g.block, i, i)] = float(sum(mono))
    prob.set_objective(weights)
    second = solve(prob, options)
    if not second.optimal and options is IOCP_SOLVER_OPTIONS:
        # the face is thin, so the tight defaults can stall; default tolerances suffice
        second = solve(prob, SolverOptions())
    if not second.optimal:
        sol.notes.append(f"lowest-degree selection skipped: {second.status}")
        return sol
    out = extract(asm, second, db)
    if out.epsilon > exact_tol:
        sol.notes.append(f"lowest-degree selection rejected: certifies only eps={out.epsilon:.3e}")
        return sol
    out.notes.append(f"lowest-degree selection within eps <= {sol.epsilon + slack:.3e}")
    return out


def extract(asm: IocpAssembly, sol: SdpSolution, db: TrajectoryDatabase | None = None) -> IocpSolution:
    def gram(g):
        if g.block is None or not sol.blocks:
            return np.zeros((g.size, g.size))
        return np.array(sol.blocks[g.block])

    Cx, Cu = gram(asm.gram_x), gram(asm.gram_u)
    phi = asm.phi.value_from(sol) if len(sol.free) else Polynomial.zero(asm.system.space)
    eps = float(sol.free[asm.eps_id]) if len(sol.free) else float("nan")
    notes = []
    if sol.optimal and asm.normalized:
        # the constraints other than the trace are a cone: rescaling removes the
        # solver's residual in the normalization without touching the others
        tr = float(np.trace(Cx) + np.trace(Cu))
        if tr > 0:
            s = asm.cls.C / tr
            Cx, Cu, phi, eps = Cx * s, Cu * s, phi * s, eps * s
    L = reconstruct(asm.gram_x, Cx) + reconstruct(asm.gram_u, Cu)
    if sol.optimal and eps < -1e-6:
        notes.append(f"negative epsilon {eps:.3e}: the data contradict the certificate")
    sums = np.zeros(0)
    if db is not None and sol.optimal:
        H = hjb_operator(L, phi, asm.system.f, asm.system.mode)
        sums = []
        for pts, w in db.per_trajectory_points():
            w = np.ones(len(pts)) if asm.weighting == "samples" else w
            sums.append(float(w @ H.evaluate_many(pts)))
        sums = np.array(sums)
        # report the epsilon the returned pair actually certifies on the data
        eps = max(eps, float(math.fsum(sums)))
        if asm.terminal_points is not None and len(asm.terminal_points):
            phiT = phi.substitute({asm.system.space.time_var: asm.system.horizon.T}) \
                if asm.system.fixed_time else phi
            pts = np.zeros((len(asm.terminal_points), asm.system.space.dim))
            pts[:, asm.system.space.indices(asm.system.space.state_vars)] = asm.terminal_points
            eps = max(eps, -float(np.min(phiT.evaluate_many(pts))))
    return IocpSolution(L, phi, eps, Cx, Cu, sol, asm.half_degree, asm.deg_phi, asm.cls,
                        sol.status, sums, notes, asm.weighting)


def hierarchy(system: ControlSystem, db: TrajectoryDatabase, cls: LagrangianClass, degrees,
              options: SolverOptions | None = None, mono_tol: float = 1e-7, **kw) -> list:
    """One solve per ``deg_phi``; failures are recorded and later levels still run."""
    out = []
    for d in degrees:
        try:
            out.append(solve_iocp(system, db, cls, d, options, **kw))
        except (CertificateError, ValueError, np.linalg.LinAlgError) as exc:
            out.append(IocpSolution(Polynomial.zero(system.space), Polynomial.zero(system.space),
                                    float("nan"), np.zeros((0, 0)), np.zeros((0, 0)), None, 0, d,
                                    cls, "error", notes=[str(exc)]))
    prev = None
    for s in out:
        if s.optimal:
            if prev is not None and s.epsilon > prev + mono_tol:
                s.notes.append(f"epsilon increased from {prev:.3e} to {s.epsilon:.3e}")
            prev = s.epsilon if prev is None else min(prev, s.epsilon)
    return out


def is_monotone(levels: list, tol: float = 1e-7) -> bool:
    eps = [s.epsilon for s in levels if s.optimal]
    return all(b <= a + tol for a, b in zip(eps, eps[1:]))


# -- verification ------------------------------------------------------------

@dataclass
class VerificationReport:
    min_H: float
    argmin_H: np.ndarray
    max_phi_XT: float
    argmax_phi_XT: np.ndarray
    terminal_min: float
    terminal_max: float
    integral: float
    epsilon: float
    trace: float | None
    grid_points: int
    checks: dict
    violations: list

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": dict(self.checks),
                "min_H": self.min_H, "argmin_H": np.asarray(self.argmin_H).tolist(),
                "max_phi_XT": self.max_phi_XT, "argmax_phi_XT": np.asarray(self.argmax_phi_XT).tolist(),
                "terminal_min": self.terminal_min, "terminal_max": self.terminal_max,
                "integral": self.integral, "epsilon": self.epsilon, "trace": self.trace,
                "grid_points": self.grid_points, "violations": list(self.violations)}


def set_grid(K: BasicSemialgebraicSet, min_points: int = 10_000, max_density: int = 200,
             intervals: dict | None = None) -> np.ndarray:
    """Regular grid on the bounding box of ``K`` restricted to ``K``.

    Equalities are met by Gauss-Newton projection of the box grid; coordinates
    pinned by affine equalities are fixed directly.  ``intervals`` overrides the
    box per variable.  Density grows until ``min_points`` points survive (or the
    set is a point).  Returned points are in the coordinates of ``K.variables``.
    """
    intervals = intervals or {}
    try:
        pinned = K._pinned_coordinates()
    except SamplingError:
        pinned = {}
    free_idx = [i for i in range(K.dim) if i not in pinned]
    R = K.bounding_radius
    los = np.array([intervals.get(K.variables[i], (-R, R))[0] for i in free_idx])
    his = np.array([intervals.get(K.variables[i], (-R, R))[1] for i in free_idx])
    if not free_idx:
        z = np.zeros((1, K.dim))
        for i, v in pinned.items():
            z[0, i] = v
        return z[K.contains_many(z, 1e-9)]
    density = max(3, int(math.ceil(min_points ** (1.0 / len(free_idx)))))
    while True:
        axes = [np.linspace(lo, hi, density) for lo, hi in zip(los, his)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(free_idx))
        z = np.zeros((len(mesh), K.dim))
        z[:, free_idx] = mesh
        for i, v in pinned.items():
            z[:, i] = v
        if K.equalities and len(pinned) < len(K.equalities):
            z = _project(K, z)
        keep = K.contains_many(z, 1e-9)
        z = z[keep]
        if len(z) >= min_points or density >= max_density:
            return z
        density = int(density * 1.3) + 1


def _project(K: BasicSemialgebraicSet, z: np.ndarray, iters: int = 30) -> np.ndarray:
    """Gauss-Newton steps toward ``{h = 0}`` (minimum-norm corrections)."""
    full_vars = K.variables
    space = K.space
    idx = space.indices(full_vars)
    grads = [[h.differentiate(v) for v in full_vars] for h in K.equalities]
    z = z.copy()
    for _ in range(iters):
        full = np.zeros((len(z), space.dim))
        full[:, idx] = z
        hv = np.column_stack([h.evaluate_many(full) for h in K.equalities])
        if np.max(np.abs(hv), initial=0.0) < 1e-13:
            break
        J = np.stack([np.column_stack([g.evaluate_many(full) for g in row]) for row in grads], axis=1)
        JJt = J @ np.transpose(J, (0, 2, 1)) + 1e-14 * np.eye(len(K.equalities))
        lam = np.linalg.solve(JJt, hv[..., None])
        z = z - (np.transpose(J, (0, 2, 1)) @ lam)[..., 0]
    # drop points at which the projection degenerated (e.g. the sphere's center)
    return z[np.all(np.isfinite(z), axis=1)]


def verify_certificate(system: ControlSystem, db: TrajectoryDatabase, sol: IocpSolution,
                       grid_points: int = 10_000, tol_grid: float = 1e-6, tol: float = 1e-6,
                       trace_tol: float = 1e-8) -> VerificationReport:
    """Solver-independent check of a candidate ``(L, phi, eps)`` on grids and data."""
    space = system.space
    eps = float(sol.epsilon)
    L, phi = sol.L, sol.phi
    H = hjb_operator(L, phi, system.f, system.mode)
    violations = []

    # (i) H >= 0 on a grid of the positivity set, plus the data samples
    K = system.positivity_set()
    iv = {space.time_var: (0.0, system.horizon.T)} if system.fixed_time else None
    grid = set_grid(K, grid_points, intervals=iv)
    full = np.zeros((len(grid), space.dim))
    full[:, space.indices(K.variables)] = grid
    data, w = sample_weights(db, sol.weighting)
    pts = np.vstack([full, data])
    Hv = H.evaluate_many(pts)
    k = int(np.argmin(Hv))
    min_H, argmin_H = float(Hv[k]), pts[k]
    ok_pos = min_H >= -tol_grid
    if not ok_pos:
        violations.append(f"H = {min_H:.3e} < 0 at {dict(zip(space.names, argmin_H.round(6)))}")

    # (ii) phi(T, .) <= 0 on X_T; -eps <= phi(T, x_end) <= 0 at terminal samples
    phiT = phi.substitute({space.time_var: system.horizon.T}) if system.fixed_time else phi
    XT = system.X_T
    g2 = set_grid(XT, grid_points)
    full2 = np.zeros((len(g2), space.dim))
    full2[:, space.indices(XT.variables)] = g2
    pv = phiT.evaluate_many(full2) if len(full2) else np.zeros(0)
    if len(pv):
        k2 = int(np.argmax(pv))
        max_phi, argmax_phi = float(pv[k2]), full2[k2]
    else:
        max_phi, argmax_phi = -np.inf, np.zeros(space.dim)
    term = db.terminal_states()
    full3 = np.zeros((len(term), space.dim))
    full3[:, space.indices(space.state_vars)] = term
    tv = phiT.evaluate_many(full3) if len(term) else np.zeros(1)
    tmin, tmax = float(tv.min()), float(tv.max())
    ok_upper = max_phi <= tol and tmax <= tol
    ok_lower = tmin >= -eps - tol
    if max_phi > tol:
        violations.append(f"phi(T,x) = {max_phi:.3e} > 0 at {dict(zip(space.names, argmax_phi.round(6)))}")
    if tmax > tol:
        j = int(np.argmax(tv))
        violations.append(f"phi(T,x_end) = {tmax:.3e} > 0 at terminal state {term[j].round(6).tolist()}")
    if not ok_lower:
        j = int(np.argmin(tv))
        violations.append(f"phi(T,x_end) = {tmin:.3e} < -eps at terminal state {term[j].round(6).tolist()}")

    # (iii) Riemann sum of H along the data
    integral = float(w @ H.evaluate_many(data))
    ok_int = integral <= eps + tol
    if not ok_int:
        violations.append(f"data integral {integral:.3e} exceeds eps = {eps:.3e}")

    # (iv) normalization
    trace = None
    ok_tr = True
    if sol.gram_x.size or sol.gram_u.size:
        trace = float(np.trace(sol.gram_x) + np.trace(sol.gram_u))
        ok_tr = abs(trace - sol.cls.C) <= trace_tol
        if not ok_tr:
            violations.append(f"trace {trace:.12g} != {sol.cls.C}")

    checks = {"positivity": ok_pos, "boundary_upper": ok_upper, "boundary_lower": ok_lower,
              "integral": ok_int, "normalization": ok_tr}
    return VerificationReport(min_H, argmin_H, max_phi, argmax_phi, tmin, tmax, integral, eps,
                              trace, len(pts) + len(full2), checks, violations)


# -- comparison --------------------------------------------------------------

@dataclass
class SimilarityReport:
    similarity: float
    monomials: list
    v1: np.ndarray
    v2: np.ndarray
    residuals: np.ndarray
    threshold: float = 0.99

    @property
    def good(self) -> bool:
        return self.similarity >= self.threshold

    def residual_table(self) -> list:
        return list(zip(self.monomials, self.residuals.tolist()))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot compare the zero polynomial")
    v = v / n
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def compare_lagrangians(L1: Polynomial, L2: Polynomial, threshold: float = 0.99) -> SimilarityReport:
    """Cosine similarity of the unit-normalized, sign-fixed coefficient vectors."""
    if L1.space != L2.space:
        raise ValueError("Lagrangians live in different variable spaces")
    monos = sorted(set(L1.terms) | set(L2.terms), key=lambda m: (sum(m), tuple(-e for e in m)))
    v1 = _unit(np.array([L1.terms.get(m, 0.0) for m in monos]))
    v2 = _unit(np.array([L2.terms.get(m, 0.0) for m in monos]))
    return SimilarityReport(float(v1 @ v2), monos, v1, v2, v1 - v2, threshold)


def scale_to(L: Polynomial, reference: Polynomial) -> Polynomial:
    """Least-squares multiple of ``L`` closest to ``reference``."""
    monos = sorted(set(L.terms) | set(reference.terms))
    a = np.array([L.terms.get(m, 0.0) for m in monos])
    b = np.array([reference.terms.get(m, 0.0) for m in monos])
    return L * float(a @ b / (a @ a))


# -- result bundles ----------------------------------------------------------

def _poly_terms(p: Polynomial) -> list:
    return [[repr(float(c)), list(m)] for m, c in p.items()]


def result_bundle(sol: IocpSolution, system: ControlSystem, problem: str = "custom",
                  report: VerificationReport | None = None, extra: dict | None = None) -> dict:
    sdp = sol.sdp
    out = {
        "problem": problem, "class": [sol.cls.a, sol.cls.b], "C": sol.cls.C,
        "constant": sol.cls.constant, "weighting": sol.weighting,
        "deg_phi": sol.deg_phi, "half_degree": sol.half_degree,
        "epsilon": sol.epsilon, "status": sol.status,
        "system": system.to_dict(),
        "L": sol.L.to_string(), "phi": sol.phi.to_string(),
        "L_terms": _poly_terms(sol.L), "phi_terms": _poly_terms(sol.phi),
        "gram_x": sol.gram_x.tolist(), "gram_u": sol.gram_u.tolist(),
        "gram_norms": sol.gram_norms(),
        "solver": None if sdp is None else {
            "iterations": sdp.iterations, "primal_objective": sdp.primal_objective,
            "dual_objective": sdp.dual_objective, "gap": sdp.gap,
            "max_violation": sdp.max_violation},
        "trajectory_sums": np.asarray(sol.trajectory_sums).tolist(),
        "notes": list(sol.notes),
        "verification": None if report is None else report.to_dict(),
    }
    if extra:
        out.update(extra)
    return out


def bundle_solution(bundle: dict) -> tuple[ControlSystem, IocpSolution]:
    """Rebuild (system, solution) from a result bundle (for verification)."""
    from .semialgebraic import _load_poly
    system = ControlSystem.from_dict(bundle["system"])
    L = _load_poly([[float(c), m] for c, m in bundle["L_terms"]], system.space)
    phi = _load_poly([[float(c), m] for c, m in bundle["phi_terms"]], system.space)
    a, b = bundle["class"]
    sol = IocpSolution(L, phi, float(bundle["epsilon"]), np.array(bundle["gram_x"], dtype=float),
                       np.array(bundle["gram_u"], dtype=float), None, bundle["half_degree"],
                       bundle["deg_phi"],
                       LagrangianClass(a, b, bundle.get("C", 1.0), bundle.get("constant")),
                       bundle["status"], weighting=bundle.get("weighting", "auto"))
    return system, sol


def csv_row(bundle: dict, similarity: float | None = None) -> str:
    buf = io.StringIO()
    csv.writer(buf).writerow([bundle["problem"], f"{bundle['class'][0]},{bundle['class'][1]}",
                              bundle["deg_phi"], f"{bundle['epsilon']:.17g}", bundle["status"],
                              "" if similarity is None else f"{similarity:.17g}", bundle["L"]])
    return buf.getvalue()


def dumps_bundle(bundle: dict) -> str:
    return json.dumps(bundle, indent=1, sort_keys=True)
