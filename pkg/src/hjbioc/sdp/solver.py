"""Primal-dual interior-point solver for block-diagonal SDPs.

Homogeneous self-dual embedding of the standard form

    min c.x   s.t.  A x = b,  x in R^f x R^l_+ x S^n1_+ x ... ,

Nesterov-Todd scaling, Mehrotra predictor-corrector steps.  Free variables
are kept in a saddle-point system ``[[M, A_f], [A_f^T, 0]]`` next to the Schur
complement ``M``.  Infeasibility is read off the ``tau/kappa`` pair.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import SdpProblem, StandardForm, to_standard_form

log = logging.getLogger(__name__)

STATUSES = ("optimal", "infeasible", "unbounded", "max_iter", "numerical_failure")


@dataclass
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    eig_tol: float = 1e-9
    max_iter: int = 200
    step_fraction: float = 0.99
    refine_steps: int = 3
    verbose: bool = False


@dataclass
class SdpSolution:
    status: str
    free: np.ndarray
    nonneg: np.ndarray
    blocks: list
    y_eq: np.ndarray
    y_ineq: np.ndarray
    dual_blocks: list = field(default_factory=list)
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    gap: float = float("nan")
    max_violation: float = float("nan")
    iterations: int = 0
    solve_time: float = 0.0
    log: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, key) -> float:
        if key[0] == "f":
            return float(self.free[key[1]])
        if key[0] == "n":
            return float(self.nonneg[key[1]])
        return float(self.blocks[key[1]][key[2], key[3]])


class _Scaled:
    """Row-equilibrated copy of a standard form plus the products the IPM needs."""

    def __init__(self, sf: StandardForm):
        sq = np.asarray(sf.A_free.multiply(sf.A_free).sum(axis=1), dtype=float).ravel()
        sq += np.asarray(sf.A_lp.multiply(sf.A_lp).sum(axis=1)).ravel()
        for A in sf.A_blocks:
            sq += np.asarray(A.multiply(A).sum(axis=1)).ravel()
        norms = np.sqrt(sq)
        self.zero_rows = norms == 0.0
        keep = ~self.zero_rows
        self.keep = np.flatnonzero(keep)
        d = 1.0 / norms[keep]
        D = sp.diags(d)
        self.row_scale = d
        self.A_f = (D @ sf.A_free[self.keep]).tocsr()
        self.A_l = (D @ sf.A_lp[self.keep]).tocsr()
        self.A_b = [(D @ A[self.keep]).tocsr() for A in sf.A_blocks]
        self.b = sf.b[self.keep] * d
        cnorm = np.sqrt(np.sum(sf.c_free ** 2) + np.sum(sf.c_lp ** 2)
                        + sum(np.sum(C ** 2) for C in sf.C_blocks))
        self.c_scale = max(1.0, cnorm)
        self.c_f = sf.c_free / self.c_scale
        self.c_l = sf.c_lp / self.c_scale
        self.C_b = [C / self.c_scale for C in sf.C_blocks]
        self.sizes = sf.block_sizes
        self.m = len(self.keep)
        self.nf = self.A_f.shape[1]
        self.nl = self.A_l.shape[1]
        self.A_fT = self.A_f.T.tocsr()
        self.A_lT = self.A_l.T.tocsr()
        self.A_bT = [A.T.tocsr() for A in self.A_b]
        # per block: active rows and the (rows*n, n) stacking used for W A_i W
        self.active = []
        self.stacked = []
        for A, n in zip(self.A_b, self.sizes):
            rows = np.flatnonzero(np.diff(A.indptr))
            sub = A[rows].tocoo()
            stacked = sp.csr_matrix((sub.data, (sub.row * n + sub.col // n, sub.col % n)),
                                    shape=(len(rows) * n, n))
            self.active.append(rows)
            self.stacked.append(stacked)

    def A(self, xf, xl, Xs):
        out = self.A_f @ xf + self.A_l @ xl
        for Ab, X in zip(self.A_b, Xs):
            out += Ab @ X.ravel()
        return out

    def AT(self, y):
        return (self.A_fT @ y, self.A_lT @ y,
                [(AT @ y).reshape(n, n) for AT, n in zip(self.A_bT, self.sizes)])

    def AK(self, vl, Vs):
        out = self.A_l @ vl
        for Ab, V in zip(self.A_b, Vs):
            out += Ab @ V.ravel()
        return out


def _sym(X):
    return 0.5 * (X + X.T)


class _NtBlock:
    """NT scaling of one PSD block: R with R^-1 X R^-T = R^T Z R = diag(lam)."""

    def __init__(self, X, Z):
        Lx = np.linalg.cholesky(X)
        Lz = np.linalg.cholesky(Z)
        U, lam, Vt = np.linalg.svd(Lz.T @ Lx)
        isq = 1.0 / np.sqrt(lam)
        self.lam = lam
        self.R = (Lx @ Vt.T) * isq
        self.Rinv = (U.T @ Lz.T) * isq[:, None]
        self.W = self.R @ self.R.T

    def apply_w(self, V):
        return _sym(self.W @ V @ self.W)

    def scaled_x(self, dX):
        return self.Rinv @ dX @ self.Rinv.T

    def scaled_z(self, dZ):
        return self.R.T @ dZ @ self.R

    def max_step(self, ds):
        """Largest alpha with diag(lam) + alpha*ds PSD."""
        isq = 1.0 / np.sqrt(self.lam)
        T = _sym(ds * isq[:, None] * isq[None, :])
        emin = np.linalg.eigvalsh(T)[0]
        return np.inf if emin >= 0 else -1.0 / emin


def _max_step_lp(x, dx):
    neg = dx < 0
    if not neg.any():
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def solve(problem: SdpProblem, options: SolverOptions | None = None) -> SdpSolution:
    """Solve ``problem`` (minimization).  Non-convergence is reported as a status."""
    opts = options or SolverOptions()
    t_start = time.perf_counter()
    sf = to_standard_form(problem)
    S = _Scaled(sf)
    lines: list[str] = []

    def finish(status, xf, xl, Xs, y, Zs, tau, it):
        return _unscale(problem, sf, S, status, xf, xl, Xs, y, Zs, tau, it,
                        time.perf_counter() - t_start, lines)

    if np.any(sf.b[S.zero_rows] != 0):
        lines.append("presolve: constraint with no variables and nonzero right-hand side")
        return finish("infeasible", np.zeros(S.nf), np.ones(S.nl),
                      [np.eye(n) for n in S.sizes], np.zeros(S.m),
                      [np.eye(n) for n in S.sizes], 1.0, 0)

    nu = S.nl + sum(S.sizes)
    xf = np.zeros(S.nf)
    xl = np.ones(S.nl)
    zl = np.ones(S.nl)
    Xs = [np.eye(n) for n in S.sizes]
    Zs = [np.eye(n) for n in S.sizes]
    y = np.zeros(S.m)
    tau = kappa = 1.0
    bnorm = 1.0 + np.linalg.norm(S.b)
    cnorm = 1.0 + np.sqrt(np.sum(S.c_f ** 2) + np.sum(S.c_l ** 2)
                          + sum(np.sum(C ** 2) for C in S.C_b))
    status = "max_iter"
    stall = 0
    if opts.verbose:
        log.info("%4s %14s %14s %9s %9s %9s %9s %7s", "it", "pobj", "dobj", "gap", "pres", "dres",
                 "compl", "step")
    it = 0
    for it in range(opts.max_iter + 1):
        # residuals of the embedding
        rp = S.b * tau - S.A(xf, xl, Xs)
        ATy_f, ATy_l, ATy_b = S.AT(y)
        rd_f = S.c_f * tau - ATy_f
        rd_l = S.c_l * tau - ATy_l - zl
        rd_b = [C * tau - ATy - Z for C, ATy, Z in zip(S.C_b, ATy_b, Zs)]
        cx = S.c_f @ xf + S.c_l @ xl + sum(np.sum(C * X) for C, X in zip(S.C_b, Xs))
        by = S.b @ y
        rg = kappa + cx - by
        xz = xl @ zl + sum(np.sum(X * Z) for X, Z in zip(Xs, Zs))
        mu = (xz + tau * kappa) / (nu + 1)

        # residuals relative to the data and to the size of the iterate
        xnorm = np.sqrt(xf @ xf + xl @ xl + sum(np.sum(X * X) for X in Xs)) / tau
        ynorm = np.sqrt(np.sum(ATy_f ** 2) + np.sum(ATy_l ** 2)
                        + sum(np.sum(A * A) for A in ATy_b)) / tau
        pres = np.linalg.norm(rp) / tau / (bnorm + xnorm)
        dres = np.sqrt(np.sum(rd_f ** 2) + np.sum(rd_l ** 2)
                       + sum(np.sum(R ** 2) for R in rd_b)) / tau / (cnorm + ynorm)
        pobj, dobj = cx / tau, by / tau
        gap = abs(pobj - dobj) / (1.0 + min(abs(pobj), abs(dobj)))
        compl = xz / tau ** 2 / (1.0 + abs(pobj))
        line = (f"{it:4d} {pobj * S.c_scale:+.7e} {dobj * S.c_scale:+.7e} {gap:9.2e} "
                f"{pres:9.2e} {dres:9.2e} {compl:9.2e}")
        if pres <= opts.feas_tol and dres <= opts.feas_tol and gap <= opts.gap_tol:
            status = "optimal"
            lines.append(line + "  optimal")
            break
        # infeasibility certificates from the tau/kappa pair
        if by > 0:
            res = np.sqrt(np.sum(ATy_f ** 2) + np.sum((ATy_l + zl) ** 2)
                          + sum(np.sum((A + Z) ** 2) for A, Z in zip(ATy_b, Zs)))
            if res / by <= opts.feas_tol and tau <= 1e-2 * kappa:
                status = "infeasible"
                lines.append(line + "  primal infeasible")
                break
        if cx < 0:
            res = np.linalg.norm(S.A(xf, xl, Xs))
            if res / -cx <= opts.feas_tol and tau <= 1e-2 * kappa:
                status = "unbounded"
                lines.append(line + "  dual infeasible")
                break
        if it == opts.max_iter:
            lines.append(line)
            break

        try:
            step = _iterate(S, opts, xf, xl, zl, Xs, Zs, y, tau, kappa,
                            rp, rd_f, rd_l, rd_b, rg, mu)
        except (np.linalg.LinAlgError, sla.LinAlgError, FloatingPointError) as err:
            lines.append(line + f"  linear algebra failure: {err}")
            status = "numerical_failure"
            break
        xf, xl, zl, Xs, Zs, y, tau, kappa, alpha = step
        lines.append(line + f" {alpha:7.4f}")
        if opts.verbose:
            log.info(line + f" {alpha:7.4f}")
        if not np.isfinite(tau) or not np.isfinite(kappa):
            status = "numerical_failure"
            break
        stall = stall + 1 if alpha < 1e-6 else 0
        if stall >= 5:
            status = "numerical_failure"
            lines.append("step length stalled")
            break
    return finish(status, xf / tau, xl / tau, [X / tau for X in Xs], y / tau,
                  [Z / tau for Z in Zs], tau, it)


def _iterate(S: _Scaled, opts, xf, xl, zl, Xs, Zs, y, tau, kappa,
             rp, rd_f, rd_l, rd_b, rg, mu):
    nt = [_NtBlock(X, Z) for X, Z in zip(Xs, Zs)]
    wl = xl / zl
    lam_l = np.sqrt(xl * zl)

    # Schur complement and saddle system
    m = S.m
    M = np.zeros((m, m))
    if S.nl:
        M += (S.A_l.multiply(wl[None, :]) @ S.A_lT).toarray()
    for k, blk in enumerate(nt):
        rows = S.active[k]
        if not len(rows):
            continue
        n = S.sizes[k]
        T = (S.stacked[k] @ blk.W).reshape(len(rows), n, n)   # A_i W
        D = np.matmul(blk.W, T).reshape(len(rows), n * n)      # W A_i W
        M[np.ix_(rows, rows)] += (S.A_b[k][rows] @ D.T)
    M = _sym(M)
    K = np.zeros((m + S.nf, m + S.nf))
    K[:m, :m] = M
    Af = S.A_f.toarray()
    K[:m, m:] = Af
    K[m:, :m] = Af.T
    # per-row regularization: inactive inequality rows make diag(M) span many decades
    Kreg = K.copy()
    Kreg[np.diag_indices(m)] += 1e-13 * np.maximum(np.diag(M), 1.0)
    Kreg[m + np.arange(S.nf), m + np.arange(S.nf)] -= 1e-13
    lu = sla.lu_factor(Kreg, check_finite=True)

    def ksolve(rhs):
        sol = sla.lu_solve(lu, rhs)
        for _ in range(opts.refine_steps):
            r = rhs - K @ sol
            if np.linalg.norm(r) <= 1e-15 * (1.0 + np.linalg.norm(rhs)):
                break
            sol = sol + sla.lu_solve(lu, r)
        return sol

    def W_l(v):
        return wl * v

    def W_b(Vs):
        return [blk.apply_w(V) for blk, V in zip(nt, Vs)]

    def cK_dot(vl, Vs):
        return S.c_l @ vl + sum(np.sum(C * V) for C, V in zip(S.C_b, Vs))

    Wc_l, Wc_b = W_l(S.c_l), W_b(S.C_b)
    q = np.concatenate([S.b + S.AK(Wc_l, Wc_b), S.c_f])
    v = ksolve(q)
    v_y, v_f = v[:m], v[m:]
    vT_f, vT_l, vT_b = S.AT(v_y)
    alpha1 = S.c_f @ v_f + cK_dot(W_l(vT_l) - Wc_l,
                                  [Wv - Wc for Wv, Wc in zip(W_b(vT_b), Wc_b)])
    denom_base = -alpha1 + S.b @ v_y + kappa / tau
    Wrd_l, Wrd_b = W_l(rd_l), W_b(rd_b)

    def newton(eta, rxz_l, rxz_b, rtk):
        h = np.concatenate([eta * rp - S.AK(rxz_l, rxz_b) + eta * S.AK(Wrd_l, Wrd_b),
                            eta * rd_f])
        u = ksolve(h)
        u_y, u_f = u[:m], u[m:]
        uT_f, uT_l, uT_b = S.AT(u_y)
        alpha0 = S.c_f @ u_f + cK_dot(rxz_l - eta * Wrd_l + W_l(uT_l),
                                      [r - eta * w + wu for r, w, wu in
                                       zip(rxz_b, Wrd_b, W_b(uT_b))])
        dtau = (eta * rg + alpha0 - S.b @ u_y + rtk / tau) / denom_base
        dy = u_y + dtau * v_y
        dxf = u_f + dtau * v_f
        dT_f, dT_l, dT_b = S.AT(dy)
        dzl = eta * rd_l - dT_l + S.c_l * dtau
        dZs = [_sym(eta * r - a + C * dtau) for r, a, C in zip(rd_b, dT_b, S.C_b)]
        dxl = rxz_l - W_l(dzl)
        dXs = [_sym(r - w) for r, w in zip(rxz_b, W_b(dZs))]
        dkappa = (rtk - kappa * dtau) / tau
        return dxf, dxl, dzl, dXs, dZs, dy, dtau, dkappa

    def step_length(dxl, dzl, dXs, dZs, dtau, dkappa):
        a = min(_max_step_lp(xl, dxl), _max_step_lp(zl, dzl),
                _max_step_lp(np.array([tau, kappa]), np.array([dtau, dkappa])))
        sx, sz = [], []
        for blk, dX, dZ in zip(nt, dXs, dZs):
            dxs, dzs = blk.scaled_x(dX), blk.scaled_z(dZ)
            sx.append(dxs)
            sz.append(dzs)
            a = min(a, blk.max_step(dxs), blk.max_step(dzs))
        return a, sx, sz

    # predictor
    rxz_l = -xl
    rxz_b = [X.copy() * -1.0 for X in Xs]
    aff = newton(1.0, rxz_l, rxz_b, -tau * kappa)
    a_aff, sx, sz = step_length(aff[1], aff[2], aff[3], aff[4], aff[6], aff[7])
    a_aff = min(1.0, a_aff)
    sigma = min(1.0, max(0.0, 1.0 - a_aff)) ** 3

    # corrector with second-order term in the scaled space
    target = sigma * mu
    corr_l = aff[1] * aff[2]
    rxz_l = (target - xl * zl - corr_l) / zl
    rxz_b = []
    for blk, dxs, dzs in zip(nt, sx, sz):
        lam = blk.lam
        rhs = np.diag(target - lam ** 2) - _sym(dxs @ dzs)
        sol = 2.0 * rhs / (lam[:, None] + lam[None, :])
        rxz_b.append(_sym(blk.R @ sol @ blk.R.T))
    rtk = target - tau * kappa - aff[6] * aff[7]
    dxf, dxl, dzl, dXs, dZs, dy, dtau, dkappa = newton(1.0 - sigma, rxz_l, rxz_b, rtk)
    a_max, _, _ = step_length(dxl, dzl, dXs, dZs, dtau, dkappa)
    alpha = min(1.0, opts.step_fraction * a_max)
    # rounding can push a nearly singular block out of the cone: back off until all factor
    for _ in range(30):
        Xn = [_sym(X + alpha * d) for X, d in zip(Xs, dXs)]
        Zn = [_sym(Z + alpha * d) for Z, d in zip(Zs, dZs)]
        if all(_is_pd(A) for A in Xn + Zn):
            break
        alpha *= 0.8
    else:
        raise np.linalg.LinAlgError("no step keeps the iterate inside the cone")
    return (xf + alpha * dxf, xl + alpha * dxl, zl + alpha * dzl, Xn, Zn,
            y + alpha * dy, tau + alpha * dtau, kappa + alpha * dkappa, alpha)


def _is_pd(A) -> bool:
    try:
        np.linalg.cholesky(A)
        return True
    except np.linalg.LinAlgError:
        return False


def _unscale(problem: SdpProblem, sf: StandardForm, S: _Scaled, status, xf, xl, Xs, y, Zs,
             tau, it, elapsed, lines) -> SdpSolution:
    y_full = np.zeros(sf.m)
    y_full[S.keep] = y * S.row_scale * S.c_scale
    Zs = [Z * S.c_scale for Z in Zs]
    n_eq = problem.n_eq
    nn = sf.n_user_nonneg
    sol = SdpSolution(status=status, free=np.asarray(xf, float), nonneg=np.asarray(xl[:nn], float),
                      blocks=[np.asarray(X) for X in Xs], y_eq=y_full[:n_eq],
                      y_ineq=y_full[n_eq:], dual_blocks=Zs, iterations=it,
                      solve_time=elapsed, log=lines)
    sol.primal_objective = problem.objective_constant + sum(
        c * sol.value(k) for k, c in problem.objective.items())
    sol.dual_objective = problem.objective_constant + float(sf.b @ y_full)
    sol.gap = sol.primal_objective - sol.dual_objective
    report = validate_solution(problem, sol)
    sol.max_violation = report.max_violation
    return sol


@dataclass
class ValidationReport:
    eq_residual: float
    ineq_violation: float
    block_min_eigs: list
    psd_violation: float
    max_violation: float
    primal_objective: float
    notes: list = field(default_factory=list)

    def ok(self, feas_tol: float = 1e-8, eig_tol: float = 1e-9) -> bool:
        return (self.eq_residual <= feas_tol and self.ineq_violation <= feas_tol
                and self.psd_violation <= eig_tol)


def validate_solution(problem: SdpProblem, sol: SdpSolution) -> ValidationReport:
    """Recompute residuals and eigenvalue bounds from the raw primal values."""
    notes = []
    if sol.status in ("infeasible", "unbounded"):
        notes.append(f"status {sol.status}: no primal certificate available")
    free, nonneg, blocks = sol.free, sol.nonneg, sol.blocks
    eq_res = max((abs(problem.row_value(r, free, nonneg, blocks) - b)
                  for r, b in zip(problem.eq_rows, problem.eq_rhs)), default=0.0)
    ineq_v = max((max(0.0, b - problem.row_value(r, free, nonneg, blocks))
                  for r, b in zip(problem.ineq_rows, problem.ineq_rhs)), default=0.0)
    if len(nonneg):
        ineq_v = max(ineq_v, float(np.max(-nonneg, initial=0.0)))
    eigs = [float(np.linalg.eigvalsh(_sym(X))[0]) for X in blocks]
    psd_v = max([max(0.0, -e) for e in eigs], default=0.0)
    for k, e in enumerate(eigs):
        if e < 0:
            notes.append(f"block {problem.block_names[k]}: min eigenvalue {e:.3e}")
    pobj = problem.objective_constant + sum(
        c * sol.value(k) for k, c in problem.objective.items())
    return ValidationReport(eq_res, ineq_v, eigs, psd_v, max(eq_res, ineq_v, psd_v), pobj, notes)
