"""Block-diagonal semidefinite programs in builder form.

Variables are referenced by keys:

* ``("f", k)`` -- k-th free scalar,
* ``("n", k)`` -- k-th nonnegative scalar,
* ``("b", blk, i, j)`` with ``i <= j`` -- entry ``X_ij`` of PSD block ``blk``.

A linear row is a dict ``key -> coefficient``; a block key with ``i < j``
contributes ``coef * X_ij`` (the matrix being symmetric, this is *not* doubled).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


def free_key(k: int) -> tuple:
    return ("f", k)


def nonneg_key(k: int) -> tuple:
    return ("n", k)


def block_key(blk: int, i: int, j: int) -> tuple:
    return ("b", blk, i, j) if i <= j else ("b", blk, j, i)


class ProblemError(ValueError):
    pass


@dataclass
class SdpProblem:
    block_sizes: list = field(default_factory=list)
    block_names: list = field(default_factory=list)
    free_names: list = field(default_factory=list)
    nonneg_names: list = field(default_factory=list)
    eq_rows: list = field(default_factory=list)
    eq_rhs: list = field(default_factory=list)
    eq_names: list = field(default_factory=list)
    ineq_rows: list = field(default_factory=list)   # row . v >= rhs
    ineq_rhs: list = field(default_factory=list)
    ineq_names: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)   # minimized
    objective_constant: float = 0.0

    def __post_init__(self):
        self._ids = itertools.count(len(self.block_sizes))

    # -- construction -------------------------------------------------------
    def add_block(self, size: int, name: str | None = None) -> int:
        if size < 1:
            raise ProblemError("PSD block size must be positive")
        blk = next(self._ids)
        assert blk == len(self.block_sizes)
        self.block_sizes.append(int(size))
        self.block_names.append(name or f"X{blk}")
        return blk

    def add_free(self, name: str | None = None) -> int:
        self.free_names.append(name or f"f{len(self.free_names)}")
        return len(self.free_names) - 1

    def add_nonneg(self, name: str | None = None) -> int:
        self.nonneg_names.append(name or f"n{len(self.nonneg_names)}")
        return len(self.nonneg_names) - 1

    def add_eq(self, row: dict, rhs: float = 0.0, name: str | None = None) -> int:
        self._check_row(row)
        self.eq_rows.append(dict(row))
        self.eq_rhs.append(float(rhs))
        self.eq_names.append(name or f"eq{len(self.eq_rows) - 1}")
        return len(self.eq_rows) - 1

    def add_ineq(self, row: dict, rhs: float = 0.0, name: str | None = None) -> int:
        """Add ``row . v >= rhs``."""
        self._check_row(row)
        self.ineq_rows.append(dict(row))
        self.ineq_rhs.append(float(rhs))
        self.ineq_names.append(name or f"ineq{len(self.ineq_rows) - 1}")
        return len(self.ineq_rows) - 1

    def set_objective(self, row: dict, constant: float = 0.0) -> None:
        self._check_row(row)
        self.objective = dict(row)
        self.objective_constant = float(constant)

    def _check_row(self, row: dict) -> None:
        for key in row:
            self.check_key(key)

    def check_key(self, key) -> None:
        kind = key[0]
        if kind == "f" and 0 <= key[1] < len(self.free_names):
            return
        if kind == "n" and 0 <= key[1] < len(self.nonneg_names):
            return
        if kind == "b" and 0 <= key[1] < len(self.block_sizes):
            n = self.block_sizes[key[1]]
            if 0 <= key[2] <= key[3] < n:
                return
        raise ProblemError(f"undeclared variable reference {key!r}")

    # -- queries ------------------------------------------------------------
    @property
    def n_free(self) -> int:
        return len(self.free_names)

    @property
    def n_nonneg(self) -> int:
        return len(self.nonneg_names)

    @property
    def n_eq(self) -> int:
        return len(self.eq_rows)

    @property
    def n_ineq(self) -> int:
        return len(self.ineq_rows)

    def is_empty(self) -> bool:
        return not (self.block_sizes or self.free_names or self.nonneg_names)

    def validate(self) -> None:
        if self.is_empty() or (not self.objective and not self.eq_rows and not self.ineq_rows):
            raise ProblemError("empty problem: no variables, objective or constraints")
        for row in self.eq_rows + self.ineq_rows + [self.objective]:
            self._check_row(row)

    def size_summary(self) -> dict:
        return {"psd_blocks": list(self.block_sizes), "free": self.n_free,
                "nonneg": self.n_nonneg, "eq": self.n_eq, "ineq": self.n_ineq}

    def row_value(self, row: dict, free, nonneg, blocks) -> float:
        total = 0.0
        for key, c in row.items():
            if key[0] == "f":
                total += c * free[key[1]]
            elif key[0] == "n":
                total += c * nonneg[key[1]]
            else:
                total += c * blocks[key[1]][key[2], key[3]]
        return total

    def copy(self) -> "SdpProblem":
        return SdpProblem(list(self.block_sizes), list(self.block_names), list(self.free_names),
                          list(self.nonneg_names), [dict(r) for r in self.eq_rows],
                          list(self.eq_rhs), list(self.eq_names),
                          [dict(r) for r in self.ineq_rows], list(self.ineq_rhs),
                          list(self.ineq_names), dict(self.objective), self.objective_constant)


@dataclass
class StandardForm:
    """``min c.x  s.t.  A x = b`` with x split into free, nonnegative and PSD parts.

    Inequalities of the builder form become equalities with a nonnegative slack
    appended after the user's nonnegative scalars.
    """

    m: int
    A_free: sp.csr_matrix
    A_lp: sp.csr_matrix
    A_blocks: list            # csr (m, n*n), each row a symmetric matrix in vec form
    b: np.ndarray
    c_free: np.ndarray
    c_lp: np.ndarray
    C_blocks: list
    block_sizes: list
    n_user_nonneg: int


def _row_entries(row: dict, n_free: int, n_nn: int, sizes: list):
    """Split one builder row into (free, nonneg, per-block) coordinate lists."""
    fr, nn = [], []
    blk: dict = {}
    for key, c in row.items():
        if c == 0.0:
            continue
        if key[0] == "f":
            fr.append((key[1], c))
        elif key[0] == "n":
            nn.append((key[1], c))
        else:
            _, b, i, j = key
            n = sizes[b]
            lst = blk.setdefault(b, [])
            if i == j:
                lst.append((i * n + i, c))
            else:
                lst.append((i * n + j, 0.5 * c))
                lst.append((j * n + i, 0.5 * c))
    return fr, nn, blk


def to_standard_form(p: SdpProblem) -> StandardForm:
    p.validate()
    sizes = list(p.block_sizes)
    n_free, n_nn = p.n_free, p.n_nonneg
    rows = p.eq_rows + p.ineq_rows
    m = len(rows)
    n_lp = n_nn + p.n_ineq
    fi, fj, fv = [], [], []
    li, lj, lv = [], [], []
    bi = [[] for _ in sizes]
    bj = [[] for _ in sizes]
    bv = [[] for _ in sizes]
    for r, row in enumerate(rows):
        fr, nn, blk = _row_entries(row, n_free, n_nn, sizes)
        for k, c in fr:
            fi.append(r), fj.append(k), fv.append(c)
        for k, c in nn:
            li.append(r), lj.append(k), lv.append(c)
        for b, lst in blk.items():
            for k, c in lst:
                bi[b].append(r), bj[b].append(k), bv[b].append(c)
    for k in range(p.n_ineq):
        li.append(p.n_eq + k), lj.append(n_nn + k), lv.append(-1.0)
    A_free = sp.csr_matrix((fv, (fi, fj)), shape=(m, n_free), dtype=float)
    A_lp = sp.csr_matrix((lv, (li, lj)), shape=(m, n_lp), dtype=float)
    A_blocks = [sp.csr_matrix((bv[b], (bi[b], bj[b])), shape=(m, n * n), dtype=float)
                for b, n in enumerate(sizes)]
    b = np.array(p.eq_rhs + p.ineq_rhs, dtype=float)
    c_free = np.zeros(n_free)
    c_lp = np.zeros(n_lp)
    C_blocks = [np.zeros((n, n)) for n in sizes]
    fr, nn, blk = _row_entries(p.objective, n_free, n_nn, sizes)
    for k, c in fr:
        c_free[k] += c
    for k, c in nn:
        c_lp[k] += c
    for bb, lst in blk.items():
        n = sizes[bb]
        for k, c in lst:
            C_blocks[bb][k // n, k % n] += c
    for A in A_blocks:
        A.sum_duplicates()
    return StandardForm(m, A_free, A_lp, A_blocks, b, c_free, c_lp, C_blocks, sizes, n_nn)
