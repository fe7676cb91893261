"""Sum-of-squares machinery: Gram parametrizations and Putinar certificates.

A :class:`PolyTemplate` is a polynomial whose coefficients are affine in SDP
decision variables.  :func:`compile_positivity` turns ``q >= 0 on K`` into
``q = sigma_0 + sum_i sigma_i g_i + sum_j lambda_j h_j`` with Gram blocks for the
SOS multipliers, matching coefficients monomial by monomial.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .polynomial import (MonomialBasis, Polynomial, VariableSpace, _monomial_values, grlex_key,
                         monomial_basis)
from .sdp import SdpProblem, block_key, free_key
from .semialgebraic import BasicSemialgebraicSet

CONST = None  # key of the known (variable-free) part of a template coefficient


class CertificateError(ValueError):
    pass


def _add_into(dst: dict, src: Mapping, scale: float = 1.0) -> None:
    for k, c in src.items():
        v = dst.get(k, 0.0) + scale * c
        if v == 0.0:
            dst.pop(k, None)
        else:
            dst[k] = v


class PolyTemplate:
    """Polynomial with coefficients ``const + sum_k a_k v_k`` in decision variables ``v``."""

    def __init__(self, space: VariableSpace, terms: Mapping | None = None):
        self.space = space
        self.terms: dict = {}
        for mono, lin in (terms or {}).items():
            lin = {k: float(c) for k, c in lin.items() if c != 0.0}
            if lin:
                self.terms[tuple(mono)] = lin

    @classmethod
    def from_polynomial(cls, p: Polynomial) -> "PolyTemplate":
        return cls(p.space, {m: {CONST: c} for m, c in p.terms.items()})

    @classmethod
    def free_polynomial(cls, problem: SdpProblem, basis: MonomialBasis,
                        prefix: str = "c") -> tuple["PolyTemplate", list[int]]:
        """Polynomial with one fresh free scalar per basis monomial."""
        ids = [problem.add_free(f"{prefix}[{i}]") for i in range(len(basis))]
        return cls(basis.space, {m: {free_key(k): 1.0} for m, k in zip(basis, ids)}), ids

    @classmethod
    def from_gram(cls, g: "GramVariable") -> "PolyTemplate":
        terms: dict = {}
        for mono, (keys, coefs) in g.coefficient_map().items():
            terms[mono] = dict(zip(keys, coefs))
        return cls(g.basis.space, terms)

    def copy(self) -> "PolyTemplate":
        return PolyTemplate(self.space, {m: dict(l) for m, l in self.terms.items()})

    @property
    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=0)

    def used_variables(self) -> set:
        return {self.space.names[i] for m in self.terms for i, e in enumerate(m) if e}

    def monomials(self) -> list:
        return sorted(self.terms, key=grlex_key)

    def keys(self) -> set:
        return {k for lin in self.terms.values() for k in lin if k is not CONST}

    def __add__(self, other):
        if isinstance(other, Polynomial):
            other = PolyTemplate.from_polynomial(other)
        if not isinstance(other, PolyTemplate):
            return NotImplemented
        if other.space != self.space:
            raise ValueError("templates live in different spaces")
        out = self.copy()
        for m, lin in other.terms.items():
            dst = out.terms.setdefault(m, {})
            _add_into(dst, lin)
            if not dst:
                del out.terms[m]
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if isinstance(other, Polynomial):
            other = PolyTemplate.from_polynomial(other)
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return PolyTemplate(self.space, {m: {k: c * float(other) for k, c in l.items()}
                                             for m, l in self.terms.items()})
        if isinstance(other, Polynomial):
            if other.space != self.space:
                raise ValueError("template and polynomial live in different spaces")
            out: dict = {}
            for m1, lin in self.terms.items():
                for m2, c2 in other.terms.items():
                    m = tuple(a + b for a, b in zip(m1, m2))
                    _add_into(out.setdefault(m, {}), lin, c2)
            return PolyTemplate(self.space, out)
        return NotImplemented

    __rmul__ = __mul__

    def differentiate(self, name: str) -> "PolyTemplate":
        i = self.space.index(name)
        out = {}
        for m, lin in self.terms.items():
            if m[i]:
                mm = list(m)
                mm[i] -= 1
                out[tuple(mm)] = {k: c * m[i] for k, c in lin.items()}
        return PolyTemplate(self.space, out)

    def substitute(self, values: Mapping[str, float]) -> "PolyTemplate":
        idx = {self.space.index(k): float(v) for k, v in values.items()}
        out: dict = {}
        for m, lin in self.terms.items():
            factor = 1.0
            mm = list(m)
            for i, v in idx.items():
                if mm[i]:
                    factor *= v ** mm[i]
                    mm[i] = 0
            _add_into(out.setdefault(tuple(mm), {}), lin, factor)
        return PolyTemplate(self.space, out)

    def linear_functional(self, points: np.ndarray, weights: np.ndarray | None = None,
                          chunk: int = 4096) -> dict:
        """``sum_k w_k q(z_k)`` as a linear expression (``CONST`` holds the known part)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if weights is None:
            weights = np.ones(points.shape[0])
        monos = list(self.terms)
        if not monos:
            return {}
        exps = np.array(monos, dtype=np.int64)
        moments = np.zeros(len(monos))
        for s in range(0, points.shape[0], chunk):
            moments += weights[s:s + chunk] @ _monomial_values(points[s:s + chunk], exps)
        out: dict = {}
        for mom, m in zip(moments, monos):
            if mom != 0.0:
                _add_into(out, self.terms[m], mom)
        return out

    def value(self, values: Mapping) -> Polynomial:
        """Instantiate with numeric values for the decision variables (key -> value)."""
        terms = {}
        for m, lin in self.terms.items():
            terms[m] = sum(c * (1.0 if k is CONST else values[k]) for k, c in lin.items())
        return Polynomial(self.space, terms)

    def value_from(self, sol) -> Polynomial:
        return self.value({k: sol.value(k) for k in self.keys()})


@dataclass
class GramVariable:
    """``m(z)^T Q m(z)`` for a PSD block ``Q`` of an SdpProblem (``block`` may be None)."""

    basis: MonomialBasis
    block: int | None = None

    @property
    def size(self) -> int:
        return len(self.basis)

    def pairs(self):
        """Upper-triangle index pairs, their monomials and multiplicities (1 or 2)."""
        exps = np.array(self.basis.elements, dtype=np.int64)
        iu, ju = np.triu_indices(self.size)
        return iu, ju, exps[iu] + exps[ju], np.where(iu == ju, 1.0, 2.0)

    def coefficient_map(self) -> dict:
        """monomial -> (block keys, coefficients) of the linear map from Q to coefficients."""
        if not self.size:
            return {}
        if self.block is None:
            raise ValueError("Gram variable is not attached to a problem block")
        iu, ju, monos, mult = self.pairs()
        out: dict = {}
        for i, j, mono, w in zip(iu, ju, map(tuple, monos), mult):
            keys, coefs = out.setdefault(mono, ([], []))
            keys.append(block_key(self.block, int(i), int(j)))
            coefs.append(float(w))
        return out


def gram_parametrize(space: VariableSpace, variables: Sequence[str], degree: int,
                     problem: SdpProblem | None = None, name: str | None = None,
                     min_degree: int = 0) -> GramVariable:
    """Fresh Gram variable over ``m_degree(variables)``; adds a PSD block if a problem is given.

    An empty basis (``min_degree > degree``) yields a variable with no block.
    """
    basis = monomial_basis(space, variables, degree, min_degree)
    block = None
    if problem is not None and len(basis):
        block = problem.add_block(len(basis), name)
    return GramVariable(basis, block)


def reconstruct(g: GramVariable, Q: np.ndarray) -> Polynomial:
    """Expand ``m(z)^T Q m(z)`` by the double sum over basis pairs."""
    Q = np.asarray(Q, dtype=float)
    n = g.size
    if Q.shape != (n, n):
        raise ValueError(f"Gram matrix must be {n}x{n}, got {Q.shape}")
    if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max(initial=0.0))):
        raise ValueError("Gram matrix must be symmetric")
    terms: dict = {}
    el = g.basis.elements
    for i in range(n):
        for j in range(n):
            if Q[i, j] != 0.0:
                m = tuple(a + b for a, b in zip(el[i], el[j]))
                terms[m] = terms.get(m, 0.0) + Q[i, j]
    return Polynomial(g.basis.space, terms)


@dataclass
class PutinarCertificate:
    """Request: ``target >= 0`` on ``K`` certified with ``deg(sigma_i g_i) <= 2 * half_degree``."""

    target: PolyTemplate
    K: BasicSemialgebraicSet
    half_degree: int
    name: str = "cert"


@dataclass
class CompiledCertificate:
    name: str
    variables: tuple
    half_degree: int
    multipliers: list                 # GramVariable per inequality, sigma_0 first
    generators: list                  # matching polynomials (1 for sigma_0)
    equality_multipliers: list = field(default_factory=list)   # PolyTemplate per h_j
    equality_generators: list = field(default_factory=list)
    monomials: list = field(default_factory=list)
    rows: list = field(default_factory=list)   # equality row index per monomial

    def multiplier_polynomials(self, sol) -> list[Polynomial]:
        return [reconstruct(g, sol.blocks[g.block]) for g in self.multipliers]

    def residual_polynomial(self, target: Polynomial, sol) -> Polynomial:
        """``target - sum sigma_i g_i - sum lambda_j h_j`` at a solution (should be ~0)."""
        out = target
        for s, g in zip(self.multiplier_polynomials(sol), self.generators):
            out = out - s * g
        for lam, h in zip(self.equality_multipliers, self.equality_generators):
            out = out - lam.value_from(sol) * h
        return out

    def dump(self, problem: SdpProblem | None = None) -> str:
        lines = [f"certificate {self.name}: variables={list(self.variables)} "
                 f"half_degree={self.half_degree}",
                 f"  sos blocks: {[g.size for g in self.multipliers]}",
                 f"  equality multipliers: {len(self.equality_multipliers)}",
                 f"  matching constraints: {len(self.rows)}"]
        if problem is not None:
            names = self.variables
            space = self.multipliers[0].basis.space
            idx = space.indices(names)
            for mono, r in zip(self.monomials, self.rows):
                label = "*".join(f"{space.names[i]}^{mono[i]}" for i in idx if mono[i]) or "1"
                row = problem.eq_rows[r]
                lines.append(f"  [{label}] rhs={problem.eq_rhs[r]:.17g} terms={len(row)}")
        return "\n".join(lines)


def compile_positivity(problem: SdpProblem, cert: PutinarCertificate) -> CompiledCertificate:
    """Add SOS blocks and coefficient-matching equalities for ``cert`` to ``problem``."""
    target, K, p = cert.target, cert.K, cert.half_degree
    space = target.space
    if K.space != space:
        raise ValueError("target and set live in different spaces")
    deg_bound = 2 * p
    if target.degree > deg_bound:
        bad = max(target.terms, key=sum)
        raise CertificateError(
            f"certificate degree too low: target has degree {target.degree} (monomial {bad}) "
            f"but half-degree {p} allows {deg_bound}")
    variables = tuple(v for v in space.names
                      if v in set(K.variables) | target.used_variables())
    one = Polynomial.constant(space, 1.0)
    multipliers, generators = [], []
    for k, g in enumerate((one,) + K.inequalities):
        d = (deg_bound - g.degree) // 2
        if d < 0:
            continue
        gv = gram_parametrize(space, variables, d, problem, f"{cert.name}.sigma{k}")
        multipliers.append(gv)
        generators.append(g)
    eq_mults, eq_gens = [], []
    for k, h in enumerate(K.equalities):
        d = deg_bound - h.degree
        if d < 0:
            continue
        lam, _ = PolyTemplate.free_polynomial(problem, monomial_basis(space, variables, d),
                                              f"{cert.name}.lambda{k}")
        eq_mults.append(lam)
        eq_gens.append(h)

    # row per monomial of degree <= 2p, in graded-lex order
    monos = monomial_basis(space, variables, deg_bound).elements
    index = {m: r for r, m in enumerate(monos)}
    rows: list[dict] = [{} for _ in monos]
    rhs = np.zeros(len(monos))
    for m, lin in target.terms.items():
        r = index[m]
        for k, c in lin.items():
            if k is CONST:
                rhs[r] -= c
            else:
                rows[r][k] = rows[r].get(k, 0.0) + c
    for gv, g in zip(multipliers, generators):
        iu, ju, pm, mult = gv.pairs()
        for delta, gc in g.terms.items():
            shifted = pm + np.array(delta, dtype=np.int64)
            for i, j, mono, w in zip(iu, ju, map(tuple, shifted), mult):
                key = block_key(gv.block, int(i), int(j))
                row = rows[index[mono]]
                row[key] = row.get(key, 0.0) - w * gc
    for lam, h in zip(eq_mults, eq_gens):
        prod = lam * h
        for m, lin in prod.terms.items():
            row = rows[index[m]]
            for k, c in lin.items():
                row[k] = row.get(k, 0.0) - c
    row_ids = []
    for m, row, b in zip(monos, rows, rhs):
        row = {k: c for k, c in row.items() if c != 0.0}
        row_ids.append(problem.add_eq(row, float(b), f"{cert.name}{list(m)}"))
    return CompiledCertificate(cert.name, variables, p, multipliers, generators,
                               eq_mults, eq_gens, list(monos), row_ids)
