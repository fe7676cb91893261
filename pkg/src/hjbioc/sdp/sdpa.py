"""SDPA sparse format (``.dat-s``) export and import.

The builder problem ``min C.X s.t. A_i.X = b_i`` is written as the SDPA dual
``max F0.Y s.t. F_i.Y = c_i, Y >= 0`` with ``F_i = A_i``, ``c = b`` and
``F0 = -C``.  Free scalars are split into a nonnegative pair and placed, with
the nonnegative scalars and inequality slacks, in one diagonal (LP) block.

Numbers are written with 17 significant digits, which round-trips IEEE doubles
exactly.  A ``* hjbioc {json}`` comment records the builder layout so that
:func:`import_sdpa` rebuilds the original :class:`SdpProblem` row for row;
files without it are imported generically.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from .problem import ProblemError, SdpProblem, block_key, free_key, nonneg_key

MAGIC = "* hjbioc "


def _num(v: float) -> str:
    return format(float(v), ".17g")


def _layout(p: SdpProblem) -> dict:
    return {"blocks": list(p.block_sizes), "block_names": list(p.block_names),
            "free": list(p.free_names), "nonneg": list(p.nonneg_names),
            "eq": list(p.eq_names), "ineq": list(p.ineq_names),
            "objective_constant": p.objective_constant}


def _lp_index(p: SdpProblem, key: tuple) -> int:
    """1-based diagonal position of a scalar in the LP block (free: the + part)."""
    if key[0] == "f":
        return 2 * key[1] + 1
    return 2 * p.n_free + key[1] + 1


def _entries(p: SdpProblem, row: dict, sign: float = 1.0):
    """SDPA (block, i, j, value) entries of one builder row; blocks 1-based."""
    lp = len(p.block_sizes) + 1
    out = []
    for key, c in row.items():
        if c == 0.0:
            continue
        c = sign * c
        if key[0] == "b":
            _, b, i, j = key
            out.append((b + 1, i + 1, j + 1, c if i == j else c / 2))
        elif key[0] == "f":
            k = _lp_index(p, key)
            out.append((lp, k, k, c))
            out.append((lp, k + 1, k + 1, -c))
        else:
            k = _lp_index(p, key)
            out.append((lp, k, k, c))
    return sorted(out)


def size_estimate(p: SdpProblem) -> dict:
    """Dimensions of the exported program and the dense Schur complement memory."""
    m = p.n_eq + p.n_ineq
    lp = 2 * p.n_free + p.n_nonneg + p.n_ineq
    return {"mDIM": m, "psd_blocks": len(p.block_sizes),
            "largest_block": max(p.block_sizes, default=0), "lp_block": lp,
            "schur_bytes": 8 * m * m}


def export_sdpa(p: SdpProblem, path) -> Path:
    """Write ``p`` in SDPA sparse format and return the path."""
    p.validate()
    m = p.n_eq + p.n_ineq
    lp = 2 * p.n_free + p.n_nonneg + p.n_ineq
    sizes = list(p.block_sizes) + ([-lp] if lp else [])
    if not sizes:
        raise ProblemError("nothing to export: no PSD block or scalar variable")
    lines = [f"{MAGIC}{json.dumps(_layout(p), separators=(',', ':'))}",
             f"{m} = mDIM", f"{len(sizes)} = nBLOCK", " ".join(str(s) for s in sizes)]
    rhs = list(p.eq_rhs) + list(p.ineq_rhs)
    lines.append(" ".join(_num(v) for v in rhs) if rhs else "0")
    # F0 = -C
    for b, i, j, v in _entries(p, p.objective, -1.0):
        lines.append(f"0 {b} {i} {j} {_num(v)}")
    for r, row in enumerate(p.eq_rows + p.ineq_rows, start=1):
        for b, i, j, v in _entries(p, row):
            lines.append(f"{r} {b} {i} {j} {_num(v)}")
    if lp:
        base = 2 * p.n_free + p.n_nonneg
        for k in range(p.n_ineq):
            pos = base + k + 1
            lines.append(f"{p.n_eq + k + 1} {len(sizes)} {pos} {pos} {_num(-1.0)}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def _tokens(text: str):
    meta = None
    body = []
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith(MAGIC):
            meta = json.loads(line[len(MAGIC):])
            continue
        if not line or line[0] in "*\"":
            continue
        body.append(line)
    return meta, body


def _ints(line: str) -> list:
    return [int(t) for t in re.split(r"[\s,{}()]+", line.split("=")[0].strip()) if t]


def _floats(line: str) -> list:
    return [float(t) for t in re.split(r"[\s,{}()]+", line.strip()) if t]


def import_sdpa(path) -> SdpProblem:
    """Read an SDPA sparse file.

    With the metadata comment written by :func:`export_sdpa` the original
    problem is rebuilt exactly; otherwise each PSD block becomes a PSD block,
    each diagonal block a list of nonnegative scalars, every row an equality,
    and the objective ``min -F0.Y``.
    """
    meta, body = _tokens(Path(path).read_text())
    if len(body) < 4:
        raise ProblemError("truncated SDPA file")
    m = _ints(body[0])[0]
    nblock = _ints(body[1])[0]
    sizes = _ints(body[2])[:nblock]
    c = _floats(body[3])[:m] if m else []
    entries = []
    for line in body[4:]:
        t = line.split()
        entries.append((int(t[0]), int(t[1]), int(t[2]), int(t[3]), float(t[4])))
    if meta is not None:
        return _rebuild(meta, m, sizes, c, entries)
    return _generic(m, sizes, c, entries)


def _generic(m, sizes, c, entries) -> SdpProblem:
    p = SdpProblem()
    keymap = {}
    for b, n in enumerate(sizes, start=1):
        if n > 0:
            keymap[b] = ("psd", p.add_block(n))
        else:
            keymap[b] = ("lp", [p.add_nonneg() for _ in range(-n)])
    rows = [dict() for _ in range(m + 1)]
    for r, b, i, j, v in entries:
        kind, ref = keymap[b]
        if kind == "psd":
            key = block_key(ref, i - 1, j - 1)
            coef = v if i == j else 2 * v
        else:
            if i != j:
                raise ProblemError("off-diagonal entry in a diagonal block")
            key, coef = nonneg_key(ref[i - 1]), v
        rows[r][key] = rows[r].get(key, 0.0) + coef
    for r in range(1, m + 1):
        p.add_eq(rows[r], c[r - 1])
    p.set_objective({k: -v for k, v in rows[0].items()})
    return p


def _rebuild(meta, m, sizes, c, entries) -> SdpProblem:
    p = SdpProblem()
    for n, name in zip(meta["blocks"], meta["block_names"]):
        p.add_block(n, name)
    for name in meta["free"]:
        p.add_free(name)
    for name in meta["nonneg"]:
        p.add_nonneg(name)
    n_psd, n_free, n_nn = len(meta["blocks"]), len(meta["free"]), len(meta["nonneg"])
    n_eq, n_ineq = len(meta["eq"]), len(meta["ineq"])
    if m != n_eq + n_ineq or sizes[:n_psd] != meta["blocks"]:
        raise ProblemError("SDPA body does not match its metadata")
    rows = [dict() for _ in range(m + 1)]
    for r, b, i, j, v in entries:
        if b <= n_psd:
            key = block_key(b - 1, i - 1, j - 1)
            coef = v if i == j else 2 * v
        else:
            k = i - 1
            if k < 2 * n_free:
                if k % 2:           # minus part mirrors the plus part
                    continue
                key = free_key(k // 2)
            elif k < 2 * n_free + n_nn:
                key = nonneg_key(k - 2 * n_free)
            else:                   # inequality slack, implied by the row kind
                continue
            coef = v
        rows[r][key] = coef
    for r in range(n_eq):
        p.add_eq(rows[r + 1], c[r], meta["eq"][r])
    for k in range(n_ineq):
        p.add_ineq(rows[n_eq + k + 1], c[n_eq + k], meta["ineq"][k])
    p.set_objective({k: -v if v != 0.0 else 0.0 for k, v in rows[0].items()},
                    meta.get("objective_constant", 0.0))
    return p
