"""Fixed-horizon LQ data: degree matters, and large levels can go to an external solver.

The value function x^T P(t) x has a Riccati matrix P(t) that is not polynomial
in t.  A low-degree phi therefore cannot certify the true Lagrangian, and the
recovered one is visibly off.  Raising the degree of phi tightens the fit.  A
level can also be written in SDPA sparse format for an external SDP solver.
"""

import tempfile
from pathlib import Path

from hjbioc import bench
from hjbioc.iocp import LagrangianClass, assemble, compare_lagrangians, solve_iocp
from hjbioc.polynomial import parse_polynomial
from hjbioc.sdp import export_sdpa, import_sdpa, size_estimate

db = bench.gen_lq(150, seed=0)
target = parse_polynomial("2*x1^2 + 0.5*x1*x2 + x2^2 + u^2", db.system.space)

for d in (4, 6):
    sol = solve_iocp(db.system, db, LagrangianClass(1, 1), d)
    sim = compare_lagrangians(sol.L, target).similarity
    print(f"deg phi = {d}: eps* = {sol.epsilon:.3g}, similarity = {sim:.4f}, L = {sol.L.to_string(3)}")

asm = assemble(db.system, db, LagrangianClass(1, 1), 10)
path = export_sdpa(asm.problem, Path(tempfile.mkdtemp()) / "lq_L11_deg10.dat-s")
print(f"\ndeg phi = 10 exported to {path}")
print("size:", size_estimate(asm.problem))
back = import_sdpa(path)
print(f"re-imported: {back.n_eq} equalities, {back.n_ineq} inequalities, blocks {back.block_sizes[:4]}...")
