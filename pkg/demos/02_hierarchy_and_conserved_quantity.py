"""What the solver says when the class cannot explain the data.

Unit-speed radial trajectories are time-optimal (L = 1).  With a constant-free
quadratic-in-u class the fit is approximate, and eps* shrinks as the degree of
phi grows.  A quartic class instead finds (1 - |u|^2)^2 with eps* = 0.  That
Lagrangian vanishes on every unit-speed control, so the data cannot tell it
apart from the generating one.
"""

from hjbioc import bench
from hjbioc.iocp import LagrangianClass, compare_lagrangians, hierarchy, solve_iocp

db = bench.gen_exittime(200, seed=0)

print("class L_{0,1}: eps* along the hierarchy")
for s in hierarchy(db.system, db, LagrangianClass(0, 1), [2, 4, 6]):
    print(f"  deg phi = {s.deg_phi}: eps* = {s.epsilon:.4g}   L = {s.L.to_string(3)}")

sol = solve_iocp(db.system, db, LagrangianClass(0, 2), 4)
conserved = bench.conserved_lagrangian(db.system.space)
print(f"\nclass L_{{0,2}}, deg phi = 4: eps* = {sol.epsilon:.2e}")
print(f"  similarity to (1 - |u|^2)^2: {compare_lagrangians(sol.L, conserved).similarity:.6f}")
