"""Recovering a Lagrangian exactly from exit-norm trajectories.

Trajectories x(t) = x0 e^t, u = x, run until they hit the unit circle.  They are
optimal for L = |x|^2 + |u|^2 with value function 1 - |x|^2.  We hand only the
samples to the inverse solver and ask for the quadratic Lagrangian that best
explains them.  Then we check the certificate independently of the SDP solver.
"""

from hjbioc import bench
from hjbioc.iocp import LagrangianClass, compare_lagrangians, solve_iocp, verify_certificate

db = bench.gen_exitnorm(200, seed=0)
print(f"database: {len(db)} trajectories, {db.n_samples} samples, clean={not bench.check_database(db)}")

sol = solve_iocp(db.system, db, LagrangianClass(1, 1), deg_phi=2)
print(f"status {sol.status}, eps* = {sol.epsilon:.2e}")
print("recovered L   =", sol.L.to_string(4))
print("recovered phi =", sol.phi.to_string(4))

target = bench.target_lagrangian("exitnorm", db.system.space)
print(f"similarity to |x|^2 + |u|^2: {compare_lagrangians(sol.L, target).similarity:.6f}")

# L is only identifiable up to scale; the trace normalization picked 1/4 here
rep = verify_certificate(db.system, db, sol)
print(f"independent check on {rep.grid_points} points: min H = {rep.min_H:.2e}, "
      f"max phi on the circle = {rep.max_phi_XT:.2e} -> {'PASS' if rep.passed else 'FAIL'}")
