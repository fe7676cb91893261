"""Point data, non-uniqueness, and rotation-symmetric sampling.

The |x|^p family shares one set of trajectories.  Every p gives the same
unit-speed radial motion, so every |x|^p is consistent with it.  Fitting
L_{1,1} to the start points alone leaves a whole face of equally good answers.
An interior-point solver returns some point of that face.  Adding the 90, 180
and 270 degree rotations of each draw makes the data symmetric, and the solver
then returns the isotropic centre of the face.
"""

from hjbioc import bench
from hjbioc.iocp import LagrangianClass, solve_iocp

for rotations in (1, 4):
    db = bench.gen_plp(1, 400, seed=0, s=0, rotations=rotations)
    sol = solve_iocp(db.system, db, LagrangianClass(1, 1), 2)
    # scale so that phi = -1/2 |x|^2 + c, as for the value function of |x|
    k = -0.5 * (sol.phi.coefficient((2, 0, 0, 0)) + sol.phi.coefficient((0, 2, 0, 0)))
    L = sol.L * (0.5 / k)
    print(f"rotations={rotations}: eps* = {sol.epsilon:.3g}")
    print(f"  L = {L.to_string(3)}")
