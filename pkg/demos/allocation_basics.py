"""Static pieces of the allocator on the two-satellite thruster layout.

Shows the kernel basis N, the right pseudo-inverse, and how the optimal
allocator state shifts effort away from a penalised thruster while the
net force stays the same.
"""
import numpy as np

from dynalloc import satellite as bm
from dynalloc.model import nullspace_basis, optimal_allocator_state, right_pseudo_inverse, sat

np.set_printoptions(precision=4, suppress=True)

M = bm.nominal_influence()
N = nullspace_basis(M, bm.kernel_basis())
Md = right_pseudo_inverse(M)
print("M_n =\n", M)
print("|M_n N| =", np.abs(M @ N).max(), " |M_n Md - I| =", np.abs(M @ Md - np.eye(2)).max())

y_c = np.array([20.0, -20.0])  # requested relative force, mN
for w1 in (1.0, 100.0):
    W = np.diag([w1] + [1.0] * 7)
    x_f = optimal_allocator_state(N, W, Md, y_c)
    y_f = N @ x_f + Md @ y_c
    print(f"\nweight on thruster 1 = {w1:g}")
    print("  thrusts:", y_f)
    print("  net force:", M @ y_f)

# beyond +/-50 mN the commanded force is no longer delivered
big = Md @ np.array([300.0, -300.0])
print("\nsaturated request:", M @ sat(big, np.full(8, bm.U_BAR)), "instead of [300, -300]")
