"""
Building and solving a small matrix-inequality problem
=======================================================

The synthesis is built from affine matrix expressions in named decision
variables. This demo finds the smallest bound ``beta`` with
``sigma_max(K W) <= sqrt(beta)`` for a fixed gain, which must equal the
largest singular value squared, and a Lyapunov matrix for a stable plant.

Run with ``python3 demos/sdp_basics.py``.
"""

import numpy as np

from sampledlmi import lmi, sdp

K = np.array([[-0.7, -0.6]])
W = np.diag([0.5, 0.4])

space = lmi.DecisionSpace()
bound = lmi.build_input_bound_lmi(K, W, space)  # variable tau2
problem = sdp.SdpProblem.minimize(space, "tau2", [bound])
sol = sdp.solve(problem)
print(f"status {sol.status}, tau^2 = {sol.objective_value:.8f}, "
      f"sigma_max(K W)^2 = {np.linalg.norm(K @ W, 2) ** 2:.8f}")

# Lyapunov matrix for a stable plant: A^T P + P A < 0 with P >= I.
A = np.array([[-0.1, 1.0], [0.0, -0.1]])
space = lmi.DecisionSpace()
P = space.symmetric("P", 2)
blocks = [lmi.AffineBlock("lyapunov", A.T @ P + P @ A, "nsd", space, 1e-3),
          lmi.AffineBlock("floor", P - np.eye(2), "psd", space)]
problem = sdp.SdpProblem(space, space.pack({"P": np.eye(2)}), blocks)
sol = sdp.solve(problem)
Pv = space.value("P", sol.x)
print(f"status {sol.status}, P =\n{np.round(Pv, 4)}")
print("eigenvalues of A^T P + P A:", np.round(np.linalg.eigvalsh(A.T @ Pv + Pv @ A), 6))

# Independent re-evaluation of every block at the returned point.
print(sdp.check_solution(problem, sol.x))
