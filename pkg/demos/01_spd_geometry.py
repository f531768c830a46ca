"""Geometry of the covariance updates: SPD manifold maps and unconditional positivity.

Walks through the affine-invariant toolbox that the integrator is built on:
exponential/logarithmic maps, geodesic distance, independence from the
choice of matrix square root, and the headline property - covariance steps
cannot lose positive definiteness no matter how large the step.
"""

import numpy as np

from mixvi import spd
from mixvi.integrator import step_covariance

rng = np.random.default_rng(0)

print("=== Affine-invariant SPD geometry ===\n")

a = rng.standard_normal((3, 3))
x = a @ a.T + np.eye(3)
root = spd.cholesky(x)
sigma = spd.symmetrize(rng.standard_normal((3, 3)))

y = spd.exp_map(x, sigma, root)
back = spd.log_map(x, y, root)
print("exp/log round trip error:", np.linalg.norm(back - sigma) / np.linalg.norm(sigma))

d_xy = spd.riemannian_distance(x, y)
t = rng.standard_normal((3, 3)) + 2 * np.eye(3)
d_txy = spd.riemannian_distance(t @ x @ t.T, t @ y @ t.T)
print(f"geodesic distance d(X, Y) = {d_xy:.6f}")
print(f"same distance after congruence by a random T: {d_txy:.6f}")

q, r = np.linalg.qr(rng.standard_normal((3, 3)))
rotated_root = root @ (q * np.sign(np.diag(r)))
y_rot = spd.exp_map(x, sigma, rotated_root)
print("square-root independence:", np.linalg.norm(y - y_rot) / np.linalg.norm(y))

print("\n=== Positivity under extreme steps ===\n")
print("step magnitude ||E*dt||   smallest factor diagonal")
for scale in (1.0, 10.0, 100.0, 1000.0):
    grad = spd.symmetrize(rng.standard_normal((6, 6)))
    grad *= scale / spd.spectral_norm(grad)
    base = rng.standard_normal((6, 6))
    fac = spd.cholesky(base @ base.T + np.eye(6))
    _, new_root = step_covariance(fac, grad, 1.0)
    print(f"{scale:20.0f}   {np.min(np.diag(new_root)):.3e}")
print("\nEvery factor stays finite with a strictly positive diagonal;")
print("the adaptive step rule keeps real runs at ||E*dt|| <= 0.9 anyway.")
