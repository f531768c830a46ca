"""Convergence anatomy on Gaussian targets: warm-up, contraction, and why the
step rule needs both of its terms.

Uses the exact (noise-free) whitened recursion, which the integrator's
exact-expectation mode reproduces to machine precision, then shows the
noisy recursion converging under a decaying scheduler.
"""

import numpy as np

from mixvi import analysis

print("=== Logarithmic dependence on the initial condition ===\n")
v0 = np.ones(2)
print("lambda_max(Sigma_0)   iterations to 1e-6")
for lam in (1e2, 1e4, 1e6, 1e8):
    rep = analysis.noise_free_experiment(lam * np.eye(2), v0, 0.9, 0.9, 1e-6)
    print(f"{lam:18.0e}   {rep.iterations}")

print("\n=== Single-term step rules fail ===\n")
rep_a = analysis.single_term_pathologies(100.0, 0.9, 0.9)
print(f"dt_max only, Sigma_0 = 100: Sigma_1 = {rep_a.dt_max_only_first:.2e}"
      "  (positivity kept, accuracy annihilated)")
rep_b = analysis.single_term_pathologies(1.1, 0.9, 0.9)
lo, hi = rep_b.beta_interval
print(f"stability term only, Sigma_0 = 1.1 in ({lo:.3f}, {hi:.3f}): "
      f"Sigma_1 = {rep_b.beta_only_first:.3f} escapes the band")
print(f"full adaptive rule: monotone decay to |Sigma - 1| = {rep_a.full_rule_errors[-1]:.1e}")

print("\n=== Noise + decaying scheduler ===\n")
noise = analysis.NoiseSpec(0.5, 0.5)
sigma0 = np.diag([4.0, 0.25])
for kind in ("one_over_n", "constant"):
    traces = analysis.stochastic_experiment(sigma0, np.ones(2), noise, kind, 2000,
                                            range(10))
    med = lambda n: np.median([t.sigma_errors[n] for t in traces])
    print(f"{kind:12s}: median ||Sigma - I||_F at n=100: {med(100):.3f}, "
          f"at n=2000: {med(2000):.3f}")
print("\nThe decaying scheduler keeps improving; constant eta plateaus at its noise floor.")
