"""Where does centering stop paying off?

A latent node squeezed between a strong prior and a weak likelihood mixes
well in its natural coordinates; flip the strengths and the noise
coordinates win.  The closed forms below locate the crossover exactly,
first for an abstract local factor, then for the two-step Gaussian chain
where both posteriors are available in closed form.
"""

import numpy as np

from ncbayes.analysis import (
    LocalFactorSummary,
    correlation_limits,
    cp_squared_correlation,
    dncp_squared_correlation,
    lds_correlations,
)

# a local factor: curvature alpha from the parents, beta from the
# children, coupling w, conditional scale sigma
s = LocalFactorSummary(alpha=-1.0, beta=-0.5, w=1.0, sigma=0.4)
print("local factor:", s)
print(f"  squared correlation, centered:     {cp_squared_correlation(s):.4f}")
print(f"  squared correlation, non-centered: {dncp_squared_correlation(s):.4f}")
print(f"  threshold says prefer non-centered: {s.sigma ** -2 > -s.beta}")
print()

# sweep sigma through the crossover at sigma = 1/sqrt(-beta)
print("sigma sweep (alpha=-1, beta=-0.5, w=1):")
print(f"  crossover at sigma = {1.0 / np.sqrt(0.5):.4f}")
for sigma in (0.2, 0.5, 1.0, np.sqrt(2.0), 2.0, 5.0):
    t = LocalFactorSummary(alpha=-1.0, beta=-0.5, w=1.0, sigma=sigma)
    cp, dncp = cp_squared_correlation(t), dncp_squared_correlation(t)
    side = "non-centered" if dncp < cp else "centered"
    print(f"  sigma={sigma:6.3f}  rho2_cp={cp:.4f}  rho2_dncp={dncp:.4f}"
          f"  weaker coupling: {side}")
print()

# the extremes agree with the tabulated limits
for which in ("sigma->0", "sigma->inf", "beta->0", "beta->-inf",
              "alpha->0", "alpha->-inf"):
    cp, dncp = correlation_limits(s, which)
    print(f"  limit {which:11s} -> rho2_cp={cp:.4f}  rho2_dncp={dncp:.4f}")
print()

# the two-step chain z1 -> z2 -> observations: same story, with the
# conditional scale sigma_z against the observation scale sigma_x
print("two-step chain, sigma_x = 1:")
for sigma_z in (0.05, 0.2, 1.0, 5.0, 20.0):
    report = lds_correlations(1.0, sigma_z)
    print(f"  sigma_z={sigma_z:6.2f}  rho2_cp={report.rho_sq_cp:.4f}"
          f"  rho2_dncp={report.rho_sq_dncp:.4f}"
          f"  prefer non-centered: {report.prefer_dncp}")
