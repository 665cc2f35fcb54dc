"""The same posterior drawn in two coordinate systems.

For the two-step Gaussian chain both parameterizations admit closed-form
posteriors, so the density can be tabulated on a grid and the geometry
inspected directly: a narrow ridge in one system is a round bowl in the
other.  ASCII contours are crude but make the point without a plotting
dependency.
"""

import numpy as np

from ncbayes.analysis import lds_correlations
from ncbayes.graph import build_model
from ncbayes.hmc import LatentPosterior
from ncbayes.modelzoo import build_lds_model
from ncbayes.reparam import apply_plan, full_dncp_plan

SIGMA_X, SIGMA_Z = 1.0, 0.05
LEVELS = " .:-=+*#%@"


def density_grid(model, center, sd, res=31, halfwidth=2.5):
    posterior = LatentPosterior(model, np.zeros(0),
                                {"x1": np.zeros(1), "x2": np.zeros(1)})
    axes = [np.linspace(center[k] - halfwidth * sd[k],
                        center[k] + halfwidth * sd[k], res)
            for k in (0, 1)]
    g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    points = np.column_stack([g1.ravel(), g2.ravel()])
    logp, _ = posterior.value_and_grad(points)
    return logp.reshape(res, res)


def ascii_contours(logp):
    z = logp - logp.max()
    scaled = np.clip((z + 8.0) / 8.0, 0.0, 1.0)
    idx = (scaled * (len(LEVELS) - 1)).astype(int)
    for row in idx.T[::-1]:
        print("   " + "".join(LEVELS[k] for k in row))


report = lds_correlations(SIGMA_X, SIGMA_Z)
print(f"sigma_x={SIGMA_X}, sigma_z={SIGMA_Z}")
print(f"  rho^2 centered:     {report.rho_sq_cp:.6f}")
print(f"  rho^2 non-centered: {report.rho_sq_dncp:.6f}")
print()

model = build_lds_model(SIGMA_X, SIGMA_Z)
cov_cp = np.linalg.inv(-report.hessian_cp)
print("centered coordinates (z1, z2): a ridge")
ascii_contours(density_grid(model, np.zeros(2), np.sqrt(np.diag(cov_cp))))
print()

noncentered = apply_plan(model, full_dncp_plan(model))
cov_nc = np.linalg.inv(-report.hessian_dncp)
print("noise coordinates (eps_z1, eps_z2): a bowl")
ascii_contours(density_grid(noncentered, np.zeros(2),
                            np.sqrt(np.diag(cov_nc))))
