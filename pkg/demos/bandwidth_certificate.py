"""Certified bandwidths for the Gaussian-shape kernel.

For a random whitened regression, compute the smallest bandwidth that the
contraction certificate accepts, then run the fixed-point iteration at, above
and well below it. The certificate is sufficient but not necessary, so the
smaller bandwidths usually converge too. Run with ``python3 demos/bandwidth_certificate.py``.
"""
import numpy as np

from gmkmckf.convergence import ConvergenceQuery, certify
from gmkmckf.correntropy import KernelConfig
from gmkmckf.filters import regression_fixed_point

rng = np.random.default_rng(11)
W = rng.standard_normal((4, 3))
t = rng.standard_normal(4)
cert = certify(ConvergenceQuery(W, t))
print(f"status {cert.status}: xi={cert.xi:.3f} gamma={cert.gamma:.3f} "
      f"beta*={cert.beta_star:.3f} beta+={cert.beta_plus:.3f}")

for scale in (1.0, 3.0, 0.05, 1e-3):
    beta = scale * cert.recommended_min_beta
    x, iters, ok = regression_fixed_point(W, t, KernelConfig.uniform(2.0, beta, 4), max_iter=50)
    print(f"beta={beta:8.3f}  converged={ok}  iterations={iters:2d}  |x|_1={np.abs(x).sum():.3f}")
