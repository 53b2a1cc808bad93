"""A single measurement update hit by a gross sensor outlier.

The Kalman update follows the outlier; the Gaussian-shape kernel update with a
moderate measurement bandwidth down-weights that channel and stays near the
prior. Run with ``python3 demos/outlier_update.py``.
"""
import numpy as np

from gmkmckf.correntropy import KernelConfig
from gmkmckf.filters import FilterState, GmkmckfConfig, LinearModel, gmkmckf_update, kf_update

model = LinearModel(A=np.eye(2), F=None, C=[[1.0, 0.0]], Q=0.01 * np.eye(2), R=[[0.01]])
prior = FilterState([1.0, 0.5], np.diag([0.05, 0.05]))

print(f"{'measurement':>12} {'KF x1':>8} {'robust x1':>10} {'iterations':>10}")
for y in (1.1, 1.5, 3.0, 20.0):
    kf = kf_update(prior, model, [y])
    cfg = GmkmckfConfig(KernelConfig(2.0, (1e8, 1e8, 2.0)), m_iter=20)
    robust, iters, _ = gmkmckf_update(prior, model, [y], cfg)
    print(f"{y:12.1f} {kf.x[0]:8.3f} {robust.x[0]:10.3f} {iters:10d}")
