"""Sparse regression solved four ways.

Classical ADMM, PnP-ADMM with the soft-threshold agent, ISTA and FISTA all
reach the same minimizer. ADMM and PnP-ADMM produce the very same iterates,
because the soft threshold *is* the proximal map of the l1 norm.

    python3 demos/lasso_splitting.py
"""

import numpy as np

from pnpkit import DenseRandomProjection, DataFidelity, SeededRng, SoftThreshold, SolverConfig, gaussian_noise
from pnpkit import admm, fista, pnp_admm
from pnpkit.solvers import default_step

TAU = 0.1

A = DenseRandomProjection(8, (16,), seed=3)
x_true = np.zeros(16)
x_true[[2, 7, 11]] = [1.0, -0.7, 0.5]
y = A(x_true) + gaussian_noise(SeededRng(1), (8,), 0.01)
g = DataFidelity(A, y)


def objective(x):
    return g(x) + TAU * np.abs(x).sum()


exact = dict(prox_method="cg", cg_tol=1e-14, cg_maxiter=100)
cfg = SolverConfig(gamma=1.0, fp_tol=1e-12, max_iters=5000, **exact)
x_admm, t_admm = admm(g, SoftThreshold(TAU), cfg)
x_pnp, t_pnp = pnp_admm(g, SoftThreshold(TAU), cfg)
print(f"ADMM      {t_admm.iterations:5d} iters  objective {objective(x_admm):.12f}")
print(f"PnP-ADMM  {t_pnp.iterations:5d} iters  identical trace: {t_admm.same_as(t_pnp)}")

step = default_step(g, SolverConfig())
target = objective(x_admm) + 1e-9
for schedule in ("ista", "nesterov"):
    hit = []

    def watch(k, s):
        if not hit and objective(s) <= target:
            hit.append(k)

    c = SolverConfig(gamma=step, theta_schedule=schedule, fp_tol=1e-12, max_iters=50_000)
    x, t = fista(g, SoftThreshold(step * TAU), c, callback=watch)
    print(f"{schedule:9s} {t.iterations:5d} iters  gap below 1e-9 after {hit[0]:4d}  "
          f"|x - x_admm| = {np.linalg.norm(x - x_admm):.1e}")
print("support recovered:", np.flatnonzero(np.abs(x_admm) > 1e-8).tolist())
