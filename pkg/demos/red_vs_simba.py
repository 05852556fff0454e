"""Batch RED against its online variant SIMBA.

The data term is split into 20 row blocks; SIMBA uses 10 of them per step.
At an equal iteration budget the online method tracks the batch one while
touching half the data. Run longer and the constant-step online iterate
stalls at a noise floor set by the minibatch gradient variance, which the
last rows show.

    python3 demos/red_vs_simba.py
"""

import numpy as np

from pnpkit import BlockFidelity, BlockSampler, DataFidelity, GaussianSmooth, MatrixOperator, SeededRng
from pnpkit import SolverConfig, gaussian_noise, red_residual, red_sd, simba

b, rows, n = 20, 10, 64
A = MatrixOperator(SeededRng(5).normal((b * rows, n)) / np.sqrt(rows), (n,), (b * rows,))
x_true = np.cumsum(SeededRng(6).normal((n,), 0.1))
y = A(x_true) + gaussian_noise(SeededRng(7), (b * rows,), 0.05)
g = DataFidelity(A, y)
bf = BlockFidelity.from_rows(A, y, b, weight=b)
D = GaussianSmooth(1.0)

print(f"{'iters':>6} {'batch ||H||':>12} {'SIMBA ||H||':>12}")
for iters in (5, 10, 20, 50, 100, 300):
    cfg = SolverConfig(tau=1.0, max_iters=iters, fp_tol=1e-15, minibatch=10)
    xb, tb = red_sd(g, D, cfg)
    xs, _ = simba(bf, D, BlockSampler(SeededRng(0), b), cfg.replace(gamma=tb.gamma))
    print(f"{iters:6d} {red_residual(g, D, xb, 1.0):12.3e} {red_residual(g, D, xs, 1.0):12.3e}")
