"""Plug-and-Play reconstruction toolkit.

Matrix-free forward operators, least-squares data terms, pluggable prior
agents, and the ADMM / FISTA / RED / online / MACE families of PnP solvers.
"""

from .agents import (
    Agent,
    FunctionAgent,
    GaussianSmooth,
    IdentityAgent,
    MedianFilter,
    ProxL2,
    ScaledIdentity,
    Slicewise2D,
    SoftThreshold,
    TVProx,
    nonexpansiveness_estimate,
    residual,
)
from .core import NonFiniteError, SeededRng, ShapeError, axpy, dot, gaussian_noise, norm2
from .diagnostics import (
    EquilibriumReport,
    consensus_equilibrium_residuals,
    mse,
    pnp_ista_residual,
    psnr,
    red_relative_residual,
    red_residual,
)
from .fidelity import BlockFidelity, BlockSampler, DataFidelity, ProxWarmState, block_sampler
from .linops import (
    Composition,
    Decimation,
    DenseRandomProjection,
    Diagonal,
    Identity,
    LinearOperator,
    MatrixOperator,
    PeriodicConvolution,
    cg_solve,
    gaussian_kernel,
    operator_norm,
    superres_operator,
)
from .imageio import ImageFormatError, read_image, write_image
from .mace import AgentStack, averaging_G, mace_operator, mace_solve, reflect_G, stack_apply_F
from .phantoms import PHANTOMS, phantom
from .solvers import (
    SolverConfig,
    SolverTrace,
    admm,
    fista,
    mann_iterate,
    online_pnp,
    pnp_admm,
    pnp_fista,
    pnp_ista,
    red_sd,
    simba,
)

__version__ = "0.1.0"
