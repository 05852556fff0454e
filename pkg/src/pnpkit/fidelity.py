"""Least-squares data-fidelity terms, their proximal maps and block splits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .core import SeededRng, ShapeError, as_image, norm2
from .linops import CGInfo, Composition, LinearOperator, Restriction, cg_solve

__all__ = [
    "DataFidelity",
    "BlockFidelity",
    "ProxWarmState",
    "BlockSampler",
    "block_sampler",
    "PROX_METHODS",
]

PROX_METHODS = ("auto", "closed_form", "cg", "partial")


@dataclass
class ProxWarmState:
    """Inner-solver state carried between outer iterations for partial updates.

    Attributes:
        x: Last inner solution (None until the first call).
        residuals: Relative residual of the inner system after each call.
    """

    x: np.ndarray | None = None
    residuals: list[float] = field(default_factory=list)


class DataFidelity:
    r"""Weighted least-squares term ``g(x) = (weight / 2) ||A x - y||^2``.

    Args:
        op: Forward operator ``A``.
        y: Measurements, shaped like ``op.output_shape``.
        weight: Positive scale factor.
    """

    def __init__(self, op: LinearOperator, y, weight: float = 1.0):
        if weight <= 0:
            raise ValueError("weight must be positive")
        self.op = op
        self.y = as_image(y, op.output_shape)
        self.weight = float(weight)
        self.input_shape = op.input_shape

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ShapeError(self.input_shape, x.shape, what="fidelity input")
        return x

    def __call__(self, x) -> float:
        r = self.op.apply(self._check(x)) - self.y
        return 0.5 * self.weight * norm2(r) ** 2

    def grad(self, x) -> np.ndarray:
        """Gradient ``weight * A^T (A x - y)``."""
        x = self._check(x)
        g = self.op.adjoint(self.op.apply(x) - self.y)
        return g if self.weight == 1.0 else self.weight * g

    def default_init(self) -> np.ndarray:
        """``A^T y``, the default starting point of the solvers."""
        return self.op.adjoint(self.y)

    def normal_op(self, gamma: float):
        """Callable applying ``I + gamma * weight * A^T A``."""
        c = gamma * self.weight

        def apply(v):
            return v + c * self.op.adjoint(self.op.apply(v))

        return apply

    def has_closed_form_prox(self) -> bool:
        return self.op.gram_diagonal() is not None or self.op.gram_spectrum() is not None

    def prox(
        self,
        x,
        gamma: float,
        method: str = "auto",
        tol: float = 1e-3,
        maxiter: int = 10,
        warm_state: ProxWarmState | None = None,
        k_inner: int = 3,
    ) -> np.ndarray:
        """Proximal map ``(I + gamma A^T A)^{-1} (x + gamma A^T y)`` (weight folded in).

        Args:
            x: Input point.
            gamma: Positive step.
            method: ``"closed_form"`` for operators whose ``A^T A`` is
                diagonal or circulant (exact), ``"cg"`` for conjugate
                gradient with `tol` / `maxiter` started at `x`,
                ``"partial"`` for exactly `k_inner` CG steps warm-started
                from `warm_state`, or ``"auto"`` (closed form when
                available, otherwise CG).
        """
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        x = self._check(x)
        c = gamma * self.weight
        rhs = x + c * self.op.adjoint(self.y)
        if method == "auto":
            method = "closed_form" if self.has_closed_form_prox() else "cg"
        if method == "closed_form":
            diag = self.op.gram_diagonal()
            if diag is not None:
                return rhs / (1.0 + c * diag)
            gram = self.op.gram_spectrum()
            if gram is None:
                raise ValueError(
                    f"closed_form prox needs a diagonal or circulant A^T A; "
                    f"{type(self.op).__name__} has neither"
                )
            axes = tuple(range(len(self.input_shape)))
            return np.fft.irfftn(
                np.fft.rfftn(rhs, axes=axes) / (1.0 + c * gram), s=self.input_shape, axes=axes
            )
        if method == "cg":
            return cg_solve(self.normal_op(gamma), rhs, x, tol=tol, maxiter=maxiter)[0]
        if method == "partial":
            if warm_state is None:
                raise ValueError("partial prox needs a ProxWarmState")
            if k_inner < 1:
                raise ValueError("k_inner must be at least 1")
            start = x if warm_state.x is None else warm_state.x
            info: CGInfo = cg_solve(
                self.normal_op(gamma), rhs, start, tol=1e-300, maxiter=k_inner, min_iters=k_inner
            )
            warm_state.x = info[0]
            warm_state.residuals.append(info.history[0])
            return info[0].copy()
        raise ValueError(f"unknown prox method {method!r}; expected one of {PROX_METHODS}")


class BlockFidelity:
    """Average of block terms, ``g = (1/b) sum_i g_i``.

    Block indices are zero-based. Sums over blocks always run in ascending
    index order so results do not depend on evaluation order.
    """

    def __init__(self, blocks: Sequence[DataFidelity]):
        self.blocks = list(blocks)
        if not self.blocks:
            raise ValueError("need at least one block")
        self.input_shape = self.blocks[0].input_shape
        for blk in self.blocks:
            if blk.input_shape != self.input_shape:
                raise ShapeError(self.input_shape, blk.input_shape, what="block input")
        self.b = len(self.blocks)

    @classmethod
    def from_rows(cls, op, y, b: int, weight: float = 1.0) -> "BlockFidelity":
        """Split a :class:`~pnpkit.linops.MatrixOperator` fidelity into `b` row blocks."""
        ys = np.array_split(np.asarray(y, dtype=np.float64).reshape(-1), b)
        return cls([DataFidelity(o, yi, weight) for o, yi in zip(op.row_blocks(b), ys)])

    @classmethod
    def split(cls, g: DataFidelity, b: int, weight: float | None = None) -> "BlockFidelity":
        """Split the measurements of `g` into `b` contiguous blocks.

        Block ``i`` uses ``A_i = R_i A`` with ``R_i`` selecting its share of
        the flattened measurements. Each block inherits ``g.weight`` unless
        `weight` is given; pass ``weight=b * g.weight`` to make the block
        average equal to `g` itself.
        """
        m = int(np.prod(g.op.output_shape))
        if not 1 <= b <= m:
            raise ValueError(f"cannot split {m} measurements into {b} blocks")
        weight = g.weight if weight is None else weight
        yflat = g.y.reshape(-1)
        blocks = []
        for idx in np.array_split(np.arange(m), b):
            op = Composition([g.op, Restriction(g.op.output_shape, idx)])
            blocks.append(DataFidelity(op, yflat[idx], weight))
        return cls(blocks)

    def __call__(self, x) -> float:
        return sum(blk(x) for blk in self.blocks) / self.b

    def _check_index(self, i):
        if not 0 <= i < self.b:
            raise IndexError(f"block index {i} out of range for {self.b} blocks")

    def block_grad(self, i: int, x) -> np.ndarray:
        self._check_index(i)
        return self.blocks[i].grad(x)

    def minibatch_grad(self, indices, x) -> np.ndarray:
        """``(1/p) sum_j grad g_{i_j}(x)``; repeated indices count repeatedly."""
        indices = sorted(int(i) for i in np.atleast_1d(indices))
        if not indices:
            raise ValueError("minibatch needs at least one index")
        for i in indices:
            self._check_index(i)
        acc = self.blocks[indices[0]].grad(x)
        for i in indices[1:]:
            acc = acc + self.blocks[i].grad(x)
        return acc / len(indices)

    def grad(self, x) -> np.ndarray:
        return self.minibatch_grad(range(self.b), x)

    def default_init(self) -> np.ndarray:
        """``sum_i A_i^T y_i``, which is ``A^T y`` when the blocks partition the rows."""
        acc = self.blocks[0].default_init()
        for blk in self.blocks[1:]:
            acc = acc + blk.default_init()
        return acc


class BlockSampler:
    """Stream of block indices under the ``iid_uniform`` or ``epoch_shuffle`` rule."""

    RULES = ("iid_uniform", "epoch_shuffle")

    def __init__(self, rng: SeededRng, b: int, rule: str = "iid_uniform"):
        if b < 1:
            raise ValueError("b must be at least 1")
        if rule not in self.RULES:
            raise ValueError(f"unknown sampling rule {rule!r}; expected one of {self.RULES}")
        self.rng = rng
        self.b = b
        self.rule = rule
        self._epoch: list[int] = []

    def __iter__(self) -> Iterator[int]:
        return self

    def __next__(self) -> int:
        if self.rule == "iid_uniform":
            return int(self.rng.integers(self.b, 1)[0])
        if not self._epoch:
            self._epoch = [int(i) for i in self.rng.permutation(self.b)][::-1]
        return self._epoch.pop()

    def sample(self, p: int) -> list[int]:
        """Next `p` indices of the stream."""
        if self.rule == "iid_uniform":
            return [int(i) for i in self.rng.integers(self.b, p)]
        return [next(self) for _ in range(p)]


def block_sampler(rng: SeededRng, b: int, rule: str = "iid_uniform") -> BlockSampler:
    return BlockSampler(rng, b, rule)
