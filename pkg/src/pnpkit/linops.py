"""Matrix-free linear operators, power-iteration norm estimates and CG."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import NonFiniteError, SeededRng, ShapeError, dot, norm2

__all__ = [
    "LinearOperator",
    "Identity",
    "Diagonal",
    "PeriodicConvolution",
    "Decimation",
    "Composition",
    "MatrixOperator",
    "Restriction",
    "DenseRandomProjection",
    "gaussian_kernel",
    "superres_operator",
    "operator_norm",
    "cg_solve",
    "CGInfo",
]


def _shape(s) -> tuple[int, ...]:
    return tuple(int(n) for n in np.atleast_1d(s))


class LinearOperator:
    """Linear map between real arrays of fixed shapes.

    Subclasses implement :meth:`_eval` and :meth:`_adj`; the public
    :meth:`apply` and :meth:`adjoint` check shapes on the way in.
    Operators are immutable after construction.

    Args:
        input_shape: Shape of the domain arrays.
        output_shape: Shape of the range arrays.
    """

    def __init__(self, input_shape, output_shape):
        self.input_shape = _shape(input_shape)
        self.output_shape = _shape(output_shape)

    def _eval(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adj(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ShapeError(self.input_shape, x.shape, what=f"{type(self).__name__} input")
        return self._eval(x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.output_shape:
            raise ShapeError(self.output_shape, y.shape, what=f"{type(self).__name__} adjoint input")
        return self._adj(y)

    __call__ = apply

    @property
    def T(self) -> "LinearOperator":
        return _Adjoint(self)

    def __matmul__(self, other: "LinearOperator") -> "Composition":
        return Composition([other, self])

    def gram_diagonal(self) -> np.ndarray | None:
        """Diagonal of ``A^T A`` if that matrix is diagonal, else None."""
        return None

    def gram_spectrum(self) -> np.ndarray | None:
        """FFT-domain eigenvalues of ``A^T A`` if it is circulant, else None."""
        return None

    def __repr__(self):
        return f"{type(self).__name__}({self.input_shape} -> {self.output_shape})"


class _Adjoint(LinearOperator):
    def __init__(self, op: LinearOperator):
        super().__init__(op.output_shape, op.input_shape)
        self.op = op

    def _eval(self, x):
        return self.op._adj(x)

    def _adj(self, y):
        return self.op._eval(y)


class Identity(LinearOperator):
    def __init__(self, shape):
        super().__init__(shape, shape)

    def _eval(self, x):
        return x.copy()

    def _adj(self, y):
        return y.copy()

    def gram_diagonal(self):
        return np.ones(self.input_shape)


class Diagonal(LinearOperator):
    """Elementwise weighting ``x -> w * x`` (a binary mask is a special case)."""

    def __init__(self, weights):
        self.weights = np.array(weights, dtype=np.float64)
        self.weights.setflags(write=False)
        super().__init__(self.weights.shape, self.weights.shape)

    def _eval(self, x):
        return self.weights * x

    def _adj(self, y):
        return self.weights * y

    def gram_diagonal(self):
        return self.weights**2


def _embed_kernel(kernel: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Zero-pad `kernel` to `shape` with its centre moved to index 0."""
    if kernel.ndim != len(shape) or any(k > n for k, n in zip(kernel.shape, shape)):
        raise ShapeError(shape, kernel.shape, what="convolution kernel")
    full = np.zeros(shape)
    full[tuple(slice(0, k) for k in kernel.shape)] = kernel
    return np.roll(full, [-(k // 2) for k in kernel.shape], axis=tuple(range(len(shape))))


class PeriodicConvolution(LinearOperator):
    """Circular convolution with a small kernel, output the same shape as input.

    The kernel centre is ``kernel.shape[i] // 2`` along each axis. Products
    are evaluated with real FFTs; the adjoint multiplies by the conjugate
    transfer function, i.e. correlates with the same kernel.

    Args:
        kernel: Kernel array with the same number of dimensions as the image.
        shape: Image shape.
    """

    def __init__(self, kernel, shape):
        shape = _shape(shape)
        super().__init__(shape, shape)
        self.kernel = np.array(kernel, dtype=np.float64)
        self._axes = tuple(range(len(shape)))
        self._full = _embed_kernel(self.kernel, shape)
        self.transfer = np.fft.rfftn(self._full, axes=self._axes)

    def _eval(self, x):
        return np.fft.irfftn(
            np.fft.rfftn(x, axes=self._axes) * self.transfer, s=self.input_shape, axes=self._axes
        )

    def _adj(self, y):
        return np.fft.irfftn(
            np.fft.rfftn(y, axes=self._axes) * np.conj(self.transfer), s=self.input_shape, axes=self._axes
        )

    def gram_spectrum(self):
        return np.abs(self.transfer) ** 2


class Decimation(LinearOperator):
    """Keep every `rate`-th sample along each axis, starting at index 0.

    Args:
        input_shape: Full-resolution shape.
        rate: Integer rate, either one for all axes or one per axis.
    """

    def __init__(self, input_shape, rate):
        input_shape = _shape(input_shape)
        rate = tuple(int(r) for r in np.broadcast_to(np.atleast_1d(rate), (len(input_shape),)))
        if any(r < 1 for r in rate):
            raise ValueError(f"decimation rates must be positive, got {rate}")
        self.rate = rate
        self._sl = tuple(slice(0, None, r) for r in rate)
        output_shape = tuple(-(-n // r) for n, r in zip(input_shape, rate))
        super().__init__(input_shape, output_shape)

    def _eval(self, x):
        return x[self._sl].copy()

    def _adj(self, y):
        out = np.zeros(self.input_shape)
        out[self._sl] = y
        return out

    def gram_diagonal(self):
        mask = np.zeros(self.input_shape)
        mask[self._sl] = 1.0
        return mask


class Composition(LinearOperator):
    """Apply ``ops[0]`` first, then ``ops[1]``, and so on."""

    def __init__(self, ops: Sequence[LinearOperator]):
        ops = list(ops)
        if not ops:
            raise ValueError("composition needs at least one operator")
        for a, b in zip(ops[:-1], ops[1:]):
            if a.output_shape != b.input_shape:
                raise ShapeError(b.input_shape, a.output_shape, what="composition link")
        self.ops = ops
        super().__init__(ops[0].input_shape, ops[-1].output_shape)

    def _eval(self, x):
        for op in self.ops:
            x = op._eval(x)
        return x

    def _adj(self, y):
        for op in reversed(self.ops):
            y = op._adj(y)
        return y


class Restriction(LinearOperator):
    """Select entries of the flattened input: ``x -> x.ravel()[indices]``.

    The adjoint scatters back into zeros (repeated indices accumulate).
    """

    def __init__(self, input_shape, indices):
        self.indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        input_shape = _shape(input_shape)
        n = int(np.prod(input_shape))
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise IndexError(f"restriction indices out of range for {n} entries")
        super().__init__(input_shape, (self.indices.size,))

    def _eval(self, x):
        return x.reshape(-1)[self.indices]

    def _adj(self, y):
        out = np.zeros(int(np.prod(self.input_shape)))
        np.add.at(out, self.indices, y)
        return out.reshape(self.input_shape)


class MatrixOperator(LinearOperator):
    """Dense matrix acting on flattened arrays."""

    def __init__(self, matrix, input_shape=None, output_shape=None):
        self.matrix = np.array(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("matrix must be 2-D")
        m, n = self.matrix.shape
        input_shape = (n,) if input_shape is None else _shape(input_shape)
        output_shape = (m,) if output_shape is None else _shape(output_shape)
        if int(np.prod(input_shape)) != n or int(np.prod(output_shape)) != m:
            raise ShapeError((m, n), (np.prod(output_shape), np.prod(input_shape)), what="matrix")
        super().__init__(input_shape, output_shape)

    def _eval(self, x):
        return (self.matrix @ x.reshape(-1)).reshape(self.output_shape)

    def _adj(self, y):
        return (self.matrix.T @ y.reshape(-1)).reshape(self.input_shape)

    def row_blocks(self, b: int) -> list["MatrixOperator"]:
        """Split the rows into `b` nearly equal contiguous blocks."""
        return [
            MatrixOperator(rows, self.input_shape)
            for rows in np.array_split(self.matrix, b, axis=0)
        ]


class DenseRandomProjection(MatrixOperator):
    """``m x n`` matrix with i.i.d. ``N(0, 1/m)`` entries drawn from `seed`."""

    def __init__(self, m: int, input_shape, seed: int = 0):
        input_shape = _shape(input_shape)
        n = int(np.prod(input_shape))
        self.seed = seed
        matrix = SeededRng(seed).normal((m, n), 1.0 / np.sqrt(m))
        super().__init__(matrix, input_shape, (m,))


def gaussian_kernel(sigma: float, ndim: int = 2, radius: int | None = None) -> np.ndarray:
    """Normalized, truncated Gaussian kernel of odd size ``2 * radius + 1``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if radius is None:
        radius = max(1, int(np.ceil(3 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    g /= g.sum()
    k = g
    for _ in range(ndim - 1):
        k = np.multiply.outer(k, g)
    return k / k.sum()


def superres_operator(shape, rate: int, blur_sigma: float = 1.0) -> Composition:
    """Blur with a periodic Gaussian, then decimate by `rate`."""
    shape = _shape(shape)
    blur = PeriodicConvolution(gaussian_kernel(blur_sigma, len(shape)), shape)
    return Composition([blur, Decimation(shape, rate)])


def operator_norm(op: LinearOperator, rng: SeededRng | None = None, iters: int = 100) -> float:
    """Power-iteration estimate of the spectral norm ``sqrt(lambda_max(A^T A))``.

    The estimate is ``||A v_k||`` for the normalized iterate ``v_k``, which
    never decreases with `iters` (up to rounding).
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = SeededRng(0) if rng is None else rng
    v = rng.normal(op.input_shape)
    v /= norm2(v)
    est = 0.0
    for _ in range(iters):
        av = op.apply(v)
        est = norm2(av)
        w = op.adjoint(av)
        nw = norm2(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return norm2(op.apply(v)) if est > 0 else est


class CGInfo(tuple):
    """``(x, iters, residual)`` with the residual history attached."""

    history: list[float]

    def __new__(cls, x, iters, residual, history):
        obj = super().__new__(cls, (x, iters, residual))
        obj.history = history
        return obj


def cg_solve(
    op: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-5,
    maxiter: int = 1000,
    min_iters: int = 0,
) -> CGInfo:
    """Conjugate gradient for a symmetric positive definite operator.

    Args:
        op: Callable applying the SPD operator (a :class:`LinearOperator`
            works if it is self-adjoint).
        b: Right-hand side.
        x0: Initial guess; zeros if omitted.
        tol: Relative residual target ``||op(x) - b|| / ||b||``.
        maxiter: Maximum number of CG steps.
        min_iters: Run at least this many steps even if `tol` is already
            met (used for fixed-length partial updates).

    Returns:
        Tuple ``(x, iters, residual)`` where `residual` is the final
        relative residual. The per-step relative residuals are available as
        ``.history``.

    Raises:
        NonFiniteError: If a NaN/Inf appears, naming the iteration.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = norm2(b)
    scale = bnorm if bnorm > 0 else 1.0
    r = b - op(x)
    rr = dot(r, r)
    history = [np.sqrt(rr) / scale]
    if not np.isfinite(rr):
        raise NonFiniteError("non-finite residual in CG at iteration 0")
    p = r.copy()
    k = 0
    while k < maxiter and (history[-1] > tol or k < min_iters) and rr > 0:
        q = op(p)
        pq = dot(p, q)
        alpha = rr / pq
        x = x + alpha * p
        r = r - alpha * q
        rr_new = dot(r, r)
        k += 1
        if not (np.isfinite(alpha) and np.isfinite(rr_new)):
            raise NonFiniteError(f"non-finite values in CG at iteration {k}")
        history.append(np.sqrt(rr_new) / scale)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGInfo(x, k, history[-1], history)
