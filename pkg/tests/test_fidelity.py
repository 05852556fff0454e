import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import lasso_instance

from pnpkit import (
    BlockFidelity,
    BlockSampler,
    DataFidelity,
    Diagonal,
    Identity,
    MatrixOperator,
    PeriodicConvolution,
    ProxWarmState,
    SeededRng,
    ShapeError,
    SoftThreshold,
    SolverConfig,
    gaussian_kernel,
    norm2,
    pnp_admm,
)


def random_fidelity(seed=0, m=12, n=16, weight=1.0):
    rng = SeededRng(seed)
    A = MatrixOperator(rng.normal((m, n)))
    return DataFidelity(A, rng.normal(m), weight)


def test_value_nonnegative_and_zero_on_consistent_data():
    A = MatrixOperator(SeededRng(0).normal((5, 5)))
    x = SeededRng(1).normal(5)
    g = DataFidelity(A, A(x))
    assert g(x) == 0.0
    assert g(x + 0.1) > 0.0
    with pytest.raises(ValueError):
        DataFidelity(A, A(x), weight=0.0)


def test_grad_hand_values():
    y = np.array([1.0, -2.0])
    np.testing.assert_array_equal(DataFidelity(Identity((2,)), y).grad(y), np.zeros(2))
    g = DataFidelity(Diagonal([2.0]), np.array([0.0]))
    np.testing.assert_array_equal(g.grad(np.array([1.0])), [4.0])
    with pytest.raises(ShapeError):
        g.grad(np.zeros(2))


@pytest.mark.parametrize("weight", [1.0, 2.5])
def test_grad_matches_central_differences(weight):
    g = random_fidelity(3, weight=weight)
    x = SeededRng(4).normal(16)
    h = 1e-6
    fd = np.array([(g(x + h * e) - g(x - h * e)) / (2 * h) for e in np.eye(16)])
    assert norm2(fd - g.grad(x)) <= 1e-5 * norm2(g.grad(x))


def test_prox_identity_scalar_formula():
    g = DataFidelity(Identity((1,)), np.array([1.0]))
    assert g.prox(np.array([0.0]), 1.0, method="closed_form")[0] == 0.5
    assert g.prox(np.array([0.0]), 1.0)[0] == 0.5


def test_prox_at_least_squares_solution_is_unchanged():
    g = random_fidelity(5, m=20, n=8)
    M = g.op.matrix
    x_ls = np.linalg.solve(M.T @ M, M.T @ g.y)
    out = g.prox(x_ls, 0.7, method="cg", tol=1e-8)
    np.testing.assert_array_equal(out, x_ls)


def test_prox_cg_against_direct_solve():
    g = random_fidelity(6)
    x = SeededRng(7).normal(16)
    gamma = 0.8
    M = g.op.matrix
    direct = np.linalg.solve(np.eye(16) + gamma * M.T @ M, x + gamma * M.T @ g.y)
    out = g.prox(x, gamma, method="cg", tol=1e-14, maxiter=200)
    assert norm2(out - direct) <= 1e-8 * norm2(direct)


def test_closed_form_prox_for_convolution_matches_dense_solve():
    shape = (6, 5)
    op = PeriodicConvolution(gaussian_kernel(0.8, 2, radius=1), shape)
    y = SeededRng(8).normal(shape)
    g = DataFidelity(op, y, weight=1.5)
    M = np.stack([op(e.reshape(shape)).reshape(-1) for e in np.eye(30)], axis=1)
    x = SeededRng(9).normal(shape)
    c = 0.6 * 1.5
    direct = np.linalg.solve(np.eye(30) + c * M.T @ M, x.reshape(-1) + c * M.T @ y.reshape(-1))
    np.testing.assert_allclose(g.prox(x, 0.6, method="closed_form").reshape(-1), direct, atol=1e-12)


def test_closed_form_rejected_for_dense_operator():
    g = random_fidelity(1)
    with pytest.raises(ValueError, match="closed_form"):
        g.prox(np.zeros(16), 1.0, method="closed_form")
    with pytest.raises(ValueError):
        g.prox(np.zeros(16), 0.0)
    with pytest.raises(ValueError):
        g.prox(np.zeros(16), 1.0, method="bogus")
    with pytest.raises(ValueError):
        g.prox(np.zeros(16), 1.0, method="partial")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_prox_first_order_optimality_closed_form(seed, gamma):
    rng = SeededRng(seed)
    g = DataFidelity(Diagonal(rng.normal(10)), rng.normal(10), weight=0.5 + rng.uniform(1)[0])
    x = rng.normal(10)
    p = g.prox(x, gamma, method="closed_form")
    assert norm2(p + gamma * g.grad(p) - x) <= 1e-12 * max(norm2(x), 1.0) * (1 + gamma)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 10.0))
def test_prox_first_order_optimality_cg(seed, gamma):
    g = random_fidelity(seed)
    x = SeededRng(seed + 1).normal(16)
    p = g.prox(x, gamma, method="cg", tol=1e-10, maxiter=500)
    rhs = x + gamma * g.op.adjoint(g.y)
    # the identity holds up to the CG relative residual
    assert norm2(p + gamma * g.grad(p) - x) <= 1e-10 * norm2(rhs) * 1.0001


def test_partial_prox_runs_exactly_k_inner_steps_and_updates_state():
    g = random_fidelity(2)
    x = SeededRng(3).normal(16)
    state = ProxWarmState()
    out1 = g.prox(x, 1.0, method="partial", warm_state=state, k_inner=2)
    assert len(state.residuals) == 1 and state.x.shape == x.shape
    assert out1 is not state.x
    # two steps of CG from x, reproduced independently
    A = g.op.matrix
    S = np.eye(16) + A.T @ A
    b = x + A.T @ g.y
    xk, r = x.copy(), b - S @ x
    p = r.copy()
    for _ in range(2):
        q = S @ p
        a = (r @ r) / (p @ q)
        xk = xk + a * p
        r_new = r - a * q
        p = r_new + (r_new @ r_new) / (r @ r) * p
        r = r_new
    np.testing.assert_allclose(out1, xk, rtol=1e-10)
    g.prox(x, 1.0, method="partial", warm_state=state, k_inner=2)
    assert len(state.residuals) == 2 and state.residuals[1] < state.residuals[0]


def test_partial_prox_warm_residuals_nonincreasing_once_stable():
    _, _, g = lasso_instance()
    cfg = SolverConfig(gamma=1.0, prox_method="partial", k_inner=3, max_iters=300, fp_tol=1e-12)
    _, trace = pnp_admm(g, SoftThreshold(0.1), cfg)
    r = np.array(trace.state["prox_warm_residuals"])
    tail = r[20:]
    assert len(tail) > 50
    assert np.all(np.diff(tail) <= 1e-12)


# -- blocks ------------------------------------------------------------------


def test_block_sums_match_full_term():
    g = random_fidelity(11, m=20)
    x = SeededRng(12).normal(16)
    for b in (1, 3, 4, 20):
        bf = BlockFidelity.split(g, b, weight=b)
        assert abs(bf(x) - g(x)) <= 1e-12 * g(x)
        assert norm2(bf.grad(x) - g.grad(x)) <= 1e-12 * norm2(g.grad(x))
        rows = BlockFidelity.from_rows(g.op, g.y, b, weight=b)
        assert norm2(rows.grad(x) - g.grad(x)) <= 1e-12 * norm2(g.grad(x))


def test_block_definition_is_mean_of_blocks():
    g = random_fidelity(13, m=9)
    bf = BlockFidelity.split(g, 3)
    x = SeededRng(1).normal(16)
    assert bf(x) == sum(blk(x) for blk in bf.blocks) / 3
    np.testing.assert_allclose(bf.grad(x), sum(blk.grad(x) for blk in bf.blocks) / 3, rtol=1e-14)


def test_single_block_is_bitwise_batch():
    g = random_fidelity(14)
    bf = BlockFidelity.from_rows(g.op, g.y, 1)
    x = SeededRng(2).normal(16)
    np.testing.assert_array_equal(bf.block_grad(0, x), g.grad(x))
    np.testing.assert_array_equal(bf.minibatch_grad([0], x), g.grad(x))


def test_minibatch_order_independent_and_errors():
    g = random_fidelity(15, m=8)
    bf = BlockFidelity.split(g, 4)
    x = SeededRng(3).normal(16)
    np.testing.assert_array_equal(bf.minibatch_grad([3, 0, 2], x), bf.minibatch_grad([0, 2, 3], x))
    with pytest.raises(IndexError):
        bf.block_grad(4, x)
    with pytest.raises(ValueError):
        bf.minibatch_grad([], x)
    with pytest.raises(ValueError):
        BlockFidelity.split(g, 9)


def test_minibatch_unbiased_monte_carlo():
    g = random_fidelity(16, m=16)
    bf = BlockFidelity.split(g, 4, weight=4)
    x = SeededRng(4).normal(16)
    grads = np.stack([bf.minibatch_grad([i], x) for i in range(4)])
    draws = BlockSampler(SeededRng(5), 4).sample(100_000)
    counts = np.bincount(draws, minlength=4)
    mean = counts @ grads / len(draws)
    sd = grads.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(mean - bf.grad(x)) <= 3 * sd + 1e-15)


def _empirical_variance(bf, x, p, draws, seed):
    sampler = BlockSampler(SeededRng(seed), bf.b)
    full = bf.grad(x)
    acc = 0.0
    for _ in range(draws):
        acc += norm2(bf.minibatch_grad(sampler.sample(p), x) - full) ** 2
    return acc / draws


def test_minibatch_variance_scales_like_one_over_p():
    g = random_fidelity(17, m=16)
    bf = BlockFidelity.split(g, 4, weight=4)
    x = SeededRng(6).normal(16)
    v = {p: _empirical_variance(bf, x, p, 20_000, 40 + p) for p in (1, 2, 4)}
    assert v[4] < v[2] < v[1]
    for p in (2, 4):
        assert abs(v[p] * p / v[1] - 1.0) < 0.1


# -- samplers ----------------------------------------------------------------


def test_sampler_single_block_constant():
    for rule in BlockSampler.RULES:
        assert BlockSampler(SeededRng(0), 1, rule).sample(10) == [0] * 10


def test_epoch_shuffle_windows_are_permutations():
    s = BlockSampler(SeededRng(1), 4, "epoch_shuffle")
    stream = s.sample(4 * 50)
    for k in range(50):
        assert sorted(stream[4 * k: 4 * k + 4]) == [0, 1, 2, 3]
    assert next(iter(s)) in range(4)


def test_iid_uniform_frequencies():
    draws = BlockSampler(SeededRng(2), 4, "iid_uniform").sample(100_000)
    freq = np.bincount(draws, minlength=4) / len(draws)
    assert np.all(np.abs(freq - 0.25) <= 0.005)


def test_sampler_rejects_bad_arguments():
    with pytest.raises(ValueError):
        BlockSampler(SeededRng(0), 0)
    with pytest.raises(ValueError):
        BlockSampler(SeededRng(0), 3, "roundrobin")
