"""Gradient and value checks for the reverse-mode autodiff ops."""

import numpy as np
import pytest

from semi import autodiff as ad


def numeric_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        xm = flat.copy()
        xm[i] -= eps
        gf[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * eps)
    return g


def rel_err(a, n):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return np.max(np.abs(a - n) / denom)


def check_unary(op, plain, x):
    """Compare analytic grad of sum(op(x)) against central differences."""
    node = ad.Node(x)
    out = ad.sum_(op(node))
    ad.backward(out)
    num = numeric_grad(lambda v: float(np.sum(plain(v))), x)
    assert rel_err(node.grad, num) < 1e-6


class TestElementwiseOps:
    """Each op matches numpy in plain mode and finite differences in graph mode."""

    def test_plain_mode_returns_ndarray(self):
        out = ad.add(np.ones(3), np.ones(3))
        assert isinstance(out, np.ndarray)
        assert np.allclose(out, 2.0)

    def test_add_broadcast_bias(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 3))
        b = rng.normal(size=3)
        xb, bb = ad.Node(x), ad.Node(b)
        out = ad.sum_(ad.mul(ad.add(xb, bb), ad.add(xb, bb)))
        ad.backward(out)
        num_b = numeric_grad(lambda v: float(np.sum((x + v) ** 2)), b)
        assert rel_err(bb.grad, num_b) < 1e-6
        assert bb.grad.shape == b.shape

    def test_unary_ops(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 4))
        check_unary(ad.tanh, np.tanh, x)
        check_unary(ad.exp, np.exp, x)
        check_unary(ad.square, np.square, x)
        check_unary(ad.neg, np.negative, x)
        check_unary(ad.log, np.log, np.abs(x) + 0.5)
        # keep relu inputs away from the kink
        xr = x.copy()
        xr[np.abs(xr) < 0.05] = 0.5
        check_unary(ad.relu, lambda v: np.maximum(v, 0.0), xr)

    def test_mul_sub(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(2, 5))
        b = rng.normal(size=(2, 5))
        an, bn = ad.Node(a), ad.Node(b)
        out = ad.sum_(ad.mul(ad.sub(an, bn), an))
        ad.backward(out)
        assert rel_err(an.grad, numeric_grad(lambda v: float(np.sum((v - b) * v)), a)) < 1e-6
        assert rel_err(bn.grad, numeric_grad(lambda v: float(np.sum((a - v) * a)), b)) < 1e-6

    def test_clip_gradient_masks_bounds(self):
        x = np.array([-2.0, -0.5, 0.5, 2.0])
        node = ad.Node(x)
        out = ad.sum_(ad.clip(node, -1.0, 1.0))
        ad.backward(out)
        assert np.array_equal(node.grad, np.array([0.0, 1.0, 1.0, 0.0]))

    def test_minimum_picks_smaller_branch(self):
        a = np.array([1.0, 5.0])
        b = np.array([3.0, 2.0])
        an, bn = ad.Node(a), ad.Node(b)
        ad.backward(ad.sum_(ad.minimum(an, bn)))
        assert np.array_equal(an.grad, np.array([1.0, 0.0]))
        assert np.array_equal(bn.grad, np.array([0.0, 1.0]))


class TestReductionsAndSoftmax:
    """Reductions, softmax, and logsumexp against hand formulas."""

    def test_mean_axis(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 6))
        node = ad.Node(x)
        out = ad.sum_(ad.square(ad.mean(node, axis=1)))
        ad.backward(out)
        num = numeric_grad(lambda v: float(np.sum(np.mean(v, axis=1) ** 2)), x)
        assert rel_err(node.grad, num) < 1e-6

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, 7)) * 3
        s = ad.softmax(x)
        assert np.allclose(s.sum(axis=1), 1.0)

    def test_softmax_grad(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))
        node = ad.Node(x)
        out = ad.sum_(ad.mul(ad.softmax(node), w))
        ad.backward(out)
        num = numeric_grad(
            lambda v: float(
                np.sum(w * (np.exp(v) / np.exp(v).sum(axis=1, keepdims=True)))
            ),
            x,
        )
        assert rel_err(node.grad, num) < 1e-6

    def test_logsumexp_matches_direct(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 9)) * 10
        got = ad.logsumexp(x)
        want = np.log(np.exp(x - x.max(axis=1, keepdims=True)).sum(axis=1)) + x.max(axis=1)
        assert np.allclose(got, want)

    def test_logsumexp_grad_is_softmax(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 5))
        node = ad.Node(x)
        ad.backward(ad.sum_(ad.logsumexp(node)))
        assert np.allclose(node.grad, ad.softmax(x))

    def test_logsumexp_stable_at_large_inputs(self):
        x = np.array([[1000.0, 1000.0]])
        assert np.isclose(ad.logsumexp(x)[0], 1000.0 + np.log(2.0))


class TestIndexingOps:
    """Gather ops accumulate correctly through repeated indices."""

    def test_take_repeated_indices(self):
        x = np.array([1.0, 2.0, 3.0])
        node = ad.Node(x)
        ad.backward(ad.sum_(ad.take(node, [0, 0, 2])))
        assert np.array_equal(node.grad, np.array([2.0, 0.0, 1.0]))

    def test_gather2d_values_and_grad(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 3))
        rows = [0, 2, 2]
        cols = [1, 0, 0]
        node = ad.Node(x)
        out = ad.gather2d(node, rows, cols)
        assert np.array_equal(out.value, x[rows, cols])
        ad.backward(ad.sum_(out))
        expect = np.zeros_like(x)
        np.add.at(expect, (rows, cols), 1.0)
        assert np.array_equal(node.grad, expect)

    def test_concat_splits_gradient(self):
        a = ad.Node(np.ones((2, 2)))
        b = ad.Node(np.ones((3, 2)))
        out = ad.concat([a, b], axis=0)
        ad.backward(ad.sum_(ad.mul(out, out)))
        assert a.grad.shape == (2, 2)
        assert b.grad.shape == (3, 2)
        assert np.allclose(a.grad, 2.0)

    def test_matmul_grad(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        an, bn = ad.Node(a), ad.Node(b)
        ad.backward(ad.sum_(ad.square(ad.matmul(an, bn))))
        num_a = numeric_grad(lambda v: float(np.sum((v @ b) ** 2)), a)
        num_b = numeric_grad(lambda v: float(np.sum((a @ v) ** 2)), b)
        assert rel_err(an.grad, num_a) < 1e-6
        assert rel_err(bn.grad, num_b) < 1e-6


class TestPairwiseCosine:
    """Cosine similarity values, gradients, and zero-norm handling."""

    def test_matches_manual_formula(self):
        rng = np.random.default_rng(10)
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(5, 6))
        sims = ad.pairwise_cosine(a, b)
        want = np.zeros((4, 5))
        for i in range(4):
            for j in range(5):
                want[i, j] = a[i] @ b[j] / (np.linalg.norm(a[i]) * np.linalg.norm(b[j]))
        assert np.allclose(sims, want)

    def test_gradients(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 4))
        w = rng.normal(size=(3, 4))
        an, bn = ad.Node(a), ad.Node(b)
        ad.backward(ad.sum_(ad.mul(ad.pairwise_cosine(an, bn), w)))

        def f_a(v):
            n1 = v / np.linalg.norm(v, axis=1, keepdims=True)
            n2 = b / np.linalg.norm(b, axis=1, keepdims=True)
            return float(np.sum(w * (n1 @ n2.T)))

        def f_b(v):
            n1 = a / np.linalg.norm(a, axis=1, keepdims=True)
            n2 = v / np.linalg.norm(v, axis=1, keepdims=True)
            return float(np.sum(w * (n1 @ n2.T)))

        assert rel_err(an.grad, numeric_grad(f_a, a)) < 1e-6
        assert rel_err(bn.grad, numeric_grad(f_b, b)) < 1e-6

    def test_zero_row_gets_zero_similarity_and_grad(self):
        a = np.array([[0.0, 0.0], [1.0, 0.0]])
        b = np.array([[0.0, 1.0]])
        an = ad.Node(a)
        out = ad.pairwise_cosine(an, ad.Node(b))
        assert out.value[0, 0] == 0.0
        ad.backward(ad.sum_(out))
        assert np.all(np.isfinite(an.grad))
        assert np.array_equal(an.grad[0], np.zeros(2))


class TestGraphMechanics:
    """Backward bookkeeping and failure modes."""

    def test_diamond_graph_accumulates(self):
        x = ad.Node(np.array(3.0))
        y = ad.add(ad.mul(x, x), x)
        ad.backward(y)
        assert np.isclose(x.grad, 2 * 3.0 + 1.0)

    def test_backward_rejects_non_scalar(self):
        x = ad.Node(np.ones(3))
        with pytest.raises(ValueError):
            ad.backward(ad.mul(x, x))

    def test_non_finite_raises_with_op_name(self):
        x = ad.Node(np.array([-1.0]))
        with pytest.raises(ad.NonFiniteError, match="log"):
            ad.log(x)

    def test_shared_subgraph_reused(self):
        x = ad.Node(np.array(2.0))
        h = ad.mul(x, x)
        y = ad.add(h, h)
        ad.backward(y)
        assert np.isclose(x.grad, 8.0)
