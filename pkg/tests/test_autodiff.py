"""Adjoint correctness of every primitive, checked against central finite
differences, plus the backward-pass contract."""

import numpy as np
import pytest

from tempsets import autodiff as ad


def rand(rows, cols, rng, positive=False):
    values = rng.uniform(0.1, 2.0, (rows, cols)) if positive else rng.standard_normal((rows, cols))
    return ad.parameter(values)


def check(build, params, tol=1e-6):
    report = ad.grad_check(build, params, step=1e-5, tol=tol)
    assert report["passed"], report
    return report


class TestPrimitiveAdjoints:
    """Each primitive in isolation, wrapped in a scalar reduction, on random
    shapes up to 6x6."""

    def test_matmul(self):
        rng = np.random.default_rng(0)
        a, b = rand(4, 6, rng), rand(6, 3, rng)
        check(lambda: ad.reduce_sum(ad.mul(ad.matmul(a, b), ad.constant(rng2_weights(4, 3)))), {"a": a, "b": b})

    def test_add_same_shape(self):
        rng = np.random.default_rng(1)
        a, b = rand(5, 4, rng), rand(5, 4, rng)
        check(lambda: ad.reduce_sum(ad.add(a, b)), {"a": a, "b": b})

    def test_add_row_broadcast(self):
        rng = np.random.default_rng(2)
        a, b = rand(5, 4, rng), rand(1, 4, rng)
        w = ad.constant(rng.standard_normal((5, 4)))
        check(lambda: ad.reduce_sum(ad.mul(ad.add(a, b), w)), {"a": a, "b": b})

    def test_mul(self):
        rng = np.random.default_rng(3)
        a, b = rand(6, 6, rng), rand(6, 6, rng)
        check(lambda: ad.reduce_sum(ad.mul(a, b)), {"a": a, "b": b})

    def test_scale(self):
        rng = np.random.default_rng(4)
        a = rand(3, 5, rng)
        check(lambda: ad.reduce_sum(ad.scale(a, -2.5)), {"a": a})

    def test_transpose(self):
        rng = np.random.default_rng(5)
        a = rand(2, 6, rng)
        w = ad.constant(rng.standard_normal((6, 2)))
        check(lambda: ad.reduce_sum(ad.mul(ad.transpose(a), w)), {"a": a})

    def test_concat_rows_and_cols(self):
        rng = np.random.default_rng(6)
        a, b = rand(2, 3, rng), rand(4, 3, rng)
        c, d = rand(3, 2, rng), rand(3, 4, rng)
        w0 = ad.constant(rng.standard_normal((6, 3)))
        w1 = ad.constant(rng.standard_normal((3, 6)))
        check(lambda: ad.reduce_sum(ad.mul(ad.concat([a, b], axis=0), w0)), {"a": a, "b": b})
        check(lambda: ad.reduce_sum(ad.mul(ad.concat([c, d], axis=1), w1)), {"c": c, "d": d})

    def test_row_gather_with_repeats(self):
        rng = np.random.default_rng(7)
        a = rand(5, 3, rng)
        w = ad.constant(rng.standard_normal((4, 3)))
        check(lambda: ad.reduce_sum(ad.mul(ad.row_gather(a, [0, 2, 2, 4]), w)), {"a": a})

    def test_row_scatter_update(self):
        rng = np.random.default_rng(8)
        a, u = rand(5, 3, rng), rand(2, 3, rng)
        w = ad.constant(rng.standard_normal((5, 3)))
        check(
            lambda: ad.reduce_sum(ad.mul(ad.row_scatter_update(a, [1, 3], u), w)),
            {"a": a, "u": u},
        )

    def test_relu(self):
        rng = np.random.default_rng(9)
        a = rand(4, 4, rng)
        a.values += 0.05 * np.sign(a.values)  # keep clear of the kink
        check(lambda: ad.reduce_sum(ad.relu(a)), {"a": a})

    def test_sigmoid(self):
        rng = np.random.default_rng(10)
        a = rand(4, 4, rng)
        check(lambda: ad.reduce_sum(ad.sigmoid(a)), {"a": a})

    def test_log(self):
        rng = np.random.default_rng(11)
        a = rand(4, 4, rng, positive=True)
        check(lambda: ad.reduce_sum(ad.log(a)), {"a": a})

    def test_clamp(self):
        rng = np.random.default_rng(12)
        a = rand(5, 5, rng)
        check(lambda: ad.reduce_sum(ad.clamp(a, -0.5, 0.5)), {"a": a})

    def test_powc(self):
        rng = np.random.default_rng(13)
        a = rand(3, 4, rng, positive=True)
        check(lambda: ad.reduce_sum(ad.powc(a, -0.5)), {"a": a})

    def test_masked_softmax(self):
        rng = np.random.default_rng(14)
        a = rand(4, 4, rng)
        mask = np.zeros((4, 4))
        mask[np.triu_indices(4, k=1)] = -np.inf
        w = ad.constant(rng.standard_normal((4, 4)))
        check(lambda: ad.reduce_sum(ad.mul(ad.masked_softmax(a, mask), w)), {"a": a})

    def test_reductions(self):
        rng = np.random.default_rng(15)
        for axis in (None, 0, 1):
            a = rand(4, 6, rng)
            out_shape = {None: (1, 1), 0: (1, 6), 1: (4, 1)}[axis]
            w = ad.constant(rng.standard_normal(out_shape))
            check(lambda: ad.reduce_sum(ad.mul(ad.reduce_mean(a, axis=axis), w)), {"a": a})
            check(lambda: ad.reduce_sum(ad.mul(ad.reduce_sum(a, axis=axis), w)), {"a": a})


def rng2_weights(rows, cols):
    return np.random.default_rng(99).standard_normal((rows, cols))


class TestForwardSemantics:
    def test_matmul_shape(self):
        out = ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 1))))
        assert out.shape == (2, 1)

    def test_matmul_shape_mismatch_names_shapes(self):
        with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(2, 1\)"):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 1))))

    def test_masked_softmax_annihilates_masked_entry(self):
        out = ad.masked_softmax(ad.constant([[0.0, 0.0]]), np.array([[0.0, -np.inf]]))
        np.testing.assert_array_equal(out.values, [[1.0, 0.0]])

    def test_sigmoid_at_zero(self):
        out = ad.sigmoid(ad.constant([[0.0]]))
        assert out.values[0, 0] == 0.5

    def test_tensors_are_2d_only(self):
        with pytest.raises(ValueError, match="2-D"):
            ad.Tensor(np.ones(3))


class TestBackward:
    def test_sum_gives_unit_grads(self):
        x = ad.parameter(np.array([[1.0], [2.0], [3.0]]))
        ad.backward(ad.reduce_sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 1)))

    def test_sigmoid_grad_at_zero(self):
        w = ad.parameter([[0.0]])
        ad.backward(ad.sigmoid(w))
        np.testing.assert_allclose(w.grad, [[0.25]], atol=1e-15)

    def test_non_scalar_loss_rejected(self):
        x = ad.parameter(np.ones((2, 2)))
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(x)

    def test_grad_accumulates_across_calls(self):
        x = ad.parameter([[2.0]])
        loss = lambda: ad.reduce_sum(ad.mul(x, x))
        ad.backward(loss())
        ad.backward(loss())
        np.testing.assert_allclose(x.grad, [[8.0]])
        x.zero_grad()
        assert x.grad is None

    def test_reused_node_accumulates(self):
        # q = (x + y) * (x + 1): dq/dx = (x + y) + (x + 1)
        x = ad.parameter([[2.0]])
        y = ad.parameter([[-4.0]])
        q = ad.mul(ad.add(x, y), ad.add(x, ad.constant([[1.0]])))
        ad.backward(q)
        np.testing.assert_allclose(x.grad, [[1.0]])
        np.testing.assert_allclose(y.grad, [[3.0]])

    def test_random_five_parameter_graph_matches_fd(self):
        """A small composite graph must match central differences at 1e-6."""
        rng = np.random.default_rng(21)
        params = {
            "w1": rand(3, 3, rng),
            "b1": rand(1, 3, rng),
            "w2": rand(3, 2, rng),
            "b2": rand(1, 2, rng),
            "x": rand(4, 3, rng),
        }

        def f():
            h = ad.sigmoid(ad.add(ad.matmul(params["x"], params["w1"]), params["b1"]))
            out = ad.add(ad.matmul(h, params["w2"]), params["b2"])
            return ad.reduce_mean(ad.mul(out, out))

        report = ad.grad_check(f, params, step=1e-5, tol=1e-6)
        assert report["passed"], report

    def test_deep_tape_does_not_recurse(self):
        x = ad.parameter([[1.0]])
        out = x
        for _ in range(5000):
            out = ad.scale(out, 1.0)
        ad.backward(ad.reduce_sum(out))
        np.testing.assert_allclose(x.grad, [[1.0]])

    def test_determinism(self):
        """Same inputs give bit-identical forward values and gradients."""

        def run():
            rng = np.random.default_rng(33)
            a = ad.parameter(rng.standard_normal((5, 5)))
            b = ad.parameter(rng.standard_normal((5, 5)))
            loss = ad.reduce_mean(ad.sigmoid(ad.matmul(a, b)))
            ad.backward(loss)
            return loss.values.copy(), a.grad.copy(), b.grad.copy()

        first, second = run(), run()
        for x, y in zip(first, second):
            np.testing.assert_array_equal(x, y)


class TestGradCheck:
    def test_linear_model_is_exact(self):
        """Linear in the parameter: FD and reverse mode agree to 1e-8."""
        w = ad.parameter(np.array([[0.7, -1.2, 0.4]]))
        x = ad.constant(np.array([[2.0], [0.5], [-1.0]]))
        report = ad.grad_check(lambda: ad.matmul(w, x), {"w": w}, step=1e-5, tol=1e-8)
        assert report["passed"], report

    def test_constant_function_gives_zero_grads(self):
        w = ad.parameter([[3.0]])
        report = ad.grad_check(lambda: ad.reduce_sum(ad.constant([[1.0]])), {"w": w})
        assert report["passed"]
        assert report["max_rel_err"] == 0.0
