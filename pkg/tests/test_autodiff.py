"""Finite-difference gradient checks for every reverse-mode op."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import seqrl.autodiff as ad


def check_grads(build, arrays, rng, h=1e-6, atol=1e-6):
    """Compare tape gradients of loss = sum(out * W) against central
    finite differences, elementwise over every input array."""
    def forward(arrs):
        return build(*[ad.Tensor(a) for a in arrs]).data

    weight = rng.normal(size=forward(arrays).shape)

    def scalar(arrs):
        return float((forward(arrs) * weight).sum())

    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        loss = ad.tsum(ad.mul(build(*tensors), weight))
    tape.backward(loss)

    for k, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        flat = numeric.ravel()
        for i in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[k].ravel()[i] = base.ravel()[i] + h
            up = scalar(bumped)
            bumped[k].ravel()[i] = base.ravel()[i] - h
            down = scalar(bumped)
            flat[i] = (up - down) / (2.0 * h)
        got = tensors[k].grad
        assert got is not None, f"input {k} received no gradient"
        assert_allclose(got, numeric, atol=atol)


class TestElementwiseOps:
    def test_add_with_broadcasting(self):
        rng = np.random.default_rng(301)
        check_grads(ad.add, [rng.normal(size=(3, 4)), rng.normal(size=(4,))], rng)
        check_grads(ad.add, [rng.normal(size=(3, 1)), rng.normal(size=(3, 4))], rng)

    def test_mul_with_broadcasting(self):
        rng = np.random.default_rng(302)
        check_grads(ad.mul, [rng.normal(size=(3, 4)), rng.normal(size=(4,))], rng)
        check_grads(ad.mul, [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))], rng)

    def test_tanh(self):
        rng = np.random.default_rng(303)
        check_grads(ad.tanh, [rng.normal(size=(4, 5))], rng)

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(304)
        x = rng.normal(size=(4, 5))
        x[np.abs(x) < 0.05] = 0.5  # finite differences are wrong at the kink
        check_grads(ad.relu, [x], rng)

    def test_exp(self):
        rng = np.random.default_rng(305)
        check_grads(ad.exp, [rng.normal(size=(3, 3))], rng)

    def test_minimum(self):
        rng = np.random.default_rng(306)
        a = rng.normal(size=(4, 4))
        b = a + rng.choice([-0.5, 0.5], size=(4, 4))  # keep branches apart
        check_grads(ad.minimum, [a, b], rng)

    def test_clip_interior_and_blocked(self):
        rng = np.random.default_rng(307)
        x = rng.uniform(-0.8, 0.8, size=(3, 4))
        check_grads(lambda t: ad.clip(t, -1.0, 1.0), [x], rng)
        # saturated elements must receive exactly zero gradient
        t = ad.Tensor(np.array([-2.0, 0.0, 2.0]), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.tsum(ad.clip(t, -1.0, 1.0))
        tape.backward(loss)
        assert_allclose(t.grad, [0.0, 1.0, 0.0])


class TestMatmulOps:
    def test_matmul(self):
        rng = np.random.default_rng(308)
        check_grads(ad.matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 5))], rng)

    def test_matmul_transpose_b(self):
        rng = np.random.default_rng(309)
        check_grads(
            lambda a, b: ad.matmul(a, b, transpose_b=True),
            [rng.normal(size=(3, 4)), rng.normal(size=(5, 4))],
            rng,
        )

    def test_attn_scores(self):
        rng = np.random.default_rng(310)
        check_grads(ad.attn_scores, [rng.normal(size=(2, 5)), rng.normal(size=(2, 3, 5))], rng)

    def test_attn_context(self):
        rng = np.random.default_rng(311)
        check_grads(ad.attn_context, [rng.normal(size=(2, 3)), rng.normal(size=(2, 3, 5))], rng)


class TestShapeOps:
    def test_concat(self):
        rng = np.random.default_rng(312)
        check_grads(
            lambda a, b: ad.concat([a, b], axis=-1),
            [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))],
            rng,
        )

    def test_stack(self):
        rng = np.random.default_rng(313)
        check_grads(
            lambda a, b: ad.stack([a, b], axis=1),
            [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))],
            rng,
        )

    def test_narrow(self):
        rng = np.random.default_rng(314)
        check_grads(lambda x: ad.narrow(x, 1, 3), [rng.normal(size=(5, 2))], rng)

    def test_embedding_accumulates_repeated_rows(self):
        rng = np.random.default_rng(315)
        idx = np.array([0, 2, 0, 1])
        check_grads(lambda w: ad.embedding(w, idx), [rng.normal(size=(4, 3))], rng)

    def test_gather_rows(self):
        rng = np.random.default_rng(316)
        idx = np.array([2, 0, 1])
        check_grads(lambda x: ad.gather_rows(x, idx), [rng.normal(size=(3, 4))], rng)

    def test_tsum(self):
        rng = np.random.default_rng(317)
        check_grads(ad.tsum, [rng.normal(size=(4, 3))], rng)


class TestSoftmaxOps:
    def test_softmax(self):
        rng = np.random.default_rng(318)
        check_grads(ad.softmax, [rng.normal(size=(3, 6))], rng)

    def test_log_softmax(self):
        rng = np.random.default_rng(319)
        check_grads(ad.log_softmax, [rng.normal(size=(3, 6))], rng)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(320)
        out = ad.softmax(ad.Tensor(rng.normal(size=(5, 7)) * 10.0))
        assert_allclose(out.data.sum(axis=-1), np.ones(5), atol=1e-12)

    def test_log_softmax_is_shift_invariant(self):
        rng = np.random.default_rng(321)
        x = rng.normal(size=(2, 5))
        a = ad.log_softmax(ad.Tensor(x)).data
        b = ad.log_softmax(ad.Tensor(x + 1000.0)).data
        assert_allclose(a, b, atol=1e-9)


class TestTapeMechanics:
    def test_tapes_do_not_nest(self):
        with ad.Tape():
            with pytest.raises(RuntimeError, match="nest"):
                with ad.Tape():
                    pass

    def test_backward_requires_scalar(self):
        t = ad.Tensor(np.ones(3), requires_grad=True)
        with ad.Tape() as tape:
            out = ad.mul(t, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(out)

    def test_untracked_leaves_get_no_gradient(self):
        frozen = ad.Tensor(np.ones(3), requires_grad=False)
        live = ad.Tensor(np.ones(3), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.tsum(ad.mul(frozen, live))
        tape.backward(loss)
        assert frozen.grad is None
        assert live.grad is not None

    def test_no_recording_outside_tape(self):
        t = ad.Tensor(np.ones(3), requires_grad=True)
        out = ad.mul(t, 3.0)
        assert not out.requires_grad

    def test_reused_tensor_accumulates(self):
        """x used twice: d/dx (x*x summed) = 2x."""
        x = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.tsum(ad.mul(x, x))
        tape.backward(loss)
        assert_allclose(x.grad, 2.0 * x.data, atol=1e-12)

    def test_composite_graph_end_to_end(self):
        """A small attention-shaped composition checks op interplay."""
        rng = np.random.default_rng(322)

        def build(q, keys, values, w):
            attn = ad.softmax(ad.attn_scores(q, keys))
            ctx = ad.attn_context(attn, values)
            return ad.tanh(ad.matmul(ctx, w))

        check_grads(
            build,
            [
                rng.normal(size=(2, 4)),
                rng.normal(size=(2, 3, 4)),
                rng.normal(size=(2, 3, 4)),
                rng.normal(size=(4, 2)),
            ],
            rng,
        )
