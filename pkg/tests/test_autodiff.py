"""Every backward rule is held to central finite differences in float64.

The checker perturbs a handful of coordinates per tensor rather than the
whole array; with h=1e-5 and float64 arithmetic the discretization error
sits far below the 1e-4 relative tolerance used throughout.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import scribelab.autodiff as ad
from scribelab.autodiff import Tensor, no_grad

RNG = np.random.default_rng(202)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def fd_check(build_loss, tensors, h=1e-5, tol=1e-4, n_coords=6, rng=None):
    """Compare each tensor's analytic gradient against central differences.

    build_loss() must re-read tensor .data each call and return a scalar
    Tensor. Checks up to n_coords randomly chosen coordinates per tensor.
    """
    rng = rng or np.random.default_rng(77)
    loss = build_loss()
    loss.backward()
    for t in tensors:
        assert t.grad is not None, "expected a gradient"
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1)
        coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + h
            up = build_loss().item()
            flat[c] = keep - h
            down = build_loss().item()
            flat[c] = keep
            fd = (up - down) / (2 * h)
            assert rel_err(grad[c], fd) < tol, (
                f"coordinate {c}: analytic {grad[c]:.10g} vs fd {fd:.10g}"
            )


def param(shape, scale=1.0):
    return Tensor(RNG.normal(0.0, scale, shape), requires_grad=True)


# ---------------------------------------------------------------------------
# Elementwise and shape ops


def test_add_with_broadcasting():
    a, b = param((3, 4)), param((4,))
    fd_check(lambda: ad.mean_all(ad.mul(ad.add(a, b), ad.add(a, b))), [a, b])


def test_mul_gradients():
    a, b = param((2, 5)), param((2, 5))
    fd_check(lambda: ad.mean_all(ad.mul(a, b)), [a, b])


def test_scale_and_add_const():
    a = param((4, 3))
    c = RNG.normal(size=(4, 3))
    fd_check(lambda: ad.mean_all(ad.scale(ad.add_const(a, c), -2.5)), [a])


def test_matmul_2d():
    a, b = param((3, 4)), param((4, 2))
    fd_check(lambda: ad.mean_all(ad.matmul(a, b)), [a, b])


def test_matmul_batched():
    a, b = param((2, 3, 4)), param((2, 4, 5))
    fd_check(lambda: ad.mean_all(ad.matmul(a, b)), [a, b])


def test_matmul_broadcast_weight():
    # (B, T, D) @ (D, K): the weight sees gradient summed over the batch.
    x, w = param((2, 3, 4)), param((4, 6))
    fd_check(lambda: ad.mean_all(ad.matmul(x, w)), [x, w])


def test_reshape_transpose_select():
    a = param((2, 3, 4))

    def loss():
        r = ad.reshape(a, (2, 12))
        t = ad.transpose(ad.reshape(r, (2, 3, 4)), (0, 2, 1))
        return ad.mean_all(ad.select_position(t, 2))

    fd_check(loss, [a])


# ---------------------------------------------------------------------------
# Nonlinearities


def test_gelu():
    a = param((3, 7))
    fd_check(lambda: ad.mean_all(ad.gelu(a)), [a])


def test_softmax_rows_sum_to_one():
    a = param((3, 5))
    out = ad.softmax(a)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_gradient():
    a = param((3, 5))
    w = RNG.normal(size=(3, 5))
    fd_check(lambda: ad.mean_all(ad.mul(ad.softmax(a), Tensor(w))), [a])


def test_log_softmax_gradient():
    a = param((4, 6))
    w = RNG.normal(size=(4, 6))
    fd_check(lambda: ad.mean_all(ad.mul(ad.log_softmax(a), Tensor(w))), [a])


def test_log_softmax_matches_softmax_log():
    a = param((2, 9))
    np.testing.assert_allclose(
        ad.log_softmax(a).data, np.log(ad.softmax(a).data), atol=1e-12
    )


def test_layer_norm_gradients_all_three_inputs():
    x, g, b = param((2, 3, 8)), param((8,)), param((8,))
    w = RNG.normal(size=(2, 3, 8))
    fd_check(lambda: ad.mean_all(ad.mul(ad.layer_norm(x, g, b), Tensor(w))), [x, g, b])


def test_layer_norm_output_is_standardized():
    x = param((4, 10))
    out = ad.layer_norm(x, Tensor(np.ones(10)), Tensor(np.zeros(10)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-4)


# ---------------------------------------------------------------------------
# Embedding / losses


def test_embedding_accumulates_duplicate_rows():
    table = param((6, 4))
    ids = np.array([[1, 1, 3], [1, 0, 3]])
    w = RNG.normal(size=(2, 3, 4))
    fd_check(lambda: ad.mean_all(ad.mul(ad.embedding(table, ids), Tensor(w))), [table])
    # row 1 appears three times; its analytic grad is the sum of all three
    table.zero_grad()
    loss = ad.mean_all(ad.mul(ad.embedding(table, ids), Tensor(w)))
    loss.backward()
    expect_row1 = (w[0, 0] + w[0, 1] + w[1, 0]) / w.size
    np.testing.assert_allclose(table.grad[1], expect_row1, atol=1e-12)


def test_masked_nll_matches_hand_computation():
    logits = param((2, 3, 5))
    targets = np.array([[1, 2, 0], [4, 0, 0]])  # pad_id=0 masks three slots
    lp = ad.log_softmax(logits)
    loss = ad.masked_nll(lp, targets, pad_id=0)
    picked = [lp.data[0, 0, 1], lp.data[0, 1, 2], lp.data[1, 0, 4]]
    assert loss.item() == pytest.approx(-np.mean(picked), abs=1e-12)


def test_masked_nll_gradient():
    logits = param((2, 4, 6))
    targets = np.array([[1, 2, 3, 0], [5, 0, 0, 0]])
    fd_check(lambda: ad.masked_nll(ad.log_softmax(logits), targets, pad_id=0), [logits])


def test_masked_nll_all_pad_raises():
    lp = ad.log_softmax(param((1, 2, 3)))
    with pytest.raises(ValueError):
        ad.masked_nll(lp, np.zeros((1, 2), dtype=np.int64), pad_id=0)


def test_dropout_zero_p_is_identity():
    a = param((5, 5))
    out = ad.dropout(a, 0.0, np.random.default_rng(0))
    assert out.data is a.data or np.array_equal(out.data, a.data)


def test_dropout_scales_surviving_activations():
    a = Tensor(np.ones((200, 200)), requires_grad=True)
    out = ad.dropout(a, 0.25, np.random.default_rng(3))
    kept = out.data[out.data != 0]
    np.testing.assert_allclose(kept, 1.0 / 0.75, atol=1e-12)
    assert abs(out.data.mean() - 1.0) < 0.02  # inverted scaling preserves mean
    ad.mean_all(out).backward()
    # gradient flows only through surviving units, with the same scaling
    np.testing.assert_allclose(a.grad[out.data != 0], (1.0 / 0.75) / a.data.size)
    np.testing.assert_allclose(a.grad[out.data == 0], 0.0)


# ---------------------------------------------------------------------------
# Engine behavior


def test_backward_requires_scalar():
    a = param((2, 2))
    with pytest.raises(ValueError):
        ad.add(a, a).backward()


def test_diamond_graph_accumulates():
    # y = a*a + a*a reuses `a` on four edges; grad must be 4a/ n
    a = param((3,))
    y = ad.mean_all(ad.add(ad.mul(a, a), ad.mul(a, a)))
    y.backward()
    np.testing.assert_allclose(a.grad, 4 * a.data / 3, atol=1e-12)


def test_no_grad_builds_no_graph():
    a = param((2, 2))
    with no_grad():
        out = ad.mul(a, a)
    assert not out.requires_grad
    assert out._parents == ()


def test_frozen_inputs_get_no_gradient():
    a = Tensor(RNG.normal(size=(3, 3)), requires_grad=False)
    b = param((3, 3))
    loss = ad.mean_all(ad.matmul(a, b))
    loss.backward()
    assert a.grad is None
    assert b.grad is not None


def test_fully_frozen_graph_is_inert():
    a = Tensor(RNG.normal(size=(2, 2)))
    out = ad.mul(a, a)
    assert out._backward_fn is None


@settings(max_examples=20, deadline=None)
@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=4),
)
def test_matmul_gradcheck_random_shapes(n, k, m):
    rng = np.random.default_rng(n * 100 + k * 10 + m)
    a = Tensor(rng.normal(size=(n, k)), requires_grad=True)
    b = Tensor(rng.normal(size=(k, m)), requires_grad=True)
    fd_check(lambda: ad.mean_all(ad.matmul(a, b)), [a, b], rng=rng)
