import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snrlora.adapter import (
    AdapterLayer,
    backward,
    forward,
    load_layer,
    orthogonality_penalty,
    save_layer,
    set_mask,
)
from snrlora.numerics import Rng, finite_diff_grad


def random_layer(rng, d1, d2, r, gamma=0.1, mask=None):
    return AdapterLayer(
        rng.normal(size=(d1, d2)), rng.normal(size=(d1, r)), rng.normal(size=r),
        rng.normal(size=(r, d2)), mask=mask, gamma_orth=gamma,
    )


def penalty_by_definition(p, q):
    r = p.shape[1]
    total = 0.0
    for i in range(r):
        for j in range(r):
            pp = sum(p[k, i] * p[k, j] for k in range(p.shape[0])) - (i == j)
            qq = sum(q[i, k] * q[j, k] for k in range(q.shape[1])) - (i == j)
            total += pp * pp + qq * qq
    return total


def objective(layer, x, upstream):
    return float(np.sum(upstream * forward(layer, x))) + layer.gamma_orth * orthogonality_penalty(layer)


def numeric_grads(layer, x, upstream, eps=1e-5):
    def with_(attr):
        def f(value):
            saved = getattr(layer, attr)
            setattr(layer, attr, value)
            try:
                return objective(layer, x, upstream)
            finally:
                setattr(layer, attr, saved)
        return f
    return (finite_diff_grad(with_("p"), layer.p, eps),
            finite_diff_grad(with_("lam"), layer.lam, eps),
            finite_diff_grad(with_("q"), layer.q, eps))


def max_rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


class TestForward:
    def test_all_masked_is_base(self, np_rng):
        layer = random_layer(np_rng, 4, 3, 2, mask=[False, False])
        x = np_rng.normal(size=(5, 4))
        np.testing.assert_array_equal(forward(layer, x), x @ layer.w0)

    def test_scalar_case(self):
        layer = AdapterLayer([[1.0]], [[2.0]], [3.0], [[4.0]])
        np.testing.assert_array_equal(forward(layer, [[1.0]]), [[25.0]])

    def test_linearity_in_delta(self, np_rng):
        layer = random_layer(np_rng, 6, 5, 3)
        x = np_rng.normal(size=(4, 6))
        zero = AdapterLayer(layer.w0, layer.p, np.zeros(3), layer.q)
        delta = layer.p @ np.diag(layer.lam) @ layer.q
        np.testing.assert_allclose(forward(layer, x) - forward(zero, x), x @ delta, atol=1e-12)

    def test_shape_mismatch(self, np_rng):
        with pytest.raises(ValueError):
            forward(random_layer(np_rng, 4, 3, 2), np.ones((2, 3)))

    def test_w0_frozen(self, np_rng):
        layer = random_layer(np_rng, 3, 3, 1)
        with pytest.raises(ValueError):
            layer.w0[0, 0] = 1.0

    def test_inconsistent_shapes(self):
        with pytest.raises(ValueError):
            AdapterLayer(np.ones((2, 2)), np.ones((2, 1)), np.ones(2), np.ones((1, 2)))


class TestPenalty:
    def test_orthonormal_slices(self):
        layer = AdapterLayer(np.zeros((5, 4)), np.eye(5)[:, :3], np.ones(3), np.eye(4)[:3])
        assert orthogonality_penalty(layer) < 1e-20

    def test_hand_computed(self):
        layer = AdapterLayer([[0.0]], [[2.0]], [1.0], [[1.0]])
        assert orthogonality_penalty(layer) == 9.0

    def test_definition_oracle(self, np_rng):
        layer = random_layer(np_rng, 7, 5, 3)
        expected = penalty_by_definition(layer.p, layer.q)
        assert abs(orthogonality_penalty(layer) - expected) <= 1e-10 * expected

    def test_qr_factors(self, np_rng):
        p, _ = np.linalg.qr(np_rng.normal(size=(9, 4)))
        q, _ = np.linalg.qr(np_rng.normal(size=(6, 4)))
        layer = AdapterLayer(np.zeros((9, 6)), p, np.ones(4), q.T)
        assert orthogonality_penalty(layer) < 1e-20

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        assert orthogonality_penalty(random_layer(rng, 4, 6, 3)) >= 0.0


class TestBackward:
    def test_zero_upstream_no_penalty(self, np_rng):
        layer = random_layer(np_rng, 4, 3, 2, gamma=0.0)
        g = backward(layer, np_rng.normal(size=(5, 4)), np.zeros((5, 3)))
        for block in (g.g_p, g.g_lambda, g.g_q):
            assert not np.any(block)

    def test_scalar_case(self):
        layer = AdapterLayer([[1.0]], [[2.0]], [3.0], [[4.0]], gamma_orth=0.0)
        g = backward(layer, [[1.0]], [[1.0]])
        assert g.g_lambda.tolist() == [8.0]
        assert g.g_p.tolist() == [[12.0]]
        assert g.g_q.tolist() == [[6.0]]
        assert g.g_input.tolist() == [[25.0]]

    @pytest.mark.parametrize("d1,d2,r", [(1, 1, 1), (3, 5, 2), (8, 4, 4), (16, 16, 3)])
    def test_finite_difference(self, np_rng, d1, d2, r):
        layer = random_layer(np_rng, d1, d2, r, gamma=0.3)
        x = np_rng.normal(size=(6, d1))
        upstream = np_rng.normal(size=(6, d2))
        g = backward(layer, x, upstream)
        num_p, num_l, num_q = numeric_grads(layer, x, upstream)
        assert max_rel_err(g.g_p, num_p) <= 1e-5
        assert max_rel_err(g.g_lambda, num_l) <= 1e-5
        assert max_rel_err(g.g_q, num_q) <= 1e-5

    def test_input_gradient(self, np_rng):
        layer = random_layer(np_rng, 5, 4, 2)
        x = np_rng.normal(size=(3, 5))
        upstream = np_rng.normal(size=(3, 4))
        num = finite_diff_grad(lambda z: float(np.sum(upstream * forward(layer, z))), x)
        np.testing.assert_allclose(backward(layer, x, upstream).g_input, num, atol=1e-8)

    def test_masked_rank(self, np_rng):
        layer = random_layer(np_rng, 5, 4, 3, gamma=0.0, mask=[True, False, True])
        x = np_rng.normal(size=(3, 5))
        upstream = np_rng.normal(size=(3, 4))
        g = backward(layer, x, upstream)
        # no task gradient reaches the singular vectors of a masked triplet
        assert not np.any(g.g_p[:, 1]) and not np.any(g.g_q[1])
        # ...but the singular value still sees d loss / d lambda_eff
        expected = float(np.sum((x @ layer.p[:, 1]) * (upstream @ layer.q[1])))
        assert g.g_lambda[1] == pytest.approx(expected, rel=1e-12)
        assert g.g_lambda[1] != 0.0

    def test_masked_penalty_still_flows(self, np_rng):
        layer = random_layer(np_rng, 4, 4, 2, gamma=1.0, mask=[False, False])
        g = backward(layer, np.zeros((1, 4)), np.zeros((1, 4)))
        assert np.any(g.g_p) and np.any(g.g_q)

    def test_shape_mismatch(self, np_rng):
        layer = random_layer(np_rng, 4, 3, 2)
        with pytest.raises(ValueError):
            backward(layer, np.ones((2, 4)), np.ones((3, 3)))


class TestMask:
    def test_round_trip_bit_identical(self, np_rng):
        layer = random_layer(np_rng, 6, 5, 3)
        x = np_rng.normal(size=(4, 6))
        before = forward(layer, x)
        p, q, lam = layer.p.copy(), layer.q.copy(), layer.lam.copy()
        set_mask(layer, [False, True, False])
        set_mask(layer, [True, True, True])
        assert np.array_equal(forward(layer, x), before)
        assert np.array_equal(layer.p, p) and np.array_equal(layer.q, q) and np.array_equal(layer.lam, lam)

    def test_all_true_is_unmasked(self, np_rng):
        layer = random_layer(np_rng, 3, 3, 2)
        x = np_rng.normal(size=(2, 3))
        expected = x @ (layer.w0 + layer.p @ np.diag(layer.lam) @ layer.q)
        np.testing.assert_allclose(forward(set_mask(layer, [True, True]), x), expected, atol=1e-12)

    def test_single_rank_oracle(self, np_rng):
        layer = random_layer(np_rng, 5, 4, 3)
        x = np_rng.normal(size=(3, 5))
        set_mask(layer, [False, False, True])
        expected = x @ layer.w0 + layer.lam[2] * np.outer(x @ layer.p[:, 2], layer.q[2])
        np.testing.assert_allclose(forward(layer, x), expected, atol=1e-12)

    def test_idempotent(self, np_rng):
        layer = random_layer(np_rng, 3, 3, 3)
        x = np_rng.normal(size=(2, 3))
        once = forward(set_mask(layer, [True, False, True]), x)
        twice = forward(set_mask(set_mask(layer, [True, False, True]), [True, False, True]), x)
        assert np.array_equal(once, twice)

    def test_length_mismatch(self, np_rng):
        with pytest.raises(ValueError):
            set_mask(random_layer(np_rng, 3, 3, 2), [True])

    def test_active_rank(self, np_rng):
        layer = random_layer(np_rng, 3, 3, 3, mask=[True, False, True])
        assert layer.active_rank == 2


def test_init_is_noop(np_rng):
    w0 = np_rng.normal(size=(5, 4))
    layer = AdapterLayer.init(w0, 3, Rng(0))
    x = np_rng.normal(size=(2, 5))
    np.testing.assert_array_equal(forward(layer, x), x @ w0)
    assert np.std(layer.p) < 0.05


def test_snapshot_round_trip(np_rng, tmp_path):
    layer = random_layer(np_rng, 4, 3, 2, gamma=0.25, mask=[True, False])
    layer.name, layer.module = "layer7", "dense"
    path = tmp_path / "layer.npz"
    save_layer(layer, path)
    back = load_layer(path)
    for attr in ("w0", "p", "lam", "q", "mask"):
        assert np.array_equal(getattr(back, attr), getattr(layer, attr))
    assert back.gamma_orth == 0.25 and back.name == "layer7"
