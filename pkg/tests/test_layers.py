import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypertemp import autodiff as ad
from hypertemp import geometry as geo
from hypertemp.layers import (HFFL, HGRU, HMLR, cross_entropy, hffl_forward, hgru_sequence, hgru_update,
                              hmlr_logits, hyper_nonlinearity, softmax)
from oracles import fd_relative_error, random_ball


def zero_cell(n_in, n_hidden):
    cell = HGRU(n_in, n_hidden)
    for p in cell.parameters().values():
        p.value = np.zeros_like(p.value)
    return cell


def random_cell(rng, n_in, n_hidden):
    cell = HGRU(n_in, n_hidden, rng=rng)
    for name, p in cell.parameters().items():
        if p.space == ad.Parameter.HYPERBOLIC:
            p.value = rng.uniform(-0.2, 0.2, p.shape)
    return cell


class TestNonlinearity:
    def test_identity(self):
        x = np.array([0.3, -0.4])
        assert np.allclose(hyper_nonlinearity(x, "identity"), x)
        assert np.allclose(hyper_nonlinearity(x, lambda v: v), x, atol=1e-12)

    def test_relu_origin(self):
        assert np.array_equal(hyper_nonlinearity(np.zeros(2), "relu"), np.zeros(2))

    def test_relu_negative_axis(self):
        assert np.allclose(hyper_nonlinearity(np.array([-0.5, 0.0]), "relu"), 0.0)

    def test_tanh_in_ball(self):
        rng = np.random.default_rng(0)
        out = hyper_nonlinearity(random_ball(rng, 100, 3, 0.99999), "tanh")
        assert np.all(np.linalg.norm(out, axis=-1) < 1)


class TestHFFL:
    def test_identity_map(self):
        rng = np.random.default_rng(1)
        x = random_ball(rng, 20, 3)
        assert np.max(np.abs(hffl_forward(x, np.eye(3), np.zeros(3)) - x)) < 1e-12

    def test_origin(self):
        assert np.allclose(hffl_forward(np.zeros(3), np.ones((2, 3)), np.zeros(2)), 0.0)

    def test_doubling(self):
        out = hffl_forward(np.array([0.5, 0.0]), 2 * np.eye(2), np.zeros(2))
        assert np.allclose(out, [0.8, 0.0], atol=1e-12)

    def test_shape_error(self):
        with pytest.raises(ValueError):
            HFFL(3, 2)(np.zeros(4))

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            HFFL(3, 2, activation="gelu")

    def test_parameter_spaces(self):
        params = HFFL(3, 2).parameters()
        assert params["W"].space == "euclidean" and params["b"].space == "hyperbolic"
        assert np.array_equal(params["b"].value, np.zeros(2))


class TestHGRU:
    def test_zero_parameters(self):
        cell = zero_cell(2, 3)
        x = np.array([0.3, -0.2])
        z, r = map(ad.value, cell.gates(np.zeros(3), x))
        assert np.allclose(z, 0.5) and np.allclose(r, 0.5)
        assert np.allclose(ad.value(cell.step(np.zeros(3), x)), 0.0)

    def test_update_zero_gate(self):
        rng = np.random.default_rng(2)
        h, ht = random_ball(rng, 2, 4, 0.9)
        assert np.allclose(hgru_update(h, ht, np.zeros(4)), h, atol=1e-12)

    def test_update_unit_gate(self):
        rng = np.random.default_rng(3)
        h, ht = random_ball(rng, 2, 4, 0.9)
        assert np.allclose(hgru_update(h, ht, np.ones(4)), ht, atol=1e-9)

    def test_sequence_length_and_first_step(self):
        rng = np.random.default_rng(4)
        cell = random_cell(rng, 2, 3)
        xs = random_ball(rng, 5, 2, 0.5)
        out = [ad.value(h) for h in hgru_sequence(list(xs), cell)]
        assert len(out) == 5
        assert np.allclose(out[0], ad.value(cell.step(np.zeros(3), xs[0])))
        single = hgru_sequence([xs[0]], cell)
        assert len(single) == 1 and np.allclose(ad.value(single[0]), out[0])

    def test_constant_under_zero_parameters(self):
        cell = zero_cell(2, 3)
        x = np.array([0.2, 0.1])
        out = [ad.value(h) for h in hgru_sequence([x] * 6, cell)]
        assert all(np.allclose(h, out[0]) for h in out)

    def test_empty_sequence(self):
        with pytest.raises(ValueError):
            hgru_sequence([], zero_cell(2, 3))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            zero_cell(2, 3).step(np.zeros(3), np.zeros(5))

    def test_initial_state(self):
        rng = np.random.default_rng(5)
        cell = random_cell(rng, 2, 3)
        xs = random_ball(rng, 3, 2, 0.5)
        h0 = np.array([0.1, 0.0, -0.1])
        assert np.allclose(ad.value(cell.sequence(xs, h0=h0)[0]), ad.value(cell.step(h0, xs[0])))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_ball_and_gate_invariants(self, seed):
        rng = np.random.default_rng(seed)
        cell = random_cell(rng, 3, 4)
        for p in (cell.W_z, cell.W_h, cell.U_h):
            p.value = p.value * 5
        h = random_ball(rng, 1, 4, 0.999)[0]
        for x in random_ball(rng, 5, 3, 0.999):
            z, r = map(ad.value, cell.gates(h, x))
            assert np.all((z > 0) & (z < 1)) and np.all((r > 0) & (r < 1))
            h = ad.value(cell.step(h, x))
            assert np.linalg.norm(h) <= geo.DEFAULT.max_norm + 1e-15


class TestHMLR:
    def test_on_own_hyperplane(self):
        rng = np.random.default_rng(6)
        p = random_ball(rng, 3, 2, 0.5)
        a = rng.normal(size=(3, 2))
        assert hmlr_logits(p[1], p, a)[1] == pytest.approx(0.0, abs=1e-12)

    def test_uniform_when_shared(self):
        rng = np.random.default_rng(7)
        p = np.tile(random_ball(rng, 1, 3, 0.5), (4, 1))
        a = np.tile(rng.normal(size=(1, 3)), (4, 1))
        probs = softmax(hmlr_logits(random_ball(rng, 5, 3), p, a))
        assert np.allclose(probs, 0.25, atol=1e-12)

    def test_sign_flip(self):
        rng = np.random.default_rng(8)
        p, a = random_ball(rng, 3, 2, 0.5), rng.normal(size=(3, 2))
        x = random_ball(rng, 1, 2)[0]
        flipped = a.copy()
        flipped[2] *= -1
        s, t = hmlr_logits(x, p, a), hmlr_logits(x, p, flipped)
        assert t[2] == pytest.approx(-s[2], rel=1e-12)
        assert np.allclose(s[:2], t[:2])

    def test_signed_distance_form(self):
        # lambda_p |a| * sign(<w,a>) * d(x, hyperplane)
        rng = np.random.default_rng(9)
        p, a = random_ball(rng, 4, 3, 0.6), rng.normal(size=(4, 3))
        x = random_ball(rng, 1, 3, 0.8)[0]
        w = geo.mobius_add(-p, x)
        inner = np.sum(w * a, -1)
        an = np.linalg.norm(a, axis=-1)
        dist = np.arcsinh(2 * np.abs(inner) / ((1 - np.sum(w * w, -1)) * an))
        ref = np.sign(inner) * (2 / (1 - np.sum(p * p, -1))) * an * dist
        assert np.allclose(hmlr_logits(x, p, a), ref, atol=1e-12)

    def test_degenerate_normal(self):
        with pytest.raises(ValueError, match="degenerate class normal"):
            hmlr_logits(np.zeros(2), np.zeros((2, 2)), np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            HMLR(3, 1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_softmax_is_distribution(self, seed):
        rng = np.random.default_rng(seed)
        head = HMLR(3, 4, rng=rng)
        head.p.value = random_ball(rng, 4, 3, 0.8)
        probs = softmax(ad.value(head(random_ball(rng, 6, 3, 0.99))))
        assert np.allclose(probs.sum(-1), 1.0, atol=1e-12)
        assert np.all((probs > 0) & (probs < 1))


class TestLayerGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_hffl(self, seed):
        rng = np.random.default_rng(seed)
        layer = HFFL(3, 2, activation=("identity", "relu", "tanh")[seed % 3], rng=rng)
        layer.b.value = rng.uniform(-0.2, 0.2, 2)
        x = ad.Parameter(random_ball(rng, 4, 3, 0.7))
        params = [layer.W, layer.b, x]
        assert fd_relative_error(lambda: ad.sum(layer(x) * np.array([1.0, -2.0])), params) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_hgru(self, seed):
        rng = np.random.default_rng(seed)
        cell = random_cell(rng, 2, 3)
        seq = ad.Parameter(random_ball(rng, 6, 2, 0.5).reshape(2, 3, 2))
        params = list(cell.parameters().values()) + [seq]
        assert fd_relative_error(lambda: ad.sum(cell.sequence(seq)[-1] * np.arange(1, 4)), params) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_hmlr_cross_entropy(self, seed):
        rng = np.random.default_rng(seed)
        head = HMLR(3, 4, rng=rng)
        head.p.value = random_ball(rng, 4, 3, 0.5)
        x = ad.Parameter(random_ball(rng, 5, 3, 0.7))
        labels = rng.integers(0, 4, 5)
        assert fd_relative_error(lambda: cross_entropy(head(x), labels), [head.p, head.a, x]) < 1e-4
