"""The dense scoring layer: operator action, inference, gradients, persistence."""

import numpy as np
import pytest

from densegcrf.cg import CgConfig
from densegcrf.layer import GcrfLayer, GcrfOperator, LayerGradients, embedding_gradient
from densegcrf.tensors import Dims


def random_layer(rng, pixels, labels, embed_dim, lam=1.0, **cg_kwargs):
    dims = Dims(pixels=pixels, labels=labels, embed_dim=embed_dim)
    emb = rng.standard_normal((embed_dim, dims.n)) / np.sqrt(dims.n)
    return GcrfLayer(
        embeddings=emb, lam=lam, dims=dims, cg=CgConfig(**cg_kwargs)
    )


class TestOperator:
    def test_apply_matches_dense_composition(self):
        rng = np.random.default_rng(20)
        layer = random_layer(rng, 12, 3, 5, lam=0.3)
        dense = layer.embeddings.T @ layer.embeddings + 0.3 * np.eye(layer.dims.n)
        for _ in range(20):
            v = rng.standard_normal(layer.dims.n)
            np.testing.assert_allclose(layer.apply(v), dense @ v, rtol=1e-12)

    def test_zero_embeddings_scale_by_lambda(self):
        dims = Dims(pixels=4, labels=1, embed_dim=2)
        layer = GcrfLayer(np.zeros((2, 4)), lam=2.0, dims=dims)
        v = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_array_equal(layer.apply(v), 2.0 * v)

    def test_definiteness_floor_across_lambdas(self):
        """v.op(v) can never drop below lam * ||v||^2, whatever the embeddings."""
        rng = np.random.default_rng(21)
        for lam in [1e-6, 1.0, 1e3]:
            layer = random_layer(rng, 10, 2, 4, lam=lam)
            op = layer.operator()
            for _ in range(50):
                v = rng.standard_normal(layer.dims.n)
                quad = float(v @ op.apply(v))
                assert quad >= lam * float(v @ v) - 1e-9 * float(v @ v)

    def test_operator_rejects_wrong_shape(self):
        rng = np.random.default_rng(22)
        layer = random_layer(rng, 4, 2, 3)
        with pytest.raises(ValueError):
            layer.apply(np.ones(5))


class TestForward:
    def test_solves_the_system(self):
        rng = np.random.default_rng(23)
        layer = random_layer(rng, 20, 3, 6)
        unary = rng.standard_normal(layer.dims.n)
        x, report = layer.forward(unary)
        assert report.converged
        resid = np.linalg.norm(layer.apply(x) - unary)
        assert resid <= 10 * layer.cg.rel_tol * np.linalg.norm(unary)

    def test_zero_embeddings_give_unary_over_lambda(self):
        dims = Dims(pixels=3, labels=2, embed_dim=2)
        layer = GcrfLayer(np.zeros((2, 6)), lam=4.0, dims=dims)
        unary = np.arange(6, dtype=float)
        x, report = layer.forward(unary)
        np.testing.assert_allclose(x, unary / 4.0, rtol=1e-14)
        assert report.iterations <= 1

    def test_solution_minimizes_energy(self):
        rng = np.random.default_rng(24)
        layer = random_layer(rng, 15, 2, 4)
        unary = rng.standard_normal(layer.dims.n)
        x, _ = layer.forward(unary)
        e_star = layer.energy(x, unary)
        for _ in range(100):
            delta = rng.standard_normal(layer.dims.n) * 10.0 ** rng.integers(-4, 1)
            assert layer.energy(x + delta, unary) >= e_star

    def test_energy_value_is_the_quadratic_form(self):
        rng = np.random.default_rng(25)
        layer = random_layer(rng, 8, 2, 3, lam=0.5)
        x = rng.standard_normal(layer.dims.n)
        unary = rng.standard_normal(layer.dims.n)
        dense = layer.embeddings.T @ layer.embeddings + 0.5 * np.eye(layer.dims.n)
        expected = 0.5 * x @ (dense @ x) - unary @ x
        np.testing.assert_allclose(layer.energy(x, unary), expected, rtol=1e-12)


class TestBackward:
    def test_unary_gradient_solves_same_system(self):
        rng = np.random.default_rng(26)
        layer = random_layer(rng, 12, 2, 4)
        unary = rng.standard_normal(layer.dims.n)
        dl_dx = rng.standard_normal(layer.dims.n)
        x, _ = layer.forward(unary)
        grads, report = layer.backward(x, dl_dx, unary=unary)
        assert report.converged
        resid = np.linalg.norm(layer.apply(grads.d_unary) - dl_dx)
        assert resid <= 10 * layer.cg.rel_tol * np.linalg.norm(dl_dx)

    def test_embedding_gradient_closed_form(self):
        rng = np.random.default_rng(27)
        layer = random_layer(rng, 10, 2, 4)
        unary = rng.standard_normal(layer.dims.n)
        dl_dx = rng.standard_normal(layer.dims.n)
        x, _ = layer.forward(unary)
        grads, _ = layer.backward(x, dl_dx)
        eg = layer.embeddings @ grads.d_unary
        ex = layer.embeddings @ x
        expected = -np.outer(eg, x) - np.outer(ex, grads.d_unary)
        np.testing.assert_allclose(grads.d_embeddings, expected, rtol=1e-12)

    def test_scalar_chain_rule_values(self):
        """Single-variable instance solvable by hand: embedding 2, lam 1,
        unary 10 gives x = 10/5 = 2; with dL/dx = 5 the unary gradient is
        5/5 = 1 and the embedding gradient is 5 * 10 * (-2*2)/25 = -8."""
        layer = GcrfLayer([[2.0]], lam=1.0, dims=Dims(1, 1, 1))
        x, _ = layer.forward([10.0])
        grads, _ = layer.backward(x, [5.0], unary=[10.0])
        assert abs(x[0] - 2.0) <= 1e-10
        assert abs(grads.d_unary[0] - 1.0) <= 1e-10
        assert abs(grads.d_embeddings[0, 0] + 8.0) <= 1e-10

    def test_stale_forward_solution_is_rejected(self):
        rng = np.random.default_rng(28)
        layer = random_layer(rng, 10, 2, 4)
        unary = rng.standard_normal(layer.dims.n)
        x, _ = layer.forward(unary)
        with pytest.raises(ValueError, match="stale"):
            layer.backward(x + 0.5, rng.standard_normal(layer.dims.n), unary=unary)

    def test_module_level_helper_matches_method(self):
        rng = np.random.default_rng(29)
        emb = rng.standard_normal((3, 8))
        g = rng.standard_normal(8)
        x = rng.standard_normal(8)
        expected = -np.outer(emb @ g, x) - np.outer(emb @ x, g)
        np.testing.assert_allclose(embedding_gradient(emb, g, x), expected)


class TestConstructionAndPersistence:
    def test_embedding_shape_must_match_dims(self):
        with pytest.raises(ValueError):
            GcrfLayer(np.zeros((2, 5)), lam=1.0, dims=Dims(3, 2, 2))

    def test_lambda_must_be_positive(self):
        for bad in [0.0, -1.0]:
            with pytest.raises(ValueError):
                GcrfLayer(np.zeros((2, 6)), lam=bad, dims=Dims(3, 2, 2))

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(30)
        layer = random_layer(rng, 6, 2, 3, lam=0.25, rel_tol=1e-9, max_iters=77)
        layer.save(tmp_path / "layer")
        again = GcrfLayer.load(tmp_path / "layer")
        assert np.array_equal(again.embeddings, layer.embeddings)
        assert again.lam == layer.lam
        assert again.dims == layer.dims
        assert again.cg == layer.cg

    def test_with_embeddings_revalidates(self):
        rng = np.random.default_rng(31)
        layer = random_layer(rng, 4, 2, 3)
        swapped = layer.with_embeddings(np.ones((3, 8)))
        assert np.array_equal(swapped.embeddings, np.ones((3, 8)))
        with pytest.raises(ValueError):
            layer.with_embeddings(np.ones((2, 8)))
