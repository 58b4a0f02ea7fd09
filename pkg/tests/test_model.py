import math

import numpy as np
import pytest

from pnsrisk.autodiff import check_gradients, constant
from pnsrisk.model import (
    GaussianEncoder,
    GaussianPrior,
    LinearHead,
    Mlp,
    clone_perturbed,
    load_checkpoint,
    predict,
    save_checkpoint,
    surrogate_m,
    surrogate_sf,
)


def kl_closed_form(q_mean, q_var, p_mean, p_var):
    return 0.5 * np.sum(
        np.log(p_var / q_var) + (q_var + (q_mean - p_mean) ** 2) / p_var - 1.0
    )


class TestEncoder:
    def test_zeroed_head_layer_returns_bias(self):
        enc = GaussianEncoder(4, rep_dim=3, hidden=(8, 5), rng=np.random.default_rng(0))
        enc.mlp.weights[-1].data[:] = 0.0
        enc.mlp.biases[-1].data[:] = [1.0, -2.0, 3.0]
        mean, _ = enc.encode_np(np.random.default_rng(1).standard_normal((6, 4)))
        assert np.allclose(mean, np.tile([1.0, -2.0, 3.0], (6, 1)))

    def test_fixed_variance_mode(self):
        enc = GaussianEncoder(4, rep_dim=3, fixed_var=0.001)
        assert np.allclose(enc.var_np(), 0.001)
        assert enc.log_var is None

    def test_fixed_variance_positive(self):
        with pytest.raises(ValueError):
            GaussianEncoder(4, rep_dim=3, fixed_var=0.0)

    def test_graph_and_plain_forward_agree(self):
        rng = np.random.default_rng(2)
        enc = GaussianEncoder(5, rep_dim=4, hidden=(7, 6), rng=rng)
        x = rng.standard_normal((9, 5))
        assert np.allclose(enc.encode(x).data, enc.encode_np(x)[0], atol=1e-15)

    def test_sample_is_mean_plus_scaled_eps(self):
        rng = np.random.default_rng(3)
        enc = GaussianEncoder(4, rep_dim=3, rng=rng, fixed_var=0.25)
        x = rng.standard_normal((5, 4))
        eps = rng.standard_normal((5, 3))
        draw = enc.sample(x, eps)
        mean, _ = enc.encode_np(x)
        assert np.allclose(draw.data, mean + 0.5 * eps, atol=1e-15)

    def test_same_eps_same_draw(self):
        rng = np.random.default_rng(4)
        enc = GaussianEncoder(4, rep_dim=3, rng=rng)
        x = rng.standard_normal((2, 4))
        eps = rng.standard_normal((2, 3))
        assert np.array_equal(enc.sample(x, eps).data, enc.sample(x, eps).data)

    def test_sample_np_moments(self):
        rng = np.random.default_rng(5)
        enc = GaussianEncoder(3, rep_dim=2, rng=rng, fixed_var=0.04)
        x = rng.standard_normal((1, 3))
        draws = enc.sample_np(x, 200000, np.random.default_rng(6))
        mean, _ = enc.encode_np(x)
        assert np.allclose(draws.mean(axis=0), mean, atol=2e-3)
        assert np.allclose(draws.std(axis=0), 0.2, atol=2e-3)

    def test_reparameterized_gradient(self):
        rng = np.random.default_rng(7)
        enc = GaussianEncoder(3, rep_dim=2, hidden=(5, 4), rng=rng)
        x = rng.standard_normal((4, 3))
        eps = rng.standard_normal((4, 2))
        params = list(enc.parameters().values())

        def loss():
            return enc.sample(x, eps).square().mean()

        assert check_gradients(loss, params) < 1e-6

    def test_kl_node_matches_closed_form(self):
        rng = np.random.default_rng(8)
        enc = GaussianEncoder(3, rep_dim=4, hidden=(6, 5), rng=rng)
        enc.log_var.data[:] = rng.uniform(-1.0, 1.0, size=4)
        prior = GaussianPrior(rng.standard_normal(4), rng.uniform(0.5, 2.0, size=4))
        x = rng.standard_normal((7, 3))
        mean = enc.encode(x)
        got = enc.kl_node(mean, prior).item()
        q_var = enc.var_np()
        want = np.mean(
            [kl_closed_form(row, q_var, prior.mean, prior.var) for row in mean.data]
        )
        assert abs(got - want) < 1e-10

    def test_kl_node_differentiable(self):
        rng = np.random.default_rng(9)
        enc = GaussianEncoder(3, rep_dim=2, hidden=(4, 4), rng=rng)
        prior = GaussianPrior.standard(2)
        x = rng.standard_normal((5, 3))
        params = list(enc.parameters().values())

        def loss():
            return enc.kl_node(enc.encode(x), prior)

        assert check_gradients(loss, params) < 1e-6

    def test_prior_validation(self):
        with pytest.raises(ValueError):
            GaussianPrior(np.zeros(3), np.array([1.0, 0.0, 1.0]))


class TestHeadAndSurrogates:
    def test_tie_maps_to_one(self):
        enc = GaussianEncoder(3, rep_dim=2, rng=np.random.default_rng(0))
        head = LinearHead(2)
        head.w.data[:] = 0.0
        labels = predict(head, enc, np.random.default_rng(1).standard_normal((4, 3)))
        assert np.array_equal(labels, np.ones(4, dtype=np.int64))

    def test_prediction_scale_invariant(self):
        rng = np.random.default_rng(2)
        enc = GaussianEncoder(3, rep_dim=4, rng=rng)
        head = LinearHead(4, rng=rng)
        x = rng.standard_normal((50, 3))
        before = predict(head, enc, x)
        head.w.data *= 37.0
        assert np.array_equal(before, predict(head, enc, x))

    def test_sign_of_mean_matches_monte_carlo_majority(self):
        rng = np.random.default_rng(3)
        hits = 0
        trials = 0
        for _ in range(1000):
            w = rng.standard_normal(4)
            mu = rng.standard_normal(4)
            margin = float(w @ mu)
            if abs(margin) < 0.3:
                continue  # ties are noise-dominated, skip
            trials += 1
            draws = mu + 0.1 * rng.standard_normal((400, 4))
            mc_label = 1 if (draws @ w >= 0.0).mean() >= 0.5 else 0
            hits += mc_label == (1 if margin >= 0.0 else 0)
        assert trials > 700
        assert hits == trials

    def test_sufficiency_surrogate_at_zero_margin(self):
        head = LinearHead(3)
        head.w.data[:] = 0.0
        c = constant(np.random.default_rng(0).standard_normal((8, 3)))
        y = np.array([0, 1] * 4)
        assert abs(surrogate_sf(head, c, y).item() - math.log(2.0)) < 1e-12

    def test_sufficiency_surrogate_saturates_to_indicator(self):
        head = LinearHead(1)
        head.w.data[:] = 1.0
        # all correct with margin 15: indicator 0
        c = constant(np.full((10, 1), 15.0))
        y = np.ones(10, dtype=int)
        assert surrogate_sf(head, c, y).item() < 1e-6
        # all wrong with margin 15: indicator 1
        y = np.zeros(10, dtype=int)
        assert abs(surrogate_sf(head, c, y).item() - 15.0) < 1.0  # grows with margin

    def test_agreement_surrogate_values(self):
        head = LinearHead(1)
        head.w.data[:] = 1.0
        same = surrogate_m(head, constant([[15.0]]), constant([[15.0]])).item()
        opposite = surrogate_m(head, constant([[15.0]]), constant([[-15.0]])).item()
        neutral = surrogate_m(head, constant([[0.0]]), constant([[0.0]])).item()
        assert abs(same - 1.0) < 1e-6
        assert opposite < 1e-6
        assert abs(neutral - 0.5) < 1e-12

    def test_agreement_pair_mean_factorizes(self):
        rng = np.random.default_rng(5)
        p = 1.0 / (1.0 + np.exp(-rng.standard_normal(6)))
        q = 1.0 / (1.0 + np.exp(-rng.standard_normal(9)))
        explicit = np.mean([[pi * qj + (1 - pi) * (1 - qj) for qj in q] for pi in p])
        factored = p.mean() * q.mean() + (1 - p.mean()) * (1 - q.mean())
        assert abs(explicit - factored) < 1e-12

    def test_surrogate_gradients(self):
        rng = np.random.default_rng(6)
        enc = GaussianEncoder(3, rep_dim=2, hidden=(4, 4), rng=rng)
        head = LinearHead(2, rng=rng)
        x = rng.standard_normal((6, 3))
        eps = rng.standard_normal((6, 2))
        y = rng.integers(0, 2, size=6)
        params = list(enc.parameters().values()) + list(head.parameters().values())

        def loss():
            c = enc.sample(x, eps)
            return surrogate_sf(head, c, y) + surrogate_m(head, c, c)

        assert check_gradients(loss, params) < 1e-6

    def test_label_validation(self):
        head = LinearHead(2)
        with pytest.raises(ValueError):
            surrogate_sf(head, constant(np.zeros((2, 2))), np.array([0, 2]))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        enc = GaussianEncoder(5, rep_dim=3, hidden=(6, 4), rng=rng)
        head = LinearHead(3, rng=rng)
        params = {**enc.parameters(), **head.parameters()}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, meta={"in_dim": "5", "rep_dim": "3"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"in_dim": "5", "rep_dim": "3"}
        assert set(loaded) == set(params)
        for name, tensor in params.items():
            assert loaded[name].tobytes() == tensor.data.tobytes()
            assert loaded[name].shape == tensor.data.shape

    def test_scalar_and_awkward_values(self, tmp_path):
        values = {
            "s": np.float64(-0.0),
            "tiny": np.array([5e-324, 1e308, -1.5]),
            "m": np.arange(12.0).reshape(3, 4) * math.pi,
        }
        path = tmp_path / "vals.ckpt"
        save_checkpoint(path, values)
        loaded, _ = load_checkpoint(path)
        for name, arr in values.items():
            assert loaded[name].tobytes() == np.asarray(arr, dtype=np.float64).tobytes()

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("hello\n")
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestClone:
    def test_perturbed_copy_structure(self):
        rng = np.random.default_rng(11)
        enc = GaussianEncoder(4, rep_dim=3, hidden=(5, 5), rng=rng)
        twin = clone_perturbed(enc, np.random.default_rng(12), scale=0.01)
        src = list(enc.parameters().values())
        dst = list(twin.parameters().values())
        assert len(src) == len(dst)
        for s, d in zip(src, dst):
            assert s.data.shape == d.data.shape
            assert not np.array_equal(s.data, d.data)
            assert np.abs(s.data - d.data).max() < 0.1

    def test_zero_scale_copies_exactly(self):
        enc = GaussianEncoder(4, rep_dim=3, rng=np.random.default_rng(13))
        twin = clone_perturbed(enc, np.random.default_rng(14), scale=0.0)
        for s, d in zip(enc.parameters().values(), twin.parameters().values()):
            assert np.array_equal(s.data, d.data)
