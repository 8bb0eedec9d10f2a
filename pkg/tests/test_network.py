import numpy as np
import pytest

from dirlatent.codebook import decode_convex
from dirlatent.config import NetConfig
from dirlatent.errors import ConfigError, ContractError
from dirlatent.gradcheck import check_gradients, numeric_grad, relative_error
from dirlatent.network import Restorer, parse_mode, residual_layout, sinusoidal_embedding
from dirlatent.objective import laplacian_nll
from dirlatent.tensor import Tape, Tensor, conv2d


@pytest.fixture(scope="module")
def toy():
    return Restorer(NetConfig(), 0)


def zero_params(model, prefix):
    for name, t in model.params.items():
        if name.startswith(prefix):
            t.data = np.zeros(t.shape)


class TestConfig:
    def test_divisibility(self):
        with pytest.raises(ConfigError):
            NetConfig(input_hw=(60, 64)).validate()

    def test_block_count(self):
        assert NetConfig(transformer_pairs=3).transformer_blocks == 6

    def test_paper_scale_constructible(self):
        cfg = NetConfig.paper()
        cfg.validate()
        assert cfg.latent_hw == (16, 16) and cfg.transformer_blocks == 8

    def test_residual_layout(self):
        assert residual_layout(4, 3) == [1, 1, 2]
        assert sum(residual_layout(12, 5)) == 12


class TestSinusoidal:
    def test_position_zero(self):
        np.testing.assert_array_equal(sinusoidal_embedding([0], 8)[0], [0, 1] * 4)

    def test_injective(self):
        e = sinusoidal_embedding(np.arange(64), 4)
        assert len({tuple(np.round(r, 12)) for r in e}) == 64

    def test_bounded(self):
        e = sinusoidal_embedding(np.arange(1000), 32)
        assert np.all(np.abs(e) <= 1)

    def test_odd_dim(self):
        with pytest.raises(ContractError):
            sinusoidal_embedding([0, 1], 5)


class TestModes:
    @pytest.mark.parametrize("text,expected", [
        ("mean", ("mean", None)), ("average", ("mean", None)), ("sample", ("sample", None)),
        ("argmax", ("argmax", None)), ("topk-4", ("topk", 4)), ("topk(16)", ("topk", 16)),
    ])
    def test_parse(self, text, expected):
        assert parse_mode(text) == expected

    def test_unknown(self):
        with pytest.raises(ContractError):
            parse_mode("median")


class TestShapes:
    def test_toy_encode(self, toy, rng):
        z = toy.encode(rng.uniform(size=(5, 64, 64, 3)))
        assert z.shape == (1, 5, 8, 8, 32)

    def test_toy_decode(self, toy, rng):
        x = toy.decode(rng.normal(size=(5, 8, 8, 32)) * 3)
        assert x.shape == (1, 5, 64, 64, 3)
        assert np.all((x.data >= 0) & (x.data <= 1))

    def test_wrong_extent(self, toy, rng):
        with pytest.raises(ContractError):
            toy.encode(rng.uniform(size=(5, 32, 32, 3)))

    def test_pipeline_round_trip(self, tiny_net, rng):
        model = Restorer(tiny_net, 1)
        frames = rng.uniform(size=(2, 3, 8, 8, 3))
        for mode in ("mean", "argmax", "topk-2"):
            out, alpha = model.forward(frames, mode)
            assert out.shape == frames.shape
            assert alpha.shape == (2, 3, 2, 2, tiny_net.n_codes)
        out, _ = model.forward(frames, "sample", rng)
        assert out.shape == frames.shape

    def test_parameter_names(self, toy):
        groups = {name.split(".")[0] for name in toy.params}
        assert groups == {"encoder", "transformer", "head", "decoder", "codebook"}
        assert "codebook.items" in toy.params


class TestEncoder:
    def test_stem_centres_mid_gray(self, toy):
        x = np.full((1, 3, 64, 64), 0.5)
        out = conv2d(x, toy.params["encoder.stem.w"], toy.params["encoder.stem.b"], pad=1).data
        np.testing.assert_allclose(out[..., 1:-1, 1:-1], 0.0, atol=1e-12)

    def test_zero_input_zero_latent(self):
        model = Restorer(NetConfig(), 0)
        for name, t in model.params.items():
            if name.startswith("encoder.") and name.endswith(".b"):
                t.data = np.zeros(t.shape)
        z = model.encode(np.zeros((2, 64, 64, 3)))
        assert np.all(z.data == 0.0)

    def test_first_layer_gradient(self, tiny_net, rng):
        model = Restorer(tiny_net, 2)
        frames = rng.uniform(size=(1, 3, 8, 8, 3))
        probe = Tensor(rng.normal(size=(1, 3, 2, 2, tiny_net.d)))
        w = model.params["encoder.stem.w"]
        assert check_gradients(lambda: (model.encode(frames) * probe).sum(), [w], eps=1e-6) < 1e-4


class TestTransformer:
    def test_zero_values_is_identity(self, tiny_net, rng):
        model = Restorer(tiny_net, 3)
        for name, t in model.params.items():
            if name.endswith(".v"):
                t.data = np.zeros(t.shape)
        z = rng.normal(size=(2, 3, 2, 2, tiny_net.d))
        np.testing.assert_array_equal(model.transform(z).data, z)

    def test_single_frame_temporal_block(self, tiny_net, rng):
        model = Restorer(tiny_net, 4)
        z = rng.normal(size=(1, 1, 2, 2, tiny_net.d))
        out = model.temporal_block(Tensor(z), 1).data
        g, b = model.params["transformer.block1.ln.g"].data, model.params["transformer.block1.ln.b"].data
        mu, var = z.mean(-1, keepdims=True), z.var(-1, keepdims=True)
        ln = (z - mu) / np.sqrt(var + 1e-5) * g + b
        np.testing.assert_allclose(out, z + ln @ model.params["transformer.block1.v"].data, atol=1e-13)

    def test_spatial_block_commutes_with_frame_permutation(self, tiny_net, rng):
        model = Restorer(tiny_net, 5)
        z = rng.normal(size=(1, 3, 2, 2, tiny_net.d))
        perm = [2, 0, 1]
        a = model.spatial_block(Tensor(z[:, perm]), 0).data
        b = model.spatial_block(Tensor(z), 0).data[:, perm]
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_attention_gradient(self, tiny_net, rng):
        model = Restorer(tiny_net, 6)
        z = Tensor(rng.normal(size=(1, 3, 2, 2, tiny_net.d)), requires_grad=True)
        probe = Tensor(rng.normal(size=z.shape))
        params = [model.params[f"transformer.block{i}.{p}"] for i in (0, 1) for p in ("q", "k", "v", "ln.g")]
        # q/k gradients are ~1e-6 at init; a 1e-6 step would leave ~1e-9 of round-off
        assert check_gradients(lambda: (model.transform(z) * probe).sum(), [z] + params, eps=1e-4) < 1e-4


class TestHead:
    def test_zero_everything(self, tiny_net):
        model = Restorer(tiny_net, 7)
        zero_params(model, "head.")
        alpha = model.predict_dirichlet_params(np.zeros((1, 3, 2, 2, tiny_net.d))).data
        np.testing.assert_allclose(alpha, np.log(2.0), atol=1.1e-6)

    def test_positive(self, toy, rng):
        alpha = toy.predict_dirichlet_params(rng.normal(size=(2, 8, 8, 32)) * 50).data
        assert np.all(alpha > 0)

    def test_gradient(self, tiny_net, rng):
        model = Restorer(tiny_net, 8)
        f = rng.normal(size=(1, 3, 2, 2, tiny_net.d))
        probe = Tensor(rng.normal(size=(1, 3, 2, 2, tiny_net.n_codes)))
        ps = [model.params["head.w"], model.params["head.b"]]
        assert check_gradients(lambda: (model.predict_dirichlet_params(f) * probe).sum(), ps) < 1e-4


class TestEndToEnd:
    def _loss(self, model, x, y):
        out, _ = model.forward(x, "mean")
        return laplacian_nll(y, out) + (out * out).mean()

    def test_toy_finite_differences(self, rng):
        model = Restorer(NetConfig(), 9)
        x = rng.uniform(size=(1, 5, 64, 64, 3))
        y = rng.uniform(size=(1, 5, 64, 64, 3))
        with Tape() as tape:
            loss = self._loss(model, x, y)
        grads = tape.backward(loss)
        names = ["encoder.stem.w", "transformer.block3.q", "head.w", "decoder.up0.w", "codebook.items"]
        for name in names:
            p = model.params[name]
            flat = int(np.argmax(np.abs(grads[p]).ravel()))
            idx = np.unravel_index(flat, p.shape)
            num = numeric_grad(lambda: self._loss(model, x, y).item(), p, 1e-6, [idx])
            assert relative_error(grads[p][idx], num[idx]) < 1e-3, name

    def test_every_parameter_gets_gradient(self, tiny_net, rng):
        model = Restorer(tiny_net, 10)
        x = rng.uniform(size=(2, 3, 8, 8, 3))
        with Tape() as tape:
            out, alpha = model.forward(x, "sample", rng)
            loss = laplacian_nll(x, out) + alpha.mean()
        grads = tape.backward(loss)
        dead = [n for n, p in model.params.items() if not np.any(grads.get(p, 0.0) != 0)]
        assert not dead

    def test_state_dict_round_trip(self, tiny_net):
        a, b = Restorer(tiny_net, 11), Restorer(tiny_net, 12)
        b.load_state_dict(a.state_dict())
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_state_dict_mismatch(self, tiny_net):
        state = Restorer(tiny_net, 0).state_dict()
        state.pop("head.w")
        with pytest.raises(ContractError):
            Restorer(tiny_net, 0).load_state_dict(state)

    def test_decode_convex_feeds_decoder(self, tiny_net, rng):
        model = Restorer(tiny_net, 13)
        w = rng.dirichlet(np.ones(tiny_net.n_codes), size=(1, 3, 2, 2))
        assert model.decode(decode_convex(w, model.codebook)).shape == (1, 3, 8, 8, 3)
