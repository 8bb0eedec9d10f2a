import math

import numpy as np
import pytest
from scipy import special as sps

from dirlatent import dirichlet
from dirlatent.codebook import Codebook, decode_convex
from dirlatent.config import LossConfig, NetConfig, TrainConfig
from dirlatent.errors import ContractError, NumericError
from dirlatent.network import Restorer
from dirlatent.objective import (
    RandomConvFeatureLoss,
    ZeroFeatureLoss,
    assemble_total,
    elbo_loss,
    kl_sum,
    laplacian_nll,
    make_feature_loss,
)
from dirlatent.tensor import Tape, Tensor
from dirlatent.training import Adam


class TestLaplacian:
    def test_identity(self, rng):
        y = rng.uniform(size=(2, 4, 4, 3))
        assert laplacian_nll(y, y).item() == 0.0

    def test_offset(self, rng):
        y = rng.uniform(size=(2, 4, 4, 3))
        assert laplacian_nll(y, y + 0.1).item() == pytest.approx(0.1, abs=1e-15)

    def test_subgradient(self):
        y = np.array([0.5, 0.2, 0.3, 0.4])
        pred = Tensor([0.1, 0.6, 0.3, 0.9], requires_grad=True)
        with Tape() as tape:
            loss = laplacian_nll(y, pred)
        expected = -np.sign(y - pred.data) / y.size
        np.testing.assert_array_equal(tape.backward(loss)[pred], expected)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            laplacian_nll(np.zeros(3), np.zeros(4))


class TestElbo:
    def cfg(self, **kw):
        base = dict(kl_weight=1.0)
        base.update(kw)
        return LossConfig(**base)

    def test_zero_at_prior_and_perfect_reconstruction(self, rng):
        y = rng.uniform(size=(3, 4))
        elbo, report = elbo_loss(y, [Tensor(y)], np.ones((2, 5)), self.cfg(prior_alpha=1.0))
        assert elbo.item() == 0.0
        assert report.kl_term == pytest.approx(0.0, abs=1e-12)

    def test_kl_disabled_is_negative_l1(self, rng):
        y, p = rng.uniform(size=(3, 4)), rng.uniform(size=(3, 4))
        elbo, report = elbo_loss(y, [Tensor(p)], rng.uniform(0.1, 3, (2, 5)), self.cfg(kl_enabled=False))
        assert elbo.item() == pytest.approx(-np.mean(np.abs(y - p)), abs=1e-15)
        assert report.kl_term == 0.0

    def test_kl_matches_loop(self, rng):
        alpha = rng.uniform(0.1, 5, (2, 3, 4, 6))
        loop = sum(dirichlet.kl_divergence(a, np.full(6, 0.7)) for a in alpha.reshape(-1, 6))
        assert kl_sum(alpha, 0.7).item() == pytest.approx(loop, abs=1e-9)
        _, report = elbo_loss(np.zeros(2), [Tensor(np.zeros(2))], alpha, self.cfg(prior_alpha=0.7))
        assert report.kl_term == pytest.approx(loop, abs=1e-9)

    def test_formula(self, rng):
        y = rng.uniform(size=(4,))
        preds = [Tensor(rng.uniform(size=(4,))) for _ in range(3)]
        alpha = rng.uniform(0.5, 2, (2, 3))
        elbo, _ = elbo_loss(y, preds, alpha, self.cfg(prior_alpha=2.0))
        kl = sum(dirichlet.kl_divergence(a, [2.0] * 3) for a in alpha)
        recon = np.mean([np.mean(np.abs(y - p.data)) for p in preds])
        assert elbo.item() == pytest.approx(-kl - recon, abs=1e-12)

    def test_default_weight_is_per_element(self, rng):
        y = rng.uniform(size=(2, 5))
        alpha = rng.uniform(0.5, 2, (3, 4))
        a, _ = elbo_loss(y, [Tensor(y)], alpha, LossConfig())
        assert a.item() == pytest.approx(-kl_sum(alpha, 1.0).item() / y.size, abs=1e-14)

    def test_nonpositive(self, rng):
        for _ in range(20):
            y = rng.uniform(size=(6,))
            elbo, _ = elbo_loss(y, [Tensor(rng.uniform(size=6))], rng.uniform(0.1, 4, (2, 3)), self.cfg())
            assert elbo.item() <= 0.0

    def test_needs_samples(self):
        with pytest.raises(ContractError):
            elbo_loss(np.zeros(2), [], np.ones((1, 3)), self.cfg())


class TestAssemble:
    def test_arithmetic(self):
        assert assemble_total(Tensor(-2.0), Tensor(0.5), LossConfig()).item() == 2.5

    def test_lambda2_zero_disables(self):
        cfg = LossConfig(lambda2=0.0)
        assert assemble_total(Tensor(-2.0), Tensor(123.0), cfg).item() == 2.0

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite(self, bad):
        with pytest.raises(NumericError):
            assemble_total(Tensor(bad), Tensor(0.0), LossConfig())


class TestFeatureSlot:
    def test_zero(self, rng):
        assert ZeroFeatureLoss()(rng.uniform(size=(2, 8, 8, 3)), rng.uniform(size=(2, 8, 8, 3))).item() == 0.0

    def test_random_conv(self, rng):
        f = make_feature_loss("random_conv")
        assert isinstance(f, RandomConvFeatureLoss)
        y = rng.uniform(size=(2, 8, 8, 3))
        assert f(y, y).item() == 0.0
        assert f(y, rng.uniform(size=y.shape)).item() > 0.0

    def test_unknown(self):
        with pytest.raises(ContractError):
            make_feature_loss("vgg")


def crn_objective(alpha: Tensor, u: np.ndarray, items: np.ndarray, y: np.ndarray, cfg: LossConfig):
    """Objective with common random numbers: gamma draws held at CDF levels u."""
    preds = []
    for ul in u:
        log_g = np.log(sps.gammaincinv(alpha.data, ul))
        w = dirichlet.from_log_gammas(alpha, log_g)
        preds.append(decode_convex(w, Codebook(Tensor(items))))
    elbo, _ = elbo_loss(y, preds, alpha, cfg)
    return assemble_total(elbo, Tensor(0.0), cfg)


class TestObjectiveGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        alpha = Tensor(rng.uniform(0.8, 3.0, (2, 3)), requires_grad=True)
        u = rng.uniform(0.02, 0.98, (64, 2, 3))
        items = rng.normal(size=(3, 2))
        y = rng.normal(size=(2, 2))
        cfg = LossConfig(kl_weight=1.0, prior_alpha=1.0)
        with Tape() as tape:
            loss = crn_objective(alpha, u, items, y, cfg)
        analytic = tape.backward(loss)[alpha]
        numeric = np.zeros_like(analytic)
        h = 1e-5
        base = alpha.data
        for idx in np.ndindex(base.shape):
            vals = []
            for s in (1, -1):
                arr = base.copy()
                arr[idx] += s * h
                vals.append(crn_objective(Tensor(arr), u, items, y, cfg).item())
            numeric[idx] = (vals[0] - vals[1]) / (2 * h)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-3)
        assert np.max(rel) < 5e-2


class TestMonteCarloConsistency:
    def test_variance_scales_inverse_with_samples(self):
        rng = np.random.default_rng(3)
        alpha = rng.uniform(0.5, 3.0, (2, 3))
        items = rng.normal(size=(3, 2))
        y = rng.normal(size=(2, 2))
        cfg = LossConfig(kl_enabled=False)
        var = {}
        for n_samples in (1, 4, 16):
            values = []
            for seed in range(600):
                r = np.random.default_rng(seed + 10_000 * n_samples)
                preds = [decode_convex(dirichlet.sample(alpha, r), Codebook(items)) for _ in range(n_samples)]
                values.append(elbo_loss(y, preds, alpha, cfg)[1].recon_term)
            var[n_samples] = np.var(values, ddof=1)
        for lo, hi in ((1, 4), (4, 16)):
            ratio = var[lo] / var[hi]
            assert 2.0 <= ratio <= 8.0, (lo, hi, ratio)


class TestOverfit:
    def test_total_decreases_on_fixed_batch(self, tiny_net):
        rng = np.random.default_rng(0)
        model = Restorer(tiny_net, 0)
        tcfg = TrainConfig(net=tiny_net, clip_len=3)
        x = rng.uniform(size=(1, 3, 8, 8, 3))
        opt = Adam(lr=1e-2)
        totals = []
        for _ in range(50):
            with Tape() as tape:
                out, alpha = model.forward(x, "sample", rng)
                elbo, _ = elbo_loss(x, [out], alpha, tcfg.loss)
                total = assemble_total(elbo, Tensor(0.0), tcfg.loss)
            totals.append(total.item())
            opt.step(model.params, tape.backward(total))
        assert np.mean(totals[-10:]) < np.mean(totals[:10])
        assert math.isfinite(totals[-1])
