import math

import numpy as np
import pytest

import dirlatent.training as training
from dirlatent.config import TrainConfig
from dirlatent.errors import ConfigError, NumericError
from dirlatent.io import read_jsonl
from dirlatent.tensor import Tensor
from dirlatent.training import Adam, make_dataset, model_from_checkpoint, moving_average, train


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        Adam(lr=0.1).step({"p": p}, {p: np.array([0.5, -4.0, 0.0])})
        np.testing.assert_allclose(p.data, [0.9, -1.9, 3.0], atol=1e-7)

    def test_minimizes_quadratic(self):
        p = Tensor(np.array([3.0, -1.0]), requires_grad=True)
        opt = Adam(lr=0.05)
        for _ in range(500):
            opt.step({"p": p}, {p: 2 * p.data})
        assert np.max(np.abs(p.data)) < 1e-2

    def test_late_joining_parameter_has_own_count(self):
        a = Tensor(np.zeros(1), requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        opt = Adam(lr=0.1)
        for _ in range(5):
            opt.step({"a": a}, {a: np.ones(1)})
        opt.step({"a": a, "b": b}, {a: np.ones(1), b: np.ones(1)})
        assert opt.state["a"][0] == 6 and opt.state["b"][0] == 1
        # bias correction makes the first update of b exactly lr in size
        np.testing.assert_allclose(b.data, [-0.1], atol=1e-7)

    def test_missing_gradient_skipped(self):
        p = Tensor(np.ones(2), requires_grad=True)
        Adam().step({"p": p}, {})
        np.testing.assert_array_equal(p.data, np.ones(2))


class TestSchedule:
    def test_default_fractions(self):
        cfg = TrainConfig(steps=500)
        assert cfg.groups_at(0) == ("encoder", "decoder", "head")
        assert cfg.groups_at(199) == ("encoder", "decoder", "head")
        assert "transformer" in cfg.groups_at(200) and "codebook" not in cfg.groups_at(399)
        assert "codebook" in cfg.groups_at(400) and "codebook" in cfg.groups_at(499)

    def test_ranges_cover_steps(self):
        for steps in (1, 3, 7, 500):
            ranges = TrainConfig(steps=steps).stage_ranges()
            assert ranges[0][0] == 0 and ranges[-1][1] == steps
            assert all(a[1] == b[0] for a, b in zip(ranges, ranges[1:]))

    @pytest.mark.parametrize("schedule", [
        [{"until": 0.5, "groups": ["encoder"]}],
        [{"until": 1.0, "groups": ["optimizer"]}],
        [{"until": 0.6, "groups": ["head"]}, {"until": 0.4, "groups": ["head"]}],
    ])
    def test_invalid(self, schedule):
        with pytest.raises(ConfigError):
            TrainConfig(schedule=schedule).validate()


class TestFreezeContract:
    def test_frozen_groups_bitwise_unchanged(self, tiny_train):
        snapshots = []

        def record(step, rec, model):
            snapshots.append({k: v.data.copy() for k, v in model.params.items()})

        train(tiny_train, callback=record)
        for step in range(1, tiny_train.steps):
            active = set(tiny_train.groups_at(step))
            for name, value in snapshots[step].items():
                group = name.split(".", 1)[0]
                if group not in active:
                    assert value.tobytes() == snapshots[step - 1][name].tobytes(), (step, name)

    def test_active_groups_move(self, tiny_train):
        first = {}

        def record(step, rec, model):
            if step == 0:
                first.update({k: v.data.copy() for k, v in model.params.items()})

        result = train(tiny_train, callback=record)
        for name, value in result.model.params.items():
            if name.startswith(("encoder.stem.w", "head.w", "codebook")):
                assert not np.array_equal(value.data, first[name]), name


class TestTrain:
    def test_deterministic_checkpoint(self, tiny_train):
        a = train(tiny_train).checkpoint.digest()
        b = train(tiny_train).checkpoint.digest()
        assert a == b

    def test_seed_changes_result(self, tiny_train):
        other = TrainConfig.from_dict({**tiny_train.to_dict(), "seed": 1})
        assert train(tiny_train).checkpoint.digest() != train(other).checkpoint.digest()

    def test_log_file(self, tiny_train, tmp_path):
        result = train(tiny_train, log_path=tmp_path / "log.jsonl")
        rows = read_jsonl(tmp_path / "log.jsonl")
        assert rows == result.log
        assert [r["step"] for r in rows] == list(range(tiny_train.steps))
        assert all(math.isfinite(r["total"]) for r in rows)

    def test_checkpoint_restores_model(self, tiny_train, rng):
        result = train(tiny_train)
        model = model_from_checkpoint(result.checkpoint)
        x = rng.uniform(size=(1, 3, 8, 8, 3))
        np.testing.assert_array_equal(model.forward(x, "mean")[0].data, result.model.forward(x, "mean")[0].data)

    def test_non_finite_loss_reports_step(self, tiny_train, monkeypatch):
        original = training.training_loss
        calls = {"n": 0}

        def poisoned(*args, **kwargs):
            total, report = original(*args, **kwargs)
            calls["n"] += 1
            if calls["n"] == 4:
                report.total = float("nan")
            return total, report

        monkeypatch.setattr(training, "training_loss", poisoned)
        with pytest.raises(NumericError) as info:
            train(tiny_train)
        assert info.value.step == 3

    def test_inpainting_task(self, tiny_net):
        import dataclasses

        cfg = TrainConfig(steps=2, n_train_clips=2, clip_len=3, task="inpainting",
                          net=dataclasses.replace(tiny_net, in_channels=4))
        assert len(train(cfg).log) == 2


class TestData:
    def test_dataset_deterministic(self, tiny_train):
        a = make_dataset(tiny_train, 2, 4, 5)
        b = make_dataset(tiny_train, 2, 4, 5)
        assert all(np.array_equal(x, y) for x, y in zip(a.inputs, b.inputs))
        assert a.clean[0].shape == (4, 8, 8, 3)


class TestMovingAverage:
    def test_values(self):
        np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])

    def test_short_series(self):
        np.testing.assert_allclose(moving_average([1.0, 3.0], 50), [2.0])
