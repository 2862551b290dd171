import csv
import math

import numpy as np
import pytest

from texton import functional as F
from texton.data import AugmentConfig, split_random
from texton.nn import Linear, Module
from texton.synth import SyntheticTextureSpec, synth_generate
from texton.tensor import Parameter, Tensor
from texton.training import (METRICS_HEADER, NonFiniteGradientError, OptimizerState, TrainConfig,
                             TrainingDiverged, accuracy, aggregate, lr_schedule, protocol,
                             sgd_step, train)


def test_sgd_momentum_two_steps():
    w = Parameter(np.zeros(1))
    state = OptimizerState()
    for _ in range(2):
        w.grad = np.ones(1)
        sgd_step([w], state, lr=0.1, momentum=0.9)
    assert w.data[0] == pytest.approx(-0.29, abs=1e-12)


def test_sgd_rejects_non_finite_gradients():
    w = Parameter(np.zeros(2))
    w.grad = np.array([1.0, np.nan])
    with pytest.raises(NonFiniteGradientError):
        sgd_step([w], OptimizerState(), 0.1)
    assert (w.data == 0).all()


def closed_form_cosine(t, total, lr, lr_min):
    return lr_min + 0.5 * (lr - lr_min) * (1 + math.cos(math.pi * t / total))


def closed_form_restarts(t, t0, mult, lr, lr_min):
    if t >= t0:
        n = int(math.log(t / t0 * (mult - 1) + 1, mult))
        # guard float rounding at cycle boundaries
        while t0 * (mult ** (n + 1) - 1) / (mult - 1) <= t:
            n += 1
        while t0 * (mult ** n - 1) / (mult - 1) > t:
            n -= 1
        t_cur, t_i = t - t0 * (mult ** n - 1) / (mult - 1), t0 * mult ** n
    else:
        t_cur, t_i = t, t0
    return lr_min + 0.5 * (lr - lr_min) * (1 + math.cos(math.pi * t_cur / t_i))


def test_cosine_schedule_matches_closed_form():
    cfg = TrainConfig(epochs=7, lr=0.05, lr_min=1e-4, scheduler="cosine")
    steps = 13
    for t in range(cfg.epochs * steps):
        assert abs(lr_schedule(t, cfg, steps) - closed_form_cosine(t, 7 * steps, 0.05, 1e-4)) < 1e-9


def test_warm_restart_schedule_matches_closed_form():
    cfg = TrainConfig(epochs=70, lr=0.01, scheduler="cosine_warm_restarts", t0_epochs=10, t_mult=2)
    steps = 5
    for t in range(cfg.epochs * steps):
        assert abs(lr_schedule(t, cfg, steps) - closed_form_restarts(t, 50, 2, 0.01, 0.0)) < 1e-9
    assert lr_schedule(50, cfg, steps) == pytest.approx(0.01)
    assert lr_schedule(150, cfg, steps) == pytest.approx(0.01)


def test_protocols():
    fmd = protocol("FMD")
    assert (fmd.epochs, fmd.batch_size, fmd.lr, fmd.scheduler) == (30, 16, 1e-3,
                                                                   "cosine_warm_restarts")
    assert protocol("dtd").five_crop_train
    assert protocol("gtos-m", lr=0.1).lr == 0.1
    with pytest.raises(ValueError):
        TrainConfig(scheduler="step").validate()


def test_accuracy_and_aggregate():
    assert accuracy([0, 1, 1, 2], [0, 1, 2, 2]) == 75.0
    mean, std = aggregate([80.0, 82.0, 84.0])
    assert mean == 82.0 and std == pytest.approx(math.sqrt(8 / 3))
    with pytest.raises(ValueError):
        accuracy([], [])


def test_separable_toy_reaches_full_accuracy(f64, rng):
    x = np.concatenate([rng.normal(-2, 0.5, (20, 2)), rng.normal(2, 0.5, (20, 2))])
    y = np.array([0] * 20 + [1] * 20)
    model = Linear(2, 2, rng)
    state = OptimizerState()
    for step in range(200):
        model.zero_grad()
        loss = F.cross_entropy(model(Tensor(x)), y)
        loss.backward()
        sgd_step(model.parameters(), state, 0.05)
        if accuracy(model(Tensor(x)).data.argmax(1), y) == 100.0:
            break
    assert accuracy(model(Tensor(x)).data.argmax(1), y) == 100.0
    assert step < 200


class MeanColour(Module):
    """Tiny classifier on per-channel image statistics."""

    def __init__(self, n_classes, rng, poison=False):
        self.fc = Linear(6, n_classes, rng)
        self.poison = poison

    def forward(self, x):
        m = x.mean(axis=(2, 3))
        d = x - x.mean(axis=(2, 3), keepdims=True)
        feats = F.concat([m, (d * d).mean(axis=(2, 3))], axis=1)
        out = self.fc(feats)
        return out * float("nan") if self.poison else out


@pytest.fixture(scope="module")
def tiny_manifest():
    m = synth_generate(SyntheticTextureSpec(samples_per_class=6, image_size=20))
    return split_random(m, 1, 0.75, seed=0)


def run_tiny(manifest, tmp_path, name, **kw):
    cfg = TrainConfig(epochs=3, batch_size=4, lr=0.05, scheduler="cosine", seed=1, **kw)
    model = MeanColour(4, np.random.default_rng(0))
    path = tmp_path / f"{name}.csv"
    res = train(model, manifest, manifest.splits[0], cfg, AugmentConfig(20, 16),
                run_id=name, metrics_path=path)
    return res, path


def test_train_writes_metrics_and_is_deterministic(tiny_manifest, tmp_path):
    res, path = run_tiny(tiny_manifest, tmp_path, "a")
    _, path2 = run_tiny(tiny_manifest, tmp_path, "a2")
    rows = list(csv.reader(open(path)))
    assert rows[0] == METRICS_HEADER and len(rows) == 4
    assert [h.epoch for h in res.history] == [0, 1, 2]
    assert res.history[0].lr == pytest.approx(0.05)
    a = [r[1:] for r in csv.reader(open(path))]
    b = [r[1:] for r in csv.reader(open(path2))]
    assert a == b
    assert 0.0 <= res.test_acc <= 100.0


def test_five_crop_training_runs(tiny_manifest, tmp_path):
    res, _ = run_tiny(tiny_manifest, tmp_path, "five", five_crop_train=True, five_crop_eval=True)
    assert len(res.history) == 3


def test_divergence_raises(tiny_manifest):
    model = MeanColour(4, np.random.default_rng(0), poison=True)
    cfg = TrainConfig(epochs=1, batch_size=4, lr=0.05, scheduler="cosine")
    with pytest.raises(TrainingDiverged) as info:
        train(model, tiny_manifest, tiny_manifest.splits[0], cfg, AugmentConfig(20, 16))
    assert info.value.batch_index == 0
