"""Tests for the three-stage training schedule."""
import csv

import numpy as np
import pytest
import torch

from src.core.errors import EmptyDataset, NonFiniteLoss
from src.model import objectives, trainer
from src.model.encoding import encode_samples
from src.model.losses import AlignConfig
from src.model.trainer import (
    CSV_HEADER, build_model, evaluate_losses, gradient_check, run_schedule, train_stage,
)

from tests.conftest import TINY_MODEL


@pytest.fixture
def encoded(tiny_model, small_dataset):
    model, vocab = tiny_model
    return encode_samples(small_dataset, model.config, vocab)


def _snapshot(model):
    return {name: p.detach().clone() for name, p in model.named_parameters()}


def _changed_groups(model, before):
    changed = set()
    for name, param in model.named_parameters():
        if not torch.equal(param.detach(), before[name]):
            changed.add(model.group_of(name))
    return changed


class TestFreezeMasks:
    def test_stage_one_only_moves_geometric_channel(self, tiny_model, encoded):
        model, _ = tiny_model
        before = _snapshot(model)
        train_stage(model, 1, encoded)
        assert _changed_groups(model, before) == {"geo"}

    def test_stage_three_keeps_geometric_channel(self, tiny_model, encoded):
        model, _ = tiny_model
        before = _snapshot(model)
        train_stage(model, 3, encoded)
        changed = _changed_groups(model, before)
        assert "geo" not in changed
        assert {"text", "trunk", "heads"} <= changed

    def test_stage_two_moves_everything_used(self, tiny_model, encoded):
        model, _ = tiny_model
        before = _snapshot(model)
        train_stage(model, 2, encoded)
        assert {"geo", "text", "trunk", "heads"} <= _changed_groups(model, before)


class TestTrainingLog:
    def test_records(self, tiny_model, encoded):
        model, _ = tiny_model
        log = train_stage(model, 2, encoded, config=model.config.replace(epochs=2))
        assert [rec.epoch for rec in log.epochs] == [1, 2]
        assert len(log.step_losses) == 2 * 3
        assert 0.0 <= log.final.retrieval_top1 <= 100.0
        assert log.loss == "mmtg"

    def test_csv(self, tiny_model, encoded, tmp_path):
        model, _ = tiny_model
        path = train_stage(model, 3, encoded).write_csv(tmp_path / "stage3.csv")
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        assert tuple(rows[0]) == CSV_HEADER
        assert len(rows) == 1 + TINY_MODEL["epochs"]
        assert all(np.isfinite(float(x)) for x in rows[1][1:])


def test_stage_three_alternates_across_epochs(tiny_model, encoded, monkeypatch):
    """A dataset that fits in one batch still runs both text-only and full steps."""
    model, _ = tiny_model
    text_only = []
    original = trainer._geo_missing

    def record(stage, global_step, size, config, rng):
        mask = original(stage, global_step, size, config, rng)
        text_only.append(bool(mask.all()))
        return mask

    monkeypatch.setattr(trainer, "_geo_missing", record)
    train_stage(model, 3, encoded[:4], config=model.config.replace(epochs=3))
    assert text_only == [True, False, True]


def test_alignment_reads_model_align_config(tiny_model, encoded, monkeypatch):
    model, _ = tiny_model
    config = model.config.replace(temperature=0.5, align_epochs=1)
    used = []
    original = objectives.info_nce

    def record(geo, text, align):
        used.append(align)
        return original(geo, text, align)

    monkeypatch.setattr(objectives, "info_nce", record)
    train_stage(model, 1, encoded, config=config)
    assert used and all(align == AlignConfig(0.5, config.batch_size) for align in used)


def test_step_is_plain_gradient_descent(tiny_model, encoded):
    """One full-batch step moves every trainable parameter by -lr * grad."""
    model, _ = tiny_model
    config = model.config.replace(modality_dropout=0.0, epochs=1)
    items = encoded[:4]
    model.set_stage(2)
    model.zero_grad(set_to_none=True)
    objective, _, _ = trainer.stage_objective(model, trainer.collate(items), 2, config,
                                              torch.zeros(len(items), dtype=torch.bool))
    objective.backward()
    expected = {name: (p - config.learning_rate * p.grad).detach().clone()
                for name, p in model.named_parameters() if p.grad is not None}

    train_stage(model, 2, items, config=config)
    params = dict(model.named_parameters())
    for name, value in expected.items():
        torch.testing.assert_close(params[name].detach(), value, rtol=0.0, atol=1e-12)


def test_stage_one_runs_align_epochs(tiny_model, encoded):
    model, _ = tiny_model
    log = train_stage(model, 1, encoded, config=model.config.replace(epochs=5, align_epochs=2))
    assert [rec.epoch for rec in log.epochs] == [1, 2]


def test_training_is_deterministic(small_dataset):
    """Same seed and data give bit-identical parameters."""
    states = []
    for _ in range(2):
        model, vocab = build_model(small_dataset, seed=1, **TINY_MODEL)
        run_schedule(model, encode_samples(small_dataset, model.config, vocab))
        states.append(model.state_dict())
    for name in states[0]:
        assert torch.equal(states[0][name], states[1][name]), name


def test_different_seeds_differ(small_dataset):
    finals = []
    for seed in (1, 2):
        model, vocab = build_model(small_dataset, seed=seed, **TINY_MODEL)
        train_stage(model, 2, encode_samples(small_dataset, model.config, vocab))
        finals.append(model.state_dict()["reg_head.weight"].clone())
    assert not torch.equal(finals[0], finals[1])


def test_empty_dataset(tiny_model):
    with pytest.raises(EmptyDataset):
        train_stage(tiny_model[0], 1, [])
    with pytest.raises(EmptyDataset):
        evaluate_losses(tiny_model[0], [])


def test_non_finite_loss_names_position(tiny_model, encoded, monkeypatch):
    model, _ = tiny_model
    monkeypatch.setattr(objectives, "mae", lambda preds, targets: preds.new_tensor(float("nan")))
    with pytest.raises(NonFiniteLoss) as info:
        train_stage(model, 3, encoded)
    assert (info.value.stage, info.value.epoch, info.value.step) == (3, 1, 0)


def test_evaluate_losses(tiny_model, encoded):
    model, _ = tiny_model
    result = evaluate_losses(model, encoded)
    assert set(result) == {"l_mae", "l_ce", "combined"}
    assert result["l_mae"] >= 0.0 and result["l_ce"] >= 0.0
    big, small = max(result["l_mae"], result["l_ce"]), min(result["l_mae"], result["l_ce"])
    assert big <= result["combined"] <= 2.0 * big + 1e-12
    assert small >= 0.0


def test_plain_loss_evaluation(small_dataset):
    model, vocab = build_model(small_dataset, seed=0, loss="plain", **TINY_MODEL)
    result = evaluate_losses(model, encode_samples(small_dataset, model.config, vocab))
    expected = model.config.plain_lambda * result["l_mae"] + result["l_ce"]
    assert result["combined"] == pytest.approx(expected)


class TestGradientCheck:
    def test_fresh_model(self, tiny_model, encoded):
        model, _ = tiny_model
        before = _snapshot(model)
        assert gradient_check(model, encoded[:8]) < 1e-4
        assert _changed_groups(model, before) == set()

    def test_zeroed_trunk(self, tiny_model, encoded):
        """Degenerate trunk weights still give matching gradients."""
        model, _ = tiny_model
        with torch.no_grad():
            for module in model.trunk:
                if isinstance(module, torch.nn.Linear):
                    module.weight.zero_()
        assert gradient_check(model, encoded[:8]) < 1e-4
