"""Tests for the toy multimodal model and sample encoding."""
import numpy as np
import pytest
import torch

from src.core.errors import UnknownElement
from src.core.neighbors import build_neighbor_list
from src.model.encoding import (
    collate, distinct_texts, encode_samples, encode_structure, encode_text, featurize, predict, predict_encoded,
    predict_texts, rbf_centers,
)
from src.model.losses import AlignConfig
from src.model.multimodal import PARAMETER_GROUPS, ModelConfig, MultimodalModel
from src.model.trainer import config_for_dataset
from src.text.stringify import two_part_prompt

from tests.conftest import TINY_MODEL


def _rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


class TestModelConfig:
    def test_bins(self):
        config = ModelConfig(elements=("Cu", "H"), energy_range=(-2.0, 2.0), bin_count=4)
        assert config.bins_of([-2.0, -1.5, 0.0, 1.99, 2.0]).tolist() == [0, 0, 2, 3, 3]
        assert config.bins_of([-10.0, 10.0]).tolist() == [0, 3]
        np.testing.assert_allclose(config.bin_midpoints([0, 3]), [-1.5, 1.5])

    @pytest.mark.parametrize("changes", [
        dict(energy_range=(1.0, 1.0)),
        dict(bin_count=1),
        dict(mmtg_lambda=0.0),
        dict(mmtg_lambda=1.2),
        dict(loss="huber"),
        dict(epochs=0),
        dict(modality_dropout=1.5),
        dict(temperature=0.0),
        dict(align_epochs=0),
        dict(elements=()),
    ])
    def test_invalid(self, changes):
        payload = dict(elements=("Cu",), energy_range=(-1.0, 1.0))
        payload.update(changes)
        with pytest.raises(ValueError):
            ModelConfig(**payload)

    def test_dict_round_trip(self):
        config = ModelConfig(elements=("Cu", "H"), energy_range=(-1.0, 0.5), seed=9, loss="plain")
        assert ModelConfig.from_dict(config.to_dict()) == config
        assert config.replace(seed=2).seed == 2

    def test_align_settings(self):
        config = ModelConfig(elements=("Cu",), energy_range=(-1.0, 1.0), temperature=0.2, batch_size=16)
        assert config.align == AlignConfig(temperature=0.2, batch_size=16)
        assert (config.epochs_of(1), config.epochs_of(2)) == (config.align_epochs, config.epochs)

    def test_config_for_dataset(self, small_dataset):
        config = config_for_dataset(small_dataset)
        energies = [s.energy for s in small_dataset]
        lo, hi = config.energy_range
        assert lo < min(energies) and hi > max(energies)
        assert list(config.elements) == sorted(config.elements)
        assert "Cu" in config.elements


class TestFeaturize:
    def test_rigid_motion_invariance(self, golden_structure, radii):
        config = ModelConfig(elements=("Cu", "H"), energy_range=(-1.0, 1.0))
        moved = golden_structure.rotated(_rotation(0.4)).translated((0.3, 1.1, -0.7))
        a = featurize(golden_structure, build_neighbor_list(golden_structure, radii, 1.0), config)
        b = featurize(moved, build_neighbor_list(moved, radii, 1.0), config)
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_layout(self, golden_structure, radii):
        config = ModelConfig(elements=("Cu", "H"), energy_range=(-1.0, 1.0), rbf_count=4)
        feats = featurize(golden_structure, build_neighbor_list(golden_structure, radii, 1.0), config)
        assert feats.shape == (6, 3 * 2 + 3 + 4)
        assert feats[1, :5].tolist() == [0.0, 1.0, 0.0, 0.0, 1.0]
        assert feats[5, :5].tolist() == [1.0, 0.0, 1.0, 0.0, 0.0]
        # [Cu, H] counts of the strict neighbors, then of the second shell
        assert feats[1, 9:].tolist() == [1.0, 0.0, 4.0, 0.0]
        assert feats[5, 9:].tolist() == [1.0, 0.0, 3.0, 1.0]
        assert feats[0, 9:].tolist() == [4.0, 1.0, 0.0, 0.0]

    def test_environment_block(self, golden_structure, radii):
        """The H atom sees its five Cu atoms; the image at exactly 6 Angstrom has zero weight."""
        config = ModelConfig(elements=("Cu", "H"), energy_range=(-1.0, 1.0), rbf_count=4)
        feats = featurize(golden_structure, build_neighbor_list(golden_structure, radii, 1.0), config)
        d = np.array([1.5] + [np.hypot(2.5, 1.5)] * 3 + [4.0])
        centers, width = rbf_centers(config)
        envelope = 0.5 * (np.cos(np.pi * d / 6.0) + 1.0)
        expected = (np.exp(-(((d[:, None] - centers) / width) ** 2)) * envelope[:, None]).sum(axis=0)
        np.testing.assert_allclose(feats[1, 5:9], expected, atol=1e-12)

    def test_encode_structure_invariance(self, tiny_model, small_dataset, radii):
        """Geometric embeddings survive rotation, translation and site permutation."""
        model, _ = tiny_model
        rng = np.random.default_rng(12)
        for sample in small_dataset[:20]:
            structure = sample.structure
            moved = structure.rotated(_rotation(rng.uniform(0.0, 2.0 * np.pi))).translated(rng.normal(size=3))
            order = rng.permutation(len(moved))
            moved = moved.permuted(order)
            a = encode_structure(model, structure, build_neighbor_list(structure, radii, 1.0))
            b = encode_structure(model, moved, build_neighbor_list(moved, radii, 1.0))
            np.testing.assert_allclose(a, b, atol=1e-8)

    def test_unknown_element(self, golden_structure, radii):
        config = ModelConfig(elements=("Cu",), energy_range=(-1.0, 1.0))
        with pytest.raises(UnknownElement):
            featurize(golden_structure, build_neighbor_list(golden_structure, radii, 1.0), config)


class TestMultimodalModel:
    def test_seeded_initialization(self, small_dataset):
        config = config_for_dataset(small_dataset, seed=4, **TINY_MODEL)
        a, b = MultimodalModel(config, 10), MultimodalModel(config, 10)
        for (name, p), (_, q) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(p, q), name
        c = MultimodalModel(config.replace(seed=5), 10)
        assert not torch.equal(a.state_dict()["projection.weight"], c.state_dict()["projection.weight"])

    def test_every_parameter_has_a_group(self, tiny_model):
        model, _ = tiny_model
        groups = model.parameter_groups()
        assert set(groups) == set(PARAMETER_GROUPS)
        assert sum(len(v) for v in groups.values()) == len(list(model.parameters()))

    @pytest.mark.parametrize("stage,frozen", [(1, {"text", "trunk", "heads", "missing"}), (2, set()), (3, {"geo"})])
    def test_stage_masks(self, tiny_model, stage, frozen):
        model, _ = tiny_model
        model.set_stage(stage)
        for group, members in model.parameter_groups().items():
            for name, param in members:
                assert param.requires_grad == (group not in frozen), name

    def test_invalid_stage(self, tiny_model):
        with pytest.raises(ValueError):
            tiny_model[0].set_stage(4)

    def test_padding_does_not_change_embeddings(self, tiny_model, small_dataset):
        """A sample pooled alone matches the same sample in a padded batch."""
        model, vocab = tiny_model
        items = encode_samples(small_dataset[:6], model.config, vocab)
        batch = collate(items)
        with torch.no_grad():
            together = model.encode_structures(batch.features, batch.atom_mask)
            texts = model.encode_texts(batch.token_ids, batch.token_mask)
            for k, item in enumerate(items):
                single = collate([item])
                alone = model.encode_structures(single.features, single.atom_mask)
                torch.testing.assert_close(alone[0], together[k], rtol=0.0, atol=1e-12)
                torch.testing.assert_close(model.encode_texts(single.token_ids, single.token_mask)[0],
                                           texts[k], rtol=0.0, atol=1e-12)

    def test_prediction_is_average_of_heads(self, tiny_model, small_dataset, radii):
        model, vocab = tiny_model
        sample = small_dataset[0]
        geo = encode_structure(model, sample.structure, build_neighbor_list(sample.structure, radii, 1.0))
        text = encode_text(model, vocab, sample.config_string)
        pred = predict(model, geo, text)
        assert pred.e_final[0] == pytest.approx((pred.e_reg[0] + pred.e_cls[0]) / 2.0)
        lo, hi = model.config.energy_range
        assert lo <= pred.e_cls[0] <= hi
        assert pred.logits.shape == (1, model.config.bin_count)

    def test_text_only_uses_missing_vector(self, tiny_model, small_dataset):
        model, vocab = tiny_model
        text = encode_text(model, vocab, small_dataset[0].config_string)
        missing = model.missing.detach().numpy()
        np.testing.assert_allclose(predict(model, None, text).e_reg, predict(model, missing, text).e_reg)

    def test_batched_matches_single(self, tiny_model, small_dataset, radii):
        model, vocab = tiny_model
        items = encode_samples(small_dataset[:5], model.config, vocab)
        batched = predict_encoded(model, items)
        for k, sample in enumerate(small_dataset[:5]):
            geo = encode_structure(model, sample.structure, build_neighbor_list(sample.structure, radii, 1.0))
            single = predict(model, geo, encode_text(model, vocab, sample.config_string))
            assert batched.e_reg[k] == pytest.approx(single.e_reg[0], abs=1e-12)

    def test_text_only_batch_matches_prompts(self, tiny_model, small_dataset):
        model, vocab = tiny_model
        items = encode_samples(small_dataset[:3], model.config, vocab)
        from_items = predict_encoded(model, items, text_only=True)
        from_texts = predict_texts(model, vocab, [s.config_string for s in small_dataset[:3]])
        np.testing.assert_allclose(from_items.e_final, from_texts.e_final, atol=1e-12)
        prompts = predict_texts(model, vocab, [two_part_prompt(s.meta) for s in small_dataset[:3]])
        assert prompts.e_final.shape == (3,)


def test_distinct_texts_skips_repeated_token_multisets(tiny_model, small_dataset):
    model, vocab = tiny_model
    items = encode_samples(small_dataset, model.config, vocab)
    doubled = [item for item in items for _ in range(2)]
    kept = distinct_texts(doubled, 1000)
    keys = [tuple(sorted(item.token_ids)) for item in kept]
    assert len(keys) == len(set(keys)) == len({tuple(sorted(item.token_ids)) for item in items})
    assert kept[0] is items[0]
    assert len(distinct_texts(doubled, 2)) == 2
