"""Tests for the evaluation protocols."""
import numpy as np
import pytest

from src.core.errors import EmptyInput, TooSmall
from src.data.synth import generate_indicative_cif
from src.eval.experiments import (
    compare_loss_dynamics, evaluate_split, export_heatmaps, head_ablation, indicative_config,
    run_pir_experiment, select_systems, system_similarity_summary,
)
from src.parsers.cif import parse_cif, truncate_at_double_newline
from src.text.stringify import ConfigString, permissive_config_string

from tests.conftest import TINY_MODEL


class TestEvaluateSplit:
    def test_both_protocols(self, tiny_model, small_dataset):
        model, vocab = tiny_model
        full = evaluate_split(model, vocab, small_dataset)
        text = evaluate_split(model, vocab, small_dataset, text_only=True)
        assert (full.count, full.text_only) == (24, False)
        assert text.text_only
        assert full.mae >= 0.0 and np.isfinite(full.r2)
        assert text.mae >= 0.0 and np.isfinite(text.r2)

    def test_empty(self, tiny_model):
        with pytest.raises(EmptyInput):
            evaluate_split(*tiny_model, [])


def test_head_ablation(tiny_model, small_dataset):
    model, vocab = tiny_model
    result = head_ablation(model, vocab, small_dataset)
    assert set(result) == {"regression", "classifier", "combined"}
    # the combined head averages the other two
    assert result["combined"] <= max(result["regression"], result["classifier"]) + 1e-12


def test_select_systems(small_dataset):
    metas = select_systems(small_dataset, 3)
    assert len(metas) == len(set(metas)) <= 3
    assert metas[0] == small_dataset[0].meta
    everything = select_systems(small_dataset, 1000)
    assert len(everything) == len({s.meta for s in small_dataset})


def test_indicative_config_uses_first_surviving_attempt(small_dataset, gen_spec, radii):
    meta = small_dataset[0].meta
    config = indicative_config(gen_spec, meta, attempts=1)
    structure = parse_cif(truncate_at_double_newline(generate_indicative_cif(gen_spec, meta, 0))).structure
    assert config == permissive_config_string(structure, meta, radii)


class TestPirExperiment:
    def test_rows_and_rates(self, tiny_model, small_dataset, gen_spec):
        model, vocab = tiny_model
        metas = select_systems(small_dataset, 2)
        result = run_pir_experiment(model, vocab, gen_spec, metas, configurations=3, attempts=2)
        assert [row.meta for row in result.rows] == metas
        for row in result.rows:
            assert row.target.hi - row.target.lo == pytest.approx(0.2)
            assert row.config_string is None or ConfigString.parse(row.config_string).adsorbate == row.meta.adsorbate
        hits = sum(row.target.contains(row.with_config) for row in result.rows)
        assert result.with_config == pytest.approx(100.0 * hits / len(metas))
        assert 0.0 <= result.without_config <= 100.0

    def test_no_systems(self, tiny_model, gen_spec):
        with pytest.raises(EmptyInput):
            run_pir_experiment(*tiny_model, gen_spec, [])


def test_export_heatmaps(tiny_model, small_dataset, gen_spec, tmp_path):
    model, vocab = tiny_model
    paths = export_heatmaps(model, vocab, small_dataset, gen_spec, tmp_path / "maps", configurations=4)
    assert set(paths) == {"similarity", "autocorrelation"}
    similarity = paths["similarity"].read_text(encoding="utf-8").splitlines()
    autocorrelation = paths["autocorrelation"].read_text(encoding="utf-8").splitlines()
    assert len(similarity) == 1 + 24
    assert len(autocorrelation) == 1 + 4
    assert float(autocorrelation[1].split(",")[0]) == pytest.approx(1.0)


def test_compare_loss_dynamics(small_dataset):
    rows = compare_loss_dynamics(small_dataset[:16], seeds=[0], align_first=False, **TINY_MODEL)
    assert [(row.seed, row.loss) for row in rows] == [(0, "mmtg"), (0, "plain")]
    assert all(np.isfinite(row.final_sum) and row.late_std >= 0.0 for row in rows)


class TestSystemSimilaritySummary:
    def test_statistics_lie_in_cosine_range(self, tiny_model, small_dataset, gen_spec):
        model, _ = tiny_model
        summary = system_similarity_summary(model, gen_spec, select_systems(small_dataset, 2), configurations=3)
        for value in (summary.within_mean, summary.cross_mean):
            assert -1.0 <= value <= 1.0
        assert summary.within_std >= 0.0

    def test_needs_two_systems(self, tiny_model, small_dataset, gen_spec):
        model, _ = tiny_model
        with pytest.raises(TooSmall):
            system_similarity_summary(model, gen_spec, select_systems(small_dataset, 1), configurations=3)
