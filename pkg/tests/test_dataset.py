"""Tests for dataset IO and splitting."""
import json

import pytest

from src.core.errors import ParseError
from src.data.dataset import (
    SPLIT_NAMES, Sample, check_consistency, data_block_name, parse_data_block_name, read_jsonl, split_indices,
    write_dataset, write_jsonl,
)
from src.text.stringify import ConfigString, SystemMeta


def test_data_block_name():
    assert data_block_name(SystemMeta("OH", "Pt27", (1, -1, 0))) == "OH-Pt27-1_-1_0"


@pytest.mark.parametrize("name, expected", [
    ("OH-Pt27-1_-1_0", ("OH", "Pt27", (1, -1, 0))),
    ("CCH3-Al14Cu13-1_1_1", ("CCH3", "Al14Cu13", (1, 1, 1))),
    ("H-Cu27--1_0_0-indicative4", ("H", "Cu27", (-1, 0, 0))),
    ("golden", None),
    ("H-Cu27-1_0", None),
])
def test_parse_data_block_name(name, expected):
    assert parse_data_block_name(name) == expected


class TestJsonl:
    def test_round_trip(self, small_dataset, tmp_path):
        path = tmp_path / "data.jsonl"
        assert write_jsonl(path, small_dataset[:5]) == 5
        loaded = read_jsonl(path)
        assert [s.to_record() for s in loaded] == [s.to_record() for s in small_dataset[:5]]

    def test_record_fields(self, small_dataset):
        record = small_dataset[0].to_record()
        assert set(record) == {"cif", "config_string", "meta", "energy_ev"}
        assert record["cif"].startswith(f"data_{data_block_name(small_dataset[0].meta)}\n")

    def test_sorted_keys_and_blank_lines(self, small_dataset, tmp_path):
        path = tmp_path / "data.jsonl"
        write_jsonl(path, small_dataset[:2])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert list(json.loads(lines[0])) == sorted(json.loads(lines[0]))
        path.write_text(lines[0] + "\n\n" + lines[1] + "\n", encoding="utf-8")
        assert len(read_jsonl(path)) == 2

    def test_bad_json_names_line(self, small_dataset, tmp_path):
        path = tmp_path / "data.jsonl"
        write_jsonl(path, small_dataset[:1])
        with open(path, "a", encoding="utf-8") as handle:
            handle.write("{not json\n")
        with pytest.raises(ParseError) as info:
            read_jsonl(path)
        assert info.value.line_number == 2

    def test_missing_field(self, small_dataset, tmp_path):
        record = small_dataset[0].to_record()
        del record["energy_ev"]
        path = tmp_path / "data.jsonl"
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        with pytest.raises(ParseError) as info:
            read_jsonl(path)
        assert info.value.line_number == 1

    def test_bad_cif(self, small_dataset, tmp_path):
        record = small_dataset[0].to_record()
        record["cif"] = "garbage"
        path = tmp_path / "data.jsonl"
        path.write_text(json.dumps(record) + "\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_jsonl(path)


def test_consistency_detects_edited_string(small_dataset, radii):
    sample = small_dataset[0]
    assert check_consistency(sample, radii)
    edited = Sample(sample.structure, sample.meta,
                    ConfigString.parse("data H</s>Cu5 (1 0 0)</s>primary none secondary none"), sample.energy)
    assert not check_consistency(edited, radii)


class TestSplit:
    def test_ratio(self):
        train, val, test = split_indices(10, seed=0)
        assert (len(train), len(val), len(test)) == (8, 1, 1)

    def test_remainder_goes_last(self):
        sizes = [len(group) for group in split_indices(7, seed=0)]
        assert sizes == [5, 0, 2]

    def test_partition(self):
        groups = split_indices(103, seed=4)
        merged = sorted(i for group in groups for i in group)
        assert merged == list(range(103))
        assert all(list(group) == sorted(group) for group in groups)

    def test_seeded(self):
        assert split_indices(50, seed=1) == split_indices(50, seed=1)
        assert split_indices(50, seed=1) != split_indices(50, seed=2)

    def test_empty(self):
        assert split_indices(0, seed=0) == ([], [], [])

    @pytest.mark.parametrize("n,parts", [(-1, (8, 1, 1)), (5, ()), (5, (0, 0)), (5, (1, -1))])
    def test_invalid(self, n, parts):
        with pytest.raises(ValueError):
            split_indices(n, seed=0, parts=parts)


def test_write_dataset(small_dataset, tmp_path):
    paths = write_dataset(tmp_path / "out", small_dataset, seed=3)
    assert set(paths) == set(SPLIT_NAMES)
    counts = {name: len(read_jsonl(path)) for name, path in paths.items()}
    assert sum(counts.values()) == len(small_dataset)
    assert counts["train"] == 24 * 8 // 10
