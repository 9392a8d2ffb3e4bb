"""Tests for the command-line front door."""
import pytest

from src.cli.app import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, parse_run_config, run_cli
from src.data.dataset import read_jsonl, write_jsonl
from src.data.synth import GenSpec, generate_system
from src.model.checkpoint import load_checkpoint

from tests.conftest import FIXTURES

GOLDEN_CIF = FIXTURES / "golden.cif"


def _summary(capsys) -> str:
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1
    return out[0]


@pytest.fixture
def train_file(small_dataset, tmp_path):
    path = tmp_path / "train.jsonl"
    write_jsonl(path, small_dataset[:12])
    return path


class TestUsage:
    def test_version(self):
        assert run_cli(["--version"]) == EXIT_OK

    def test_unknown_option(self):
        assert run_cli(["gen", "--frobnicate"]) == EXIT_USAGE

    def test_no_command(self):
        assert run_cli([]) == EXIT_USAGE

    def test_zero_samples(self, tmp_path):
        assert run_cli(["gen", "--n", "0", "--out-dir", str(tmp_path)]) == EXIT_USAGE

    def test_bad_palette(self, tmp_path):
        assert run_cli(["gen", "--n", "2", "--palette", "Cu,Qq", "--out-dir", str(tmp_path)]) == EXIT_USAGE

    def test_missing_required(self):
        assert run_cli(["stringify", "--cif", str(GOLDEN_CIF)]) == EXIT_USAGE
        assert run_cli(["train", "--stage", "1"]) == EXIT_USAGE


class TestConfigFile:
    def test_flags_override_file(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("# defaults\nepochs = 3\nloss=plain\nout-dir=/somewhere\n", encoding="utf-8")
        run, verbose = parse_run_config(["train", "--config", str(config), "--epochs", "1"])
        assert run.get("epochs") == 1
        assert run.get("loss") == "plain"
        assert str(run.out_dir) == "/somewhere"
        assert not verbose

    @pytest.mark.parametrize("body", ["colour=blue\n", "loss=focal\n", "epochs=many\n", "just words\n"])
    def test_bad_file(self, tmp_path, body):
        config = tmp_path / "run.cfg"
        config.write_text(body, encoding="utf-8")
        assert run_cli(["train", "--config", str(config), "--stage", "1", "--data", "x.jsonl"]) == EXIT_USAGE

    def test_boolean_key(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("permissive=yes\n", encoding="utf-8")
        run, _ = parse_run_config(["stringify", "--config", str(config)])
        assert run.get("permissive") is True

    def test_missing_file(self, tmp_path):
        assert run_cli(["gen", "--config", str(tmp_path / "absent.cfg")]) == EXIT_USAGE


def test_gen(tmp_path, capsys):
    out = tmp_path / "data"
    assert run_cli(["gen", "--n", "10", "--seed", "2", "--out-dir", str(out)]) == EXIT_OK
    assert _summary(capsys) == f"n=10 train=8 val=1 test=1 out={out}"
    assert len(read_jsonl(out / "train.jsonl")) == 8


class TestStringify:
    def test_golden(self, capsys, golden_config_text):
        assert run_cli(["stringify", "--cif", str(GOLDEN_CIF), "--miller", "1", "0", "0"]) == EXIT_OK
        assert _summary(capsys) == golden_config_text

    def test_untagged_needs_adsorbate(self, tmp_path, capsys, golden_cif_text):
        lines = [line for line in golden_cif_text.splitlines() if "adsorbkit_tag" not in line]
        body = [" ".join(line.split()[:4]) if line[:2] in ("Cu", "H ") else line for line in lines]
        path = tmp_path / "untagged.cif"
        path.write_text("\n".join(body) + "\n", encoding="utf-8")
        args = ["stringify", "--cif", str(path), "--miller", "1", "0", "0"]
        assert run_cli(args) == EXIT_USAGE
        assert run_cli(args + ["--adsorbate", "H", "--permissive"]) == EXIT_OK
        assert _summary(capsys).startswith("data H</s>Cu5 (1 0 0)</s>primary ")

    def test_missing_file(self, tmp_path):
        assert run_cli(["stringify", "--cif", str(tmp_path / "absent.cif")]) == EXIT_FAILURE

    def test_garbled_file(self, tmp_path):
        path = tmp_path / "bad.cif"
        path.write_text("data_bad\n_cell_length_a nope\n", encoding="utf-8")
        assert run_cli(["stringify", "--cif", str(path), "--miller", "1", "0", "0"]) == EXIT_FAILURE

    def test_dataset_cif_names_its_system(self, tmp_path, capsys):
        """Adsorbate and facet come from the data block; CCH3 keeps its name."""
        sample = generate_system(GenSpec(adsorbates=("CCH3",), seed=5), 0)
        path = tmp_path / "sample.cif"
        path.write_text(sample.to_record()["cif"], encoding="utf-8")
        assert run_cli(["stringify", "--cif", str(path)]) == EXIT_OK
        assert _summary(capsys) == sample.config_string.text

    def test_flags_override_block_name(self, tmp_path, capsys):
        sample = generate_system(GenSpec(adsorbates=("CCH3",), seed=5), 0)
        path = tmp_path / "sample.cif"
        path.write_text(sample.to_record()["cif"], encoding="utf-8")
        assert run_cli(["stringify", "--cif", str(path), "--miller", "2", "1", "1"]) == EXIT_OK
        assert _summary(capsys).startswith(f"data CCH3</s>{sample.meta.catalyst_formula} (2 1 1)</s>")


def test_train_then_eval(train_file, tmp_path, capsys):
    ckpt = tmp_path / "model.adk"
    common = ["--data", str(train_file), "--ckpt", str(ckpt), "--out-dir", str(tmp_path),
              "--epochs", "1", "--batch-size", "8"]

    assert run_cli(["train", "--stage", "1"] + common) == EXIT_OK
    assert _summary(capsys).startswith("stage=1 mae=")
    assert (tmp_path / "train_stage1.csv").exists()
    # --epochs sets the alignment epochs of stage 1
    assert len((tmp_path / "train_stage1.csv").read_text(encoding="utf-8").splitlines()) == 2
    assert load_checkpoint(ckpt).model.config.align_epochs == 1

    # stage 2 resumes from the checkpoint it finds at --ckpt
    assert run_cli(["train", "--stage", "2", "--val", str(train_file)] + common) == EXIT_OK
    capsys.readouterr()
    assert load_checkpoint(ckpt).stages == (1, 2)

    assert run_cli(["eval", "--ckpt", str(ckpt), "--data", str(train_file)]) == EXIT_OK
    summary = _summary(capsys)
    assert summary.startswith("mae=") and " text_only_mae=" in summary

    assert run_cli(["eval", "--ckpt", str(ckpt), "--data", str(train_file), "--text-only"]) == EXIT_OK
    assert _summary(capsys).startswith("text_only_mae=")


def test_eval_rejects_garbage_checkpoint(train_file, tmp_path):
    ckpt = tmp_path / "garbage.adk"
    ckpt.write_bytes(b"not a checkpoint")
    assert run_cli(["eval", "--ckpt", str(ckpt), "--data", str(train_file)]) == EXIT_FAILURE
