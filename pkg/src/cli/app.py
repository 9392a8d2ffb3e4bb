"""
Command-line front door: gen, stringify, train and eval.

Every run writes its files, logs diagnostics to stderr and prints exactly one
summary line to stdout. Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""
import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from src.config import (
    APP_NAME, APP_VERSION, DEFAULT_ADSORBATES, DEFAULT_JITTER, DEFAULT_PALETTE, DEFAULT_PIR_ATTEMPTS,
    DEFAULT_PIR_CONFIGURATIONS, DEFAULT_PIR_DELTA, DEFAULT_PIR_SYSTEMS, OUTPUT_DIR, STRICT_SCALE,
    SUPPORTED_LOSSES, load_run_config,
)
from src.core.elements import formula_of, load_radii_table
from src.core.errors import AdsorbKitError, ConfigError
from src.core.neighbors import build_neighbor_list
from src.core.structure import Site, Structure, Tag
from src.utils.logger import set_console_level, setup_logger

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class UsageError(Exception):
    """Bad flags or configuration file; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """Options of one CLI run after merging the config file and explicit flags."""
    command: str
    seed: int = 0
    out_dir: Path = OUTPUT_DIR
    options: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_namespace(cls, args: argparse.Namespace) -> "RunConfig":
        options = {k: v for k, v in vars(args).items() if k not in ("command", "seed", "out_dir", "config", "verbose")}
        return cls(command=args.command, seed=args.seed, out_dir=Path(args.out_dir), options=options)

    def get(self, name: str, default=None):
        value = self.options.get(name)
        return default if value is None else value


def _common_options() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Random seed (default 0)")
    common.add_argument("--out-dir", type=Path, default=OUTPUT_DIR, help="Directory for written files")
    common.add_argument("--config", type=Path, help="key=value file of default options")
    common.add_argument("--verbose", action="store_true", help="Log DEBUG messages to stderr")
    return common


def build_arg_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(prog="adsorbkit", description=f"{APP_NAME} {APP_VERSION}: adsorption-energy toolkit")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    gen = commands.add_parser("gen", parents=[common], help="Generate a synthetic dataset")
    gen.add_argument("--n", type=int, default=4096, help="Number of samples")
    gen.add_argument("--jitter", type=float, default=DEFAULT_JITTER, help="Site jitter in Angstrom")
    gen.add_argument("--palette", type=str, default=",".join(DEFAULT_PALETTE), help="Comma-separated elements")
    gen.add_argument("--adsorbates", type=str, default=",".join(DEFAULT_ADSORBATES),
                     help="Comma-separated adsorbate menu")

    stringify = commands.add_parser("stringify", parents=[common], help="Convert a CIF into a config string")
    stringify.add_argument("--cif", type=Path, help="CIF file")
    stringify.add_argument("--miller", type=int, nargs=3, metavar=("H", "K", "L"), help="Facet of the slab")
    stringify.add_argument("--adsorbate", type=str, help="Adsorbate name (required when tags are missing)")
    stringify.add_argument("--permissive", action="store_true", help="Anchor-based 4x cutoff rule")
    stringify.add_argument("--raw-stream", action="store_true", help="Truncate at the first blank line first")

    train = commands.add_parser("train", parents=[common], help="Run one training stage")
    train.add_argument("--stage", type=int, choices=(1, 2, 3), help="Training stage")
    train.add_argument("--data", type=Path, help="Training JSONL")
    train.add_argument("--ckpt", type=Path, help="Checkpoint to write")
    train.add_argument("--init", type=Path, help="Checkpoint to start from")
    train.add_argument("--val", type=Path, help="JSONL whose samples feed the retrieval metric")
    train.add_argument("--loss", choices=SUPPORTED_LOSSES, help="Combined loss (default mmtg)")
    train.add_argument("--epochs", type=int, help="Epochs")
    train.add_argument("--lr", type=float, help="Learning rate")
    train.add_argument("--batch-size", type=int, help="Mini-batch size")
    train.add_argument("--beta", type=float, help="InfoNCE weight in stage 2")
    train.add_argument("--mmtg-lambda", type=float, help="Gate strength of the MMTG loss")

    evaluate = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    evaluate.add_argument("--ckpt", type=Path, help="Checkpoint")
    evaluate.add_argument("--data", type=Path, help="Evaluation JSONL")
    evaluate.add_argument("--text-only", action="store_true", help="Score only the text-only protocol")
    evaluate.add_argument("--pir", action="store_true", help="Run the PIR experiment")
    evaluate.add_argument("--pir-systems", type=int, default=DEFAULT_PIR_SYSTEMS, help="Systems in the PIR run")
    evaluate.add_argument("--delta", type=float, default=DEFAULT_PIR_DELTA, help="PIR tolerance in eV")
    evaluate.add_argument("--heatmaps", type=Path, help="Directory for heatmap CSVs")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise UsageError(f"unknown command '{command}'")


def _convert(action: argparse.Action, key: str, raw: str):
    if isinstance(action, argparse._StoreTrueAction):
        lowered = raw.lower()
        if lowered not in _TRUE | _FALSE:
            raise UsageError(f"config key '{key}' expects true/false, got '{raw}'")
        return lowered in _TRUE
    convert = action.type or str
    try:
        if action.nargs == 3:
            values = [convert(v) for v in raw.split()]
            if len(values) != 3:
                raise ValueError("expected three values")
            return values
        value = convert(raw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"config key '{key}': {e}") from None
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"config key '{key}' must be one of {list(action.choices)}")
    return value


def parse_run_config(argv: Sequence[str]) -> Tuple[RunConfig, bool]:
    """
    Parse flags, merging in the --config file; explicit flags win.

    Returns:
        Tuple of (RunConfig, verbose)

    Raises:
        UsageError: for unknown flags or keys, or unconvertible values
    """
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = _subparser(parser, args.command)
        by_dest = {a.dest: a for a in sub._actions if a.option_strings and a.dest not in ("help", "config")}
        try:
            values = load_run_config(args.config)
        except (OSError, ConfigError) as e:
            raise UsageError(str(e)) from None
        defaults = {}
        for key, raw in values.items():
            if key not in by_dest:
                raise UsageError(f"unknown config key '{key}' for '{args.command}'")
            defaults[key] = _convert(by_dest[key], key, raw)
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return RunConfig.from_namespace(args), bool(args.verbose)


def _require(run: RunConfig, *names: str) -> None:
    missing = [n for n in names if run.options.get(n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{run.command}: missing required option(s) {flags}")


def _csv_list(text: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def cmd_gen(run: RunConfig) -> str:
    from src.data.dataset import split_indices, write_dataset
    from src.data.synth import GenSpec, generate_system

    n = int(run.get("n"))
    if n < 1:
        raise UsageError(f"gen: --n must be at least 1, got {n}")
    try:
        spec = GenSpec(palette=_csv_list(run.get("palette")), adsorbates=_csv_list(run.get("adsorbates")),
                       jitter=float(run.get("jitter")), seed=run.seed)
    except (ValueError, AdsorbKitError) as e:
        raise UsageError(f"gen: {e}") from None
    logger.info(f"Generating {n} samples with seed {run.seed}")
    samples = []
    for index in range(n):
        samples.append(generate_system(spec, index))
        if (index + 1) % 512 == 0:
            logger.info(f"Generated {index + 1}/{n} samples")
    write_dataset(run.out_dir, samples, run.seed)
    sizes = [len(part) for part in split_indices(n, run.seed)]
    return f"n={n} train={sizes[0]} val={sizes[1]} test={sizes[2]} out={run.out_dir}"


def _tagged_structure(structure: Structure, adsorbate_sites: List[int]) -> Structure:
    chosen = set(adsorbate_sites)
    return structure.with_sites(
        Site(s.element, s.frac, Tag.ADSORBATE if i in chosen else s.tag) for i, s in enumerate(structure.sites)
    )


def cmd_stringify(run: RunConfig) -> str:
    from src.data.dataset import parse_data_block_name
    from src.parsers.cif import parse_cif, truncate_at_double_newline
    from src.text.stringify import SystemMeta, identify_adsorbate, permissive_config_string, three_part_string

    _require(run, "cif")
    text = Path(run.get("cif")).read_text(encoding="utf-8")
    if run.get("raw_stream", False):
        text = truncate_at_double_newline(text)
    parsed = parse_cif(text)
    structure = parsed.structure
    # dataset and indicative CIFs carry <adsorbate>-<formula>-<h_k_l> in the block name
    named = parse_data_block_name(parsed.data_block_name)

    adsorbate = run.get("adsorbate")
    if adsorbate is None and named is not None:
        adsorbate = named[0]
    if adsorbate is None:
        if parsed.tags_missing:
            raise UsageError("stringify: --adsorbate is required for a CIF without tags")
        adsorbate = formula_of(structure.elements[i] for i in structure.adsorbate_indices)
        if not adsorbate:
            raise UsageError("stringify: CIF has no adsorbate-tagged site; pass --adsorbate")
        logger.warning(f"Adsorbate name '{adsorbate}' rebuilt from tagged sites; pass --adsorbate to override")

    miller = run.get("miller")
    if miller is None and named is not None:
        miller = named[2]
    if miller is None:
        raise UsageError(f"stringify: data block '{parsed.data_block_name}' does not name a facet; pass --miller")
    miller = tuple(miller)

    # provisional meta to locate the adsorbate, then the real catalyst formula
    provisional = SystemMeta(adsorbate, formula_of(structure.elements), miller)
    sites = identify_adsorbate(structure, provisional)
    catalyst = formula_of(e for i, e in enumerate(structure.elements) if i not in set(sites))
    meta = SystemMeta(adsorbate, catalyst, miller)

    radii = load_radii_table()
    if run.get("permissive", False):
        config = permissive_config_string(structure, meta, radii)
    else:
        tagged = _tagged_structure(structure, sites)
        config = three_part_string(tagged, meta, build_neighbor_list(tagged, radii, STRICT_SCALE))
    return config.text


def _training_overrides(run: RunConfig, stage: int) -> Dict[str, object]:
    # stage 1 keeps its own epoch count
    mapping = {"loss": "loss", "epochs": "align_epochs" if stage == 1 else "epochs", "lr": "learning_rate", "batch_size": "batch_size",
               "beta": "beta", "mmtg_lambda": "mmtg_lambda"}
    return {field_name: run.options[flag] for flag, field_name in mapping.items() if run.options.get(flag) is not None}


def cmd_train(run: RunConfig) -> str:
    from src.data.dataset import read_jsonl
    from src.model.checkpoint import check_elements, load_checkpoint, save_checkpoint
    from src.model.encoding import encode_samples
    from src.model.trainer import build_model, evaluate_losses, train_stage

    _require(run, "stage", "data")
    stage = int(run.get("stage"))
    ckpt = Path(run.get("ckpt", run.out_dir / "model.adk"))
    samples = read_jsonl(run.get("data"))
    overrides = _training_overrides(run, stage)

    init = run.get("init")
    if init is None and stage > 1 and ckpt.exists():
        init = ckpt
    if init is not None:
        checkpoint = load_checkpoint(init)
        model, vocab, stages = checkpoint.model, checkpoint.vocab, checkpoint.stages
        try:
            model.config = model.config.replace(seed=run.seed, **overrides)
        except (TypeError, ValueError) as e:
            raise UsageError(f"train: {e}") from None
    else:
        if stage > 1:
            logger.warning(f"Stage {stage} starts from a fresh model; no checkpoint to resume from")
        try:
            model, vocab = build_model(samples, run.seed, **overrides)
        except (TypeError, ValueError) as e:
            raise UsageError(f"train: {e}") from None
        stages = ()
    check_elements(model.config, {e for s in samples for e in s.structure.elements})

    items = encode_samples(samples, model.config, vocab)
    held_out = None
    if run.get("val") is not None:
        held_out = encode_samples(read_jsonl(run.get("val")), model.config, vocab)
    log = train_stage(model, stage, items, retrieval_items=held_out)
    save_checkpoint(ckpt, model, vocab, tuple(stages) + (stage,))
    log.write_csv(run.out_dir / f"train_stage{stage}.csv")

    losses = evaluate_losses(model, items)
    return (f"stage={stage} mae={losses['l_mae']:.6f} ce={losses['l_ce']:.6f} "
            f"top1={log.final.retrieval_top1:.2f}")


def cmd_eval(run: RunConfig) -> str:
    from src.data.dataset import read_jsonl
    from src.data.synth import GenSpec
    from src.eval.experiments import evaluate_split, export_heatmaps, run_pir_experiment, select_systems
    from src.model.checkpoint import check_elements, load_checkpoint

    _require(run, "ckpt", "data")
    checkpoint = load_checkpoint(run.get("ckpt"))
    model, vocab = checkpoint.model, checkpoint.vocab
    samples = read_jsonl(run.get("data"))
    check_elements(model.config, {e for s in samples for e in s.structure.elements})

    parts = []
    if not run.get("text_only", False):
        multimodal = evaluate_split(model, vocab, samples)
        parts.append(f"mae={multimodal.mae:.6f} r2={multimodal.r2:.6f}")
    text_only = evaluate_split(model, vocab, samples, text_only=True)
    parts.append(f"text_only_mae={text_only.mae:.6f} text_only_r2={text_only.r2:.6f}")

    spec = GenSpec(seed=run.seed)
    if run.get("pir", False):
        count = int(run.get("pir_systems"))
        if count < 1:
            raise UsageError(f"eval: --pir-systems must be at least 1, got {count}")
        result = run_pir_experiment(model, vocab, spec, select_systems(samples, count),
                                    delta=float(run.get("delta")),
                                    configurations=DEFAULT_PIR_CONFIGURATIONS, attempts=DEFAULT_PIR_ATTEMPTS)
        parts.append(f"with_config={result.with_config:.2f} without_config={result.without_config:.2f}")
    if run.get("heatmaps") is not None:
        export_heatmaps(model, vocab, samples, spec, Path(run.get("heatmaps")))
    return " ".join(parts)


COMMANDS = {"gen": cmd_gen, "stringify": cmd_stringify, "train": cmd_train, "eval": cmd_eval}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one CLI command.

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        Process exit code
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        run, verbose = parse_run_config(argv)
        if verbose:
            set_console_level(logging.DEBUG)
        logger.debug(f"Running '{run.command}' with seed {run.seed}, output in {run.out_dir}")
        summary = COMMANDS[run.command](run)
    except UsageError as e:
        logger.error(str(e))
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help and --version
        return e.code if isinstance(e.code, int) else EXIT_OK
    except (AdsorbKitError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Application error: {e}", exc_info=True)
        return EXIT_FAILURE
    print(summary)
    return EXIT_OK
