"""Batch command line: synthesize data, train, generate scenarios, evaluate, report.

Configuration is a JSON object with these sections (all optional)::

    {
      "out": "out",                 # output directory for every command
      "seed": null,                 # if set, overrides synth.seed, train.seed and generate.seed
      "variant": null,              # if set, overrides train.variant
      "data": null,                 # data.csv used by train and evaluate
      "checkpoint": null,           # checkpoint used by generate and evaluate
      "synth": {...},               # SynthOptions fields
      "model": {...},               # ModelConfig fields
      "train": {...},               # TrainConfig fields
      "generate": {"n_scenarios": 100, "seed": 0, "bins": 50}
    }

Command-line flags win over the file. ``--set section.key=value`` overrides any
single entry; the value is parsed as JSON when possible, else kept as a string.
The effective configuration is written to ``<out>/<command>_config.json``.

Exit codes: 0 success, 1 usage, 2 configuration or input data, 3 runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import Dataset, ParseError, SynthSpec, load_csv, synthesize, write_csv
from .errors import ConfigurationError
from .evaluation import EvalReport, evaluate_scenarios, generate_scenarios, write_plot_data
from .training import Checkpoint, ModelConfig, TrainConfig, TrainingError, train

log = logging.getLogger("gcgan")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("synth-data", "train", "generate", "evaluate", "report")


class UsageError(Exception):
    pass


def _default_correlation() -> list[list[float]]:
    c = np.eye(4)
    c[0, 1] = c[1, 0] = 0.9
    c[2, 3] = c[3, 2] = 0.1
    return c.tolist()


@dataclass
class SynthOptions:
    n_farms: int = 4
    t_total: int = 20000
    target_correlation: list = field(default_factory=_default_correlation)
    ar_coefficient: float = 0.95
    weibull_scale: float = 0.33
    weibull_shape: float = 2.9
    seed: int = 0
    interval_minutes: float = 5.0
    capacity_mw: float = 100.0

    def to_spec(self) -> SynthSpec:
        try:
            return SynthSpec(**asdict(self))
        except ValueError as exc:
            raise ConfigurationError(f"synth: {exc}") from exc


@dataclass
class GenerateOptions:
    n_scenarios: int = 100
    seed: int = 0
    bins: int = 50

    def __post_init__(self):
        if self.n_scenarios < 1 or self.bins < 1:
            raise ConfigurationError("generate.n_scenarios and generate.bins must be >= 1")


@dataclass
class RunConfig:
    out: str = "out"
    seed: int | None = None
    variant: str | None = None
    data: str | None = None
    checkpoint: str | None = None
    synth: SynthOptions = field(default_factory=SynthOptions)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generate: GenerateOptions = field(default_factory=GenerateOptions)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"synth": SynthOptions, "model": ModelConfig, "train": TrainConfig,
             "generate": GenerateOptions}


def _build_section(cls, values: dict, name: str):
    if not isinstance(values, dict):
        raise ConfigurationError(f"section {name!r} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(f"{name}: {exc}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> None:
    """Apply ``section.key=value`` (or ``key=value`` for top-level keys) to ``raw``."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise UsageError(f"override must look like key=value, got {assignment!r}")
    parts = key.split(".")
    if len(parts) > 2:
        raise ConfigurationError(f"override key nests too deep: {key!r}")
    if len(parts) == 2:
        section, name = parts
        if section not in _SECTIONS:
            raise ConfigurationError(f"unknown config section {section!r}")
        raw.setdefault(section, {})[name] = _parse_value(value)
    else:
        raw[key] = _parse_value(value)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the JSON file and command-line flags into a ``RunConfig``."""
    raw: dict = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError("config file must hold a JSON object")
    for assignment in args.set or []:
        apply_override(raw, assignment)
    for name in ("out", "seed", "variant", "data", "checkpoint"):
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value

    top = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {sorted(unknown)}")
    sections = {name: _build_section(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**{k: v for k, v in raw.items() if k not in _SECTIONS}, **sections)

    if cfg.seed is not None:
        cfg.synth.seed = cfg.train.seed = cfg.generate.seed = int(cfg.seed)
    if cfg.variant is not None:
        cfg.train = TrainConfig(**{**asdict(cfg.train), "variant": cfg.variant})
    if cfg.data is not None and not Path(cfg.data).is_file():
        raise ConfigurationError(f"data file not found: {cfg.data}")
    return cfg


# -- commands ------------------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, command: str) -> None:
    path = _out_dir(cfg) / f"{command.replace('-', '_')}_config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def _require(value, what: str):
    if value is None:
        raise ConfigurationError(f"no {what} given (use --{what} or the {what!r} config key)")
    return value


def _load_checkpoint(cfg: RunConfig) -> Checkpoint:
    path = Path(_require(cfg.checkpoint, "checkpoint"))
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def cmd_synth_data(cfg: RunConfig, args) -> None:
    d = synthesize(cfg.synth.to_spec())
    out = _out_dir(cfg)
    write_csv(d, out / "data.csv")
    log.info("wrote %s (%d farms x %d steps)", out / "data.csv", d.n_farms, d.n_steps)


def cmd_train(cfg: RunConfig, args) -> None:
    d = load_csv(_require(cfg.data, "data"))
    out = _out_dir(cfg)
    result = train(cfg.train, d, cfg.model, checkpoint_path=out / "checkpoint.npz",
                   log_path=out / "train_log.csv")
    log.info("trained %d epochs, checkpoint at %s", len(result.history), out / "checkpoint.npz")


def _scenario_dataset(ckpt: Checkpoint, values: np.ndarray) -> Dataset:
    meta = ckpt.metadata
    return Dataset(list(meta["farm_ids"]), np.ones(len(meta["farm_ids"])),
                   float(meta["interval_minutes"]), values)


def cmd_generate(cfg: RunConfig, args) -> None:
    ckpt = _load_checkpoint(cfg)
    scenarios = generate_scenarios(ckpt.generator, cfg.generate.n_scenarios, cfg.generate.seed,
                                   ckpt.train_config.noise_distribution)
    out = _out_dir(cfg) / "scenarios"
    out.mkdir(exist_ok=True)
    width = max(3, len(str(len(scenarios) - 1)))
    for i, x in enumerate(scenarios):
        write_csv(_scenario_dataset(ckpt, x), out / f"scenario_{i:0{width}d}.csv",
                  meta_path=False, per_unit=True)
    # unit capacities so that load_csv reads the per-unit values back unchanged
    meta = {"interval_minutes": float(ckpt.metadata["interval_minutes"]),
            "capacities": {f: 1.0 for f in ckpt.metadata["farm_ids"]}}
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    log.info("wrote %d scenarios to %s", len(scenarios), out)


def cmd_evaluate(cfg: RunConfig, args) -> None:
    ckpt = _load_checkpoint(cfg)
    reference = load_csv(_require(cfg.data, "data"))
    if list(reference.farm_ids) != list(ckpt.metadata["farm_ids"]):
        raise ConfigurationError("reference data farms do not match the checkpoint's farms")
    scenarios = generate_scenarios(ckpt.generator, cfg.generate.n_scenarios, cfg.generate.seed,
                                   ckpt.train_config.noise_distribution)
    report = evaluate_scenarios(scenarios, reference, cfg.generate.seed)
    out = _out_dir(cfg)
    (out / "eval_report.json").write_text(report.to_json())
    write_plot_data(out / "plots", report, scenarios, reference, cfg.generate.bins)
    for key, msg in report.errors.items():
        log.warning("%s: %s", key, msg)
    log.info("wrote %s", out / "eval_report.json")


def format_report(report: EvalReport) -> str:
    lines = [f"scenarios: {report.n_scenarios}  seed: {report.seed}",
             f"farms: {', '.join(report.farm_ids)}"]
    if report.correlation_mae is not None:
        lines.append(f"correlation: MAE {report.correlation_mae:.4f}  max |err| "
                     f"{report.correlation_max_abs_err:.4f}")
    for label, mat in (("generated", report.correlation_generated),
                       ("reference", report.correlation_reference)):
        if mat is not None:
            lines.append(f"  {label}:")
            lines.extend("    " + " ".join(f"{v:7.3f}" for v in row) for row in mat)
    lines.append(f"capacity factor: generated {report.capacity_factor_generated:.4f}  "
                 f"reference {report.capacity_factor_reference:.4f}")
    for label in ("generated", "reference"):
        fit = getattr(report, f"weibull_{label}")
        if fit is not None:
            lines.append(f"weibull {label}: scale {fit.scale:.4f}  shape {fit.shape:.4f}")
    for key, entry in report.variability.items():
        for label, stats in entry.items():
            if isinstance(stats, dict):
                lines.append(f"variability {key} min {label}: error: {stats['error']}")
            else:
                lines.append(f"variability {key} min {label}: peak {stats.peak:.3f}  "
                             f"variance {stats.variance:.3e}")
    for key, msg in report.errors.items():
        lines.append(f"error {key}: {msg}")
    return "\n".join(lines)


def cmd_report(cfg: RunConfig, args) -> None:
    path = Path(args.report or Path(cfg.out) / "eval_report.json")
    if not path.is_file():
        raise FileNotFoundError(f"report not found: {path}")
    try:
        report = EvalReport.from_json(path.read_text())
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigurationError(f"cannot parse report {path}: {exc}") from exc
    print(format_report(report))


HANDLERS = {"synth-data": cmd_synth_data, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "report": cmd_report}


# -- argument parsing --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for synthesis, training and generation")
    common.add_argument("--variant", choices=["conv1d", "full"], help="temporal filter variant")
    common.add_argument("--data", help="data.csv (meta.json alongside)")
    common.add_argument("--checkpoint", help="checkpoint.npz")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.epochs=10 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="gcgan", description="Graph-convolutional GAN for multi-farm wind scenarios.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.add_parser("synth-data", parents=[common], help="write a synthetic data.csv + meta.json")
    sub.add_parser("train", parents=[common], help="train on --data, write checkpoint + log")
    sub.add_parser("generate", parents=[common], help="write per-unit scenarios from --checkpoint")
    sub.add_parser("evaluate", parents=[common], help="score scenarios against --data")
    rep = sub.add_parser("report", parents=[common], help="pretty-print a stored evaluation report")
    rep.add_argument("report", nargs="?", help="eval_report.json (default: <out>/eval_report.json)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing command, expected one of {', '.join(COMMANDS)}")
    except UsageError as exc:
        print(f"gcgan: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command != "report":
            _echo_config(cfg, args.command)
        HANDLERS[args.command](cfg, args)
    except UsageError as exc:
        print(f"gcgan: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, ParseError) as exc:
        print(f"gcgan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, OSError, ValueError) as exc:
        print(f"gcgan: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
