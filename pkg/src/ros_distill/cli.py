"""Command-line front end: ingest, distill, emit, evaluate, analyze.

Settings resolve as built-in defaults, then the ``--config`` TOML file, then
command-line flags, then ``ROS_*`` environment variables.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import corpus as corpus_mod
from .errors import RosError
from .metrics import (
    evaluate_matrix,
    format_table,
    matrix_csv,
    parse_prediction_filename,
    read_predictions,
    report,
)
from .pipeline import RunConfig, read_failures, read_selections, run_distill
from .prompts import Templates
from .quandary import error_report, report_csv
from .writer import (
    DEFAULT_MAX_CONTEXT_CHARS,
    build_records,
    emit_records,
    emit_replay_mix,
    read_records,
    sample_memory_records,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("ros_distill")

EXIT_OK, EXIT_HARD, EXIT_CONFIG = 0, 1, 2

ENV_KEYS = {
    "ROS_TEACHER_URL": "teacher_url",
    "ROS_TEACHER_KEY": "teacher_key",
    "ROS_TEACHER_MODEL": "teacher_model",
    "ROS_EMBED_URL": "embed_url",
    "ROS_EMBED_KEY": "embed_key",
    "ROS_EMBED_MODEL": "embed_model",
}


class ConfigError(Exception):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _csv_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    d = RunConfig()
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="TOML file with run settings (keys as in RunConfig)")
    g.add_argument("--provider", choices=["mock", "http"], default=None,
                   help=f"teacher backend (default: {d.provider})")
    g.add_argument("--cache-dir", default=None, help="content-addressed cache for teacher and embedding calls")
    g.add_argument("--template-dir", default=None, help="override teacher.txt / student.txt / short_reasoning.txt")
    g.add_argument("--temperature", type=float, default=None,
                   help=f"teacher sampling temperature (default: {d.temperature})")
    g.add_argument("--g", type=int, default=None,
                   help=f"candidate reasonings per query, G (default: {d.g})")
    g.add_argument("--max-tokens", type=int, default=None,
                   help=f"teacher max tokens (default: {d.max_tokens}, as used with gpt-3.5-turbo)")
    g.add_argument("--parallelism", type=int, default=None,
                   help=f"max teacher requests in flight (default: {d.parallelism})")
    g.add_argument("--n-value-perturb", type=int, default=None,
                   help=f"value-level negatives per query (default: {d.n_value_perturb})")
    g.add_argument("--n-slot-perturb", type=int, default=None,
                   help=f"slot-level negatives per query (default: {d.n_slot_perturb}; N = 3 + 3 = 6)")
    g.add_argument("--tau", type=float, default=None,
                   help=f"selection temperature tau (default: {d.tau})")
    g.add_argument("--metric", choices=["euclidean", "cosine"], default=None,
                   help=f"embedding distance (default: {d.metric})")
    g.add_argument("--positive", choices=["prompt", "prompt_no_suffix", "dialogue"], default=None,
                   help=f"positive anchor text (default: {d.positive}, the dialogue-centric prompt)")
    g.add_argument("--embed-provider", choices=["file", "http", "hashing"], default=None,
                   help=f"embedding backend (default: {d.embed_provider})")
    g.add_argument("--embeddings-file", default=None, help="precomputed vectors JSONL {text_hash, vector}")
    g.add_argument("--seed", type=int, default=None, help=f"root seed (default: {d.seed})")
    g.add_argument("--turn-threshold", type=int, default=None,
                   help=f"teacher reasoning only for turns above this (default: {d.turn_threshold})")
    g.add_argument("--memory-size", type=int, default=None,
                   help=f"replay dialogues per task, M (default: {d.memory_size})")
    g.add_argument("--split", choices=list(corpus_mod.SPLITS), default=None,
                   help=f"corpus split to process (default: {d.split})")
    g.add_argument("--tasks", type=_csv_list, default=None, help="comma-separated task ids")
    g.add_argument("--strict", action="store_true", default=None,
                   help="exit non-zero when any query failed")


def resolve_config(args, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(RunConfig)}
    values = {}
    problems = []
    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc}"]) from None
        for k, v in data.items():
            key = k.replace("-", "_")
            if key not in names:
                problems.append(f"unknown config key {k!r}")
            else:
                values[key] = v
    for key in names:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    for env, key in ENV_KEYS.items():
        if environ.get(env):
            values[key] = environ[env]
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(problems + [str(exc)]) from None
    problems += cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg


# ------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    tasks, dialogues = corpus_mod.parse_sgd(args.sgd_dir, args.tasks)
    out = corpus_mod.write_corpus(args.out, tasks, dialogues)
    manifest = {
        "tasks": {t.task_id: t.J for t in tasks},
        "dialogues": {sp: sum(1 for d in dialogues if d.split == sp) for sp in corpus_mod.SPLITS},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(manifest, sort_keys=True))
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = resolve_config(args)
    tasks, dialogues = corpus_mod.read_corpus(args.corpus)
    templates = Templates.load(cfg.template_dir)
    manifest = run_distill(dialogues, tasks, cfg, args.out, stop_after=args.stop_after,
                           templates=templates)
    print(json.dumps({k: v for k, v in manifest.items() if k != "config"}, sort_keys=True))
    if manifest["failures"] and cfg.strict:
        return EXIT_HARD
    return EXIT_OK


def cmd_emit(args) -> int:
    cfg = resolve_config(args)
    tasks, dialogues = corpus_mod.read_corpus(args.corpus)
    dialogues = [d for d in dialogues if d.split == cfg.split and (not cfg.tasks or d.task_id in cfg.tasks)]
    templates = Templates.load(cfg.template_dir)
    selections, failures = {}, []
    if args.selections:
        sel_dir = Path(args.selections)
        selections = read_selections(sel_dir / "selections.jsonl")
        failures = read_failures(sel_dir / "failures.json")
    if args.mode == "rationalized" and not args.selections:
        raise ConfigError(["--mode rationalized needs --selections (a distill output directory)"])
    if not args.replay_memory:
        manifest = emit_records(dialogues, tasks, selections, args.mode, args.out, failures,
                                args.max_context_chars, cfg.turn_threshold, templates)
    else:
        new = build_records(dialogues, tasks, selections, failures, args.mode,
                            args.max_context_chars, cfg.turn_threshold, templates)
        memory = sample_memory_records(read_records(args.replay_memory), cfg.memory_size, cfg.seed)
        manifest = emit_replay_mix(new, memory, cfg.seed, args.out)
        manifest["mode"] = args.mode
    print(json.dumps(manifest, sort_keys=True))
    return EXIT_OK


def _collect_cells(args) -> dict:
    cells = {}
    if args.preds_dir:
        for path in sorted(Path(args.preds_dir).glob("preds_after-*_on-*.jsonl")):
            cells[parse_prediction_filename(path)] = path
    for j, i, path in args.cell or []:
        cells[(int(j), int(i))] = Path(path)
    if not cells:
        raise ConfigError(["no prediction files given (--preds-dir or --cell)"])
    return cells


def cmd_evaluate(args) -> int:
    tasks, dialogues = corpus_mod.read_corpus(args.corpus)
    order = corpus_mod.load_task_order(args.order, known=[t.task_id for t in tasks])
    m = evaluate_matrix(_collect_cells(args), dialogues, tasks, order, args.mode)
    rep = report(m)
    if args.out:
        Path(args.out).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    if args.csv:
        Path(args.csv).write_text(matrix_csv(m))
    print(format_table(m))
    return EXIT_OK


def cmd_analyze(args) -> int:
    tasks, dialogues = corpus_mod.read_corpus(args.corpus)
    preds = []
    for p in args.preds:
        preds.extend(read_predictions(p))
    rep = error_report(preds, dialogues, tasks, args.mode, args.min_turn)
    if args.out:
        Path(args.out).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    if args.csv:
        Path(args.csv).write_text(report_csv(rep))
    print(json.dumps({k: rep[k] for k in ("quandary_counts", "quandary_percent")}, sort_keys=True))
    for row in rep["slot_error_rates"]:
        print(f"{row['slot']:40s} {100 * row['error_rate']:6.1f}%  ({row['errors']}/{row['total']})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ros", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse an SGD directory into the normalized corpus")
    s.add_argument("--sgd-dir", required=True)
    s.add_argument("--out", required=True, help="output directory (corpus.jsonl, tasks.json)")
    s.add_argument("--tasks", type=_csv_list, default=None, help="task ids or service names")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("distill", help="generate, perturb and select teacher reasonings")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--stop-after", choices=["generate"], default=None,
                   help="stop once candidates.jsonl is written")
    _add_run_flags(s)
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("emit", help="write instruction-tuning JSONL records")
    s.add_argument("--corpus", required=True)
    s.add_argument("--mode", choices=["vanilla", "rationalized"], default="vanilla")
    s.add_argument("--out", required=True)
    s.add_argument("--selections", default=None, help="distill output directory")
    s.add_argument("--max-context-chars", type=int, default=DEFAULT_MAX_CONTEXT_CHARS,
                   help=f"input budget; oldest turns dropped first (default: {DEFAULT_MAX_CONTEXT_CHARS})")
    s.add_argument("--replay-memory", default=None,
                   help="records JSONL of earlier tasks to sample replay memory from")
    _add_run_flags(s)
    s.set_defaults(func=cmd_emit)

    s = sub.add_parser("evaluate", help="JGA matrix, Avg. JGA, FWT, BWT")
    s.add_argument("--corpus", required=True)
    s.add_argument("--order", required=True, help="order1..order5 or a file of task ids")
    s.add_argument("--preds-dir", default=None, help="directory of preds_after-{j}_on-{i}.jsonl")
    s.add_argument("--cell", nargs=3, action="append", metavar=("J", "I", "PATH"))
    s.add_argument("--mode", choices=["vanilla", "rationalized"], default="rationalized")
    s.add_argument("--out", default=None, help="report JSON path")
    s.add_argument("--csv", default=None, help="export the matrix as CSV")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("analyze", help="value-selection error analysis")
    s.add_argument("--corpus", required=True)
    s.add_argument("--preds", required=True, nargs="+")
    s.add_argument("--min-turn", type=int, default=10)
    s.add_argument("--mode", choices=["vanilla", "rationalized"], default="rationalized")
    s.add_argument("--out", default=None)
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (RosError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HARD


if __name__ == "__main__":
    sys.exit(main())
