"""Distillation run: teacher generation, perturbation, and contrastive selection."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import TASK_ORDERS, iter_slot_queries
from .embeddings import FileEmbeddingProvider, HashingEmbeddingProvider, HttpEmbeddingProvider
from .errors import PoolExhausted, ProviderError, SelectionError
from .perturb import PerturbationPools, derive_seed, make_negative_batch
from .prompts import TURN_THRESHOLD, Templates, build_teacher_prompt, needs_teacher
from .selector import SelectionConfig, audit_rows, positive_text, select_for_query
from .teacher import (
    ContentCache,
    GenerationParams,
    HttpChatProvider,
    MockProvider,
    QueryJob,
    Teacher,
    generate_batch,
)

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Every knob of a run. Defaults match the reference configuration."""

    corpus: str | None = None
    out: str | None = None
    cache_dir: str | None = None
    template_dir: str | None = None
    provider: str = "mock"
    embed_provider: str = "file"
    embeddings_file: str | None = None
    temperature: float = 0.7
    g: int = 5
    max_tokens: int = 256
    parallelism: int = 4
    n_value_perturb: int = 3
    n_slot_perturb: int = 3
    tau: float = 0.8
    metric: str = "euclidean"
    positive: str = "prompt"
    seed: int = 0
    task_order: str = "order1"
    memory_size: int = 50
    turn_threshold: int = TURN_THRESHOLD
    split: str = "train"
    tasks: list | None = None
    strict: bool = False
    teacher_url: str | None = None
    teacher_key: str | None = None
    teacher_model: str = "gpt-3.5-turbo"
    embed_url: str | None = None
    embed_key: str | None = None
    embed_model: str = "all-mpnet-base-v2"

    def validate(self) -> list:
        errors = []
        if self.temperature < 0:
            errors.append("temperature must be >= 0")
        if self.g < 1:
            errors.append("g must be >= 1")
        if self.max_tokens < 1:
            errors.append("max_tokens must be >= 1")
        if self.parallelism < 1:
            errors.append("parallelism must be >= 1")
        if self.n_value_perturb < 0 or self.n_slot_perturb < 0:
            errors.append("perturbation counts must be >= 0")
        if self.n_value_perturb + self.n_slot_perturb < 1:
            errors.append("at least one perturbation is required (N >= 1)")
        if not self.tau > 0:
            errors.append("tau must be > 0")
        if self.metric not in ("euclidean", "cosine"):
            errors.append(f"unknown metric {self.metric!r}")
        if self.positive not in ("prompt", "prompt_no_suffix", "dialogue"):
            errors.append(f"unknown positive mode {self.positive!r}")
        if self.provider not in ("mock", "http"):
            errors.append(f"unknown provider {self.provider!r}")
        if self.embed_provider not in ("file", "http", "hashing"):
            errors.append(f"unknown embed provider {self.embed_provider!r}")
        if self.memory_size < 0:
            errors.append("memory_size must be >= 0")
        if self.turn_threshold < 0:
            errors.append("turn_threshold must be >= 0")
        if self.provider == "http" and not self.teacher_url:
            errors.append("http provider needs ROS_TEACHER_URL")
        if self.embed_provider == "http" and not self.embed_url:
            errors.append("http embed provider needs ROS_EMBED_URL")
        return errors

    @property
    def N(self) -> int:
        return self.n_value_perturb + self.n_slot_perturb

    def generation_params(self) -> GenerationParams:
        return GenerationParams(self.temperature, self.max_tokens, self.g)

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(self.tau, self.metric, self.g, self.N, self.positive)

    def manifest(self) -> dict:
        d = asdict(self)
        for secret in ("teacher_key", "embed_key"):
            d[secret] = "***" if d[secret] else None
        d["N"] = self.N
        d["G"] = self.g
        d["task_orders"] = {k: list(v) for k, v in TASK_ORDERS.items()}
        return d


_SLOT_VALUE = re.compile(r"the answer to slot (<[^>]*>) is `(.*)'\.\n", re.S)


def mock_reasoning(instruction: str, user: str, index: int) -> str:
    """Deterministic stand-in teacher output that names the prompted slot and value."""
    m = _SLOT_VALUE.search(user)
    slot, value = (m.group(1), m.group(2)) if m else ("the slot", "the value")
    return (f"The user's latest confirmed request fixes {slot} to '{value}'; "
            f"earlier alternatives were revised or rejected (candidate {index}).")


def make_teacher(cfg: RunConfig) -> Teacher:
    cache = ContentCache(Path(cfg.cache_dir) / "teacher" if cfg.cache_dir else None)
    if cfg.provider == "mock":
        provider = MockProvider(mock_reasoning, provider_id="mock:reasoning")
    else:
        provider = HttpChatProvider(cfg.teacher_url, cfg.teacher_key, cfg.teacher_model)
    return Teacher(provider, cache)


def make_embedder(cfg: RunConfig):
    if cfg.embed_provider == "file":
        if not cfg.embeddings_file:
            raise ProviderError("file embed provider needs --embeddings-file")
        return FileEmbeddingProvider(cfg.embeddings_file)
    if cfg.embed_provider == "http":
        return HttpEmbeddingProvider(cfg.embed_url, cfg.embed_key, cfg.embed_model)
    return HashingEmbeddingProvider()


@dataclass
class PlannedQuery:
    query: object
    job: QueryJob
    positive: str
    perturbation_error: str | None = None


def plan_queries(dialogues, tasks, cfg: RunConfig, templates: Templates | None = None) -> list:
    """Teacher jobs for every long-dialogue query of the configured split."""
    by_id = tasks if isinstance(tasks, dict) else {t.task_id: t for t in tasks}
    pools = {tid: PerturbationPools.from_dialogues(dialogues, task) for tid, task in by_id.items()}
    planned = []
    for d in dialogues:
        if d.split != cfg.split or d.task_id not in by_id:
            continue
        if cfg.tasks and d.task_id not in cfg.tasks:
            continue
        task = by_id[d.task_id]
        for t in range(1, len(d.turns) + 1):
            if not needs_teacher(t, cfg.turn_threshold):
                continue
            for q in iter_slot_queries(d, t, task):
                seed = derive_seed(cfg.seed, q.dialogue_id, q.turn, q.slot)
                prompt = build_teacher_prompt(q.context, q.schema, q.gold, templates=templates,
                                              dialogue_id=q.dialogue_id, turn=q.turn)
                err = None
                try:
                    negatives = make_negative_batch(
                        q, pools[d.task_id], task, cfg.n_value_perturb, cfg.n_slot_perturb,
                        np.random.default_rng(seed), seed, templates,
                    )
                except PoolExhausted as exc:
                    negatives, err = [], str(exc)
                planned.append(PlannedQuery(
                    q, QueryJob(q.key, prompt, tuple(negatives)),
                    positive_text(q, cfg.positive, templates), err,
                ))
    return planned


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def run_distill(dialogues, tasks, cfg: RunConfig, out_dir, teacher: Teacher | None = None,
                embedder=None, stop_after: str | None = None,
                templates: Templates | None = None) -> dict:
    """Generate, perturb and select; write artifacts under ``out_dir``.

    Artifacts: ``candidates.jsonl`` (every text needing an embedding),
    ``selections.jsonl``, ``audit.jsonl``, ``failures.json``, ``manifest.json``.
    ``stop_after='generate'`` skips selection, which lets embeddings be
    precomputed from ``candidates.jsonl`` before a second, cache-warm run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    teacher = teacher or make_teacher(cfg)
    planned = plan_queries(dialogues, tasks, cfg, templates)
    jobs = [p.job for p in planned if p.perturbation_error is None]
    sets, failures = generate_batch(teacher, jobs, cfg.generation_params(), cfg.parallelism)
    failures = [{"key": list(p.job.key), "errors": [p.perturbation_error]}
                for p in planned if p.perturbation_error is not None] + failures
    by_key = {cs.key: cs for cs in sets}

    cand_rows = []
    for p in planned:
        cs = by_key.get(p.job.key)
        if cs is None:
            continue
        dialogue_id, turn, slot = p.job.key
        cand_rows.append({
            "dialogue_id": dialogue_id, "turn": turn, "slot": slot,
            "positive_text": p.positive,
            "candidates": [c.text for c in cs.positives],
            "perturbed": [c.text for c in cs.perturbed],
            "errors": cs.errors,
        })
    _write_jsonl(out / "candidates.jsonl", cand_rows)

    selections, audits = [], []
    if stop_after != "generate":
        embedder = embedder or make_embedder(cfg)
        cache = ContentCache(Path(cfg.cache_dir) / "embeddings" if cfg.cache_dir else None)
        sel_cfg = cfg.selection_config()
        for p in planned:
            cs = by_key.get(p.job.key)
            if cs is None or cs.failed:
                continue
            try:
                sel = select_for_query(p.query, cs.positives, cs.perturbed, p.positive,
                                       embedder, sel_cfg, cache)
            except (SelectionError, ProviderError) as exc:
                failures.append({"key": list(p.job.key), "errors": [f"selection: {exc}"]})
                continue
            dialogue_id, turn, slot = sel.key
            selections.append({
                "dialogue_id": dialogue_id, "turn": turn, "slot": slot, "text": sel.text,
                "candidate_index": sel.candidate_index, "score": sel.score,
                "log_score": sel.log_score, "n_negatives": sel.n_negatives,
                "shortfall": sel.shortfall,
            })
            audits.extend(audit_rows(sel))
        _write_jsonl(out / "selections.jsonl", selections)
        _write_jsonl(out / "audit.jsonl", audits)

    (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n", encoding="utf-8")
    manifest = {
        "config": cfg.manifest(),
        "queries": len(planned),
        "generated": sum(1 for cs in sets if not cs.failed),
        "selected": len(selections),
        "failures": len(failures),
        "stage": "generate" if stop_after == "generate" else "select",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest


def read_selections(path) -> dict:
    """``{(dialogue_id, turn, slot): row}`` from a ``selections.jsonl`` file."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[(row["dialogue_id"], row["turn"], row["slot"])] = _Selected(row["text"], row["score"])
    return out


def read_failures(path) -> list:
    p = Path(path)
    if not p.exists():
        return []
    return [tuple(f["key"]) for f in json.loads(p.read_text(encoding="utf-8"))]


@dataclass(frozen=True)
class _Selected:
    text: str
    score: float = field(default=None)
