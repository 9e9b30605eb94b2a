"""Instruction-tuning record emission in vanilla and self-rationalization layouts."""

from __future__ import annotations

import json
from collections import Counter, OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .corpus import NONE, Dialogue, SlotSchema, render_context
from .errors import ConsistencyError
from .prompts import (
    TURN_THRESHOLD,
    VALUE_MARKER,
    Templates,
    build_student_prompt,
    needs_teacher,
    short_dialogue_reasoning,
)

VANILLA = "vanilla"
RATIONALIZED = "rationalized"
DEFAULT_MAX_CONTEXT_CHARS = 6000

TEACHER_SELECTED = "teacher_selected"
CANNED_SHORT = "canned_short"
NO_REASONING = "none"


@dataclass
class DistillRecord:
    instruction: str
    input: str
    output: str
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


def _fit_prompt(dialogue: Dialogue, t: int, schema: SlotSchema, rationale, value,
                budget: int, templates):
    start = 0
    context = render_context(dialogue.turns[start:t])
    prompt = build_student_prompt(context, schema, rationale, value, templates)
    truncated = False
    while budget and len(prompt.input) > budget and start < t - 1:
        start += 1
        truncated = True
        context = render_context(dialogue.turns[start:t])
        prompt = build_student_prompt(context, schema, rationale, value, templates)
    if budget and len(prompt.input) > budget:
        excess = len(prompt.input) - budget
        context = context[excess:] if excess < len(context) else ""
        prompt = build_student_prompt(context, schema, rationale, value, templates)
        truncated = True
    return prompt, truncated


def build_records(dialogues: Iterable[Dialogue], tasks, selections: Mapping | None = None,
                  failures: Iterable = (), mode: str = VANILLA,
                  max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS,
                  threshold: int = TURN_THRESHOLD, templates: Templates | None = None) -> list:
    """One record per (dialogue, turn, slot).

    ``selections`` maps ``(dialogue_id, turn, qualified_slot)`` to the selected
    reasoning text or an object with ``.text`` / ``.score``. Keys listed in
    ``failures`` fall back to the vanilla layout.
    """
    if mode not in (VANILLA, RATIONALIZED):
        raise ValueError(f"unknown mode {mode!r}")
    by_id = tasks if isinstance(tasks, Mapping) else {t.task_id: t for t in tasks}
    selections = selections or {}
    failed = {tuple(k) for k in failures}
    records = []
    for d in dialogues:
        task = by_id[d.task_id]
        for t in range(1, len(d.turns) + 1):
            state = d.turns[t - 1].gold_state
            for schema in task.slots:
                value = state.get(schema.qualified, NONE)
                key = (d.dialogue_id, t, schema.qualified)
                rationale, source, score = None, NO_REASONING, None
                if mode == RATIONALIZED:
                    if VALUE_MARKER in value:
                        raise ConsistencyError(f"value for {key} contains the value marker")
                    if not needs_teacher(t, threshold):
                        rationale, source = short_dialogue_reasoning(schema, value, templates), CANNED_SHORT
                    elif key in selections:
                        sel = selections[key]
                        rationale = getattr(sel, "text", sel)
                        score = getattr(sel, "score", None)
                        source = TEACHER_SELECTED
                    elif key not in failed:
                        raise ConsistencyError(f"no selection or failure record for {key}")
                prompt, truncated = _fit_prompt(d, t, schema, rationale, value,
                                                max_context_chars, templates)
                records.append(DistillRecord(
                    prompt.instruction, prompt.input, prompt.expected_output,
                    {
                        "dialogue_id": d.dialogue_id,
                        "turn": t,
                        "qualified_slot": schema.qualified,
                        "task_id": d.task_id,
                        "split": d.split,
                        "layout": RATIONALIZED if rationale is not None else VANILLA,
                        "reasoning_source": source,
                        "score": score,
                        "truncated": truncated,
                    },
                ))
    return records


def write_jsonl(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write((r.to_json() if isinstance(r, DistillRecord) else json.dumps(r, ensure_ascii=False)) + "\n")
    return path


def read_records(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [DistillRecord(**json.loads(line)) for line in fh if line.strip()]


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _write_manifest(out, manifest: dict) -> None:
    manifest_path(out).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def emit_records(dialogues, tasks, selections=None, mode: str = VANILLA, out=None,
                 failures: Iterable = (), max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS,
                 threshold: int = TURN_THRESHOLD, templates: Templates | None = None) -> dict:
    """Write records to ``out`` (JSONL) plus ``<out>.manifest.json``; return the manifest."""
    failures = [tuple(k) for k in failures]
    records = build_records(dialogues, tasks, selections, failures, mode,
                            max_context_chars, threshold, templates)
    per_task = Counter(r.meta["task_id"] for r in records)
    per_source = Counter(r.meta["reasoning_source"] for r in records)
    fallbacks = sum(1 for r in records
                    if r.meta["reasoning_source"] == NO_REASONING and mode == RATIONALIZED)
    manifest = {
        "mode": mode,
        "records": len(records),
        "per_task": dict(sorted(per_task.items())),
        "per_reasoning_source": dict(sorted(per_source.items())),
        "failures": len(failures),
        "vanilla_fallbacks": fallbacks,
        "truncated": sum(1 for r in records if r.meta["truncated"]),
        "max_context_chars": max_context_chars,
    }
    if out is not None:
        write_jsonl(records, out)
        _write_manifest(out, manifest)
    return manifest


def sample_memory_records(records, M: int, seed: int) -> list:
    """Keep all records of ``min(M, available)`` randomly chosen dialogues per task."""
    groups: "OrderedDict[str, OrderedDict]" = OrderedDict()
    for r in records:
        meta = r.meta if isinstance(r, DistillRecord) else r["meta"]
        groups.setdefault(meta["task_id"], OrderedDict()).setdefault(meta["dialogue_id"], []).append(r)
    rng = np.random.default_rng(seed)
    out = []
    for task_id in sorted(groups):
        dialogs = list(groups[task_id].values())
        if M < len(dialogs):
            picked = np.sort(rng.choice(len(dialogs), size=M, replace=False))
            dialogs = [dialogs[k] for k in picked]
        for recs in dialogs:
            out.extend(recs)
    return out


def mix_replay(new_records, memory_records, seed: int) -> list:
    """Deterministically shuffle new-task records together with replayed memory."""
    tagged = [(r, "new") for r in new_records] + [(r, "memory") for r in memory_records]
    order = np.random.default_rng(seed).permutation(len(tagged))
    mixed = []
    for k in order:
        r, origin = tagged[k]
        if isinstance(r, DistillRecord):
            r = DistillRecord(r.instruction, r.input, r.output, {**r.meta, "replay": origin})
        else:
            r = {**r, "meta": {**r.get("meta", {}), "replay": origin}}
        mixed.append(r)
    return mixed


def emit_replay_mix(new_records, memory_records, seed: int, out) -> dict:
    mixed = mix_replay(new_records, memory_records, seed)
    manifest = {
        "records": len(mixed),
        "new": len(new_records),
        "memory": len(memory_records),
        "seed": seed,
    }
    write_jsonl(mixed, out)
    _write_manifest(out, manifest)
    return manifest
