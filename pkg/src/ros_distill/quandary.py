"""Value-selection error analysis for long dialogues.

Wrong predictions on slots whose gold value changed during the dialogue are
sorted into:

* ``recency`` - the prediction is the last gold value set before the
  evaluated turn (the turn itself updated the slot and the update was missed);
* ``stale`` - the prediction is an older gold value superseded before that;
* ``other`` - any other wrong value;
* ``not_quandary`` - the slot never held more than one value.

The trajectory is built from gold states only, not from free-text mentions.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .corpus import NONE, Dialogue
from .metrics import PredictionRecord, extract_answer, normalize_value

RECENCY = "recency"
STALE = "stale"
OTHER = "other"
NOT_QUANDARY = "not_quandary"
QUANDARY_KINDS = (RECENCY, STALE, OTHER)


@dataclass(frozen=True)
class ValueTrajectory:
    qualified_slot: str
    events: tuple  # ((turn, value), ...)


@dataclass(frozen=True)
class ErrorClassification:
    kind: str
    evidence: dict = field(default_factory=dict)


def build_trajectory(dialogue: Dialogue, qualified_slot: str) -> ValueTrajectory:
    events = []
    current = NONE
    for turn in dialogue.turns:
        value = turn.gold_state.get(qualified_slot, NONE)
        if value != NONE and value != current:
            events.append((turn.index, value))
        if value != NONE:
            current = value
    return ValueTrajectory(qualified_slot, tuple(events))


def classify_error(prediction: str, gold: str, trajectory: ValueTrajectory, turn: int) -> ErrorClassification:
    pred, gold_n = normalize_value(prediction), normalize_value(gold)
    if pred == gold_n:
        raise ValueError("prediction matches gold; not an error")
    values = [v for _, v in trajectory.events]
    if len(trajectory.events) <= 1:
        return ErrorClassification(NOT_QUANDARY, {"candidates": values})
    before = [(t, v) for t, v in trajectory.events if t < turn]
    if before and pred == normalize_value(before[-1][1]):
        return ErrorClassification(RECENCY, {"candidates": values, "matched": before[-1]})
    for ev in reversed(before[:-1]):
        if pred == normalize_value(ev[1]):
            return ErrorClassification(STALE, {"candidates": values, "matched": ev})
    return ErrorClassification(OTHER, {"candidates": values})


def error_report(predictions, dialogues, tasks, mode: str = "rationalized", min_turn: int = 10) -> dict:
    """Per-slot error rates over all turns, and a quandary histogram for turns > ``min_turn``."""
    by_id = tasks if isinstance(tasks, dict) else {t.task_id: t for t in tasks}
    preds = {}
    for p in predictions:
        if isinstance(p, PredictionRecord):
            preds[p.key] = extract_answer(p.raw_output, mode)
    with_preds = {k[0] for k in preds}
    seen = Counter()
    wrong = Counter()
    kinds = Counter()
    missing = 0
    examples = []
    for d in dialogues:
        task = by_id.get(d.task_id)
        if task is None or d.dialogue_id not in with_preds:
            continue
        trajectories = {}
        for turn in d.turns:
            for slot in task.qualified_names:
                key = (d.dialogue_id, turn.index, slot)
                if key not in preds:
                    continue
                gold = turn.gold_state.get(slot, NONE)
                seen[slot] += 1
                if normalize_value(preds[key]) == normalize_value(gold):
                    continue
                wrong[slot] += 1
                if turn.index <= min_turn:
                    continue
                if slot not in trajectories:
                    trajectories[slot] = build_trajectory(d, slot)
                c = classify_error(preds[key], gold, trajectories[slot], turn.index)
                kinds[c.kind] += 1
                examples.append({"dialogue_id": d.dialogue_id, "turn": turn.index, "slot": slot,
                                 "prediction": preds[key], "gold": gold, "kind": c.kind})
        for turn in d.turns:
            for slot in task.qualified_names:
                if (d.dialogue_id, turn.index, slot) not in preds:
                    missing += 1
    table = sorted(
        ({"slot": s, "errors": wrong[s], "total": seen[s], "error_rate": wrong[s] / seen[s]}
         for s in wrong),
        key=lambda r: (-r["error_rate"], r["slot"]),
    )
    n_q = sum(kinds[k] for k in QUANDARY_KINDS)
    return {
        "min_turn": min_turn,
        "slot_error_rates": table,
        "quandary_counts": {k: kinds[k] for k in QUANDARY_KINDS + (NOT_QUANDARY,)},
        "quandary_percent": {k: (100.0 * kinds[k] / n_q if n_q else 0.0) for k in QUANDARY_KINDS},
        "missing_predictions": missing,
        "errors": examples,
    }


def report_csv(report: dict) -> str:
    lines = ["slot,errors,total,error_rate"]
    for row in report["slot_error_rates"]:
        lines.append(f"{row['slot']},{row['errors']},{row['total']},{row['error_rate']!r}")
    return "\n".join(lines) + "\n"

