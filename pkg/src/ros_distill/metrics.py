"""Joint goal accuracy and continual-learning metrics over an accuracy matrix.

``a[j, i]`` is the JGA on task i's test set right after training on the j-th
task of the order (both 1-based positions).
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import NONE, Dialogue, TaskOrder
from .errors import DuplicateError, MissingCell, ValidationError
from .prompts import VALUE_MARKER

PRED_FILE_RE = re.compile(r"preds_after-(\d+)_on-(\d+)\.jsonl$")


@dataclass(frozen=True)
class PredictionRecord:
    dialogue_id: str
    turn: int
    qualified_slot: str
    raw_output: str
    task_id: str = ""
    checkpoint_task_index: int = 0

    @property
    def key(self) -> tuple:
        return (self.dialogue_id, self.turn, self.qualified_slot)


def read_predictions(path, task_id: str = "", checkpoint: int = 0) -> list:
    """Read a prediction JSONL file of ``{dialogue_id, turn, slot, output}`` rows."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out.append(PredictionRecord(
                    str(row["dialogue_id"]), int(row["turn"]), row["slot"], row["output"],
                    str(row.get("task_id", task_id)), int(row.get("checkpoint", checkpoint)),
                ))
    return out


def write_predictions(path, predictions: Iterable[PredictionRecord]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps({"dialogue_id": p.dialogue_id, "turn": p.turn,
                                 "slot": p.qualified_slot, "output": p.raw_output},
                                ensure_ascii=False) + "\n")
    return path


def extract_answer(raw_output: str, mode: str = "rationalized") -> str:
    """Answer part of a model output; with ``mode='rationalized'`` the text after the last marker."""
    if mode == "rationalized":
        head, sep, tail = raw_output.rpartition(VALUE_MARKER)
        if sep:
            return tail.strip()
    return raw_output.strip()


def has_marker(raw_output: str) -> bool:
    return VALUE_MARKER in raw_output


def normalize_value(v: str) -> str:
    return " ".join(v.lower().split())


def jga(predictions: Sequence[PredictionRecord], dialogues: Iterable[Dialogue], task,
        mode: str = "rationalized") -> float:
    """Fraction of test turns whose every slot prediction matches gold.

    Missing predictions count as wrong; a duplicated key raises DuplicateError.
    """
    index = {}
    for p in predictions:
        if p.key in index:
            raise DuplicateError(f"duplicate prediction for {p.key}")
        index[p.key] = normalize_value(extract_answer(p.raw_output, mode))
    total = correct = 0
    for d in dialogues:
        if d.task_id != task.task_id or d.split != "test":
            continue
        for turn in d.turns:
            total += 1
            ok = True
            for slot in task.qualified_names:
                pred = index.get((d.dialogue_id, turn.index, slot))
                if pred is None or pred != normalize_value(turn.gold_state.get(slot, NONE)):
                    ok = False
                    break
            correct += ok
    if total == 0:
        raise ValidationError(f"task {task.task_id} has no test turns")
    return correct / total


class AccuracyMatrix:
    """K x K accuracy matrix with 1-based ``(j, i)`` access; unset cells are NaN."""

    def __init__(self, K: int, order: TaskOrder | None = None):
        if K < 1:
            raise ValueError("K must be >= 1")
        if order is not None and len(order) != K:
            raise ValueError("task order length must equal K")
        self.K = K
        self.order = order
        self.a = np.full((K, K), np.nan)

    @classmethod
    def from_array(cls, a, order: TaskOrder | None = None) -> "AccuracyMatrix":
        arr = np.asarray(a, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("accuracy matrix must be square")
        m = cls(arr.shape[0], order)
        for (j, i), v in np.ndenumerate(arr):
            if not np.isnan(v):
                m.set(j + 1, i + 1, float(v))
        return m

    def set(self, j: int, i: int, value: float) -> None:
        if not (1 <= j <= self.K and 1 <= i <= self.K):
            raise IndexError(f"cell ({j},{i}) outside 1..{self.K}")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.a[j - 1, i - 1] = value

    def get(self, j: int, i: int) -> float:
        v = self.a[j - 1, i - 1]
        if np.isnan(v):
            raise MissingCell(j, i)
        return float(v)

    def to_list(self) -> list:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.a]


def avg_jga(m: AccuracyMatrix) -> float:
    K = m.K
    return sum(m.get(K, i) for i in range(1, K + 1)) / K


def fwt(m: AccuracyMatrix) -> float:
    # Undefined for a single task; reported as 0.
    K = m.K
    if K < 2:
        return 0.0
    return sum(m.get(i - 1, i) for i in range(2, K + 1)) / (K - 1)


def bwt(m: AccuracyMatrix) -> float:
    K = m.K
    if K < 2:
        return 0.0
    return sum(m.get(K, i) - m.get(i, i) for i in range(1, K)) / (K - 1)


def forgetting_curve(m: AccuracyMatrix, i: int) -> list:
    return [(j, m.get(j, i)) for j in range(i, m.K + 1)]


# --------------------------------------------------------------- reports


def parse_prediction_filename(path) -> tuple | None:
    match = PRED_FILE_RE.search(Path(path).name)
    return (int(match.group(1)), int(match.group(2))) if match else None


def evaluate_matrix(cells: dict, dialogues: Sequence[Dialogue], tasks, order: TaskOrder,
                    mode: str = "rationalized") -> AccuracyMatrix:
    """Fill an accuracy matrix from ``{(j, i): path_or_predictions}``."""
    by_id = tasks if isinstance(tasks, dict) else {t.task_id: t for t in tasks}
    m = AccuracyMatrix(len(order), order)
    for (j, i), src in sorted(cells.items()):
        task = by_id[order.ordered_task_ids[i - 1]]
        preds = read_predictions(src, task.task_id, j) if isinstance(src, (str, Path)) else src
        m.set(j, i, jga(preds, dialogues, task, mode))
    return m


def report(m: AccuracyMatrix) -> dict:
    """Every metric whose required cells are present."""
    out = {"K": m.K, "matrix": m.to_list()}
    if m.order is not None:
        out["order"] = {"name": m.order.name, "task_ids": list(m.order.ordered_task_ids)}
    for name, fn in (("avg_jga", avg_jga), ("fwt", fwt), ("bwt", bwt)):
        try:
            out[name] = fn(m)
        except MissingCell as exc:
            out[name] = None
            out.setdefault("missing", []).append(f"{name}: {exc}")
    per_task = {}
    curves = {}
    for i in range(1, m.K + 1):
        label = m.order.ordered_task_ids[i - 1] if m.order is not None else str(i)
        if not np.isnan(m.a[m.K - 1, i - 1]):
            per_task[label] = float(m.a[m.K - 1, i - 1])
        try:
            curves[label] = forgetting_curve(m, i)
        except MissingCell:
            pass
    out["per_task_jga"] = per_task
    out["curves"] = curves
    return out


def aggregate_reports(reports: Sequence[dict]) -> dict:
    """Mean and standard error of each metric across runs (e.g. task orders)."""
    agg = {}
    for name in ("avg_jga", "fwt", "bwt"):
        vals = np.array([r[name] for r in reports if r.get(name) is not None], dtype=float)
        if vals.size:
            se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            agg[name] = {"mean": float(vals.mean()), "stderr": se, "n": int(vals.size)}
    return agg


def format_table(m: AccuracyMatrix) -> str:
    labels = list(m.order.ordered_task_ids) if m.order is not None else [str(i) for i in range(1, m.K + 1)]
    width = max(6, max(len(x) for x in labels) + 1)
    lines = ["after\\on".ljust(9) + "".join(x.rjust(width) for x in labels)]
    for j in range(m.K):
        cells = "".join(("-" if np.isnan(v) else f"{100 * v:.1f}").rjust(width) for v in m.a[j])
        lines.append(labels[j].ljust(9) + cells)
    summary = report(m)
    for name in ("avg_jga", "fwt", "bwt"):
        v = summary[name]
        lines.append(f"{name:8s} " + ("n/a" if v is None else f"{100 * v:.2f}"))
    return "\n".join(lines)


def matrix_csv(m: AccuracyMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    labels = list(m.order.ordered_task_ids) if m.order is not None else [str(i) for i in range(1, m.K + 1)]
    w.writerow(["after"] + labels)
    for j in range(m.K):
        w.writerow([labels[j]] + ["" if np.isnan(v) else repr(float(v)) for v in m.a[j]])
    return buf.getvalue()
