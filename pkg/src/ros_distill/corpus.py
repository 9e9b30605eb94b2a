"""Schema-guided dialogue corpus: parsing, normalized storage, task orders, replay memory."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusParseError, SchemaViolation, ValidationError

log = logging.getLogger(__name__)

NONE = "NONE"
SPLITS = ("train", "dev", "test")

# The 15 single-service SGD tasks used for continual DST, keyed by service.
SERVICE_TASK_IDS = {
    "services_4": "30",
    "flights_1": "31",
    "services_3": "32",
    "flights_3": "33",
    "trains_1": "34",
    "homes_2": "35",
    "rentalcars_2": "36",
    "restaurants_1": "37",
    "music_1": "38",
    "hotels_4": "39",
    "media_2": "40",
    "hotels_3": "41",
    "rentalcars_3": "42",
    "hotels_1": "43",
    "homes_1": "44",
}

# Slot counts per task, used to sanity-check a full SGD ingest.
TASK_SLOT_COUNTS = {
    "30": 5, "31": 10, "32": 5, "33": 8, "34": 7, "35": 8, "36": 6, "37": 9,
    "38": 6, "39": 7, "40": 5, "41": 6, "42": 7, "43": 7, "44": 7,
}

TASK_ORDERS = {
    "order1": ("30", "31", "32", "33", "34", "35", "36", "37", "38", "39", "40", "41", "42", "43", "44"),
    "order2": ("39", "33", "36", "42", "40", "37", "38", "34", "32", "35", "41", "31", "30", "44", "43"),
    "order3": ("30", "41", "38", "31", "43", "39", "40", "33", "34", "44", "37", "36", "32", "35", "42"),
    "order4": ("43", "40", "44", "38", "30", "37", "31", "39", "32", "35", "41", "34", "33", "36", "42"),
    "order5": ("30", "33", "44", "31", "38", "32", "42", "40", "37", "43", "36", "39", "41", "35", "34"),
}


@dataclass(frozen=True)
class SlotSchema:
    service_name: str
    service_description: str
    slot_name: str
    slot_description: str

    def __post_init__(self):
        if not self.service_description.strip() or not self.slot_description.strip():
            raise ValidationError(f"empty description for slot {self.key!r}")

    @property
    def key(self) -> str:
        return f"{self.service_name}-{self.slot_name}"

    @property
    def qualified(self) -> str:
        return f"<{self.key}>"


@dataclass(frozen=True)
class Turn:
    index: int
    system_utterance: str
    user_utterance: str
    gold_state: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    task_id: str
    turns: tuple
    split: str = "train"

    def __post_init__(self):
        if not self.turns:
            raise ValidationError(f"dialogue {self.dialogue_id} has no turns")
        for k, turn in enumerate(self.turns, start=1):
            if turn.index != k:
                raise ValidationError(
                    f"dialogue {self.dialogue_id}: turn indices must be consecutive from 1"
                )
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")

    def turn(self, t: int) -> Turn:
        if not 1 <= t <= len(self.turns):
            raise IndexError(f"turn {t} outside dialogue {self.dialogue_id} (1..{len(self.turns)})")
        return self.turns[t - 1]


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    slots: tuple

    def __post_init__(self):
        if not self.slots:
            raise ValidationError(f"task {self.task_id} has no slots")
        names = [s.qualified for s in self.slots]
        if len(set(names)) != len(names):
            raise ValidationError(f"task {self.task_id} has duplicate qualified slots")

    @property
    def J(self) -> int:
        return len(self.slots)

    @property
    def service_name(self) -> str:
        return self.slots[0].service_name

    def schema(self, qualified: str) -> SlotSchema:
        for s in self.slots:
            if s.qualified == qualified:
                return s
        raise SchemaViolation(qualified, f"task {self.task_id}")

    @property
    def qualified_names(self) -> list:
        return [s.qualified for s in self.slots]


@dataclass(frozen=True)
class TaskOrder:
    name: str
    ordered_task_ids: tuple

    def __len__(self):
        return len(self.ordered_task_ids)

    def position(self, task_id: str) -> int:
        """1-based position of ``task_id`` in the order."""
        return self.ordered_task_ids.index(task_id) + 1


@dataclass(frozen=True)
class SlotQuery:
    dialogue_id: str
    task_id: str
    turn: int
    context: str
    schema: SlotSchema
    gold: str

    @property
    def slot(self) -> str:
        return self.schema.qualified

    @property
    def key(self) -> tuple:
        return (self.dialogue_id, self.turn, self.schema.qualified)


# ---------------------------------------------------------------- parsing


def _load_json(path: Path):
    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(path, exc.pos, exc.msg) from None


def task_id_for(service: str) -> str:
    return SERVICE_TASK_IDS.get(service, service)


def _schema_files(root: Path) -> list:
    found = [root / sp / "schema.json" for sp in SPLITS if (root / sp / "schema.json").exists()]
    if (root / "schema.json").exists():
        found.append(root / "schema.json")
    return found


def _read_services(root: Path) -> dict:
    services = {}
    files = _schema_files(root)
    if not files:
        raise CorpusParseError(root, 0, "no schema.json found")
    for path in files:
        data = _load_json(path)
        for svc in data:
            name = svc["service_name"]
            if name in services:
                continue
            slots = tuple(
                SlotSchema(name, svc["description"], sl["name"], sl["description"])
                for sl in svc["slots"]
            )
            services[name] = slots
    return services


def _dialogue_files(root: Path, split: str) -> list:
    d = root / split
    if not d.is_dir():
        return []
    return sorted(p for p in d.glob("dialogues*.json"))


def _build_turns(raw_turns: list, service: str, valid: set, where: str) -> tuple:
    turns = []
    pending_system = ""
    state: dict = {}
    for rt in raw_turns:
        speaker = rt["speaker"].upper()
        if speaker == "SYSTEM":
            pending_system = rt["utterance"]
            continue
        for frame in rt.get("frames", []):
            if frame.get("service") != service:
                continue
            slot_values = frame.get("state", {}).get("slot_values", {})
            for slot, values in slot_values.items():
                qualified = f"<{service}-{slot}>"
                if qualified not in valid:
                    raise SchemaViolation(qualified, where)
                if isinstance(values, str):
                    values = [values]
                if values:
                    state[qualified] = values[0]
        turns.append(Turn(len(turns) + 1, pending_system, rt["utterance"], dict(state)))
        pending_system = ""
    return tuple(turns)


def parse_sgd(path, tasks: Iterable[str] | None = None) -> tuple:
    """Parse an SGD-layout directory into task specs and single-service dialogues.

    ``path`` holds ``{train,dev,test}/schema.json`` and
    ``{train,dev,test}/dialogues_*.json``. Only services that occur in a
    retained dialogue produce a TaskSpec. ``tasks`` optionally restricts the
    result to the given task ids or service names.
    """
    root = Path(path)
    services = _read_services(root)
    wanted = None if tasks is None else {str(t) for t in tasks}

    dialogues = []
    used = set()
    dropped = 0
    for split in SPLITS:
        for fpath in _dialogue_files(root, split):
            for raw in _load_json(fpath):
                svcs = raw.get("services", [])
                if len(svcs) != 1:
                    dropped += 1
                    continue
                service = svcs[0]
                tid = task_id_for(service)
                if wanted is not None and tid not in wanted and service not in wanted:
                    continue
                if service not in services:
                    raise SchemaViolation(service, f"{fpath} (service missing from schema)")
                valid = {s.qualified for s in services[service]}
                where = f"{fpath}:{raw['dialogue_id']}"
                turns = _build_turns(raw["turns"], service, valid, where)
                if not turns:
                    continue
                dialogues.append(Dialogue(raw["dialogue_id"], tid, turns, split))
                used.add(service)
    if dropped:
        log.warning("dropped %d multi-service dialogues", dropped)

    specs = [TaskSpec(task_id_for(s), services[s]) for s in sorted(used, key=task_id_for)]
    return specs, dialogues


# ------------------------------------------------------- normalized format


def dialogue_to_json(d: Dialogue) -> dict:
    return {
        "dialogue_id": d.dialogue_id,
        "task_id": d.task_id,
        "split": d.split,
        "turns": [
            {"index": t.index, "system": t.system_utterance, "user": t.user_utterance, "state": t.gold_state}
            for t in d.turns
        ],
    }


def dialogue_from_json(obj: dict) -> Dialogue:
    turns = tuple(
        Turn(t["index"], t["system"], t["user"], dict(t["state"])) for t in obj["turns"]
    )
    return Dialogue(obj["dialogue_id"], obj["task_id"], turns, obj["split"])


def task_to_json(task: TaskSpec) -> dict:
    return {
        "task_id": task.task_id,
        "slots": [
            {
                "service_name": s.service_name,
                "service_description": s.service_description,
                "slot_name": s.slot_name,
                "slot_description": s.slot_description,
            }
            for s in task.slots
        ],
    }


def task_from_json(obj: dict) -> TaskSpec:
    return TaskSpec(obj["task_id"], tuple(SlotSchema(**s) for s in obj["slots"]))


def write_corpus(out_dir, tasks: Sequence[TaskSpec], dialogues: Sequence[Dialogue]) -> Path:
    """Write ``corpus.jsonl`` (one dialogue per line) and ``tasks.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_json(d), ensure_ascii=False, sort_keys=True) + "\n")
    (out / "tasks.json").write_text(
        json.dumps([task_to_json(t) for t in tasks], indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return out


def read_corpus(corpus_dir) -> tuple:
    root = Path(corpus_dir)
    tasks = [task_from_json(o) for o in _load_json(root / "tasks.json")]
    by_id = {t.task_id: t for t in tasks}
    dialogues = []
    path = root / "corpus.jsonl"
    offset = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusParseError(path, offset + exc.pos, exc.msg) from None
                d = dialogue_from_json(obj)
                task = by_id.get(d.task_id)
                if task is None:
                    raise ValidationError(f"dialogue {d.dialogue_id} references unknown task {d.task_id}")
                valid = set(task.qualified_names)
                for t in d.turns:
                    for slot in t.gold_state:
                        if slot not in valid:
                            raise SchemaViolation(slot, f"{path}:{d.dialogue_id}")
                dialogues.append(d)
            offset += len(line.encode("utf-8"))
    return tasks, dialogues


# ------------------------------------------------------------ task orders


def load_task_order(source, known: Iterable[str] | None = None) -> TaskOrder:
    """Resolve a builtin order name (``order1``..``order5``) or a file of task ids.

    Files may be a JSON list or whitespace/comma separated ids.
    """
    src = str(source)
    if src in TASK_ORDERS:
        ids = TASK_ORDERS[src]
        name = src
    else:
        path = Path(src)
        if not path.exists():
            raise ValidationError(f"unknown task order {src!r}")
        text = path.read_text(encoding="utf-8").strip()
        if text.startswith("["):
            ids = tuple(str(x) for x in json.loads(text))
        else:
            ids = tuple(x for x in re.split(r"[\s,]+", text) if x)
        name = path.stem
    seen = set()
    dupes = [i for i in ids if i in seen or seen.add(i)]
    if dupes:
        raise ValidationError(f"duplicate task ids in order {name}: {sorted(set(dupes))}")
    known = set(SERVICE_TASK_IDS.values()) if known is None else {str(k) for k in known}
    unknown = [i for i in ids if i not in known]
    if unknown:
        raise ValidationError(f"unknown task ids in order {name}: {unknown}")
    if not ids:
        raise ValidationError(f"task order {name} is empty")
    return TaskOrder(name, tuple(ids))


# ---------------------------------------------------------------- queries


def render_context(turns: Sequence[Turn]) -> str:
    parts = []
    for turn in turns:
        if turn.system_utterance:
            parts.append(f"[SYSTEM]: {turn.system_utterance}")
        parts.append(f"[USER]: {turn.user_utterance}")
    return " ".join(parts)


def iter_slot_queries(dialogue: Dialogue, t: int, task: TaskSpec) -> list:
    """One query per schema slot at turn ``t``; unset slots carry ``NONE``."""
    turn = dialogue.turn(t)
    context = render_context(dialogue.turns[:t])
    return [
        SlotQuery(
            dialogue.dialogue_id,
            dialogue.task_id,
            t,
            context,
            schema,
            turn.gold_state.get(schema.qualified, NONE),
        )
        for schema in task.slots
    ]


def all_queries(dialogues: Iterable[Dialogue], tasks) -> list:
    by_id = tasks if isinstance(tasks, dict) else {t.task_id: t for t in tasks}
    out = []
    for d in dialogues:
        task = by_id[d.task_id]
        for t in range(1, len(d.turns) + 1):
            out.extend(iter_slot_queries(d, t, task))
    return out


# --------------------------------------------------------------- memory


def sample_memory(dialogues: Sequence[Dialogue], M: int, seed: int) -> list:
    """Uniformly sample ``min(M, pool)`` training dialogues without replacement."""
    if M < 0:
        raise ValueError("memory size must be non-negative")
    pool = [d for d in dialogues if d.split == "train"]
    if M >= len(pool):
        return list(pool)
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(pool), size=M, replace=False))
    return [pool[k] for k in picked]
