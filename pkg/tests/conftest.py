import json
from pathlib import Path

import pytest

from ros_distill.corpus import SERVICE_TASK_IDS, TASK_SLOT_COUNTS, Dialogue, SlotSchema, TaskSpec, Turn

THERAPY_SLOTS = [
    ("city", "City where the therapist is located"),
    ("type", "Type of therapist"),
    ("therapist_name", "Name of the therapist"),
    ("appointment_date", "Date of the appointment"),
    ("appointment_time", "Time of the appointment"),
]
CAR_SLOTS = [
    ("pickup_city", "City where the car is picked up"),
    ("pickup_date", "Date of rental car pickup"),
    ("pickup_time", "Time of rental car pickup"),
    ("dropoff_date", "Date of rental car drop-off"),
]


def service_schema(name, description, slots):
    return {
        "service_name": name,
        "description": description,
        "slots": [{"name": n, "description": d} for n, d in slots],
    }


def user_turn(utterance, service=None, slot_values=None):
    frames = []
    if service is not None:
        frames.append({"service": service, "state": {"slot_values": slot_values or {}}})
    return {"speaker": "USER", "utterance": utterance, "frames": frames}


def system_turn(utterance):
    return {"speaker": "SYSTEM", "utterance": utterance, "frames": []}


def write_sgd(root: Path, schema: list, splits: dict) -> Path:
    """``splits`` maps split name -> list of raw SGD dialogues."""
    for split, dialogues in splits.items():
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        (d / "schema.json").write_text(json.dumps(schema))
        (d / "dialogues_001.json").write_text(json.dumps(dialogues))
    return root


def long_dialogue(dialogue_id, service, n_turns, updates):
    """Alternating USER/SYSTEM turns; ``updates`` maps user-turn index -> slot_values delta.

    The emitted frame state is cumulative, as in SGD.
    """
    turns = []
    state = {}
    for t in range(1, n_turns + 1):
        if t > 1:
            turns.append(system_turn(f"System line {t} for {dialogue_id}."))
        state = {**state, **{k: [v] for k, v in updates.get(t, {}).items()}}
        words = ", ".join(f"{k} {v}" for k, v in sorted(updates.get(t, {}).items()))
        turns.append(user_turn(f"User line {t}: {words or 'nothing new'}.", service, dict(state)))
    turns.append(system_turn("Anything else?"))
    return {"dialogue_id": dialogue_id, "services": [service], "turns": turns}


CAR_UPDATES_A = {
    1: {"pickup_city": "Fresno"},
    3: {"pickup_date": "March 3rd"},
    5: {"pickup_time": "17:15"},
    11: {"pickup_time": "1:30 pm"},
    12: {"dropoff_date": "March 9th"},
}
CAR_UPDATES_B = {
    2: {"pickup_city": "Sacramento"},
    4: {"pickup_date": "next Monday", "pickup_time": "10 am"},
    9: {"pickup_city": "San Diego"},
    12: {"dropoff_date": "March 12th"},
}
CAR_UPDATES_C = {
    1: {"pickup_city": "Portland"},
    6: {"pickup_date": "March 5th"},
    8: {"pickup_time": "9:30 am"},
    11: {"pickup_time": "noon"},
}


@pytest.fixture
def car_sgd(tmp_path):
    """Three 12-13 turn rentalcars_3 dialogues: two train, one test, plus a multi-service one."""
    schema = [service_schema("rentalcars_3", "Car rental service", CAR_SLOTS)]
    multi = long_dialogue("9_00000", "rentalcars_3", 2, {})
    multi["services"] = ["rentalcars_3", "hotels_1"]
    splits = {
        "train": [
            long_dialogue("1_00000", "rentalcars_3", 12, CAR_UPDATES_A),
            long_dialogue("1_00001", "rentalcars_3", 13, CAR_UPDATES_B),
            multi,
        ],
        "test": [long_dialogue("2_00000", "rentalcars_3", 12, CAR_UPDATES_C)],
    }
    return write_sgd(tmp_path / "sgd", schema, splits)


@pytest.fixture
def car_task():
    return TaskSpec("42", tuple(SlotSchema("rentalcars_3", "Car rental service", n, d) for n, d in CAR_SLOTS))


@pytest.fixture
def therapy_task():
    return TaskSpec("30", tuple(
        SlotSchema("services_4", "Discover the right therapist for you and make reservations easily", n, d)
        for n, d in THERAPY_SLOTS
    ))


def make_dialogue(dialogue_id, task_id, states, split="test"):
    turns = tuple(Turn(k, f"sys {k}" if k > 1 else "", f"user {k}", dict(s))
                  for k, s in enumerate(states, start=1))
    return Dialogue(dialogue_id, task_id, turns, split)


@pytest.fixture
def fifteen_service_sgd(tmp_path):
    schema = []
    dialogues = []
    for service, tid in SERVICE_TASK_IDS.items():
        slots = [(f"slot_{k}", f"Slot number {k}") for k in range(TASK_SLOT_COUNTS[tid])]
        schema.append(service_schema(service, f"The {service} service", slots))
        dialogues.append({
            "dialogue_id": f"{tid}_0",
            "services": [service],
            "turns": [user_turn("hello", service, {"slot_0": ["x"]})],
        })
    return write_sgd(tmp_path / "sgd15", schema, {"train": dialogues})


def fake_vector(text, dim=16):
    """Deterministic pseudo-embedding keyed on the text's hash."""
    import hashlib
    import numpy as np
    seed = int(hashlib.sha256(text.encode("utf-8")).hexdigest()[:16], 16)
    return np.random.default_rng(seed).normal(size=dim).tolist()


def embed_candidates(distill_dir, path):
    """Write an embeddings file covering every text in ``candidates.jsonl``."""
    from ros_distill.embeddings import write_embeddings_file
    texts = []
    with open(Path(distill_dir) / "candidates.jsonl", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            texts += [row["positive_text"], *row["candidates"], *row["perturbed"]]
    return write_embeddings_file(path, texts, [fake_vector(t) for t in texts])


def gold_predictions(dialogues, tasks, wrong=None):
    """Rationalized-format predictions equal to gold, except keys in ``wrong``."""
    from ros_distill.corpus import NONE
    from ros_distill.metrics import PredictionRecord
    wrong = wrong or {}
    by_id = {t.task_id: t for t in tasks}
    out = []
    for d in dialogues:
        for turn in d.turns:
            for slot in by_id[d.task_id].qualified_names:
                key = (d.dialogue_id, turn.index, slot)
                v = wrong.get(key, turn.gold_state.get(slot, NONE))
                out.append(PredictionRecord(*key, f"because\n[VALUE] {v}"))
    return out


def run_end_to_end(root, sgd_dir):
    """ingest -> distill (generate, embed, select) -> emit -> evaluate -> analyze via the CLI."""
    from ros_distill.cli import main
    from ros_distill.corpus import read_corpus
    from ros_distill.metrics import write_predictions

    root = Path(root)
    corpus, dist, cache = root / "corpus", root / "distill", root / "cache"
    codes = [main(["ingest", "--sgd-dir", str(sgd_dir), "--out", str(corpus)])]
    base = ["distill", "--corpus", str(corpus), "--out", str(dist), "--cache-dir", str(cache)]
    codes.append(main(base + ["--stop-after", "generate"]))
    emb = embed_candidates(dist, root / "embeddings.jsonl")
    codes.append(main(base + ["--embeddings-file", str(emb)]))
    records = root / "records.jsonl"
    codes.append(main(["emit", "--corpus", str(corpus), "--mode", "rationalized",
                       "--selections", str(dist), "--out", str(records)]))
    tasks, dialogues = read_corpus(corpus)
    test = [d for d in dialogues if d.split == "test"]
    preds_dir = root / "preds"
    preds_dir.mkdir()
    wrong = {(test[0].dialogue_id, 12, "<rentalcars_3-pickup_time>"): "9:30 am"}
    write_predictions(preds_dir / "preds_after-1_on-1.jsonl", gold_predictions(test, tasks, wrong))
    (root / "order.txt").write_text("42\n")
    report = root / "report.json"
    codes.append(main(["evaluate", "--corpus", str(corpus), "--order", str(root / "order.txt"),
                       "--preds-dir", str(preds_dir), "--out", str(report)]))
    analysis = root / "analysis.json"
    codes.append(main(["analyze", "--corpus", str(corpus), "--preds",
                       str(preds_dir / "preds_after-1_on-1.jsonl"), "--out", str(analysis)]))
    return {"codes": codes, "corpus": corpus, "distill": dist, "records": records,
            "report": report, "analysis": analysis, "cache": cache}


# ------------------------------------------------- acceptance summary lines

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    name = marker.args[0]
    ok = call.excinfo is None
    _CRITERIA[name] = _CRITERIA.get(name, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in _CRITERIA.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
