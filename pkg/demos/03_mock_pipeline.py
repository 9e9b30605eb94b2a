# %% [markdown]
# # Whole pipeline on a synthetic corpus, offline
#
# Builds a tiny SGD-format directory, then runs ingest, distill (mock teacher,
# hashing embeddings), and emits rationalized instruction-tuning records. The
# same steps are available through the `ros` command.

# %%
import json
import tempfile
from pathlib import Path

from ros_distill import corpus, pipeline, writer

root = Path(tempfile.mkdtemp())
schema = [{
    "service_name": "rentalcars_3",
    "description": "Car rental service",
    "slots": [
        {"name": "pickup_city", "description": "City where the car is picked up"},
        {"name": "pickup_time", "description": "Time of rental car pickup"},
    ],
}]


def dialogue(did, cities, times):
    turns, state = [], {}
    for t in range(1, 13):
        if t > 1:
            turns.append({"speaker": "SYSTEM", "utterance": f"Noted (turn {t}).", "frames": []})
        if t in cities:
            state["pickup_city"] = [cities[t]]
        if t in times:
            state["pickup_time"] = [times[t]]
        turns.append({"speaker": "USER", "utterance": f"Turn {t}: {cities.get(t, '')} {times.get(t, '')}",
                      "frames": [{"service": "rentalcars_3", "state": {"slot_values": dict(state)}}]})
    return {"dialogue_id": did, "services": ["rentalcars_3"], "turns": turns}


train = [
    dialogue("a", {1: "Fresno"}, {4: "17:15", 11: "1:30 pm"}),
    dialogue("b", {2: "Davis", 9: "Reno"}, {5: "noon"}),
]
(root / "sgd" / "train").mkdir(parents=True)
(root / "sgd" / "train" / "schema.json").write_text(json.dumps(schema))
(root / "sgd" / "train" / "dialogues_001.json").write_text(json.dumps(train))

tasks, dialogues = corpus.parse_sgd(root / "sgd")
print([(t.task_id, t.service_name, t.J) for t in tasks], len(dialogues))

# %% [markdown]
# Only turns above 10 get teacher reasonings: 2 dialogues x 2 turns x 2 slots.

# %%
cfg = pipeline.RunConfig(embed_provider="hashing")
manifest = pipeline.run_distill(dialogues, tasks, cfg, root / "distill")
print({k: manifest[k] for k in ("queries", "selected", "failures")})

first = json.loads((root / "distill" / "selections.jsonl").read_text().splitlines()[0])
print(first["slot"], first["turn"], first["text"])

# %%
selections = pipeline.read_selections(root / "distill" / "selections.jsonl")
summary = writer.emit_records(dialogues, tasks, selections, writer.RATIONALIZED, root / "records.jsonl")
print(summary)
late = [r for r in writer.read_records(root / "records.jsonl") if r.meta["turn"] == 11]
print(late[0].output)
