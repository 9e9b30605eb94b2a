"""Value-level and slot-level perturbations that elicit negative reasonings."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import NONE, Dialogue, SlotQuery, TaskSpec
from .errors import PoolExhausted
from .prompts import TeacherPrompt, Templates, build_teacher_prompt

VALUE_LEVEL = "value_level"
SLOT_LEVEL = "slot_level"


def derive_seed(root_seed: int, *parts) -> int:
    """Stable 63-bit seed for one sample, independent of iteration order."""
    h = hashlib.sha256(repr((int(root_seed),) + tuple(str(p) for p in parts)).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big") >> 1


@dataclass(frozen=True)
class Perturbation:
    kind: str
    original: tuple
    replacement: tuple
    seed_trace: int = 0


@dataclass(frozen=True)
class PerturbationPools:
    values: dict     # qualified slot -> distinct observed values, first-seen order
    pairs: tuple     # distinct observed (qualified slot, value) pairs

    @classmethod
    def from_dialogues(cls, dialogues: Iterable[Dialogue], task: TaskSpec | None = None) -> "PerturbationPools":
        """Collect gold values from the training split of the given dialogues."""
        values: dict = {}
        pairs: dict = {}
        for d in dialogues:
            if d.split != "train" or (task is not None and d.task_id != task.task_id):
                continue
            for turn in d.turns:
                for slot, value in turn.gold_state.items():
                    if value == NONE:
                        continue
                    bucket = values.setdefault(slot, [])
                    if value not in bucket:
                        bucket.append(value)
                    pairs.setdefault((slot, value), None)
        return cls({k: tuple(v) for k, v in values.items()}, tuple(pairs))


def _pair(query) -> tuple:
    if isinstance(query, SlotQuery):
        return query.slot, query.gold
    slot, value = query
    return slot, value


def _value_candidates(original: tuple, values: Sequence[str]) -> list:
    slot, value = original
    if len(set(values)) < 2:
        return []
    folded = value.casefold()
    return [v for v in dict.fromkeys(values) if v.casefold() != folded]


def _slot_candidates(original: tuple, pairs: Sequence[tuple]) -> list:
    return [p for p in dict.fromkeys(pairs) if p[0] != original[0]]


def perturb_value(query, values: dict, rng: np.random.Generator, seed_trace: int = 0) -> Perturbation:
    """Swap the gold value for a different observed value of the same slot."""
    original = _pair(query)
    eligible = _value_candidates(original, values.get(original[0], ()))
    if not eligible:
        raise PoolExhausted(f"no alternative values observed for {original[0]}")
    pick = eligible[int(rng.integers(len(eligible)))]
    return Perturbation(VALUE_LEVEL, original, (original[0], pick), seed_trace)


def perturb_slot(query, pairs: Sequence[tuple], rng: np.random.Generator, seed_trace: int = 0) -> Perturbation:
    """Replace the whole slot-value pair with an observed pair of another slot."""
    original = _pair(query)
    eligible = _slot_candidates(original, pairs)
    if not eligible:
        raise PoolExhausted(f"no observed pairs outside {original[0]}")
    pick = eligible[int(rng.integers(len(eligible)))]
    return Perturbation(SLOT_LEVEL, original, tuple(pick), seed_trace)


def plan_perturbations(query, pools: PerturbationPools, n_value: int = 3, n_slot: int = 3,
                       rng: np.random.Generator | None = None, seed_trace: int = 0) -> list:
    if n_value < 0 or n_slot < 0:
        raise ValueError("perturbation counts must be non-negative")
    total = n_value + n_slot
    if total == 0:
        return []
    rng = rng if rng is not None else np.random.default_rng(seed_trace)
    original = _pair(query)
    v_elig = _value_candidates(original, pools.values.get(original[0], ()))
    s_elig = _slot_candidates(original, pools.pairs)
    if not v_elig and not s_elig:
        raise PoolExhausted(f"no eligible perturbations for {original[0]}")

    out = []
    n_v = min(n_value, len(v_elig))
    for k in rng.choice(len(v_elig), size=n_v, replace=False) if n_v else ():
        out.append(Perturbation(VALUE_LEVEL, original, (original[0], v_elig[k]), seed_trace))
    n_s = min(n_slot + (n_value - n_v), len(s_elig))
    for k in rng.choice(len(s_elig), size=n_s, replace=False) if n_s else ():
        out.append(Perturbation(SLOT_LEVEL, original, tuple(s_elig[k]), seed_trace))
    # Pools too small for distinct draws: repeat, preferring slot-level.
    while len(out) < total:
        if s_elig:
            pick = s_elig[int(rng.integers(len(s_elig)))]
            out.append(Perturbation(SLOT_LEVEL, original, tuple(pick), seed_trace))
        else:
            pick = v_elig[int(rng.integers(len(v_elig)))]
            out.append(Perturbation(VALUE_LEVEL, original, (original[0], pick), seed_trace))
    return out


def make_negative_batch(query: SlotQuery, pools: PerturbationPools, task: TaskSpec,
                        n_value: int = 3, n_slot: int = 3,
                        rng: np.random.Generator | None = None, seed_trace: int = 0,
                        templates: Templates | None = None, resolution: bool = True) -> list:
    """Teacher prompts for the perturbed copies of ``query``."""
    plan = plan_perturbations(query, pools, n_value, n_slot, rng, seed_trace)
    prompts = []
    for idx, p in enumerate(plan):
        slot, value = p.replacement
        prompts.append(
            build_teacher_prompt(
                query.context, task.schema(slot), value,
                resolution=resolution, templates=templates,
                dialogue_id=query.dialogue_id, turn=query.turn,
                perturbation=p.kind, original_slot=query.slot, perturbed_index=idx,
            )
        )
    return prompts
