import numpy as np
import pytest

from ros_distill.corpus import iter_slot_queries
from ros_distill.errors import PoolExhausted
from ros_distill.perturb import (
    SLOT_LEVEL,
    VALUE_LEVEL,
    PerturbationPools,
    derive_seed,
    make_negative_batch,
    perturb_slot,
    perturb_value,
    plan_perturbations,
)

from conftest import make_dialogue

DATE = "<services-appointment_date>"


def test_value_replacement_drawn_from_pool_minus_original():
    pool = {DATE: ("March 11th", "April 2nd", "March 5th")}
    seen = set()
    for seed in range(200):
        p = perturb_value((DATE, "March 11th"), pool, np.random.default_rng(seed))
        assert p.kind == VALUE_LEVEL and p.replacement[0] == DATE
        seen.add(p.replacement[1])
    assert seen == {"April 2nd", "March 5th"}


def test_value_exclusion_is_case_insensitive():
    pool = {DATE: ("march 11TH", "April 2nd")}
    for seed in range(50):
        assert perturb_value((DATE, "March 11th"), pool, np.random.default_rng(seed)).replacement[1] == "April 2nd"


def test_value_pool_of_one_exhausted():
    with pytest.raises(PoolExhausted):
        perturb_value((DATE, "x"), {DATE: ("x",)}, np.random.default_rng(0))


def test_value_deterministic():
    pool = {DATE: tuple(f"v{k}" for k in range(20))}
    a = perturb_value((DATE, "v0"), pool, np.random.default_rng(3))
    b = perturb_value((DATE, "v0"), pool, np.random.default_rng(3))
    assert a == b


def test_slot_level_pair_from_task_pool():
    pairs = (("<rentalcars-pickup_time>", "17:15"), ("<rentalcars-pickup_city>", "Fresno"))
    p = perturb_slot(("<rentalcars-pickup_time>", "1:30 pm"), pairs, np.random.default_rng(0))
    assert p.kind == SLOT_LEVEL
    assert p.replacement == ("<rentalcars-pickup_city>", "Fresno")


def test_slot_level_single_slot_exhausted():
    pairs = (("<a-x>", "1"), ("<a-x>", "2"))
    with pytest.raises(PoolExhausted):
        perturb_slot(("<a-x>", "1"), pairs, np.random.default_rng(0))


def test_slot_level_deterministic():
    pairs = tuple((f"<a-s{k}>", str(k)) for k in range(10))
    assert perturb_slot(("<a-s0>", "0"), pairs, np.random.default_rng(9)) == \
        perturb_slot(("<a-s0>", "0"), pairs, np.random.default_rng(9))


def _pools(n_values_for_date, n_other_pairs):
    values = {DATE: tuple(f"d{k}" for k in range(n_values_for_date))}
    pairs = tuple((DATE, v) for v in values[DATE]) + tuple((f"<services-s{k}>", f"o{k}") for k in range(n_other_pairs))
    return PerturbationPools(values, pairs)


def test_default_batch_three_plus_three():
    plan = plan_perturbations((DATE, "d0"), _pools(10, 10), rng=np.random.default_rng(0))
    assert [p.kind for p in plan] == [VALUE_LEVEL] * 3 + [SLOT_LEVEL] * 3
    assert len({p.replacement for p in plan}) == 6


def test_zero_counts_empty():
    assert plan_perturbations((DATE, "d0"), _pools(5, 5), 0, 0) == []


def test_value_shortfall_filled_by_slot_level():
    # Pool {d0, d1} with original d0 leaves one eligible value; 3 - 1 = 2 extra slot-level.
    plan = plan_perturbations((DATE, "d0"), _pools(2, 10), 3, 3, np.random.default_rng(1))
    kinds = [p.kind for p in plan]
    assert kinds.count(VALUE_LEVEL) == 1 and kinds.count(SLOT_LEVEL) == 5
    assert len({p.replacement for p in plan}) == 6


def test_nothing_eligible_raises():
    with pytest.raises(PoolExhausted):
        plan_perturbations((DATE, "d0"), PerturbationPools({DATE: ("d0",)}, ((DATE, "d0"),)), 3, 3)


def test_small_pools_still_fill_batch():
    plan = plan_perturbations((DATE, "d0"), _pools(2, 1), 3, 3, np.random.default_rng(0))
    assert len(plan) == 6
    assert all(p.replacement != p.original for p in plan)


def test_pools_from_training_split_only(car_task):
    train = make_dialogue("a", "42", [{"<rentalcars_3-pickup_city>": "Fresno"}], split="train")
    test = make_dialogue("b", "42", [{"<rentalcars_3-pickup_city>": "Leaky"}], split="test")
    pools = PerturbationPools.from_dialogues([train, test], car_task)
    assert pools.values == {"<rentalcars_3-pickup_city>": ("Fresno",)}
    assert pools.pairs == (("<rentalcars_3-pickup_city>", "Fresno"),)


def test_negative_batch_prompts(car_task):
    states = [{"<rentalcars_3-pickup_city>": c, "<rentalcars_3-pickup_time>": t}
              for c, t in [("Fresno", "17:15"), ("Davis", "1:30 pm"), ("Reno", "noon")]]
    d = make_dialogue("a", "42", states, split="train")
    pools = PerturbationPools.from_dialogues([d], car_task)
    q = next(q for q in iter_slot_queries(d, 3, car_task) if q.slot == "<rentalcars_3-pickup_time>")
    prompts = make_negative_batch(q, pools, car_task, rng=np.random.default_rng(0))
    assert len(prompts) == 6
    assert all(q.context in p.input for p in prompts)
    assert [p.meta["perturbation"] for p in prompts][:2] == [VALUE_LEVEL, VALUE_LEVEL]


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "d", 11, "<a-b>") == derive_seed(0, "d", 11, "<a-b>")
    assert derive_seed(0, "d", 11, "<a-b>") != derive_seed(0, "d", 12, "<a-b>")
    assert derive_seed(0, "d", 11, "<a-b>") != derive_seed(1, "d", 11, "<a-b>")
