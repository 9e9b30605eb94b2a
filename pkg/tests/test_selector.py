import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ros_distill.corpus import SlotSchema, SlotQuery
from ros_distill.embeddings import HashingEmbeddingProvider
from ros_distill.errors import DimensionError, SelectionError
from ros_distill.selector import (
    SelectionConfig,
    audit_rows,
    log_score,
    log_score_from_distances,
    positive_text,
    score,
    score_direct,
    select,
    select_for_query,
)
from ros_distill.teacher import ReasoningCandidate


def oracle_score(r, dc, prs, tau):
    """Score computed with plain math, element by element."""
    num = math.exp(math.dist(r, dc) / tau)
    den = sum(math.exp(math.dist(r, p) / tau) for p in prs)
    return num / den


def test_single_negative_value():
    # d_pos = 1, d_neg = 2, tau = 0.8 -> exp(-1.25)
    expected = oracle_score((0, 0), (1, 0), [(2, 0)], 0.8)
    assert expected == pytest.approx(0.28650479686019015, rel=1e-12)
    assert score((0, 0), (1, 0), [(2, 0)]) == pytest.approx(expected, rel=1e-12)


def test_equidistant_score_is_one():
    assert score((0, 0), (1, 0), [(0, 1)]) == pytest.approx(1.0, rel=1e-12)


def test_two_negatives_worked_example():
    dc, r, prs = (0, 0), (1, 0), [(0, 2), (3, 0)]
    expected = math.exp(1 / 0.8) / (math.exp(math.sqrt(5) / 0.8) + math.exp(2 / 0.8))
    assert oracle_score(r, dc, prs, 0.8) == pytest.approx(expected, rel=1e-12)
    assert score(r, dc, prs) == pytest.approx(expected, rel=1e-12)


def test_singleton_always_selected():
    pos, scored = select([("only", (5, 5))], (0, 0), [(1, 1)])
    assert pos == 0 and scored[0].selected


def test_dominating_candidate_wins():
    dc, prs = (0, 0), [(10, 0), (0, 10)]
    cands = [("far", (9, 1)), ("close", (0.1, 0)), ("mid", (3, 3))]
    pos, _ = select(cands, dc, prs)
    assert pos == 1


def test_identical_texts_select_first():
    cands = [(ReasoningCandidate("same", "positive", k, ""), (1.0, 1.0)) for k in range(5)]
    pos, scored = select(cands, (0, 0), [(2, 2)])
    assert pos == 0 and sum(s.selected for s in scored) == 1


def test_tie_goes_to_lowest_candidate_index_not_position():
    cands = [(ReasoningCandidate("b", "positive", 3, ""), (1.0, 0.0)),
             (ReasoningCandidate("a", "positive", 1, ""), (0.0, 1.0))]
    pos, _ = select(cands, (0, 0), [(5, 5)])
    assert cands[pos][0].candidate_index == 1


def test_empty_inputs_rejected():
    with pytest.raises(SelectionError):
        select([], (0, 0), [(1, 1)])
    with pytest.raises(SelectionError):
        select([("a", (0, 0))], (0, 0), [])
    with pytest.raises(DimensionError):
        select([("a", (0, 0, 0))], (0, 0), [(1, 1)])


def test_log_space_survives_large_distances():
    ls = log_score_from_distances(5000.0, [4999.0, 4000.0], 0.8)
    # (5000 - 4999) / 0.8; the 4000 term is exp(-1250) relative and vanishes.
    assert ls == pytest.approx(1.25, rel=1e-12)
    with np.errstate(over="ignore", invalid="ignore"):
        assert not math.isfinite(score_direct(5000.0, [4999.0], 0.8))


def test_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(tau=0)
    with pytest.raises(ValueError):
        SelectionConfig(metric="manhattan")


def test_defaults():
    c = SelectionConfig()
    assert (c.tau, c.metric, c.G, c.N) == (0.8, "euclidean", 5, 6)


dist = st.floats(0, 10, allow_nan=False)


@given(dist, st.lists(dist, min_size=1, max_size=6), st.floats(0.1, 10))
def test_log_and_direct_routes_agree(d_pos, d_neg, tau):
    assert math.exp(log_score_from_distances(d_pos, d_neg, tau)) == pytest.approx(
        score_direct(d_pos, d_neg, tau), rel=1e-9)


@given(dist, st.floats(0.01, 5), st.lists(dist, min_size=1, max_size=6), st.floats(0.1, 10))
def test_monotone_in_positive_distance(d_pos, delta, d_neg, tau):
    assert log_score_from_distances(d_pos + delta, d_neg, tau) > log_score_from_distances(d_pos, d_neg, tau)


@given(dist, st.lists(dist, min_size=1, max_size=6), st.integers(0, 5), st.floats(0.01, 5), st.floats(0.1, 10))
def test_monotone_in_negative_distance(d_pos, d_neg, which, delta, tau):
    k = which % len(d_neg)
    bigger = list(d_neg)
    bigger[k] += delta
    new, old = log_score_from_distances(d_pos, bigger, tau), log_score_from_distances(d_pos, d_neg, tau)
    assert new <= old
    # Strict unless the bumped term is swamped below double precision by a larger one.
    if math.exp((d_neg[k] - max(bigger)) / tau) > 1e-12:
        assert new < old


vecs = st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=6)


@settings(max_examples=50)
@given(vecs, st.tuples(st.floats(-5, 5), st.floats(-5, 5)), vecs, st.randoms(use_true_random=False))
def test_permutation_equivariance(cand_vecs, dc, negs, rnd):
    cands = [(ReasoningCandidate(f"r{k}", "positive", k, ""), v) for k, v in enumerate(cand_vecs)]
    pos, _ = select(cands, dc, negs)
    shuffled = list(cands)
    rnd.shuffle(shuffled)
    neg_shuf = list(negs)
    rnd.shuffle(neg_shuf)
    pos2, _ = select(shuffled, dc, neg_shuf)
    assert shuffled[pos2][0].candidate_index == cands[pos][0].candidate_index


@settings(max_examples=50)
@given(vecs, st.tuples(st.floats(-5, 5), st.floats(-5, 5)), st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
def test_single_negative_argmin_tau_invariant(cand_vecs, dc, neg):
    cands = [(f"r{k}", v) for k, v in enumerate(cand_vecs)]
    picks = {select(cands, dc, [neg], SelectionConfig(tau=t))[0] for t in (0.1, 0.8, 10.0)}
    assert len(picks) == 1


SCHEMA = SlotSchema("rentalcars_3", "Car rental service", "pickup_time", "Time of rental car pickup")
QUERY = SlotQuery("d1", "42", 11, "[USER]: pick up at 1:30 pm instead", SCHEMA, "1:30 pm")


def test_select_for_query_audit():
    cands = [ReasoningCandidate(f"the user changed the pickup time to 1:30 pm ({k})", "positive", k, "")
             for k in range(5)]
    perturbed = [f"reasoning about value {k}" for k in range(6)]
    sel = select_for_query(QUERY, cands, perturbed, positive_text(QUERY), HashingEmbeddingProvider())
    rows = audit_rows(sel)
    assert len(rows) == 5 and sum(r["selected"] for r in rows) == 1
    assert all(len(r["d_negatives"]) == 6 for r in rows)
    assert sel.n_negatives == 6 and sel.shortfall == 0
    chosen = next(r for r in rows if r["selected"])
    assert chosen["log_score"] == min(r["log_score"] for r in rows)
    assert sel.text == cands[chosen["candidate_index"]].text


def test_select_for_query_shortfall_and_zero():
    cands = ["a", "b"]
    sel = select_for_query(QUERY, cands, ["x", "y", "z", "w"], "pos", HashingEmbeddingProvider())
    assert sel.n_negatives == 4 and sel.shortfall == 2
    with pytest.raises(SelectionError):
        select_for_query(QUERY, cands, [], "pos", HashingEmbeddingProvider())


def test_positive_text_modes():
    assert positive_text(QUERY, "dialogue") == QUERY.context
    full = positive_text(QUERY, "prompt")
    short = positive_text(QUERY, "prompt_no_suffix")
    assert full.startswith(short) and len(full) > len(short)
    assert "`1:30 pm'" in full


def test_vector_score_matches_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        r, dc = rng.normal(size=3), rng.normal(size=3)
        prs = rng.normal(size=(4, 3))
        tau = float(rng.uniform(0.1, 5))
        assert score(r, dc, list(prs), SelectionConfig(tau=tau)) == pytest.approx(
            oracle_score(r, dc, prs, tau), rel=1e-9)
        assert log_score(r, dc, list(prs), SelectionConfig(tau=tau)) == pytest.approx(
            math.log(oracle_score(r, dc, prs, tau)), abs=1e-9)


def test_rounding_level_tie_goes_to_lowest_index():
    # Both score -1/tau exactly; floating point must not break the tie differently per tau.
    cands = [("far", (3.0, 0.0)), ("near", (1.0, 0.0))]
    for tau in (0.1, 0.8, 10.0):
        assert select(cands, (1.0, 0.0), [(0.0, 0.0)], SelectionConfig(tau=tau))[0] == 0
