"""Semantic contrastive reasoning selection.

Each candidate reasoning R is scored against the positive text DC and the
perturbed reasonings PR_1..PR_N::

    score(R) = exp(d(R, DC) / tau) / sum_n exp(d(R, PR_n) / tau)

and the candidate with the lowest score is kept. Scores are evaluated as
``d(R, DC)/tau - logsumexp(d(R, PR_n)/tau)`` so large distances cannot
overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .corpus import SlotQuery
from .embeddings import METRICS, EmbeddingVector, embed
from .errors import DimensionError, NumericalError, SelectionError
from .prompts import Templates, build_teacher_prompt
from .teacher import POSITIVE, ReasoningCandidate

POSITIVE_MODES = ("prompt", "prompt_no_suffix", "dialogue")
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SelectionConfig:
    tau: float = 0.8
    metric: str = "euclidean"
    G: int = 5
    N: int = 6
    positive: str = "prompt"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.G < 1 or self.N < 1:
            raise ValueError("G and N must be >= 1")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.positive not in POSITIVE_MODES:
            raise ValueError(f"unknown positive mode {self.positive!r}")


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: ReasoningCandidate
    d_positive: float
    d_negatives: tuple
    log_score: float
    score: float
    selected: bool = False


def log_score_from_distances(d_positive: float, d_negatives: Sequence[float], tau: float) -> float:
    d_neg = np.asarray(d_negatives, dtype=np.float64)
    if d_neg.size < 1:
        raise SelectionError("at least one negative distance is required")
    if not (np.isfinite(d_positive) and np.all(np.isfinite(d_neg))):
        raise NumericalError("non-finite distance")
    return float(d_positive / tau - logsumexp(d_neg / tau))


def score_direct(d_positive: float, d_negatives: Sequence[float], tau: float) -> float:
    """Unstabilised ratio of exponentials; overflows for large distances."""
    return float(np.exp(d_positive / tau) / np.sum(np.exp(np.asarray(d_negatives) / tau)))


def _distances(candidate, positive, negatives, metric: str) -> tuple:
    dist = METRICS[metric]
    vecs = [candidate, positive, *negatives]
    dims = {np.asarray(v.values if isinstance(v, EmbeddingVector) else v).shape for v in vecs}
    if len(dims) != 1:
        raise DimensionError(f"vectors have mismatched dimensions {sorted(dims)}")
    return dist(candidate, positive), [dist(candidate, n) for n in negatives]


def log_score(candidate, positive, negatives, config: SelectionConfig = SelectionConfig()) -> float:
    d_pos, d_neg = _distances(candidate, positive, negatives, config.metric)
    return log_score_from_distances(d_pos, d_neg, config.tau)


def score(candidate, positive, negatives, config: SelectionConfig = SelectionConfig()) -> float:
    return float(np.exp(log_score(candidate, positive, negatives, config)))


def _as_candidate(c, k: int) -> ReasoningCandidate:
    if isinstance(c, ReasoningCandidate):
        return c
    return ReasoningCandidate(str(c), POSITIVE, k, "")


def select(candidates: Sequence[tuple], positive, negatives: Sequence,
           config: SelectionConfig = SelectionConfig()) -> tuple:
    """Pick the minimum-score candidate.

    ``candidates`` is a sequence of ``(candidate, vector)`` pairs where the
    candidate is a :class:`ReasoningCandidate` (or plain text, indexed by
    position). Returns ``(position, scored)``; ties go to the lowest
    ``candidate_index``.
    """
    if not candidates:
        raise SelectionError("no candidates to select from")
    if not negatives:
        raise SelectionError("no negative samples")
    rows = []
    for k, (cand, vec) in enumerate(candidates):
        cand = _as_candidate(cand, k)
        d_pos, d_neg = _distances(vec, positive, negatives, config.metric)
        ls = log_score_from_distances(d_pos, d_neg, config.tau)
        rows.append((cand, d_pos, tuple(d_neg), ls))
    # Scores equal up to rounding count as ties, so the tie rule does not depend on tau.
    low = min(r[3] for r in rows)
    tol = TIE_RTOL * max(1.0, abs(low))
    best = min((k for k in range(len(rows)) if rows[k][3] - low <= tol),
               key=lambda k: rows[k][0].candidate_index)
    scored = [
        ScoredCandidate(c, dp, dn, ls, float(np.exp(ls)), k == best)
        for k, (c, dp, dn, ls) in enumerate(rows)
    ]
    return best, scored


@dataclass
class SelectedReasoning:
    key: tuple
    text: str
    candidate_index: int
    log_score: float
    score: float
    audit: list = field(default_factory=list)
    n_negatives: int = 0
    shortfall: int = 0


def positive_text(query: SlotQuery, mode: str = "prompt", templates: Templates | None = None) -> str:
    if mode == "dialogue":
        return query.context
    prompt = build_teacher_prompt(query.context, query.schema, query.gold,
                                  resolution=(mode == "prompt"), templates=templates)
    return prompt.input


def select_for_query(query: SlotQuery, candidates: Sequence, perturbed: Sequence,
                     positive: str, provider, config: SelectionConfig = SelectionConfig(),
                     cache=None) -> SelectedReasoning:
    """Embed the positive text, candidates and perturbed reasonings, then select."""
    cands = [_as_candidate(c, k) for k, c in enumerate(candidates)]
    negs = [p.text if isinstance(p, ReasoningCandidate) else str(p) for p in perturbed]
    if not cands:
        raise SelectionError(f"no candidates for {query.key}")
    if not negs:
        raise SelectionError(f"no perturbed reasonings survived for {query.key}")
    vectors = embed([positive] + [c.text for c in cands] + negs, provider, cache)
    dc = vectors[0]
    cand_vecs = vectors[1:1 + len(cands)]
    neg_vecs = vectors[1 + len(cands):]
    best, scored = select(list(zip(cands, cand_vecs)), dc, neg_vecs, config)
    chosen = scored[best]
    return SelectedReasoning(
        query.key, chosen.candidate.text, chosen.candidate.candidate_index,
        chosen.log_score, chosen.score, scored,
        n_negatives=len(negs), shortfall=max(0, config.N - len(negs)),
    )


def audit_rows(sel: SelectedReasoning) -> list:
    dialogue_id, turn, slot = sel.key
    return [
        {
            "dialogue_id": dialogue_id,
            "turn": turn,
            "slot": slot,
            "candidate_index": s.candidate.candidate_index,
            "d_positive": s.d_positive,
            "d_negatives": list(s.d_negatives),
            "log_score": s.log_score,
            "score": s.score,
            "selected": s.selected,
        }
        for s in sel.audit
    ]

