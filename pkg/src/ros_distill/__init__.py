"""Reasoning-distillation data pipeline and continual DST evaluation."""

from .corpus import (
    NONE,
    TASK_ORDERS,
    Dialogue,
    SlotSchema,
    TaskOrder,
    TaskSpec,
    Turn,
    iter_slot_queries,
    load_task_order,
    parse_sgd,
    read_corpus,
    sample_memory,
    write_corpus,
)
from .embeddings import EmbeddingVector, cosine_distance, embed, euclidean
from .metrics import AccuracyMatrix, avg_jga, bwt, extract_answer, forgetting_curve, fwt, jga, normalize_value
from .prompts import build_student_prompt, build_teacher_prompt, needs_teacher, short_dialogue_reasoning
from .selector import SelectionConfig, log_score, score, select, select_for_query

__version__ = "0.1.0"
