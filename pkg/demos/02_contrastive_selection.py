# %% [markdown]
# # Contrastive selection of teacher reasonings
#
# For each query the teacher writes G candidate reasonings from the true
# prompt, plus one reasoning for each of N perturbed prompts (a wrong value for
# the same slot, or a different slot/value pair). A candidate should sit close
# to the dialogue-centric prompt and far from the perturbed reasonings:
#
#     log_score = d(R, DC)/tau - logsumexp_n d(R, PR_n)/tau
#
# The lowest score wins.

# %%
import numpy as np

from ros_distill import selector

dc = np.array([0.0, 0.0])
perturbed = [np.array([0.0, 2.0]), np.array([3.0, 0.0])]
candidates = [
    ("hugs the anchor", np.array([0.2, 0.1])),
    ("drifts to a wrong value", np.array([2.5, 0.2])),
    ("in between", np.array([1.0, 0.0])),
]
best, scored = selector.select(candidates, dc, perturbed, selector.SelectionConfig(tau=0.8))
for s in scored:
    mark = "*" if s.selected else " "
    print(f"{mark} {s.candidate.text:25s} d+={s.d_positive:.3f} score={s.score:.4f}")

# %% [markdown]
# Scores are computed in log space, so distances in the thousands do not
# overflow, while the direct ratio of exponentials does.

# %%
print(selector.log_score_from_distances(5000.0, [4999.0, 4000.0], 0.8))
with np.errstate(over="ignore", invalid="ignore"):
    print(selector.score_direct(5000.0, [4999.0, 4000.0], 0.8))

# %% [markdown]
# ## With text and an embedding provider
#
# `HashingEmbeddingProvider` is a bag-of-words stand-in that needs no model;
# swap in the HTTP or file-backed provider for real sentence embeddings.

# %%
from ros_distill.corpus import SlotQuery, SlotSchema
from ros_distill.embeddings import HashingEmbeddingProvider

schema = SlotSchema("rentalcars_3", "Car rental service", "pickup_time", "Time of rental car pickup")
query = SlotQuery("demo", "42", 11, "[USER]: 17:15 please. [SYSTEM]: 17:15? [USER]: No, 1:30 pm.",
                  schema, "1:30 pm")
cands = [
    "The user corrected the pickup time from 17:15 to 1:30 pm, so 1:30 pm is the value.",
    "A car rental needs a pickup time.",
    "The pickup time is 17:15 as first requested.",
]
negs = [
    "The pickup time is 17:15 because the user asked for it first.",
    "The pickup city is Fresno since it was mentioned.",
]
sel = selector.select_for_query(query, cands, negs, selector.positive_text(query),
                                HashingEmbeddingProvider())
print(sel.text)
for row in selector.audit_rows(sel):
    print(row["candidate_index"], round(row["log_score"], 3), row["selected"])
