# %% [markdown]
# # Continual-learning metrics and value-selection errors
#
# `a[j, i]` is the joint goal accuracy on task i after training through the
# j-th task. Avg. JGA reads the last row, FWT the superdiagonal, BWT compares
# the last row against the diagonal.

# %%
import numpy as np

from ros_distill import metrics

a = np.array([
    [0.50, 0.20, 0.00],
    [0.45, 0.60, 0.40],
    [0.40, 0.50, 0.60],
])
m = metrics.AccuracyMatrix.from_array(a)
print(metrics.format_table(m))
print(metrics.forgetting_curve(m, 1))

# %% [markdown]
# Reports over several task orders are averaged with a standard error.

# %%
runs = [metrics.report(metrics.AccuracyMatrix.from_array(np.clip(a + d, 0, 1))) for d in (0.0, 0.02, -0.01)]
print(metrics.aggregate_reports(runs))

# %% [markdown]
# ## Which wrong value did the model pick?
#
# In a long dialogue the pickup time changes twice. A wrong prediction is
# `recency` when it is the value just superseded by the current turn, `stale`
# when it is an older one, otherwise `other`.

# %%
from ros_distill.corpus import Dialogue, Turn
from ros_distill.quandary import build_trajectory, classify_error

slot = "<rentalcars_3-pickup_time>"
states = [{}] * 4 + [{slot: "17:15"}] * 6 + [{slot: "1:30 pm"}] * 2 + [{slot: "noon"}] * 2
d = Dialogue("x", "42", tuple(Turn(t, "", f"u{t}", s) for t, s in enumerate(states, start=1)))
traj = build_trajectory(d, slot)
print(traj.events)
for pred, gold, turn in [("1:30 pm", "noon", 13), ("17:15", "noon", 14), ("9 am", "noon", 14)]:
    print(pred, "->", classify_error(pred, gold, traj, turn).kind)
