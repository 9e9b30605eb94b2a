# %% [markdown]
# # Rendering teacher and student prompts
#
# The teacher is asked to explain why a slot holds its gold value. The student
# sees the dialogue, a description of the slot, and must produce the value,
# optionally preceded by a reasoning and the `[VALUE]` marker.

# %%
from ros_distill import corpus, prompts

schema = corpus.SlotSchema(
    "rentalcars_3", "Car rental service",
    "pickup_time", "Time of rental car pickup",
)
turns = (
    corpus.Turn(1, "", "I need a car in Fresno, pick up at 17:15."),
    corpus.Turn(2, "Sure, a compact car at 17:15?", "Actually make that 1:30 pm."),
)
context = corpus.render_context(turns)
print(context)

# %% [markdown]
# ## Teacher prompt
#
# The instruction goes to the system role, the body to the user role.

# %%
teacher = prompts.build_teacher_prompt(context, schema, "1:30 pm")
print(teacher.instruction)
print(teacher.input)

# %% [markdown]
# ## Student record, vanilla and rationalized
#
# A rationalized target is `reasoning + "\n[VALUE] " + value`; the split is
# exact, so evaluation can always recover the value.

# %%
vanilla = prompts.build_student_prompt(context, schema, None, "1:30 pm")
print(vanilla.instruction)
print(vanilla.input)
print("->", vanilla.expected_output)

reasoning = "The user first asked for 17:15 and then corrected it to 1:30 pm."
rationalized = prompts.build_student_prompt(context, schema, reasoning, "1:30 pm")
print(repr(rationalized.expected_output))
print(prompts.split_rationalized(rationalized.expected_output))

# %% [markdown]
# Short dialogues (turn 10 or below) never go to the teacher; they get a fixed
# sentence instead.

# %%
print(prompts.needs_teacher(2), prompts.short_dialogue_reasoning())
