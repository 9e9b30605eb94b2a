"""Teacher and student prompt construction.

Templates live in ``templates/*.txt``. A template file holds the instruction
line, a ``---`` separator line, then the input body. Exactly one trailing
newline at end of file is ignored; every other character is significant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .corpus import SlotSchema

VALUE_SEPARATOR = "\n[VALUE] "
VALUE_MARKER = "[VALUE] "
TURN_THRESHOLD = 10

MULTI_VALUE_RESOLUTION = (
    "In the context of dialogue state tracking, there are often multiple possible values "
    "associated with the requested slot. Please provide a concise explanation of how to "
    "select the most appropriate value for the requested slot by carefully analyzing the "
    "dialogue context, user and system intent, and taking into consideration any "
    "confirmation or rejection information."
)

_SEP = "\n---\n"


def _split_template(raw: str, name: str) -> tuple:
    if raw.endswith("\n"):
        raw = raw[:-1]
    if _SEP not in raw:
        if name == "short_reasoning":
            return "", raw
        raise ValueError(f"template {name!r} lacks the '---' separator line")
    instruction, body = raw.split(_SEP, 1)
    return instruction, body


@dataclass(frozen=True)
class Templates:
    teacher_instruction: str
    teacher_input: str
    student_instruction: str
    student_input: str
    short_reasoning: str

    @classmethod
    def load(cls, template_dir=None) -> "Templates":
        """Packaged templates, with any file present in ``template_dir`` taking precedence."""
        def read(name):
            if template_dir is not None:
                p = Path(template_dir) / f"{name}.txt"
                if p.exists():
                    return p.read_text(encoding="utf-8")
            return resources.files("ros_distill").joinpath(f"templates/{name}.txt").read_text(
                encoding="utf-8"
            )

        ti, tb = _split_template(read("teacher"), "teacher")
        si, sb = _split_template(read("student"), "student")
        _, short = _split_template(read("short_reasoning"), "short_reasoning")
        return cls(ti, tb, si, sb, short)


_DEFAULT = None


def default_templates() -> Templates:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Templates.load()
    return _DEFAULT


@dataclass(frozen=True)
class TeacherPrompt:
    instruction: str
    input: str
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def text(self) -> str:
        return f"{self.instruction}\n{self.input}"


@dataclass(frozen=True)
class StudentPrompt:
    instruction: str
    input: str
    expected_output: str


def _fields(context: str, schema: SlotSchema) -> dict:
    return {
        "context": context,
        "slot": schema.qualified,
        "slot_key": schema.key,
        "service": schema.service_name,
        "service_description": schema.service_description,
        "slot_name": schema.slot_name,
        "slot_description": schema.slot_description,
    }


def build_teacher_prompt(context: str, schema: SlotSchema, value: str, *,
                         resolution: bool = True, templates: Templates | None = None,
                         **meta) -> TeacherPrompt:
    """Render the dialogue-centric teacher prompt for one (context, slot, gold value).

    ``resolution=False`` drops the multi-value resolution paragraph; extra
    keyword arguments (dialogue_id, turn, ...) are stored in ``meta``.
    """
    if not value:
        raise ValueError("gold value must be non-empty")
    tpl = templates or default_templates()
    body = tpl.teacher_input.format(
        value=value,
        resolution=" " + MULTI_VALUE_RESOLUTION if resolution else "",
        **_fields(context, schema),
    )
    meta = {"qualified_slot": schema.qualified, "gold_value": value, **meta}
    return TeacherPrompt(tpl.teacher_instruction, body, meta)


def build_student_prompt(context: str, schema: SlotSchema, rationale: str | None, value: str,
                         templates: Templates | None = None) -> StudentPrompt:
    if not value:
        raise ValueError("value must be non-empty")
    tpl = templates or default_templates()
    fields = _fields(context, schema)
    output = value if rationale is None else f"{rationale}{VALUE_SEPARATOR}{value}"
    return StudentPrompt(
        tpl.student_instruction.format(**fields),
        tpl.student_input.format(**fields),
        output,
    )


def split_rationalized(output: str) -> tuple:
    """Inverse of the self-rationalization layout: ``(rationale, value)``."""
    rationale, sep, value = output.rpartition(VALUE_SEPARATOR)
    if not sep:
        raise ValueError("output has no value marker")
    return rationale, value


def short_dialogue_reasoning(schema: SlotSchema | None = None, value: str | None = None,
                             templates: Templates | None = None) -> str:
    # Deliberately ignores its arguments: short dialogues share one canned rationale.
    return (templates or default_templates()).short_reasoning


def needs_teacher(t: int, threshold: int = TURN_THRESHOLD) -> bool:
    if t < 1:
        raise ValueError("turn index starts at 1")
    return t > threshold
