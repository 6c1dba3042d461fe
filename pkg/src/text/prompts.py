import re
from typing import List, Sequence, Tuple

from pydantic import BaseModel, Field

from ..utils.errors import InvalidArgumentError

SLOT_PATTERN = re.compile(r"\[c(\d+)\]")

Binding = Tuple[str, str]  # (class name, learnable token name)


class PromptSpec(BaseModel):
    """A prompt template with its ordered (class, token) bindings"""
    template: str = Field(description="Template text with [c1], [c2], [c3] slots")
    bindings: List[Binding] = Field(default_factory=list, description="(class name, token name) per slot")


def template_slots(template: str) -> List[int]:
    return [int(match) for match in SLOT_PATTERN.findall(template)]


def render_prompt(spec: PromptSpec) -> str:
    """Replace slot [cK] with "<tokenK> classK"."""
    slots = set(template_slots(spec.template))
    bound = set(range(1, len(spec.bindings) + 1))
    unbound = sorted(slots - bound)
    if unbound:
        names = ", ".join(f"c{k}" for k in unbound)
        raise InvalidArgumentError(f"unbound slot(s) {names} in {spec.template!r}")
    if slots != bound:
        raise InvalidArgumentError(
            f"template has {len(slots)} slots but {len(spec.bindings)} bindings were given"
        )

    def substitute(match: re.Match) -> str:
        class_name, token_name = spec.bindings[int(match.group(1)) - 1]
        return f"{token_name} {class_name}"

    return SLOT_PATTERN.sub(substitute, spec.template)


def _join_subjects(phrases: Sequence[str]) -> str:
    subjects = [f"a {phrase}" for phrase in phrases]
    if len(subjects) == 1:
        return subjects[0]
    return ", ".join(subjects[:-1]) + " and " + subjects[-1]


def training_prompt(bindings: Sequence[Binding]) -> str:
    """Plain prompt for a composite: "a <new1> cat and a <new2> dog"."""
    if not bindings:
        raise InvalidArgumentError("a training prompt needs at least one binding")
    return _join_subjects([f"{token} {class_name}" for class_name, token in bindings])


def class_prompt(class_names: Sequence[str]) -> str:
    """Prior prompt with bare class names: "a cat and a dog"."""
    if not class_names:
        raise InvalidArgumentError("a class prompt needs at least one class name")
    return _join_subjects(list(class_names))
