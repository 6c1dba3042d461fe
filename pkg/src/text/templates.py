"""Prompt template library loaded from data/prompt_templates.txt."""

from typing import Dict, List, Optional, Sequence
from pathlib import Path

from pydantic import BaseModel

from ..utils.errors import FileIOError, NotFoundError
from .prompts import Binding, PromptSpec, render_prompt, template_slots

DEFAULT_TEMPLATES_PATH = Path(__file__).parent / "data" / "prompt_templates.txt"


class PromptTemplate(BaseModel):
    """One shipped prompt template"""
    id: int
    text: str
    subject_count: int


class PromptTemplateLibrary:
    """Prompt templates loaded from a plain-text file, one template per line"""

    def __init__(self, templates_path: Optional[Path] = None):
        self.templates_path = Path(templates_path or DEFAULT_TEMPLATES_PATH)
        self._templates_cache: Dict[int, PromptTemplate] = {}
        self._load_templates()

    def _load_templates(self):
        """Ids run 1..N in file order; blank lines and # comments are skipped"""
        try:
            lines = self.templates_path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise FileIOError(f"cannot read templates {self.templates_path}: {e}", str(self.templates_path))

        for line in lines:
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            template_id = len(self._templates_cache) + 1
            self._templates_cache[template_id] = PromptTemplate(
                id=template_id, text=text, subject_count=len(set(template_slots(text)))
            )

    def get_template(self, template_id: int) -> PromptTemplate:
        """Get a specific template by id"""
        template = self._templates_cache.get(int(template_id))
        if template is None:
            raise NotFoundError(f"Unknown template id: {template_id}")
        return template

    def list_templates(self, subject_count: Optional[int] = None) -> List[PromptTemplate]:
        """List all templates, optionally filtered by subject count"""
        templates = list(self._templates_cache.values())
        if subject_count is not None:
            templates = [t for t in templates if t.subject_count == subject_count]
        return templates

    def render(self, template_id: int, bindings: Sequence[Binding]) -> str:
        template = self.get_template(template_id)
        return render_prompt(PromptSpec(template=template.text, bindings=list(bindings)))
