"""
Annotation prompt templates.

Templates are plain text files under ``rqrag/prompts``; ``{name}`` slots are
filled by ``fill``. The ``*_examples.txt`` exemplars are written for this
repository and can be swapped through the ``dataset.prompt_dir`` setting.
"""

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from loguru import logger

from ..models import Category


PROMPT_DIR = Path(__file__).resolve().parent.parent / "prompts"

_TEMPLATE_FILES = {
    Category.MULTI_TURN: ("multi_turn.txt", "multi_turn_examples.txt"),
    Category.MULTI_HOP: ("decompose.txt", "decompose_examples.txt"),
    Category.AMBIGUOUS: ("disambiguate.txt", "disambiguate_examples.txt"),
}


def fill(template: str, **values: str) -> str:
    """Replace ``{name}`` slots in one pass; other braces in the text are left alone"""
    if not values:
        return template
    slots = re.compile(r"\{(" + "|".join(re.escape(name) for name in values) + r")\}")
    return slots.sub(lambda m: values[m.group(1)], template)


@dataclass
class PromptSet:
    multi_turn: str
    decompose: str
    disambiguate: str
    regenerate: str

    def for_category(self, category: Category) -> str:
        return {
            Category.MULTI_TURN: self.multi_turn,
            Category.MULTI_HOP: self.decompose,
            Category.AMBIGUOUS: self.disambiguate,
        }[category]


def load_prompts(prompt_dir: Optional[Union[str, Path]] = None) -> PromptSet:
    """Load every template and splice in its exemplars"""
    prompt_dir = Path(prompt_dir) if prompt_dir else PROMPT_DIR

    def read(name: str) -> str:
        with open(os.path.join(prompt_dir, name), "r", encoding="utf-8") as f:
            text = f.read()
        logger.debug(f"loaded prompt {name}: {len(text)} chars")
        return text

    filled = {}
    for category, (template_name, examples_name) in _TEMPLATE_FILES.items():
        filled[category] = fill(read(template_name), examples=read(examples_name).strip())
    return PromptSet(
        multi_turn=filled[Category.MULTI_TURN],
        decompose=filled[Category.MULTI_HOP],
        disambiguate=filled[Category.AMBIGUOUS],
        regenerate=read("regenerate.txt"),
    )
