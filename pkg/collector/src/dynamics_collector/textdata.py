"""Text task data: JSONL records with opaque ids.

Two record shapes are accepted:
  {"id": "...", "text": "..."}                   plain LM task (loss only)
  {"id": "...", "prompt": "...", "target": "..."} generation task (loss over
                                                  the target, plus BLEU and
                                                  ROUGE-L from sampled
                                                  generations)
A file must use one shape throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import CollectError


@dataclass(frozen=True)
class TextExample:
    ex_id: str
    prompt: str  # empty for plain LM tasks
    target: str  # the scored span; equals the full text for plain tasks

    @property
    def is_generation_task(self) -> bool:
        return bool(self.prompt)

    @property
    def full_text(self) -> str:
        return self.prompt + self.target


def load_text_dataset(path: str | Path) -> list[TextExample]:
    p = Path(path)
    if not p.is_file():
        raise CollectError(f"no such dataset file: {p}")
    examples: list[TextExample] = []
    seen: set[str] = set()
    shapes: set[str] = set()
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CollectError(f"{p}:{lineno}: malformed JSON: {e}") from None
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), str) or not obj["id"]:
            raise CollectError(f"{p}:{lineno}: record needs a non-empty string 'id'")
        if obj["id"] in seen:
            raise CollectError(f"{p}:{lineno}: duplicate id {obj['id']!r}")
        seen.add(obj["id"])
        if "text" in obj:
            if not isinstance(obj["text"], str) or not obj["text"]:
                raise CollectError(f"{p}:{lineno}: 'text' must be a non-empty string")
            shapes.add("text")
            examples.append(TextExample(ex_id=obj["id"], prompt="", target=obj["text"]))
        elif "prompt" in obj and "target" in obj:
            if not isinstance(obj["prompt"], str) or not isinstance(obj["target"], str) or not obj["target"]:
                raise CollectError(f"{p}:{lineno}: 'prompt'/'target' must be strings, target non-empty")
            shapes.add("generation")
            examples.append(TextExample(ex_id=obj["id"], prompt=obj["prompt"], target=obj["target"]))
        else:
            raise CollectError(f"{p}:{lineno}: record needs 'text' or 'prompt'+'target'")
    if not examples:
        raise CollectError(f"{p}: empty dataset")
    if len(shapes) > 1:
        raise CollectError(f"{p}: mixed record shapes {sorted(shapes)}; use one throughout")
    return examples
