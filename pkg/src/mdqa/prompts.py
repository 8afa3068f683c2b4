"""Versioned prompt pack.

Prompts live as text files under ``prompts/{system_id}/{role}.txt`` with
``{placeholder}`` slots. A pack's version is a content hash embedded into
every run record, so reports can tell which prompt text produced an answer.
Rendering replaces only the placeholders passed by the caller; page content
containing braces passes through untouched.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from pathlib import Path

_PROMPT_ROOT = Path(__file__).parent / "prompts"


class PromptError(Exception):
    pass


class PromptPack:
    def __init__(self, system_id: str, roles: dict[str, str]):
        self.system_id = system_id
        self.roles = dict(sorted(roles.items()))
        digest = hashlib.sha256()
        for name, text in self.roles.items():
            digest.update(name.encode("utf-8"))
            digest.update(b"\x00")
            digest.update(text.encode("utf-8"))
        self.version = digest.hexdigest()[:12]

    def render(self, role: str, **values) -> str:
        if role not in self.roles:
            raise PromptError(f"pack {self.system_id!r} has no role {role!r}")
        text = self.roles[role]
        for key, value in values.items():
            text = text.replace("{" + key + "}", str(value))
        return text

    def fewshot_plans(self, **values) -> list[tuple[str, str]]:
        """Parse the fewshots role into (question, plan source) pairs.

        Blocks are separated by "---" lines; prose before the first
        "Question:" line is preamble and skipped.
        """
        text = self.render("fewshots", **values)
        demos = []
        for block in text.split("\n---\n"):
            lines = block.strip("\n").split("\n")
            start = next(
                (i for i, line in enumerate(lines) if line.startswith("Question:")), None
            )
            if start is None:
                continue
            question = lines[start][len("Question:"):].strip()
            if start + 1 >= len(lines) or lines[start + 1].strip() != "Plan:":
                raise PromptError("fewshot block must have a 'Plan:' line")
            demos.append((question, "\n".join(lines[start + 2:])))
        return demos


@lru_cache(maxsize=None)
def load_pack(system_id: str) -> PromptPack:
    pack_dir = _PROMPT_ROOT / system_id
    if not pack_dir.is_dir():
        raise PromptError(f"no prompt pack for system {system_id!r}")
    roles = {
        path.stem: path.read_text(encoding="utf-8")
        for path in sorted(pack_dir.glob("*.txt"))
    }
    if not roles:
        raise PromptError(f"prompt pack {system_id!r} is empty")
    return PromptPack(system_id, roles)
