"""Prompt template assets: loading, checksumming, and prompt assembly."""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from .errors import TemplateError
from .util import sha256_text

log = logging.getLogger(__name__)

_ASSET_DIR = Path(__file__).parent / "prompts"

_TEMPLATE_FILES = {
    "scientist": "scientist.txt",
    "team": "team.txt",
    "invite": "invite.txt",
    "topic": "topic.txt",
    "turn_summary": "turn_summary.txt",
    "idea": "idea.txt",
    "check": "check.txt",
    "abstract": "abstract.txt",
    "judgement": "judgement.txt",
    "review": "review.txt",
    "adaptive": "adaptive.txt",
}


@dataclass(frozen=True)
class PromptTemplates:
    """Verbatim template texts, one per external asset file."""

    scientist: str
    team: str
    invite: str
    topic: str
    turn_summary: str
    idea: str
    check: str
    abstract: str
    judgement: str
    review: str
    adaptive: str

    def checksums(self) -> dict[str, str]:
        return {f.name: sha256_text(getattr(self, f.name)) for f in fields(self)}


def load_templates(directory: str | Path | None = None) -> PromptTemplates:
    """Load all template assets; checksums are logged for reproducibility."""
    base = Path(directory) if directory is not None else _ASSET_DIR
    texts = {}
    for name, filename in _TEMPLATE_FILES.items():
        path = base / filename
        try:
            texts[name] = path.read_text(encoding="utf-8").strip()
        except OSError as exc:
            raise TemplateError(f"cannot load prompt template {path}: {exc}") from exc
        if not texts[name]:
            raise TemplateError(f"prompt template {path} is empty")
    templates = PromptTemplates(**texts)
    for name, digest in sorted(templates.checksums().items()):
        log.info("prompt template %s sha256=%s", name, digest)
    return templates


def join_sections(sections: Sequence[tuple[str, str]]) -> str:
    """Assemble labeled prompt sections into one canonical text block.

    Every prompt the pipeline composes flows through this, so recomposing
    a recorded prompt from its constituents is byte-exact.
    """
    return "\n\n".join(f"## {header}\n{body}" for header, body in sections)


def format_references(papers_with_dist: Sequence) -> str:
    """Render retrieved papers for inclusion in a prompt."""
    if not papers_with_dist:
        return "(no related papers found)"
    lines = []
    for paper, _dist in papers_with_dist:
        lines.append(f"- {paper.title} (citations: {paper.citation_count})\n  {paper.abstract}")
    return "\n".join(lines)
