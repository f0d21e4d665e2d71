# mocr/prompting.py
from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from jinja2 import Environment, StrictUndefined, TemplateSyntaxError, meta

from mocr.errors import ConfigError, TaskError, UnparseableVerdictError

logger = logging.getLogger(__name__)

PROMPTS_DIR = (Path(__file__).resolve().parent / ".." / "prompts").resolve()
DEFAULT_PROMPT_FILE = PROMPTS_DIR / "ocr_arena_judge.md"

PLACEHOLDERS = ("candidate_1", "candidate_2")

_env = Environment(undefined=StrictUndefined, keep_trailing_newline=True, autoescape=False)


class TrialVerdict(str, Enum):
    FIRST = "first"
    SECOND = "second"
    TIE = "tie"


@dataclass(frozen=True)
class JudgeRequest:
    """One trial: the page image plus two transcriptions in presentation order."""

    image: bytes
    first: str
    second: str
    template_id: str
    image_mime: str = "image/png"

    def __post_init__(self) -> None:
        if not self.image:
            raise TaskError("document image is empty")
        if self.first is None or self.second is None:
            raise TaskError("both transcriptions are required")

    def swapped(self) -> "JudgeRequest":
        return JudgeRequest(self.image, self.second, self.first, self.template_id, self.image_mime)


@dataclass(frozen=True)
class JudgeResponse:
    raw: str
    verdict: TrialVerdict
    explanation: Optional[str] = None
    attempts: int = 1


# =========================
# Templates
# =========================
def _split_front_matter(text: str) -> Tuple[Dict[str, str], str]:
    if not text.startswith("---"):
        return {}, text
    end = text.find("\n---", 3)
    if end == -1:
        return {}, text
    fields = {}
    for line in text[3:end].splitlines():
        key, sep, value = line.partition(":")
        if sep and key.strip():
            fields[key.strip()] = value.strip()
    return fields, text[end + 4:].lstrip()


@dataclass(frozen=True)
class PromptTemplate:
    identifier: str
    body: str

    def __post_init__(self) -> None:
        try:
            ast = _env.parse(self.body)
        except TemplateSyntaxError as e:
            raise ConfigError(f"prompt template '{self.identifier}': {e.message} (line {e.lineno})") from e
        names = meta.find_undeclared_variables(ast)
        missing = [p for p in PLACEHOLDERS if p not in names]
        if missing:
            raise ConfigError(
                f"prompt template '{self.identifier}' is missing placeholder "
                + ", ".join("{{" + p + "}}" for p in missing)
            )
        extra = sorted(names - set(PLACEHOLDERS))
        if extra:
            raise ConfigError(f"prompt template '{self.identifier}' uses unknown placeholder(s): {', '.join(extra)}")

    @classmethod
    def from_text(cls, text: str, identifier: Optional[str] = None) -> "PromptTemplate":
        fields, body = _split_front_matter(text)
        return cls(identifier=fields.get("id") or identifier or "inline", body=body)

    def render(self, first: str, second: str) -> str:
        return _env.from_string(self.body).render(candidate_1=first, candidate_2=second)


_template_cache: Dict[str, Any] = {"template": None, "mtime": None, "path": None}


def load_template(path: Union[str, Path, None] = None) -> PromptTemplate:
    """Load a template file, reusing the parsed copy until the file changes."""
    path = Path(path).resolve() if path else DEFAULT_PROMPT_FILE
    try:
        st = path.stat()
    except FileNotFoundError:
        raise ConfigError(f"prompt template not found: {path}") from None
    if (_template_cache["template"] is None
            or _template_cache["mtime"] != st.st_mtime
            or _template_cache["path"] != str(path)):
        template = PromptTemplate.from_text(path.read_text(encoding="utf-8"), identifier=path.stem)
        _template_cache.update({"template": template, "mtime": st.st_mtime, "path": str(path)})
        logger.info("loaded prompt template %s (id=%s)", path, template.identifier)
    return _template_cache["template"]


def render_prompt(template: PromptTemplate, request: JudgeRequest) -> List[Dict[str, Any]]:
    """Chat-completion messages: one user turn with a text part and an inline image part."""
    b64 = base64.b64encode(request.image).decode("ascii")
    data_url = f"data:{request.image_mime};base64,{b64}"
    return [
        {"role": "user", "content": [
            {"type": "text", "text": template.render(request.first, request.second)},
            {"type": "image_url", "image_url": {"url": data_url}},
        ]},
    ]


# =========================
# Verdicts
# =========================
def parse_verdict_details(raw: str) -> Tuple[TrialVerdict, Optional[str]]:
    """First JSON object in `raw` whose "winner" is first, second or tie, plus its reason."""
    text = raw if isinstance(raw, str) else ""
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except (ValueError, RecursionError):
            obj = None
        if isinstance(obj, dict):
            winner = obj.get("winner")
            if isinstance(winner, str) and winner.strip().lower() in TrialVerdict._value2member_map_:
                reason = obj.get("reason")
                return TrialVerdict(winner.strip().lower()), reason if isinstance(reason, str) else None
        pos = text.find("{", pos + 1)
    raise UnparseableVerdictError("no verdict object in judge response", raw=text[:500])


def parse_verdict(raw: str) -> TrialVerdict:
    return parse_verdict_details(raw)[0]
