# mocr/parse_model.py
"""
Structured page parse: an ordered sequence of (bounding box, category, payload)
elements. Sequence position is the reading order.

Wire format "mocr-parse/1": one JSON object per document, either one per line
(JSONL) or a single, possibly indented, object per file.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from mocr import svg_engine
from mocr.errors import DataError, DocumentInvalidError, DocumentParseError

SCHEMA = "mocr-parse/1"


class ElementCategory(str, Enum):
    TEXT = "Text"
    TITLE = "Title"
    SECTION_HEADER = "SectionHeader"
    TABLE = "Table"
    FORMULA = "Formula"
    CAPTION = "Caption"
    HEADER = "Header"
    FOOTER = "Footer"
    GRAPHIC = "Graphic"
    RASTER = "Raster"


TEXT_LIKE = {
    ElementCategory.TEXT,
    ElementCategory.TITLE,
    ElementCategory.SECTION_HEADER,
    ElementCategory.CAPTION,
    ElementCategory.HEADER,
    ElementCategory.FOOTER,
}


@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def problems(self) -> List[str]:
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in coords):
            return ["bbox coordinates must be numbers"]
        issues = []
        if not all(math.isfinite(c) for c in coords):
            issues.append("bbox coordinates must be finite")
        elif any(c < 0 for c in coords):
            issues.append("bbox coordinates must be >= 0")
        if self.x1 < self.x0:
            issues.append(f"bbox x1 ({self.x1}) < x0 ({self.x0})")
        if self.y1 < self.y0:
            issues.append(f"bbox y1 ({self.y1}) < y0 ({self.y0})")
        return issues

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.x0 <= other.x0 and self.y0 <= other.y0
            and other.x1 <= self.x1 and other.y1 <= self.y1
        )

    def to_list(self) -> List[float]:
        return [self.x0, self.y0, self.x1, self.y1]


# =========================
# Payloads
# =========================
@dataclass(frozen=True)
class PlainText:
    text: str
    kind = "PlainText"


@dataclass(frozen=True)
class TableMarkup:
    text: str
    kind = "TableMarkup"


@dataclass(frozen=True)
class FormulaMarkup:
    text: str
    kind = "FormulaMarkup"


@dataclass(frozen=True)
class SvgProgram:
    text: str
    kind = "SvgProgram"


@dataclass(frozen=True)
class RasterRef:
    """Region of the source page image kept as pixels."""

    region: BoundingBox
    kind = "RasterRef"


Payload = Union[PlainText, TableMarkup, FormulaMarkup, SvgProgram, RasterRef]
TEXT_PAYLOADS = {"PlainText": PlainText, "TableMarkup": TableMarkup,
                 "FormulaMarkup": FormulaMarkup, "SvgProgram": SvgProgram}
PAYLOAD_KINDS = set(TEXT_PAYLOADS) | {"RasterRef"}

# Graphic carries SVG after the graphics pass, a raster region before it
ALLOWED_PAYLOADS: Dict[ElementCategory, Tuple[str, ...]] = {
    **{c: ("PlainText",) for c in TEXT_LIKE},
    ElementCategory.TABLE: ("TableMarkup",),
    ElementCategory.FORMULA: ("FormulaMarkup",),
    ElementCategory.GRAPHIC: ("SvgProgram", "RasterRef"),
    ElementCategory.RASTER: ("RasterRef",),
}


@dataclass(frozen=True)
class ParsedElement:
    bbox: BoundingBox
    category: ElementCategory
    payload: Payload


@dataclass(frozen=True)
class ParsedDocument:
    page_width: float
    page_height: float
    elements: Tuple[ParsedElement, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "elements", tuple(self.elements))


# =========================
# Validation
# =========================
@dataclass(frozen=True)
class Violation:
    index: Optional[int]  # None for page-level problems
    reason: str

    def __str__(self) -> str:
        where = "page" if self.index is None else f"element {self.index}"
        return f"{where}: {self.reason}"


def _element_violations(i: int, el: ParsedElement, page: BoundingBox) -> List[Violation]:
    out = [Violation(i, p) for p in el.bbox.problems()]
    if not out and not page.contains(el.bbox):
        out.append(Violation(i, "bbox extends outside the page"))

    allowed = ALLOWED_PAYLOADS.get(el.category)
    kind = getattr(el.payload, "kind", type(el.payload).__name__)
    if allowed is not None and kind not in allowed:
        out.append(Violation(
            i, f"category {el.category.value} cannot carry a {kind} payload "
               f"(expected {' or '.join(allowed)})"
        ))

    if isinstance(el.payload, SvgProgram):
        try:
            svg_engine.parse_svg(el.payload.text)
        except DataError as e:
            out.append(Violation(i, f"SvgProgram is not well-formed: {e}"))
    elif isinstance(el.payload, RasterRef):
        region = el.payload.region
        problems = region.problems()
        if problems:
            out.extend(Violation(i, f"raster region: {p}") for p in problems)
        elif not el.bbox.contains(region):
            out.append(Violation(i, "raster region lies outside the element bbox"))
    return out


def validate_document(doc: ParsedDocument) -> List[Violation]:
    """Every invariant violation, in element order. Empty means valid."""
    violations: List[Violation] = []
    dims = (doc.page_width, doc.page_height)
    if not all(isinstance(d, (int, float)) and math.isfinite(d) and d > 0 for d in dims):
        violations.append(Violation(None, "page dimensions must be finite and > 0"))
        page = BoundingBox(0, 0, math.inf, math.inf)
    else:
        page = BoundingBox(0, 0, doc.page_width, doc.page_height)
    for i, el in enumerate(doc.elements):
        violations.extend(_element_violations(i, el, page))
    return violations


# =========================
# Serialization
# =========================
def _payload_to_dict(payload: Payload) -> Dict[str, Any]:
    if isinstance(payload, RasterRef):
        return {"kind": payload.kind, "region": payload.region.to_list()}
    return {"kind": payload.kind, "text": payload.text}


def document_to_dict(doc: ParsedDocument) -> Dict[str, Any]:
    return {
        "schema": SCHEMA,
        "page_width": doc.page_width,
        "page_height": doc.page_height,
        "elements": [
            {
                "bbox": el.bbox.to_list(),
                "category": el.category.value,
                "payload": _payload_to_dict(el.payload),
            }
            for el in doc.elements
        ],
    }


def serialize_document(doc: ParsedDocument, *, indent: Optional[int] = None) -> str:
    """One JSON record. With indent=None the record fits on a single line."""
    violations = validate_document(doc)
    if violations:
        raise DocumentInvalidError(violations)
    return json.dumps(document_to_dict(doc), ensure_ascii=False, indent=indent, allow_nan=False)


class _Reader:
    """Walks a decoded record, raising DocumentParseError with a JSON path."""

    def __init__(self, line: Optional[int]) -> None:
        self.line = line

    def fail(self, message: str, path: str) -> DocumentParseError:
        return DocumentParseError(message, line=self.line, path=path)

    def obj(self, value: Any, path: str) -> Dict[str, Any]:
        if not isinstance(value, dict):
            raise self.fail("expected an object", path)
        return value

    def key(self, value: Dict[str, Any], key: str, path: str) -> Any:
        if key not in value:
            raise self.fail(f"missing field '{key}'", path)
        return value[key]

    def number(self, value: Any, path: str) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail("expected a number", path)
        return value

    def string(self, value: Any, path: str) -> str:
        if not isinstance(value, str):
            raise self.fail("expected a string", path)
        return value

    def bbox(self, value: Any, path: str) -> BoundingBox:
        if not isinstance(value, list) or len(value) != 4:
            raise self.fail("bbox must be a list of 4 numbers", path)
        return BoundingBox(*(self.number(v, f"{path}[{i}]") for i, v in enumerate(value)))

    def payload(self, value: Any, category: ElementCategory, path: str) -> Payload:
        value = self.obj(value, path)
        kind = self.string(self.key(value, "kind", path), f"{path}.kind")
        if kind not in PAYLOAD_KINDS:
            raise self.fail(f"unknown payload kind '{kind}'", f"{path}.kind")
        if kind not in ALLOWED_PAYLOADS[category]:
            raise self.fail(
                f"payload kind '{kind}' does not match category '{category.value}'", f"{path}.kind"
            )
        if kind == "RasterRef":
            return RasterRef(self.bbox(self.key(value, "region", path), f"{path}.region"))
        return TEXT_PAYLOADS[kind](self.string(self.key(value, "text", path), f"{path}.text"))

    def document(self, value: Any) -> ParsedDocument:
        value = self.obj(value, "$")
        schema = self.key(value, "schema", "$")
        if schema != SCHEMA:
            raise self.fail(f"unsupported schema {schema!r}, expected {SCHEMA!r}", "$.schema")
        width = self.number(self.key(value, "page_width", "$"), "$.page_width")
        height = self.number(self.key(value, "page_height", "$"), "$.page_height")
        raw_elements = self.key(value, "elements", "$")
        if not isinstance(raw_elements, list):
            raise self.fail("expected a list", "$.elements")
        elements = []
        for i, raw in enumerate(raw_elements):
            path = f"$.elements[{i}]"
            raw = self.obj(raw, path)
            label = self.string(self.key(raw, "category", path), f"{path}.category")
            try:
                category = ElementCategory(label)
            except ValueError:
                raise self.fail(f"unknown category '{label}'", f"{path}.category") from None
            elements.append(ParsedElement(
                bbox=self.bbox(self.key(raw, "bbox", path), f"{path}.bbox"),
                category=category,
                payload=self.payload(self.key(raw, "payload", path), category, f"{path}.payload"),
            ))
        return ParsedDocument(width, height, tuple(elements))


def _decode(text: str, line: Optional[int]) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DocumentParseError(
            f"malformed record: {e.msg}",
            line=(line if line is not None else e.lineno),
            column=e.colno,
        ) from e
    except RecursionError:
        raise DocumentParseError("malformed record: nesting too deep", line=line if line is not None else 1) from None


def deserialize_document(text: str, *, line: Optional[int] = None) -> ParsedDocument:
    """Parse one untrusted record. Rejects rather than coerces."""
    return _Reader(line).document(_decode(text, line))


def loads_documents(text: str) -> List[ParsedDocument]:
    """A whole file: a single (possibly indented) record, or one record per line."""
    stripped = text.strip()
    if not stripped:
        return []
    try:
        single = json.loads(stripped)
    except (json.JSONDecodeError, RecursionError):
        single = None
    if isinstance(single, dict):
        return [_Reader(None).document(single)]
    docs = []
    for n, raw in enumerate(text.splitlines(), start=1):
        if raw.strip():
            docs.append(deserialize_document(raw, line=n))
    return docs


def load_documents(path: Union[str, Path]) -> List[ParsedDocument]:
    return loads_documents(Path(path).read_text(encoding="utf-8"))


def dump_documents(docs: Iterable[ParsedDocument], path: Union[str, Path]) -> None:
    lines = [serialize_document(d) for d in docs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
