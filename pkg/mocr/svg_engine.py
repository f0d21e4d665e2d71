# mocr/svg_engine.py
"""
SVG branch of the data engine: canonical form, complexity metrics,
code/image-level deduplication and domain/complexity-aware sampling.

Canonical form rules (fixed, applied in one pass):
  - comments, processing instructions, <metadata>/<title>/<desc>, foreign-namespace
    elements and attributes, <script>/<foreignObject> and on* handlers are dropped
  - numeric literals are rounded to 2 decimals, trailing zeros stripped
  - path data is re-emitted with one explicit command per coordinate group
  - whitespace is collapsed; attributes are sorted per element
  - the root always carries a viewBox; width/height are folded into it and removed
"""
from __future__ import annotations

import hashlib
import logging
import math
import re
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np
from lxml import etree

from mocr.errors import (
    DataError,
    NoAssetsError,
    PathDataError,
    SamplingSpecError,
    SvgParseError,
    SvgStructureError,
)

logger = logging.getLogger(__name__)

SVG_NS = "http://www.w3.org/2000/svg"
XLINK_NS = "http://www.w3.org/1999/xlink"
XML_NS = "http://www.w3.org/XML/1998/namespace"

PRECISION = 2
DEFAULT_PHASH_THRESHOLD = 6
# CSS default object size, used when neither viewBox nor width/height are usable
DEFAULT_VIEWPORT = (300.0, 150.0)

METADATA_TAGS = {"metadata", "title", "desc"}
FLAGGED_TAGS = {"script", "foreignObject"}
VERBATIM_ATTRS = {"id", "class", "href", "xlink:href", "font-family", "xml:lang", "lang"}
ROOT_SIZE_ATTRS = {"width", "height"}
DROPPED_ROOT_ATTRS = {"version", "baseProfile"}

RENDER_OK = "ok"
RENDER_BLANK = "blank"
RENDER_FAILED = "failed"

CODE_LEVEL = "code-level"
IMAGE_LEVEL = "image-level"

_PARSER = etree.XMLParser(
    resolve_entities=False, no_network=True, huge_tree=False, remove_blank_text=False
)

# (#ref) tokens are skipped whole so hex colours and url(#id) survive untouched
_GENERIC_TOKEN = re.compile(
    r"(#[\w.\-]+)|(?<![A-Za-z_\d.])([-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)"
)
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_SEPARATORS = re.compile(r"[\s,]*")
_LENGTH = re.compile(
    r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(px|pt|pc|mm|cm|in)?\s*$"
)
_UNIT_PX = {None: 1.0, "px": 1.0, "pt": 4.0 / 3.0, "pc": 16.0,
            "mm": 96.0 / 25.4, "cm": 96.0 / 2.54, "in": 96.0}

PATH_ARG_COUNTS = {"M": 2, "L": 2, "T": 2, "H": 1, "V": 1, "C": 6, "S": 4, "Q": 4, "A": 7, "Z": 0}
PATH_COMMANDS = set("MmLlTtHhVvCcSsQqAaZz")


# =========================
# Parsing helpers
# =========================
def parse_svg(text: str) -> etree._Element:
    """Parse markup and require an <svg> root. Errors carry line/column."""
    try:
        root = etree.fromstring(text.encode("utf-8"), _PARSER)
    except etree.XMLSyntaxError as e:
        line, column = e.position if e.position else (e.lineno, None)
        raise SvgParseError(f"unparseable SVG markup: {e.msg}", line=line, column=column) from e
    if root is None:
        raise SvgParseError("empty SVG markup")
    qname = etree.QName(root)
    if qname.localname != "svg" or qname.namespace not in (None, SVG_NS):
        raise SvgStructureError(f"root element is <{qname.localname}>, expected <svg>")
    return root


def parse_length(value: Optional[str]) -> Optional[float]:
    """Absolute length in px, or None for missing/relative/non-positive values."""
    if value is None:
        return None
    m = _LENGTH.match(value)
    if not m:
        return None
    number = float(m.group(1)) * _UNIT_PX[m.group(2)]
    return number if math.isfinite(number) and number > 0 else None


def parse_viewbox(value: Optional[str]) -> Optional[Tuple[float, float, float, float]]:
    if not value:
        return None
    parts = value.replace(",", " ").split()
    if len(parts) != 4:
        return None
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError:
        return None
    if not all(math.isfinite(v) for v in (x, y, w, h)) or w <= 0 or h <= 0:
        return None
    return x, y, w, h


def format_number(value: float) -> str:
    text = f"{value:.{PRECISION}f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "", "+0") else text


def _round_token(match: re.Match) -> str:
    if match.group(1):
        return match.group(1)
    literal = match.group(2)
    # integer literals are kept textually; only fractional/exponent forms are rounded
    if not any(ch in literal for ch in ".eE"):
        return literal
    value = float(literal)
    return format_number(value) if math.isfinite(value) else literal


def round_numbers(value: str) -> str:
    return _GENERIC_TOKEN.sub(_round_token, value)


def collapse_whitespace(value: str) -> str:
    return " ".join(value.split())


# =========================
# Path data
# =========================
@dataclass(frozen=True)
class PathSegment:
    command: str
    args: Tuple[float, ...]


def _read_group(d: str, pos: int, command: str, name: str) -> Tuple[Tuple[float, ...], int]:
    count = PATH_ARG_COUNTS[command.upper()]
    args: List[float] = []
    arc = command in "Aa"
    for i in range(count):
        pos = _SEPARATORS.match(d, pos).end()
        if arc and i in (3, 4):
            if pos < len(d) and d[pos] in "01":
                args.append(float(d[pos]))
                pos += 1
                continue
            raise PathDataError(f"arc flag expected for '{command}'", path=name, column=pos + 1)
        m = _NUMBER.match(d, pos)
        if not m:
            raise PathDataError(
                f"'{command}' expects {count} numbers, got {i}", path=name, column=pos + 1
            )
        args.append(float(m.group()))
        pos = m.end()
    return tuple(args), pos


def parse_path(d: str, name: str = "path") -> List[PathSegment]:
    """Split path data into drawing commands, one per coordinate group.

    Implicit repeats become their own segment; repeats after a moveto are linetos.
    """
    segments: List[PathSegment] = []
    command: Optional[str] = None
    pos, n = 0, len(d)
    while True:
        pos = _SEPARATORS.match(d, pos).end()
        if pos >= n:
            break
        ch = d[pos]
        if ch in PATH_COMMANDS:
            command = ch
            pos += 1
            if command in "Zz":
                segments.append(PathSegment(command, ()))
                continue
            args, pos = _read_group(d, pos, command, name)
            segments.append(PathSegment(command, args))
            continue
        if command is None:
            raise PathDataError("path data must start with a command", path=name, column=pos + 1)
        if command in "Zz":
            raise PathDataError("unexpected data after closepath", path=name, column=pos + 1)
        repeat = {"M": "L", "m": "l"}.get(command, command)
        args, pos = _read_group(d, pos, command, name)
        segments.append(PathSegment(repeat, args))
    return segments


def format_path(segments: Sequence[PathSegment]) -> str:
    return "".join(s.command + " ".join(format_number(a) for a in s.args) for s in segments)


# =========================
# Canonicalization
# =========================
@dataclass(frozen=True)
class CanonicalResult:
    text: str
    removed: Dict[str, int]
    flags: Tuple[str, ...]


def _local(el: etree._Element) -> Optional[str]:
    """Local name of an SVG element, None for comments/PIs/foreign elements."""
    if not isinstance(el.tag, str):
        return None
    qname = etree.QName(el)
    if qname.namespace not in (None, SVG_NS):
        return None
    return qname.localname


def _attr_name(key: str) -> Optional[str]:
    if not key.startswith("{"):
        return key
    qname = etree.QName(key)
    if qname.namespace == XLINK_NS:
        return f"xlink:{qname.localname}"
    if qname.namespace == XML_NS and qname.localname == "lang":
        return "xml:lang"
    return None


def _canonical_value(name: str, value: str) -> str:
    value = collapse_whitespace(value)
    if name in VERBATIM_ATTRS:
        return value
    if name == "d":
        try:
            return format_path(parse_path(value))
        except PathDataError:
            return round_numbers(value)
    if name == "viewBox":
        return " ".join(round_numbers(p) for p in value.replace(",", " ").split())
    return round_numbers(value)


def _root_viewbox(root: etree._Element) -> str:
    box = parse_viewbox(root.get("viewBox"))
    if box is not None:
        return " ".join(format_number(v) for v in box)
    width = parse_length(root.get("width")) or DEFAULT_VIEWPORT[0]
    height = parse_length(root.get("height")) or DEFAULT_VIEWPORT[1]
    return f"0 0 {format_number(width)} {format_number(height)}"


def canonicalize_report(raw: str) -> CanonicalResult:
    root = parse_svg(raw)
    removed: Counter = Counter()
    flags: set = set()
    uses_xlink = False

    def emit(el: etree._Element, is_root: bool) -> str:
        nonlocal uses_xlink
        name = _local(el)
        attrs: Dict[str, str] = {}
        for key, value in el.attrib.items():
            attr = _attr_name(key)
            if attr is None:
                removed["attribute:foreign"] += 1
                continue
            if attr.lower().startswith("on"):
                removed["attribute:" + attr] += 1
                flags.add("event-handler")
                continue
            if is_root and (attr in DROPPED_ROOT_ATTRS or attr in ROOT_SIZE_ATTRS):
                continue
            if attr.startswith("xlink:"):
                uses_xlink = True
            attrs[attr] = _canonical_value(attr, value)
        if is_root:
            attrs["viewBox"] = _root_viewbox(el)
            attrs["xmlns"] = SVG_NS
        if name == "text":
            flags.add("text")

        children: List[str] = []
        text = collapse_whitespace(el.text or "")
        if text:
            children.append(escape(text))
        for child in el:
            child_name = _local(child)
            if child_name is not None and child_name not in METADATA_TAGS | FLAGGED_TAGS:
                children.append(emit(child, False))
            elif isinstance(child.tag, str):
                label = child_name or etree.QName(child).localname
                removed[label] += 1
                if child_name in FLAGGED_TAGS:
                    flags.add(child_name)
            tail = collapse_whitespace(child.tail or "")
            if tail:
                children.append(escape(tail))

        if is_root and uses_xlink:
            attrs["xmlns:xlink"] = XLINK_NS
        rendered = "".join(
            f' {k}="{escape(v, {chr(34): "&quot;"})}"' for k, v in sorted(attrs.items())
        )
        if children:
            return f"<{name}{rendered}>{''.join(children)}</{name}>"
        return f"<{name}{rendered}/>"

    text = emit(root, True)
    return CanonicalResult(text=text, removed=dict(removed), flags=tuple(sorted(flags)))


def canonicalize(raw: str) -> str:
    """Deterministic, idempotent normal form of an SVG program."""
    return canonicalize_report(raw).text


def fingerprint(canonical_text: str) -> str:
    """64-bit content digest (hex) of canonical text."""
    return hashlib.blake2b(canonical_text.encode("utf-8"), digest_size=8).hexdigest()


# =========================
# Complexity
# =========================
@dataclass(frozen=True)
class ComplexityMetrics:
    element_count: int
    path_command_count: int
    byte_length: int
    color_count: int

    def to_dict(self) -> Dict[str, int]:
        return {
            "element_count": self.element_count,
            "path_command_count": self.path_command_count,
            "byte_length": self.byte_length,
            "color_count": self.color_count,
        }


def _paint_values(el: etree._Element) -> Iterable[str]:
    for prop in ("fill", "stroke"):
        value = el.get(prop)
        if value:
            yield value
    style = el.get("style")
    if style:
        for decl in style.split(";"):
            key, _, value = decl.partition(":")
            if key.strip() in ("fill", "stroke") and value.strip():
                yield value


def complexity(canonical_text: str) -> ComplexityMetrics:
    root = parse_svg(canonical_text)
    elements = 0
    commands = 0
    colors = set()
    path_index = 0
    for el in root.iter():
        name = _local(el)
        if name is None:
            continue
        elements += 1
        if name == "path":
            d = el.get("d")
            if d is not None:
                label = el.get("id") or f"path[{path_index}]"
                commands += len(parse_path(d, label))
            path_index += 1
        for value in _paint_values(el):
            value = value.strip().lower()
            if value != "none":
                colors.add(value)
    return ComplexityMetrics(
        element_count=elements,
        path_command_count=commands,
        byte_length=len(canonical_text.encode("utf-8")),
        color_count=len(colors),
    )


# =========================
# Assets
# =========================
@dataclass(frozen=True)
class SvgAsset:
    asset_id: str
    domain: str
    raw_text: str
    canonical_text: str
    metrics: ComplexityMetrics
    fingerprint: str
    phash: Optional[int] = None
    render_status: str = RENDER_FAILED
    path: Optional[str] = None
    flags: Tuple[str, ...] = ()

    def to_record(self) -> Dict[str, object]:
        return {
            "id": self.asset_id,
            "domain": self.domain,
            "path": self.path,
            "metrics": self.metrics.to_dict(),
            "fingerprint": self.fingerprint,
            "phash": None if self.phash is None else f"{self.phash:016x}",
            "render_status": self.render_status,
            "flags": list(self.flags),
        }


# =========================
# Deduplication
# =========================
@dataclass(frozen=True)
class Merge:
    left: str
    right: str
    method: str


@dataclass(frozen=True)
class Cluster:
    representative: str
    members: Tuple[str, ...]
    methods: Tuple[str, ...]


@dataclass(frozen=True)
class DedupReport:
    clusters: Tuple[Cluster, ...]
    merges: Tuple[Merge, ...]
    render_failed: Tuple[str, ...]

    @property
    def representatives(self) -> List[str]:
        return [c.representative for c in self.clusters]

    def count(self, method: str) -> int:
        return sum(1 for m in self.merges if m.method == method)


class _UnionFind:
    """Union-find whose root is always the lexicographically smallest id."""

    def __init__(self, ids: Iterable[str]) -> None:
        self.parent = {i: i for i in ids}

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        low, high = (ra, rb) if ra < rb else (rb, ra)
        self.parent[high] = low
        return True


def hamming(a: int, b: int) -> int:
    return bin((a ^ b) & 0xFFFFFFFFFFFFFFFF).count("1")


def _popcount64(values: np.ndarray) -> np.ndarray:
    bits = np.unpackbits(values.astype(">u8").view(np.uint8).reshape(-1, 8), axis=1)
    return bits.sum(axis=1)


def dedup(assets: Sequence[SvgAsset], threshold: int = DEFAULT_PHASH_THRESHOLD) -> DedupReport:
    ids = [a.asset_id for a in assets]
    if len(set(ids)) != len(ids):
        dupes = sorted(i for i, c in Counter(ids).items() if c > 1)
        raise DataError(f"duplicate asset ids: {', '.join(dupes[:5])}")
    uf = _UnionFind(ids)
    merges: List[Merge] = []

    by_fingerprint: Dict[str, List[str]] = {}
    for a in assets:
        by_fingerprint.setdefault(a.fingerprint, []).append(a.asset_id)
    for group in by_fingerprint.values():
        group = sorted(group)
        for other in group[1:]:
            if uf.union(group[0], other):
                merges.append(Merge(group[0], other, CODE_LEVEL))

    hashed = sorted(
        (a.asset_id, a.phash) for a in assets
        if a.phash is not None and a.render_status == RENDER_OK
    )
    if hashed:
        hash_ids = [h[0] for h in hashed]
        values = np.array([h[1] for h in hashed], dtype=np.uint64)
        for i in range(len(values) - 1):
            distances = _popcount64(values[i + 1:] ^ values[i])
            for j in np.nonzero(distances <= threshold)[0]:
                other = hash_ids[i + 1 + int(j)]
                if uf.union(hash_ids[i], other):
                    merges.append(Merge(hash_ids[i], other, IMAGE_LEVEL))

    members: Dict[str, List[str]] = {}
    for i in ids:
        members.setdefault(uf.find(i), []).append(i)
    methods: Dict[str, set] = {}
    for m in merges:
        methods.setdefault(uf.find(m.left), set()).add(m.method)
    clusters = tuple(
        Cluster(rep, tuple(sorted(group)), tuple(sorted(methods.get(rep, ()))))
        for rep, group in sorted(members.items())
    )
    failed = tuple(sorted(a.asset_id for a in assets if a.render_status != RENDER_OK))
    return DedupReport(clusters=clusters, merges=tuple(merges), render_failed=failed)


# =========================
# Sampling
# =========================
@dataclass(frozen=True)
class SamplingSpec:
    target: int
    seed: int = 0
    default_domain_cap: float = 1.0
    domain_caps: Mapping[str, float] = field(default_factory=dict)
    strata_quantiles: Tuple[float, ...] = (0.5,)
    strata_proportions: Tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self) -> None:
        if self.target < 1:
            raise SamplingSpecError("target sample size must be >= 1")
        for share in [self.default_domain_cap, *self.domain_caps.values()]:
            if not 0.0 <= share <= 1.0:
                raise SamplingSpecError(f"domain share {share} outside [0, 1]")
        if len(self.strata_proportions) != len(self.strata_quantiles) + 1:
            raise SamplingSpecError("need exactly one more proportion than quantile boundaries")
        if any(not 0.0 <= p <= 1.0 for p in self.strata_proportions):
            raise SamplingSpecError("stratum proportions must lie in [0, 1]")
        if abs(sum(self.strata_proportions) - 1.0) > 1e-9:
            raise SamplingSpecError("stratum proportions must sum to 1")
        q = self.strata_quantiles
        if any(not 0.0 < v < 1.0 for v in q) or any(a >= b for a, b in zip(q, q[1:])):
            raise SamplingSpecError("quantile boundaries must be increasing within (0, 1)")

    def cap_for(self, domain: str) -> float:
        return self.domain_caps.get(domain, self.default_domain_cap)


@dataclass(frozen=True)
class SampleResult:
    selected: Tuple[str, ...]
    target: int
    shortfall: int
    per_domain: Dict[str, int]
    per_stratum: Tuple[int, ...]
    stratum_targets: Tuple[int, ...]
    thresholds: Tuple[float, ...]


def apportion(total: int, proportions: Sequence[float]) -> List[int]:
    """Largest-remainder split of `total` by proportions; ties go to the lower stratum."""
    raw = [total * p for p in proportions]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _fill(
    queues: List[List[int]],
    domains: Sequence[str],
    quotas: Sequence[int],
    caps: Mapping[str, int],
    spill: Sequence[bool],
) -> List[int]:
    """Round-robin over strata up to each quota, then hand unmet quota to `spill` strata that still have assets."""
    pending = [deque(q) for q in queues]
    taken = [0] * len(queues)
    per_domain: Counter = Counter()
    picked: List[int] = []

    def take(limits: Sequence[int]) -> None:
        progress = True
        while progress and len(picked) < sum(quotas):
            progress = False
            for s, queue in enumerate(pending):
                if taken[s] >= limits[s] or len(picked) >= sum(quotas):
                    continue
                # domain counts only grow, so a full domain is skipped for good
                while queue and per_domain[domains[queue[0]]] >= caps[domains[queue[0]]]:
                    queue.popleft()
                if queue:
                    idx = queue.popleft()
                    picked.append(idx)
                    taken[s] += 1
                    per_domain[domains[idx]] += 1
                    progress = True

    take(quotas)
    if len(picked) < sum(quotas):
        take([sum(quotas) if ok else 0 for ok in spill])
    return picked


def _strata(ranked_counts: np.ndarray, quantiles: Sequence[float]) -> Tuple[np.ndarray, Tuple[float, ...]]:
    """Stratum per rank position. Cuts fall on quantile ranks, so tied counts never empty a stratum."""
    n = len(ranked_counts)
    cuts = np.array([int(math.floor(q * n)) for q in quantiles], dtype=int)
    strata = np.searchsorted(cuts, np.arange(n), side="right")
    thresholds = tuple(float(ranked_counts[min(c, n - 1)]) for c in cuts)
    return strata, thresholds


def sample(assets: Sequence[SvgAsset], spec: SamplingSpec) -> SampleResult:
    if not assets:
        raise NoAssetsError("no assets to sample")
    pool = sorted(assets, key=lambda a: (a.metrics.path_command_count, a.asset_id))
    counts = np.array([a.metrics.path_command_count for a in pool], dtype=float)
    strata, thresholds = _strata(counts, spec.strata_quantiles)
    domains = [a.domain for a in pool]

    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(pool))
    queues: List[List[int]] = [[] for _ in spec.strata_proportions]
    for idx in order:
        queues[int(strata[idx])].append(int(idx))

    # reachable size is monotone in the request, so dropping to it lands on the largest feasible size
    size = min(spec.target, len(pool))
    while True:
        quotas = apportion(size, spec.strata_proportions)
        caps = {d: int(math.floor(spec.cap_for(d) * size + 1e-9)) for d in set(domains)}
        picked = _fill(queues, domains, quotas, caps, [p > 0 for p in spec.strata_proportions])
        if len(picked) == size:
            break
        logger.debug("sample of %d infeasible, retrying at %d", size, len(picked))
        size = len(picked)

    selected = tuple(sorted(pool[i].asset_id for i in picked))
    per_stratum = [0] * len(queues)
    for i in picked:
        per_stratum[int(strata[i])] += 1
    shortfall = spec.target - len(selected)
    if shortfall:
        logger.warning("sampling shortfall: %d of %d requested", shortfall, spec.target)
    return SampleResult(
        selected=selected,
        target=spec.target,
        shortfall=shortfall,
        per_domain=dict(sorted(Counter(domains[i] for i in picked).items())),
        per_stratum=tuple(per_stratum),
        stratum_targets=tuple(quotas),
        thresholds=thresholds,
    )
