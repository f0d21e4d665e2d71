# mocr/corpus.py
"""
SVG corpus pipeline: scan -> canonicalize/measure/render -> dedup -> sample ->
manifest + image-SVG pairs. Also batch render-and-compare scoring.

Per-asset failures are recorded and the run continues; only I/O problems with
the input or output directories abort it.
"""
from __future__ import annotations

import fnmatch
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from tqdm import tqdm

from mocr import render_compare, svg_engine
from mocr.errors import DataError, NoAssetsError, RenderError
from mocr.svg_engine import SvgAsset

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "mocr-svg/1"
PAIRS_SCHEMA = "mocr-pairs/1"
DEFAULT_DOMAIN = "default"


# =========================
# Domains
# =========================
def load_domain_map(path: Union[str, Path, None]) -> Dict[str, str]:
    """JSON object of glob pattern -> domain label; first match wins."""
    if path is None:
        return {}
    try:
        mapping = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"domain map is not JSON: {e.msg}", line=e.lineno, column=e.colno, path=str(path)) from None
    if not isinstance(mapping, dict) or not all(
        isinstance(k, str) and isinstance(v, str) and v for k, v in mapping.items()
    ):
        raise DataError("domain map must be an object of pattern -> non-empty label", path=str(path))
    return mapping


def domain_for(rel_path: str, mapping: Mapping[str, str]) -> str:
    for pattern, label in mapping.items():
        if fnmatch.fnmatchcase(rel_path, pattern):
            return label
    parts = rel_path.split("/")
    return parts[0] if len(parts) > 1 else DEFAULT_DOMAIN


# =========================
# Assets
# =========================
@dataclass(frozen=True)
class AssetFailure:
    asset_id: str
    path: str
    domain: str
    error: str

    def to_record(self) -> Dict[str, object]:
        return {"schema": MANIFEST_SCHEMA, "id": self.asset_id, "domain": self.domain,
                "path": self.path, "error": self.error}


def build_asset(
    asset_id: str,
    domain: str,
    raw_text: str,
    *,
    hash_size: int = 256,
    path: Optional[str] = None,
) -> Tuple[SvgAsset, Dict[str, int]]:
    """Canonicalize, measure, render and hash one SVG. Parse errors propagate."""
    report = svg_engine.canonicalize_report(raw_text)
    metrics = svg_engine.complexity(report.text)
    phash = None
    status = svg_engine.RENDER_FAILED
    try:
        bitmap = render_compare.render(report.text, hash_size, hash_size)
    except RenderError as e:
        logger.debug("render failed for %s: %s", asset_id, e)
    else:
        status = svg_engine.RENDER_BLANK if render_compare.is_blank(bitmap) else svg_engine.RENDER_OK
        phash = render_compare.phash(bitmap).value
    asset = SvgAsset(
        asset_id=asset_id,
        domain=domain,
        raw_text=raw_text,
        canonical_text=report.text,
        metrics=metrics,
        fingerprint=svg_engine.fingerprint(report.text),
        phash=phash,
        render_status=status,
        path=path,
        flags=report.flags,
    )
    return asset, report.removed


def scan_svgs(root: Union[str, Path]) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"input directory not found: {root}")
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".svg")


# =========================
# Pipeline
# =========================
@dataclass
class PipelineReport:
    scanned: int = 0
    failures: List[AssetFailure] = field(default_factory=list)
    assets: List[SvgAsset] = field(default_factory=list)
    removed: Dict[str, Dict[str, int]] = field(default_factory=dict)
    dedup: Optional[svg_engine.DedupReport] = None
    sample: Optional[svg_engine.SampleResult] = None

    def stage_counts(self) -> Dict[str, int]:
        d = self.dedup
        return {
            "scanned": self.scanned,
            "canonicalized": len(self.assets),
            "rejected": len(self.failures),
            "render_failed": sum(1 for a in self.assets if a.render_status == svg_engine.RENDER_FAILED),
            "render_blank": sum(1 for a in self.assets if a.render_status == svg_engine.RENDER_BLANK),
            "code_level_merges": d.count(svg_engine.CODE_LEVEL) if d else 0,
            "image_level_merges": d.count(svg_engine.IMAGE_LEVEL) if d else 0,
            "unique": len(d.clusters) if d else 0,
            "selected": len(self.sample.selected) if self.sample else 0,
            "shortfall": self.sample.shortfall if self.sample else 0,
        }

    def lines(self) -> List[str]:
        return [f"{k:>20}: {v}" for k, v in self.stage_counts().items()]


def run_pipeline(
    input_dir: Union[str, Path],
    spec: svg_engine.SamplingSpec,
    *,
    domain_map: Optional[Mapping[str, str]] = None,
    hash_size: int = 256,
    threshold: int = svg_engine.DEFAULT_PHASH_THRESHOLD,
    jobs: int = 1,
    progress: bool = False,
) -> PipelineReport:
    root = Path(input_dir)
    files = scan_svgs(root)
    if not files:
        raise NoAssetsError(f"no .svg files under {root}")
    mapping = domain_map or {}
    report = PipelineReport(scanned=len(files))

    def work(path: Path):
        rel = path.relative_to(root).as_posix()
        asset_id = rel[: -len(path.suffix)]
        domain = domain_for(rel, mapping)
        try:
            raw = path.read_text(encoding="utf-8")
            return build_asset(asset_id, domain, raw, hash_size=hash_size, path=rel)
        except (DataError, OSError, UnicodeDecodeError) as e:
            return AssetFailure(asset_id, rel, domain, f"{type(e).__name__}: {e}")

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(tqdm(pool.map(work, files), total=len(files), desc="svg assets", disable=not progress))

    for result in results:
        if isinstance(result, AssetFailure):
            report.failures.append(result)
            logger.info("rejected %s: %s", result.path, result.error)
        else:
            asset, removed = result
            report.assets.append(asset)
            report.removed[asset.asset_id] = removed
    if not report.assets:
        raise NoAssetsError(f"none of the {len(files)} .svg files could be canonicalized")

    report.dedup = svg_engine.dedup(report.assets, threshold)
    by_id = {a.asset_id: a for a in report.assets}
    pool_assets = [
        by_id[rep] for rep in report.dedup.representatives
        if by_id[rep].render_status == svg_engine.RENDER_OK
    ]
    if not pool_assets:
        raise NoAssetsError("no renderable unique assets left to sample")
    report.sample = svg_engine.sample(pool_assets, spec)
    return report


def _duplicate_of(dedup: svg_engine.DedupReport) -> Dict[str, str]:
    out = {}
    for c in dedup.clusters:
        for m in c.members:
            if m != c.representative:
                out[m] = c.representative
    return out


def write_manifest(report: PipelineReport, path: Union[str, Path]) -> None:
    """One line per scanned file, sorted by id. No timestamps, so reruns are identical."""
    dupes = _duplicate_of(report.dedup) if report.dedup else {}
    selected = set(report.sample.selected) if report.sample else set()
    rows = []
    for a in report.assets:
        rec = {"schema": MANIFEST_SCHEMA, **a.to_record()}
        rec["removed"] = dict(sorted(report.removed.get(a.asset_id, {}).items()))
        rec["duplicate_of"] = dupes.get(a.asset_id)
        rec["selected"] = a.asset_id in selected
        rows.append(rec)
    rows.extend(f.to_record() for f in report.failures)
    rows.sort(key=lambda r: r["id"])
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


def export_pairs(report: PipelineReport, out_dir: Union[str, Path], size: int = 256) -> Path:
    """Write svg/<id>.svg and png/<id>.png for every selected asset, listed in pairs.jsonl."""
    out = Path(out_dir)
    by_id = {a.asset_id: a for a in report.assets}
    lines = []
    for asset_id in report.sample.selected if report.sample else ():
        asset = by_id[asset_id]
        svg_path = out / "svg" / f"{asset_id}.svg"
        png_path = out / "png" / f"{asset_id}.png"
        svg_path.parent.mkdir(parents=True, exist_ok=True)
        png_path.parent.mkdir(parents=True, exist_ok=True)
        svg_path.write_text(asset.canonical_text, encoding="utf-8")
        render_compare.render(asset.canonical_text, size, size).save(png_path)
        lines.append(json.dumps({
            "schema": PAIRS_SCHEMA,
            "id": asset_id,
            "domain": asset.domain,
            "svg": svg_path.relative_to(out).as_posix(),
            "png": png_path.relative_to(out).as_posix(),
            "metrics": asset.metrics.to_dict(),
        }, sort_keys=True))
    pairs = out / "pairs.jsonl"
    pairs.parent.mkdir(parents=True, exist_ok=True)
    pairs.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return pairs


# =========================
# Batch scoring
# =========================
REFERENCE_SUFFIXES = (".png", ".jpg", ".jpeg", ".webp")


@dataclass(frozen=True)
class ScoredPair:
    pair_id: str
    domain: str
    score: Optional[render_compare.ScoreBreakdown]
    missing: bool = False

    def to_record(self) -> Dict[str, object]:
        if self.score is None:
            return {"schema": render_compare.SCORE_SCHEMA, "id": self.pair_id, "domain": self.domain,
                    "missing": True}
        return {**self.score.to_record(self.pair_id), "domain": self.domain, "missing": False}


def score_directories(
    references: Union[str, Path],
    predictions: Union[str, Path],
    *,
    progress: bool = False,
) -> List[ScoredPair]:
    """Match <ref>/<stem>.png with <pred>/<stem>.svg by relative stem and score each pair."""
    ref_root, pred_root = Path(references), Path(predictions)
    for d in (ref_root, pred_root):
        if not d.is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    refs = {
        p.relative_to(ref_root).with_suffix("").as_posix(): p
        for p in sorted(ref_root.rglob("*"))
        if p.is_file() and p.suffix.lower() in REFERENCE_SUFFIXES
    }
    out = []
    for stem, ref_path in tqdm(sorted(refs.items()), desc="scoring", disable=not progress):
        parts = stem.split("/")
        domain = parts[0] if len(parts) > 1 else DEFAULT_DOMAIN
        pred_path = pred_root / f"{stem}.svg"
        if not pred_path.exists():
            out.append(ScoredPair(stem, domain, None, missing=True))
            continue
        reference = render_compare.Bitmap.load(ref_path)
        predicted = pred_path.read_text(encoding="utf-8", errors="replace")
        out.append(ScoredPair(stem, domain, render_compare.reconstruction_score(reference, predicted)))
    return out


def domain_means(pairs: Iterable[ScoredPair]) -> Dict[str, float]:
    """Mean composite per domain; a missing prediction counts as 0."""
    totals: Counter = Counter()
    counts: Counter = Counter()
    for p in pairs:
        totals[p.domain] += p.score.composite if p.score else 0.0
        counts[p.domain] += 1
    return {d: totals[d] / counts[d] for d in sorted(counts)}
