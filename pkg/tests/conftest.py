import os
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from PIL import Image

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.register_profile(
    "fast", max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


# =========================
# SVG fixtures
# =========================
def _block_patterns(count: int, seed: int = 2024) -> List[int]:
    """Distinct 4x4 on/off layouts with 5..11 filled cells."""
    rng = np.random.default_rng(seed)
    seen: List[int] = []
    while len(seen) < count:
        bits = int(rng.integers(0, 1 << 16))
        if 5 <= bin(bits).count("1") <= 11 and bits not in seen:
            seen.append(bits)
    return seen


def block_icon(bits: int, fill: str = "#000") -> str:
    rects = []
    for cell in range(16):
        if bits >> cell & 1:
            x, y = (cell % 4) * 16, (cell // 4) * 16
            rects.append(f'<rect x="{x}" y="{y}" width="16" height="16" fill="{fill}"/>')
    return (
        '<svg xmlns="http://www.w3.org/2000/svg" width="64" height="64" viewBox="0 0 64 64">'
        + "".join(rects) + "</svg>"
    )


def distinct_icons(count: int = 20) -> List[str]:
    return [block_icon(bits) for bits in _block_patterns(count)]


def reserialize(svg: str, variant: int) -> str:
    """Same drawing, different bytes: comments, whitespace, attribute order, float jitter."""
    if variant == 0:
        return svg.replace("><", ">\n   <").replace('<svg ', '<svg  version="1.1" ', 1)
    if variant == 1:
        return svg.replace('width="16" height="16"', 'height="16.0000001"   width="15.9999999"')
    if variant == 2:
        return svg.replace("<rect", "<!-- cell --><rect").replace(
            "</svg>", "<metadata>exported by an editor</metadata></svg>"
        )
    if variant == 3:
        return svg.replace('x="0"', 'x="0.000001"').replace('y="0"', 'y="-0.0000004"')
    raise ValueError(variant)


MIXED_SHAPES = [
    '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 32 32"><circle cx="16" cy="16" r="12" fill="red"/></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" width="24" height="24"><path d="M2 2 L22 2 22 22 2 22Z" fill="none" stroke="#333" stroke-width="2"/></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 100 50"><g transform="translate(10,5)"><ellipse cx="40" cy="20" rx="30.12345" ry="15.5"/></g></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 10 10"><path d="m1 1 2 0 0 2-2 0z" style="fill:blue;stroke:none"/></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 40 40"><path d="M5 20 A15 15 0 1 0 35 20 A15 15 0 1 0 5 20" fill="#0a0"/></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" viewBox="0 0 20 20"><defs><rect id="r" width="5" height="5"/></defs><use xlink:href="#r" x="2.5" y="2.5"/></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 30 30"><polygon points="15,2 28,28 2,28" fill="#fc0" stroke="#000"/></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" width="2in" height="1in"><rect x="10" y="10" width="100" height="50" fill="url(#g)"/><linearGradient id="g"><stop offset="0" stop-color="#fff"/><stop offset="1" stop-color="#00f"/></linearGradient></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 16 16"><path d="M0 8C0 3.58 3.58 0 8 0s8 3.58 8 8-3.58 8-8 8S0 12.42 0 8z"/></svg>',
    '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 50 50"><line x1="0" y1="0" x2="50" y2="50" stroke="black" stroke-width="3.333333"/></svg>',
]


def corpus_of(n: int) -> Dict[str, str]:
    """n named SVG sources mixing block icons, their re-serializations and free shapes."""
    icons = distinct_icons(40)
    out: Dict[str, str] = {}
    i = 0
    while len(out) < n:
        base = icons[i % len(icons)] if i % 3 else MIXED_SHAPES[i % len(MIXED_SHAPES)]
        variant = (i // 3) % 5
        out[f"s{i:04d}"] = base if variant == 4 else reserialize(base, variant) if "rect" in base else base
        i += 1
    return out


# =========================
# Arena fixtures
# =========================
def write_png(path: Path, seed: int, size: int = 32) -> None:
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def make_arena(
    root: Path,
    models: Sequence[str],
    doc_ids: Sequence[str],
    text_for=lambda model, doc: f"# {doc}\n\ntranscribed by {model}\n",
) -> Dict[str, Path]:
    docs_dir, transcripts = root / "documents", root / "transcripts"
    for i, doc in enumerate(doc_ids):
        write_png(docs_dir / f"{doc}.png", seed=i)
        for m in models:
            p = transcripts / m / f"{doc}.md"
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text_for(m, doc), encoding="utf-8")
    models_file = root / "models.txt"
    models_file.write_text("\n".join(models) + "\n", encoding="utf-8")
    return {"documents": docs_dir, "transcripts": transcripts, "models": models_file, "log": root / "battles.jsonl"}


@pytest.fixture
def arena_dir(tmp_path):
    return make_arena(tmp_path, ["alpha", "beta"], ["doc1", "doc2", "doc3"])
