import io

import numpy as np
import pytest
from PIL import Image
from scipy.fft import dctn

from mocr import render_compare as rc
from mocr.errors import DimensionMismatchError, RenderError
from mocr.render_compare import Bitmap, PerceptualHash
from mocr.svg_engine import canonicalize
from tests.conftest import MIXED_SHAPES, corpus_of, distinct_icons

NS = 'xmlns="http://www.w3.org/2000/svg"'
BLACK = (0, 0, 0, 255)


def textured(size=64, seed=0):
    rng = np.random.default_rng(seed)
    rgb = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    alpha = np.full((size, size, 1), 255, dtype=np.uint8)
    return Bitmap(size, size, np.concatenate([rgb, alpha], axis=2))


def smooth(size=256, seed=None):
    """Gradient plus a few blobs: low-frequency structure a DCT hash can latch onto."""
    y, x = np.mgrid[0:size, 0:size] / size
    if seed is None:
        tilt, freq, cx, cy = 120, 6, 0.3, 0.6
    else:
        rng = np.random.default_rng(seed)
        tilt, freq, cx, cy = rng.uniform(60, 160), rng.uniform(2, 9), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)
    lum = tilt * x + 60 * np.sin(freq * y) + 60 * ((x - cx) ** 2 + (y - cy) ** 2 < 0.04)
    lum = np.clip(lum + 40, 0, 255).astype(np.uint8)
    return Bitmap(size, size, np.dstack([lum, lum, lum, np.full_like(lum, 255)]))


# =========================
# Bitmap
# =========================
def test_bitmap_invariants():
    with pytest.raises(ValueError):
        Bitmap.from_buffer(2, 2, b"\x00" * 15)
    with pytest.raises(ValueError):
        Bitmap.solid(0, 4)
    bm = Bitmap.solid(3, 2, (1, 2, 3, 4))
    assert len(bm.data) == 3 * 2 * 4
    assert Bitmap.from_buffer(3, 2, bm.data) == bm


def test_lossless_png_round_trip(tmp_path):
    bm = textured(17)
    path = tmp_path / "x.png"
    bm.save(path)
    assert Bitmap.load(path) == bm


# =========================
# Rendering
# =========================
def test_empty_drawing_is_white():
    bm = rc.render('<svg viewBox="0 0 1 1"/>', 8, 8)
    assert bm == Bitmap.solid(8, 8)
    assert rc.is_blank(bm)


def test_full_canvas_black_rect():
    bm = rc.render(f'<svg {NS} viewBox="0 0 8 8"><rect width="8" height="8" fill="#000"/></svg>', 8, 8)
    assert np.all(bm.pixels[..., :3] == 0)
    assert np.all(bm.pixels[..., 3] == 255)


def test_render_is_deterministic():
    a = rc.render(MIXED_SHAPES[4], 48, 48)
    b = rc.render(MIXED_SHAPES[4], 48, 48)
    assert a.data == b.data


def test_letterboxing_keeps_aspect_ratio():
    bm = rc.render(f'<svg {NS} viewBox="0 0 20 10"><rect width="20" height="10" fill="#000"/></svg>', 40, 40)
    lum = bm.luminance()
    assert np.all(lum[:8] == 255) and np.all(lum[-8:] == 255)
    assert np.all(lum[12:28] == 0)


def test_render_errors():
    with pytest.raises(RenderError):
        rc.render("<svg", 8, 8)
    with pytest.raises(RenderError):
        rc.render("<notsvg/>", 8, 8)
    with pytest.raises(ValueError):
        rc.render('<svg viewBox="0 0 1 1"/>', 0, 8)


# =========================
# Perceptual hash
# =========================
def test_phash_is_deterministic():
    bm = rc.render(MIXED_SHAPES[0], 64, 64)
    assert rc.phash(bm).distance(rc.phash(bm)) == 0


def test_solid_image_hashes_to_zero():
    assert rc.phash(Bitmap.solid(40, 30, (90, 90, 90, 255))).value == 0


def test_phash_survives_lossless_reencode(tmp_path):
    bm = rc.render(distinct_icons(1)[0], 128, 128)
    buf = io.BytesIO()
    bm.to_image().save(buf, format="PNG", optimize=True)
    reloaded = Bitmap.from_image(Image.open(io.BytesIO(buf.getvalue())))
    assert rc.phash(reloaded) == rc.phash(bm)


def with_noise(bitmap, seed):
    rng = np.random.default_rng(seed)
    noisy = bitmap.pixels.astype(int)
    noisy[..., :3] = np.clip(noisy[..., :3] + rng.integers(-2, 3, size=noisy.shape[:2] + (3,)), 0, 255)
    return Bitmap(bitmap.width, bitmap.height, noisy)


def test_phash_robust_to_small_noise():
    fixtures = [smooth(128, seed=n) for n in range(25)]
    fixtures += [rc.render(icon, 128, 128) for icon in distinct_icons(25)]
    close = sum(rc.phash(bm).distance(rc.phash(with_noise(bm, n))) <= 10 for n, bm in enumerate(fixtures))
    assert close >= 0.95 * len(fixtures)


def test_phash_matches_reference_dct():
    bm = smooth()
    lum = bm.luminance()
    small = lum.reshape(32, 8, 32, 8).mean(axis=(1, 3))
    block = np.round(dctn(small, type=2, norm="ortho")[:8, :8], 6).flatten()
    block[0] = 0.0
    bits = "".join("1" if v > np.median(block) else "0" for v in block)
    assert rc.phash(bm).value == int(bits, 2)


def test_hash_distance_is_a_metric():
    a, b, c = PerceptualHash(0x0F0F), PerceptualHash(0xFF00), PerceptualHash(0x1234)
    assert a.distance(b) == b.distance(a)
    assert a.distance(c) <= a.distance(b) + b.distance(c)
    assert PerceptualHash.from_hex(a.hex) == a


# =========================
# Similarities
# =========================
def test_pixel_similarity_examples():
    white, black = Bitmap.solid(10, 10), Bitmap.solid(10, 10, BLACK)
    assert rc.pixel_similarity(white, white) == 1.0
    assert rc.pixel_similarity(black, white) == 0.0
    half = np.array(white.pixels)
    half[:5] = BLACK
    assert rc.pixel_similarity(Bitmap(10, 10, half), white) == pytest.approx(0.5)


def test_transparent_pixels_count_as_white():
    clear = Bitmap.solid(4, 4, (0, 0, 0, 0))
    assert rc.pixel_similarity(clear, Bitmap.solid(4, 4)) == 1.0


def test_similarities_are_symmetric():
    a, b = textured(32, 1), textured(32, 2)
    assert rc.pixel_similarity(a, b) == rc.pixel_similarity(b, a)
    assert rc.structural_similarity(a, b) == pytest.approx(rc.structural_similarity(b, a), abs=1e-12)


def test_structural_similarity_identity_and_inversion():
    img = textured(64)
    assert rc.structural_similarity(img, img) == 1.0
    flat = Bitmap.solid(16, 16, (77, 77, 77, 255))
    assert rc.structural_similarity(flat, flat) == 1.0
    inverted = np.array(img.pixels)
    inverted[..., :3] = 255 - inverted[..., :3]
    assert rc.structural_similarity(img, Bitmap(64, 64, inverted)) < 0.2


def test_structural_similarity_sees_the_far_edges():
    white = Bitmap.solid(18, 18)
    for strip in (np.s_[:, 16:], np.s_[16:, :]):
        px = np.array(white.pixels)
        px[strip] = BLACK
        assert rc.structural_similarity(white, Bitmap(18, 18, px)) < 1.0


def test_small_images_fall_back_to_pixel_similarity():
    a, b = Bitmap.solid(5, 5), Bitmap.solid(5, 5, (128, 128, 128, 255))
    assert rc.structural_similarity(a, b) == rc.pixel_similarity(a, b)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        rc.pixel_similarity(Bitmap.solid(4, 4), Bitmap.solid(4, 5))
    with pytest.raises(ValueError):
        rc.structural_similarity(Bitmap.solid(9, 9), Bitmap.solid(8, 9))


def test_more_flipped_pixels_never_score_higher():
    base = Bitmap.solid(16, 16)
    previous = 1.0
    for n in range(0, 257, 32):
        px = np.array(base.pixels).reshape(-1, 4)
        px[:n] = BLACK
        score = rc.pixel_similarity(Bitmap(16, 16, px.reshape(16, 16, 4)), base)
        assert score <= previous
        previous = score


# =========================
# Reconstruction score
# =========================
def test_self_comparison_is_exact():
    svg = MIXED_SHAPES[2]
    breakdown = rc.reconstruction_score(rc.render(svg, 80, 40), svg)
    assert breakdown.composite == 1.0
    assert not breakdown.failed


def test_truncated_prediction_scores_zero():
    breakdown = rc.reconstruction_score(Bitmap.solid(16, 16), "<svg")
    assert (breakdown.pixel, breakdown.structural, breakdown.composite) == (0.0, 0.0, 0.0)
    assert breakdown.failed and breakdown.error
    assert breakdown.to_record("x")["schema"] == "mocr-score/1"


@pytest.mark.parametrize("size", ['viewBox="0 0 1e-320 1e-320"', 'width="1e-320" height="1e-320"'])
def test_degenerate_drawing_size_fails_cleanly(size):
    svg = f'<svg {NS} {size}><rect width="1" height="1"/></svg>'
    with pytest.raises(RenderError):
        rc.render(svg, 8, 8)
    breakdown = rc.reconstruction_score(Bitmap.solid(8, 8), svg)
    assert breakdown.failed and breakdown.composite == 0.0


def test_white_reference_vs_empty_svg():
    assert rc.reconstruction_score(Bitmap.solid(32, 32), '<svg viewBox="0 0 1 1"/>').composite == 1.0


def test_composite_is_equal_weight_blend():
    ref = rc.render(MIXED_SHAPES[0], 32, 32)
    b = rc.reconstruction_score(ref, MIXED_SHAPES[6])
    assert b.composite == pytest.approx(0.5 * b.pixel + 0.5 * b.structural)
    assert 0.0 <= b.composite < 1.0


def test_text_elements_flag_font_fallback():
    svg = f'<svg {NS} viewBox="0 0 40 20"><text x="2" y="15">Hi</text></svg>'
    assert rc.reconstruction_score(Bitmap.solid(40, 20), svg).font_fallback


@pytest.mark.parametrize("raw", MIXED_SHAPES)
def test_canonicalization_preserves_rendering(raw):
    reference = rc.render(raw, 64, 64)
    assert rc.reconstruction_score(reference, canonicalize(raw)).composite >= 0.98


def test_canonicalization_preserves_rendering_across_corpus():
    corpus = corpus_of(200)
    kept = sum(
        rc.reconstruction_score(rc.render(raw, 64, 64), canonicalize(raw)).composite >= 0.98
        for raw in corpus.values()
    )
    assert kept >= 0.99 * len(corpus)
