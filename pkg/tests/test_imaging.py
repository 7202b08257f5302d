import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from stegdci.errors import InvalidArgument, IoError, ParseError, UnsupportedFormat
from stegdci.imaging import (DatasetManifest, GrayImage, ManifestEntry, SeededRng, fnv1a_64, read_pgm,
                             synth_corpus, synth_cover, write_pgm)
from stegdci.features import Predictor, residual, residual_histogram

EXPECTED_2X2 = np.array([[0, 255], [128, 64]], dtype=np.uint8)


def test_read_p2(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2 2 2 255\n0 255 128 64\n")
    img = read_pgm(p)
    assert (img.width, img.height) == (2, 2)
    assert np.array_equal(img.pixels, EXPECTED_2X2)


def test_read_p5_matches_p2(tmp_path):
    p = tmp_path / "b.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0x00, 0xFF, 0x80, 0x40]))
    assert np.array_equal(read_pgm(p).pixels, EXPECTED_2X2)


def test_header_comments_are_skipped(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    assert np.array_equal(read_pgm(p).pixels, EXPECTED_2X2)


@pytest.mark.parametrize("payload", [
    b"P5\n2 2\n255\n" + bytes([1, 2, 3]),
    b"P2 2 2 255\n0 1 2\n",
    b"P5\n2 2\n",
    b"P6\n2 2\n255\n" + bytes(12),
    b"P5\nx 2\n255\n" + bytes(4),
])
def test_malformed_inputs_raise_parse_error(tmp_path, payload):
    p = tmp_path / "bad.pgm"
    p.write_bytes(payload)
    with pytest.raises(ParseError):
        read_pgm(p)


def test_maxval_other_than_255_is_unsupported(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n2 2\n15\n" + bytes(4))
    with pytest.raises(UnsupportedFormat):
        read_pgm(p)


def test_minimal_file(tmp_path):
    p = tmp_path / "one.pgm"
    write_pgm(GrayImage(np.zeros((1, 1), dtype=np.uint8)), p)
    data = p.read_bytes()
    assert data == b"P5\n1 1\n255\n\x00"


def test_write_to_missing_directory_raises(tmp_path):
    with pytest.raises(IoError):
        write_pgm(GrayImage(np.zeros((2, 2), dtype=np.uint8)), tmp_path / "nope" / "x.pgm")


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_pgm_round_trip(tmp_path_factory, pixels):
    p = tmp_path_factory.mktemp("rt") / "x.pgm"
    img = GrayImage(pixels)
    write_pgm(img, p)
    assert read_pgm(p) == img


def test_gray_image_is_immutable_and_validated():
    img = GrayImage(np.array([[1, 2], [3, 4]]))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 9
    with pytest.raises(InvalidArgument):
        GrayImage(np.array([[256]]))
    with pytest.raises(InvalidArgument):
        GrayImage.from_list(2, 2, [1, 2, 3])


def test_fnv1a_reference_values():
    # published FNV-1a 64-bit test vectors
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_rng_streams_are_reproducible_and_distinct():
    a = SeededRng(7, 3).generator().random(5)
    b = SeededRng(7, 3).generator().random(5)
    c = SeededRng(7, 4).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert SeededRng(7).child("x", 1) == SeededRng(7).child("x", 1)
    assert SeededRng(7).child("x", 1) != SeededRng(7).child("x", 2)


def test_rng_rejects_out_of_range_seed():
    with pytest.raises(InvalidArgument):
        SeededRng(-1)
    with pytest.raises(InvalidArgument):
        SeededRng(2**64)


def test_synth_cover_determinism_and_size_check():
    a = synth_cover(32, 24, 0.3, SeededRng(5))
    b = synth_cover(32, 24, 0.3, SeededRng(5))
    assert a == b
    assert (a.width, a.height) == (32, 24)
    with pytest.raises(InvalidArgument):
        synth_cover(8, 8, 0.3, SeededRng(5))


def test_smooth_covers_keep_residuals_small():
    # frozen after measuring seeds 1..100 (worst case 0.9962 over 30 seeds during calibration)
    worst = 1.0
    for seed in range(1, 101):
        img = synth_cover(256, 256, 0.0, SeededRng(seed))
        r = residual(img, Predictor.Horizontal)
        worst = min(worst, float(np.mean(np.abs(r) <= 4)))
    assert worst >= 0.99


@pytest.mark.parametrize("roughness", [0.0, 0.25, 0.5])
def test_residuals_are_heavy_tailed(roughness):
    for seed in range(1, 6):
        r = residual(synth_cover(128, 128, roughness, SeededRng(seed)), Predictor.Horizontal).ravel()
        assert stats.kurtosis(r, fisher=False) > 3.0


def test_corpus_satisfies_bounded_bin_gaps():
    for img in synth_corpus(30, SeededRng(77)):
        h = residual_histogram(residual(img, Predictor.Horizontal))
        window = np.array([h[k] for k in range(-10, 11)], dtype=float)
        assert np.abs(np.diff(window)).max() <= 0.05 * h.total


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([ManifestEntry("a.pgm", "cover"), ManifestEntry("b.pgm", "stego", "hill", 0.4),
                         ManifestEntry("c.pgm")])
    p = tmp_path / "m.json"
    m.save(p)
    raw = json.loads(p.read_text())
    assert raw[1] == {"path": "b.pgm", "label": "stego", "algo": "hill", "bpp": 0.4}
    back = DatasetManifest.load(p)
    assert back.entries == m.entries
    assert back.labels is None


def test_manifest_rejects_duplicates_and_bad_labels():
    with pytest.raises(InvalidArgument):
        DatasetManifest([ManifestEntry("a"), ManifestEntry("a")])
    with pytest.raises(InvalidArgument):
        DatasetManifest([ManifestEntry("a", "maybe")])


def test_manifest_bad_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        DatasetManifest.load(p)
