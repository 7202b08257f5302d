"""Grayscale image I/O, deterministic random streams and synthetic covers.

Randomness: every random draw in the package comes from a :class:`SeededRng`,
a (seed, stream) pair feeding numpy's Philox4x64-10 counter-based generator.
Child streams are derived with 64-bit FNV-1a over the parent stream id, an
operation tag and an index, so per-image draws never depend on iteration
order or on how work is scheduled.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument, IoError, ParseError, UnsupportedFormat

RNG_ALGORITHM = "numpy.random.Philox (4x64-10), key=(seed, stream)"
RNG_SCHEME_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream identified by ``(seed, stream)``."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) <= _MASK64:
                raise InvalidArgument(f"{name} must be a 64-bit unsigned integer, got {v!r}")

    def child(self, tag: str, index: int = 0) -> "SeededRng":
        payload = f"{self.stream}:{tag}:{index}".encode()
        return SeededRng(self.seed, fnv1a_64(payload))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[int(self.seed), int(self.stream)]))


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image; ``pixels`` is a read-only (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise InvalidArgument(f"expected a non-empty 2-D pixel grid, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.integer) or np.issubdtype(px.dtype, np.floating):
                if px.min() < 0 or px.max() > 255:
                    raise InvalidArgument("pixel values must lie in [0, 255]")
                if np.issubdtype(px.dtype, np.floating) and not np.all(px == np.round(px)):
                    raise InvalidArgument("pixel values must be integers")
            px = px.astype(np.uint8)
        else:
            px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_list(cls, width: int, height: int, values: Iterable[int]) -> "GrayImage":
        arr = np.asarray(list(values), dtype=np.int64)
        if arr.size != width * height:
            raise InvalidArgument(f"{arr.size} values for a {width}x{height} image")
        return cls(arr.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def as_int(self) -> np.ndarray:
        return self.pixels.astype(np.int16)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


# --------------------------------------------------------------------------- PGM

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data: bytes, count: int):
    pos = 0
    out = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ParseError("truncated PGM header")
        out.append(m.group(1))
        pos = m.end()
    return out, pos


def read_pgm(path) -> GrayImage:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        (magic, w, h, maxval), pos = _header_tokens(data, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ParseError(f"malformed PGM header in {path}") from exc
    if magic not in (b"P2", b"P5"):
        raise ParseError(f"{path}: not a grayscale PGM (magic {magic!r})")
    if width <= 0 or height <= 0:
        raise ParseError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: maxval {maxval} (only 255 is supported)")
    n = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates header from raster
        raster = data[pos + 1 : pos + 1 + n]
        if len(raster) != n:
            raise ParseError(f"{path}: expected {n} pixel bytes, found {len(raster)}")
        values = np.frombuffer(raster, dtype=np.uint8)
    else:
        body = re.sub(rb"#[^\n]*", b"", data[pos:])
        try:
            values = np.array([int(t) for t in body.split()], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(f"{path}: non-integer pixel data") from exc
        if values.size != n:
            raise ParseError(f"{path}: expected {n} pixel values, found {values.size}")
        if values.size and (values.min() < 0 or values.max() > 255):
            raise ParseError(f"{path}: pixel value out of range")
    return GrayImage(values.reshape(height, width).astype(np.uint8))


def write_pgm(image: GrayImage, path) -> None:
    header = f"P5\n{image.width} {image.height}\n255\n".encode()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(image.pixels.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Optional[str] = None  # "cover" | "stego" | None
    algo: Optional[str] = None
    bpp: Optional[float] = None


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.label not in (None, "cover", "stego"):
                raise InvalidArgument(f"bad label {e.label!r} for {e.path}")
            if e.path in seen:
                raise InvalidArgument(f"duplicate manifest path {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    @property
    def labels(self) -> Optional[list]:
        """0/1 truth labels, or None when any entry is unlabeled."""
        if any(e.label is None for e in self.entries):
            return None
        return [int(e.label == "stego") for e in self.entries]

    def load_images(self, base: Optional[Path] = None) -> list:
        out = []
        for e in self.entries:
            p = Path(e.path)
            if base is not None and not p.is_absolute():
                p = Path(base) / p
            out.append(read_pgm(p))
        return out

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoError(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest {path} is not valid JSON: {exc}") from exc
        if isinstance(raw, dict) and "entries" in raw:
            raw = raw["entries"]
        if not isinstance(raw, list):
            raise ParseError("manifest must be a JSON array of entries")
        entries = []
        for item in raw:
            if not isinstance(item, dict) or "path" not in item:
                raise ParseError(f"bad manifest entry {item!r}")
            bpp = item.get("bpp")
            entries.append(ManifestEntry(str(item["path"]), item.get("label"), item.get("algo"),
                                         None if bpp is None else float(bpp)))
        return cls(entries)

    def save(self, path) -> None:
        data = [{"path": e.path, "label": e.label, "algo": e.algo, "bpp": e.bpp} for e in self.entries]
        try:
            Path(path).write_text(json.dumps(data, indent=1))
        except OSError as exc:
            raise IoError(f"cannot write manifest {path}: {exc}") from exc

    @classmethod
    def from_directory(cls, directory, label: Optional[str] = None) -> "DatasetManifest":
        d = Path(directory)
        if not d.is_dir():
            raise IoError(f"{directory} is not a directory")
        files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".pgm")
        return cls([ManifestEntry(str(p), label) for p in files])


# ------------------------------------------------------------- synthetic covers

# Residual scale (std of horizontal differences before modulation) grows
# linearly with roughness; local contrast is a log-normal texture map so the
# residual histogram is a scale mixture (heavy tailed, Cauchy-like).
RESIDUAL_SCALE_MIN = 0.9
RESIDUAL_SCALE_SPAN = 7.0
CONTRAST_LOG_STD = 0.3
CONTRAST_LOG_STD_SPAN = 0.8
CONTRAST_SMOOTHING = 8.0
GRADIENT_AMPLITUDE = 40.0
MEAN_LEVEL = 128.0


def binomial_kernel(taps: int) -> np.ndarray:
    n = taps - 1
    k = np.array([math.comb(n, i) for i in range(taps)], dtype=float)
    return k / k.sum()


def _smoothed_noise(gen: np.random.Generator, shape, taps: int) -> np.ndarray:
    noise = gen.standard_normal(shape)
    if taps == 1:
        return noise
    k = binomial_kernel(taps)
    out = ndimage.correlate1d(noise, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    # renormalise to unit variance, then to unit lag-1 difference std
    n = taps - 1
    var = (math.comb(2 * n, n) / 4.0**n) ** 2
    rho = n / (n + 1.0)
    return out / math.sqrt(var * 2.0 * (1.0 - rho))


def synth_cover(width: int, height: int, roughness: float, rng: SeededRng,
                sensor_noise: float = 0.0) -> GrayImage:
    """Smoothed Gaussian texture with log-normal local contrast, a planar gradient
    and optional white sensor noise of std ``sensor_noise`` gray levels."""
    if width < 16 or height < 16:
        raise InvalidArgument(f"synthetic covers need at least 16x16 pixels, got {width}x{height}")
    if not 0.0 <= roughness <= 1.0:
        raise InvalidArgument(f"roughness must be in [0, 1], got {roughness}")
    if sensor_noise < 0:
        raise InvalidArgument(f"sensor noise must be >= 0, got {sensor_noise}")
    gen = rng.generator()
    taps = 2 * math.ceil(8 * (1.0 - roughness)) + 1
    texture = _smoothed_noise(gen, (height, width), taps)

    contrast = ndimage.gaussian_filter(gen.standard_normal((height, width)), CONTRAST_SMOOTHING, mode="reflect")
    sd = contrast.std()
    contrast = contrast / sd if sd > 0 else contrast
    scale = (RESIDUAL_SCALE_MIN + RESIDUAL_SCALE_SPAN * roughness) * np.exp(
        (CONTRAST_LOG_STD + CONTRAST_LOG_STD_SPAN * roughness) * contrast)

    theta = gen.uniform(0.0, 2.0 * math.pi)
    yy, xx = np.mgrid[0:height, 0:width]
    u = (math.cos(theta) * (xx / max(width - 1, 1) - 0.5) + math.sin(theta) * (yy / max(height - 1, 1) - 0.5))
    gradient = GRADIENT_AMPLITUDE * u

    img = MEAN_LEVEL + gradient + scale * texture
    if sensor_noise > 0:
        img = img + sensor_noise * gen.standard_normal((height, width))
    return GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class CorpusProfile:
    """Mixture of smooth and textured covers.

    Each image is textured with probability ``textured_fraction``; roughness is
    then uniform over the matching range, and sensor noise uniform over
    ``sensor_noise``.
    """

    smooth: tuple = (0.3, 0.4)
    textured: tuple = (0.8, 1.0)
    textured_fraction: float = 0.2
    sensor_noise: tuple = (0.0, 0.0)

    def draw(self, rng: SeededRng) -> tuple:
        g = rng.generator()
        lo, hi = self.textured if g.random() < self.textured_fraction else self.smooth
        r = float(g.uniform(lo, hi))
        n = float(g.uniform(*self.sensor_noise))
        return r, n


DEFAULT_PROFILE = CorpusProfile()


def synth_corpus(count: int, rng: SeededRng, size: int = 256,
                 profile: CorpusProfile = DEFAULT_PROFILE) -> list:
    out = []
    for i in range(count):
        r, n = profile.draw(rng.child("corpus-params", i))
        out.append(synth_cover(size, size, r, rng.child("corpus-cover", i), n))
    return out


def load_images(source) -> tuple:
    """Images plus truth labels (or None) from a directory of PGMs or a manifest JSON."""
    p = Path(source)
    if p.is_dir():
        m = DatasetManifest.from_directory(p)
        return m.load_images(), None, m
    m = DatasetManifest.load(p)
    return m.load_images(p.parent), m.labels, m


def image_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise IoError(f"{directory} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".pgm")


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        os.makedirs(p, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc
    return p
