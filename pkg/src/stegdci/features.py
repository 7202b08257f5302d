"""Residuals, residual histograms, SPAM co-occurrences and min/max histograms.

Index convention: a pixel x_{i,j} has column i and row j, so ``pixels[j, i]``.
Every predictor looks one pixel back along its direction:

    Horizontal     x_{i-1, j}
    Vertical       x_{i, j-1}
    Diagonal       x_{i-1, j-1}
    MinorDiagonal  x_{i-1, j+1}
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgument, IoError, ParseError, UnsupportedVersion
from .imaging import GrayImage

FORMAT_VERSION = 1
FULL_RANGE = 255


class Predictor(enum.Enum):
    Horizontal = "h"
    Vertical = "v"
    Diagonal = "d"
    MinorDiagonal = "m"


def residual(image: GrayImage, predictor: Predictor) -> np.ndarray:
    x = image.as_int()
    if predictor is Predictor.Vertical:
        if x.shape[0] < 2:
            raise InvalidArgument("vertical residuals need at least 2 rows")
        return x[1:, :] - x[:-1, :]
    if x.shape[1] < 2:
        raise InvalidArgument("residuals need at least 2 columns")
    if predictor is Predictor.Horizontal:
        return x[:, 1:] - x[:, :-1]
    if x.shape[0] < 2:
        raise InvalidArgument("diagonal residuals need at least 2 rows")
    if predictor is Predictor.Diagonal:
        return x[1:, 1:] - x[:-1, :-1]
    return x[:-1, 1:] - x[1:, :-1]


def trunc(values, T: int) -> np.ndarray:
    return np.clip(values, -T, T)


@dataclass(frozen=True, eq=False)
class ResidualHistogram:
    """Bin counts ``counts[k - v_min]`` for residual values k in [v_min, v_min + len - 1]."""

    counts: np.ndarray
    v_min: int

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size == 0:
            raise InvalidArgument("histogram counts must be a nonempty 1-D array")
        if np.any(c < 0):
            raise InvalidArgument("histogram counts must be nonnegative")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "v_min", int(self.v_min))

    @property
    def v_max(self) -> int:
        return self.v_min + len(self.counts) - 1

    @property
    def total(self):
        return self.counts.sum()

    @property
    def bins(self) -> np.ndarray:
        return np.arange(self.v_min, self.v_max + 1)

    def __getitem__(self, k: int):
        if k < self.v_min or k > self.v_max:
            return 0
        return self.counts[k - self.v_min]

    def window(self, lo: int, hi: int) -> np.ndarray:
        return np.array([self[k] for k in range(lo, hi + 1)])

    def __eq__(self, other):
        return (isinstance(other, ResidualHistogram) and self.v_min == other.v_min
                and np.array_equal(self.counts, other.counts))

    @classmethod
    def centered(cls, counts: Sequence) -> "ResidualHistogram":
        """Histogram over [-T, T] given its 2T+1 bins."""
        c = np.asarray(counts)
        if c.size % 2 != 1:
            raise InvalidArgument("a centered histogram needs an odd number of bins")
        return cls(c, -(c.size // 2))


def residual_histogram(residuals: np.ndarray, T: Optional[int] = None) -> ResidualHistogram:
    r = np.asarray(residuals, dtype=np.int64).ravel()
    if T is None:
        return ResidualHistogram(np.bincount(r + FULL_RANGE, minlength=2 * FULL_RANGE + 1), -FULL_RANGE)
    if T < 1:
        raise InvalidArgument(f"truncation threshold must be >= 1, got {T}")
    return ResidualHistogram(np.bincount(trunc(r, T) + T, minlength=2 * T + 1), -T)


# SPAM directions as (dy, dx); residual is X[p] - X[p + step]
SPAM_STRAIGHT = ((0, 1), (0, -1), (1, 0), (-1, 0))
SPAM_DIAGONAL = ((1, 1), (-1, -1), (1, -1), (-1, 1))


def _directional_cooccurrence(x: np.ndarray, step, order: int, T: int) -> np.ndarray:
    dy, dx = step
    n = order + 1
    H, W = x.shape
    y0, y1 = max(0, -n * dy), H - max(0, n * dy)
    x0, x1 = max(0, -n * dx), W - max(0, n * dx)

    def view(k):
        return x[y0 + k * dy : y1 + k * dy, x0 + k * dx : x1 + k * dx]

    base = 2 * T + 1
    index = np.zeros((y1 - y0, x1 - x0), dtype=np.int64)
    for k in range(n):
        index = index * base + (trunc(view(k) - view(k + 1), T) + T)
    return np.bincount(index.ravel(), minlength=base**n).astype(float)


def spam_cooccurrence(image: GrayImage, order: int, T: int, normalize: bool = True) -> np.ndarray:
    """Pooled SPAM features: straight directions first, then diagonals, each (2T+1)^(order+1) cells."""
    if order not in (1, 2):
        raise InvalidArgument(f"SPAM order must be 1 or 2, got {order}")
    if T < 1:
        raise InvalidArgument(f"truncation threshold must be >= 1, got {T}")
    if min(image.width, image.height) < order + 2:
        raise InvalidArgument(f"order-{order} SPAM needs at least {order + 2} pixels per side")
    x = image.as_int()
    pooled = []
    for group in (SPAM_STRAIGHT, SPAM_DIAGONAL):
        mats = []
        for step in group:
            m = _directional_cooccurrence(x, step, order, T)
            if normalize:
                m = m / m.sum()
            mats.append(m)
        pooled.append(np.mean(mats, axis=0))
    return np.concatenate(pooled)


def minmax_residuals(image: GrayImage):
    """(r_min, r_max) over the four directional residuals, for pixels where all four exist."""
    x = image.as_int()
    if x.shape[0] < 3 or x.shape[1] < 3:
        raise InvalidArgument("min/max residuals need at least a 3x3 image")
    c = x[1:-1, 1:]
    r = np.stack([
        c - x[1:-1, :-1],   # horizontal
        c - x[:-2, 1:],     # vertical
        c - x[:-2, :-1],    # diagonal
        c - x[2:, :-1],     # minor diagonal
    ])
    return r.min(axis=0), r.max(axis=0)


def minmax_histogram(image: GrayImage, T: int, normalize: bool = False) -> np.ndarray:
    if T < 1:
        raise InvalidArgument(f"truncation threshold must be >= 1, got {T}")
    rmin, rmax = minmax_residuals(image)
    hmin = residual_histogram(rmin, T).counts.astype(float)
    hmax = residual_histogram(rmax, T).counts.astype(float)
    if normalize:
        hmin, hmax = hmin / rmin.size, hmax / rmax.size
    return np.concatenate([hmin, hmax])


class Submodel(enum.Enum):
    ResidualHist = "ResidualHist"
    Spam1 = "Spam1"
    Spam2 = "Spam2"
    MinMax = "MinMax"


CANONICAL_ORDER = (Submodel.ResidualHist, Submodel.Spam1, Submodel.Spam2, Submodel.MinMax)


def submodel_dimension(sub: Submodel, T: int) -> int:
    b = 2 * T + 1
    return {Submodel.ResidualHist: 4 * b, Submodel.Spam1: 2 * b**2,
            Submodel.Spam2: 2 * b**3, Submodel.MinMax: 2 * b}[sub]


@dataclass(frozen=True, eq=False)
class FeatureSetDescriptor:
    """Which submodels to extract, their truncation thresholds, and normalization.

    ``T`` applies to every submodel not listed in ``thresholds``.
    """

    submodels: tuple
    T: int = 4
    thresholds: tuple = ()  # ((Submodel, T), ...)
    normalize: bool = True

    def __post_init__(self):
        subs = set()
        for s in self.submodels:
            subs.add(s if isinstance(s, Submodel) else Submodel(s))
        if not subs:
            raise InvalidArgument("descriptor needs at least one submodel")
        ordered = tuple(s for s in CANONICAL_ORDER if s in subs)
        object.__setattr__(self, "submodels", ordered)
        th = dict((Submodel(k) if not isinstance(k, Submodel) else k, int(v))
                  for k, v in (self.thresholds.items() if isinstance(self.thresholds, dict) else self.thresholds))
        for k, v in list(th.items()) + [(None, int(self.T))]:
            if v < 1:
                raise InvalidArgument(f"truncation threshold must be >= 1, got {v}")
        object.__setattr__(self, "thresholds", tuple(sorted(((k, v) for k, v in th.items()),
                                                            key=lambda kv: CANONICAL_ORDER.index(kv[0]))))
        object.__setattr__(self, "T", int(self.T))

    def threshold(self, sub: Submodel) -> int:
        return dict(self.thresholds).get(sub, self.T)

    def _key(self) -> tuple:
        # two descriptors are the same when they extract the same vector
        return self.submodels, tuple(self.threshold(s) for s in self.submodels), self.normalize

    def __eq__(self, other):
        return isinstance(other, FeatureSetDescriptor) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @property
    def dimension(self) -> int:
        return sum(submodel_dimension(s, self.threshold(s)) for s in self.submodels)

    def slices(self) -> dict:
        out, start = {}, 0
        for s in self.submodels:
            d = submodel_dimension(s, self.threshold(s))
            out[s] = slice(start, start + d)
            start += d
        return out

    def to_json(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "submodels": [s.value for s in self.submodels],
            "T": {s.value: self.threshold(s) for s in self.submodels},
            "normalize": self.normalize,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FeatureSetDescriptor":
        if not isinstance(data, dict):
            raise ParseError("descriptor must be a JSON object")
        if data.get("format", FORMAT_VERSION) != FORMAT_VERSION:
            raise UnsupportedVersion(f"descriptor format {data.get('format')} not supported")
        try:
            subs = [Submodel(s) for s in data["submodels"]]
            T = data.get("T", 4)
            if isinstance(T, dict):
                th = {Submodel(k): int(v) for k, v in T.items()}
                return cls(tuple(subs), 4, th, bool(data.get("normalize", True)))
            return cls(tuple(subs), int(T), (), bool(data.get("normalize", True)))
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, InvalidArgument):
                raise
            raise ParseError(f"malformed descriptor: {exc}") from exc

    @property
    def hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def feature_names(self) -> list:
        names = []
        for s in self.submodels:
            T = self.threshold(s)
            b = 2 * T + 1
            if s is Submodel.ResidualHist:
                names += [f"RH.{p.value}[{k}]" for p in Predictor for k in range(-T, T + 1)]
            elif s is Submodel.MinMax:
                names += [f"MM.{w}[{k}]" for w in ("min", "max") for k in range(-T, T + 1)]
            else:
                order = 1 if s is Submodel.Spam1 else 2
                for cls_name in ("straight", "diag"):
                    for idx in np.ndindex(*([b] * (order + 1))):
                        cell = ",".join(str(i - T) for i in idx)
                        names.append(f"{s.value}.{cls_name}[{cell}]")
        return names


def rm_like_descriptor(normalize: bool = True) -> FeatureSetDescriptor:
    """Reduced rich set used by default (D = 950)."""
    return FeatureSetDescriptor(
        CANONICAL_ORDER, 4,
        ((Submodel.ResidualHist, 10), (Submodel.Spam1, 4), (Submodel.Spam2, 3), (Submodel.MinMax, 4)),
        normalize)


def extract(image: GrayImage, descriptor: FeatureSetDescriptor) -> np.ndarray:
    parts = []
    norm = descriptor.normalize
    for s in descriptor.submodels:
        T = descriptor.threshold(s)
        if s is Submodel.ResidualHist:
            for p in Predictor:
                r = residual(image, p)
                h = residual_histogram(r, T).counts.astype(float)
                parts.append(h / r.size if norm else h)
        elif s is Submodel.Spam1:
            parts.append(spam_cooccurrence(image, 1, T, norm))
        elif s is Submodel.Spam2:
            parts.append(spam_cooccurrence(image, 2, T, norm))
        else:
            parts.append(minmax_histogram(image, T, norm))
    v = np.concatenate(parts)
    assert v.size == descriptor.dimension
    return v


def extract_many(images: Sequence[GrayImage], descriptor: FeatureSetDescriptor, jobs: int = 1) -> np.ndarray:
    if len(images) == 0:
        return np.zeros((0, descriptor.dimension))
    if jobs <= 1:
        rows = [extract(im, descriptor) for im in images]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda im: extract(im, descriptor), images))
    return np.vstack(rows)


# ------------------------------------------------------------------ persistence

def save_features(path, matrix: np.ndarray, descriptor: FeatureSetDescriptor,
                  names: Optional[Iterable[str]] = None) -> None:
    path = Path(path)
    matrix = np.asarray(matrix, dtype=float).reshape(-1, descriptor.dimension)
    names = list(names) if names is not None else [str(i) for i in range(len(matrix))]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"descriptor={descriptor.hash}"] + [f"f{i}" for i in range(descriptor.dimension)])
            for name, row in zip(names, matrix):
                w.writerow([name] + [repr(float(v)) for v in row])
        sidecar = dict(descriptor.to_json(), hash=descriptor.hash, dimension=descriptor.dimension)
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))
    except OSError as exc:
        raise IoError(f"cannot write features to {path}: {exc}") from exc


def load_features(path):
    """(matrix, descriptor, row names) from a feature CSV and its sidecar."""
    path = Path(path)
    try:
        side = json.loads(Path(str(path) + ".json").read_text())
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read features {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad descriptor sidecar for {path}") from exc
    descriptor = FeatureSetDescriptor.from_json(side)
    if not rows or not rows[0] or rows[0][0] != f"descriptor={descriptor.hash}":
        raise ParseError(f"{path}: header does not match the sidecar descriptor")
    try:
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric feature value") from exc
    data = data.reshape(-1, descriptor.dimension)
    return data, descriptor, [r[0] for r in rows[1:]]
