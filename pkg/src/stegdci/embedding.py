"""Change simulators: LSB matching, HILL-cost adaptive embedding, and S# application.

No message is ever encoded.  Each simulator samples the +-1 change process
a real embedder would produce, driven by a :class:`SeededRng` stream that
stands in for the (key, message) pair.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument, NumericalError
from .imaging import GrayImage, SeededRng

WET_COST = 1e10
RECIPROCAL_EPS = 1e-10
HILL_HIGH_PASS = np.array([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]], dtype=float)
HILL_L1_SIZE = 3
HILL_L2_SIZE = 15

LAMBDA_BRACKET = 1e3
MAX_BISECTIONS = 200
PAYLOAD_RTOL = 0.005
_SOLVER_RTOL = 1e-10
LOG2_3 = math.log2(3.0)


class Algorithm(enum.Enum):
    LsbMatching = "lsbm"
    HillAdaptive = "hill"

    @classmethod
    def parse(cls, name: str) -> "Algorithm":
        key = name.strip().lower()
        for a in cls:
            if key in (a.value, a.name.lower()):
                return a
        raise InvalidArgument(f"unknown algorithm {name!r} (expected lsbm or hill)")


@dataclass(frozen=True)
class StegoSpec:
    algorithm: Algorithm
    payload_bpp: float

    def __post_init__(self):
        if not isinstance(self.algorithm, Algorithm):
            object.__setattr__(self, "algorithm", Algorithm.parse(str(self.algorithm)))
        p = float(self.payload_bpp)
        if not (0.0 <= p <= 1.0) or math.isnan(p):
            raise InvalidArgument(f"payload must be in [0, 1] bpp, got {self.payload_bpp}")
        object.__setattr__(self, "payload_bpp", p)

    @property
    def alpha(self) -> float:
        """Selection rate for LSB matching (no matrix embedding, so alpha == payload)."""
        return self.payload_bpp

    def with_payload(self, bpp: float) -> "StegoSpec":
        return StegoSpec(self.algorithm, bpp)

    def to_json(self) -> dict:
        return {"algo": self.algorithm.value, "bpp": self.payload_bpp}

    def __str__(self):
        return f"{self.algorithm.value}@{self.payload_bpp:g}"


def _apply_changes(image: GrayImage, delta: np.ndarray) -> GrayImage:
    x = image.as_int()
    # saturated pixels flip the drawn direction instead of skipping the change
    delta = np.where((x == 0) & (delta < 0), 1, delta)
    delta = np.where((x == 255) & (delta > 0), -1, delta)
    return GrayImage((x + delta).astype(np.uint8))


def lsbm_simulate(image: GrayImage, alpha: float, rng: SeededRng) -> GrayImage:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return image
    u = rng.generator().random(image.pixels.shape)
    delta = np.zeros(u.shape, dtype=np.int16)
    # a selected pixel already carries the right LSB half the time, so only alpha/2 of pixels move
    delta[u < alpha / 4] = 1
    delta[(u >= alpha / 4) & (u < alpha / 2)] = -1
    return _apply_changes(image, delta)


def _box_mean(x: np.ndarray, size: int) -> np.ndarray:
    # direct separable sums: a running-sum filter loses precision next to wet (1e10) pixels
    k = np.full(size, 1.0 / size)
    out = ndimage.correlate1d(x, k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def hill_cost(image: GrayImage) -> np.ndarray:
    if image.width < 16 or image.height < 16:
        raise InvalidArgument(f"HILL costs need at least 16x16 pixels, got {image.width}x{image.height}")
    x = image.pixels.astype(float)
    high = np.abs(ndimage.convolve(x, HILL_HIGH_PASS, mode="reflect"))
    low1 = _box_mean(high, HILL_L1_SIZE)
    inv = 1.0 / (low1 + RECIPROCAL_EPS)
    cost = _box_mean(inv, HILL_L2_SIZE)
    # summation order can land a few ulps either side of the cap
    cost[cost >= WET_COST * (1 - 1e-9)] = WET_COST
    return cost


def ternary_entropy(p: np.ndarray) -> np.ndarray:
    """H3(p) in bits for change probability p in each direction."""
    p = np.asarray(p, dtype=float)
    q = 1.0 - 2.0 * p
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, -2.0 * p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
        b = np.where(q > 0, -q * np.log2(np.where(q > 0, q, 1.0)), 0.0)
    return a + b


def rates_for_lambda(cost: np.ndarray, lam: float) -> np.ndarray:
    e = np.exp(-lam * cost)
    return e / (1.0 + 2.0 * e)


def payload_to_rates(cost: np.ndarray, payload_bpp: float) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if not 0.0 <= payload_bpp <= LOG2_3:
        raise InvalidArgument(f"payload {payload_bpp} bpp infeasible (valid range [0, log2(3)])")
    if cost.size == 0 or not np.all(np.isfinite(cost)) or cost.min() < 0:
        raise InvalidArgument("cost map must be nonempty, finite and nonnegative")
    if payload_bpp == 0.0:
        return np.zeros_like(cost)
    target = payload_bpp * cost.size

    def message(lam):
        return float(ternary_entropy(rates_for_lambda(cost, lam)).sum())

    if message(0.0) <= target:
        return rates_for_lambda(cost, 0.0)
    lo, hi = 0.0, LAMBDA_BRACKET
    expansions = 0
    while message(hi) > target:
        lo, hi = hi, hi * 10.0
        expansions += 1
        if expansions > 30:
            raise NumericalError("could not bracket the payload multiplier")
    lam = hi
    for _ in range(MAX_BISECTIONS):
        lam = 0.5 * (lo + hi)
        m = message(lam)
        if abs(m - target) <= _SOLVER_RTOL * target:
            break
        if m > target:
            lo = lam
        else:
            hi = lam
    rates = rates_for_lambda(cost, lam)
    if abs(ternary_entropy(rates).sum() - target) > PAYLOAD_RTOL * target:
        raise NumericalError(f"payload bisection did not converge in {MAX_BISECTIONS} iterations")
    return rates


def adaptive_simulate(image: GrayImage, rates: np.ndarray, rng: SeededRng) -> GrayImage:
    rates = np.asarray(rates, dtype=float)
    if rates.shape != image.pixels.shape:
        raise InvalidArgument(f"rate map {rates.shape} does not match image {image.pixels.shape}")
    u = rng.generator().random(rates.shape)
    delta = np.zeros(rates.shape, dtype=np.int16)
    delta[u < rates] = 1
    delta[(u >= rates) & (u < 2 * rates)] = -1
    return _apply_changes(image, delta)


def hill_rates(image: GrayImage, payload_bpp: float) -> np.ndarray:
    return payload_to_rates(hill_cost(image), payload_bpp)


def embed_once(image: GrayImage, spec: StegoSpec, rng: SeededRng) -> GrayImage:
    if spec.payload_bpp == 0.0:
        return image
    if spec.algorithm is Algorithm.LsbMatching:
        return lsbm_simulate(image, spec.alpha, rng)
    return adaptive_simulate(image, hill_rates(image, spec.payload_bpp), rng)


def embed_set(images: Sequence[GrayImage], spec: StegoSpec, rng: SeededRng, jobs: int = 1) -> list:
    """S# over a set: image i always uses stream ``rng.child("embed", i)``."""
    streams = [rng.child("embed", i) for i in range(len(images))]
    if jobs <= 1 or len(images) < 2:
        return [embed_once(im, spec, s) for im, s in zip(images, streams)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda a: embed_once(a[0], spec, a[1]), zip(images, streams)))
