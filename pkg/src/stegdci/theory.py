"""Expected-histogram operators, sign predictions, Cauchy fits and directionality experiments.

Histogram operators treat bins outside the stored range as empty.  Sign
claims are only made for interior bins (two bins away from either edge).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .embedding import StegoSpec, embed_once, Algorithm, hill_rates
from .errors import AssumptionViolated, InvalidArgument, NumericalError
from .features import (FeatureSetDescriptor, Predictor, ResidualHistogram, extract,
                       residual, residual_histogram)
from .imaging import GrayImage, SeededRng

CENTRAL_BINS = 10  # k in [-10, 10]


class Sign(enum.Enum):
    Negative = "-"
    Positive = "+"
    Indeterminate = "0"


@dataclass(frozen=True, eq=False)
class ExpectedHistogram:
    values: np.ndarray
    v_min: int

    def __getitem__(self, k: int) -> float:
        i = k - self.v_min
        return float(self.values[i]) if 0 <= i < len(self.values) else 0.0

    @property
    def v_max(self) -> int:
        return self.v_min + len(self.values) - 1

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def as_histogram(self) -> ResidualHistogram:
        return ResidualHistogram(self.values, self.v_min)


@dataclass(frozen=True)
class AdaptiveChangeModel:
    """Marginal change probability ``beta`` and conditional ``beta_prime`` (neighbour changed too)."""

    beta: float
    beta_prime: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 0.5:
            raise InvalidArgument(f"beta must be in [0, 1/2], got {self.beta}")
        if not 0.0 <= self.beta_prime <= 1.0:
            raise InvalidArgument(f"beta_prime must be in [0, 1], got {self.beta_prime}")
        if self.beta < 1.0 and not 0.0 <= self.beta_double_prime <= 1.0:
            raise InvalidArgument("beta'' = beta(1-beta')/(1-beta) falls outside [0, 1]")

    @property
    def beta_double_prime(self) -> float:
        """Probability the neighbour changes given the pixel itself does not."""
        return self.beta * (1.0 - self.beta_prime) / (1.0 - self.beta)


def _values(h) -> tuple:
    if isinstance(h, (ResidualHistogram, ExpectedHistogram)):
        vals = h.counts if isinstance(h, ResidualHistogram) else h.values
        return np.asarray(vals, dtype=float), h.v_min
    arr = np.asarray(h, dtype=float)
    return arr, -(len(arr) // 2)


def _shift(v: np.ndarray, s: int) -> np.ndarray:
    """out[i] = v[i + s], zero outside."""
    out = np.zeros_like(v)
    n = len(v)
    if s >= 0:
        out[: n - s] = v[s:]
    else:
        out[-s:] = v[: n + s]
    return out


def expected_step_approx(h, alpha: float) -> ExpectedHistogram:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must be in [0, 1], got {alpha}")
    v, v_min = _values(h)
    out = (1.0 - alpha) * v + (alpha / 2.0) * (_shift(v, -1) + _shift(v, 1))
    return ExpectedHistogram(out, v_min)


def expected_step_adaptive(h, model: AdaptiveChangeModel) -> ExpectedHistogram:
    b, bp = model.beta, model.beta_prime
    v, v_min = _values(h)
    both = b * bp
    out = ((1.0 - 2.0 * b + both) * v
           + b * (1.0 - bp) * (_shift(v, -1) + _shift(v, 1))
           + (both / 2.0) * v
           + (both / 4.0) * (_shift(v, -2) + _shift(v, 2)))
    return ExpectedHistogram(out, v_min)


def expected_step_exact(h, alpha: float) -> ExpectedHistogram:
    """Exact expectation under independent changes, i.e. the adaptive step with beta' = beta."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must be in [0, 1], got {alpha}")
    beta = alpha / 2.0
    return expected_step_adaptive(h, AdaptiveChangeModel(beta, beta))


def phi(alpha: float) -> float:
    """Convex weight splitting the second-order variation between the two midpoint gaps."""
    if not 0.0 < alpha <= 0.5:
        raise AssumptionViolated(f"phi is only defined for 0 < alpha <= 1/2, got {alpha}")
    return (2.0 - 4.0 * alpha) / (2.0 - 3.0 * alpha)


def _sign_of(x: float, tol: float) -> Sign:
    if x > tol:
        return Sign.Positive
    if x < -tol:
        return Sign.Negative
    return Sign.Indeterminate


def _interior(v_min: int, n: int, k: int, reach: int):
    if not (v_min + reach <= k <= v_min + n - 1 - reach):
        raise InvalidArgument(f"bin {k} is not interior to [{v_min}, {v_min + n - 1}]")


def predict_sign_first(h, k: int, tol: float = 0.0) -> Sign:
    """Sign of the expected first variation of bin k: negative iff h_k lies above its neighbours' midpoint."""
    v, v_min = _values(h)
    _interior(v_min, len(v), k, 1)
    i = k - v_min
    return _sign_of((v[i - 1] + v[i + 1]) / 2.0 - v[i], tol)


def predict_sign_second(h, k: int, alpha: float, tol: float = 0.0) -> Sign:
    """Sufficient-condition sign of the expected second variation; needs alpha <= 1/2."""
    if alpha > 0.5:
        raise AssumptionViolated(f"second-order sign prediction requires alpha <= 1/2, got {alpha}")
    v, v_min = _values(h)
    _interior(v_min, len(v), k, 2)
    i = k - v_min
    near = _sign_of((v[i - 1] + v[i + 1]) / 2.0 - v[i], tol)
    far = _sign_of((v[i - 2] + v[i + 2]) / 2.0 - v[i], tol)
    return near if near == far else Sign.Indeterminate


def sign_vector(values: np.ndarray, tol: float = 0.0) -> list:
    return [_sign_of(float(x), tol) for x in values]


def max_bin_gap(h, lo: Optional[int] = None, hi: Optional[int] = None) -> float:
    """Largest |h_{k+1} - h_k| over [lo, hi] (the whole histogram by default)."""
    v, v_min = _values(h)
    lo = v_min if lo is None else lo
    hi = v_min + len(v) - 1 if hi is None else hi
    seg = np.array([v[k - v_min] if 0 <= k - v_min < len(v) else 0.0 for k in range(lo, hi + 1)])
    return float(np.abs(np.diff(seg)).max()) if len(seg) > 1 else 0.0


# ---------------------------------------------------------------- Cauchy model

@dataclass(frozen=True)
class CauchyFit:
    gamma: float
    loglik: float
    tau: float = 1.0

    @property
    def inflection(self) -> float:
        return self.gamma / math.sqrt(3.0)

    @property
    def concavity_interval(self) -> tuple:
        return (-self.inflection, self.inflection)

    def density(self, s) -> np.ndarray:
        return cauchy_pdf(np.asarray(s, dtype=float) * self.tau, self.gamma)

    def predicted_first_sign(self, k: int) -> Sign:
        """Concave centre loses mass, convex flanks gain it."""
        a = abs(k * self.tau)
        if a < self.inflection:
            return Sign.Negative
        if a > self.inflection:
            return Sign.Positive
        return Sign.Indeterminate


def cauchy_pdf(s, gamma: float):
    return gamma / (math.pi * (np.square(s) + gamma * gamma))


def cauchy_second_derivative(s, gamma: float):
    s = np.asarray(s, dtype=float)
    return 2.0 * gamma * (3.0 * s * s - gamma * gamma) / (math.pi * (s * s + gamma * gamma) ** 3)


GAMMA_UPPER = 256.0
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def cauchy_loglik(h, gamma: float, tau: float = 1.0) -> float:
    """Sum_k h_k log f(k tau; gamma), with f renormalised over the histogram support."""
    v, v_min = _values(h)
    s = (np.arange(len(v)) + v_min) * tau
    f = cauchy_pdf(s, gamma)
    mask = v > 0
    return float(np.sum(v[mask] * np.log(f[mask])) - v.sum() * math.log(f.sum()))


def fit_cauchy(h, tol: float = 1e-7) -> CauchyFit:
    v, v_min = _values(h)
    if np.count_nonzero(v) < 2:
        raise NumericalError("cannot fit a scale to a histogram with fewer than two occupied bins")
    # golden-section search over log(gamma) on (0, 256]
    lo, hi = math.log(1e-3), math.log(GAMMA_UPPER)
    f = lambda t: -cauchy_loglik(h, math.exp(t))
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = f(d)
    gamma = math.exp(0.5 * (lo + hi))
    ll = cauchy_loglik(h, gamma)
    if not math.isfinite(ll):
        raise NumericalError("Cauchy log-likelihood is not finite at the optimum")
    return CauchyFit(gamma, ll)


# ------------------------------------------------------- Monte-Carlo experiments

def horizontal_histogram(image: GrayImage) -> ResidualHistogram:
    return residual_histogram(residual(image, Predictor.Horizontal))


@dataclass
class MonteCarloDeltas:
    cover: ResidualHistogram
    mean_first: np.ndarray
    mean_second: np.ndarray
    se_first: np.ndarray
    se_second: np.ndarray
    repetitions: int

    @property
    def v_min(self) -> int:
        return self.cover.v_min

    def at(self, k: int) -> tuple:
        i = k - self.v_min
        return self.mean_first[i], self.mean_second[i], self.se_first[i], self.se_second[i]


def monte_carlo_deltas(image: GrayImage, spec: StegoSpec, repetitions: int, rng: SeededRng) -> MonteCarloDeltas:
    if repetitions < 1:
        raise InvalidArgument("repetitions must be >= 1")
    h0 = horizontal_histogram(image)
    base = h0.counts.astype(float)
    s1 = np.zeros_like(base)
    s2 = np.zeros_like(base)
    q1 = np.zeros_like(base)
    q2 = np.zeros_like(base)
    for r in range(repetitions):
        once = embed_once(image, spec, rng.child("mc-first", r))
        twice = embed_once(once, spec, rng.child("mc-second", r))
        h1 = horizontal_histogram(once).counts.astype(float)
        h2 = horizontal_histogram(twice).counts.astype(float)
        d1, d2 = h1 - base, h2 - h1
        s1 += d1
        s2 += d2
        q1 += d1 * d1
        q2 += d2 * d2
    n = float(repetitions)
    m1, m2 = s1 / n, s2 / n
    if repetitions > 1:
        se1 = np.sqrt(np.maximum(q1 / n - m1 * m1, 0.0) * n / (n - 1) / n)
        se2 = np.sqrt(np.maximum(q2 / n - m2 * m2, 0.0) * n / (n - 1) / n)
    else:
        se1 = np.zeros_like(m1)
        se2 = np.zeros_like(m2)
    return MonteCarloDeltas(h0, m1, m2, se1, se2, repetitions)


def model_deltas(h, alpha: float) -> tuple:
    """Expected first and second variations under the leading-order model."""
    h1 = expected_step_approx(h, alpha)
    h2 = expected_step_approx(h1, alpha)
    v, _ = _values(h)
    return h1.values - v, h2.values - h1.values


def preservation_count(image: GrayImage, spec: StegoSpec, rng: SeededRng,
                       window: int = CENTRAL_BINS) -> int:
    """Central bins whose first and second variations share a strict sign (one realisation)."""
    once = embed_once(image, spec, rng.child("preserve-first"))
    twice = embed_once(once, spec, rng.child("preserve-second"))
    h0, h1, h2 = (horizontal_histogram(x) for x in (image, once, twice))
    ks = range(-window, window + 1)
    d1 = np.array([float(h1[k]) - float(h0[k]) for k in ks])
    d2 = np.array([float(h2[k]) - float(h1[k]) for k in ks])
    return int(np.sum(d1 * d2 > 0))


def estimate_beta_prime(image: GrayImage, spec: StegoSpec) -> AdaptiveChangeModel:
    """Marginal and neighbour-conditional change probabilities implied by the simulator's rate map."""
    if spec.algorithm is Algorithm.LsbMatching:
        b = spec.alpha / 2.0
        return AdaptiveChangeModel(b, b)
    p = hill_rates(image, spec.payload_bpp)
    change = 2.0 * p
    left, right = change[:, :-1], change[:, 1:]
    beta = float(right.mean())
    joint = float((left * right).mean())
    return AdaptiveChangeModel(beta, joint / beta if beta > 0 else 0.0)


# -------------------------------------------------------------- directionality

@dataclass
class DirectionalityReport:
    flags: np.ndarray            # (images, features) bool: strict hard directionality
    feature_names: list
    preservation: np.ndarray     # per image: sign-preserving central bins of the horizontal histogram

    @property
    def n_images(self) -> int:
        return self.flags.shape[0]

    @property
    def per_feature_counts(self) -> np.ndarray:
        return self.flags.sum(axis=0)

    @property
    def per_feature_rate(self) -> np.ndarray:
        return self.flags.mean(axis=0)

    def fraction_directional(self, threshold: float = 0.5) -> float:
        """Fraction of features directional for more than ``threshold`` of the images."""
        return float(np.mean(self.per_feature_rate > threshold))

    def subset_rate(self, prefix: str) -> float:
        idx = [i for i, n in enumerate(self.feature_names) if n.startswith(prefix)]
        return float(self.per_feature_rate[idx].mean()) if idx else float("nan")


def directional_flags(f0: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    return (f1 - f0) * (f2 - f1) > 0


def image_directionality(image: GrayImage, spec: StegoSpec, descriptor: FeatureSetDescriptor,
                         rng: SeededRng) -> tuple:
    """(feature flags, preservation count) for one image from one pair of subsequent embeddings."""
    once = embed_once(image, spec, rng.child("dir-first"))
    twice = embed_once(once, spec, rng.child("dir-second"))
    f0, f1, f2 = (extract(x, descriptor) for x in (image, once, twice))
    h0, h1, h2 = (horizontal_histogram(x) for x in (image, once, twice))
    ks = range(-CENTRAL_BINS, CENTRAL_BINS + 1)
    d1 = np.array([float(h1[k]) - float(h0[k]) for k in ks])
    d2 = np.array([float(h2[k]) - float(h1[k]) for k in ks])
    return directional_flags(f0, f1, f2), int(np.sum(d1 * d2 > 0))


def directionality_scan(images: Sequence[GrayImage], spec: StegoSpec, descriptor: FeatureSetDescriptor,
                        rng: SeededRng, jobs: int = 1) -> DirectionalityReport:
    if len(images) == 0:
        raise InvalidArgument("directionality scan needs at least one image")
    work = [(im, rng.child("directionality", i)) for i, im in enumerate(images)]
    run = lambda a: image_directionality(a[0], spec, descriptor, a[1])
    if jobs <= 1:
        results = [run(a) for a in work]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, work))
    flags = np.vstack([r[0] for r in results])
    pres = np.array([r[1] for r in results])
    return DirectionalityReport(flags, descriptor.feature_names(), pres)


# --------------------------------------------------------------------- ablation

class AblationMode(enum.Enum):
    NDFO = "ndfo"        # keep non-directional features only
    DFO = "dfo"          # keep directional features only
    RRF = "rrf"          # erase a random subset the size of the NDFO erasure
    HalfDFR = "halfdfr"  # erase a random half of the directional features


def ablation_mask(flags: np.ndarray, mode: AblationMode, rng: SeededRng) -> np.ndarray:
    """Boolean (images, features) mask of entries to erase."""
    flags = np.asarray(flags, dtype=bool)
    if mode is AblationMode.NDFO:
        return flags.copy()
    if mode is AblationMode.DFO:
        return ~flags
    gen = rng.child("ablation-" + mode.value).generator()
    erase = np.zeros_like(flags)
    for i, row in enumerate(flags):
        if mode is AblationMode.RRF:
            idx = gen.choice(row.size, size=int(row.sum()), replace=False)
        else:
            directional = np.flatnonzero(row)
            idx = gen.choice(directional, size=directional.size // 2, replace=False)
        erase[i, idx] = True
    return erase


def ablate(features: np.ndarray, flags: np.ndarray, mode: AblationMode, rng: SeededRng) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape != np.shape(flags):
        raise InvalidArgument(f"flags {np.shape(flags)} do not match features {features.shape}")
    out = features.copy()
    out[ablation_mask(flags, mode, rng)] = 0.0
    return out


@dataclass
class AblationReport:
    mode: AblationMode
    err: float
    tp: int
    tn: int
    fp: int
    fn: int
    b_as_cover_ratio: Optional[float]  # fraction of S#(test) images the primary model calls cover

    def to_json(self) -> dict:
        return {"mode": self.mode.value, "err": self.err, "TP": self.tp, "TN": self.tn, "FP": self.fp,
                "FN": self.fn, "b_as_cover_ratio": self.b_as_cover_ratio}


def ablation_classify(train_x, train_y, train_flags, test_x, test_y, test_flags, mode: AblationMode,
                      rng: SeededRng, config=None, test_b_x=None) -> AblationReport:
    """Erase features per image according to ``mode``, train the primary model, and score it.

    ``test_b_x`` (features of S# applied to each test image) is ablated with the
    flags of its source image and used for the B-as-cover ratio.
    """
    from .classifier import TrainConfig, predict_many, train

    config = config or TrainConfig()
    xa = ablate(train_x, train_flags, mode, rng.child("ablate-train"))
    xt = ablate(test_x, test_flags, mode, rng.child("ablate-test"))
    model = train(xa, train_y, config)
    pred, _ = predict_many(model, xt)
    y = np.asarray(test_y, dtype=int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    ratio = None
    if test_b_x is not None:
        xb = ablate(test_b_x, test_flags, mode, rng.child("ablate-test"))
        pb, _ = predict_many(model, xb)
        ratio = float(np.mean(pb == 0))
    return AblationReport(mode, (fp + fn) / len(y), tp, tn, fp, fn, ratio)
