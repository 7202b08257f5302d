"""Message-length search, multi-rate fusion, ATS and pooled training sets."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .classifier import TrainConfig, predict_many, train
from .dci import DciReport, Verdict, build_secondary, quad_classify, summarize
from .embedding import Algorithm, StegoSpec, embed_once, embed_set
from .errors import InvalidArgument
from .features import FeatureSetDescriptor, extract_many, rm_like_descriptor
from .imaging import GrayImage, SeededRng

MIN_TRAIN_COVERS = 100
MIN_ATS_IMAGES = 40


@dataclass(frozen=True)
class RateGrid:
    rates: tuple

    def __post_init__(self):
        r = tuple(float(x) for x in self.rates)
        if not r:
            raise InvalidArgument("rate grid must be nonempty")
        if any(not 0.0 < x <= 1.0 for x in r):
            raise InvalidArgument(f"rates must lie in (0, 1], got {r}")
        if any(a <= b for a, b in zip(r, r[1:])):
            raise InvalidArgument(f"rates must be strictly decreasing, got {r}")
        object.__setattr__(self, "rates", r)

    def __iter__(self):
        return iter(self.rates)

    def __len__(self):
        return len(self.rates)

    @property
    def median(self) -> float:
        return self.rates[len(self.rates) // 2]


def _rate_key(rate: float) -> str:
    return f"{rate:.6g}"


class DciPipeline:
    """Trains and caches (primary, secondary) model pairs per rate for a fixed cover pool.

    Primary: covers (0) vs S#(covers) (1).  Secondary: S#(covers) (0) vs S#(S#(covers)) (1).
    """

    def __init__(self, train_covers: Sequence[GrayImage], algorithm: Algorithm, config: TrainConfig,
                 rng: SeededRng, descriptor: Optional[FeatureSetDescriptor] = None, jobs: int = 1):
        if len(train_covers) < MIN_TRAIN_COVERS:
            raise InvalidArgument(f"need at least {MIN_TRAIN_COVERS} training covers, got {len(train_covers)}")
        self.train_covers = list(train_covers)
        self.algorithm = algorithm
        self.config = config
        self.rng = rng
        self.descriptor = descriptor or rm_like_descriptor()
        self.jobs = jobs
        self._cover_features = None
        self._models: Dict[str, tuple] = {}

    def features(self, images) -> np.ndarray:
        return extract_many(images, self.descriptor, self.jobs)

    @property
    def cover_features(self) -> np.ndarray:
        if self._cover_features is None:
            self._cover_features = self.features(self.train_covers)
        return self._cover_features

    def spec(self, rate: float) -> StegoSpec:
        return StegoSpec(self.algorithm, rate)

    def models(self, rate: float) -> tuple:
        key = _rate_key(rate)
        if key not in self._models:
            spec = self.spec(rate)
            stego = embed_set(self.train_covers, spec, self.rng.child("train-stego@" + key), self.jobs)
            double = embed_set(stego, spec, self.rng.child("train-double@" + key), self.jobs)
            f0, f1, f2 = self.cover_features, self.features(stego), self.features(double)
            n = len(f0)
            y = np.r_[np.zeros(n, dtype=int), np.ones(n, dtype=int)]
            h = self.descriptor.hash
            ca = train(np.vstack([f0, f1]), y, self.config, h)
            cb = train(np.vstack([f1, f2]), y, self.config, h)
            self._models[key] = (ca, cb)
        return self._models[key]

    def run(self, test: Sequence[GrayImage], rate: float, test_features: Optional[np.ndarray] = None,
            truth: Optional[Sequence[int]] = None) -> DciReport:
        ca, cb = self.models(rate)
        if len(test) == 0:
            return summarize([], truth)
        fa = self.features(test) if test_features is None else test_features
        b = build_secondary(test, self.spec(rate), self.rng.child("test@" + _rate_key(rate)), self.jobs)
        fb = self.features(b)
        return summarize(quad_classify(ca, cb, fa, fb, self.descriptor.hash), truth)


# ------------------------------------------------------------ message length

@dataclass
class RateScanRow:
    rate: float
    report: DciReport


@dataclass
class MessageLengthResult:
    rate: float
    exhausted: bool
    scan: list


def choose_rate(rows: Sequence[tuple]) -> tuple:
    """First (rate, N_NC_cover, N_NC_stego) row with N_NC_cover <= N_NC_stego.

    Returns (rate, exhausted); when no row qualifies the last rate comes back flagged.
    """
    if not rows:
        raise InvalidArgument("empty scan")
    for rate, nc_cover, nc_stego in rows:
        if nc_cover <= nc_stego:
            return rate, False
    return rows[-1][0], True


def find_message_length(train_covers, test, algorithm: Algorithm, grid: RateGrid, config: TrainConfig,
                        rng: SeededRng, descriptor: Optional[FeatureSetDescriptor] = None,
                        truth: Optional[Sequence[int]] = None, jobs: int = 1,
                        pipeline: Optional[DciPipeline] = None) -> MessageLengthResult:
    pipe = pipeline or DciPipeline(train_covers, algorithm, config, rng, descriptor, jobs)
    fa = pipe.features(test)
    scan = []
    for rate in grid:
        rep = pipe.run(test, rate, fa, truth)
        scan.append(RateScanRow(rate, rep))
        chosen, exhausted = choose_rate([(rate, rep.n_nc_cover, rep.n_nc_stego)])
        if not exhausted:
            return MessageLengthResult(rate, False, scan)
    return MessageLengthResult(grid.rates[-1], True, scan)


SCAN_COLUMNS = ("rate", "Err", "TP", "TN", "FP", "FN", "ErrBar", "N_NC", "N_NC_cover", "N_NC_stego",
                "err_hat_0.5", "p_hat_c", "err_hat_p_hat")


def scan_row(rate: float, r: DciReport) -> list:
    f = lambda x: "" if x is None else f"{float(x):.4f}"
    i = lambda x: "" if x is None else str(x)
    return [f"{rate:g}", f(r.err), i(r.tp), i(r.tn), i(r.fp), i(r.fn), f(r.err_bar), str(r.n_nc),
            str(r.n_nc_cover), str(r.n_nc_stego), f(r.err_hat_half), f(r.p_hat_c), f(r.err_hat_at_p_hat)]


# ------------------------------------------------------------- multi-rate fusion

class FinalLabel(enum.Enum):
    Cover = "Cover"
    Stego = "Stego"
    NC = "NC"


@dataclass(frozen=True)
class FusionOutcome:
    label: FinalLabel
    sequence: tuple  # ((rate, Verdict), ...) from highest to lowest rate


def _regular(verdicts) -> bool:
    """No Cover after a Stego once NC1 entries are ignored."""
    seen_stego = False
    for v in verdicts:
        if v is Verdict.Stego:
            seen_stego = True
        elif v is Verdict.Cover and seen_stego:
            return False
    return True


def multirate_fuse(per_rate: Dict[float, Verdict], grid: RateGrid) -> FusionOutcome:
    missing = [r for r in grid if r not in per_rate]
    if missing:
        raise InvalidArgument(f"no verdict for rates {missing}")
    seq = tuple((r, per_rate[r]) for r in grid)
    kept = [v for _, v in seq if v is not Verdict.NC2]
    if len(kept) < 2:
        return FusionOutcome(FinalLabel.NC, seq)
    if _regular(kept) and Verdict.Stego in kept:
        return FusionOutcome(FinalLabel.Stego, seq)
    covers, stegos = kept.count(Verdict.Cover), kept.count(Verdict.Stego)
    if covers > stegos:
        return FusionOutcome(FinalLabel.Cover, seq)
    if stegos > covers:
        return FusionOutcome(FinalLabel.Stego, seq)
    return FusionOutcome(FinalLabel.NC, seq)


@dataclass
class SubsetRow:
    name: str
    n: int
    std_correct: int
    std_wrong: int
    fused_correct: int
    fused_wrong: int
    fused_nc: int

    @property
    def std_accuracy(self) -> Optional[float]:
        d = self.std_correct + self.std_wrong
        return self.std_correct / d if d else None

    @property
    def fused_accuracy(self) -> Optional[float]:
        d = self.fused_correct + self.fused_wrong
        return self.fused_correct / d if d else None


@dataclass
class RealWorldResult:
    outcomes: list
    reports: dict            # rate -> DciReport
    standard_rate: float
    standard_labels: np.ndarray
    table: list              # SubsetRow, empty without truth

    @property
    def classified_fraction(self) -> float:
        if not self.outcomes:
            return 0.0
        return sum(o.label is not FinalLabel.NC for o in self.outcomes) / len(self.outcomes)

    def row(self, name: str) -> Optional[SubsetRow]:
        return next((r for r in self.table if r.name == name), None)


def _subset_row(name, idx, truth, std, fused) -> SubsetRow:
    sc = sw = fc = fw = nc = 0
    for i in idx:
        if std[i] == truth[i]:
            sc += 1
        else:
            sw += 1
        lab = fused[i].label
        if lab is FinalLabel.NC:
            nc += 1
        elif int(lab is FinalLabel.Stego) == truth[i]:
            fc += 1
        else:
            fw += 1
    return SubsetRow(name, len(idx), sc, sw, fc, fw, nc)


def real_world_scan(train_covers, test, algorithm: Algorithm, grid: RateGrid, config: TrainConfig,
                    rng: SeededRng, truth: Optional[Sequence[int]] = None,
                    true_rates: Optional[Sequence[Optional[float]]] = None,
                    standard_rate: Optional[float] = None,
                    descriptor: Optional[FeatureSetDescriptor] = None, jobs: int = 1,
                    pipeline: Optional[DciPipeline] = None) -> RealWorldResult:
    """Full consistency check at every grid rate, fused per image.

    The standard baseline is the primary model alone at ``standard_rate``
    (the grid median when not given).
    """
    pipe = pipeline or DciPipeline(train_covers, algorithm, config, rng, descriptor, jobs)
    std_rate = grid.median if standard_rate is None else float(standard_rate)
    if len(test) == 0:
        return RealWorldResult([], {}, std_rate, np.zeros(0, dtype=int), [])
    fa = pipe.features(test)
    reports = {rate: pipe.run(test, rate, fa, truth) for rate in grid}
    outcomes = [multirate_fuse({rate: reports[rate].verdicts[i] for rate in grid}, grid) for i in range(len(test))]
    std_labels, _ = predict_many(pipe.models(std_rate)[0], fa, pipe.descriptor.hash)
    table = []
    if truth is not None:
        t = [int(x) for x in truth]
        groups = []
        if true_rates is not None:
            for r in sorted({x for x, y in zip(true_rates, t) if y == 1 and x is not None}):
                groups.append((f"Stego {r:g}", [i for i in range(len(t)) if t[i] == 1 and true_rates[i] == r]))
        groups.append(("All stego", [i for i in range(len(t)) if t[i] == 1]))
        groups.append(("All cover", [i for i in range(len(t)) if t[i] == 0]))
        groups.append(("All", list(range(len(t)))))
        table = [_subset_row(name, idx, t, std_labels, outcomes) for name, idx in groups]
    return RealWorldResult(outcomes, reports, std_rate, std_labels, table)


# ------------------------------------------------------------------------ ATS

def ats_unsupervised(test: Sequence[GrayImage], spec: StegoSpec, descriptor: Optional[FeatureSetDescriptor],
                     config: TrainConfig, rng: SeededRng, jobs: int = 1) -> np.ndarray:
    """Label-free detection: train A (0) vs S#(S#(A)) (1), classify S#(A); image i inherits B_i's label."""
    if len(test) < MIN_ATS_IMAGES:
        raise InvalidArgument(f"ATS needs at least {MIN_ATS_IMAGES} images, got {len(test)}")
    descriptor = descriptor or rm_like_descriptor()
    b = embed_set(test, spec, rng.child("ats-b"), jobs)
    c = embed_set(b, spec, rng.child("ats-c"), jobs)
    fa, fb, fc = (extract_many(x, descriptor, jobs) for x in (test, b, c))
    n = len(test)
    y = np.r_[np.zeros(n, dtype=int), np.ones(n, dtype=int)]
    model = train(np.vstack([fa, fc]), y, config, descriptor.hash)
    labels, _ = predict_many(model, fb, descriptor.hash)
    return labels


# ----------------------------------------------------------------- pooled set

def pooled_assignment(n: int, specs: Sequence[StegoSpec], rng: SeededRng) -> list:
    if not specs:
        raise InvalidArgument("need at least one stego spec")
    order = [specs[i % len(specs)] for i in range(n)]
    perm = rng.child("pooled-assign").generator().permutation(n)
    return [order[j] for j in perm]


def build_pooled_dataset(covers: Sequence[GrayImage], specs: Sequence[StegoSpec], rng: SeededRng,
                         jobs: int = 1) -> tuple:
    """One embedder per cover, balanced across ``specs`` to within one image."""
    assignment = pooled_assignment(len(covers), specs, rng)
    streams = [rng.child("pooled-embed", i) for i in range(len(covers))]
    stego = [embed_once(c, s, r) for c, s, r in zip(covers, assignment, streams)]
    return stego, assignment
