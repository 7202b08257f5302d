"""Consistency filters over primary/secondary classifications and the error estimates they yield.

Per test image A'_k and its re-embedded copy B'_k = S#(A'_k), four predictions
are made: the secondary model (stego vs double stego) on A' and on B', and the
primary model (cover vs stego) on A' and on B'.  Only two of the sixteen
outcomes are consistent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .classifier import EnsembleModel, predict_many
from .embedding import StegoSpec, embed_set
from .errors import DescriptorMismatch, InvalidArgument
from .imaging import SeededRng


@dataclass(frozen=True)
class QuadOutcome:
    cb_a: int  # secondary on A': 1 means "double stego", impossible for an original
    ca_b: int  # primary on B': 0 means "cover", impossible for an embedded copy
    ca_a: int  # primary on A'
    cb_b: int  # secondary on B'

    def __post_init__(self):
        for name in ("cb_a", "ca_b", "ca_a", "cb_b"):
            if getattr(self, name) not in (0, 1):
                raise InvalidArgument(f"{name} must be 0 or 1")

    def bits(self) -> tuple:
        return (self.cb_a, self.ca_b, self.ca_a, self.cb_b)


class Verdict(enum.Enum):
    Cover = "Cover"
    Stego = "Stego"
    NC1 = "NC1"
    NC2 = "NC2"

    @property
    def consistent(self) -> bool:
        return self in (Verdict.Cover, Verdict.Stego)


def filter_verdict(q: QuadOutcome) -> Verdict:
    # an impossible class takes precedence over a cross-level disagreement
    if q.cb_a == 1 or q.ca_b == 0:
        return Verdict.NC2
    if q.ca_a == 0 and q.cb_b == 0:
        return Verdict.Cover
    if q.ca_a == 1 and q.cb_b == 1:
        return Verdict.Stego
    return Verdict.NC1


def build_secondary(images: Sequence, spec: StegoSpec, rng: SeededRng, jobs: int = 1) -> list:
    """B'_k = S#(A'_k); index k is preserved."""
    return embed_set(images, spec, rng.child("secondary"), jobs)


def quad_classify(ca: EnsembleModel, cb: EnsembleModel, a_features, b_features,
                  descriptor_hash: Optional[str] = None) -> list:
    if ca.descriptor_hash is not None and cb.descriptor_hash is not None and ca.descriptor_hash != cb.descriptor_hash:
        raise DescriptorMismatch("primary and secondary models were trained on different descriptors")
    a = np.asarray(a_features, dtype=float)
    b = np.asarray(b_features, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"A features {a.shape} and B features {b.shape} are not aligned")
    cb_a, _ = predict_many(cb, a, descriptor_hash)
    ca_b, _ = predict_many(ca, b, descriptor_hash)
    ca_a, _ = predict_many(ca, a, descriptor_hash)
    cb_b, _ = predict_many(cb, b, descriptor_hash)
    return [QuadOutcome(int(w), int(x), int(y), int(z)) for w, x, y, z in zip(cb_a, ca_b, ca_a, cb_b)]


def _ratio(num: int, den: int) -> Optional[Fraction]:
    return Fraction(num, den) if den else None


@dataclass
class DciReport:
    quads: list
    verdicts: list
    n_t: int
    n_nc_cover: int
    n_nc_stego: int
    n_nc1: int
    n_nc2: int
    n_cover_consistent: int
    n_stego_consistent: int
    # known only with truth labels
    tp: Optional[int] = None
    tn: Optional[int] = None
    fp: Optional[int] = None
    fn: Optional[int] = None
    std_tp: Optional[int] = None
    std_tn: Optional[int] = None
    std_fp: Optional[int] = None
    std_fn: Optional[int] = None

    @property
    def n_nc(self) -> int:
        return self.n_nc_cover + self.n_nc_stego

    @property
    def n_consistent(self) -> int:
        return self.n_cover_consistent + self.n_stego_consistent

    def err_hat_at(self, p) -> Fraction:
        """Predicted standard-classifier error if a fraction p of the test set were cover.

        Exact (Fraction) when p is an int or Fraction.
        """
        if self.n_t == 0:
            return Fraction(0)
        if not isinstance(p, (int, Fraction)):
            return (p * self.n_nc_stego + (1 - p) * self.n_nc_cover) / self.n_t
        p = Fraction(p)
        return (p * self.n_nc_stego + (1 - p) * self.n_nc_cover) / self.n_t

    @property
    def err_hat_half(self) -> Fraction:
        return Fraction(self.n_nc, 2 * self.n_t) if self.n_t else Fraction(0)

    @property
    def err_hat_0(self) -> Fraction:
        return self.err_hat_at(0)

    @property
    def err_hat_1(self) -> Fraction:
        return self.err_hat_at(1)

    @property
    def p_hat_c(self) -> Optional[Fraction]:
        return _ratio(self.n_cover_consistent, self.n_consistent)

    @property
    def err_hat_at_p_hat(self) -> Optional[Fraction]:
        p = self.p_hat_c
        return None if p is None else self.err_hat_at(p)

    @property
    def has_truth(self) -> bool:
        return self.std_tp is not None

    @property
    def err(self) -> Optional[Fraction]:
        """Error of the primary model alone over the whole test set."""
        if not self.has_truth or self.n_t == 0:
            return None
        return Fraction(self.std_fp + self.std_fn, self.n_t)

    @property
    def err_bar(self) -> Optional[Fraction]:
        """Error on the consistent subset."""
        if not self.has_truth:
            return None
        return _ratio(self.fp + self.fn, self.tp + self.tn + self.fp + self.fn)

    def to_json(self) -> dict:
        f = lambda x: None if x is None else float(x)
        return {
            "format": 1,
            "N_T": self.n_t, "N_NC": self.n_nc, "N_NC_cover": self.n_nc_cover, "N_NC_stego": self.n_nc_stego,
            "N_NC1": self.n_nc1, "N_NC2": self.n_nc2,
            "N_cover_consistent": self.n_cover_consistent, "N_stego_consistent": self.n_stego_consistent,
            "err_hat_0": f(self.err_hat_0), "err_hat_1": f(self.err_hat_1), "err_hat_0.5": f(self.err_hat_half),
            "p_hat_c": f(self.p_hat_c), "err_hat_at_p_hat": f(self.err_hat_at_p_hat),
            "Err": f(self.err), "TP": self.tp, "TN": self.tn, "FP": self.fp, "FN": self.fn, "ErrBar": f(self.err_bar),
            "standard": {"TP": self.std_tp, "TN": self.std_tn, "FP": self.std_fp, "FN": self.std_fn},
            "verdicts": [v.value for v in self.verdicts],
        }

    def summary_line(self) -> str:
        s = f"err_hat_0.5={float(self.err_hat_half):.3f} N_NC={self.n_nc}/{self.n_t}"
        if self.p_hat_c is not None:
            s += f" p_hat_c={float(self.p_hat_c):.3f} err_hat_p_hat={float(self.err_hat_at_p_hat):.3f}"
        if self.has_truth:
            s += f" Err={float(self.err):.3f}"
            if self.err_bar is not None:
                s += f" ErrBar={float(self.err_bar):.3f}"
        return s


def summarize(quads: Sequence[QuadOutcome], truth: Optional[Sequence[int]] = None,
              n_t: Optional[int] = None) -> DciReport:
    quads = list(quads)
    n_t = len(quads) if n_t is None else n_t
    if n_t != len(quads):
        raise InvalidArgument(f"N_T = {n_t} but {len(quads)} quads supplied")
    if truth is not None and len(truth) != len(quads):
        raise InvalidArgument(f"{len(truth)} truth labels for {len(quads)} images")
    verdicts = [filter_verdict(q) for q in quads]
    nc = [not v.consistent for v in verdicts]
    rep = DciReport(
        quads, verdicts, n_t,
        n_nc_cover=sum(1 for q, bad in zip(quads, nc) if bad and q.ca_a == 0),
        n_nc_stego=sum(1 for q, bad in zip(quads, nc) if bad and q.ca_a == 1),
        n_nc1=verdicts.count(Verdict.NC1),
        n_nc2=verdicts.count(Verdict.NC2),
        n_cover_consistent=verdicts.count(Verdict.Cover),
        n_stego_consistent=verdicts.count(Verdict.Stego),
    )
    if truth is not None:
        t = [int(x) for x in truth]
        pairs = [(v is Verdict.Stego, y) for v, y in zip(verdicts, t) if v.consistent]
        rep.tp = sum(1 for s, y in pairs if s and y == 1)
        rep.tn = sum(1 for s, y in pairs if not s and y == 0)
        rep.fp = sum(1 for s, y in pairs if s and y == 0)
        rep.fn = sum(1 for s, y in pairs if not s and y == 1)
        rep.std_tp = sum(1 for q, y in zip(quads, t) if q.ca_a == 1 and y == 1)
        rep.std_tn = sum(1 for q, y in zip(quads, t) if q.ca_a == 0 and y == 0)
        rep.std_fp = sum(1 for q, y in zip(quads, t) if q.ca_a == 1 and y == 0)
        rep.std_fn = sum(1 for q, y in zip(quads, t) if q.ca_a == 0 and y == 1)
    return rep


def verdict_rows(report: DciReport) -> list:
    """(index, verdict, bits...) rows for the per-image CSV."""
    return [(i, v.value) + q.bits() for i, (v, q) in enumerate(zip(report.verdicts, report.quads))]
