"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary that is repeated at the end of
the pytest run.  The heavy datasets are built once per session and shared.
"""

import itertools
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest
from scipy import optimize

from stegdci.classifier import TrainConfig
from stegdci.dci import Verdict
from stegdci.embedding import Algorithm, StegoSpec, embed_set, payload_to_rates, ternary_entropy
from stegdci.features import ResidualHistogram, extract_many, residual_histogram, rm_like_descriptor
from stegdci.imaging import SeededRng, synth_corpus
from stegdci.protocols import (DciPipeline, FinalLabel, RateGrid, ats_unsupervised, choose_rate,
                               find_message_length, multirate_fuse, real_world_scan)
from stegdci.theory import (AblationMode, ablation_classify, directionality_scan, expected_step_approx,
                            expected_step_exact, horizontal_histogram, max_bin_gap, model_deltas,
                            monte_carlo_deltas, predict_sign_first, predict_sign_second, Sign)

pytestmark = pytest.mark.slow

HILL_04 = StegoSpec(Algorithm.HillAdaptive, 0.4)
LSBM_025 = StegoSpec(Algorithm.LsbMatching, 0.25)
LSBM_GRID = RateGrid((0.35, 0.3, 0.25, 0.2, 0.15, 0.1))
HILL_GRID = RateGrid((0.6, 0.5, 0.4, 0.3, 0.2))


# ----------------------------------------------------------------- shared data

def brute_force_expected_histogram(row, alpha):
    beta = alpha / 2  # probability that a pixel changes; each direction half of that
    probs = {-1: beta / 2, 0: 1 - beta, 1: beta / 2}
    out = np.zeros(511)
    for pattern in itertools.product((-1, 0, 1), repeat=len(row)):
        p = np.prod([probs[d] for d in pattern])
        for r in np.diff(np.asarray(row) + np.asarray(pattern)):
            out[r + 255] += p
    return out


@lru_cache(maxsize=None)
def theory_scan():
    covers = synth_corpus(200, SeededRng(500))
    return directionality_scan(covers, LSBM_025, rm_like_descriptor(normalize=False), SeededRng(501))


@lru_cache(maxsize=None)
def hill_split(seed: int):
    root = SeededRng(1000 + seed)
    train_covers = synth_corpus(400, root.child("train"))
    test_covers = synth_corpus(200, root.child("test"))
    test = test_covers[:100] + embed_set(test_covers[100:], HILL_04, root.child("test-stego"))
    truth = [0] * 100 + [1] * 100
    pipe = DciPipeline(train_covers, Algorithm.HillAdaptive, TrainConfig(seed=seed), root.child("pipe"))
    return pipe, test, truth


@lru_cache(maxsize=None)
def hill_dci(seed: int):
    pipe, test, truth = hill_split(seed)
    return pipe.run(test, 0.4, truth=truth)


@lru_cache(maxsize=None)
def message_length_trial(k: int):
    root = SeededRng(2000 + k)
    train_covers = synth_corpus(400, root.child("train"))
    test_covers = synth_corpus(200, root.child("test"))
    true_spec = StegoSpec(Algorithm.LsbMatching, 0.2)
    test = test_covers[:100] + embed_set(test_covers[100:], true_spec, root.child("test-stego"))
    return find_message_length(train_covers, test, Algorithm.LsbMatching, LSBM_GRID, TrainConfig(seed=k),
                               root.child("pipe"), truth=[0] * 100 + [1] * 100)


@lru_cache(maxsize=None)
def mixed_rate_run(seed: int):
    root = SeededRng(3000 + seed)
    train_covers = synth_corpus(300, root.child("train"))
    pool = synth_corpus(250, root.child("test"))
    test, truth, rates = list(pool[:125]), [0] * 125, [None] * 125
    for j, rate in enumerate((0.2, 0.3, 0.4, 0.5, 0.6)):
        chunk = pool[125 + 25 * j:125 + 25 * (j + 1)]
        test += embed_set(chunk, StegoSpec(Algorithm.HillAdaptive, rate), root.child("stego", j))
        truth += [1] * 25
        rates += [rate] * 25
    return real_world_scan(train_covers, test, Algorithm.HillAdaptive, HILL_GRID, TrainConfig(seed=seed),
                           root.child("pipe"), truth=truth, true_rates=rates, standard_rate=0.3)


# ------------------------------------------------------------------- criteria

def test_criterion_01_exhaustive_oracle(record_criterion):
    gen = np.random.default_rng(101)
    worst = 0.0
    for alpha in (0.1, 0.25, 0.5):
        for _ in range(50):
            row = gen.integers(1, 255, size=4)
            model = expected_step_exact(residual_histogram(np.diff(row)), alpha).values
            worst = max(worst, float(np.max(np.abs(model - brute_force_expected_histogram(row, alpha)))))
    ok = worst <= 1e-12
    record_criterion(1, ok, f"max per-bin deviation {worst:.2e} (limit 1e-12)")
    assert ok


def test_criterion_02_exact_vs_approx_bound(record_criterion):
    violations = 0
    checked = 0
    for img in synth_corpus(100, SeededRng(102)):
        h = horizontal_histogram(img)
        delta = max_bin_gap(h)
        for alpha in (0.1, 0.25, 0.5):
            beta = alpha / 2
            diff = np.abs(expected_step_exact(h, alpha).values - expected_step_approx(h, alpha).values)
            violations += int(np.sum(diff > 2 * beta * beta * delta * (1 + 1e-12) + 1e-9))
            checked += diff.size
    record_criterion(2, violations == 0, f"{violations} violations over {checked} bins")
    assert violations == 0


def test_criterion_03_first_order_iff(record_criterion):
    gen = np.random.default_rng(103)
    violations = decided = 0
    for _ in range(10_000):
        h = ResidualHistogram(gen.integers(0, 1000, 21), -10)
        alpha = float(gen.uniform(0.01, 1.0))
        delta = expected_step_approx(h, alpha).values - h.counts
        for k in range(-9, 10):
            s = predict_sign_first(h, k, tol=1e-12)
            d = delta[k + 10]
            if s is Sign.Indeterminate:
                violations += int(abs(d) > 1e-9)
                continue
            decided += 1
            violations += int((s is Sign.Negative) != (d < 0))
    record_criterion(3, violations == 0, f"{violations} violations over {decided} decided bins")
    assert violations == 0


def test_criterion_04_second_order_sufficiency(record_criterion):
    gen = np.random.default_rng(104)
    violations = decided = 0
    for alpha in (0.1, 0.25, 0.5):
        for _ in range(10_000 // 3 + 1):
            h = ResidualHistogram(gen.integers(0, 1000, 21), -10)
            once = expected_step_approx(h, alpha)
            second = expected_step_approx(once, alpha).values - once.values
            for k in range(-8, 9):
                s = predict_sign_second(h, k, alpha, tol=1e-12)
                if s is Sign.Indeterminate:
                    continue
                decided += 1
                d = second[k + 10]
                violations += int((s is Sign.Negative and d >= 0) or (s is Sign.Positive and d <= 0))
    record_criterion(4, violations == 0, f"{violations} violations over {decided} decided bins")
    assert violations == 0


def test_criterion_05_monte_carlo_vs_model(record_criterion):
    cover = synth_corpus(1, SeededRng(105))[0]
    mc = monte_carlo_deltas(cover, LSBM_025, 2000, SeededRng(106))
    first, second = model_deltas(mc.cover, 0.25)
    ks = range(-10, 11)
    idx = [k - mc.v_min for k in ks]
    sig1 = [i for i in idx if abs(first[i]) > 2 * mc.se_first[i]]
    sig2 = [i for i in idx if abs(second[i]) > 2 * mc.se_second[i]]
    agree1 = sum(np.sign(mc.mean_first[i]) == np.sign(first[i]) for i in sig1)
    agree2 = sum(np.sign(mc.mean_second[i]) == np.sign(second[i]) for i in sig2)
    rate2 = agree2 / len(sig2) if sig2 else 1.0
    ok = agree1 == len(sig1) and rate2 >= 0.9
    record_criterion(5, ok, f"first order {agree1}/{len(sig1)} significant bins agree, "
                            f"second order {agree2}/{len(sig2)} ({rate2:.2f}, need 0.90)")
    assert ok


def test_criterion_06_preservation(record_criterion):
    pres = theory_scan().preservation[:100]
    mean = float(pres.mean())
    mode = int(np.bincount(pres).argmax())
    ok = mean >= 13 and mode > 11
    record_criterion(6, ok, f"mean preservation {mean:.2f} (need 13), mode {mode} (need > 11)")
    assert ok


def test_criterion_07_directionality(record_criterion):
    scan = theory_scan()
    frac = scan.fraction_directional(0.5)
    mm = scan.subset_rate("MM.")
    ok = frac >= 0.5 and mm >= 0.6
    record_criterion(7, ok, f"{frac:.3f} of features directional for most images (need 0.50), "
                            f"minmax mean rate {mm:.3f} (need 0.60)")
    assert ok


def _identities_hold(rep) -> bool:
    n = rep.n_t
    if rep.err_hat_half != Fraction(rep.n_nc, 2 * n):
        return False
    if rep.err_hat_at(0) * n != rep.n_nc_cover or rep.err_hat_at(1) * n != rep.n_nc_stego:
        return False
    for p in (Fraction(1, 3), Fraction(1, 2), Fraction(7, 9)):
        if rep.err_hat_at(p) != (1 - p) * rep.err_hat_at(0) + p * rep.err_hat_at(1):
            return False
    return True


def test_criterion_09_dci_end_to_end(record_criterion):
    reps = [hill_dci(s) for s in range(1, 6)]
    err = [float(r.err) for r in reps]
    bar = [float(r.err_bar) for r in reps]
    gaps = [abs(float(r.err_hat_at_p_hat) - float(r.err)) for r in reps]
    ok = np.mean(bar) <= np.mean(err) and max(gaps) <= 0.15
    record_criterion(9, ok, f"mean ErrBar {np.mean(bar):.3f} vs mean Err {np.mean(err):.3f}, "
                            f"max |err_hat(p_hat) - Err| {max(gaps):.3f} (limit 0.15)")
    assert ok


def test_criterion_10_message_length(record_criterion):
    fixture_rate, exhausted = choose_rate([(0.35, 157, 20), (0.30, 73, 19), (0.25, 47, 30), (0.20, 41, 49)])
    fixture_ok = fixture_rate == 0.20 and not exhausted
    found = [message_length_trial(k).rate for k in range(10)]
    hits = sum(r in (0.25, 0.2, 0.15) for r in found)
    ok = fixture_ok and hits >= 7
    record_criterion(10, ok, f"fixture scan -> {fixture_rate:g}; rates found {found}, "
                             f"{hits}/10 in {{0.25, 0.2, 0.15}} (need 7)")
    assert ok


def test_criterion_11_multirate_fusion(record_criterion):
    V = Verdict
    fixtures = [
        ([V.NC1, V.Cover, V.Stego, V.Stego, V.NC1], FinalLabel.Stego),
        ([V.NC2, V.NC2, V.NC2, V.NC2, V.Stego], FinalLabel.NC),
        ([V.Stego, V.Cover, V.Stego, V.Cover, V.NC1], FinalLabel.NC),
        ([V.NC2] * 5, FinalLabel.NC),
    ]
    fixtures_ok = all(multirate_fuse(dict(zip(HILL_GRID, seq)), HILL_GRID).label is want for seq, want in fixtures)
    runs = [mixed_rate_run(s) for s in range(1, 4)]
    classified = float(np.mean([r.classified_fraction for r in runs]))
    fused = float(np.mean([r.row("All").fused_accuracy for r in runs]))
    std = float(np.mean([r.row("All").std_accuracy for r in runs]))
    ok = fixtures_ok and classified >= 0.55 and fused >= std
    record_criterion(11, ok, f"fixtures {'ok' if fixtures_ok else 'broken'}; classified {classified:.3f} "
                             f"(need 0.55), accuracy on classified {fused:.3f} vs standard {std:.3f}")
    assert ok


def test_criterion_08_estimator_identities(record_criterion):
    reports = [hill_dci(s) for s in range(1, 6)]
    reports += [row.report for k in range(10) for row in message_length_trial(k).scan]
    reports += [rep for s in range(1, 4) for rep in mixed_rate_run(s).reports.values()]
    bad = sum(not _identities_hold(r) for r in reports)
    record_criterion(8, bad == 0, f"identities hold exactly on {len(reports) - bad}/{len(reports)} reports")
    assert bad == 0


def test_criterion_12_ablation(record_criterion):
    d = rm_like_descriptor()
    nd_err, df_err, nd_ratio, df_ratio = [], [], [], []
    for seed in range(1, 4):
        pipe, test, truth = hill_split(seed)
        covers = pipe.train_covers
        # same stream the pipeline used for its stego half
        stego = embed_set(covers, HILL_04, pipe.rng.child("train-stego@0.4"))
        train_x = np.vstack([pipe.cover_features, extract_many(stego, d)])
        train_y = np.r_[np.zeros(len(covers), dtype=int), np.ones(len(stego), dtype=int)]
        rng = SeededRng(5000 + seed)
        train_flags = directionality_scan(covers + stego, HILL_04, d, rng.child("flags-train")).flags
        test_flags = directionality_scan(test, HILL_04, d, rng.child("flags-test")).flags
        test_x = extract_many(test, d)
        test_b = extract_many(embed_set(test, HILL_04, rng.child("secondary")), d)
        out = {m: ablation_classify(train_x, train_y, train_flags, test_x, truth, test_flags, m, rng.child("abl"),
                                    TrainConfig(seed=seed), test_b)
               for m in (AblationMode.NDFO, AblationMode.DFO)}
        nd_err.append(out[AblationMode.NDFO].err)
        df_err.append(out[AblationMode.DFO].err)
        nd_ratio.append(out[AblationMode.NDFO].b_as_cover_ratio)
        df_ratio.append(out[AblationMode.DFO].b_as_cover_ratio)
    ok = np.mean(df_err) < np.mean(nd_err) and np.mean(nd_ratio) > np.mean(df_ratio)
    record_criterion(12, ok, f"error DFO {np.mean(df_err):.3f} vs NDFO {np.mean(nd_err):.3f}; "
                             f"S#(test) called cover NDFO {np.mean(nd_ratio):.3f} vs DFO {np.mean(df_ratio):.3f}")
    assert ok


def test_criterion_13_ats(record_criterion):
    spec = StegoSpec(Algorithm.LsbMatching, 0.4)
    acc = []
    for seed in range(1, 6):
        root = SeededRng(4000 + seed)
        covers = synth_corpus(100, root.child("covers"))
        test = covers[:50] + embed_set(covers[50:], spec, root.child("stego"))
        labels = ats_unsupervised(test, spec, None, TrainConfig(seed=seed), root.child("ats"))
        acc.append(float(np.mean(labels == np.r_[np.zeros(50), np.ones(50)])))
    ok = np.mean(acc) >= 0.65
    record_criterion(13, ok, f"mean accuracy {np.mean(acc):.3f} over seeds {[round(a, 2) for a in acc]} (need 0.65)")
    assert ok


def test_criterion_14_payload_solver(record_criterion):
    gen = np.random.default_rng(114)
    worst = 0.0
    for _ in range(100):
        cost = gen.exponential(gen.uniform(0.1, 10), size=(48, 48))
        payload = float(gen.uniform(0.05, 1.0))
        got = ternary_entropy(payload_to_rates(cost, payload)).sum()
        worst = max(worst, abs(got - payload * cost.size) / (payload * cost.size))
    p_star = optimize.brentq(lambda p: float(ternary_entropy(p)) - 0.4, 1e-12, 1 / 3 - 1e-12, xtol=1e-15)
    uniform = payload_to_rates(np.full((64, 64), 2.0), 0.4)
    dev = float(np.max(np.abs(uniform - p_star)))
    ok = worst <= 0.005 and dev <= 1e-6
    record_criterion(14, ok, f"worst relative payload miss {worst:.2e} (limit 5e-3), "
                             f"uniform-cost deviation {dev:.1e} (limit 1e-6)")
    assert ok
