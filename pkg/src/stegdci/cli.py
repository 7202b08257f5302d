"""Command-line entry point: ``stegdci <command> ...``.

Every command that consumes randomness requires ``--seed``; all streams are
derived from it.  Exit codes: 0 success, 2 usage/config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import classifier
from .classifier import ThresholdMode, TrainConfig, predict_many
from .dci import verdict_rows
from .embedding import Algorithm, StegoSpec, embed_set
from .errors import InvalidArgument, IoError, ParseError, StegDciError
from .features import (FeatureSetDescriptor, ResidualHistogram, extract_many, load_features,
                       rm_like_descriptor, save_features)
from .imaging import (CorpusProfile, DatasetManifest, ManifestEntry, SeededRng, ensure_dir, load_images,
                      synth_corpus, write_pgm)
from .protocols import (SCAN_COLUMNS, DciPipeline, RateGrid, ats_unsupervised, find_message_length,
                        real_world_scan, scan_row)
from .theory import (AblationMode, AdaptiveChangeModel, ablation_classify, directionality_scan,
                     expected_step_adaptive, expected_step_approx, expected_step_exact, fit_cauchy,
                     horizontal_histogram, model_deltas, monte_carlo_deltas, predict_sign_first,
                     predict_sign_second)

FORMAT = 1


# ------------------------------------------------------------------- helpers

def _write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _dataset(source):
    """(images, labels or None, names) from a PGM directory or a manifest."""
    images, labels, manifest = load_images(source)
    # directory entries are absolute; manifest paths are kept as written so they stay unique
    names = [Path(e.path).name if Path(source).is_dir() else e.path for e in manifest]
    return images, labels, names


def _out_path(out: Path, name: str) -> Path:
    """Output location mirroring a relative input name; never escapes ``out``."""
    rel = Path(name)
    if rel.is_absolute() or ".." in rel.parts:
        rel = Path(rel.name)
    target = out / rel
    ensure_dir(target.parent)
    return target


def _descriptor(path) -> FeatureSetDescriptor:
    if path is None:
        return rm_like_descriptor()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read descriptor {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"descriptor {path} is not valid JSON: {exc}") from exc
    try:
        return FeatureSetDescriptor.from_json(data)
    except ParseError as exc:
        raise InvalidArgument(f"malformed descriptor {path}: {exc}") from exc


def _grid(text: str) -> RateGrid:
    try:
        return RateGrid(tuple(float(x) for x in text.split(",") if x.strip()))
    except ValueError as exc:
        raise InvalidArgument(f"bad rate list {text!r}: {exc}") from exc


def _config(args) -> TrainConfig:
    return TrainConfig(args.learners, args.subspace, args.seed, ThresholdMode(args.threshold))


def _read_histogram(path) -> ResidualHistogram:
    """CSV with columns k,count; missing bins inside the range count as zero."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise IoError(f"cannot read histogram {path}: {exc}") from exc
    if rows and not rows[0][0].lstrip("-").isdigit():
        rows = rows[1:]
    try:
        pairs = {int(r[0]): float(r[1]) for r in rows}
    except (ValueError, IndexError) as exc:
        raise ParseError(f"histogram rows must be 'k,count': {exc}") from exc
    if not pairs:
        raise ParseError(f"histogram {path} is empty")
    lo, hi = min(pairs), max(pairs)
    return ResidualHistogram(np.array([pairs.get(k, 0.0) for k in range(lo, hi + 1)]), lo)


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.6g}"


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> str:
    out = ensure_dir(args.out)
    profile = CorpusProfile(textured_fraction=args.textured_fraction)
    images = synth_corpus(args.count, SeededRng(args.seed).child("synth"), args.size, profile)
    entries = []
    for i, img in enumerate(images):
        name = f"cover_{i:05d}.pgm"
        write_pgm(img, out / name)
        entries.append(ManifestEntry(name, "cover"))
    DatasetManifest(entries).save(out / "manifest.json")
    return f"wrote {len(images)} covers ({args.size}x{args.size}) to {out}"


def cmd_embed(args) -> str:
    spec = StegoSpec(Algorithm.parse(args.algo), args.bpp)
    src = Path(args.inp)
    images, _, names = _dataset(src)
    out = ensure_dir(args.out)
    root = SeededRng(args.seed)
    targets = [_out_path(out, n) for n in names]
    if spec.payload_bpp == 0.0 and src.is_dir():
        for name, target in zip(names, targets):
            shutil.copyfile(src / name, target)
    else:
        for target, img in zip(targets, embed_set(images, spec, root, args.jobs)):
            write_pgm(img, target)
    rel = [str(t.relative_to(out)) for t in targets]
    side = {"format": FORMAT, "spec": spec.to_json(), "seed": args.seed,
            "images": [{"name": n, "stream": f"embed:{i}"} for i, n in enumerate(rel)]}
    _write_json(out / "embed.json", side)
    label = "stego" if spec.payload_bpp > 0 else "cover"
    DatasetManifest([ManifestEntry(n, label, spec.algorithm.value, spec.payload_bpp)
                     for n in rel]).save(out / "manifest.json")
    return f"embedded {len(names)} images with {spec}"


def cmd_features(args) -> str:
    desc = _descriptor(args.desc)
    images, _, names = _dataset(args.inp)
    save_features(args.out, extract_many(images, desc, args.jobs), desc, names)
    return f"extracted {len(images)} x {desc.dimension} features (descriptor {desc.hash})"


def cmd_train(args) -> str:
    x0, d0, _ = load_features(args.cover)
    x1, d1, _ = load_features(args.stego)
    if d0 != d1:
        raise InvalidArgument("cover and stego feature files use different descriptors")
    y = np.r_[np.zeros(len(x0), dtype=int), np.ones(len(x1), dtype=int)]
    model = classifier.train(np.vstack([x0, x1]), y, _config(args), d0.hash)
    classifier.save(model, args.out)
    return f"trained {len(model.learners)} learners on {len(y)} rows x {model.dimension} features"


def cmd_predict(args) -> str:
    model = classifier.load(args.model)
    x, desc, names = load_features(args.features)
    labels, votes = predict_many(model, x, desc.hash)
    _write_csv(args.out, ["name", "label", "votes"], [(n, int(l), int(v)) for n, l, v in zip(names, labels, votes)])
    return f"{len(labels)} images: {int(labels.sum())} stego, {int(len(labels) - labels.sum())} cover"


def _pipeline(args, train_images):
    return DciPipeline(train_images, Algorithm.parse(args.algo), _config(args),
                       SeededRng(args.seed).child("pipeline"), _descriptor(args.desc), args.jobs)


def cmd_dci(args) -> str:
    train_images, _, _ = _dataset(args.train)
    test, truth, names = _dataset(args.test)
    rep = _pipeline(args, train_images).run(test, args.bpp, truth=truth)
    out = ensure_dir(args.out)
    _write_json(out / "report.json", rep.to_json())
    _write_csv(out / "verdicts.csv", ["index", "name", "verdict", "cb_a", "ca_b", "ca_a", "cb_b"],
               [(r[0], names[r[0]]) + tuple(r[1:]) for r in verdict_rows(rep)])
    return rep.summary_line()


def cmd_find_bitrate(args) -> str:
    train_images, _, _ = _dataset(args.train)
    test, truth, _ = _dataset(args.test)
    grid = _grid(args.rates)
    res = find_message_length(train_images, test, Algorithm.parse(args.algo), grid, None, None,
                              truth=truth, pipeline=_pipeline(args, train_images))
    rows = [scan_row(r.rate, r.report) for r in res.scan]
    print("\t".join(SCAN_COLUMNS))
    for row in rows:
        print("\t".join(row))
    if args.out:
        out = ensure_dir(args.out)
        _write_csv(out / "scan.csv", SCAN_COLUMNS, rows)
        _write_json(out / "result.json", {"format": FORMAT, "rate": res.rate, "exhausted_grid": res.exhausted})
    return f"rate={res.rate:g}" + (" (grid exhausted)" if res.exhausted else "")


def cmd_real_world(args) -> str:
    train_images, _, _ = _dataset(args.train)
    test, truth, names = _dataset(args.test)
    manifest_rates = None
    if not Path(args.test).is_dir():
        manifest_rates = [e.bpp if e.label == "stego" else None for e in DatasetManifest.load(args.test)]
    res = real_world_scan(train_images, test, Algorithm.parse(args.algo), _grid(args.rates), None, None,
                          truth=truth, true_rates=manifest_rates, standard_rate=args.standard_rate,
                          pipeline=_pipeline(args, train_images))
    out = ensure_dir(args.out)
    _write_csv(out / "fused.csv", ["name", "label", "standard"] + [f"{r:g}" for r in _grid(args.rates)],
               [[n, o.label.value, int(s)] + [v.value for _, v in o.sequence]
                for n, o, s in zip(names, res.outcomes, res.standard_labels)])
    table = [{"subset": r.name, "n": r.n, "standard_correct": r.std_correct, "standard_wrong": r.std_wrong,
              "correct": r.fused_correct, "wrong": r.fused_wrong, "nc": r.fused_nc,
              "standard_accuracy": r.std_accuracy, "accuracy": r.fused_accuracy} for r in res.table]
    _write_json(out / "summary.json", {"format": FORMAT, "standard_rate": res.standard_rate,
                                       "classified_fraction": res.classified_fraction, "table": table})
    line = f"classified={res.classified_fraction:.3f} of {len(test)}"
    all_row = res.row("All")
    if all_row is not None and all_row.fused_accuracy is not None:
        line += f" accuracy={all_row.fused_accuracy:.3f} standard={all_row.std_accuracy:.3f}"
    return line


def cmd_ats(args) -> str:
    test, truth, names = _dataset(args.test)
    spec = StegoSpec(Algorithm.parse(args.algo), args.bpp)
    labels = ats_unsupervised(test, spec, _descriptor(args.desc), _config(args), SeededRng(args.seed).child("ats"),
                              args.jobs)
    if args.out:
        _write_csv(args.out, ["name", "label"], [(n, int(l)) for n, l in zip(names, labels)])
    line = f"stego={int(labels.sum())}/{len(labels)}"
    if truth is not None:
        line += f" accuracy={float(np.mean(labels == np.asarray(truth))):.3f}"
    return line


# ------------------------------------------------------------------- theory

def cmd_theory_expected(args) -> str:
    h = _read_histogram(args.hist)
    if args.model == "approx":
        e = expected_step_approx(h, args.alpha)
    elif args.model == "exact":
        e = expected_step_exact(h, args.alpha)
    else:
        beta = args.alpha / 2
        e = expected_step_adaptive(h, AdaptiveChangeModel(beta, beta if args.beta_prime is None else args.beta_prime))
    ks = range(h.v_min, h.v_min + len(e.values))
    _write_csv(args.out, ["k", "cover", "expected"], [(k, _fmt(h[k]), _fmt(v)) for k, v in zip(ks, e.values)])
    return f"expected histogram over {len(e.values)} bins, total {e.total:.6g}"


def cmd_theory_signs(args) -> str:
    h = _read_histogram(args.hist)
    lines = []
    for k in range(h.v_min + 2, h.v_max - 1):
        first = predict_sign_first(h, k, args.tol).value
        second = predict_sign_second(h, k, args.alpha, args.tol).value
        lines.append(f"{k}\t{first}\t{second}")
    print("k\tfirst\tsecond")
    print("\n".join(lines))
    return f"signs for {len(lines)} interior bins at alpha={args.alpha:g}"


def cmd_theory_cauchy(args) -> str:
    if args.hist:
        h = _read_histogram(args.hist)
    else:
        images, _, _ = _dataset(args.inp)
        if not images:
            raise InvalidArgument("no images to fit")
        hs = [horizontal_histogram(im) for im in images]
        h = ResidualHistogram(np.sum([x.counts for x in hs], axis=0), hs[0].v_min)
    fit = fit_cauchy(h)
    if args.out:
        _write_json(args.out, {"format": FORMAT, "gamma": fit.gamma, "loglik": fit.loglik,
                               "concavity_interval": list(fit.concavity_interval)})
    lo, hi = fit.concavity_interval
    return f"gamma={fit.gamma:.4f} concave on ({lo:.4f}, {hi:.4f})"


def cmd_theory_montecarlo(args) -> str:
    images, _, _ = _dataset(args.inp)
    if not images:
        raise InvalidArgument("no image to simulate")
    spec = StegoSpec(Algorithm.parse(args.algo), args.bpp)
    mc = monte_carlo_deltas(images[0], spec, args.reps, SeededRng(args.seed).child("montecarlo"))
    first, second = model_deltas(mc.cover, spec.alpha)
    rows = []
    for k in range(-args.window, args.window + 1):
        i = k - mc.v_min
        rows.append((k, _fmt(first[i]), _fmt(mc.mean_first[i]), _fmt(mc.se_first[i]),
                     _fmt(second[i]), _fmt(mc.mean_second[i]), _fmt(mc.se_second[i])))
    _write_csv(args.out, ["k", "model_first", "mc_first", "se_first", "model_second", "mc_second", "se_second"], rows)
    agree = sum(np.sign(float(r[1])) == np.sign(float(r[2])) for r in rows)
    return f"first-order sign agreement {agree}/{len(rows)} over {args.reps} repetitions"


def cmd_theory_directionality(args) -> str:
    images, _, _ = _dataset(args.inp)
    spec = StegoSpec(Algorithm.parse(args.algo), args.bpp)
    desc = _descriptor(args.desc)
    rep = directionality_scan(images, spec, desc, SeededRng(args.seed).child("directionality"), args.jobs)
    out = ensure_dir(args.out)
    _write_csv(out / "features.csv", ["feature", "directional_rate"],
               [(n, _fmt(r)) for n, r in zip(rep.feature_names, rep.per_feature_rate)])
    counts = np.bincount(rep.preservation, minlength=22)
    _write_csv(out / "preservation.csv", ["preserved_bins", "images"], list(enumerate(counts.tolist())))
    _write_json(out / "summary.json", {"format": FORMAT, "images": len(images),
                                       "fraction_directional": rep.fraction_directional(),
                                       "mean_preservation": float(rep.preservation.mean())})
    return (f"{rep.fraction_directional():.3f} of features directional for most images, "
            f"mean preservation {rep.preservation.mean():.2f}")


def cmd_theory_ablation(args) -> str:
    covers, _, _ = _dataset(args.train)
    test, truth, _ = _dataset(args.test)
    if truth is None:
        raise InvalidArgument("ablation needs a labeled test manifest")
    spec = StegoSpec(Algorithm.parse(args.algo), args.bpp)
    desc = _descriptor(args.desc)
    root = SeededRng(args.seed)
    stego = embed_set(covers, spec, root.child("train-stego"), args.jobs)
    train_images = covers + stego
    train_x = extract_many(train_images, desc, args.jobs)
    train_y = np.r_[np.zeros(len(covers), dtype=int), np.ones(len(stego), dtype=int)]
    train_flags = directionality_scan(train_images, spec, desc, root.child("flags-train"), args.jobs).flags
    test_flags = directionality_scan(test, spec, desc, root.child("flags-test"), args.jobs).flags
    test_x = extract_many(test, desc, args.jobs)
    test_b = extract_many(embed_set(test, spec, root.child("secondary"), args.jobs), desc, args.jobs)
    try:
        modes = [AblationMode(m.strip().lower()) for m in args.modes.split(",")]
    except ValueError as exc:
        raise InvalidArgument(f"bad ablation mode list {args.modes!r}") from exc
    reports = [ablation_classify(train_x, train_y, train_flags, test_x, truth, test_flags, m,
                                 root.child("ablation"), _config(args), test_b) for m in modes]
    if args.out:
        _write_json(args.out, {"format": FORMAT, "results": [r.to_json() for r in reports]})
    return " ".join(f"{r.mode.value}:err={r.err:.3f}" for r in reports)


# -------------------------------------------------------------------- parser

def _add_seed(p, required=True):
    p.add_argument("--seed", type=int, required=required, help="root seed for every random stream")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (results do not depend on it)")


def _add_model_opts(p):
    p.add_argument("--learners", type=int, default=51)
    p.add_argument("--subspace", type=int, default=None)
    p.add_argument("--threshold", choices=[m.value for m in ThresholdMode], default="majority")
    p.add_argument("--desc", default=None, help="feature descriptor JSON (default: reduced rich set)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stegdci", description="Steganalysis with subsequent embedding.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic covers")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--textured-fraction", type=float, default=CorpusProfile().textured_fraction)
    _add_seed(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", help="simulate embedding into every image")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algo", required=True, choices=["lsbm", "hill"])
    p.add_argument("--bpp", type=float, required=True)
    _add_seed(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("features", help="extract features to CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--desc", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the ensemble on cover and stego feature files")
    p.add_argument("--cover", required=True)
    p.add_argument("--stego", required=True)
    p.add_argument("--out", required=True)
    _add_model_opts(p)
    _add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify a feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    for name, func, needs_rate, needs_grid in (("dci", cmd_dci, True, False),
                                                ("find-bitrate", cmd_find_bitrate, False, True),
                                                ("real-world", cmd_real_world, False, True)):
        p = sub.add_parser(name)
        p.add_argument("--train", required=True, help="training covers (directory or manifest)")
        p.add_argument("--test", required=True, help="test images (labeled manifest enables error reports)")
        p.add_argument("--algo", required=True, choices=["lsbm", "hill"])
        if needs_rate:
            p.add_argument("--bpp", type=float, required=True)
        if needs_grid:
            p.add_argument("--rates", required=True, help="comma-separated, highest first")
        if name == "real-world":
            p.add_argument("--standard-rate", type=float, default=None)
        p.add_argument("--out", required=name != "find-bitrate")
        _add_model_opts(p)
        _add_seed(p)
        p.set_defaults(func=func)

    p = sub.add_parser("ats", help="label-free detection with artificial training sets")
    p.add_argument("--test", required=True)
    p.add_argument("--algo", required=True, choices=["lsbm", "hill"])
    p.add_argument("--bpp", type=float, required=True)
    p.add_argument("--out", default=None)
    _add_model_opts(p)
    _add_seed(p)
    p.set_defaults(func=cmd_ats)

    th = sub.add_parser("theory", help="histogram models and directionality experiments")
    ts = th.add_subparsers(dest="theory_command", required=True)

    p = ts.add_parser("expected")
    p.add_argument("--hist", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--model", choices=["approx", "exact", "adaptive"], default="exact")
    p.add_argument("--beta-prime", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory_expected)

    p = ts.add_parser("signs")
    p.add_argument("--hist", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--tol", type=float, default=0.0)
    p.set_defaults(func=cmd_theory_signs)

    p = ts.add_parser("cauchy")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--hist")
    src.add_argument("--in", dest="inp")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_theory_cauchy)

    p = ts.add_parser("montecarlo")
    p.add_argument("--in", dest="inp", required=True, help="directory or manifest; the first image is used")
    p.add_argument("--algo", required=True, choices=["lsbm", "hill"])
    p.add_argument("--bpp", type=float, required=True)
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=cmd_theory_montecarlo)

    p = ts.add_parser("directionality")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--algo", required=True, choices=["lsbm", "hill"])
    p.add_argument("--bpp", type=float, required=True)
    p.add_argument("--desc", default=None)
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=cmd_theory_directionality)

    p = ts.add_parser("ablation")
    p.add_argument("--train", required=True, help="training covers")
    p.add_argument("--test", required=True, help="labeled test manifest")
    p.add_argument("--algo", required=True, choices=["lsbm", "hill"])
    p.add_argument("--bpp", type=float, required=True)
    p.add_argument("--modes", default="ndfo,dfo,rrf,halfdfr")
    p.add_argument("--out", default=None)
    _add_model_opts(p)
    _add_seed(p)
    p.set_defaults(func=cmd_theory_ablation)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        line = args.func(args)
    except StegDciError as exc:
        print(f"error: {exc}", file=sys.stderr)
        # a missing or unreadable input is a usage problem from the caller's side
        return 2 if isinstance(exc, IoError) else exc.exit_code
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
