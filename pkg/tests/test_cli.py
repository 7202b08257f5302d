import csv
import json

import pytest

from stegdci.cli import main
from stegdci.features import load_features


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "train"), "--count", "100", "--size", "32", "--seed", "7"]) == 0
    assert main(["synth", "--out", str(root / "test"), "--count", "20", "--size", "32", "--seed", "8"]) == 0
    assert main(["embed", "--in", str(root / "test"), "--out", str(root / "stego"), "--algo", "lsbm",
                 "--bpp", "0.4", "--seed", "9"]) == 0
    entries = [{"path": f"test/cover_{i:05d}.pgm", "label": "cover"} for i in range(10)]
    entries += [{"path": f"stego/cover_{i:05d}.pgm", "label": "stego", "algo": "lsbm", "bpp": 0.4}
                for i in range(10, 20)]
    (root / "labeled.json").write_text(json.dumps(entries))
    return root


def test_zero_payload_copies_bytes(corpus, capsys, tmp_path):
    code, _, _ = run(capsys, "embed", "--in", corpus / "test", "--out", tmp_path / "z", "--algo", "hill", "--bpp", 0,
                     "--seed", 1)
    assert code == 0
    for src in sorted((corpus / "test").glob("*.pgm")):
        assert (tmp_path / "z" / src.name).read_bytes() == src.read_bytes()


def test_embed_is_reproducible(corpus, capsys, tmp_path):
    for d in ("a", "b"):
        assert run(capsys, "embed", "--in", corpus / "test", "--out", tmp_path / d, "--algo", "hill", "--bpp", 0.3,
                   "--seed", 4)[0] == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    side = json.loads((tmp_path / "a" / "embed.json").read_text())
    assert side["format"] == 1 and side["seed"] == 4 and side["spec"] == {"algo": "hill", "bpp": 0.3}
    assert side["images"][3]["stream"] == "embed:3"


def test_embed_jobs_do_not_change_output(corpus, capsys, tmp_path):
    for d, jobs in (("a", 1), ("b", 3)):
        run(capsys, "embed", "--in", corpus / "test", "--out", tmp_path / d, "--algo", "lsbm", "--bpp", 0.5,
            "--seed", 4, "--jobs", jobs)
    for p in (tmp_path / "a").glob("*.pgm"):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_out_of_range_payload(corpus, capsys, tmp_path):
    code, _, err = run(capsys, "embed", "--in", corpus / "test", "--out", tmp_path / "x", "--algo", "lsbm",
                       "--bpp", 1.7, "--seed", 1)
    assert code == 2
    assert "[0, 1]" in err


def test_unreadable_input(capsys, tmp_path):
    code, _, err = run(capsys, "embed", "--in", tmp_path / "missing", "--out", tmp_path / "x", "--algo", "lsbm",
                       "--bpp", 0.1, "--seed", 1)
    assert code == 2 and err.startswith("error:")


def test_seed_is_mandatory(corpus, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["embed", "--in", str(corpus / "test"), "--out", str(tmp_path / "x"), "--algo", "lsbm", "--bpp", "0.1"])
    assert exc.value.code == 2


def test_features_of_empty_directory(capsys, tmp_path):
    (tmp_path / "empty").mkdir()
    code, _, _ = run(capsys, "features", "--in", tmp_path / "empty", "--out", tmp_path / "f.csv")
    assert code == 0
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == 1


def test_features_rows_and_hash(corpus, capsys, tmp_path):
    out = tmp_path / "f.csv"
    code, line, _ = run(capsys, "features", "--in", corpus / "test", "--out", out)
    assert code == 0
    x, desc, names = load_features(out)
    assert x.shape == (20, desc.dimension) and len(names) == 20
    header = out.read_text().splitlines()[0]
    sidecar = json.loads(out.with_name(out.name + ".json").read_text())
    assert desc.hash in header and desc.hash in line
    assert sidecar["hash"] == desc.hash


def test_malformed_descriptor(corpus, capsys, tmp_path):
    for text in ("{oops", '{"submodels": ["nope"]}'):
        (tmp_path / "d.json").write_text(text)
        code, _, _ = run(capsys, "features", "--in", corpus / "test", "--desc", tmp_path / "d.json",
                         "--out", tmp_path / "f.csv")
        assert code == 2


def test_train_and_predict(corpus, capsys, tmp_path):
    run(capsys, "features", "--in", corpus / "train", "--out", tmp_path / "c.csv")
    run(capsys, "embed", "--in", corpus / "train", "--out", tmp_path / "s", "--algo", "lsbm", "--bpp", 0.5,
        "--seed", 2)
    run(capsys, "features", "--in", tmp_path / "s", "--out", tmp_path / "s.csv")
    code, _, _ = run(capsys, "train", "--cover", tmp_path / "c.csv", "--stego", tmp_path / "s.csv",
                     "--out", tmp_path / "m.json", "--learners", 5, "--seed", 3)
    assert code == 0
    code, line, _ = run(capsys, "predict", "--model", tmp_path / "m.json", "--features", tmp_path / "s.csv",
                        "--out", tmp_path / "p.csv")
    assert code == 0 and "100 images" in line
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert len(rows) == 100 and set(rows[0]) == {"name", "label", "votes"}


def test_dci_reports_both_errors(corpus, capsys, tmp_path):
    code, line, _ = run(capsys, "dci", "--train", corpus / "train", "--test", corpus / "labeled.json",
                        "--algo", "lsbm", "--bpp", 0.4, "--out", tmp_path / "d", "--learners", 5, "--seed", 1)
    assert code == 0
    assert "Err=" in line and "err_hat_0.5=" in line
    report = json.loads((tmp_path / "d" / "report.json").read_text())
    assert report["format"] == 1 and report["N_T"] == 20
    rows = list(csv.reader(open(tmp_path / "d" / "verdicts.csv")))
    assert len(rows) == 21 and rows[1][1] == "test/cover_00000.pgm"


def test_dci_is_reproducible(corpus, capsys, tmp_path):
    outs = []
    for d, jobs in (("a", 1), ("b", 2)):
        run(capsys, "dci", "--train", corpus / "train", "--test", corpus / "labeled.json", "--algo", "lsbm",
            "--bpp", 0.4, "--out", tmp_path / d, "--learners", 5, "--seed", 1, "--jobs", jobs)
        outs.append((tmp_path / d / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_find_bitrate_prints_table_then_rate(corpus, capsys):
    code, out, _ = run(capsys, "find-bitrate", "--train", corpus / "train", "--test", corpus / "labeled.json",
                       "--algo", "lsbm", "--rates", "0.5,0.4", "--learners", 5, "--seed", 1)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("rate\tErr")
    assert lines[-1].startswith("rate=")


def test_bad_rate_list(corpus, capsys):
    code, _, err = run(capsys, "find-bitrate", "--train", corpus / "train", "--test", corpus / "labeled.json",
                       "--algo", "lsbm", "--rates", "0.2,0.4", "--seed", 1)
    assert code == 2 and "decreasing" in err


def test_real_world_outputs(corpus, capsys, tmp_path):
    code, line, _ = run(capsys, "real-world", "--train", corpus / "train", "--test", corpus / "labeled.json",
                        "--algo", "lsbm", "--rates", "0.5,0.4,0.3", "--out", tmp_path / "r", "--learners", 5,
                        "--seed", 1)
    assert code == 0 and line.startswith("classified=")
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["format"] == 1 and summary["standard_rate"] == 0.4
    assert [r["subset"] for r in summary["table"]] == ["Stego 0.4", "All stego", "All cover", "All"]
    header = next(csv.reader(open(tmp_path / "r" / "fused.csv")))
    assert header == ["name", "label", "standard", "0.5", "0.4", "0.3"]


def test_ats_command(corpus, capsys, tmp_path):
    code, _, err = run(capsys, "ats", "--test", corpus / "labeled.json", "--algo", "lsbm", "--bpp", 0.4, "--seed", 1)
    assert code == 2 and "40" in err


def test_theory_signs(capsys, tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("k,count\n-3,10\n-2,40\n-1,90\n0,150\n1,90\n2,40\n3,10\n")
    code, out, _ = run(capsys, "theory", "signs", "--hist", p, "--alpha", 0.2)
    assert code == 0
    rows = [l.split("\t") for l in out.strip().splitlines()[1:-1]]
    assert [r[0] for r in rows] == ["-1", "0", "1"]
    assert all(r[1] in "+-0" and r[2] in "+-0" for r in rows)
    assert rows[1][1] == "-"   # the peak loses mass


def test_theory_signs_bad_histogram(capsys, tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("k,count\n0,abc\n")
    assert run(capsys, "theory", "signs", "--hist", p, "--alpha", 0.2)[0] == 3


def test_theory_expected_and_cauchy(capsys, tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("-2,40\n-1,90\n0,150\n1,90\n2,40\n")
    code, _, _ = run(capsys, "theory", "expected", "--hist", p, "--alpha", 0.1, "--out", tmp_path / "e.csv")
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "e.csv")))
    assert [r["k"] for r in rows] == ["-2", "-1", "0", "1", "2"]
    code, line, _ = run(capsys, "theory", "cauchy", "--hist", p, "--out", tmp_path / "c.json")
    assert code == 0 and line.startswith("gamma=")
    assert json.loads((tmp_path / "c.json").read_text())["format"] == 1


def test_theory_montecarlo_and_directionality(corpus, capsys, tmp_path):
    code, _, _ = run(capsys, "theory", "montecarlo", "--in", corpus / "test", "--algo", "lsbm", "--bpp", 0.5,
                     "--reps", 5, "--window", 3, "--out", tmp_path / "mc.csv", "--seed", 2)
    assert code == 0
    assert len(list(csv.reader(open(tmp_path / "mc.csv")))) == 8
    code, _, _ = run(capsys, "theory", "directionality", "--in", corpus / "test", "--algo", "lsbm", "--bpp", 0.5,
                     "--out", tmp_path / "dir", "--seed", 2)
    assert code == 0
    assert json.loads((tmp_path / "dir" / "summary.json").read_text())["images"] == 20
