import shutil

import pytest

from redundancy_lab import cli, ingest
from redundancy_lab.ablate import full_report
from redundancy_lab.core import EncoderSubset

EAGLE = str(ingest.fixture_path("eagle_x5_7b.csv"))
CAMBRIAN = str(ingest.fixture_path("cambrian1_8b.csv"))

REPORT_FILES = {"cur_ig.md", "cur_ig.csv", "degradation.md", "degradation.csv", "summary.md",
                "extremes.csv", "distribution.csv", "distribution.svg"}


def test_analyze_eagle(tmp_path, capsys):
    assert cli.main(["analyze", "--scores", EAGLE, "--out", str(tmp_path)]) == 0
    assert {p.name for p in tmp_path.iterdir()} == REPORT_FILES
    text = (tmp_path / "cur_ig.md").read_text()
    assert "| General | 5 | 1.38 | 1.94 | 0.18 | 10.09 | 0.58 | 9.91 |" in text


def test_analyze_cambrian_degradation(tmp_path):
    assert cli.main(["analyze", "--scores", CAMBRIAN, "--out", str(tmp_path)]) == 0
    assert "| 59.10 (-6.2%) |" in (tmp_path / "degradation.md").read_text()


def test_analyze_format_md_only(tmp_path):
    assert cli.main(["analyze", "--scores", CAMBRIAN, "--out", str(tmp_path), "--format", "md"]) == 0
    assert not (tmp_path / "cur_ig.csv").exists() and (tmp_path / "cur_ig.md").exists()


@pytest.mark.parametrize("rule", ["per-subset-mean", "mean-of-scores"])
def test_analyze_cur_rule_flag(tmp_path, rule):
    assert cli.main(["analyze", "--scores", EAGLE, "--out", str(tmp_path), "--cur-rule", rule]) == 0
    assert f"CUR rule: {rule}" in (tmp_path / "cur_ig.md").read_text()


def test_missing_category_file_leaves_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["analyze", "--scores", EAGLE, "--categories", str(tmp_path / "nope.csv"), "--out", str(out)])
    assert code == cli.EXIT_DATA
    assert not out.exists()
    assert "not found" in capsys.readouterr().err


def test_failure_keeps_previous_outputs(tmp_path):
    assert cli.main(["analyze", "--scores", CAMBRIAN, "--out", str(tmp_path)]) == 0
    before = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    bad = tmp_path.parent / "bad.csv"
    bad.write_text("# redundancy-lab v1\nmodel,masked_encoders,benchmark,score\nm,X,General,oops\n")
    assert cli.main(["analyze", "--scores", str(bad), "--out", str(tmp_path)]) == cli.EXIT_DATA
    assert {p.name: p.read_bytes() for p in tmp_path.iterdir()} == before


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["analyze", "--out", "x"])
    assert info.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        cli.main(["analyze", "--scores", EAGLE, "--out", "x", "--cur-rule", "median"])
    assert info.value.code == cli.EXIT_USAGE


def test_numerical_failure_exit_3(tmp_path):
    scores = tmp_path / "zero.csv"
    scores.write_text(
        "# redundancy-lab v1\n# encoders: A;B\nmodel,masked_encoders,benchmark,score\n"
        "m,-,General,0\nm,A,General,1\nm,B,General,1\nm,A;B,General,0\n"
    )
    assert cli.main(["analyze", "--scores", str(scores), "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERIC
    assert not (tmp_path / "o").exists()


def test_per_benchmark_table_uses_default_scheme(tmp_path):
    scores = tmp_path / "b.csv"
    rows = ["m,-,MME,1600", "m,-,GQA,60", "m,A,MME,1400", "m,A,GQA,50"]
    scores.write_text("# redundancy-lab v1\n# encoders: A\nmodel,masked_encoders,benchmark,score\n" + "\n".join(rows) + "\n")
    assert cli.main(["analyze", "--scores", str(scores), "--out", str(tmp_path / "o")]) == 0
    _, rows = ingest.read_report_csv(tmp_path / "o" / "distribution.csv")
    general = {r["masked"]: float(r["score"]) for r in rows if r["category"] == "General"}
    assert general == {"-": 70.0, "A": 60.0}


def test_emitted_csvs_reingest(tmp_path, cambrian):
    assert cli.main(["analyze", "--scores", CAMBRIAN, "--out", str(tmp_path)]) == 0
    rep = full_report(cambrian)
    names = cambrian.encoder_names
    for name in ("cur_ig.csv", "degradation.csv", "extremes.csv", "distribution.csv"):
        header, rows = ingest.read_report_csv(tmp_path / name)
        assert rows and len(header) == len(rows[0])
    _, rows = ingest.read_report_csv(tmp_path / "distribution.csv")
    for r in rows:
        masked = [] if r["masked"] == "-" else r["masked"].split(";")
        subset = EncoderSubset.from_indices([i for i, e in enumerate(names) if e not in masked], len(names))
        assert float(r["score"]) == rep.aggregates.score(subset, r["category"])
    _, rows = ingest.read_report_csv(tmp_path / "cur_ig.csv")
    first = rows[0]
    assert first["rule"] == "size-mean" and first["category"] == "General" and first["size"] == "4"
    assert float(first["CLIP"]) == rep.cur.value("General", 4, "CLIP") * 100


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.count("PASS") == 9


def test_selftest_grad_tolerance_override(capsys):
    assert cli.main(["selftest", "--grad-tol", "1e-12"]) != 0
    out = capsys.readouterr().out
    assert "FAIL gradient" in out and "PASS fixture" in out


def test_selftest_corrupted_fixture(tmp_path, capsys):
    for name in ingest.FIXTURE_DIGESTS:
        shutil.copy(ingest.fixture_path(name), tmp_path / name)
    path = tmp_path / "eagle_x5_7b.csv"
    path.write_text(path.read_text().replace("70.64", "70.46"))
    assert cli.main(["selftest", "--fixtures", str(tmp_path)]) != 0
    out = capsys.readouterr().out
    assert "FAIL fixture eagle_x5_7b.csv: content digest mismatch" in out
    assert "PASS fixture cambrian1_8b.csv" in out


def test_selftest_unreadable_fixture(tmp_path, capsys):
    (tmp_path / "eagle_x5_7b.csv").write_text("garbage\n")
    shutil.copy(ingest.fixture_path("cambrian1_8b.csv"), tmp_path)
    assert cli.main(["selftest", "--fixtures", str(tmp_path)]) != 0
    assert "FAIL fixture eagle_x5_7b.csv: cannot load" in capsys.readouterr().out


def test_simulate_outputs(clone_run):
    names = {p.name for p in clone_run.iterdir()}
    assert names == REPORT_FILES | {"scores.csv", "categories.csv", "loss.csv"}
    table = ingest.load_score_table(clone_run / "scores.csv")
    assert table.encoder_names == ("A", "A-copy", "B") and table.is_complete
    scheme = ingest.load_category_scheme(clone_run / "categories.csv")
    assert scheme.category_of("text") == "OCR & Chart"
    header, rows = ingest.read_report_csv(clone_run / "loss.csv")
    assert header == ["step", "loss", "batch_loss"] and len(rows) == 3000
    assert float(rows[-1]["loss"]) < float(rows[0]["loss"])


def test_simulate_reanalyze_matches(clone_run, tmp_path):
    args = ["analyze", "--scores", str(clone_run / "scores.csv"),
            "--categories", str(clone_run / "categories.csv"), "--out", str(tmp_path)]
    assert cli.main(args) == 0
    for name in ("cur_ig.md", "degradation.csv", "distribution.svg"):
        assert (tmp_path / name).read_bytes() == (clone_run / name).read_bytes()


def test_simulate_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[world]\nchannels = 4\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert not (tmp_path / "o").exists()


def test_simulate_seed_override(tmp_path):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(
        'seed = 0\n[world]\nchannels = 4\n[[world.tasks]]\nname = "t"\ncategory = "General"\nchannels = "0-3"\n'
        '[[encoders]]\nname = "A"\nchannels = "0-1"\n[[encoders]]\nname = "B"\nchannels = "2-3"\n'
        "[train]\nsteps = 20\n[eval]\nsamples = 200\n"
    )
    outs = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        assert cli.main(["simulate", "--config", str(cfg), "--seed", seed, "--out", str(out)]) == 0
        outs.append((out / "scores.csv").read_text())
    assert "tiny-seed1" in outs[0] and "tiny-seed2" in outs[1]
    assert outs[0].replace("seed1", "") != outs[1].replace("seed2", "")


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "redundancy_lab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "selftest" in proc.stdout
