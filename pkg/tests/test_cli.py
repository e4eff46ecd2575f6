import csv
import io

import pytest

from densityfusion.cli import EXIT_CASE_FAILED, EXIT_ERROR, EXIT_OK, main
from densityfusion.pipeline import SCORE_COLUMNS, parse_scores
from densityfusion.thermal_io import MANIFEST_COLUMNS, format_manifest, load_manifest


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """40 phantom cases, a model trained on them and their scores."""
    root = tmp_path_factory.mktemp("run")
    assert main(["phantom", "--n", "40", "--seed", "7", "--out", str(root / "ph")]) == EXIT_OK
    assert main(["train", "--manifest", str(root / "ph/manifest.csv"), "--out", str(root / "model.txt")]) == EXIT_OK
    assert main(["score", "--manifest", str(root / "ph/manifest.csv"), "--model", str(root / "model.txt"),
                 "--out", str(root / "scores.csv")]) == EXIT_OK
    return root


class TestPhantom:
    def test_rerun_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert main(["phantom", "--n", "10", "--seed", "7", "--out", str(tmp_path / d)]) == EXIT_OK
        a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
        assert a == b
        assert len([k for k in a if k.startswith("frames/") and k.endswith(".pgm")]) == 10

    def test_zero_cases_header_only(self, tmp_path):
        assert main(["phantom", "--n", "0", "--out", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "manifest.csv").read_text() == ",".join(MANIFEST_COLUMNS) + "\n"

    def test_overflow_is_error(self, tmp_path):
        cfg = tmp_path / "ph.cfg"
        cfg.write_text("malignant_fraction=1\nhotspot_radius=50\nmax_retries=20\n")
        assert main(["phantom", "--config", str(cfg), "--n", "2", "--out", str(tmp_path / "o")]) == EXIT_ERROR


class TestTrainScore:
    def test_training_accuracy(self, trained):
        cases = load_manifest(trained / "ph/manifest.csv")
        scores = parse_scores((trained / "scores.csv").read_text())
        hits = sum(scores[c.case_id].thermal_positive == c.ground_truth.positive for c in cases)
        assert hits / len(cases) >= 0.95

    def test_score_file(self, trained):
        rows = list(csv.reader(io.StringIO((trained / "scores.csv").read_text())))
        assert tuple(rows[0]) == SCORE_COLUMNS
        assert len(rows) == 41
        assert all(1 <= int(r[5]) <= 5 for r in rows[1:])

    def test_train_deterministic(self, trained, tmp_path):
        out = tmp_path / "again.txt"
        assert main(["train", "--manifest", str(trained / "ph/manifest.csv"), "--out", str(out)]) == EXIT_OK
        assert out.read_bytes() == (trained / "model.txt").read_bytes()

    def test_parallel_matches_serial(self, trained, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["score", "--manifest", str(trained / "ph/manifest.csv"), "--model",
                     str(trained / "model.txt"), "--jobs", "2", "--out", str(out)]) == EXIT_OK
        assert out.read_bytes() == (trained / "scores.csv").read_bytes()

    def test_mammo_call_and_missing_frame(self, trained, tmp_path):
        cases = load_manifest(trained / "ph/manifest.csv")[:2]
        rows = format_manifest(cases).splitlines()
        # second case: drop the thermal reference, force mammo 0.44
        fields = rows[2].split(",")
        fields[MANIFEST_COLUMNS.index("mammo_prob")] = "0.44"
        fields[MANIFEST_COLUMNS.index("thermal_ref")] = ""
        rows[2] = ",".join(fields)
        man = trained / "ph" / "partial.csv"
        man.write_text("\n".join(rows) + "\n")
        out = tmp_path / "s.csv"
        code = main(["score", "--manifest", str(man), "--model", str(trained / "model.txt"), "--out", str(out)])
        assert code == EXIT_CASE_FAILED
        scores = parse_scores(out.read_text())
        second = scores[cases[1].case_id]
        assert second.failed and second.mammo_positive is True
        assert not scores[cases[0].case_id].failed

    def test_debug_maps(self, trained, tmp_path):
        man = trained / "ph" / "one.csv"
        man.write_text(format_manifest(load_manifest(trained / "ph/manifest.csv")[:1]))
        dbg = tmp_path / "dbg"
        assert main(["score", "--manifest", str(man), "--model", str(trained / "model.txt"),
                     "--debug-dir", str(dbg), "--out", str(tmp_path / "s.csv")]) == EXIT_OK
        assert sorted(p.suffix for p in dbg.iterdir()) == [".pgm", ".pgm"]

    def test_single_class_training(self, tmp_path):
        cfg = tmp_path / "benign.cfg"
        cfg.write_text("malignant_fraction=0\n")
        assert main(["phantom", "--config", str(cfg), "--n", "3", "--out", str(tmp_path / "b")]) == EXIT_OK
        assert main(["train", "--manifest", str(tmp_path / "b/manifest.csv"),
                     "--out", str(tmp_path / "m.txt")]) == EXIT_ERROR

    def test_missing_model_file(self, trained, tmp_path):
        assert main(["score", "--manifest", str(trained / "ph/manifest.csv"),
                     "--model", str(tmp_path / "nope.txt")]) == EXIT_ERROR


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fx")
    assert main(["fixture", "--out", str(d)]) == EXIT_OK
    return d


class TestEvaluate:
    def test_report_rows(self, fixture_dir, tmp_path, capsys):
        out = tmp_path / "r.csv"
        assert main(["report", "--scores", str(fixture_dir / "scores.csv"), "--manifest",
                     str(fixture_dir / "manifest.csv"), "--out", str(out)]) == EXIT_OK
        rows = {(r["policy"], r["stratum"]): r for r in csv.DictReader(out.open())}
        assert len(rows) == 12
        assert rows[("DENSITY_INFORMED", "overall")]["sensitivity"].startswith("94.55 ")
        assert rows[("DENSITY_INFORMED", "overall")]["specificity"].startswith("79.93 ")
        assert rows[("MAMMO_ONLY", "fatty")]["sensitivity"].startswith("96.30 ")

    def test_evaluate_one_policy(self, fixture_dir, tmp_path, capsys):
        assert main(["evaluate", "--scores", str(fixture_dir / "scores.csv"), "--manifest",
                     str(fixture_dir / "manifest.csv"), "--policy", "THERMAL_ONLY",
                     "--out", str(tmp_path)]) == EXIT_OK
        assert [p.name for p in tmp_path.iterdir()] == ["report_THERMAL_ONLY.csv"]
        assert "92.73" in capsys.readouterr().out

    def test_empty_manifest(self, tmp_path):
        (tmp_path / "m.csv").write_text(",".join(MANIFEST_COLUMNS) + "\n")
        (tmp_path / "s.csv").write_text(",".join(SCORE_COLUMNS) + "\n")
        assert main(["evaluate", "--scores", str(tmp_path / "s.csv"),
                     "--manifest", str(tmp_path / "m.csv")]) == EXIT_ERROR

    def test_bad_policy(self, fixture_dir):
        assert main(["report", "--scores", str(fixture_dir / "scores.csv"), "--manifest",
                     str(fixture_dir / "manifest.csv"), "--policy", "AND"]) == EXIT_ERROR
