import numpy as np
import pytest

from localmahal.cli import main
from localmahal.dataio import LabeledSet, make_blobs, write_feature_table
from localmahal.metric import load_metric, materialize


@pytest.fixture
def toy_table(tmp_path):
    path = tmp_path / "toy.csv"
    ds = LabeledSet(
        features=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        labels=("q", "n", "n"),
    )
    write_feature_table(path, ds)
    return path


@pytest.fixture
def blob_tables(tmp_path):
    data = make_blobs(2, 12, 4, 0.1, seed=5)
    train = tmp_path / "train.csv"
    test = tmp_path / "test.csv"
    write_feature_table(train, LabeledSet(data.features[::2], data.labels[::2]))
    write_feature_table(test, LabeledSet(data.features[1::2], data.labels[1::2]))
    return train, test


class TestLearn:
    def test_query_by_index(self, toy_table, tmp_path, capsys):
        out = tmp_path / "m.lmm"
        rc = main(["learn", "--negatives", str(toy_table), "--query", "0",
                   "--out", str(out)])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert "support_count=2" in lines
        assert "rank=2" in lines
        assert any(line.startswith("margin_violation=") for line in lines)
        metric, _ = load_metric(out)
        np.testing.assert_allclose(materialize(metric), np.diag([2.0, 2.0]), atol=1e-6)

    def test_query_from_file(self, toy_table, tmp_path):
        qpath = tmp_path / "q.csv"
        qpath.write_text("q,0.0,0.0\n")
        out = tmp_path / "m.lmm"
        rc = main(["learn", "--negatives", str(toy_table), "--query", str(qpath),
                   "--out", str(out)])
        assert rc == 0 and out.exists()

    def test_blank_tangents_match_plain_run(self, toy_table, tmp_path):
        tpath = tmp_path / "tangents.csv"
        tpath.write_text("t,0.0,0.0\n")
        plain = tmp_path / "plain.lmm"
        blank = tmp_path / "blank.lmm"
        assert main(["learn", "--negatives", str(toy_table), "--query", "0",
                     "--out", str(plain)]) == 0
        assert main(["learn", "--negatives", str(toy_table), "--query", "0",
                     "--tangents-file", str(tpath), "--out", str(blank)]) == 0
        assert plain.read_bytes() == blank.read_bytes()

    def test_missing_out_is_usage_error(self, toy_table):
        with pytest.raises(SystemExit) as exc:
            main(["learn", "--negatives", str(toy_table), "--query", "0"])
        assert exc.value.code == 2

    def test_query_index_out_of_range(self, toy_table, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["learn", "--negatives", str(toy_table), "--query", "99",
                  "--out", str(tmp_path / "m.lmm")])
        assert exc.value.code == 2

    def test_missing_input_file_is_runtime_error(self, tmp_path):
        rc = main(["learn", "--negatives", str(tmp_path / "absent.csv"),
                   "--query", "0", "--out", str(tmp_path / "m.lmm")])
        assert rc == 1

    def test_tangents_without_shape_rejected(self, toy_table, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["learn", "--negatives", str(toy_table), "--query", "0",
                  "--tangents", "unit-shifts", "--out", str(tmp_path / "m.lmm")])
        assert exc.value.code == 2


class TestKnnEval:
    @staticmethod
    def _run(train, test, report, seed="0"):
        return main([
            "knn-eval", "--table", str(train), "--test-table", str(test),
            "--methods", "l2,local_mahal", "--negatives", "all-other-classes",
            "--seed", seed, "--report", str(report),
        ])

    def test_runs_and_writes_reports(self, blob_tables, tmp_path, capsys):
        train, test = blob_tables
        report = tmp_path / "report.txt"
        assert self._run(train, test, report) == 0
        out = capsys.readouterr().out
        assert "l2: error_rate=" in out and "local_mahal: error_rate=" in out
        assert report.exists()
        assert (tmp_path / "report.txt.csv").exists()
        assert (tmp_path / "report.txt.timings").exists()

    def test_same_seed_byte_identical_reports(self, blob_tables, tmp_path):
        train, test = blob_tables
        r1, r2 = tmp_path / "r1.txt", tmp_path / "r2.txt"
        assert self._run(train, test, r1, seed="11") == 0
        assert self._run(train, test, r2, seed="11") == 0
        assert r1.read_bytes() == r2.read_bytes()
        assert (tmp_path / "r1.txt.csv").read_bytes() == (tmp_path / "r2.txt.csv").read_bytes()

    def test_even_k_rejected(self, blob_tables, tmp_path):
        train, test = blob_tables
        with pytest.raises(SystemExit) as exc:
            main(["knn-eval", "--table", str(train), "--test-table", str(test),
                  "--k", "2", "--report", str(tmp_path / "r.txt")])
        assert exc.value.code == 2

    def test_table_without_test_table_rejected(self, blob_tables, tmp_path):
        train, _ = blob_tables
        with pytest.raises(SystemExit) as exc:
            main(["knn-eval", "--table", str(train), "--report", str(tmp_path / "r.txt")])
        assert exc.value.code == 2


class TestVerifyPairs:
    @pytest.fixture
    def pair_files(self, tmp_path):
        rng = np.random.default_rng(2)
        feats = np.concatenate([
            rng.normal(0.0, 0.05, size=(10, 3)) + [4.0, 0, 0],
            rng.normal(0.0, 0.05, size=(10, 3)) + [0, 4.0, 0],
        ])
        fpath = tmp_path / "feats.csv"
        write_feature_table(fpath, LabeledSet(feats, tuple("x" * 20)))
        bank = rng.normal(0.0, 1.0, size=(15, 3)) + [0, 0, 4.0]
        bpath = tmp_path / "bank.csv"
        write_feature_table(bpath, LabeledSet(bank, tuple("b" * 15)))
        ppath = tmp_path / "pairs.csv"
        lines = []
        for i in range(0, 10, 2):
            lines.append(f"1,{i},{i + 1}")
            lines.append(f"0,{i},{i + 10}")
        ppath.write_text("\n".join(lines) + "\n")
        return fpath, ppath, bpath

    def test_separable_pairs(self, pair_files, tmp_path, capsys):
        fpath, ppath, bpath = pair_files
        report = tmp_path / "pairs_report.txt"
        rc = main(["verify-pairs", "--features", str(fpath), "--pairs", str(ppath),
                   "--bank", str(bpath), "--folds", "2", "--report", str(report)])
        assert rc == 0
        assert "error_rate=0.0000" in capsys.readouterr().out
        assert report.exists()

    def test_single_fold_rejected(self, pair_files, tmp_path):
        fpath, ppath, bpath = pair_files
        with pytest.raises(SystemExit) as exc:
            main(["verify-pairs", "--features", str(fpath), "--pairs", str(ppath),
                  "--bank", str(bpath), "--folds", "1",
                  "--report", str(tmp_path / "r.txt")])
        assert exc.value.code == 2


class TestBench:
    def test_small_case_writes_table(self, tmp_path, capsys):
        out = tmp_path / "bench.txt"
        rc = main(["bench", "--sizes", "2x3", "--reps", "5", "--out", str(out)])
        assert rc == 0
        assert "n=2 d=3" in capsys.readouterr().out
        assert out.exists()

    def test_empty_sizes_rejected(self):
        with pytest.raises(SystemExit) as exc:
            main(["bench", "--sizes", " ; "])
        assert exc.value.code == 2


class TestOracleCheck:
    def test_small_run(self, capsys):
        assert main(["oracle-check", "--trials", "3", "--seed", "5"]) == 0
        assert "ok: 3 trials" in capsys.readouterr().out


class TestTopLevel:
    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_args_file_expansion(self, toy_table, tmp_path, capsys):
        out = tmp_path / "m.lmm"
        afile = tmp_path / "args.txt"
        afile.write_text("\n".join([
            "--negatives", str(toy_table), "--query", "0", "--out", str(out),
        ]) + "\n")
        assert main(["learn", "--args-file", str(afile)]) == 0
        assert out.exists()

    def test_missing_args_file(self, tmp_path):
        assert main(["learn", "--args-file", str(tmp_path / "nope.txt")]) == 2
