"""End-to-end tests of the command-line interface: verbs, exit codes, file
round trips, and byte-level determinism of produced artifacts."""

import json
import subprocess
import sys

import numpy as np
import pytest

from restartlab.cli import EXIT_DATA, EXIT_OK, EXIT_UNBOUNDED, EXIT_USAGE, main
from restartlab.io import read_dataset, read_instance, read_model, write_dataset, write_rtd
from restartlab.learn import Dataset

DATASET_ARGS = [
    "dataset",
    "--order", "10",
    "--holes", "70",
    "--balanced",
    "--runs", "40",
    "--test-runs", "12",
    "--horizon", "20",
    "--cutoff", "3000",
    "--seed", "3",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One shared tree: an instance file, a small dataset, a trained model."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--order", "10", "--holes", "70", "--balanced",
                 "--seed", "2", "-o", str(root / "inst.txt")]) == EXIT_OK
    assert main(DATASET_ARGS + ["--out-prefix", str(root / "small")]) == EXIT_OK
    assert main(["train", str(root / "small_train.csv"),
                 "-o", str(root / "model.json")]) == EXIT_OK
    return root


class TestGenerate:
    def test_writes_readable_instance(self, workdir):
        inst = read_instance(str(workdir / "inst.txt"))
        assert inst.order == 10
        assert inst.hole_count() == 70

    def test_zero_holes_gives_complete_square(self, tmp_path):
        out = tmp_path / "full.txt"
        assert main(["generate", "--order", "6", "-o", str(out)]) == EXIT_OK
        assert read_instance(str(out)).is_complete()

    def test_balanced_requires_divisibility(self, tmp_path):
        code = main(["generate", "--order", "10", "--holes", "73", "--balanced",
                     "-o", str(tmp_path / "x.txt")])
        assert code == EXIT_USAGE

    def test_deterministic_output(self, tmp_path, monkeypatch):
        # headers echo the invocation, so identical flags need identical paths
        args = ["generate", "--order", "8", "--holes", "24", "--seed", "9",
                "-o", "x.txt"]
        blobs = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            d.mkdir()
            monkeypatch.chdir(d)
            assert main(args) == EXIT_OK
            blobs.append((d / "x.txt").read_bytes())
        assert blobs[0] == blobs[1]


class TestSolve:
    def test_reports_outcome(self, workdir, capsys):
        assert main(["solve", str(workdir / "inst.txt"), "--seed", "5"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith(("SOLVED", "CUTOFF"))
        assert "choice_points=" in out

    def test_same_seed_same_outcome(self, workdir, capsys):
        main(["solve", str(workdir / "inst.txt"), "--seed", "5"])
        first = capsys.readouterr().out
        main(["solve", str(workdir / "inst.txt"), "--seed", "5"])
        assert capsys.readouterr().out == first

    def test_report_file(self, workdir, tmp_path, capsys):
        out = tmp_path / "run.json"
        assert main(["solve", str(workdir / "inst.txt"), "--seed", "1",
                     "-o", str(out)]) == EXIT_OK
        capsys.readouterr()
        obj = json.loads(out.read_text())
        assert obj["report"]["outcome"] in ("SOLVED", "CUTOFF")

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        assert main(["solve", str(tmp_path / "nope.txt")]) == EXIT_DATA
        assert "error" in capsys.readouterr().err

    def test_conflicting_instance_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("1 1\n2 2\n")
        assert main(["solve", str(bad)]) == EXIT_DATA
        capsys.readouterr()


class TestDataset:
    def test_bookkeeping_matches_files(self, workdir, capsys):
        train = read_dataset(str(workdir / "small_train.csv"))
        test = read_dataset(str(workdir / "small_test.csv"))
        for ds, total in ((train, 40), (test, 12)):
            meta = ds.provenance["meta"]
            assert meta["total"] == total
            assert meta["under_horizon"] + meta["rows"] + meta["cutoff_hit"] == total
            assert meta["rows"] == int((~ds.censored).sum())
            assert meta["cutoff_hit"] == int(ds.censored.sum())
            assert meta["horizon"] == 20
        assert test.median == train.median
        assert int(train.runtime.min()) >= 20

    def test_labels_follow_median(self, workdir):
        train = read_dataset(str(workdir / "small_train.csv"))
        keep = ~train.censored
        np.testing.assert_array_equal(
            train.is_short[keep], train.runtime[keep] < train.median
        )
        assert not train.is_short[train.censored].any()

    def test_rtd_counts_all_solved_runs(self, workdir):
        from restartlab.io import read_rtd

        rtd = read_rtd(str(workdir / "small_rtd.txt"))
        train = read_dataset(str(workdir / "small_train.csv"))
        test = read_dataset(str(workdir / "small_test.csv"))
        censored = int(train.censored.sum() + test.censored.sum())
        assert rtd.size == 52 - censored

    def test_byte_identical_across_reruns_and_threads(self, tmp_path, monkeypatch):
        args = [
            "dataset", "--order", "10", "--holes", "70", "--balanced",
            "--runs", "14", "--test-runs", "6", "--horizon", "20",
            "--cutoff", "3000", "--seed", "11", "--out-prefix", "run",
        ]
        blobs = {}
        for tag, extra in (
            ("a", []), ("b", []), ("c", ["--threads", "2"])
        ):
            d = tmp_path / tag
            d.mkdir()
            monkeypatch.chdir(d)
            assert main(args + extra) == EXIT_OK
            blobs[tag] = tuple(
                (d / f"run_{kind}").read_bytes()
                for kind in ("train.csv", "test.csv", "rtd.txt")
            )
        assert blobs["a"] == blobs["b"]
        assert blobs["a"] == blobs["c"]

    def test_indivisible_balanced_holes_rejected(self, tmp_path):
        code = main(["dataset", "--order", "10", "--holes", "73", "--balanced",
                     "--runs", "4", "--out-prefix", str(tmp_path / "x")])
        assert code == EXIT_USAGE

    def test_multi_instance_mode_runs(self, tmp_path, capsys):
        code = main([
            "dataset", "--mode", "multi", "--order", "10", "--holes", "50",
            "--balanced", "--runs", "12", "--test-runs", "0", "--horizon", "2",
            "--cutoff", "2000", "--seed", "4",
            "--out-prefix", str(tmp_path / "m"),
        ])
        assert code == EXIT_OK
        ds = read_dataset(str(tmp_path / "m_train.csv"))
        assert ds.provenance["meta"]["mode"] == "MULTI_INSTANCE"
        np.testing.assert_allclose(ds.scaled_runtime, ds.runtime / ds.divisor)

    def test_fixed_instance_file(self, workdir, tmp_path, capsys):
        code = main([
            "dataset", "--instance", str(workdir / "inst.txt"), "--order", "10",
            "--runs", "10", "--test-runs", "0", "--horizon", "2",
            "--cutoff", "2000", "--seed", "6",
            "--out-prefix", str(tmp_path / "fx"),
        ])
        assert code == EXIT_OK
        capsys.readouterr()


class TestTrain:
    def test_model_round_trip(self, workdir, capsys):
        model = read_model(str(workdir / "model.json"))
        train = read_dataset(str(workdir / "small_train.csv"))
        assert model.columns == train.columns
        assert model.training_median == train.median
        assert model.leaf_count >= 1

    def test_stdout_mentions_leaves(self, workdir, capsys):
        assert main(["train", str(workdir / "small_train.csv"),
                     "-o", str(workdir / "model2.json")]) == EXIT_OK
        assert "leaves" in capsys.readouterr().out

    def test_deterministic_model_file(self, workdir, tmp_path, monkeypatch, capsys):
        blobs = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            d.mkdir()
            monkeypatch.chdir(d)
            main(["train", str(workdir / "small_train.csv"), "-o", "m.json"])
            blobs.append((d / "m.json").read_bytes())
        capsys.readouterr()
        assert blobs[0] == blobs[1]

    def test_foreign_schema_rejected(self, tmp_path, capsys):
        ds = Dataset(
            columns=["a", "b"],
            X=np.zeros((4, 2)),
            runtime=np.array([5, 6, 7, 8]),
            is_short=np.array([True, True, False, False]),
            censored=np.zeros(4, bool),
            divisor=np.ones(4),
            median=6.5,
        )
        path = tmp_path / "odd.csv"
        write_dataset(str(path), ds)
        assert main(["train", str(path), "-o", str(tmp_path / "m.json")]) == EXIT_DATA
        capsys.readouterr()


class TestEval:
    def test_prints_both_scores(self, workdir, capsys):
        assert main(["eval", str(workdir / "model.json"),
                     str(workdir / "small_test.csv")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "model: accuracy" in out
        assert "marginal: accuracy" in out

    def test_report_payload(self, workdir, tmp_path, capsys):
        out = tmp_path / "eval.json"
        assert main(["eval", str(workdir / "model.json"),
                     str(workdir / "small_test.csv"), "-o", str(out)]) == EXIT_OK
        capsys.readouterr()
        rep = json.loads(out.read_text())["report"]
        assert set(rep) == {"test_rows", "model", "marginal"}
        assert 0.0 <= rep["model"]["accuracy"] <= 1.0
        assert rep["marginal"]["avg_log_score"] <= 0.0

    def test_column_mismatch_rejected(self, workdir, tmp_path, capsys):
        ds = Dataset(
            columns=["a"],
            X=np.zeros((2, 1)),
            runtime=np.array([5, 9]),
            is_short=np.array([True, False]),
            censored=np.zeros(2, bool),
            divisor=np.ones(2),
            median=7.0,
        )
        path = tmp_path / "narrow.csv"
        write_dataset(str(path), ds)
        assert main(["eval", str(workdir / "model.json"), str(path)]) == EXIT_DATA
        capsys.readouterr()


class TestCascade:
    def test_runs_and_reports(self, workdir, tmp_path, capsys):
        out = tmp_path / "cascade.json"
        code = main([
            "cascade", str(workdir / "small_train.csv"),
            str(workdir / "small_test.csv"),
            "--thresholds", "20,60", "--min-rows", "5", "-o", str(out),
        ])
        assert code == EXIT_OK
        stages = json.loads(out.read_text())["report"]["stages"]
        assert [s["threshold"] for s in stages] == [20.0, 60.0]
        assert capsys.readouterr().out.count("t=") == 2

    def test_unsorted_thresholds_rejected(self, workdir, capsys):
        code = main(["cascade", str(workdir / "small_train.csv"),
                     str(workdir / "small_test.csv"), "--thresholds", "60,20"])
        assert code == EXIT_USAGE
        capsys.readouterr()

    def test_threshold_below_horizon_rejected(self, workdir, capsys):
        code = main(["cascade", str(workdir / "small_train.csv"),
                     str(workdir / "small_test.csv"), "--thresholds", "5,60"])
        assert code == EXIT_USAGE
        capsys.readouterr()


class TestPolicy:
    def test_fixed_and_luby(self, workdir, tmp_path, capsys):
        out = tmp_path / "pol.json"
        code = main([
            "policy", str(workdir / "small_rtd.txt"),
            "--policy", "fixed:50", "--policy", "luby:1",
            "--trials", "2000", "--seed", "7", "-o", str(out),
        ])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "optimal fixed cutoff" in text
        assert "fixed:50" in text and "luby:1" in text
        rep = json.loads(out.read_text())["report"]
        assert len(rep["policies"]) == 2
        assert {"p50", "p90", "p99"} <= set(rep["policies"][0]["percentiles"])

    def test_dynamic_synthetic(self, workdir, capsys):
        code = main([
            "policy", str(workdir / "small_rtd.txt"),
            "--policy", "dynamic:20,2000", "--accuracy", "0.9",
            "--trials", "2000", "--seed", "1",
        ])
        assert code == EXIT_OK
        assert "dynamic:O=20,L=2000" in capsys.readouterr().out

    def test_dynamic_model_predictor(self, workdir, capsys):
        code = main([
            "policy", str(workdir / "small_rtd.txt"),
            "--policy", "dynamic:60,3000",
            "--model", str(workdir / "model.json"),
            "--dataset", str(workdir / "small_train.csv"),
            "--trials", "2000", "--seed", "2",
        ])
        assert code in (EXIT_OK, EXIT_UNBOUNDED)
        capsys.readouterr()

    def test_model_without_dataset_rejected(self, workdir, capsys):
        code = main([
            "policy", str(workdir / "small_rtd.txt"),
            "--policy", "dynamic:60,3000",
            "--model", str(workdir / "model.json"),
        ])
        assert code == EXIT_USAGE
        capsys.readouterr()

    def test_unbounded_exit_code(self, tmp_path, capsys):
        rtd_path = tmp_path / "tiny_rtd.txt"
        write_rtd(str(rtd_path), [5, 9])
        code = main(["policy", str(rtd_path), "--policy", "fixed:4",
                     "--trials", "500"])
        assert code == EXIT_UNBOUNDED
        assert "UNBOUNDED" in capsys.readouterr().out

    def test_scan_limit(self, workdir, capsys):
        code = main(["policy", str(workdir / "small_rtd.txt"),
                     "--scan-limit", "20", "--accuracy", "0.9"])
        assert code == EXIT_OK
        assert "L=" in capsys.readouterr().out

    def test_scan_limit_with_model_rejected(self, workdir, capsys):
        code = main(["policy", str(workdir / "small_rtd.txt"),
                     "--scan-limit", "20", "--model", str(workdir / "model.json")])
        assert code == EXIT_USAGE
        capsys.readouterr()

    def test_bad_policy_spec_is_usage_error(self, workdir, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["policy", str(workdir / "small_rtd.txt"),
                  "--policy", "annealed:3"])
        assert exc.value.code == EXIT_USAGE
        capsys.readouterr()


class TestReport:
    def test_describes_every_artifact(self, workdir, capsys):
        cases = {
            "small_train.csv": "dataset",
            "small_rtd.txt": "runs; min",
            "model.json": "restartlab model",
            "inst.txt": "70 holes",
        }
        for name, needle in cases.items():
            assert main(["report", str(workdir / name)]) == EXIT_OK
            assert needle in capsys.readouterr().out

    def test_unrecognized_file_is_data_error(self, tmp_path, capsys):
        junk = tmp_path / "junk.txt"
        junk.write_text("hello world\n")
        assert main(["report", str(junk)]) == EXIT_DATA
        capsys.readouterr()


class TestParsing:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "restartlab" in capsys.readouterr().out

    def test_no_verb_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == EXIT_USAGE
        capsys.readouterr()

    def test_unknown_verb_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == EXIT_USAGE
        capsys.readouterr()

    def test_missing_required_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["dataset", "--runs", "4"])
        assert exc.value.code == EXIT_USAGE
        capsys.readouterr()

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "restartlab.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "restartlab" in proc.stdout
