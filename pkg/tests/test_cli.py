"""Command-line surface: outputs, exit codes, config echo reproducibility."""

import csv
import filecmp
from pathlib import Path

import numpy as np
import pytest

from texfeat.cli import main, parse_config_file, expand_grid
from texfeat.data import save_idx
from texfeat.synth import make_garments_dataset


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfigFile:
    def test_parse_basic(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("feature.kind = nlbp\n# comment\ntrain.epochs = 3  # tail\n")
        parsed = parse_config_file(cfg)
        assert parsed == {"feature.kind": "nlbp", "train.epochs": "3"}

    def test_parse_error_has_line_and_column(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("ok = 1\n   broken-line\n")
        with pytest.raises(Exception) as err:
            parse_config_file(cfg)
        assert "2:4" in str(err.value)

    def test_grid_expansion(self):
        points = expand_grid({"a": "1,2", "b": "x", "c": "u,v"})
        assert len(points) == 4
        assert {(p["a"], p["c"]) for p in points} == {("1", "u"), ("1", "v"), ("2", "u"), ("2", "v")}


class TestExtract:
    def test_nri_uniform_has_59_bin_columns(self, tmp_path):
        out = tmp_path / "run"
        assert main(["extract", "--feature", "lbp", "--variant", "nri_uniform",
                     "--set", "data.per_class=1", "--out", str(out)]) == 0
        rows = read_csv(out / "histograms.csv")
        assert len(rows[0]) == 60  # image_id + 59 bins
        assert rows[0][0] == "image_id"
        assert len(rows) == 11

    def test_ehd_has_9_bin_columns(self, tmp_path):
        out = tmp_path / "run"
        assert main(["extract", "--feature", "ehd", "--set", "data.per_class=1", "--out", str(out)]) == 0
        rows = read_csv(out / "histograms.csv")
        assert len(rows[0]) == 10

    def test_empty_dataset_writes_header_only(self, tmp_path, capsys):
        images = np.zeros((0, 4, 4), dtype=np.uint8)
        labels = np.zeros((0,), dtype=np.uint8)
        ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
        save_idx(images, labels, ip, lp)
        out = tmp_path / "run"
        code = main(["extract", "--feature", "ehd", "--set", "data.source=idx",
                     "--set", f"data.images={ip}", "--set", f"data.labels={lp}", "--out", str(out)])
        assert code == 0
        rows = read_csv(out / "histograms.csv")
        assert len(rows) == 1
        assert "empty" in capsys.readouterr().err

    def test_unknown_variant_is_usage_error(self, tmp_path):
        code = main(["extract", "--feature", "lbp", "--set", "extract.variant=bogus",
                     "--out", str(tmp_path / "x")])
        assert code == 1

    def test_missing_idx_file_is_data_error(self, tmp_path):
        code = main(["extract", "--feature", "ehd", "--set", "data.source=idx",
                     "--set", "data.images=/nonexistent/i.idx", "--set", "data.labels=/nonexistent/l.idx",
                     "--out", str(tmp_path / "x")])
        assert code == 2

    def test_dump_writes_tensor_blobs(self, tmp_path):
        from texfeat.tensor import load_tensor

        out = tmp_path / "run"
        assert main(["extract", "--feature", "ehd", "--dump", "--set", "data.per_class=1",
                     "--out", str(out)]) == 0
        blob = load_tensor(out / "dump" / "img_00000.tnsr")
        assert blob.shape[1] == 9


class TestReconstruct:
    def test_report_and_maps(self, tmp_path):
        out = tmp_path / "rec"
        assert main(["reconstruct", "--set", "data.per_class=1", "--set", "reconstruct.images=3",
                     "--out", str(out)]) == 0
        rows = read_csv(out / "report.csv")
        assert rows[0] == ["kind", "image_id", "relative_l1"]
        kinds = {r[0] for r in rows[1:]}
        assert kinds == {"nehd", "nlbp"}
        distances = [float(r[2]) for r in rows[1:]]
        assert max(distances) < 0.1
        assert (out / "maps" / "nehd_000_classic_008.png").exists()
        assert (out / "maps" / "nlbp_000_neural_255.png").exists()

    def test_non_reference_init_refused(self, tmp_path):
        code = main(["reconstruct", "--set", "feature.init=random", "--out", str(tmp_path / "x")])
        assert code == 1

    def test_constant_image_distance_near_zero(self, tmp_path):
        from texfeat.data import save_idx

        images = np.full((2, 28, 28), 0.5)
        ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
        save_idx(images, np.zeros(2, dtype=np.uint8), ip, lp)
        out = tmp_path / "rec"
        code = main(["reconstruct", "--set", "data.source=idx", "--set", f"data.images={ip}",
                     "--set", f"data.labels={lp}", "--out", str(out)])
        assert code == 0
        rows = read_csv(out / "report.csv")
        assert max(float(r[2]) for r in rows[1:]) < 1e-5


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "train"
    code = main(["train", "--feature", "nlbp", "--set", "data.per_class=12",
                 "--set", "data.test_per_class=4", "--set", "train.epochs=2",
                 "--set", "train.batch_size=32", "--out", str(out)])
    assert code == 0
    return out


class TestTrainEval:
    def test_artifacts_present(self, trained):
        assert (trained / "epochs.csv").exists()
        assert (trained / "confusion_run0.csv").exists()
        assert (trained / "summary.txt").exists()
        assert (trained / "models" / "run0" / "params.npz").exists()

    def test_echoed_config_reproduces_bit_identically(self, trained, tmp_path):
        out2 = tmp_path / "again"
        assert main(["train", "--config", str(trained / "config.txt"), "--out", str(out2)]) == 0
        for name in ("epochs.csv", "confusion_run0.csv", "summary.txt"):
            assert filecmp.cmp(trained / name, out2 / name, shallow=False), name

    def test_eval_matches_train_time_test_accuracy(self, trained, capsys):
        summary = (trained / "summary.txt").read_text()
        train_acc = float(summary.split("test_acc=")[1].split()[0])
        code = main(["eval", "--model", str(trained / "models" / "run0"),
                     "--set", "data.test_per_class=4"])
        assert code == 0
        printed = capsys.readouterr().out
        eval_acc = float(printed.split("accuracy")[1].split()[0])
        assert abs(eval_acc - train_acc) < 1e-9

    def test_existing_out_dir_is_usage_error(self, trained):
        code = main(["train", "--config", str(trained / "config.txt"), "--out", str(trained)])
        assert code == 1

    def test_grid_expansion_makes_subruns(self, tmp_path):
        out = tmp_path / "grid"
        code = main(["train", "--set", "feature.kind=nehd,nlbp", "--set", "data.per_class=8",
                     "--set", "data.test_per_class=3", "--set", "train.epochs=1",
                     "--set", "train.batch_size=32", "--out", str(out)])
        assert code == 0
        assert (out / "run_000" / "summary.txt").exists()
        assert (out / "run_001" / "summary.txt").exists()
        cfg0 = parse_config_file(out / "run_000" / "config.txt")
        cfg1 = parse_config_file(out / "run_001" / "config.txt")
        assert {cfg0["feature.kind"], cfg1["feature.kind"]} == {"nehd", "nlbp"}

    def test_parallel_grid_matches_sequential(self, tmp_path):
        args = ["train", "--set", "feature.kind=nehd,nlbp", "--set", "data.per_class=6",
                "--set", "data.test_per_class=2", "--set", "train.epochs=1",
                "--set", "train.batch_size=16"]
        seq, par = tmp_path / "seq", tmp_path / "par"
        assert main(args + ["--out", str(seq)]) == 0
        assert main(args + ["--workers", "2", "--out", str(par)]) == 0
        for sub in ("run_000", "run_001"):
            for name in ("epochs.csv", "summary.txt", "confusion_run0.csv"):
                assert filecmp.cmp(seq / sub / name, par / sub / name, shallow=False), (sub, name)

    def test_training_with_random_crops(self, tmp_path):
        out = tmp_path / "crop"
        code = main(["train", "--feature", "nehd", "--set", "data.per_class=8",
                     "--set", "data.test_per_class=3", "--set", "train.epochs=1",
                     "--set", "train.batch_size=16", "--set", "train.crop_size=24",
                     "--out", str(out)])
        assert code == 0
        from texfeat.cli import ShallowClassifier

        model = ShallowClassifier.load(out / "models" / "run0")
        assert tuple(model.image_hw) == (24, 24)


class TestGradcheckAndParams:
    def test_gradcheck_exits_zero(self, capsys):
        assert main(["gradcheck", "--feature", "nlbp", "--set", "gradcheck.trials=1"]) == 0
        out = capsys.readouterr().out
        assert "max rel err" in out and "OK" in out

    def test_params_prints_published_target(self, capsys):
        assert main(["params", "--feature", "nehd"]) == 0
        out = capsys.readouterr().out
        assert "162" in out
        assert main(["params", "--feature", "nlbp"]) == 0
        out = capsys.readouterr().out
        assert "112" in out and "matches" in out

    def test_usage_error_exit_code(self):
        assert main(["bogus-command"]) == 1

    def test_numeric_failure_exit_code(self, tmp_path, monkeypatch):
        import texfeat.training as tr

        original = tr.softmax_cross_entropy

        def poisoned(logits, labels):
            _, grad = original(logits, labels)
            return float("nan"), grad

        monkeypatch.setattr(tr, "softmax_cross_entropy", poisoned)
        code = main(["train", "--feature", "nlbp", "--set", "data.per_class=4",
                     "--set", "data.test_per_class=2", "--set", "train.epochs=1",
                     "--out", str(tmp_path / "x")])
        assert code == 3

    def test_out_root_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TEXFEAT_OUT_ROOT", str(tmp_path))
        assert main(["extract", "--feature", "ehd", "--set", "data.per_class=1",
                     "--out", "nested/run"]) == 0
        assert (tmp_path / "nested" / "run" / "histograms.csv").exists()
