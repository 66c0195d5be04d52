"""CLI contract tests: subcommand behavior, exit codes (0 success,
1 threshold/divergence failure, 2 usage or config error), and
byte-for-byte reproducibility of artifacts.

Everything runs in-process through main(argv) so failures carry
tracebacks instead of opaque subprocess output.
"""

import json
import os

import numpy as np
import pytest

from focuslr.cli import main, parse_seeds
from focuslr.data import load_delimited
from focuslr.errors import InvalidInput
from focuslr.metrics import EvalReport

CONFIG = """
[data]
generator = "blobs"
k = 5
dim = 8
n_per_class = 12
separation = 6.0
test_fraction = 0.25
[model]
hidden = [16]
[loss]
variant = "{variant}"
[optimizer]
kind = "sgd"
lr = 0.05
momentum = 0.9
weight_decay = 1e-4
[training]
epochs = 3
batch_size = 16
seed = 0
[output]
dir = "{out}"
"""


def write_config(tmp_path, name="run.toml", variant="lr", out=None, mutate=None):
    out = out or str(tmp_path / "runs")
    text = CONFIG.format(variant=variant, out=out)
    if mutate:
        for old, new in mutate.items():
            assert old in text
            text = text.replace(old, new)
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestParseSeeds:
    def test_forms(self):
        assert parse_seeds("7") == [7]
        assert parse_seeds("0..3") == [0, 1, 2, 3]
        assert parse_seeds("1,4,9") == [1, 4, 9]
        assert parse_seeds(" 2, 5 ") == [2, 5]

    def test_empty_range_rejected(self):
        with pytest.raises(InvalidInput):
            parse_seeds("9..0")


class TestGradCheckCommand:
    def test_single_variant_passes(self, capsys):
        assert main(["grad-check", "--variant", "sr", "--k", "2,5", "--trials", "5"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 3  # two K rows + the final verdict
        assert "grad-check: PASS" in out

    def test_all_expands_every_variant_and_both_weight_modes(self, capsys):
        assert main(["grad-check", "--variant", "all", "--k", "3", "--trials", "3"]) == 0
        out = capsys.readouterr().out
        for label in ("sr", "lr", "hs-lr", "ss-lr (full)", "ss-lr (detached)", "hs-sr"):
            assert label in out

    def test_unknown_variant_is_usage_error(self, capsys):
        assert main(["grad-check", "--variant", "focal"]) == 2
        assert "focal" in capsys.readouterr().err

    def test_impossible_threshold_fails_with_exit_1(self, capsys):
        assert main(["grad-check", "--variant", "sr", "--k", "2",
                     "--trials", "2", "--threshold", "0"]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestGenDataCommand:
    def test_blobs_csv(self, tmp_path, capsys):
        out = str(tmp_path / "blobs.csv")
        assert main(["gen-data", "blobs", "--k", "4", "--dim", "6",
                     "--n-per-class", "3", "--out", out]) == 0
        ds = load_delimited(out)
        assert ds.n == 12 and ds.dim == 6 and ds.K == 4
        assert out in capsys.readouterr().out

    def test_retrieval_writes_three_files(self, tmp_path):
        prefix = str(tmp_path / "reid")
        assert main(["gen-data", "retrieval", "--k-train", "4", "--k-test", "3",
                     "--dim", "6", "--n-per-class", "4", "--out", prefix]) == 0
        for part, rows in (("train", 16), ("gallery", 9), ("query", 3)):
            ds = load_delimited(f"{prefix}.{part}.csv")
            assert ds.n == rows, part

    def test_sparse_multilabel_csv(self, tmp_path):
        out = str(tmp_path / "ml.csv")
        assert main(["gen-data", "sparse-multilabel", "--k", "10", "--n", "50",
                     "--avg-positives", "2", "--imbalance-ratio", "4", "--dim", "6",
                     "--out", out]) == 0
        ds = load_delimited(out)
        assert ds.n == 50 and not ds.is_single_label()

    def test_determinism(self, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        for out in (a, b):
            main(["gen-data", "blobs", "--k", "3", "--n-per-class", "4",
                  "--seed", "5", "--out", out])
        assert open(a, "rb").read() == open(b, "rb").read()


class TestTrainCommand:
    def test_single_run_writes_artifacts(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["train", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "top1 = " in out
        files = os.listdir(tmp_path / "runs")
        assert sorted(files) == ["lr_s0.checkpoint.json", "lr_s0.eval.json",
                                 "lr_s0.resolved.toml", "lr_s0.trace.csv",
                                 "lr_s0.trace.json"]

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["train", "--config", cfg, "--seed", "3"]) == 0
        assert (tmp_path / "runs" / "lr_s3.eval.json").exists()

    def test_repeat_run_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["train", "--config", cfg, "--out", out_a]) == 0
        assert main(["train", "--config", cfg, "--out", out_b]) == 0
        for name in ("lr_s0.trace.csv", "lr_s0.eval.json", "lr_s0.checkpoint.json"):
            with open(os.path.join(out_a, name), "rb") as fa, \
                 open(os.path.join(out_b, name), "rb") as fb:
                assert fa.read() == fb.read(), name

    def test_seed_sweep_prints_rows_and_aggregates(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["train", "--config", cfg, "--seeds", "0..2"]) == 0
        out = capsys.readouterr().out
        for s in (0, 1, 2):
            assert f"seed {s}:" in out
        assert "top1: mean=" in out and "std=" in out
        assert (tmp_path / "runs" / "summary.csv").exists()

    def test_bad_config_key_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, mutate={"lr = 0.05": "lr = 0.05\nlearning_rate = 1.0"})
        assert main(["train", "--config", cfg]) == 2
        assert "optimizer.learning_rate" in capsys.readouterr().err

    def test_missing_config_file_exit_2(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "nope.toml")]) == 2
        assert "error" in capsys.readouterr().err

    def test_divergence_exit_1(self, tmp_path, capsys):
        cfg = write_config(tmp_path, mutate={"lr = 0.05": "lr = 1e200"})
        with pytest.warns(RuntimeWarning):
            assert main(["train", "--config", cfg]) == 1
        assert "diverged" in capsys.readouterr().err

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FOCUSLR_OUTPUT_ROOT", str(tmp_path / "root"))
        cfg = write_config(tmp_path, out="nested/runs")
        assert main(["train", "--config", cfg]) == 0
        assert (tmp_path / "root" / "nested" / "runs" / "lr_s0.eval.json").exists()


class TestEvalCommand:
    @pytest.fixture()
    def trained(self, tmp_path):
        """A trained checkpoint plus a raw (unstandardized) eval file of the
        same distribution, exercising the stored-scaler path."""
        cfg = write_config(tmp_path)
        main(["train", "--config", cfg])
        data = str(tmp_path / "eval.csv")
        main(["gen-data", "blobs", "--k", "5", "--dim", "8", "--n-per-class", "12",
              "--separation", "6.0", "--seed", "0", "--out", data])
        return str(tmp_path / "runs" / "lr_s0.checkpoint.json"), data

    def test_classify_eval(self, trained, tmp_path, capsys):
        ckpt, data = trained
        report_path = str(tmp_path / "report.json")
        assert main(["eval", "--checkpoint", ckpt, "--task", "classify",
                     "--data", data, "--out", report_path]) == 0
        out = capsys.readouterr().out
        assert "top1 = " in out and "balanced_per_class_acc = " in out
        report = EvalReport.load(report_path)
        # the eval file is the full generating distribution for the train
        # split; a fitted model should classify most of it
        assert report.top1 > 0.5

    def test_classify_train_split_of_fitted_model(self, tmp_path, capsys):
        # train to convergence, then eval on the training file itself
        cfg = write_config(tmp_path, mutate={"epochs = 3": "epochs = 30",
                                             "separation = 6.0": "separation = 10.0"})
        main(["train", "--config", cfg])
        data = str(tmp_path / "all.csv")
        main(["gen-data", "blobs", "--k", "5", "--dim", "8", "--n-per-class", "12",
              "--separation", "10.0", "--seed", "0", "--out", data])
        assert main(["eval", "--checkpoint",
                     str(tmp_path / "runs" / "lr_s0.checkpoint.json"),
                     "--task", "classify", "--data", data]) == 0
        top1 = float(capsys.readouterr().out.split("top1 = ")[1].split("\n")[0])
        assert top1 == 1.0

    def test_retrieve_eval_populates_rank_metrics_only(self, tmp_path, capsys):
        prefix = str(tmp_path / "reid")
        main(["gen-data", "retrieval", "--k-train", "6", "--k-test", "4", "--dim", "8",
              "--n-per-class", "5", "--out", prefix])
        cfg_text = f"""
[data]
generator = "file"
task = "retrieve"
path = "{prefix}.train.csv"
path_gallery = "{prefix}.gallery.csv"
path_query = "{prefix}.query.csv"
[model]
hidden = [16]
[loss]
variant = "hs-lr"
[optimizer]
[training]
epochs = 2
[output]
dir = "{tmp_path / 'runs'}"
"""
        cfg = tmp_path / "ret.toml"
        cfg.write_text(cfg_text)
        assert main(["train", "--config", str(cfg)]) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint",
                     str(tmp_path / "runs" / "hs-lr_s0.checkpoint.json"),
                     "--task", "retrieve",
                     "--gallery", f"{prefix}.gallery.csv",
                     "--query", f"{prefix}.query.csv"]) == 0
        out = capsys.readouterr().out
        assert "rank1 = " in out and "map_retrieval = " in out
        assert "top1" not in out

    def test_retrieve_requires_gallery_and_query(self, trained, capsys):
        ckpt, data = trained
        assert main(["eval", "--checkpoint", ckpt, "--task", "retrieve",
                     "--data", data]) == 2
        assert "gallery" in capsys.readouterr().err

    def test_multilabel_on_single_label_refused(self, trained, capsys):
        ckpt, data = trained
        assert main(["eval", "--checkpoint", ckpt, "--task", "multilabel",
                     "--data", data]) == 2
        assert "single-label" in capsys.readouterr().err

    def test_classify_on_multilabel_refused(self, trained, tmp_path, capsys):
        ckpt, _ = trained
        ml = str(tmp_path / "ml.csv")
        main(["gen-data", "sparse-multilabel", "--k", "5", "--n", "40", "--dim", "8",
              "--avg-positives", "2", "--imbalance-ratio", "3", "--out", ml])
        assert main(["eval", "--checkpoint", ckpt, "--task", "classify",
                     "--data", ml]) == 2
        assert "multi-label" in capsys.readouterr().err

    def test_dimension_mismatch_refused(self, trained, tmp_path, capsys):
        ckpt, _ = trained
        wide = str(tmp_path / "wide.csv")
        main(["gen-data", "blobs", "--k", "5", "--dim", "9", "--n-per-class", "3",
              "--out", wide])
        assert main(["eval", "--checkpoint", ckpt, "--task", "classify",
                     "--data", wide]) == 2
        assert "dim" in capsys.readouterr().err

    def test_too_many_classes_refused(self, trained, tmp_path, capsys):
        ckpt, _ = trained
        big = str(tmp_path / "big.csv")
        main(["gen-data", "blobs", "--k", "9", "--dim", "8", "--n-per-class", "3",
              "--out", big])
        assert main(["eval", "--checkpoint", ckpt, "--task", "classify",
                     "--data", big]) == 2
        assert "classes" in capsys.readouterr().err


class TestCompareCommand:
    def test_paired_comparison_output(self, tmp_path, capsys):
        cfg_a = write_config(tmp_path, name="a.toml", variant="lr")
        cfg_b = write_config(tmp_path, name="b.toml", variant="ss-lr")
        out = str(tmp_path / "cmp")
        assert main(["compare", "--config-a", cfg_a, "--config-b", cfg_b,
                     "--seeds", "0..4", "--out", out]) == 0
        stdout = capsys.readouterr().out
        assert "paired comparison on top1" in stdout
        assert "wilcoxon" in stdout
        with open(os.path.join(out, "compare.json")) as fh:
            data = json.load(fh)
        assert len(data["seeds"]) == 5

    def test_confound_guard_refuses_exit_2(self, tmp_path, capsys):
        cfg_a = write_config(tmp_path, name="a.toml", variant="lr")
        cfg_b = write_config(tmp_path, name="b.toml", variant="ss-lr",
                             mutate={"separation = 6.0": "separation = 7.0"})
        assert main(["compare", "--config-a", cfg_a, "--config-b", cfg_b,
                     "--seeds", "0..2", "--out", str(tmp_path / "cmp")]) == 2
        err = capsys.readouterr().err
        assert "refused" in err and "[data]" in err

    def test_self_comparison_completes(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["compare", "--config-a", cfg, "--config-b", cfg,
                     "--seeds", "0..4", "--out", str(tmp_path / "cmp")]) == 0
        assert "insufficient" in capsys.readouterr().out


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["decompile"])
        assert exc.value.code == 2

    def test_bad_seed_range_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["train", "--config", cfg, "--seeds", "5..1"]) == 2
