import re
import xml.etree.ElementTree as ET

import pytest

from malaria_cnn import zoo
from malaria_cnn.cli import EXIT_INVALID, EXIT_OK, main
from malaria_cnn.config import SCHEMA, parse_config_text, resolve
from malaria_cnn.errors import ConfigError
from malaria_cnn.experiment import Manifest, cmd_compare, cmd_evaluate, cmd_train, without_timings
from malaria_cnn.report import parse_report_csv, read_chart_csv

SMALL = ["--synthetic", "40", "--input-size", "16", "--scale", "1/8", "--batch-size", "8"]


def small_cfg(**extra):
    flags = {"data.synthetic": "40", "model.input_size": "16", "model.scale": "1/8", "train.batch_size": "8",
             "train.epochs": "1"}
    flags.update(extra)
    return resolve(None, flags)


class TestConfig:
    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\ntrain.epochs = 2\n\ntrain.batch_size = lots\n")
        with pytest.raises(ConfigError, match=r"run\.cfg:4:"):
            resolve(path)

    def test_missing_equals_and_unknown_key(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_config_text("model.arch = vgg19\njust words\n")
        with pytest.raises(ConfigError, match=":1: unknown key"):
            parse_config_text("model.depth = 3\n")

    def test_precedence(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("train.epochs = 3  # trailing comment\ntrain.seed = 7\n")
        cfg = resolve(path, {"train.seed": "11", "train.epochs": None})
        assert cfg["train.epochs"] == 3 and cfg.source["train.epochs"] == "file"
        assert cfg["train.seed"] == 11 and cfg.source["train.seed"] == "flag"
        assert cfg["train.learning_rate"] == 0.001 and cfg.source["train.learning_rate"] == "default"

    def test_every_key_has_a_parseable_default(self):
        cfg = resolve()
        for key in SCHEMA:
            cfg[key]

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("MALARIA_DATA_DIR", "/somewhere")
        assert resolve().data_root() == "/somewhere"
        assert resolve(None, {"data.root": "/explicit"}).data_root() == "/explicit"

    def test_bad_flag_value_exits_1(self, tmp_path, capsys):
        assert main(["train", *SMALL, "--scale", "-1", "--out", str(tmp_path)]) == EXIT_INVALID
        assert "model.scale" in capsys.readouterr().err


class TestTrain:
    def test_zero_epochs_evaluates_untrained_model(self, tmp_path):
        res = cmd_train(small_cfg(**{"train.epochs": "0"}), tmp_path)
        m = Manifest.parse((tmp_path / "manifest.txt").read_text())
        assert m.sections["epochs"]["count"] == "0"
        assert not any(k.startswith("epoch.") for k in m.sections["epochs"])
        assert int(m.sections["test"]["n"]) == res.test_report.n == 4

    def test_manifest_contents_and_artifacts(self, tmp_path):
        res = cmd_train(small_cfg(**{"train.epochs": "2"}), tmp_path)
        for name in ("manifest.txt", "report.csv", "report.txt", "chart.svg", "chart.csv", "model.ckpt"):
            assert (tmp_path / name).is_file()
        m = res.manifest.sections
        # every config key is echoed, together with where its value came from
        assert set(m["config"]) == set(SCHEMA) and set(m["config.source"]) == set(SCHEMA)
        assert m["config.source"]["train.epochs"] == "flag"
        assert m["epochs"]["count"] == "2"
        assert {f"epoch.{e}.{k}" for e in (1, 2) for k in ("train_loss", "train_accuracy", "val_loss",
                                                           "val_accuracy")} <= set(m["epochs"])
        assert (m["split"]["train.size"], m["split"]["validation.size"], m["split"]["test.size"]) == ("32", "4", "4")
        assert "total_seconds" in m["timings"]
        assert "seconds" not in without_timings(res.manifest.render())

    def test_manifest_deterministic(self, tmp_path):
        a = cmd_train(small_cfg(**{"train.epochs": "2"}), tmp_path / "a")
        b = cmd_train(small_cfg(**{"train.epochs": "2"}), tmp_path / "b")
        text_a, text_b = (p.out_dir.joinpath("manifest.txt").read_text() for p in (a, b))
        assert without_timings(text_a) == without_timings(text_b)
        assert (tmp_path / "a/model.ckpt").read_bytes() == (tmp_path / "b/model.ckpt").read_bytes()
        assert (tmp_path / "a/report.csv").read_text() == (tmp_path / "b/report.csv").read_text()

    def test_cli_train_prints_report(self, tmp_path, capsys):
        assert main(["train", *SMALL, "--epochs", "1", "--out", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("Method") and str(tmp_path) in out


class TestEvaluate:
    def test_matches_manifest_and_is_pure(self, tmp_path):
        cfg = small_cfg(**{"train.epochs": "2"})
        res = cmd_train(cfg, tmp_path)
        rep1, table1 = cmd_evaluate(tmp_path / "model.ckpt", cfg)
        rep2, table2 = cmd_evaluate(tmp_path / "model.ckpt", cfg)
        assert table1 == table2
        final = res.test_report
        for attr in ("accuracy", "precision", "recall", "f1", "auc_roc", "rmse", "n", "confusion"):
            assert getattr(rep1, attr) == getattr(final, attr)
        assert table1 == (tmp_path / "report.txt").read_text()

    def test_truncated_checkpoint(self, tmp_path, capsys):
        cmd_train(small_cfg(), tmp_path)
        ckpt = tmp_path / "model.ckpt"
        ckpt.write_bytes(ckpt.read_bytes()[:100])
        assert main(["evaluate", str(ckpt), *SMALL]) == EXIT_INVALID
        assert re.search(r"offset \d+", capsys.readouterr().err)

    def test_resume_flag_continues_epoch_count(self, tmp_path):
        cmd_train(small_cfg(), tmp_path / "first")
        res = cmd_train(small_cfg(**{"train.resume": str(tmp_path / "first/model.ckpt")}), tmp_path / "second")
        assert res.manifest.sections["epochs"]["start_epoch"] == "1"
        assert "epoch.2.train_loss" in res.manifest.sections["epochs"]


class TestCompare:
    def test_single_architecture(self, tmp_path):
        cmd_compare(small_cfg(**{"compare.archs": "custom_cnn"}), tmp_path)
        assert list(parse_report_csv((tmp_path / "report.csv").read_text())) == ["CNN [Custom]"]

    def test_all_six_share_one_split(self, tmp_path):
        # 64 px: densenet121/xception need multiples of 32, alexnet needs >= 63
        results = cmd_compare(small_cfg(**{"model.input_size": "64"}), tmp_path)
        names = [zoo.DISPLAY_NAMES[a] for a in zoo.REGISTRY]
        lines = (tmp_path / "report.txt").read_text().splitlines()
        assert [line.split()[0] for line in lines[2:8]] == [n.split()[0] for n in names]
        assert list(parse_report_csv((tmp_path / "report.csv").read_text())) == names
        bars = [e for e in ET.parse(tmp_path / "chart.svg").getroot().iter() if e.get("class") == "bar"]
        assert len(bars) == 6
        assert list(read_chart_csv(tmp_path / "chart.csv")) == names
        splits = {tuple(sorted(r.manifest.sections["split"].items())) for r in results.values()}
        assert len(splits) == 1

    def test_parallel_matches_sequential(self, tmp_path):
        archs = "custom_cnn,res_attention"
        cmd_compare(small_cfg(**{"compare.archs": archs}), tmp_path / "seq")
        cmd_compare(small_cfg(**{"compare.archs": archs, "compare.parallel": "true"}), tmp_path / "par")
        assert (tmp_path / "seq/report.csv").read_text() == (tmp_path / "par/report.csv").read_text()

    def test_unknown_architecture(self, tmp_path, capsys):
        with pytest.raises(ConfigError, match="valid names: densenet121"):
            cmd_compare(small_cfg(**{"compare.archs": "custom_cnn,lenet"}), tmp_path)
        assert main(["compare", *SMALL, "--archs", "lenet", "--out", str(tmp_path)]) == EXIT_INVALID
        assert "lenet" in capsys.readouterr().err


class TestHarnesses:
    def test_gradcheck_exit_zero(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("PASS") for line in lines)

    def test_paramcheck_exit_zero(self, capsys):
        assert main(["paramcheck"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("PASS") == 5 and "FAIL" not in out

    def test_paramcheck_half_scale_not_applicable(self, capsys):
        assert main(["paramcheck", "--scale", "1/2"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("not applicable") == 5
        for name in zoo.REGISTRY:
            assert re.search(rf"^{name}\s+total", out, re.M)
