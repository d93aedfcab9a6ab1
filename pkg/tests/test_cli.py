"""Command-line interface: lifecycle subcommands and exit codes."""

import json

import pytest
from click.testing import CliRunner

from magneto.cli import main
from magneto.ingest import parse_trace_with_header


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> pretrain once; later tests reuse the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    r = runner.invoke(main, ["synth", "--preset", "demo", "--out",
                             str(root / "traces"), "--windows", "20"])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["synth", "--preset", "demo6", "--out",
                             str(root / "all"), "--windows", "40",
                             "--seed", "4242"])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["pretrain", "--data", str(root / "traces"),
                             "--out", str(root / "base.mgbd"),
                             "--epochs", "2"])
    assert r.exit_code == 0, r.output
    return root


class TestSynth:
    def test_spec_file(self, runner, tmp_path):
        spec = {"classes": [{
            "name": "wiggle", "duration_s": 2.0, "seed": 3,
            "channels": [{"base": 1.0, "amplitude": 0.5,
                          "frequency_hz": 2.0, "noise_sigma": 0.1}] * 3,
        }]}
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        r = runner.invoke(main, ["synth", "--spec", str(spec_path),
                                 "--out", str(tmp_path / "out")])
        assert r.exit_code == 0, r.output
        header, frames = parse_trace_with_header(
            (tmp_path / "out" / "wiggle.trace").read_bytes())
        assert header.label == "wiggle"
        assert header.channels == 3
        assert len(frames) == 240  # 2 s at 120 Hz

    def test_requires_exactly_one_source(self, runner, tmp_path):
        r = runner.invoke(main, ["synth", "--out", str(tmp_path)])
        assert r.exit_code == 2

    def test_preset_writes_labeled_sessions(self, workspace):
        traces = sorted((workspace / "traces").glob("walk_*.trace"))
        assert traces
        header, _ = parse_trace_with_header(traces[0].read_bytes())
        assert header.label == "walk"


class TestPretrainEval:
    def test_eval_text_output(self, runner, workspace):
        r = runner.invoke(main, ["eval", "--bundle", str(workspace / "base.mgbd"),
                                 "--data", str(workspace / "traces")])
        assert r.exit_code == 0, r.output
        assert "overall accuracy" in r.output

    def test_eval_json_schema(self, runner, workspace):
        r = runner.invoke(main, ["eval", "--bundle", str(workspace / "base.mgbd"),
                                 "--data", str(workspace / "traces"), "--json"])
        assert r.exit_code == 0, r.output
        body = json.loads(r.output)
        assert set(body) >= {"overall_accuracy", "per_class_accuracy",
                             "confusion", "class_names", "count"}
        assert len(body["confusion"]) == 5

    def test_eval_report_figures(self, runner, workspace, tmp_path):
        rpt = tmp_path / "rpt"
        r = runner.invoke(main, ["eval", "--bundle", str(workspace / "base.mgbd"),
                                 "--data", str(workspace / "traces"),
                                 "--report-dir", str(rpt)])
        assert r.exit_code == 0, r.output
        names = {p.name for p in rpt.iterdir()}
        assert names == {"confusion.csv", "per_class.csv", "confusion.png",
                         "per_class_accuracy.png"}

    def test_missing_bundle_is_usage_error(self, runner, workspace):
        r = runner.invoke(main, ["eval", "--bundle", "nope.mgbd",
                                 "--data", str(workspace / "traces")])
        assert r.exit_code == 2

    def test_unknown_label_is_domain_error(self, runner, workspace):
        # the 6-class data dir contains a label the bundle does not know
        r = runner.invoke(main, ["eval", "--bundle", str(workspace / "base.mgbd"),
                                 "--data", str(workspace / "all")])
        assert r.exit_code == 1

    def test_pretrain_single_class_is_domain_error(self, runner, workspace,
                                                   tmp_path):
        solo = tmp_path / "solo"
        solo.mkdir()
        for p in (workspace / "traces").glob("walk_*.trace"):
            (solo / p.name).write_bytes(p.read_bytes())
        r = runner.invoke(main, ["pretrain", "--data", str(solo),
                                 "--out", str(tmp_path / "x.mgbd"),
                                 "--epochs", "2"])
        assert r.exit_code == 1

    def test_empty_data_dir_is_domain_error(self, runner, workspace, tmp_path):
        r = runner.invoke(main, ["eval", "--bundle", str(workspace / "base.mgbd"),
                                 "--data", str(tmp_path)])
        assert r.exit_code == 1


class TestAddClassCalibrate:
    def test_add_class_and_report(self, runner, workspace, tmp_path):
        rec = tmp_path / "rec"
        rec.mkdir()
        for p in (workspace / "all").glob("gesture_hi_*.trace"):
            (rec / p.name).write_bytes(p.read_bytes())
        rpt = tmp_path / "frpt"
        r = runner.invoke(main, [
            "add-class", "--bundle", str(workspace / "base.mgbd"),
            "--label", "gesture_hi", "--data", str(rec),
            "--out", str(tmp_path / "v2.mgbd"), "--epochs", "2", "--json",
            "--report-dir", str(rpt)])
        assert r.exit_code == 0, r.output
        # progress lines share the stream with the JSON payload in the runner
        body = json.loads(r.output[r.output.index("{"):r.output.rindex("}") + 1])
        assert body["new_class"] == "gesture_hi"
        assert set(body) >= {"before", "after", "drops", "max_drop",
                             "new_class_accuracy"}
        assert {p.name for p in rpt.iterdir()} == {"forgetting.csv",
                                                   "forgetting.png"}
        from magneto.learner import load_bundle
        assert load_bundle(tmp_path / "v2.mgbd").model_version == 2

    def test_duplicate_label_is_domain_error(self, runner, workspace, tmp_path):
        r = runner.invoke(main, [
            "add-class", "--bundle", str(workspace / "base.mgbd"),
            "--label", "walk", "--data", str(workspace / "traces"),
            "--out", str(tmp_path / "x.mgbd"), "--epochs", "2"])
        assert r.exit_code == 1

    def test_calibrate_unknown_label_is_domain_error(self, runner, workspace,
                                                     tmp_path):
        r = runner.invoke(main, [
            "calibrate", "--bundle", str(workspace / "base.mgbd"),
            "--label", "nope", "--data", str(workspace / "traces"),
            "--out", str(tmp_path / "x.mgbd"), "--epochs", "2"])
        assert r.exit_code == 1


class TestReplay:
    def test_unreachable_target_is_io_error(self, runner, workspace):
        trace = next((workspace / "traces").glob("*.trace"))
        r = runner.invoke(main, ["replay", "--trace", str(trace),
                                 "--target", "http://127.0.0.1:1",
                                 "--speed", "0"])
        assert r.exit_code == 3


class TestConfigFile:
    def test_config_file_with_flag_override(self, runner, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 2, "seed": 11}))
        out = tmp_path / "c.mgbd"
        r = runner.invoke(main, ["pretrain", "--data", str(workspace / "traces"),
                                 "--out", str(out), "--config", str(cfg),
                                 "--seed", "12"])
        assert r.exit_code == 0, r.output
        from magneto.learner import load_bundle
        loaded = load_bundle(out)
        assert loaded.config.seed == 12  # flag wins over file
        assert loaded.config.epochs == 2
