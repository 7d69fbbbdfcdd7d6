"""Config parsing/bridging and the five-stage command line pipeline."""

import json

import pytest

from paramscope import cli, config
from paramscope.config import (ConfigError, check_strict, default_config,
                               load_config, model_spec_from_config,
                               parse_config, render_config,
                               thresholds_from_config,
                               train_config_from_config)

# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def test_empty_text_yields_defaults():
    cfg = parse_config("")
    assert cfg == default_config()
    exp = cfg["experiment"]
    assert (exp["family"], exp["dataset"]) == ("dnn", "mnist")
    assert (exp["trials"], exp["epochs"], exp["batch_size"]) == (30, 20, 100)
    assert exp["lr"] == 0.001
    assert exp["hidden"] == [100, 100]
    assert cfg["projection"]["perplexity"] == 30.0
    assert cfg["output"]["dir"] == "runs/experiment"


def test_comments_and_blanks_skipped():
    cfg = parse_config("# heading\n\n[experiment]\n# note\ntrials = 5\n")
    assert cfg["experiment"]["trials"] == 5


def test_render_parse_round_trip():
    cfg = default_config()
    cfg["experiment"]["family"] = "cnn"
    cfg["experiment"]["trials"] = 7
    cfg["experiment"]["subset"] = 10_000
    cfg["analysis"]["high_min"] = 99.0
    cfg["projection"]["groups"] = ["conv1", "fc"]
    cfg["data"]["cache"] = "/tmp/cache"
    assert parse_config(render_config(cfg)) == cfg


def test_numbers_normalized_to_float():
    cfg = parse_config("[experiment]\nlr = 1\n")
    assert cfg["experiment"]["lr"] == 1.0
    assert isinstance(cfg["experiment"]["lr"], float)


@pytest.mark.parametrize("text,lineno,fragment", [
    ("[nope]", 1, "unknown section"),
    ("[experiment]\nbogus = 3", 2, "unknown key"),
    ("[experiment]\ntrials = 3\ntrials = 4", 3, "duplicate key"),
    ("[experiment]\ntrials = three", 2, "not valid JSON"),
    ("[experiment]\ntrials = 3.5", 2, "must be an integer"),
    ("[experiment]\nhidden = [100, \"x\"]", 2, "must be a list of integers"),
    ("trials = 3", 1, "outside any"),
    ("[experiment]\njust-words", 2, "expected 'key = value'"),
])
def test_malformed_configs_fail_with_line_numbers(text, lineno, fragment):
    with pytest.raises(ConfigError, match=fragment) as err:
        parse_config(text, origin="bad.cfg")
    assert f"bad.cfg:{lineno}:" in str(err.value)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.cfg")


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[experiment]\ntrials = 2\n")
    assert load_config(path)["experiment"]["trials"] == 2


# ---------------------------------------------------------------------------
# bridging to runtime objects
# ---------------------------------------------------------------------------


def test_model_spec_defaults_to_mnist_dnn():
    spec = model_spec_from_config(default_config())
    assert spec.family == "dnn"
    assert spec.input_shape == (1, 28, 28)
    assert spec.hidden == (100, 100)
    assert spec.init_std == 0.05  # family default when config leaves it null


def test_model_spec_per_family():
    cfg = parse_config("[experiment]\nfamily = \"cnn\"\nchannels = 4\ngap = true\n")
    spec = model_spec_from_config(cfg)
    assert (spec.family, spec.channels, spec.gap) == ("cnn", 4, True)
    cfg = parse_config(
        "[experiment]\nfamily = \"vit\"\nd_model = 16\nnhead = 4\n"
        "dataset = \"cifar10\"\n")
    spec = model_spec_from_config(cfg)
    assert (spec.family, spec.d_model, spec.input_shape) == ("vit", 16, (3, 32, 32))
    assert spec.init_std == 0.02


def test_model_spec_rejects_unknowns():
    cfg = default_config()
    cfg["experiment"]["family"] = "rnn"
    with pytest.raises(ConfigError, match="unknown family"):
        model_spec_from_config(cfg)
    cfg = default_config()
    cfg["experiment"]["dataset"] = "svhn"
    with pytest.raises(ConfigError, match="unknown dataset"):
        model_spec_from_config(cfg)
    cfg = default_config()
    cfg["experiment"]["hidden"] = []
    with pytest.raises(ConfigError, match="invalid experiment spec"):
        model_spec_from_config(cfg)


def test_train_config_carries_all_fields():
    cfg = parse_config(
        "[experiment]\ntrials = 3\nepochs = 2\nbatch_size = 25\n"
        "base_seed = 9\nsubset = 500\nlr = 0.002\n"
        "[data]\ncache = \"/tmp/c\"\n")
    tc = train_config_from_config(cfg, parallel=4, fixed_clock=True)
    assert (tc.trials, tc.epochs, tc.batch_size) == (3, 2, 25)
    assert (tc.base_seed, tc.subset, tc.lr) == (9, 500, 0.002)
    assert (tc.parallel, tc.fixed_clock, tc.cache) == (4, True, "/tmp/c")
    assert tc.dataset == "mnist"


def test_thresholds_default_and_override():
    assert thresholds_from_config(default_config()).high_min == 95.0
    cfg = parse_config("[analysis]\nhigh_min = 90.0\n")
    th = thresholds_from_config(cfg)
    assert (th.non_below, th.mid_min, th.high_min) == (15.0, 56.0, 90.0)
    cfg = parse_config("[analysis]\nmid_min = 99.0\nhigh_min = 90.0\n")
    with pytest.raises(ConfigError, match="invalid thresholds"):
        thresholds_from_config(cfg)


def test_strict_mode_pins_training_settings():
    check_strict(default_config())  # reference settings pass
    cfg = default_config()
    cfg["experiment"]["epochs"] = 5
    with pytest.raises(ConfigError, match="strict mode"):
        check_strict(cfg)
    cfg = default_config()
    cfg["experiment"]["subset"] = 10_000
    with pytest.raises(ConfigError, match="strict mode"):
        check_strict(cfg)


# ---------------------------------------------------------------------------
# command line pipeline
# ---------------------------------------------------------------------------


def pipeline_config(tmp_path, data_cache, out_name="run"):
    out = tmp_path / out_name
    text = (
        "[experiment]\n"
        'family = "dnn"\n'
        "trials = 4\n"
        "epochs = 1\n"
        "batch_size = 100\n"
        "subset = 300\n"
        "hidden = [6, 5]\n"
        "init_std = 0.5\n"
        "base_seed = 13\n"
        "[projection]\n"
        'groups = ["fc2_op"]\n'
        "iterations = 40\n"
        "[data]\n"
        f'cache = {json.dumps(data_cache)}\n'
        "[output]\n"
        f'dir = {json.dumps(str(out))}\n')
    path = tmp_path / "pipeline.cfg"
    path.write_text(text)
    return path, out


def test_cli_pipeline_end_to_end(tmp_path, data_cache, capsys):
    cfg_path, out = pipeline_config(tmp_path, data_cache)
    base = ["--config", str(cfg_path), "--fixed-clock"]

    assert cli.main(["fetch", *base]) == 0
    assert "verified" in capsys.readouterr().out

    assert cli.main(["train", *base]) == 0
    assert "trained 4 trials" in capsys.readouterr().out
    assert (out / "manifest.json").exists()
    assert (out / "resolved.cfg").exists()
    # the resolved config snapshot reparses to the same settings
    resolved = load_config(out / "resolved.cfg")
    assert resolved["experiment"]["trials"] == 4

    assert cli.main(["analyze", *base]) == 0
    capsys.readouterr()
    assert (out / "analysis" / "stats.csv").exists()
    for group in ("ip_fc1", "fc1_fc2", "fc2_op", "whole_net"):
        assert (out / "analysis" / f"density_{group}.json").exists()

    assert cli.main(["project", *base]) == 0
    capsys.readouterr()
    assert (out / "projection" / "embedding_fc2_op.csv").exists()

    assert cli.main(["report", *base]) == 0
    assert "figures" in capsys.readouterr().out
    index = json.loads((out / "report" / "index.json").read_text())
    assert index["family"] == "dnn"
    assert "convergence.svg" in index["figures"]


def test_cli_rerun_is_byte_identical(tmp_path, data_cache, capsys):
    cfg_path, out = pipeline_config(tmp_path, data_cache)
    base = ["--config", str(cfg_path), "--fixed-clock"]
    for command in ("train", "analyze", "project", "report"):
        assert cli.main([command, *base]) == 0
    capsys.readouterr()
    tracked = sorted(p for p in out.rglob("*") if p.is_file())
    snapshot = {p: p.read_bytes() for p in tracked}
    for command in ("train", "analyze", "project", "report"):
        assert cli.main([command, *base]) == 0
    capsys.readouterr()
    assert sorted(p for p in out.rglob("*") if p.is_file()) == tracked
    for p, data in snapshot.items():
        assert p.read_bytes() == data, f"{p} changed between identical reruns"


def test_cli_seed_override_changes_manifest(tmp_path, data_cache, capsys):
    cfg_path, out = pipeline_config(tmp_path, data_cache)
    base = ["--config", str(cfg_path), "--fixed-clock"]
    assert cli.main(["train", *base]) == 0
    first = json.loads((out / "manifest.json").read_text())
    assert cli.main(["train", *base, "--seed", "99"]) == 0
    second = json.loads((out / "manifest.json").read_text())
    capsys.readouterr()
    assert first["config"]["base_seed"] == 13
    assert second["config"]["base_seed"] == 99
    assert first["config_hash"] != second["config_hash"]


def test_cli_errors_exit_2_with_structured_line(tmp_path, capsys):
    rc = cli.main(["train", "--config", str(tmp_path / "missing.cfg")])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("paramscope: error: ConfigError:")

    rc = cli.main(["analyze", "--out", str(tmp_path / "empty")])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("paramscope: error: FileNotFoundError:")


def test_cli_strict_mode_rejects_desk_scale_config(tmp_path, data_cache, capsys):
    cfg_path, _ = pipeline_config(tmp_path, data_cache)
    rc = cli.main(["train", "--config", str(cfg_path), "--strict-paper-mode"])
    assert rc == 2
    assert "strict mode" in capsys.readouterr().err


def test_cli_report_before_analyze_fails(tmp_path, data_cache, capsys):
    cfg_path, out = pipeline_config(tmp_path, data_cache, out_name="fresh")
    base = ["--config", str(cfg_path), "--fixed-clock"]
    assert cli.main(["train", *base]) == 0
    rc = cli.main(["report", *base])
    assert rc == 2
    assert "analyze" in capsys.readouterr().err


def test_cli_version_and_usage(capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main(["--version"])
    assert exit_info.value.code == 0
    from paramscope import __version__
    assert __version__ in capsys.readouterr().out
    with pytest.raises(SystemExit):
        cli.main([])  # a subcommand is required
