import csv
import io
import json
import shutil

import pytest

from scene_asd.anomaly import ThresholdTable
from scene_asd.cli import EXIT_ARTIFACT, EXIT_CONFIG, EXIT_DATA, EXIT_OK, build_parser, main
from scene_asd.config import CONFIG_ENV, RunConfig, load_config
from scene_asd.errors import ConfigError

TINY = """\
synth_duration = 1.0
synth_normal = 12
synth_abnormal = 4
train_count = 6
val_count = 3
ae_epochs = 50
ae_batch = 32
snet_epochs = 3
snet_batch = 16
seed = 7
"""


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "run.toml"
    cfg.write_text(TINY + f'dataset_root = "{base / "corpus"}"\nout = "{base / "out"}"\n')
    codes = [main([cmd, "--config", str(cfg)])
             for cmd in ("synth", "train-ae", "train-snet", "threshold", "evaluate")]
    return base, cfg, codes


def test_pipeline_exit_codes(run):
    assert run[2] == [EXIT_OK] * 5


def test_training_artifacts(run):
    out = run[0] / "out" / "fan" / "id_00"
    for name in ("ae.model", "snet.model", "thresholds.txt", "splits.csv", "errors.csv"):
        assert (out / name).is_file()
    assert len(_rows(out / "ae_loss.csv")) == 50
    assert len(_rows(out / "snet_loss.csv")) == 3


def test_threshold_table_rows(run):
    table = ThresholdTable.load(run[0] / "out" / "fan" / "id_00" / "thresholds.txt")
    assert sorted(table) == ["-6dB", "0dB", "6dB"]
    for th in table.values():
        assert th.mu_v <= th.tau <= th.mu_v + th.sigma_v


def test_report_contents(run):
    out = run[0] / "out"
    rows = _rows(out / "report.csv")
    assert {(r["snr"], r["case"]) for r in rows} == {
        (s, c) for s in ("-6dB", "0dB", "6dB") for c in ("baseline", "scene_aware", "fixed")}
    doc = json.loads((out / "report.json").read_text())
    assert doc["settings"]["seed"] == 7
    assert (out / "config.toml").read_text() == load_config(run[1]).to_toml()


def test_sweep_zero_row_matches_report(run):
    out = run[0] / "out"
    base = {r["snr"]: r for r in _rows(out / "report.csv") if r["case"] == "baseline"}
    zero = [r for r in _rows(out / "sweep.csv") if r["k"] == "0"]
    assert len(zero) == 3
    for r in zero:
        assert float(r["threshold"]) == float(base[r["snr"]]["tau"])
        assert (float(r["tpr"]), float(r["fpr"])) == (float(base[r["snr"]]["tpr"]), float(base[r["snr"]]["fpr"]))


def test_rerun_is_byte_identical(run, tmp_path):
    base, cfg, _ = run
    out2 = tmp_path / "out2"
    for cmd in ("train-ae", "train-snet", "threshold", "evaluate"):
        assert main([cmd, "--config", str(cfg), "--out", str(out2)]) == EXIT_OK
    for rel in ("fan/id_00/ae.model", "fan/id_00/snet.model", "fan/id_00/thresholds.txt", "report.csv", "sweep.csv"):
        assert (out2 / rel).read_bytes() == (base / "out" / rel).read_bytes()


def test_oracle_scene_matches_baseline(run, tmp_path):
    base, cfg, _ = run
    out = tmp_path / "out"
    shutil.copytree(base / "out", out)
    assert main(["evaluate", "--config", str(cfg), "--oracle-scene", "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "report.csv")
    keep = ("auc", "tpr", "fpr", "tau")
    by_case = {(r["snr"], r["case"]): [r[k] for k in keep] for r in rows}
    for snr in ("-6dB", "0dB", "6dB"):
        assert by_case[(snr, "scene_aware")] == by_case[(snr, "baseline")]


def test_exit_codes(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG
    assert main(["train-ae", "--dataset-root", str(tmp_path / "missing"), "--out", str(tmp_path)]) == EXIT_DATA
    (tmp_path / "c" / "6dB" / "fan" / "id_00" / "normal").mkdir(parents=True)
    for i in range(4):
        (tmp_path / "c" / "6dB" / "fan" / "id_00" / "normal" / f"{i}.wav").touch()
    assert main(["threshold", "--dataset-root", str(tmp_path / "c"), "--out", str(tmp_path / "o"),
                 "--train-count", "2", "--val-count", "1"]) == EXIT_ARTIFACT
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["synth", "--dataset-root", str(blocker / "corpus"), "--out", str(tmp_path)]) == EXIT_DATA


def test_help_marks_paper_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train-ae", "--help"])
    text = " ".join(capsys.readouterr().out.split())
    text = text[text.index("configuration overrides:"):]
    for flag in ("--n-mels", "--context", "--ae-epochs", "--snet-epochs", "--segment-ms", "--train-count"):
        start = text.index(flag)
        assert "(paper)" in text[start:text.index("[default", start)]
    assert "--n-fft" in text


def test_config_sources(tmp_path, monkeypatch):
    path = tmp_path / "c.toml"
    path.write_text("[train]\nae_epochs = 12\nseed = 3\n")
    monkeypatch.setenv(CONFIG_ENV, str(path))
    cfg = load_config()
    assert (cfg.ae_epochs, cfg.seed, cfg.n_mels) == (12, 3, 64)
    assert load_config(overrides={"seed": 9, "hop": None}).seed == 9
    monkeypatch.delenv(CONFIG_ENV)
    assert load_config() == RunConfig()


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("n_mels = 'many'\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("colour = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        RunConfig(cases=["sideways"])
    with pytest.raises(ConfigError):
        RunConfig(sweep_step="-1")
    assert RunConfig(sweep_step="100").sweep_step_value() == 100.0
