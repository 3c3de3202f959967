import json

import pytest

from eegrisk import cli
from eegrisk._io import sha256_file
from eegrisk.evaluation import read_table_csv

SYNTH = ["synth", "--duration-h", "0.6667", "--seizures", "2", "--onsets-h", "0.25,0.5833", "--signature-min", "5",
         "--min-gap-min", "10", "--patient", "P"]
TRAIN = ["--image-type", "1s", "--preictal-min", "5", "--epochs", "1", "--max-per-class", "30", "--guard-min", "5"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(*SYNTH, "--out", d / "raw" / "p.json") == 0
    assert run("preprocess", "--in", d / "raw" / "p.json", "--out", d / "pre" / "p.json") == 0
    assert run("train", "--in", d / "pre" / "p.json", "--models-dir", d / "models", *TRAIN) == 0
    assert run("sweep", "--in", d / "pre" / "p.json", "--models-dir", d / "models", "--out-dir", d / "sweep",
               "--image-type", "1s", "--preictal-min", "5", "--guard-min", "5") == 0
    assert run("report", "--sweep-dir", d / "sweep", "--out-dir", d / "report") == 0
    return d


def test_stage_outputs_and_manifests(pipeline):
    d = pipeline
    assert (d / "models" / "P_1s_5.model").exists()
    rows = read_table_csv(d / "report" / "table.csv")
    assert len(rows) == 1 and rows[0]["Patient"] == "P"
    assert rows[0]["Hours of Testing Group"] == "0.317"
    sweep = json.loads((d / "sweep" / "sweep.json").read_text())
    assert sweep["n_results"] == 18 * 8
    for manifest in d.glob("*/*.manifest.json"):
        m = json.loads(manifest.read_text())
        assert m["outputs"], manifest
        for path, digest in m["outputs"].items():
            assert sha256_file(path) == digest
    assert json.loads((d / "raw" / "synth.manifest.json").read_text())["seeds"] == {"synth": 0}
    assert list((d / "report").glob("timeline_1s_5_s1.csv"))


def test_train_is_reproducible(pipeline):
    d = pipeline
    assert run("train", "--in", d / "pre" / "p.json", "--models-dir", d / "again", *TRAIN) == 0
    assert (d / "again" / "P_1s_5.model").read_bytes() == (d / "models" / "P_1s_5.model").read_bytes()


def test_risk_writes_timeline_and_alarms(pipeline):
    d = pipeline
    assert run("risk", "--in", d / "pre" / "p.json", "--model", d / "models" / "P_1s_5.model", "--out-dir",
               d / "risk", "--Z", "0.5", "--Y", "0.5") == 0
    assert (d / "risk" / "timeline_1s_5_s1.csv").exists()
    assert (d / "risk" / "alarms_1s_5_s1.csv").exists()


def test_sweep_names_missing_model(pipeline, capsys):
    d = pipeline
    code = run("sweep", "--in", d / "pre" / "p.json", "--models-dir", d / "models", "--out-dir", d / "s2",
               "--image-type", "1s", "--preictal-min", "5,10", "--guard-min", "5")
    assert code == 2
    assert "P_1s_10.model" in capsys.readouterr().err


def test_model_from_other_recording_rejected(pipeline, capsys):
    d = pipeline
    assert run(*SYNTH, "--seed", "1", "--out", d / "other" / "p.json") == 0
    code = run("sweep", "--in", d / "other" / "p.json", "--models-dir", d / "models", "--out-dir", d / "s3",
               "--image-type", "1s", "--preictal-min", "5", "--guard-min", "5")
    assert code == 2
    assert "hash mismatch" in capsys.readouterr().err


def test_infeasible_synth_is_data_error(tmp_path, capsys):
    code = run("synth", "--duration-h", "1", "--seizures", "1", "--onsets-h", "0.05", "--out", tmp_path / "x.json")
    assert code == 2
    assert "lead time" in capsys.readouterr().err
    assert not (tmp_path / "x.json").exists()


def test_usage_errors_exit_1(tmp_path):
    assert run("synth", "--bogus") == 1
    assert run("train") == 1
    assert run("synth", "--duration-h", "1", "--seizures", "2", "--onsets-h", "0.5", "--out", tmp_path / "x") == 1
    cfg = tmp_path / "c.txt"
    cfg.write_text("colour = blue\n")
    assert run("synth", "--duration-h", "1", "--out", tmp_path / "x", "--config", cfg) == 1


def test_config_overrides_flags(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# overrides\nduration-h = 0.5\nseizures = 1\nseed = 9\nmin_gap_min = 5\n")
    assert run("synth", "--duration-h", "3", "--out", tmp_path / "r.json", "--config", cfg) == 0
    m = json.loads((tmp_path / "synth.manifest.json").read_text())
    assert m["seeds"] == {"synth": 9}
    assert m["arguments"]["duration_h"] == 0.5
    header = json.loads((tmp_path / "r.json").read_text())
    assert header["sample_count"] == 1800 * 256 and len(header["annotations"]) == 1


def test_internal_errors_exit_3(monkeypatch, tmp_path, capsys):
    def boom(args):
        raise RuntimeError("kaput")

    monkeypatch.setitem(cli.COMMANDS, "synth", boom)
    assert run("synth", "--duration-h", "1", "--out", tmp_path / "x") == 3
    assert "internal error" in capsys.readouterr().err
