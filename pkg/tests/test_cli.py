import json
import subprocess
import sys

import pytest

from arl.cli import main, read_config
from arl.scene import serialize
from arl.tensorize import encode_scene
from conftest import obj, scene

TINY = """\
# tiny network so the CLI tests stay fast
d_a = 4
encoder_hidden = 8, 8
decoder_hidden = 8
emb_dim = 4
lstm_hidden = 6
epochs1 = 2
epochs2 = 2
stage1_pairs = 40
stage2_episodes = 40
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY)
    assert main(["gen", "--seed", "7", "--out", str(d / "data"), "--train", "60", "--val", "12", "--test", "12",
                 "--2hop-ta", "6", "--2hop-qh", "6"]) == 0
    return d


def test_gen_is_byte_identical(workdir, tmp_path):
    assert main(["gen", "--seed", "7", "--out", str(tmp_path), "--train", "60", "--val", "12", "--test", "12",
                 "--2hop-ta", "6", "--2hop-qh", "6"]) == 0
    for name in ("train", "val", "test", "2hop_ta", "2hop_qh"):
        assert (tmp_path / f"{name}.jsonl").read_bytes() == (workdir / "data" / f"{name}.jsonl").read_bytes()


def test_train_twice_same_metrics(workdir, capsys):
    outs = []
    for run in ("a", "b"):
        assert main(["train", "--data", str(workdir / "data"), "--out", str(workdir / run),
                     "--config", str(workdir / "tiny.cfg")]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert (workdir / "a" / "metrics_stageall.json").read_text() == outs[0]


def test_stagewise_training(workdir):
    cfg = str(workdir / "tiny.cfg")
    assert main(["train", "--stage", "1", "--data", str(workdir / "data"), "--out", str(workdir / "s"),
                 "--config", cfg]) == 0
    assert main(["train", "--stage", "2", "--data", str(workdir / "data"), "--out", str(workdir / "s"),
                 "--config", cfg]) == 0
    assert (workdir / "s" / "stage2.npz").exists()


def test_eval_and_dump(workdir, capsys):
    test_train_twice_same_metrics(workdir, capsys)
    out = workdir / "eval.json"
    assert main(["eval", "--model", str(workdir / "a"), "--data", str(workdir / "data"), "--split", "all",
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert set(report["splits"]) == {"test", "2hop_ta", "2hop_qh"}
    assert report["splits"]["test"]["scene_correct_answer_wrong"] == 0
    assert main(["dump-embeddings", "--model", str(workdir / "a"), "--data", str(workdir / "data"),
                 "--out", str(workdir / "emb.csv")]) == 0
    lines = (workdir / "emb.csv").read_text().splitlines()
    assert len(lines) == 13 and lines[0].startswith("id,action_type,a0")


def test_baseline(workdir, capsys):
    assert main(["baseline", "--data", str(workdir / "data")]) == 0
    value = float(capsys.readouterr().out)
    assert 0 < value <= 100


def test_encode(tmp_path, capsys):
    s = scene(obj(0, x=0.25, y=0.5))
    (tmp_path / "s.json").write_text(serialize(s))
    assert main(["encode", "--scene", str(tmp_path / "s.json")]) == 0
    values = [float(v) for v in capsys.readouterr().out.split()]
    assert values == encode_scene(s).tolist()


def test_missing_files_exit_2(tmp_path):
    assert main(["eval", "--model", str(tmp_path), "--data", str(tmp_path)]) == 2
    assert main(["baseline", "--data", str(tmp_path)]) == 2


def test_config_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("d_a = 9\nstage2_cotrain = yes\nencoder_hidden = 3 4\nlr = 0.01\nstage2_episodes = none\n")
    assert read_config(p) == {"d_a": 9, "stage2_cotrain": True, "encoder_hidden": (3, 4), "lr": 0.01,
                              "stage2_episodes": None}
    p.write_text("depth = 3\n")
    with pytest.raises(ValueError, match="unknown option"):
        read_config(p)


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "arl.cli", "--help"], capture_output=True, text=True, check=True)
    for verb in ("gen", "train", "eval", "ablate-stage1", "sweep", "dump-embeddings", "baseline", "encode"):
        assert verb in out.stdout


def test_ablate_and_sweep(workdir, capsys):
    data, cfg = str(workdir / "data"), str(workdir / "tiny.cfg")
    assert main(["ablate-stage1", "--data", data, "--config", cfg, "--out", str(workdir / "abl.json")]) == 0
    abl = json.loads((workdir / "abl.json").read_text())
    assert {"mean_scene_gap", "mean_qa_gap"} <= set(abl) and len(abl["runs"]) == 1
    capsys.readouterr()
    assert main(["sweep", "--axis", "veclen", "--grid", "2,4", "--data", data, "--config", cfg,
                 "--out", str(workdir / "v.csv")]) == 0
    rows = (workdir / "v.csv").read_text().splitlines()
    assert rows[0] == "seed,d_a,scene_acc,qa_acc,cpu_s" and len(rows) == 3
    assert main(["sweep", "--axis", "data", "--grid", "8,16", "--data", data, "--config", cfg]) == 0
    assert main(["sweep", "--axis", "data", "--grid", "8,4000", "--data", data, "--config", cfg]) == 2
