import os

import pytest

from srnet.cli import main
from srnet.io import read_kv, read_pgm

SPEC = """\
frames = 3
height = 32
width = 32
object.0.size = 8, 8
object.0.velocity = 1, 2
object.0.start = 4, 4
"""

CONFIG = """\
profile = tiny
frame.height = 32
frame.width = 32
train.iterations = 2
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "spec.txt").write_text(SPEC)
    (tmp_path / "cfg.txt").write_text(CONFIG)
    return tmp_path


def test_synth_train_infer_eval(workdir, capsys):
    d = str(workdir)
    assert main(["synth", "--spec", f"{d}/spec.txt", "--out", f"{d}/seq"]) == 0
    assert sorted(os.listdir(f"{d}/seq/frames")) == ["00000.ppm", "00001.ppm", "00002.ppm"]
    assert read_pgm(f"{d}/seq/masks/00000.pgm").max() == 1

    assert main(["train", "--spec", f"{d}/spec.txt", "--config", f"{d}/cfg.txt", "--out", f"{d}/run"]) == 0
    assert os.path.exists(f"{d}/run/params/params.txt")
    assert read_kv(f"{d}/run/config.txt")["train.iterations"] == 2
    assert open(f"{d}/run/loss.csv").read().startswith("iteration,loss\n")

    assert main(["infer", "--params", f"{d}/run/params", "--frames", f"{d}/seq/frames",
                 "--mask0", f"{d}/seq/masks/00000.pgm", "--out", f"{d}/pred"]) == 0
    assert "FPS" in capsys.readouterr().out
    assert len(os.listdir(f"{d}/pred")) == 3

    assert main(["eval", "--pred", f"{d}/pred", "--gt", f"{d}/seq/masks", "--report", f"{d}/r.csv"]) == 0
    lines = open(f"{d}/r.csv").read().splitlines()
    assert lines[0] == "sequence,object,J,F,JF" and len(lines) == 2


def test_eval_perfect_prediction(workdir, capsys):
    d = str(workdir)
    main(["synth", "--spec", f"{d}/spec.txt", "--out", f"{d}/seq"])
    main(["eval", "--pred", f"{d}/seq/masks", "--gt", f"{d}/seq/masks", "--report", f"{d}/r.csv"])
    assert open(f"{d}/r.csv").read().splitlines()[1].endswith(",1.000000,1.000000,1.000000")


def test_ablate_selected_variants(workdir, capsys):
    d = str(workdir)
    cfg = CONFIG + "ablate.variants = default, no_fam\n"
    (workdir / "abl.txt").write_text(cfg)
    assert main(["ablate", "--config", f"{d}/abl.txt", "--spec", f"{d}/spec.txt", "--out", f"{d}/a.csv"]) == 0
    out = capsys.readouterr().out
    assert "default" in out and "no_fam" in out
    assert open(f"{d}/a.csv").read().count("\n") == 3


def test_gradcheck_subset(capsys):
    assert main(["gradcheck", "--op", "softmax"]) == 0
    assert "softmax" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["gradcheck", "--op", "nope"])
