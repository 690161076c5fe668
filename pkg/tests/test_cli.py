import json

import pytest

from codeclab.cli import main
from codeclab.codecs import read_png, write_png


def test_compress_decompress(tmp_path, corpus, capsys):
    write_png(corpus.images[0], tmp_path / "in.png")
    assert main(["compress", str(tmp_path / "in.png"), "--codec", "latentq", "--level", "2",
                 "--out", str(tmp_path / "a.cga")]) == 0
    assert "bpp" in capsys.readouterr().out
    assert main(["decompress", str(tmp_path / "a.cga"), "--out", str(tmp_path / "back.png")]) == 0
    assert read_png(tmp_path / "back.png").dims == (64, 64, 1)


def test_bad_codec_name(tmp_path, corpus):
    write_png(corpus.images[0], tmp_path / "in.png")
    with pytest.raises(SystemExit):
        main(["compress", str(tmp_path / "in.png"), "--codec", "webp"])


def test_decompress_garbage(tmp_path, capsys):
    (tmp_path / "x.cga").write_bytes(b"garbage-bytes-here")
    assert main(["decompress", str(tmp_path / "x.cga")]) == 1
    assert "error" in capsys.readouterr().err


def test_corpus_and_training(tmp_path, capsys):
    out = tmp_path / "corpus"
    assert main(["gen-corpus", "--count", "240", "--seed", "3", "--out", str(out)]) == 0
    entries = json.loads((out / "manifest.json").read_text())
    assert len(entries) == 64 * 12
    assert {(e["codec_id"], e["level"]) for e in entries} == {(c, lv) for c in range(3) for lv in range(4)}
    assert main(["train-adaptor", str(out / "manifest.json"), "--steps", "3", "--batch-size", "4",
                 "--out", str(tmp_path / "train")]) == 0
    assert "held-out loss" in capsys.readouterr().out
    for f in ("ve.cvew", "cve.cvew", "train_log.csv"):
        assert (tmp_path / "train" / f).exists()


def test_bd_and_plot(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("bpp,metric\n0.05,60\n0.1,65\n0.2,70\n0.3,72\n")
    (tmp_path / "b.csv").write_text("bpp,metric\n0.05,62\n0.1,67\n0.2,72\n0.3,74\n")
    assert main(["bd", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 0
    assert capsys.readouterr().out.strip() == "2.000000"
    assert main(["plot", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"), "--out", str(tmp_path / "p.svg")]) == 0
    assert (tmp_path / "p.svg").read_text().count("<polyline") == 2
    assert main(["plot"]) == 2


def test_gap(tmp_path, capsys):
    (tmp_path / "u.csv").write_text("task,value\nSEED/JPEG,73.81\n")
    (tmp_path / "c.csv").write_text("task,value\nSEED/JPEG,60.56\n")
    (tmp_path / "f.csv").write_text("task,value\nSEED/JPEG,64.31\n")
    assert main(["gap", str(tmp_path / "u.csv"), str(tmp_path / "c.csv"), str(tmp_path / "f.csv")]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "SEED/JPEG,13.25,9.50,3.75"


def test_run_with_config(tmp_path, capsys):
    cfg = {"schema_version": 1, "corpus_size": 240, "codecs": [0], "levels": [0, 1, 2], "tasks": ["fine-glyph"]}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "cfg.json"), "--seed", "2",
                 "--out", str(tmp_path / "r")]) == 0
    out = capsys.readouterr().out
    assert "codec,level,bpp_mean,task,variant,metric,value,n" in out
    m = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert m["seed"] == 2
    assert {"results.csv", "rate_fine-glyph.svg", "rate_fine-glyph.png", "correlation.png"} <= set(m["files"])
