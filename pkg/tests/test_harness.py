import csv
import json
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from codeclab import harness
from codeclab.analysis import build_curve
from codeclab.encoder import EncoderConfig, init_weights, save_checkpoint
from codeclab.harness import (
    HarnessError, RunConfig, emit_plot, gap_report_cmd, padded_range, run_benchmark, sha256_file,
    worker_count,
)

SVG = "{http://www.w3.org/2000/svg}"


def small(tmp_path, name="out", **kw):
    base = dict(corpus_size=240, codecs=[0, 2], levels=[0, 1], out_dir=str(tmp_path / name), figures=False)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = small(tmp, "a")
    return cfg, run_benchmark(cfg)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_row_count_ve_only(small_run):
    cfg, _ = small_run
    rows = read_rows(f"{cfg.out_dir}/results.csv")
    assert len(rows) == 2 * 2 * 2 + 2
    assert list(rows[0]) == list(harness.RESULTS_HEADER)
    assert [r["codec"] for r in rows[:2]] == ["none", "none"]
    assert all(0 <= float(r["value"]) <= 1 for r in rows)


def test_rerun_is_byte_identical(small_run, tmp_path, monkeypatch):
    cfg, m1 = small_run
    monkeypatch.setenv("CODECLAB_WORKERS", "1")
    cfg2 = small(tmp_path, "b")
    m2 = run_benchmark(cfg2)
    assert m1["files"] == m2["files"]
    assert m1["config_hash"] == m2["config_hash"]
    assert open(f"{cfg.out_dir}/results.csv", "rb").read() == open(f"{cfg2.out_dir}/results.csv", "rb").read()


def test_manifest_inventory(small_run):
    cfg, m = small_run
    on_disk = json.load(open(f"{cfg.out_dir}/manifest.json"))
    assert on_disk == m
    assert m["seed"] == cfg.seed and set(m["timings"]) == {"corpus", "probes", "grid", "report"}
    for name, info in m["files"].items():
        p = f"{cfg.out_dir}/{name}"
        assert info["sha256"] == sha256_file(p)
        assert info["bytes"] == len(open(p, "rb").read())


def test_failed_run_leaves_no_manifest(small_run, tmp_path, monkeypatch):
    cfg = small(tmp_path, "c")
    run_benchmark(cfg)

    def boom(*a, **k):
        raise RuntimeError("cell failed")

    monkeypatch.setattr(harness, "_eval_cell", boom)
    with pytest.raises(RuntimeError):
        run_benchmark(cfg)
    assert not (tmp_path / "c" / "manifest.json").exists()


def test_cve_variant_rows_and_gaps(tmp_path):
    w = init_weights(EncoderConfig(), 7)
    save_checkpoint(w, tmp_path / "cve.cvew")
    cfg = small(tmp_path, "d", cve_checkpoint=str(tmp_path / "cve.cvew"), levels=[0, 1, 2], codecs=[1])
    run_benchmark(cfg)
    rows = read_rows(tmp_path / "d" / "results.csv")
    assert len(rows) == 1 * 3 * 2 * 2 + 2
    # an untrained CVE (zero projection) is the teacher, so both variants agree
    by = {(r["codec"], r["level"], r["task"], r["variant"]): r["value"] for r in rows}
    for lv in "012":
        for t in ("coarse-class", "fine-glyph"):
            assert by[("latentq", lv, t, "VE")] == by[("latentq", lv, t, "CVE")]
    gaps = json.load(open(tmp_path / "d" / "gaps.json"))
    assert len(gaps) == 6 and all(g["generalization_gap"] == 0 for g in gaps.values())
    svg = (tmp_path / "d" / "rate_coarse-class.svg").read_text()
    assert svg.count("<polyline") == 2


def test_bad_checkpoint(tmp_path):
    (tmp_path / "bad.cvew").write_bytes(b"CVEW\x01")
    with pytest.raises(HarnessError):
        run_benchmark(small(tmp_path, "e", cve_checkpoint=str(tmp_path / "bad.cvew")))
    assert not (tmp_path / "e" / "manifest.json").exists()


def test_config_validation(tmp_path):
    with pytest.raises(HarnessError):
        RunConfig(codecs=[])
    with pytest.raises(HarnessError):
        RunConfig(levels=[4])
    with pytest.raises(HarnessError):
        RunConfig(tasks=["ocr"])
    with pytest.raises(HarnessError):
        RunConfig.from_dict({"seed": 1})
    with pytest.raises(HarnessError):
        RunConfig.from_dict({"schema_version": 1, "colour": "red"})
    cfg = RunConfig(seed=4, levels=[1, 3])
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert RunConfig.load(tmp_path / "c.json") == cfg


def test_config_hash_ignores_out_dir():
    assert RunConfig(out_dir="x").hash() == RunConfig(out_dir="y").hash()
    assert RunConfig(seed=2).hash() != RunConfig(seed=3).hash()


def test_worker_env(monkeypatch):
    monkeypatch.setenv("CODECLAB_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("CODECLAB_WORKERS", "zero")
    with pytest.raises(HarnessError):
        worker_count()
    monkeypatch.setenv("CODECLAB_WORKERS", "0")
    with pytest.raises(HarnessError):
        worker_count()


def parse_svg(path):
    root = ET.parse(path).getroot()
    lines = root.findall(f"{SVG}polyline")
    axes = root.find(f"{SVG}g[@id='axes']")
    verts = [[tuple(map(float, p.split(","))) for p in pl.get("points").split()] for pl in lines]
    return root, lines, axes, verts


def test_plot_single_curve(tmp_path):
    c = build_curve([(0.05, 60), (0.1, 65), (0.2, 70), (0.3, 72)], "blocky")
    emit_plot([c], tmp_path / "p.svg")
    root, lines, axes, verts = parse_svg(tmp_path / "p.svg")
    assert root.tag == f"{SVG}svg"
    assert len(lines) == 1 and len(verts[0]) == 4
    assert "blocky" in ET.tostring(root.find(f"{SVG}g[@id='legend']"), encoding="unicode")


def test_plot_axes_padded_five_percent(tmp_path):
    curves = [build_curve([(0.05, 60), (0.1, 65), (0.2, 70)], "a"),
              build_curve([(0.08, 50), (0.4, 66), (0.9, 75)], "b")]
    emit_plot(curves, tmp_path / "p.svg")
    _, _, axes, verts = parse_svg(tmp_path / "p.svg")
    lx = np.log10([0.05, 0.9])
    span = lx[1] - lx[0]
    assert float(axes.get("data-xmin")) == pytest.approx(lx[0] - 0.05 * span, abs=1e-12)
    assert float(axes.get("data-xmax")) == pytest.approx(lx[1] + 0.05 * span, abs=1e-12)
    assert float(axes.get("data-ymin")) == pytest.approx(50 - 0.05 * 25, abs=1e-12)
    assert float(axes.get("data-ymax")) == pytest.approx(75 + 0.05 * 25, abs=1e-12)
    assert axes.get("data-xscale") == "log10"
    # map the vertices back into data space
    left, right = float(axes.get("data-left")), float(axes.get("data-right"))
    top, bottom = float(axes.get("data-top")), float(axes.get("data-bottom"))
    x0, x1 = float(axes.get("data-xmin")), float(axes.get("data-xmax"))
    y0, y1 = float(axes.get("data-ymin")), float(axes.get("data-ymax"))
    for c, vs in zip(curves, verts):
        for (b, m), (px, py) in zip(c.points, vs):
            assert 10 ** (x0 + (px - left) / (right - left) * (x1 - x0)) == pytest.approx(b, rel=1e-4)
            assert y0 + (bottom - py) / (bottom - top) * (y1 - y0) == pytest.approx(m, abs=1e-3)


def test_plot_errors(tmp_path):
    with pytest.raises(HarnessError):
        emit_plot([], tmp_path / "p.svg")
    c = build_curve([(0.05, 60), (0.1, 65), (0.2, 70)], "a")
    with pytest.raises(HarnessError):
        emit_plot([c], tmp_path / "missing" / "p.svg")


def test_plot_escapes_labels(tmp_path):
    c = build_curve([(0.05, 60), (0.1, 65), (0.2, 70)], "a<b>&c")
    emit_plot([c], tmp_path / "p.svg")
    ET.parse(tmp_path / "p.svg")


def test_padded_range_flat():
    lo, hi = padded_range([5.0, 5.0])
    assert lo < 5.0 < hi


def write_tv(path, rows):
    path.write_text("task,value\n" + "".join(f"{k},{v}\n" for k, v in rows.items()))


def test_gap_cmd_published_rows(tmp_path):
    u = {"SEED/JPEG": 73.81, "POPE/JPEG": 86.21}
    c = {"SEED/JPEG": 60.56, "POPE/JPEG": 49.92}
    f = {"SEED/JPEG": 64.31, "POPE/JPEG": 79.40}
    for n, d in zip("ucf", (u, c, f)):
        write_tv(tmp_path / f"{n}.csv", d)
    rep = gap_report_cmd(tmp_path / "u.csv", tmp_path / "c.csv", tmp_path / "f.csv", tmp_path / "g.json")
    assert rep["SEED/JPEG"].rounded() == (13.25, 9.5, 3.75)
    assert rep["POPE/JPEG"].rounded() == (36.29, 6.81, 29.48)
    assert set(json.load(open(tmp_path / "g.json"))) == {"SEED/JPEG", "POPE/JPEG"}


def test_gap_cmd_zero_and_missing(tmp_path):
    d = {"coarse-class": 0.7, "fine-glyph": 0.4}
    for n in "ucf":
        write_tv(tmp_path / f"{n}.csv", d)
    rep = gap_report_cmd(tmp_path / "u.csv", tmp_path / "c.csv", tmp_path / "f.csv")
    assert all(g.rounded() == (0, 0, 0) for g in rep.values())
    write_tv(tmp_path / "f.csv", {"coarse-class": 0.5})
    with pytest.raises(HarnessError, match=re.escape("'fine-glyph'")):
        gap_report_cmd(tmp_path / "u.csv", tmp_path / "c.csv", tmp_path / "f.csv")
