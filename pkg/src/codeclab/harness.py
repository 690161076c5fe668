"""Benchmark runner: corpus, codec sweep, probe evaluation, reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, RateMetricCurve, build_curve, correlation_matrix, gap_decompose, psnr
from .codecs import CODEC_NAMES, NUM_CODECS, NUM_LEVELS, CodecCondition, decode, encode
from .encoder import ConfigError, EncoderConfig, init_weights, load_checkpoint
from .tasks import TASKS, fit_task_probe, encoder_features, gen_synth_corpus, score_probe

SCHEMA_VERSION = 1
RESULTS_HEADER = ("codec", "level", "bpp_mean", "task", "variant", "metric", "value", "n")
WORKERS_ENV = "CODECLAB_WORKERS"
MANIFEST_NAME = "manifest.json"


class HarnessError(RuntimeError):
    pass


@dataclass
class RunConfig:
    seed: int = 1
    corpus_size: int = 1024
    codecs: list = field(default_factory=lambda: list(range(NUM_CODECS)))
    levels: list = field(default_factory=lambda: list(range(NUM_LEVELS)))
    tasks: list = field(default_factory=lambda: list(TASKS))
    ve_checkpoint: str | None = None
    cve_checkpoint: str | None = None
    encoder_seed: int = 7  # toy teacher initialisation when no VE checkpoint is given
    out_dir: str = "run_out"
    figures: bool = True
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise HarnessError(f"config schema_version {self.schema_version} unsupported (want {SCHEMA_VERSION})")
        if not self.codecs or not self.levels or not self.tasks:
            raise HarnessError("codec grid and task list must be nonempty")
        for c in self.codecs:
            if c not in range(NUM_CODECS):
                raise HarnessError(f"codec id {c} out of range")
        for lv in self.levels:
            if lv not in range(NUM_LEVELS):
                raise HarnessError(f"level {lv} out of range")
        for t in self.tasks:
            if t not in TASKS:
                raise HarnessError(f"unknown task {t!r}")
        if len(set(self.codecs)) != len(self.codecs) or len(set(self.levels)) != len(self.levels):
            raise HarnessError("duplicate codec or level in grid")

    @property
    def grid(self):
        return [(c, lv) for c in self.codecs for lv in self.levels]

    @property
    def variants(self):
        return ("VE", "CVE") if self.cve_checkpoint else ("VE",)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def hash(self) -> str:
        # out_dir is where results go, not what they are
        d = asdict(self)
        d.pop("out_dir")
        for k in ("ve_checkpoint", "cve_checkpoint"):
            if d[k]:
                d[k] = sha256_file(d[k])
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, base=None) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise HarnessError(f"unknown config keys {sorted(unknown)}")
        if "schema_version" not in d:
            raise HarnessError("config lacks schema_version")
        d = dict(d)
        if base is not None:
            for k in ("ve_checkpoint", "cve_checkpoint"):
                if d.get(k):
                    d[k] = str(Path(base) / d[k])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()), base=Path(path).parent)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return max(1, min(8, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise HarnessError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise HarnessError(f"{WORKERS_ENV} must be >= 1")
    return n


def load_encoders(config: RunConfig) -> dict:
    try:
        ve = (load_checkpoint(config.ve_checkpoint) if config.ve_checkpoint
              else init_weights(EncoderConfig(), config.encoder_seed))
        enc = {"VE": ve}
        if config.cve_checkpoint:
            enc["CVE"] = load_checkpoint(config.cve_checkpoint)
    except (OSError, ConfigError) as exc:
        raise HarnessError(f"cannot load checkpoint: {exc}") from exc
    if "CVE" in enc and enc["CVE"].config != ve.config:
        raise HarnessError("VE and CVE checkpoints have different encoder configs")
    return enc


# ---------------------------------------------------------------- run

def _fmt(v: float) -> str:
    return repr(float(v))


def _eval_cell(cell, corpus, encoders, probes, tasks):
    codec_id, level = cell
    arts = [encode(img, codec_id, level) for img in corpus.images]
    decoded = [decode(a) for a in arts]
    bpp = float(np.mean([a.bpp for a in arts]))
    fidelity = float(np.mean([min(psnr(a, b), 100.0) for a, b in zip(corpus.images, decoded)]))
    results = {}
    for variant, w in encoders.items():
        cond = CodecCondition(codec_id, level) if variant == "CVE" else None
        feats = encoder_features(w, decoded, cond)
        for task in tasks:
            results[(task, variant)] = score_probe(probes[(task, variant)], feats, corpus, task)
    return bpp, fidelity, results


def run_benchmark(config: RunConfig, log=None) -> dict:
    """Run the evaluation grid and write the report to ``config.out_dir``.

    Files: results.csv, fidelity.csv, gaps.json (if CVE given), correlation.csv,
    rate_<task>.svg, optional PNG figures, and manifest.json written last.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST_NAME
    if manifest_path.exists():
        manifest_path.unlink()
    say = log or (lambda msg: None)
    timings = {}
    files = []

    t = time.perf_counter()
    corpus = gen_synth_corpus(config.seed, config.corpus_size)
    fit, ev = corpus.subset("probe"), corpus.subset("eval")
    timings["corpus"] = time.perf_counter() - t

    t = time.perf_counter()
    encoders = load_encoders(config)
    probes = {(task, v): fit_task_probe(w, fit, task, seed=config.seed)
              for v, w in encoders.items() for task in config.tasks}
    timings["probes"] = time.perf_counter() - t
    say(f"probes fitted ({len(probes)})")

    t = time.perf_counter()
    baseline = {task: score_probe(probes[(task, "VE")], encoder_features(encoders["VE"], ev.images), ev, task)
                for task in config.tasks}
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        cells = list(pool.map(lambda c: _eval_cell(c, ev, encoders, probes, config.tasks), config.grid))
    timings["grid"] = time.perf_counter() - t
    say(f"grid evaluated ({len(cells)} cells)")

    t = time.perf_counter()
    raw_bpp = 8.0 * ev.images[0].channels
    rows = [("none", "", _fmt(raw_bpp), task, "VE", "accuracy", _fmt(r.accuracy), r.n)
            for task, r in baseline.items()]
    for (codec_id, level), (bpp, _, res) in zip(config.grid, cells):
        for task in config.tasks:
            for v in config.variants:
                r = res[(task, v)]
                rows.append((CODEC_NAMES[codec_id], level, _fmt(bpp), task, v, "accuracy", _fmt(r.accuracy), r.n))
    expected = len(config.grid) * len(config.tasks) * len(config.variants) + len(config.tasks)
    if len(rows) != expected:
        raise HarnessError(f"row count {len(rows)} != {expected}")
    files.append(_write_csv(out / "results.csv", RESULTS_HEADER, rows))
    files.append(_write_csv(out / "fidelity.csv", ("codec", "level", "bpp_mean", "psnr_mean"),
                            [(CODEC_NAMES[c], lv, _fmt(b), _fmt(p)) for (c, lv), (b, p, _) in zip(config.grid, cells)]))

    if "CVE" in encoders:
        gaps = {}
        for (codec_id, level), (_, _, res) in zip(config.grid, cells):
            for task in config.tasks:
                g = gap_decompose(baseline[task].accuracy, res[(task, "VE")].accuracy, res[(task, "CVE")].accuracy)
                gaps[f"{CODEC_NAMES[codec_id]}/{level}/{task}"] = asdict(g)
        files.append(_write_text(out / "gaps.json", json.dumps(gaps, sort_keys=True, indent=2) + "\n"))

    series = {"bpp": [c[0] for c in cells], "psnr": [c[1] for c in cells]}
    for task in config.tasks:
        for v in config.variants:
            series[f"{task}/{v}"] = [c[2][(task, v)].accuracy for c in cells]
    usable = {k: s for k, s in series.items() if len(s) >= 3 and np.ptp(s) > 0}
    corr = None
    if len(usable) >= 2:
        names, corr = correlation_matrix(usable)
        files.append(_write_csv(out / "correlation.csv", ["series"] + names,
                                [[n] + [_fmt(x) for x in row] for n, row in zip(names, corr)]))

    curves = {}
    if len(config.levels) >= 3:
        for task in config.tasks:
            curves[task] = []
            for codec_id in config.codecs:
                for v in config.variants:
                    pts = [(cells[i][0], cells[i][2][(task, v)].accuracy)
                           for i, (c, _) in enumerate(config.grid) if c == codec_id]
                    curves[task].append(build_curve(pts, f"{CODEC_NAMES[codec_id]}/{v}"))
            files.append(emit_plot(curves[task], out / f"rate_{task}.svg", title=f"{task} accuracy vs rate",
                                   ylabel="accuracy"))
    if config.figures:
        from .figures import correlation_figure, rate_metric_figure
        for task, cs in curves.items():
            files.append(rate_metric_figure(cs, out / f"rate_{task}.png", f"{task} accuracy vs rate"))
        if corr is not None:
            files.append(correlation_figure(names, corr, out / "correlation.png"))
    timings["report"] = time.perf_counter() - t

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "config_hash": config.hash(),
        "seed": config.seed,
        "timings": {k: round(v, 3) for k, v in timings.items()},
        "files": {p.name: {"bytes": p.stat().st_size, "sha256": sha256_file(p)} for p in files},
    }
    tmp = out / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, manifest_path)
    say(f"manifest written: {manifest_path}")
    return manifest


def _write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return _write_text(path, buf.getvalue())


def _write_text(path: Path, text: str) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------- SVG plot

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
SVG_W, SVG_H = 640, 420
PLOT = (70, 30, 450, 360)  # left, top, right, bottom of the data area


def padded_range(values, frac: float = 0.05) -> tuple[float, float]:
    lo, hi = float(min(values)), float(max(values))
    span = hi - lo
    if span == 0:
        span = abs(lo) if lo else 1.0
        return lo - frac * span, hi + frac * span
    return lo - frac * span, hi + frac * span


def emit_plot(curves, path, title: str = "", xlabel: str = "bpp (log scale)", ylabel: str = "metric") -> Path:
    """One polyline per curve on a log10 rate axis; ranges are the data extent padded 5%."""
    curves = list(curves)
    if not curves:
        raise HarnessError("emit_plot needs at least one curve")
    xs = [math.log10(b) for c in curves for b in c.bpp]
    ys = [m for c in curves for m in c.metric]
    x0, x1 = padded_range(xs)
    y0, y1 = padded_range(ys)
    left, top, right, bottom = PLOT

    def px(lx):
        return left + (lx - x0) / (x1 - x0) * (right - left)

    def py(v):
        return bottom - (v - y0) / (y1 - y0) * (bottom - top)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" '
           f'viewBox="0 0 {SVG_W} {SVG_H}">',
           f'<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="white"/>',
           f'<text x="{(left + right) / 2}" y="18" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<g id="axes" data-xscale="log10" data-xmin="{x0!r}" data-xmax="{x1!r}" '
           f'data-ymin="{y0!r}" data-ymax="{y1!r}" data-left="{left}" data-top="{top}" '
           f'data-right="{right}" data-bottom="{bottom}">',
           f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
           f'fill="none" stroke="black"/>']
    for k in range(5):
        lx = x0 + (x1 - x0) * k / 4
        v = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{px(lx):.2f}" y="{bottom + 16}" text-anchor="middle" font-size="10">'
                   f'{10 ** lx:.3g}</text>')
        out.append(f'<text x="{left - 6}" y="{py(v) + 3:.2f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    out.append(f'<text x="{(left + right) / 2}" y="{bottom + 34}" text-anchor="middle" font-size="12">'
               f'{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{(top + bottom) / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {(top + bottom) / 2})">{_esc(ylabel)}</text>')
    out.append("</g>")
    for i, c in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(math.log10(b)):.4f},{py(m):.4f}" for b, m in c.points)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}" '
                   f'data-label="{_esc(c.label)}"/>')
    out.append('<g id="legend">')
    for i, c in enumerate(curves):
        y = top + 10 + 18 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{right + 15}" y1="{y}" x2="{right + 40}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{right + 46}" y="{y + 4}" font-size="11">{_esc(c.label)}</text>')
    out.append("</g>")
    out.append("</svg>")
    path = Path(path)
    try:
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise HarnessError(f"cannot write plot to {path}: {exc}") from exc
    return path


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


# ---------------------------------------------------------------- gap report

def read_task_values(path) -> dict:
    """``task -> value`` from a CSV with at least ``task`` and ``value`` columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"task", "value"} <= set(reader.fieldnames):
            raise HarnessError(f"{path}: needs task and value columns")
        out = {}
        for row in reader:
            if row["task"] in out:
                raise HarnessError(f"{path}: duplicate task key {row['task']!r}")
            out[row["task"]] = float(row["value"])
    return out


def gap_report(u: dict, c: dict, f: dict) -> dict:
    for name, d in (("compressed", c), ("finetuned", f)):
        missing = sorted(set(u) - set(d))
        extra = sorted(set(d) - set(u))
        if missing:
            raise HarnessError(f"task key {missing[0]!r} missing from {name} input")
        if extra:
            raise HarnessError(f"task key {extra[0]!r} in {name} input has no uncompressed value")
    reports = {}
    for task in u:
        g = gap_decompose(u[task], c[task], f[task])
        if g.information_gap + g.generalization_gap - g.performance_gap != 0.0:
            raise AnalysisError(f"gap identity violated for {task!r}")
        reports[task] = g
    return reports


def gap_report_cmd(u_csv, c_csv, f_csv, out=None) -> dict:
    reports = gap_report(read_task_values(u_csv), read_task_values(c_csv), read_task_values(f_csv))
    text = json.dumps({k: asdict(v) for k, v in reports.items()}, sort_keys=True, indent=2) + "\n"
    if out is not None:
        Path(out).write_text(text)
    return reports


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def curves_from_results(rows, task: str, metric: str = "accuracy") -> list[RateMetricCurve]:
    """Rate-metric curves per (codec, variant) from results.csv rows."""
    groups: dict = {}
    for r in rows:
        if r["task"] == task and r["metric"] == metric and r["codec"] != "none":
            groups.setdefault(f"{r['codec']}/{r['variant']}", []).append((float(r["bpp_mean"]), float(r["value"])))
    curves = []
    for label, pts in sorted(groups.items()):
        try:
            curves.append(build_curve(pts, label))
        except AnalysisError:
            continue
    return curves
