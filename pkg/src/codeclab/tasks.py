"""Synthetic corpus and linear-probe proxy tasks.

coarse-class: 8 classes = 4 silhouettes x {solid, striped} fill, one shape
              near the image centre.
fine-glyph:   a glyph from a 4-symbol alphabet in each image corner; the probe
              reads every slot from the mean of that corner's tokens.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codecs import CodecCondition, RawImage, decode, encode, write_png

SIZE = 64
SHAPES = ("disk", "square", "triangle", "ring")
FILLS = ("solid", "striped")
NUM_CLASSES = len(SHAPES) * len(FILLS)
GLYPHS = "+xo="
SLOTS = 4
SLOT_SIZE = 16
SPLITS = ("train", "probe", "eval")
SPLIT_FRACTIONS = (0.25, 0.375, 0.375)
MIN_PER_CLASS = 30
TASKS = ("coarse-class", "fine-glyph")


class CorpusError(ValueError):
    pass


class TaskError(ValueError):
    pass


def _glyph_bitmap(ch: str, n: int = 12) -> np.ndarray:
    y, x = np.mgrid[0:n, 0:n]
    c = (n - 1) / 2
    if ch == "+":
        m = (abs(x - c) <= 1) | (abs(y - c) <= 1)
    elif ch == "x":
        m = (abs(x - y) <= 1) | (abs(x + y - (n - 1)) <= 1)
    elif ch == "o":
        r = np.hypot(x - c, y - c)
        m = (r >= c - 2) & (r <= c)
    elif ch == "=":
        m = (abs(y - n * 0.3) <= 1) | (abs(y - n * 0.7) <= 1)
    else:
        raise ValueError(ch)
    return m


_GLYPH_MASKS = {g: _glyph_bitmap(g) for g in GLYPHS}


def _shape_mask(kind: str, cy: float, cx: float, s: float) -> np.ndarray:
    y, x = np.mgrid[0:SIZE, 0:SIZE] + 0.5
    dy, dx = y - cy, x - cx
    if kind == "disk":
        return np.hypot(dx, dy) <= s
    if kind == "ring":
        r = np.hypot(dx, dy)
        return (r <= s) & (r >= 0.55 * s)
    if kind == "square":
        return (abs(dx) <= 0.85 * s) & (abs(dy) <= 0.85 * s)
    if kind == "triangle":
        # apex up, base at cy + 0.8 s
        return (dy <= 0.8 * s) & (dy >= -s + 2.0 * abs(dx))
    raise ValueError(kind)


def render_image(cls: int, glyphs: str, rng: np.random.Generator) -> np.ndarray:
    shape, fill = SHAPES[cls // len(FILLS)], FILLS[cls % len(FILLS)]
    y, x = np.mgrid[0:SIZE, 0:SIZE] / SIZE
    g0, gy, gx = rng.uniform(50, 90), rng.uniform(-20, 20), rng.uniform(-20, 20)
    img = g0 + gy * y + gx * x + rng.normal(0, 2.0, size=(SIZE, SIZE))

    s = rng.uniform(10, 14)
    cy, cx = SIZE / 2 + rng.uniform(-3, 3, size=2)
    mask = _shape_mask(shape, cy, cx, s)
    fg = rng.uniform(180, 230)
    if fill == "striped":
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(5.0, 7.0)
        yy, xx = np.mgrid[0:SIZE, 0:SIZE]
        stripes = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period
                         + rng.uniform(0, 2 * np.pi)) > 0
        img[mask & stripes] = fg
    else:
        img[mask] = fg

    corners = ((0, 0), (0, SIZE - SLOT_SIZE), (SIZE - SLOT_SIZE, 0), (SIZE - SLOT_SIZE, SIZE - SLOT_SIZE))
    for ch, (oy, ox) in zip(glyphs, corners):
        gm = _GLYPH_MASKS[ch]
        jy, jx = rng.integers(1, SLOT_SIZE - gm.shape[0], size=2)
        region = img[oy + jy:oy + jy + gm.shape[0], ox + jx:ox + jx + gm.shape[1]]
        region[gm] = rng.uniform(200, 240)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass
class SynthCorpus:
    seed: int
    images: list  # RawImage
    labels: np.ndarray  # coarse class per image
    glyphs: list  # glyph string per image
    split: np.ndarray  # index into SPLITS per image
    ids: np.ndarray | None = None  # position in the full corpus

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.images))

    def keys(self) -> frozenset:
        return frozenset((self.seed, int(i)) for i in self.ids)

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLITS.index(split))

    def subset(self, split: str) -> "SynthCorpus":
        idx = self.indices(split)
        return SynthCorpus(self.seed, [self.images[i] for i in idx], self.labels[idx],
                           [self.glyphs[i] for i in idx], self.split[idx], self.ids[idx])

    def glyph_labels(self) -> np.ndarray:
        """(num_images, SLOTS) glyph indices."""
        return np.array([[GLYPHS.index(c) for c in g] for g in self.glyphs], dtype=np.int64).reshape(-1, SLOTS)

    def __len__(self):
        return len(self.images)


def gen_synth_corpus(seed: int, count: int, fractions=SPLIT_FRACTIONS) -> SynthCorpus:
    """``count`` images, classes balanced, each image drawn from its own seeded stream."""
    if count < MIN_PER_CLASS * NUM_CLASSES:
        raise CorpusError(f"count {count} gives fewer than {MIN_PER_CLASS} images per class")
    per_class = count // NUM_CLASSES
    if per_class * NUM_CLASSES != count:
        raise CorpusError(f"count {count} is not a multiple of {NUM_CLASSES} classes")
    bounds = np.cumsum(np.round(np.asarray(fractions) * per_class).astype(int))
    images, labels, glyphs, split = [], [], [], []
    for i in range(count):
        cls, k = i % NUM_CLASSES, i // NUM_CLASSES
        rng = np.random.default_rng([seed, i])
        gl = "".join(GLYPHS[j] for j in rng.integers(0, len(GLYPHS), size=SLOTS))
        images.append(RawImage(render_image(cls, gl, rng)))
        labels.append(cls)
        glyphs.append(gl)
        split.append(int(np.searchsorted(bounds, k, side="right")))
    split = np.minimum(np.array(split), len(SPLITS) - 1)
    return SynthCorpus(seed, images, np.array(labels, dtype=np.int64), glyphs, split)


def compress_all(images, codec_id: int, level: int):
    """Encode and decode every image; returns (decoded images, bpp array)."""
    out, bpp = [], []
    for img in images:
        art = encode(img, codec_id, level)
        out.append(decode(art))
        bpp.append(art.bpp)
    return out, np.array(bpp)


def export_corpus(corpus: SynthCorpus, out_dir) -> Path:
    """PNG per image plus labels.csv (file, split, class, glyphs)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "split", "class", "glyphs"])
        for i, img in enumerate(corpus.images):
            name = f"img_{i:05d}.png"
            write_png(img, out / name)
            w.writerow([name, SPLITS[corpus.split[i]], int(corpus.labels[i]), corpus.glyphs[i]])
    return out / "labels.csv"


# ---------------------------------------------------------------- probing

@dataclass
class ProbeHead:
    weight: np.ndarray  # (features, classes)
    bias: np.ndarray
    mean: np.ndarray  # feature standardization fitted on the probe-fit split
    scale: np.ndarray
    iterations: int = 0
    fit_keys: frozenset = frozenset()  # (seed, id) of every image the head was fit on

    def logits(self, feats: np.ndarray) -> np.ndarray:
        return ((feats - self.mean) / self.scale) @ self.weight + self.bias

    def predict(self, feats: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum, i.e. ties go to the lowest class index
        return np.argmax(self.logits(feats), axis=1)

    def accuracy(self, feats: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(feats) == labels))


def fit_linear_probe(feats, labels, num_classes: int | None = None, seed: int = 0,
                     l2: float = 1e-3, tol: float = 1e-6, max_iter: int = 5000) -> ProbeHead:
    """Multinomial logistic regression by full-batch gradient descent."""
    x = np.asarray(feats, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise TaskError("probe needs at least two distinct classes")
    k = int(num_classes or y.max() + 1)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-8] = 1.0
    z = (x - mean) / scale
    n, f = z.shape
    onehot = np.eye(k)[y]
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1e-3, (f, k))
    b = np.log(onehot.mean(axis=0) + 1e-12)
    # step from the Lipschitz bound of the softmax cross-entropy
    lr = 1.0 / (0.5 * (np.linalg.norm(z, 2) ** 2 / n + 1.0) + l2)
    it = 0
    for it in range(1, max_iter + 1):
        logits = z @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        gl = (p - onehot) / n
        gw = z.T @ gl + l2 * w
        gb = gl.sum(axis=0)
        w -= lr * gw
        b -= lr * gb
        if max(np.abs(gw).max(), np.abs(gb).max()) < tol:
            break
    return ProbeHead(w, b, mean, scale, it)


def slot_token_index(grid: int = SIZE // 8, patch: int = 8) -> list[np.ndarray]:
    """Token indices covering each glyph slot (corner regions)."""
    per = SLOT_SIZE // patch
    rows = [range(0, per), range(grid - per, grid)]
    out = []
    for ry in rows:
        for rx in rows:
            out.append(np.array([y * grid + x for y in ry for x in rx]))
    return out


def task_features(features: np.ndarray, task: str) -> np.ndarray:
    """Pool (B, N, d) token features for a task.

    coarse-class -> (B, (grid/2)^2 * d) tokens of the central half of the grid,
                    concatenated (a global mean loses the silhouette).
    fine-glyph   -> (B * SLOTS, d) mean over each slot's tokens.
    """
    grid = int(round(np.sqrt(features.shape[1])))
    if task == "coarse-class":
        g = features.reshape(len(features), grid, grid, -1)
        q = grid // 4
        return g[:, q:grid - q, q:grid - q].reshape(len(features), -1)
    if task == "fine-glyph":
        idx = slot_token_index(grid)
        return np.stack([features[:, ix].mean(axis=1) for ix in idx], axis=1).reshape(-1, features.shape[2])
    raise TaskError(f"unknown task {task!r}")


def task_labels(corpus: SynthCorpus, task: str) -> np.ndarray:
    if task == "coarse-class":
        return corpus.labels
    if task == "fine-glyph":
        return corpus.glyph_labels().reshape(-1)
    raise TaskError(f"unknown task {task!r}")


def task_classes(task: str) -> int:
    return NUM_CLASSES if task == "coarse-class" else len(GLYPHS)


@dataclass
class TaskResult:
    task: str
    accuracy: float
    n: int
    correct: int = field(default=0)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise TaskError(f"accuracy {self.accuracy} outside [0, 1]")


def encoder_features(weights, images, cond=None, chunk: int = 128) -> np.ndarray:
    from .encoder import encode_batch
    parts = [encode_batch(images[i:i + chunk], weights, [cond] * len(images[i:i + chunk]))
             for i in range(0, len(images), chunk)]
    return np.concatenate(parts)


def fit_task_probe(weights, fit_corpus: SynthCorpus, task: str, seed: int = 0, **kw) -> ProbeHead:
    """Probe fit on uncompressed features (null condition) of ``weights``."""
    feats = task_features(encoder_features(weights, fit_corpus.images), task)
    head = fit_linear_probe(feats, task_labels(fit_corpus, task), task_classes(task), seed, **kw)
    head.fit_keys = fit_corpus.keys()
    return head


def score_probe(probe: ProbeHead, features: np.ndarray, corpus: SynthCorpus, task: str) -> TaskResult:
    """Accuracy of ``probe`` on pooled encoder ``features`` of ``corpus`` images."""
    if len(corpus) == 0:
        raise TaskError("evaluation split is empty")
    leaked = probe.fit_keys & corpus.keys()
    if leaked:
        raise TaskError(f"split leakage: {len(leaked)} eval images were used to fit the probe")
    labels = task_labels(corpus, task)
    correct = int(np.sum(probe.predict(task_features(features, task)) == labels))
    return TaskResult(task, correct / len(labels), len(labels), correct)


def eval_task(weights, probe: ProbeHead, corpus: SynthCorpus, task: str, codec=None,
              policy: str = "none", decoded=None) -> TaskResult:
    """Score ``probe`` on ``corpus`` images, optionally passed through ``codec``.

    codec:  None (uncompressed) or (codec_id, level).
    policy: "none" feeds the null condition (plain encoder); "true" feeds the
            actual (codec, level) condition.
    decoded: optional pre-decoded images matching ``corpus`` and ``codec``.
    """
    if len(corpus) == 0:
        raise TaskError("evaluation split is empty")
    if policy not in ("none", "true"):
        raise TaskError(f"unknown condition policy {policy!r}")
    images = corpus.images
    cond = None
    if codec is not None:
        images = decoded if decoded is not None else compress_all(corpus.images, *codec)[0]
        if policy == "true":
            cond = CodecCondition(*codec)
    return score_probe(probe, encoder_features(weights, images, cond), corpus, task)
