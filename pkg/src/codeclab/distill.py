"""Feature distillation of the conditioned encoder against a frozen teacher.

The student sees the decoded (compressed) image together with its codec
condition; the target is the teacher's feature map of the clean image.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .codecs import NUM_CODECS, NUM_LEVELS, CODEC_NAMES, decode, load_artifact, read_png
from .encoder import ADAPTOR_PARAMS, EncoderWeights, as_tensors, extract_patches, forward

TRAINABLE_SETS = ("adaptor", "full")


class CoverageError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 7
    trainable: str = "full"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    holdout_fraction: float = 0.125

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.trainable not in TRAINABLE_SETS:
            raise ValueError(f"trainable must be one of {TRAINABLE_SETS}")

    def param_names(self, weights: EncoderWeights) -> tuple[str, ...]:
        return ADAPTOR_PARAMS if self.trainable == "adaptor" else tuple(weights.names())


@dataclass(frozen=True)
class TrainRecord:
    step: int
    loss: float
    seconds: float = field(compare=False)

    def __post_init__(self):
        if not np.isfinite(self.loss) or self.loss < 0:
            raise TrainingError(f"step {self.step}: loss {self.loss} is not a finite non-negative number")


def distill_loss(student, teacher) -> ag.Tensor:
    """Mean squared difference of two feature maps (arrays or tensors)."""
    s = student if isinstance(student, ag.Tensor) else ag.tensor(student)
    t = teacher if isinstance(teacher, ag.Tensor) else ag.tensor(teacher, dtype=s.dtype)
    return ag.mse(s, t)


class Adam:
    def __init__(self, names, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.names = tuple(names)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def update(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = dict(params)
        for k in self.names:
            g = grads[k]
            m = self.beta1 * self.m.get(k, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(k, 0.0) + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            out[k] = (params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(params[k].dtype)
        return out


def loss_and_grads(student: EncoderWeights, patches: np.ndarray, cond_idx, targets: np.ndarray,
                   names) -> tuple[float, dict]:
    """Batch distillation loss and its gradients w.r.t. ``names``."""
    tw = as_tensors(student, names)
    with ag.Tape() as tape:
        feats = forward(tw, student.config, patches, cond_idx)
        loss = distill_loss(feats, ag.Tensor(np.asarray(targets, dtype=student.dtype)))
        grads = ag.backward(loss, [tw[k] for k in names], tape)
    return loss.item(), dict(zip(names, grads))


def train_step(student: EncoderWeights, patches: np.ndarray, cond_idx, targets: np.ndarray,
               optimizer: Adam) -> tuple[EncoderWeights, float]:
    """One Adam step on the batch loss.  Returns new weights; the inputs are not modified."""
    if len(patches) == 0:
        raise TrainingError("empty batch")
    try:
        loss, grads = loss_and_grads(student, patches, cond_idx, targets, optimizer.names)
    except ag.NonFiniteError as exc:
        raise TrainingError(f"non-finite value during step {optimizer.t + 1}: {exc}") from exc
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss at step {optimizer.t + 1}")
    if all(not np.any(g) for g in grads.values()):
        # exact optimum on this batch: leave weights (and optimizer moments) untouched
        return student, loss
    return EncoderWeights(student.config, optimizer.update(student.params, grads)), loss


# ---------------------------------------------------------------- data

@dataclass
class DistillSet:
    """Clean/compressed patch tensors for distillation.

    ``compressed[i, c]`` holds the patches of image ``i`` under condition slot
    ``c``; ``present[i, c]`` marks which pairs exist.
    """

    clean: np.ndarray  # (I, N, P)
    compressed: np.ndarray  # (I, C, N, P)
    present: np.ndarray  # (I, C) bool
    num_codecs: int = NUM_CODECS
    num_levels: int = NUM_LEVELS

    def check_coverage(self):
        have = self.present.any(axis=0).reshape(self.num_codecs, self.num_levels)
        if have.all():
            return
        missing_codecs = [c for c in range(self.num_codecs) if not have[c].any()]
        parts = [f"codec {c} ({CODEC_NAMES[c]}) absent" for c in missing_codecs]
        parts += [f"codec {c} level {lv} absent" for c in range(self.num_codecs) if c not in missing_codecs
                  for lv in range(self.num_levels) if not have[c, lv]]
        raise CoverageError("condition coverage gap: " + "; ".join(parts))

    def split(self, holdout_fraction: float):
        n = len(self.clean)
        k = int(round(n * holdout_fraction))
        cut = n - k
        part = lambda sl: DistillSet(self.clean[sl], self.compressed[sl], self.present[sl],  # noqa: E731
                                     self.num_codecs, self.num_levels)
        return part(slice(0, cut)), part(slice(cut, n))


def build_distill_set(images, compressed: dict, patch: int = 8,
                      num_codecs: int = NUM_CODECS, num_levels: int = NUM_LEVELS) -> DistillSet:
    """``compressed`` maps (image index, codec_id, level) -> decoded RawImage."""
    clean = extract_patches(list(images), patch)
    C = num_codecs * num_levels
    comp = np.zeros((len(clean), C) + clean.shape[1:], dtype=clean.dtype)
    present = np.zeros((len(clean), C), dtype=bool)
    for (i, codec_id, level), img in compressed.items():
        c = codec_id * num_levels + level
        comp[i, c] = extract_patches([img], patch)[0]
        present[i, c] = True
    return DistillSet(clean, comp, present, num_codecs, num_levels)


def read_manifest(path) -> list[dict]:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise ValueError("corpus manifest must be a JSON list")
    base = Path(path).parent
    out = []
    for e in entries:
        missing = {"image_path", "codec_id", "level", "artifact_path"} - set(e)
        if missing:
            raise ValueError(f"manifest entry {e} lacks {sorted(missing)}")
        out.append({"image_path": str(base / e["image_path"]), "codec_id": int(e["codec_id"]),
                    "level": int(e["level"]), "artifact_path": str(base / e["artifact_path"])})
    return out


def distill_set_from_manifest(path, patch: int = 8) -> DistillSet:
    entries = read_manifest(path)
    order = sorted({e["image_path"] for e in entries})
    pos = {p: i for i, p in enumerate(order)}
    images = [read_png(p) for p in order]
    compressed = {(pos[e["image_path"]], e["codec_id"], e["level"]): decode(load_artifact(e["artifact_path"]))
                  for e in entries}
    return build_distill_set(images, compressed, patch)


# ---------------------------------------------------------------- training

def teacher_features(teacher: EncoderWeights, clean: np.ndarray, chunk: int = 64) -> np.ndarray:
    tw = as_tensors(teacher)
    parts = [forward(tw, teacher.config, clean[i:i + chunk], [-1] * len(clean[i:i + chunk])).numpy()
             for i in range(0, len(clean), chunk)]
    return np.concatenate(parts).astype(teacher.dtype)


def heldout_loss(student: EncoderWeights, data: DistillSet, targets: np.ndarray, chunk: int = 64) -> float:
    """Mean distillation loss over every present (image, condition) pair."""
    ii, cc = np.nonzero(data.present)
    tw = as_tensors(student)
    total, count = 0.0, 0
    for s in range(0, len(ii), chunk):
        i, c = ii[s:s + chunk], cc[s:s + chunk]
        feats = forward(tw, student.config, data.compressed[i, c], c.tolist()).numpy()
        total += float(((feats.astype(np.float64) - targets[i]) ** 2).mean(axis=(1, 2)).sum())
        count += len(i)
    return total / max(count, 1)


def sample_batch(rng: np.random.Generator, present: np.ndarray, batch_size: int):
    """Uniform over conditions, then uniform over images having that condition."""
    conds = np.flatnonzero(present.any(axis=0))
    c = rng.choice(conds, size=batch_size)
    i = np.array([rng.choice(np.flatnonzero(present[:, ci])) for ci in c])
    return i, c


@dataclass
class TrainResult:
    weights: EncoderWeights
    records: list
    initial_heldout: float
    final_heldout: float


def train_adaptor(teacher: EncoderWeights, data: DistillSet, config: TrainConfig = TrainConfig(),
                  student: EncoderWeights | None = None, log=None) -> TrainResult:
    """Distill a conditioned student from ``teacher`` on ``data``.

    The student starts as a copy of the teacher (identity start) unless given.
    """
    data.check_coverage()
    teacher_bytes = teacher.to_bytes()
    student = (student or teacher).copy()
    train, held = data.split(config.holdout_fraction)
    if not train.present.any():
        raise CoverageError("no training pairs left after the hold-out split")
    t_train = teacher_features(teacher, train.clean)
    t_held = teacher_features(teacher, held.clean).astype(np.float64) if len(held.clean) else None
    initial = heldout_loss(student, held, t_held) if t_held is not None else float("nan")

    names = config.param_names(student)
    opt = Adam(names, config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    records = []
    t0 = time.perf_counter()
    for step in range(1, config.steps + 1):
        i, c = sample_batch(rng, train.present, config.batch_size)
        student, loss = train_step(student, train.compressed[i, c], c.tolist(), t_train[i], opt)
        records.append(TrainRecord(step, loss, time.perf_counter() - t0))
        if log is not None and (step % 100 == 0 or step == config.steps):
            log(f"step {step:5d}  loss {loss:.5f}")
    final = heldout_loss(student, held, t_held) if t_held is not None else float("nan")
    if teacher.to_bytes() != teacher_bytes:
        raise TrainingError("teacher weights changed during training")
    return TrainResult(student, records, initial, final)


def write_train_log(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "seconds"])
        for r in records:
            w.writerow([r.step, repr(float(r.loss)), f"{r.seconds:.4f}"])


# ---------------------------------------------------------------- gradient check

def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g[:, None, :] + b[:, None, :]


def stacked_forward(params: dict, config, patches: np.ndarray, cond: int) -> np.ndarray:
    """Plain-numpy encoder for one image under K weight copies at once.

    Every entry of ``params`` carries a leading copy axis of extent K or 1.
    ``patches`` is (N, patch_dim).  Returns (K, N, d).  Written independently
    of the autograd forward pass so each can check the other.
    """
    N = patches.shape[0]
    d, H = config.d, config.heads
    dh = d // H
    p = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def lin(x, w, b):
        return np.matmul(x, p[w]) + p[b][:, None, :]

    inv_freq = config.rope_base ** (-2.0 * np.arange(d // 2) / d)
    base = np.arange(N)[:, None] * inv_freq[None, :]
    if cond >= 0:
        off = np.matmul(p["cond_table"][:, cond][:, None, :], p["cond_proj"])[:, 0]
    else:
        off = np.zeros((1, d // 2))
    qa = base[None] + off[:, None, :]
    ka = base[None]

    def rot(x, a):
        c, s = np.cos(a), np.sin(a)
        x0, x1 = x[..., 0::2], x[..., 1::2]
        y = np.stack([x0 * c - x1 * s, x0 * s + x1 * c], axis=-1)
        return y.reshape(y.shape[:-2] + (-1,))

    def split(t):
        return t.reshape(t.shape[0], N, H, dh).transpose(0, 2, 1, 3)

    x = lin(patches[None].astype(np.float64), "patch_w", "patch_b")
    for b in range(config.depth):
        q = f"b{b}."
        h = _ln(x, p[q + "ln1_g"], p[q + "ln1_b"])
        qq = split(rot(lin(h, q + "wq", q + "bq"), qa))
        kk = split(rot(lin(h, q + "wk", q + "bk"), ka))
        vv = split(lin(h, q + "wv", q + "bv"))
        s = qq @ kk.transpose(0, 1, 3, 2) / np.sqrt(dh)
        s = np.exp(s - s.max(axis=-1, keepdims=True))
        att = s / s.sum(axis=-1, keepdims=True)
        o = (att @ vv).transpose(0, 2, 1, 3).reshape(-1, N, d)
        x = x + lin(o, q + "wo", q + "bo")
        h = _gelu(lin(_ln(x, p[q + "ln2_g"], p[q + "ln2_b"]), q + "w1", q + "b1"))
        x = x + lin(h, q + "w2", q + "b2")
    return _ln(x, p["lnf_g"], p["lnf_b"])


def distill_grad_check(student: EncoderWeights, patches: np.ndarray, cond: int, target: np.ndarray,
                       names=None, eps: float = 1e-5, chunk: int = 256, coords: dict | None = None) -> dict:
    """Central-difference check of the 1-image distillation-loss gradient at float64.

    Returns ``name -> max |g_ad - g_fd| / max(1, |g_ad|)`` over the checked
    coordinates (all of them unless ``coords[name]`` lists flat indices).
    """
    student = student.copy(np.float64)
    names = tuple(names or student.names())
    target = np.asarray(target, dtype=np.float64)
    _, grads = loss_and_grads(student, patches[None], [cond], target[None], names)
    shared = {k: v[None] for k, v in student.params.items()}
    out = {}
    for name in names:
        w = student.params[name].ravel()
        idx = np.arange(w.size) if coords is None or name not in coords else np.asarray(coords[name])
        g_ad = grads[name].ravel()[idx]
        g_fd = np.empty(len(idx))
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            k = len(part)
            stack = np.repeat(w[None], 2 * k, axis=0)
            stack[np.arange(k), part] += eps
            stack[k + np.arange(k), part] -= eps
            trial = dict(shared)
            trial[name] = stack.reshape((2 * k,) + student.params[name].shape)
            feats = stacked_forward(trial, student.config, patches, cond)
            losses = ((feats - target[None]) ** 2).mean(axis=(1, 2))
            g_fd[s:s + k] = (losses[:k] - losses[k:]) / (2 * eps)
        out[name] = float(np.max(np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_ad)))) if len(idx) else 0.0
    return out
