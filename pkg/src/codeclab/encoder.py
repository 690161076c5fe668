"""Toy ViT with rotary position phases and a codec-conditioned phase offset.

The condition enters as a learned per-pair phase offset added to the rotary
angles of the *queries*.  Keys keep the plain angles, so the offset acts as a
condition-dependent relative phase in every attention score.  (A common
offset on both queries and keys would cancel in q.k.)

With a zero offset (zero table, zero projection, or the identity condition)
the conditioned encoder computes exactly what the plain encoder computes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .codecs import NUM_CODECS, NUM_LEVELS, CodecCondition, RawImage

ADAPTOR_PARAMS = ("cond_table", "cond_proj")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    patch: int = 8
    d: int = 64
    heads: int = 4
    depth: int = 2
    m: int = NUM_CODECS
    n: int = NUM_LEVELS
    channels: int = 1
    mlp_hidden: int = 256
    rope_base: int = 10000

    def __post_init__(self):
        if self.d % (2 * self.heads):
            raise ConfigError(f"d={self.d} must be divisible by 2*heads={2 * self.heads}")
        if min(self.patch, self.d, self.heads, self.depth, self.m, self.n, self.mlp_hidden) < 1:
            raise ConfigError("config extents must be positive")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")

    @property
    def num_conditions(self) -> int:
        return self.m * self.n

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Parameter names and shapes in checkpoint order."""
        d, h = self.d, self.mlp_hidden
        out = [("patch_w", (self.patch_dim, d)), ("patch_b", (d,))]
        for b in range(self.depth):
            out += [
                (f"b{b}.ln1_g", (d,)), (f"b{b}.ln1_b", (d,)),
                (f"b{b}.wq", (d, d)), (f"b{b}.bq", (d,)),
                (f"b{b}.wk", (d, d)), (f"b{b}.bk", (d,)),
                (f"b{b}.wv", (d, d)), (f"b{b}.bv", (d,)),
                (f"b{b}.wo", (d, d)), (f"b{b}.bo", (d,)),
                (f"b{b}.ln2_g", (d,)), (f"b{b}.ln2_b", (d,)),
                (f"b{b}.w1", (d, h)), (f"b{b}.b1", (h,)),
                (f"b{b}.w2", (h, d)), (f"b{b}.b2", (d,)),
            ]
        out += [("lnf_g", (d,)), ("lnf_b", (d,)),
                ("cond_table", (self.num_conditions, d)), ("cond_proj", (d, d // 2))]
        return out


@dataclass
class EncoderWeights:
    config: EncoderConfig
    params: dict  # name -> ndarray, in config.shapes() order

    def __post_init__(self):
        for name, shape in self.config.shapes():
            arr = self.params.get(name)
            if arr is None or arr.shape != shape:
                raise ConfigError(f"parameter {name}: expected shape {shape}, got "
                                  f"{None if arr is None else arr.shape}")
            if not np.isfinite(arr).all():
                raise ag.NonFiniteError(f"parameter {name} is not finite")

    def __getitem__(self, name):
        return self.params[name]

    @property
    def dtype(self):
        return self.params["patch_w"].dtype

    def copy(self, dtype=None) -> "EncoderWeights":
        dtype = dtype or self.dtype
        return EncoderWeights(self.config, {k: np.array(v, dtype=dtype) for k, v in self.params.items()})

    def replace(self, **updates) -> "EncoderWeights":
        new = self.copy()
        for k, v in updates.items():
            new.params[k.replace("__", ".")] = np.array(v, dtype=self.dtype)
        return EncoderWeights(self.config, new.params)

    def names(self) -> list[str]:
        return [n for n, _ in self.config.shapes()]

    def to_bytes(self) -> bytes:
        return save_checkpoint_bytes(self)

    def equal(self, other: "EncoderWeights") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.params[k], other.params[k]) for k in self.names())


def init_weights(config: EncoderConfig = EncoderConfig(), seed: int = 0, dtype=np.float32,
                 zero_table: bool = False) -> EncoderWeights:
    """Seeded random init.  The phase projection starts at zero, so every
    condition initially leaves the encoder unchanged; the table starts random
    (a zero table too would leave both adaptor gradients identically zero)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in config.shapes():
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            arr = np.ones(shape)
        elif leaf.endswith("_b") and leaf.startswith("ln"):
            arr = np.zeros(shape)
        elif name == "cond_proj" or (name == "cond_table" and zero_table):
            arr = np.zeros(shape)
        elif name == "cond_table":
            arr = rng.normal(0.0, 1.0, shape)
        elif len(shape) == 2:
            arr = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
        else:
            arr = rng.normal(0.0, 0.1, shape)
        params[name] = arr.astype(dtype)
    return EncoderWeights(config, params)


def zero_adaptor(weights: EncoderWeights) -> EncoderWeights:
    """Copy of ``weights`` with condition table and phase projection zeroed."""
    return weights.replace(**{k: np.zeros_like(weights[k]) for k in ADAPTOR_PARAMS})


# ---------------------------------------------------------------- front end

def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, RawImage) else np.asarray(img)


def extract_patches(images, patch: int) -> np.ndarray:
    """(B, N, patch*patch*C) float64 in [0, 1]; patches in raster order, each
    flattened row-major over (row, col, channel)."""
    px = np.stack([_pixels(im) for im in images]) if isinstance(images, (list, tuple)) else np.asarray(images)
    if px.ndim == 3:
        px = px[..., None]
    b, h, w, c = px.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {w}x{h} is not divisible by patch {patch}")
    p = px.reshape(b, h // patch, patch, w // patch, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return p.reshape(b, (h // patch) * (w // patch), patch * patch * c).astype(np.float64) / 255.0


def patchify(img, weights: EncoderWeights) -> np.ndarray:
    """Patch tokens of one image: flattened patches projected to d."""
    cfg = weights.config
    pt = extract_patches([img], cfg.patch)[0].astype(weights.dtype)
    if pt.shape[1] != cfg.patch_dim:
        raise ConfigError(f"image has {pt.shape[1] // cfg.patch ** 2} channels, config expects {cfg.channels}")
    return pt @ weights["patch_w"] + weights["patch_b"]


# ---------------------------------------------------------------- conditioning

def condition_index(cond, config: EncoderConfig) -> int:
    """One-hot slot of a condition; -1 for the identity condition (None)."""
    if cond is None:
        return -1
    if isinstance(cond, CodecCondition):
        codec_id, level = cond.codec_id, cond.level
    else:
        codec_id, level = cond
    if not (0 <= codec_id < config.m and 0 <= level < config.n):
        raise IndexError(f"condition ({codec_id}, {level}) outside {config.m}x{config.n} grid")
    return codec_id * config.n + level


def condition_embed(cond, table: np.ndarray, config: EncoderConfig = EncoderConfig()) -> np.ndarray:
    idx = condition_index(cond, config)
    if idx < 0:
        return np.zeros(table.shape[1], dtype=table.dtype)
    return table[idx].copy()


def rope_angles(num_positions: int, d: int, base: float = 10000.0) -> np.ndarray:
    """Plain rotary angles, shape (num_positions, d/2): p * base**(-2i/d)."""
    inv_freq = base ** (-2.0 * np.arange(d // 2) / d)
    return np.arange(num_positions)[:, None] * inv_freq[None, :]


def conditional_rope_angles(position, c_emb: np.ndarray, proj: np.ndarray, base: float = 10000.0) -> np.ndarray:
    """Rotary angles at ``position`` plus the condition offset c_emb @ proj."""
    d = proj.shape[0]
    inv_freq = base ** (-2.0 * np.arange(d // 2) / d)
    return position * inv_freq + np.asarray(c_emb) @ proj


# ---------------------------------------------------------------- forward pass

def as_tensors(weights: EncoderWeights, trainable=()) -> dict:
    return {k: ag.Tensor(np.array(v), requires_grad=k in trainable) for k, v in weights.params.items()}


def forward(tw: dict, config: EncoderConfig, patches: np.ndarray, cond_idx) -> ag.Tensor:
    """Batched encoder on autograd tensors.

    ``patches``: (B, N, patch_dim) array; ``cond_idx``: B one-hot slots, -1 = identity.
    Returns a (B, N, d) tensor.
    """
    dtype = tw["patch_w"].dtype
    B, N, P = patches.shape
    d, H = config.d, config.heads
    dh = d // H
    if P != config.patch_dim:
        raise ConfigError(f"patch dim {P} does not match config {config.patch_dim}")

    def lin(x, w, b):
        return ag.bias_add(ag.matmul(x, tw[w]), tw[b])

    def heads(t):
        t = ag.reshape(t, (B, N, H, dh))
        return ag.reshape(ag.transpose(t, (0, 2, 1, 3)), (B * H, N, dh))

    base = np.broadcast_to(rope_angles(N, d, config.rope_base), (B, N, d // 2)).astype(dtype)
    c_emb = ag.take_rows(tw["cond_table"], cond_idx)
    offset = ag.reshape(ag.matmul(c_emb, tw["cond_proj"]), (B, 1, d // 2))
    q_angles = ag.add(ag.Tensor(base.copy()), ag.repeat(offset, N, axis=1))
    k_angles = ag.Tensor(base.copy())
    scale = 1.0 / np.sqrt(dh)

    x = lin(ag.Tensor(patches.reshape(B * N, P).astype(dtype)), "patch_w", "patch_b")
    for b in range(config.depth):
        p = f"b{b}."
        h = ag.layernorm(x, tw[p + "ln1_g"], tw[p + "ln1_b"])
        q = ag.rotate_pairs(ag.reshape(lin(h, p + "wq", p + "bq"), (B, N, d)), q_angles)
        k = ag.rotate_pairs(ag.reshape(lin(h, p + "wk", p + "bk"), (B, N, d)), k_angles)
        v = ag.reshape(lin(h, p + "wv", p + "bv"), (B, N, d))
        qh, kh, vh = heads(q), heads(k), heads(v)
        att = ag.softmax(ag.mul(ag.matmul(qh, ag.transpose(kh, (0, 2, 1))), scale))
        o = ag.reshape(ag.matmul(att, vh), (B, H, N, dh))
        o = ag.reshape(ag.transpose(o, (0, 2, 1, 3)), (B * N, d))
        x = ag.add(x, lin(o, p + "wo", p + "bo"))
        h = ag.layernorm(x, tw[p + "ln2_g"], tw[p + "ln2_b"])
        h = ag.gelu(lin(h, p + "w1", p + "b1"))
        x = ag.add(x, lin(h, p + "w2", p + "b2"))
    x = ag.layernorm(x, tw["lnf_g"], tw["lnf_b"])
    return ag.reshape(x, (B, N, d))


def encode_batch(images, weights: EncoderWeights, conds) -> np.ndarray:
    """(B, N, d) features for a list of images, one condition (or None) each."""
    cfg = weights.config
    patches = extract_patches(images, cfg.patch)
    if patches.shape[2] != cfg.patch_dim:
        raise ConfigError(f"images do not match config with {cfg.channels} channel(s)")
    idx = [condition_index(c, cfg) for c in conds]
    return forward(as_tensors(weights), cfg, patches, idx).numpy()


def encode_features(img, weights: EncoderWeights, cond=None) -> np.ndarray:
    """FeatureMap of one image: (num_patches, d).  ``cond=None`` is the plain encoder."""
    return encode_batch([img], weights, [cond])[0]


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"CVEW"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sI9I")


def save_checkpoint_bytes(weights: EncoderWeights) -> bytes:
    c = weights.config
    head = _CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, c.patch, c.d, c.heads, c.depth,
                           c.m, c.n, c.channels, c.mlp_hidden, c.rope_base)
    body = b"".join(np.ascontiguousarray(weights[name], dtype="<f4").tobytes() for name in weights.names())
    return head + body


def load_checkpoint_bytes(blob: bytes, dtype=np.float32) -> EncoderWeights:
    if len(blob) < _CKPT_HEAD.size:
        raise ConfigError("checkpoint too short")
    magic, version, *fields = _CKPT_HEAD.unpack_from(blob)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise ConfigError(f"not a version-{CKPT_VERSION} encoder checkpoint")
    cfg = EncoderConfig(*fields)
    params, off = {}, _CKPT_HEAD.size
    for name, shape in cfg.shapes():
        n = int(np.prod(shape))
        if off + 4 * n > len(blob):
            raise ConfigError(f"checkpoint truncated in {name}")
        params[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).astype(dtype)
        off += 4 * n
    if off != len(blob):
        raise ConfigError(f"{len(blob) - off} trailing bytes in checkpoint")
    return EncoderWeights(cfg, params)


def save_checkpoint(weights: EncoderWeights, path) -> None:
    Path(path).write_bytes(save_checkpoint_bytes(weights))


def load_checkpoint(path, dtype=np.float32) -> EncoderWeights:
    return load_checkpoint_bytes(Path(path).read_bytes(), dtype)
