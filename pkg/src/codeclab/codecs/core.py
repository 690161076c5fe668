"""Image/artifact types, the ``.cga`` container and codec dispatch."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitstream import BitReader, BitWriter, CorruptPayload

CODEC_NAMES = ("blocky", "latentq", "texgen")
NUM_CODECS = len(CODEC_NAMES)
NUM_LEVELS = 4

MAGIC = b"CGA1"
# magic, codec_id, level, channels, reserved, width, height, payload bit count
_HEADER = struct.Struct("<4sBBBBHHI")
HEADER_BITS = 8 * _HEADER.size  # 128


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class RawImage:
    """8-bit image, stored as an (height, width, channels) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise CodecError(f"pixels must be HxW or HxWxC with C in (1, 3), got {px.shape}")
        if px.dtype != np.uint8:
            raise CodecError(f"pixels must be uint8, got {px.dtype}")
        if px.shape[0] % 8 or px.shape[1] % 8:
            raise CodecError(f"dimensions {px.shape[1]}x{px.shape[0]} are not multiples of 8")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.width, self.height, self.channels)

    def __eq__(self, other):
        return isinstance(other, RawImage) and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash(self.pixels.tobytes())


@dataclass(frozen=True)
class CompressedArtifact:
    codec_id: int
    level: int
    payload: bytes  # complete .cga bytes, header included
    bit_count: int  # header bits + entropy-coded bits, padding excluded
    source_dims: tuple[int, int, int]

    @property
    def bpp(self) -> float:
        return bits_per_pixel(self)

    @property
    def codec_name(self) -> str:
        return CODEC_NAMES[self.codec_id]


@dataclass(frozen=True)
class CodecCondition:
    """A (codec, level) pair; ``None`` stands for the identity (no codec) condition."""

    codec_id: int
    level: int
    num_codecs: int = NUM_CODECS
    num_levels: int = NUM_LEVELS

    def __post_init__(self):
        if not (0 <= self.codec_id < self.num_codecs and 0 <= self.level < self.num_levels):
            raise CodecError(f"condition ({self.codec_id}, {self.level}) outside "
                             f"{self.num_codecs}x{self.num_levels} grid")

    @property
    def index(self) -> int:
        return self.codec_id * self.num_levels + self.level


def _check_codec(codec_id: int, level: int):
    if codec_id not in range(NUM_CODECS):
        raise CodecError(f"invalid codec id {codec_id}")
    if level not in range(NUM_LEVELS):
        raise CodecError(f"invalid level {level}")


def encode(img: RawImage, codec_id: int, level: int) -> CompressedArtifact:
    from .families import ENCODERS

    _check_codec(codec_id, level)
    if not isinstance(img, RawImage):
        img = RawImage(np.asarray(img))
    bw = BitWriter()
    for ch in range(img.channels):
        ENCODERS[codec_id](bw, img.pixels[:, :, ch], level)
    nbits = len(bw)
    header = _HEADER.pack(MAGIC, codec_id, level, img.channels, 0, img.width, img.height, nbits)
    return CompressedArtifact(codec_id, level, header + bw.to_bytes(), HEADER_BITS + nbits, img.dims)


def parse_header(payload: bytes) -> tuple[int, int, int, int, int, int]:
    """Return (codec_id, level, width, height, channels, payload_bits)."""
    if len(payload) < _HEADER.size:
        raise CorruptPayload(f"payload of {len(payload)} bytes is shorter than the header")
    magic, codec_id, level, ch, _, w, h, nbits = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CorruptPayload(f"bad magic {magic!r}")
    if codec_id >= NUM_CODECS or level >= NUM_LEVELS or ch not in (1, 3) or w % 8 or h % 8 or not w or not h:
        raise CorruptPayload("header fields out of range")
    if len(payload) != _HEADER.size + (nbits + 7) // 8:
        raise CorruptPayload(f"payload length {len(payload)} does not match {nbits} coded bits")
    return codec_id, level, w, h, ch, nbits


def decode(art: CompressedArtifact | bytes) -> RawImage:
    from .families import DECODERS

    payload = art.payload if isinstance(art, CompressedArtifact) else bytes(art)
    codec_id, level, w, h, ch, nbits = parse_header(payload)
    br = BitReader(payload[_HEADER.size:], nbits)
    planes = [DECODERS[codec_id](br, h, w, level) for _ in range(ch)]
    if br.remaining:
        raise CorruptPayload(f"{br.remaining} unread bits after decoding")
    return RawImage(np.stack(planes, axis=2))


def artifact_from_bytes(payload: bytes) -> CompressedArtifact:
    codec_id, level, w, h, ch, nbits = parse_header(payload)
    return CompressedArtifact(codec_id, level, bytes(payload), HEADER_BITS + nbits, (w, h, ch))


def bits_per_pixel(art: CompressedArtifact) -> float:
    w, h, _ = art.source_dims
    return art.bit_count / (w * h)


def save_artifact(art: CompressedArtifact, path) -> None:
    Path(path).write_bytes(art.payload)


def load_artifact(path) -> CompressedArtifact:
    return artifact_from_bytes(Path(path).read_bytes())


def read_png(path) -> RawImage:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return RawImage(np.array(im, dtype=np.uint8))


def write_png(img: RawImage, path) -> None:
    from PIL import Image

    px = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    Image.fromarray(px).save(path, format="PNG", optimize=False)
