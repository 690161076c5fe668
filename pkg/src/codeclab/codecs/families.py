"""Bitstream bodies of the three surrogate codec families.

blocky  -- 8x8 DCT, quality-scaled JPEG luma table, zigzag, run-length,
           exp-Golomb.  Blocking artifacts.
latentq -- 4x box-filter downsample, uniform latent quantizer, DPCM +
           run-length, bilinear synthesis.  Smooth/blurred artifacts.
texgen  -- per-block mean and dominant orientation only; the decoder paints a
           seeded sinusoidal grating.  Plausible but invented detail.

Level parameters below are frozen after calibration on the standard corpus
(level 0 under 0.1 bpp, level 3 around 0.3 bpp, header included).
"""

from __future__ import annotations

import numpy as np

from .bitstream import BitReader, BitWriter, read_runs, read_sign_runs, write_runs, write_sign_runs
from .dct import ZIGZAG, dct_blocks, idct_blocks

JPEG_LUMA = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.float64).reshape(8, 8)

# IJG-style quality; values below 1 extend the scale past the baseline clip.
BLOCKY_QUALITY = (0.75, 1.5, 2.5, 4.0)
# Base step, then refinement steps; each at least half its predecessor so
# refinement symbols stay in {-1, 0, 1}.
LATENTQ_STEP = (128.0, 72.0, 40.0, 22.0)
# (block size, orientation bins, mean step, grating amplitude)
TEXGEN_PARAMS = ((8, 2, 48.0, 20.0), (8, 4, 32.0, 24.0), (8, 8, 20.0, 28.0), (4, 8, 16.0, 28.0))
TEXGEN_FLAT_STD = 10.0
TEXGEN_PERIOD = 4.0


def quant_table(quality: float) -> np.ndarray:
    """IJG quality scaling of the JPEG luminance table (no 8-bit upper clip)."""
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2 * quality
    return np.maximum(np.floor((JPEG_LUMA * scale + 50) / 100), 1)


def _to_blocks(plane: np.ndarray, b: int) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // b, b, w // b, b).swapaxes(1, 2)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    by, bx, b, _ = blocks.shape
    return blocks.swapaxes(1, 2).reshape(by * b, bx * b)


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- blocky

def encode_blocky(bw: BitWriter, plane: np.ndarray, level: int) -> None:
    table = quant_table(BLOCKY_QUALITY[level])
    coef = dct_blocks(_to_blocks(plane.astype(np.float64) - 128.0, 8))
    q = np.rint(coef / table).astype(np.int64).reshape(-1, 64)[:, ZIGZAG]
    prev_dc = 0
    for zz in q:
        bw.se(int(zz[0]) - prev_dc)
        prev_dc = int(zz[0])
        write_runs(bw, zz[1:])


def decode_blocky(br: BitReader, h: int, w: int, level: int) -> np.ndarray:
    table = quant_table(BLOCKY_QUALITY[level])
    n = (h // 8) * (w // 8)
    zz = np.zeros((n, 64), dtype=np.float64)
    dc = 0
    for i in range(n):
        dc += br.se()
        zz[i, 0] = dc
        zz[i, 1:] = read_runs(br, 63)
    q = np.empty_like(zz)
    q[:, ZIGZAG] = zz
    coef = q.reshape(h // 8, w // 8, 8, 8) * table
    return _to_u8(_from_blocks(idct_blocks(coef)) + 128.0)


# ---------------------------------------------------------------- latentq

def _upsample_matrix(n_out: int, factor: int) -> np.ndarray:
    """Bilinear interpolation weights (half-pixel centres, clamped edges)."""
    n_in = n_out // factor
    src = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def _dpcm(q: np.ndarray) -> np.ndarray:
    pred = np.zeros_like(q)
    pred[:, 1:] = q[:, :-1]
    pred[1:, 0] = q[:-1, 0]
    return q - pred


def encode_latentq(bw: BitWriter, plane: np.ndarray, level: int) -> None:
    # Embedded code: level L = base layer + L refinement layers, so the bit
    # count can only grow with level.
    latent = _to_blocks(plane.astype(np.float64), 4).mean(axis=(2, 3)) - 128.0
    q = np.rint(latent / LATENTQ_STEP[0]).astype(np.int64)
    write_runs(bw, _dpcm(q).ravel())
    recon = q * LATENTQ_STEP[0]
    for step in LATENTQ_STEP[1:level + 1]:
        q = np.rint((latent - recon) / step).astype(np.int64)
        write_sign_runs(bw, q.ravel())
        recon = recon + q * step


def decode_latentq(br: BitReader, h: int, w: int, level: int) -> np.ndarray:
    lh, lw = h // 4, w // 4
    r = np.array(read_runs(br, lh * lw), dtype=np.int64).reshape(lh, lw)
    q = np.zeros_like(r)
    for i in range(lh):
        q[i, 0] = r[i, 0] + (q[i - 1, 0] if i else 0)
        q[i, 1:] = q[i, 0] + np.cumsum(r[i, 1:])
    latent = q * LATENTQ_STEP[0]
    for step in LATENTQ_STEP[1:level + 1]:
        latent = latent + np.array(read_sign_runs(br, lh * lw), dtype=np.float64).reshape(lh, lw) * step
    return _to_u8(_upsample_matrix(h, 4) @ (latent + 128.0) @ _upsample_matrix(w, 4).T)


# ---------------------------------------------------------------- texgen

def _orientation(block: np.ndarray) -> float:
    """Dominant gradient direction in [0, pi) from the structure tensor."""
    gy, gx = np.gradient(block)
    sxx, syy, sxy = (gx * gx).sum(), (gy * gy).sum(), (gx * gy).sum()
    return float(np.mod(0.5 * np.arctan2(2 * sxy, sxx - syy), np.pi))


def encode_texgen(bw: BitWriter, plane: np.ndarray, level: int) -> None:
    b, bins, step, _ = TEXGEN_PARAMS[level]
    nbits = int(np.log2(bins))
    blocks = _to_blocks(plane.astype(np.float64), b)
    means = np.rint(blocks.mean(axis=(2, 3)) / step).astype(np.int64)
    stds = blocks.std(axis=(2, 3))
    res = _dpcm(means)
    for iy in range(blocks.shape[0]):
        for ix in range(blocks.shape[1]):
            bw.se(int(res[iy, ix]))
            textured = stds[iy, ix] > TEXGEN_FLAT_STD
            bw.put(int(textured), 1)
            if textured:
                theta = _orientation(blocks[iy, ix])
                bw.put(int(theta / np.pi * bins) % bins, nbits)


def _grating(b: int, theta: float, phase: float) -> np.ndarray:
    y, x = np.mgrid[0:b, 0:b].astype(np.float64)
    return np.sin(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / TEXGEN_PERIOD + phase)


def decode_texgen(br: BitReader, h: int, w: int, level: int) -> np.ndarray:
    b, bins, step, amp = TEXGEN_PARAMS[level]
    nbits = int(np.log2(bins))
    by, bx = h // b, w // b
    res = np.zeros((by, bx), dtype=np.int64)
    orient = np.full((by, bx), -1)
    for iy in range(by):
        for ix in range(bx):
            res[iy, ix] = br.se()
            if br.get(1):
                orient[iy, ix] = br.get(nbits)
    means = np.zeros_like(res)
    for iy in range(by):
        means[iy, 0] = res[iy, 0] + (means[iy - 1, 0] if iy else 0)
        means[iy, 1:] = means[iy, 0] + np.cumsum(res[iy, 1:])
    out = np.repeat(np.repeat(means * step, b, axis=0), b, axis=1).astype(np.float64)
    # Phases depend only on block position and level, so decoding is a pure function.
    rng = np.random.default_rng([level, h, w])
    phases = rng.uniform(0, 2 * np.pi, size=(by, bx))
    for iy in range(by):
        for ix in range(bx):
            k = orient[iy, ix]
            if k >= 0:
                theta = (k + 0.5) * np.pi / bins
                out[iy * b:(iy + 1) * b, ix * b:(ix + 1) * b] += amp * _grating(b, theta, phases[iy, ix])
    return _to_u8(out)


ENCODERS = (encode_blocky, encode_latentq, encode_texgen)
DECODERS = (decode_blocky, decode_latentq, decode_texgen)

