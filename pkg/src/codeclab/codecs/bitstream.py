"""Bit-level writer/reader with exp-Golomb codes."""

from __future__ import annotations


class CorruptPayload(ValueError):
    """Raised when a bitstream is truncated or its header does not match."""


class BitWriter:
    def __init__(self):
        self._bits: list[int] = []

    def __len__(self):
        return len(self._bits)

    def put(self, value: int, nbits: int):
        for i in range(nbits - 1, -1, -1):
            self._bits.append((value >> i) & 1)

    def ue(self, v: int):
        # order-0 exp-Golomb: v=0 -> "1", v=1 -> "010", ...
        v += 1
        n = v.bit_length()
        self._bits.extend([0] * (n - 1))
        self.put(v, n)

    def se(self, v: int):
        self.ue(2 * v - 1 if v > 0 else -2 * v)

    def rice(self, v: int, k: int):
        self._bits.extend([1] * (v >> k))
        self._bits.append(0)
        self.put(v & ((1 << k) - 1), k)

    def to_bytes(self) -> bytes:
        out = bytearray((len(self._bits) + 7) // 8)
        for i, b in enumerate(self._bits):
            if b:
                out[i >> 3] |= 0x80 >> (i & 7)
        return bytes(out)


class BitReader:
    def __init__(self, data: bytes, nbits: int):
        if nbits > 8 * len(data):
            raise CorruptPayload(f"payload holds {8 * len(data)} bits, header claims {nbits}")
        self._data = data
        self._n = nbits
        self.pos = 0

    def bit(self) -> int:
        if self.pos >= self._n:
            raise CorruptPayload("bitstream ended early")
        b = (self._data[self.pos >> 3] >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return b

    def get(self, nbits: int) -> int:
        v = 0
        for _ in range(nbits):
            v = (v << 1) | self.bit()
        return v

    def ue(self) -> int:
        zeros = 0
        while self.bit() == 0:
            zeros += 1
            if zeros > 32:
                raise CorruptPayload("exp-Golomb prefix too long")
        return ((1 << zeros) | self.get(zeros)) - 1

    def se(self) -> int:
        k = self.ue()
        return (k + 1) // 2 if k & 1 else -(k // 2)

    def rice(self, k: int) -> int:
        q = 0
        while self.bit():
            q += 1
        return (q << k) | self.get(k)

    @property
    def remaining(self) -> int:
        return self._n - self.pos


def write_runs(bw: BitWriter, values) -> None:
    """Code a symbol sequence as count of nonzeros, then (zero-run, value) pairs."""
    nz = [(i, int(v)) for i, v in enumerate(values) if v]
    bw.ue(len(nz))
    prev = -1
    for i, v in nz:
        bw.ue(i - prev - 1)
        bw.se(v)
        prev = i


def read_runs(br: BitReader, length: int) -> list[int]:
    out = [0] * length
    pos = -1
    for _ in range(br.ue()):
        pos += br.ue() + 1
        if pos >= length:
            raise CorruptPayload("run-length overflows block")
        out[pos] = br.se()
    return out


def _sign_runs(values):
    nz = [i for i, v in enumerate(values) if v]
    runs = [b - a - 1 for a, b in zip([-1] + nz[:-1], nz)]
    return nz, runs


def write_sign_runs(bw: BitWriter, values) -> None:
    """Code a sequence over {-1, 0, 1}: count, Rice parameter, then per nonzero a
    Rice-coded zero run and a sign bit."""
    values = [int(v) for v in values]
    if any(abs(v) > 1 for v in values):
        raise ValueError("sign-run coding needs values in {-1, 0, 1}")
    nz, runs = _sign_runs(values)
    k = min(range(4), key=lambda k: sum((r >> k) + 1 + k for r in runs))
    bw.ue(len(nz))
    bw.put(k, 2)
    for i, r in zip(nz, runs):
        bw.rice(r, k)
        bw.put(values[i] < 0, 1)


def read_sign_runs(br: BitReader, length: int) -> list[int]:
    out = [0] * length
    count = br.ue()
    k = br.get(2)
    pos = -1
    for _ in range(count):
        pos += br.rice(k) + 1
        if pos >= length:
            raise CorruptPayload("run-length overflows layer")
        out[pos] = -1 if br.bit() else 1
    return out
