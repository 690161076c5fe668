import numpy as np

N = 8


def _dct_matrix(n: int = N) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0] /= np.sqrt(2.0)
    return c


C8 = _dct_matrix()


def _check(block):
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (N, N):
        raise ValueError(f"expected an 8x8 block, got shape {block.shape}")
    return block


def block_dct8(block) -> np.ndarray:
    """Orthonormal 2-D DCT-II of one 8x8 block."""
    return C8 @ _check(block) @ C8.T


def block_idct8(coeffs) -> np.ndarray:
    return C8.T @ _check(coeffs) @ C8


def dct_blocks(blocks: np.ndarray) -> np.ndarray:
    """Vectorized forward transform over an (..., 8, 8) stack."""
    return C8 @ blocks @ C8.T


def idct_blocks(coeffs: np.ndarray) -> np.ndarray:
    return C8.T @ coeffs @ C8


def zigzag_order(n: int = N) -> np.ndarray:
    """Flat indices of an n x n block in JPEG zigzag order."""
    order = sorted(((i, j) for i in range(n) for j in range(n)),
                   key=lambda p: (p[0] + p[1], p[0] if (p[0] + p[1]) % 2 else p[1]))
    return np.array([i * n + j for i, j in order])


ZIGZAG = zigzag_order()
