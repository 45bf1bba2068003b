"""Signal-processing primitives shared by the watermark embedders.

Everything here is pure and deterministic. The 4x4 SVD is a hand-rolled
one-sided Jacobi so that embedding results do not depend on the local
LAPACK build.
"""

from __future__ import annotations

import numpy as np

# ---------------------------------------------------------------------------
# 3x3 box blur (edge-replicated), used for residuals and pattern shaping


def box_blur3(img: np.ndarray) -> np.ndarray:
    """Mean over each 3x3 neighborhood of the first two axes.

    Borders are edge-replicated, so constant inputs stay exactly constant.
    Integer inputs are promoted to float64.
    """
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (img.ndim - 2)
    p = np.pad(img, pad, mode="edge")
    acc = (
        p[:-2, :-2] + p[:-2, 1:-1] + p[:-2, 2:]
        + p[1:-1, :-2] + p[1:-1, 1:-1] + p[1:-1, 2:]
        + p[2:, :-2] + p[2:, 1:-1] + p[2:, 2:]
    )
    return acc / 9.0


# ---------------------------------------------------------------------------
# Single-level 2-D Haar wavelet


def haar_dwt2(x: np.ndarray):
    """Split a H x W channel into (LL, LH, HL, HH), each H/2 x W/2.

    The 2x2 butterfly is orthonormal: sum of squared coefficients equals
    the sum of squared pixels.
    """
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"haar_dwt2 needs even dims, got {h}x{w}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a - b + c - d) / 2.0
    hl = (a + b - c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return ll, lh, hl, hh


def haar_idwt2(ll, lh, hl, hh) -> np.ndarray:
    """Exact inverse of :func:`haar_dwt2`."""
    a = (ll + lh + hl + hh) / 2.0
    b = (ll - lh + hl - hh) / 2.0
    c = (ll + lh - hl - hh) / 2.0
    d = (ll - lh - hl + hh) / 2.0
    h2, w2 = ll.shape[-2:]
    out = np.empty(ll.shape[:-2] + (2 * h2, 2 * w2), dtype=a.dtype)
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


# ---------------------------------------------------------------------------
# Orthonormal 4x4 DCT-II


def _dct4_matrix() -> np.ndarray:
    k = np.arange(4)[:, None]
    n = np.arange(4)[None, :]
    c = np.cos(np.pi * (2 * n + 1) * k / 8.0)
    c[0, :] *= np.sqrt(1.0 / 4.0)
    c[1:, :] *= np.sqrt(2.0 / 4.0)
    return c


_DCT4 = _dct4_matrix()


def dct2_4x4(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of 4x4 blocks (batched over leading axes)."""
    return _DCT4 @ block @ _DCT4.T


def idct2_4x4(coef: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2_4x4` (transpose transform)."""
    return _DCT4.T @ coef @ _DCT4


# ---------------------------------------------------------------------------
# 4x4 SVD via one-sided Jacobi

_JACOBI_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_JACOBI_MAX_SWEEPS = 30
_JACOBI_TOL = 1e-14


def svd4_batch(mats: np.ndarray):
    """Batched SVD of [N, 4, 4] matrices: returns (U, S, V), M = U @ diag(S) @ V^T.

    One-sided Jacobi rotations orthogonalize the columns; sweeps run until
    every pairwise column correlation is below tolerance (capped). Singular
    values come back sorted descending and nonnegative.
    """
    a = np.array(mats, dtype=np.float64, copy=True)
    if a.ndim != 3 or a.shape[-2:] != (4, 4):
        raise ValueError("svd4_batch expects [N, 4, 4]")
    n = a.shape[0]
    v = np.broadcast_to(np.eye(4), a.shape).copy()

    for _ in range(_JACOBI_MAX_SWEEPS):
        worst = 0.0
        for (p, q) in _JACOBI_PAIRS:
            ap = a[:, :, p]
            aq = a[:, :, q]
            alpha = np.einsum("ni,ni->n", ap, ap)
            beta = np.einsum("ni,ni->n", aq, aq)
            gamma = np.einsum("ni,ni->n", ap, aq)
            scale = np.sqrt(alpha * beta)
            rotate = np.abs(gamma) > _JACOBI_TOL * scale
            if not rotate.any():
                continue
            worst = max(worst, float(np.max(np.abs(gamma[rotate]) / scale[rotate])))
            safe_gamma = np.where(rotate, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * safe_gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(zeta == 0.0, 1.0, t)  # alpha == beta: rotate by 45 degrees
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(rotate, c, 1.0)[:, None]
            s = np.where(rotate, s, 0.0)[:, None]
            new_p = c * ap - s * aq
            new_q = s * ap + c * aq
            a[:, :, p] = new_p
            a[:, :, q] = new_q
            vp = v[:, :, p].copy()
            vq = v[:, :, q]
            v[:, :, p] = c * vp - s * vq
            v[:, :, q] = s * vp + c * vq
        if worst <= _JACOBI_TOL:
            break

    sing = np.sqrt(np.einsum("nij,nij->nj", a, a))
    order = np.argsort(-sing, axis=1, kind="stable")
    sing = np.take_along_axis(sing, order, axis=1)
    a = np.take_along_axis(a, order[:, None, :], axis=2)
    v = np.take_along_axis(v, order[:, None, :], axis=2)

    safe = np.where(sing > 0.0, sing, 1.0)
    u = a / safe[:, None, :]
    # Complete columns for exactly-rank-deficient inputs (e.g. zero blocks).
    deficient = np.nonzero((sing <= 0.0).any(axis=1))[0]
    for i in deficient:
        for j in range(4):
            if sing[i, j] > 0.0:
                continue
            for cand in range(4):
                e = np.zeros(4)
                e[cand] = 1.0
                e -= u[i] @ (u[i].T @ e)
                norm = np.linalg.norm(e)
                if norm > 1e-8:
                    u[i, :, j] = e / norm
                    break
    return u, sing, v


def svd_4x4(m: np.ndarray):
    """SVD of one 4x4 matrix; see :func:`svd4_batch`."""
    u, s, v = svd4_batch(np.asarray(m, dtype=np.float64)[None])
    return u[0], s[0], v[0]


# ---------------------------------------------------------------------------
# Color space (BT.601 full-range, float)

_RGB2YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YUV2RGB = np.array(
    [
        [1.0, 0.0, 1.402],
        [1.0, -0.344136, -0.714136],
        [1.0, 1.772, 0.0],
    ]
)
_YUV_OFFSET = np.array([0.0, 128.0, 128.0])


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """H x W x 3 RGB floats (0..255 range) to YUV (U, V centered at 128)."""
    return rgb.astype(np.float64) @ _RGB2YUV.T + _YUV_OFFSET


def yuv_to_rgb(yuv: np.ndarray) -> np.ndarray:
    return (yuv - _YUV_OFFSET) @ _YUV2RGB.T


def luminance(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an H x W x 3 array (float64)."""
    r = rgb.astype(np.float64)
    return 0.299 * r[..., 0] + 0.587 * r[..., 1] + 0.114 * r[..., 2]


# ---------------------------------------------------------------------------
# FFT helpers (numpy.fft does the transforms; these fix the bin geometry)


def fft_radius_grid(h: int, w: int) -> np.ndarray:
    """Integer radius of every DFT bin in the centered-spectrum sense."""
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    rad = np.hypot(fy[:, None], fx[None, :])
    return np.rint(rad).astype(np.int64)


def clamp_u8(x: np.ndarray) -> np.ndarray:
    """Round and clamp floats to the 0..255 byte range."""
    return np.clip(np.rint(x), 0.0, 255.0).astype(np.uint8)
