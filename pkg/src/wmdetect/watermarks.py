"""Keyed invisible watermark embedders and their decoders/detectors.

Four families cover the signal types a dataset auditor meets in practice:

- ``lsb``:  64-bit message in the least significant bit plane
- ``dds``:  message in the top singular values of 4x4 DCT blocks of the
            DWT low-band of the U chroma channel (quantization index
            modulation, step ``delta``)
- ``ss``:   keyed spread-spectrum pattern added across all pixels,
            detected by residual correlation
- ``ring``: keyed sign pattern on fixed-radius rings of the luminance
            spectrum, detected by correlating ring bins

All embedders are pure functions of (image, key/message, parameters);
images are H x W x 3 uint8 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .prng import Stream, prng_stream
from .transforms import (
    box_blur3,
    clamp_u8,
    dct2_4x4,
    fft_radius_grid,
    haar_dwt2,
    haar_idwt2,
    idct2_4x4,
    luminance,
    rgb_to_yuv,
    svd4_batch,
    yuv_to_rgb,
)

MESSAGE_BITS = 64

# Dense ring set: every radius step of 0.01 from 0.08 to 0.44 of the image
# side, so the keyed sign pattern covers a broad annulus of the spectrum.
DEFAULT_RING_RADII = tuple(r / 100.0 for r in range(8, 45))
DEFAULT_SS_ALPHA = 2.0
DEFAULT_RING_ALPHA = 2.0
DEFAULT_DDS_DELTA = 36.0

METHOD_NAMES = ("lsb", "dds", "ss", "ring")


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected H x W x 3 uint8 image, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    if h < 16 or w < 16 or h % 2 or w % 2:
        raise ValueError(f"image dims must be even and >= 16, got {h}x{w}")
    return img


def message_bits(msg: int) -> np.ndarray:
    """The 64 bits of a message, LSB first."""
    return (np.uint64(msg & (2**64 - 1)) >> np.arange(64, dtype=np.uint64)) & np.uint64(1)


# ---------------------------------------------------------------------------
# LSB


def lsb_embed(img: np.ndarray, msg: int) -> np.ndarray:
    """Set the LSB of byte j (row-major, channels interleaved) to bit j mod 64."""
    img = _check_image(img)
    flat = img.reshape(-1)
    bits = message_bits(msg).astype(np.uint8)
    pattern = bits[np.arange(flat.size) % MESSAGE_BITS]
    return ((flat & 0xFE) | pattern).reshape(img.shape)


def lsb_decode(img: np.ndarray) -> int:
    """Majority vote of the LSBs at positions congruent to each bit index."""
    img = _check_image(img)
    lsbs = (img.reshape(-1) & 1).astype(np.int64)
    idx = np.arange(lsbs.size) % MESSAGE_BITS
    ones = np.bincount(idx, weights=lsbs, minlength=MESSAGE_BITS)
    total = np.bincount(idx, minlength=MESSAGE_BITS)
    msg = 0
    for b in range(MESSAGE_BITS):
        if 2 * ones[b] > total[b]:  # ties resolve to 0
            msg |= 1 << b
    return msg


# ---------------------------------------------------------------------------
# DDS: DWT -> 4x4 DCT -> SVD -> QIM on the top singular value (U channel)


def qim_quantize(s1: float | np.ndarray, delta: float, bit) -> float | np.ndarray:
    """Snap a nonnegative value onto the even/odd QIM lattice of step delta."""
    return np.floor(s1 / delta) * delta + delta / 4.0 + np.asarray(bit) * (delta / 2.0)


def _ll_blocks(img: np.ndarray):
    """U channel -> Haar low band -> row-major 4x4 blocks [N, 4, 4]."""
    yuv = rgb_to_yuv(img.astype(np.float64))
    u = yuv[:, :, 1]
    ll, lh, hl, hh = haar_dwt2(u)
    h2, w2 = ll.shape
    blocks = ll.reshape(h2 // 4, 4, w2 // 4, 4).transpose(0, 2, 1, 3).reshape(-1, 4, 4)
    return yuv, (ll.shape, lh, hl, hh), blocks


def _check_dds_dims(img: np.ndarray) -> None:
    h, w = img.shape[:2]
    if h % 8 or w % 8:
        raise ValueError(f"dds needs dims divisible by 8, got {h}x{w}")


def dds_embed(img: np.ndarray, msg: int, delta: float = DEFAULT_DDS_DELTA) -> np.ndarray:
    img = _check_image(img)
    _check_dds_dims(img)
    if delta <= 0:
        raise ValueError("delta must be positive")
    yuv, (ll_shape, lh, hl, hh), blocks = _ll_blocks(img)
    coefs = dct2_4x4(blocks)
    u, s, v = svd4_batch(coefs)
    bits = message_bits(msg).astype(np.float64)
    n = blocks.shape[0]
    s = s.copy()
    s[:, 0] = qim_quantize(s[:, 0], delta, bits[np.arange(n) % MESSAGE_BITS])
    coefs = (u * s[:, None, :]) @ np.transpose(v, (0, 2, 1))
    blocks = idct2_4x4(coefs)
    h2, w2 = ll_shape
    ll = blocks.reshape(h2 // 4, w2 // 4, 4, 4).transpose(0, 2, 1, 3).reshape(h2, w2)
    yuv[:, :, 1] = haar_idwt2(ll, lh, hl, hh)
    return clamp_u8(yuv_to_rgb(yuv))


def dds_decode(img: np.ndarray, delta: float = DEFAULT_DDS_DELTA) -> int:
    img = _check_image(img)
    _check_dds_dims(img)
    _, _, blocks = _ll_blocks(img)
    _, s, _ = svd4_batch(dct2_4x4(blocks))
    raw = (np.mod(s[:, 0], delta) >= delta / 2.0).astype(np.int64)
    idx = np.arange(raw.size) % MESSAGE_BITS
    ones = np.bincount(idx, weights=raw, minlength=MESSAGE_BITS)
    total = np.bincount(idx, minlength=MESSAGE_BITS)
    msg = 0
    for b in range(MESSAGE_BITS):
        if total[b] and 2 * ones[b] > total[b]:
            msg |= 1 << b
    return msg


# ---------------------------------------------------------------------------
# Spread spectrum


def _ss_pattern(shape, seed: int) -> np.ndarray:
    """Keyed +-1 field, box-blurred, normalized to unit RMS."""
    h, w, c = shape
    raw = prng_stream(seed, h * w * c)
    signs = np.where((raw & np.uint64(1)).astype(bool), 1.0, -1.0).reshape(h, w, c)
    p = box_blur3(signs)
    rms = np.sqrt(np.mean(p * p))
    return p / rms


def ss_embed(img: np.ndarray, key: int, alpha: float = DEFAULT_SS_ALPHA) -> np.ndarray:
    img = _check_image(img)
    p = _ss_pattern(img.shape, key)
    return clamp_u8(img.astype(np.float64) + alpha * p)


def ss_detect(img: np.ndarray, key: int) -> float:
    """Normalized correlation of the blur residual with the keyed pattern."""
    img = _check_image(img)
    x = img.astype(np.float64)
    r = x - box_blur3(x)
    p = _ss_pattern(img.shape, key)
    nr = np.sqrt((r * r).sum())
    np_ = np.sqrt((p * p).sum())
    if nr == 0.0 or np_ == 0.0:
        return 0.0
    return float((r * p).sum() / (nr * np_))


# ---------------------------------------------------------------------------
# Frequency rings


def _ring_layout(h: int, w: int, radii) -> tuple[np.ndarray, np.ndarray]:
    """Masked ring bins and their keyed-sign slot index.

    Conjugate bin pairs share one slot so a single sign can be mirrored to
    both, keeping the modified spectrum Hermitian.
    """
    radii = tuple(radii)
    if len(radii) == 0:
        raise ValueError("radii must be non-empty")
    for r in radii:
        if not (0.05 < r < 0.45):
            raise ValueError(f"ring radius {r} outside (0.05, 0.45)")
    targets = np.unique([int(np.floor(r * min(h, w))) for r in radii])
    rad = fft_radius_grid(h, w)
    mask = np.isin(rad, targets)
    ys, xs = np.nonzero(mask)
    conj_y = (-ys) % h
    conj_x = (-xs) % w
    # canonical representative of each conjugate pair, in row-major order
    key_self = ys * w + xs
    key_conj = conj_y * w + conj_x
    rep = np.minimum(key_self, key_conj)
    order = np.argsort(key_self, kind="stable")
    reps_sorted = rep[order]
    uniq, slot_of_sorted = np.unique(reps_sorted, return_inverse=True)
    slots = np.empty_like(slot_of_sorted)
    slots[np.argsort(order, kind="stable")] = slot_of_sorted
    return np.stack([ys, xs], axis=1), slots


def _ring_signs(n_slots: int, seed: int) -> np.ndarray:
    raw = prng_stream(seed, n_slots)
    return np.where((raw & np.uint64(1)).astype(bool), 1.0, -1.0)


def _ring_modified_spectrum(lum: np.ndarray, key: int, alpha: float, radii) -> np.ndarray:
    h, w = lum.shape
    bins, slots = _ring_layout(h, w, radii)
    signs = _ring_signs(int(slots.max()) + 1, key)
    f = np.fft.fft2(lum)
    f[bins[:, 0], bins[:, 1]] += alpha * signs[slots] * np.sqrt(h * w)
    return f


def ring_embed(
    img: np.ndarray,
    key: int,
    alpha: float = DEFAULT_RING_ALPHA,
    radii=DEFAULT_RING_RADII,
) -> np.ndarray:
    """Add a keyed sign pattern to the ring bins of the luminance spectrum."""
    img = _check_image(img)
    x = img.astype(np.float64)
    lum = luminance(x)
    f = _ring_modified_spectrum(lum, key, alpha, radii)
    delta = np.fft.ifft2(f).real - lum
    return clamp_u8(x + delta[:, :, None])


def ring_detect(img: np.ndarray, key: int, radii=DEFAULT_RING_RADII) -> float:
    """Correlate the real parts of the ring bins with the keyed signs."""
    img = _check_image(img)
    h, w = img.shape[:2]
    bins, slots = _ring_layout(h, w, radii)
    signs = _ring_signs(int(slots.max()) + 1, key)
    f = np.fft.fft2(luminance(img.astype(np.float64)))
    x = f.real[bins[:, 0], bins[:, 1]]
    s = signs[slots]
    nx = np.sqrt((x * x).sum())
    if nx == 0.0:
        return 0.0
    return float((x * s).sum() / (nx * np.sqrt(len(s))))


# ---------------------------------------------------------------------------
# Method descriptor used by the corpus builder and CLI


@dataclass(frozen=True)
class WatermarkMethod:
    """One embedder plus its parameters."""

    name: str
    delta: float = DEFAULT_DDS_DELTA
    alpha: float = None  # type: ignore[assignment]
    radii: tuple = field(default=DEFAULT_RING_RADII)

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown watermark method {self.name!r}")
        if self.alpha is None:
            default = DEFAULT_SS_ALPHA if self.name == "ss" else DEFAULT_RING_ALPHA
            object.__setattr__(self, "alpha", default)
        if self.delta <= 0 or self.alpha <= 0:
            raise ValueError("method parameters must be positive")
        object.__setattr__(self, "radii", tuple(self.radii))

    @property
    def needs_message(self) -> bool:
        return self.name in ("lsb", "dds")

    def check_image(self, img: np.ndarray) -> None:
        _check_image(img)
        if self.name == "dds":
            _check_dds_dims(img)

    def embed(self, img: np.ndarray, *, message: int | None = None, key: int | None = None):
        if self.name == "lsb":
            return lsb_embed(img, message)
        if self.name == "dds":
            return dds_embed(img, message, self.delta)
        if self.name == "ss":
            return ss_embed(img, key, self.alpha)
        return ring_embed(img, key, self.alpha, self.radii)
