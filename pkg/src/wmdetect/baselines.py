"""Naive per-image statistics standing in for label-free anomaly detectors.

Invisible watermarks barely move these scores, which is the point: they
bracket what anomaly-style detection achieves without the offset-learning
detector.
"""

from __future__ import annotations

import numpy as np

from .transforms import box_blur3, luminance

BASELINE_METHODS = ("residual", "freq")


def residual_energy_score(img: np.ndarray) -> float:
    """Mean squared residual after a 3x3 box blur, over all channels."""
    x = img.astype(np.float64)
    r = x - box_blur3(x)
    return float(np.mean(r * r))


def freq_tail_score(img: np.ndarray, r0: float = 0.35) -> float:
    """Fraction of (non-DC) luminance spectrum power beyond r0 * Nyquist."""
    lum = luminance(img.astype(np.float64))
    h, w = lum.shape
    f = np.fft.fft2(lum)
    power = np.abs(f) ** 2
    power[0, 0] = 0.0
    total = power.sum()
    if total == 0.0:
        return 0.0
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    rad = np.hypot(fy[:, None], fx[None, :])
    tail = power[rad > r0 * (min(h, w) / 2.0)].sum()
    return float(tail / total)


def baseline_score(img: np.ndarray, method: str) -> float:
    if method == "residual":
        return residual_energy_score(img)
    if method == "freq":
        return freq_tail_score(img)
    raise ValueError(f"unknown baseline method {method!r}")


def score_dataset(dataset, method: str):
    """[(id, image)] -> rows (id, None, output, rank_score), id-ascending.

    rank_score is the normalized rank of the raw statistic (ties broken by
    id), matching the scores.csv schema of the detector.
    """
    raw = {sid: baseline_score(img, method) for sid, img in dataset}
    ordered = sorted(raw, key=lambda i: (raw[i], i))
    n = len(ordered)
    position = {sid: k for k, sid in enumerate(ordered)}
    return [
        (sid, None, raw[sid], position[sid] / (n - 1) if n > 1 else 0.0)
        for sid in sorted(raw)
    ]
