"""Minimal CNN scoring network: forward pass, exact gradients, AdamW.

The network is a fixed-topology stack of 3x3 stride-2 zero-padded
convolutions with ReLU, global average pooling, and one dense output per
sample. Convolutions run as im2col + GEMM in NHWC layout. Everything is
float32 and a pure function of its inputs: same seed and data give
bit-identical results on one platform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .prng import Stream, derive_seed

MAGIC = b"WMDNN1"


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass(frozen=True)
class ArchConfig:
    """Channel widths of the conv stages; input is always an RGB image."""

    channels: tuple[int, ...] = (16, 32, 64, 64)
    in_channels: int = 3

    def __post_init__(self):
        if len(self.channels) < 1:
            raise ValueError("need at least one stage")
        if any(int(c) < 1 for c in self.channels):
            raise ValueError("channel widths must be >= 1")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    def param_count(self) -> int:
        total = 0
        cin = self.in_channels
        for cout in self.channels:
            total += cout * cin * 9 + cout
            cin = cout
        return total + cin + 1  # dense weights + bias


@dataclass
class ModelParams:
    """Flat list of parameter arrays: conv (w, b) per stage, then dense (w, b)."""

    arch: ArchConfig
    arrays: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, [a.copy() for a in self.arrays])

    def size(self) -> int:
        return sum(a.size for a in self.arrays)


@dataclass
class OptState:
    """AdamW first/second moments plus the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @staticmethod
    def zeros_like(params: ModelParams) -> "OptState":
        return OptState(
            m=[np.zeros_like(a) for a in params.arrays],
            v=[np.zeros_like(a) for a in params.arrays],
            t=0,
        )


def model_init(arch: ArchConfig, seed: int) -> ModelParams:
    """He-normal conv/dense weights, zero biases, fully determined by seed."""
    stream = Stream(seed)
    arrays: list[np.ndarray] = []
    cin = arch.in_channels
    for cout in arch.channels:
        fan_in = cin * 9
        std = np.sqrt(2.0 / fan_in)
        w = (stream.normals(cout * cin * 9) * std).astype(np.float32)
        arrays.append(w.reshape(cout, cin, 3, 3))
        arrays.append(np.zeros(cout, dtype=np.float32))
        cin = cout
    std = np.sqrt(2.0 / cin)
    arrays.append((stream.normals(cin) * std).astype(np.float32).reshape(1, cin))
    arrays.append(np.zeros(1, dtype=np.float32))
    return ModelParams(arch, arrays)


# ---------------------------------------------------------------------------
# forward / backward


def _out_hw(h: int, w: int) -> tuple[int, int]:
    # 3x3 kernel, stride 2, zero padding 1
    return (h + 1) // 2, (w + 1) // 2


def _tap_ranges(ho: int, h: int, k: int):
    """Valid output range [lo, hi] and matching input slice for kernel tap k.

    Output position i reads input row 2*i + k - 1; taps that fall in the
    zero-padding contribute nothing and are skipped.
    """
    lo = 1 if k == 0 else 0
    hi = min(ho - 1, (h - k) // 2)
    if hi < lo:
        return None
    return lo, hi, slice(2 * lo + k - 1, 2 * hi + k, 2)


def _im2col(x: np.ndarray, ho: int, wo: int) -> np.ndarray:
    """Patch matrix of a 3x3 stride-2 zero-padded conv, [B*Ho*Wo, 9*C]."""
    b, h, w, cin = x.shape
    cols = np.zeros((b, ho, wo, 3, 3, cin), dtype=x.dtype)
    for ki in range(3):
        ri = _tap_ranges(ho, h, ki)
        if ri is None:
            continue
        ilo, ihi, isrc = ri
        for kj in range(3):
            rj = _tap_ranges(wo, w, kj)
            if rj is None:
                continue
            jlo, jhi, jsrc = rj
            cols[:, ilo:ihi + 1, jlo:jhi + 1, ki, kj, :] = x[:, isrc, jsrc, :]
    return cols.reshape(b * ho * wo, 9 * cin)


def _col2im(dcols: np.ndarray, b: int, h: int, w: int, cin: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: accumulate patch gradients onto the input."""
    dx = np.zeros((b, h, w, cin), dtype=dcols.dtype)
    d6 = dcols.reshape(b, ho, wo, 3, 3, cin)
    for ki in range(3):
        ri = _tap_ranges(ho, h, ki)
        if ri is None:
            continue
        ilo, ihi, isrc = ri
        for kj in range(3):
            rj = _tap_ranges(wo, w, kj)
            if rj is None:
                continue
            jlo, jhi, jsrc = rj
            dx[:, isrc, jsrc, :] += d6[:, ilo:ihi + 1, jlo:jhi + 1, ki, kj, :]
    return dx


def _check_batch(arch: ArchConfig, x: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[1] != arch.in_channels:
        raise ValueError(f"expected batch [B, {arch.in_channels}, H, W], got {x.shape}")
    if x.shape[2] < 8 or x.shape[3] < 8:
        raise ValueError(f"inputs must be at least 8x8, got {x.shape[2]}x{x.shape[3]}")


def _run_forward(arch: ArchConfig, arrays: list[np.ndarray], x: np.ndarray, keep: bool):
    """Forward pass over [B, C, H, W]; optionally keeps per-stage buffers."""
    h = np.ascontiguousarray(np.transpose(x, (0, 2, 3, 1)))
    dtype = h.dtype
    stages = []
    for li in range(len(arch.channels)):
        w = arrays[2 * li]
        bias = arrays[2 * li + 1]
        b, hh, ww, cin = h.shape
        ho, wo = _out_hw(hh, ww)
        cols = _im2col(h, ho, wo)
        wmat = np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(9 * cin, -1), dtype=dtype)
        z = cols @ wmat
        z += bias.astype(dtype)
        np.maximum(z, 0.0, out=z)
        out = z.reshape(b, ho, wo, -1)
        if keep:
            stages.append((cols, wmat, out, (hh, ww, cin)))
        h = out
    b = h.shape[0]
    gap = h.mean(axis=(1, 2))
    dense_w = arrays[-2].astype(dtype)
    dense_b = arrays[-1].astype(dtype)
    # per-row reduction (not GEMV) so identical samples score bit-identically
    # regardless of their position in the batch
    scores = (gap * dense_w[0][None, :]).sum(axis=1) + dense_b[0]
    cache = (stages, gap, h.shape) if keep else None
    return scores, cache


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Score a batch [B, 3, H, W] -> one float32 scalar per sample."""
    x = np.asarray(batch, dtype=np.float32)
    _check_batch(params.arch, x)
    scores, _ = _run_forward(params.arch, params.arrays, x, keep=False)
    return scores.astype(np.float32)


def _run_backward(arch: ArchConfig, arrays: list[np.ndarray], cache, dout: np.ndarray):
    stages, gap, top_shape = cache
    dtype = gap.dtype
    b, ho_t, wo_t, c_t = top_shape
    dense_w = arrays[-2].astype(dtype)

    grads: list[np.ndarray] = [None] * len(arrays)
    grads[-2] = (dout[None, :] @ gap).astype(np.float32)
    grads[-1] = np.array([dout.sum()], dtype=np.float32)

    dgap = dout[:, None] * dense_w[0][None, :]
    dh = np.broadcast_to(
        (dgap / (ho_t * wo_t))[:, None, None, :], (b, ho_t, wo_t, c_t)
    ).astype(dtype)

    for li in range(len(arch.channels) - 1, -1, -1):
        cols, wmat, out, (hh, ww, cin) = stages[li]
        bo, ho, wo, cout = out.shape
        dz = dh * (out > 0)
        dzmat = dz.reshape(bo * ho * wo, cout)
        dw = cols.T @ dzmat  # [9*cin, cout]
        grads[2 * li] = np.ascontiguousarray(
            dw.reshape(3, 3, cin, cout).transpose(3, 2, 0, 1)
        ).astype(np.float32)
        grads[2 * li + 1] = dzmat.sum(axis=0).astype(np.float32)
        if li > 0:
            dcols = dzmat @ wmat.T
            dh = _col2im(dcols, bo, hh, ww, cin, ho, wo)
    return grads


def backward(params: ModelParams, batch_c: np.ndarray, batch_d: np.ndarray, loss_cfg):
    """Loss and exact parameter gradients of loss_min(f(clean)) + loss_max(f(detect))."""
    from .losses import loss_max, loss_max_grad, loss_min, loss_min_grad

    xc = np.asarray(batch_c, dtype=np.float32)
    xd = np.asarray(batch_d, dtype=np.float32)
    _check_batch(params.arch, xc)
    _check_batch(params.arch, xd)
    bc = xc.shape[0]
    x = np.concatenate([xc, xd], axis=0)
    scores, cache = _run_forward(params.arch, params.arrays, x, keep=True)
    fc, fd = scores[:bc], scores[bc:]
    total = loss_min(fc, loss_cfg.min_kind, loss_cfg.tau) + loss_max(
        fd, loss_cfg.max_kind, loss_cfg.tau
    )
    if not np.isfinite(total):
        raise NonFiniteLossError(
            f"non-finite loss {total!r} (min={loss_cfg.min_kind}, max={loss_cfg.max_kind}, "
            f"tau={loss_cfg.tau})"
        )
    dout = np.concatenate(
        [
            loss_min_grad(fc, loss_cfg.min_kind, loss_cfg.tau),
            loss_max_grad(fd, loss_cfg.max_kind, loss_cfg.tau),
        ]
    ).astype(np.float32)
    grads = _run_backward(params.arch, params.arrays, cache, dout)
    return float(total), grads


def adamw_step(
    params: ModelParams,
    grads: list[np.ndarray],
    opt: OptState,
    lr: float,
    wd: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, OptState]:
    """Decoupled weight decay, then Adam with bias correction. Pure."""
    t = opt.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_arrays, new_m, new_v = [], [], []
    for theta, g, m, v in zip(params.arrays, grads, opt.m, opt.v):
        if theta.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape}")
        m2 = beta1 * m + (1.0 - beta1) * g
        v2 = beta2 * v + (1.0 - beta2) * (g * g)
        theta2 = theta * np.float32(1.0 - lr * wd)
        theta2 -= (lr * (m2 / c1) / (np.sqrt(v2 / c2) + eps)).astype(np.float32)
        new_arrays.append(theta2)
        new_m.append(m2)
        new_v.append(v2)
    return ModelParams(params.arch, new_arrays), OptState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# gradient verification


def _loss_only(arch, arrays, xc, xd, loss_cfg) -> float:
    from .losses import loss_max, loss_min

    x = np.concatenate([xc, xd], axis=0)
    scores, _ = _run_forward(arch, arrays, x, keep=False)
    bc = xc.shape[0]
    return loss_min(scores[:bc], loss_cfg.min_kind, loss_cfg.tau) + loss_max(
        scores[bc:], loss_cfg.max_kind, loss_cfg.tau
    )


def finite_diff_grads(
    params: ModelParams,
    batch_c: np.ndarray,
    batch_d: np.ndarray,
    loss_cfg,
    indices,
    eps: float = 1e-3,
) -> np.ndarray:
    """Central-difference partials at the given flat parameter indices.

    The difference quotient is evaluated in float64 so it can serve as an
    independent oracle for the float32 analytic gradients.
    """
    arrays64 = [a.astype(np.float64) for a in params.arrays]
    xc = np.asarray(batch_c, dtype=np.float64)
    xd = np.asarray(batch_d, dtype=np.float64)
    sizes = [a.size for a in arrays64]
    bounds = np.cumsum([0] + sizes)
    flats = [a.reshape(-1) for a in arrays64]
    out = np.empty(len(indices), dtype=np.float64)
    for k, idx in enumerate(indices):
        ai = int(np.searchsorted(bounds, idx, side="right") - 1)
        off = idx - bounds[ai]
        old = flats[ai][off]
        flats[ai][off] = old + eps
        lp = _loss_only(params.arch, arrays64, xc, xd, loss_cfg)
        flats[ai][off] = old - eps
        lm = _loss_only(params.arch, arrays64, xc, xd, loss_cfg)
        flats[ai][off] = old
        out[k] = (lp - lm) / (2.0 * eps)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, scale: float | None = None) -> float:
    """Worst per-element relative difference.

    Entries whose magnitudes on both sides fall below a small fraction of the
    gradient scale are compared against that scale instead, so float32 noise
    on effectively-zero gradients does not register as relative error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if scale is None:
        scale = float(np.max(np.abs(a))) if a.size else 0.0
    floor = 3e-3 * max(1.0, scale)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(
    params: ModelParams,
    batch_c: np.ndarray,
    batch_d: np.ndarray,
    loss_cfg,
    eps: float = 1e-3,
    seed: int = 0,
    samples: int = 200,
) -> float:
    """Compare analytic gradients against central differences at >= `samples`
    randomly chosen parameters; returns the max relative error.

    Each probe is evaluated at eps and eps/2; probes whose two estimates
    disagree sit on a ReLU kink (central differences are invalid there) and
    are replaced by a fresh draw. Deterministic given seed.
    """
    if np.asarray(batch_c).shape[0] > 8 or np.asarray(batch_d).shape[0] > 8:
        raise ValueError("grad_check is meant for small batches (<= 8)")
    _, grads = backward(params, batch_c, batch_d, loss_cfg)
    flat = np.concatenate([g.reshape(-1) for g in grads]).astype(np.float64)
    total = flat.size
    gmax = float(np.max(np.abs(flat)))
    kink_tol = 1e-6 * max(1.0, gmax)

    stream = Stream(derive_seed(seed, total))
    want = min(samples, total)
    chosen: list[int] = []
    numeric: list[float] = []
    seen = set()
    attempts = 0
    while len(chosen) < want and attempts < max(1000, 5 * want):
        attempts += 1
        idx = stream.randint(total)
        if idx in seen:
            continue
        seen.add(idx)
        fd_full, fd_half = (
            finite_diff_grads(params, batch_c, batch_d, loss_cfg, [idx], eps)[0],
            finite_diff_grads(params, batch_c, batch_d, loss_cfg, [idx], eps / 2)[0],
        )
        if abs(fd_full - fd_half) > kink_tol:
            continue
        chosen.append(idx)
        numeric.append(fd_half)
    return max_rel_error(flat[chosen], np.array(numeric), scale=gmax)


# ---------------------------------------------------------------------------
# parameter snapshots


def save_params(params: ModelParams, path) -> None:
    """Flat binary snapshot: magic, array count, then dims + float32 buffers."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(params.arrays)))
        for a in params.arrays:
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a parameter snapshot (bad magic)")
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            buf = fh.read(4 * n)
            arrays.append(np.frombuffer(buf, dtype="<f4").reshape(shape).copy())
    conv_ws = arrays[0:-2:2]
    arch = ArchConfig(channels=tuple(w.shape[0] for w in conv_ws), in_channels=conv_ws[0].shape[1])
    params = ModelParams(arch, arrays)
    if params.size() != arch.param_count():
        raise ValueError(f"{path}: array sizes inconsistent with architecture")
    return params
