"""Synthetic clean-image corpora, PNG ingestion, and labeled detection sets.

A detection set is a directory of PNGs where a seeded fraction of images
carries a watermark; the ground truth lives in a ``manifest.json`` next to
the images. The detector never reads the manifest - it exists for
evaluation only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .prng import Stream, derive_seed
from .transforms import box_blur3, clamp_u8
from .watermarks import WatermarkMethod

MANIFEST_NAME = "manifest.json"

# tag constants so different draws within one build never share a stream
_TAG_IMAGE = 0x1A
_TAG_SELECT = 0x2B
_TAG_PAYLOAD = 0x3C


class CorpusError(RuntimeError):
    """Bad image data or an impossible build request."""


@dataclass(frozen=True)
class CorpusSpec:
    """Geometry and seed of a synthetic corpus."""

    n: int
    size: int = 64
    seed: int = 1

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if self.size < 16 or self.size % 2 or self.size % 8:
            raise ValueError("size must be even and divisible by 8 (and >= 16)")


@dataclass
class SampleRecord:
    id: str
    path: str
    watermarked: bool
    method: str | None = None
    key: int | None = None
    message: int | None = None

    def to_json_dict(self) -> dict:
        d = {"id": self.id, "path": self.path, "watermarked": self.watermarked}
        if self.watermarked:
            d["method"] = self.method
            if self.key is not None:
                d["key"] = f"0x{self.key:016X}"
            if self.message is not None:
                d["message"] = f"{self.message:016x}"
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "SampleRecord":
        rec = SampleRecord(
            id=d["id"],
            path=d["path"],
            watermarked=bool(d["watermarked"]),
            method=d.get("method"),
            key=int(d["key"], 16) if "key" in d else None,
            message=int(d["message"], 16) if "message" in d else None,
        )
        if not rec.watermarked and (rec.method or rec.key is not None or rec.message is not None):
            raise CorpusError(f"record {rec.id}: clean sample carries watermark fields")
        return rec


@dataclass
class Manifest:
    image_size: int
    seed: int
    ratio: float
    records: list[SampleRecord] = field(default_factory=list)
    version: int = 1

    def to_json_dict(self) -> dict:
        return {
            "version": self.version,
            "image_size": self.image_size,
            "seed": self.seed,
            "ratio": self.ratio,
            "records": [r.to_json_dict() for r in self.records],
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")

    @staticmethod
    def load(path) -> "Manifest":
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        if d.get("version") != 1:
            raise CorpusError(f"{path}: unsupported manifest version {d.get('version')!r}")
        m = Manifest(
            image_size=int(d["image_size"]),
            seed=int(d["seed"]),
            ratio=float(d["ratio"]),
            records=[SampleRecord.from_json_dict(r) for r in d["records"]],
        )
        ids = [r.id for r in m.records]
        if len(set(ids)) != len(ids):
            raise CorpusError(f"{path}: duplicate sample ids")
        return m

    def labels(self) -> dict[str, int]:
        return {r.id: int(r.watermarked) for r in self.records}


# ---------------------------------------------------------------------------
# PNG io


def save_png(img: np.ndarray, path) -> None:
    PILImage.fromarray(img, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            if im.mode not in ("RGB", "L", "RGBA", "LA", "P", "I;16", "I"):
                raise CorpusError(f"{path}: unsupported PNG mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as e:
        raise CorpusError(f"{path}: cannot decode PNG ({e})") from e
    return arr


def load_dataset(directory, manifest: Manifest | None = None):
    """Load a directory of PNGs as [(id, image)] in a deterministic order.

    With a manifest the manifest order rules; otherwise files sort
    lexicographically. All images must share one size.
    """
    directory = Path(directory)
    if manifest is not None:
        entries = [(r.id, directory / r.path) for r in manifest.records]
    else:
        entries = [(p.stem, p) for p in sorted(directory.glob("*.png"))]
    out = []
    shape = None
    for sid, path in entries:
        if not path.exists():
            raise CorpusError(f"{path}: missing image file")
        img = load_png(path)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise CorpusError(
                f"{path}: size {img.shape[1]}x{img.shape[0]} does not match "
                f"{shape[1]}x{shape[0]} of the first image"
            )
        out.append((sid, img))
    return out


# ---------------------------------------------------------------------------
# Synthetic corpus

_NOISE_STD = 4.0  # gray levels, after blurring
# color range stays off the byte extremes so chroma-domain embedders are not
# destroyed by gamut clamping
_COLOR_LO = 20.0
_COLOR_HI = 235.0


def _synth_image(size: int, seed: int) -> np.ndarray:
    """One deterministic synthetic image: gradients + shapes + soft noise."""
    st = Stream(seed)
    s = size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)

    accum = np.zeros((s, s, 3))
    wsum = 0.0
    n_grad = 2 + st.randint(3)  # 2..4 overlapping gradients
    for _ in range(n_grad):
        c0 = np.array([st.uniform(_COLOR_LO, _COLOR_HI) for _ in range(3)])
        c1 = np.array([st.uniform(_COLOR_LO, _COLOR_HI) for _ in range(3)])
        weight = st.uniform(0.5, 1.5)
        if st.uniform() < 0.5:
            ang = st.uniform(0, 2 * np.pi)
            t = (np.cos(ang) * xx + np.sin(ang) * yy)
        else:
            cy, cx = st.uniform(0, s), st.uniform(0, s)
            t = np.hypot(yy - cy, xx - cx)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        accum += weight * (c0[None, None, :] + t[:, :, None] * (c1 - c0)[None, None, :])
        wsum += weight
    img = accum / wsum

    n_shapes = 1 + st.randint(3)  # 1..3 filled shapes
    for _ in range(n_shapes):
        color = np.array([st.uniform(_COLOR_LO, _COLOR_HI) for _ in range(3)])
        h = st.uniform(s / 8, s / 2)
        w = st.uniform(s / 8, s / 2)
        cy = st.uniform(0, s)
        cx = st.uniform(0, s)
        if st.uniform() < 0.5:
            mask = (np.abs(yy - cy) <= h / 2) & (np.abs(xx - cx) <= w / 2)
        else:
            mask = ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
        img[mask] = color

    noise = box_blur3(st.normals(s * s).reshape(s, s))
    std = noise.std()
    if std > 0:
        noise *= _NOISE_STD / std
    img += noise[:, :, None]
    return clamp_u8(img)


def synth_corpus(spec: CorpusSpec, out_dir) -> list[str]:
    """Write spec.n deterministic PNGs into out_dir; returns the filenames."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(spec.n):
        img = _synth_image(spec.size, derive_seed(spec.seed, _TAG_IMAGE, i))
        name = f"img_{i:06d}.png"
        save_png(img, out_dir / name)
        names.append(name)
    return names


# ---------------------------------------------------------------------------
# Detection set construction


def _apportion(weights: list[float], total: int) -> list[int]:
    """Largest-remainder apportionment of `total` into len(weights) parts."""
    quotas = [w * total for w in weights]
    counts = [int(np.floor(q)) for q in quotas]
    short = total - sum(counts)
    remainders = sorted(
        range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def build_detection_set(
    images,
    methods: list[tuple[WatermarkMethod, float]],
    ratio: float,
    seed: int,
    out_dir,
) -> Manifest:
    """Watermark a seeded fraction of `images` and write set + manifest.

    `images` is [(id, image)]; exactly round(ratio * n) images are
    watermarked, split across methods by largest-remainder apportionment of
    their weights. Keys and messages come from the seeded stream; which
    images are hit is a seeded uniform shuffle. The whole build is rejected
    before any file is written if some image cannot carry its method.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    weights = [w for _, w in methods]
    if methods and abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError(f"method weights must sum to 1, got {sum(weights)}")
    if any(w < 0 for w in weights):
        raise ValueError("method weights must be nonnegative")

    n = len(images)
    n_marked = int(round(ratio * n))
    if n_marked > 0 and not methods:
        raise ValueError("ratio > 0 requires at least one method")
    counts = _apportion(weights, n_marked) if methods else []

    shapes = {img.shape for _, img in images}
    if len(shapes) > 1:
        raise CorpusError(f"images disagree in size: {sorted(shapes)}")
    if n > 0:
        h, w, _ = images[0][1].shape
        if h != w:
            raise CorpusError(f"detection sets need square images, got {w}x{h}")

    # method of each marked slot, in selection order
    slot_method: list[WatermarkMethod] = []
    for (m, _), c in zip(methods, counts):
        slot_method.extend([m] * c)

    perm = Stream(derive_seed(seed, _TAG_SELECT)).permutation(n)
    chosen = {perm[i]: slot_method[i] for i in range(n_marked)}

    # validate the whole build before touching the disk
    for idx, method in chosen.items():
        try:
            method.check_image(images[idx][1])
        except ValueError as e:
            raise CorpusError(f"{images[idx][0]}: {e}") from e

    payload = Stream(derive_seed(seed, _TAG_PAYLOAD))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for idx, (sid, img) in enumerate(images):
        rec = SampleRecord(id=sid, path=f"{sid}.png", watermarked=idx in chosen)
        if rec.watermarked:
            method = chosen[idx]
            rec.method = method.name
            if method.needs_message:
                rec.message = payload.next_u64()
                img = method.embed(img, message=rec.message)
            else:
                rec.key = payload.next_u64()
                img = method.embed(img, key=rec.key)
        save_png(img, out_dir / rec.path)
        records.append(rec)

    manifest = Manifest(
        image_size=images[0][1].shape[0] if n else 0,
        seed=seed,
        ratio=ratio,
        records=records,
    )
    manifest.write(out_dir / MANIFEST_NAME)
    return manifest


# ---------------------------------------------------------------------------
# Model input

INPUT_TRANSFORMS = ("identity", "highpass")


def to_model_input(img: np.ndarray, transform: str = "identity") -> np.ndarray:
    """Image bytes -> float32 [3, H, W] in [0, 1] for the scoring network."""
    if transform == "identity":
        x = img.astype(np.float32) / 255.0
    elif transform == "highpass":
        r = (img.astype(np.float64) - box_blur3(img.astype(np.float64))) / 255.0 + 0.5
        x = np.clip(r, 0.0, 1.0).astype(np.float32)
    else:
        raise ValueError(f"unknown input transform {transform!r}")
    return np.ascontiguousarray(x.transpose(2, 0, 1))
