"""Detector training: two-sided loss, iterative pruning, sample ranking.

The loop trains a small CNN to push detection-set outputs up while a
clean reference set holds the shared image distribution down; gradients
from clean content cancel and the watermarked minority accumulates
signal. Every ``prune_interval`` epochs the lowest-output detection
samples are dropped and the model restarts from fresh weights, condensing
the set toward the watermarked samples. The final ranking orders samples
by (pruning round, recorded output) so ROC metrics can be computed
downstream without the trainer ever seeing a label.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nnkernel
from .corpus import INPUT_TRANSFORMS, to_model_input
from .losses import LossConfig, loss_max, loss_min  # re-exported: part of this module's API
from .nnkernel import ArchConfig, ModelParams, NonFiniteLossError, OptState
from .prng import Stream, derive_seed

try:  # optional: pin BLAS threads for speed and run-to-run stability
    from threadpoolctl import threadpool_limits as _threadpool_limits
except ImportError:  # pragma: no cover
    _threadpool_limits = None

__all__ = [
    "LossConfig",
    "TrainConfig",
    "DetectionState",
    "SampleScore",
    "ScoreReport",
    "loss_min",
    "loss_max",
    "prune",
    "rank_scores",
    "run_wmd",
    "train_config_from_dict",
    "train_config_to_dict",
    "read_scores_csv",
    "ConfigError",
]

_TAG_MODEL = 0x4D
_TAG_EPOCH = 0x5E
_TAG_CLEAN = 0x6F

_SCORE_CHUNK = 256


class ConfigError(ValueError):
    """Malformed run configuration."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    batch: int = 32
    epochs: int = 50
    prune_rate: float = 0.10
    prune_interval: int = 10
    target_keep: float = 0.05
    seed: int = 1
    loss: LossConfig = field(default_factory=LossConfig)
    input_transform: str = "identity"
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if not 0.0 < self.prune_rate < 1.0:
            raise ConfigError(f"prune_rate must be in (0, 1), got {self.prune_rate}")
        if not 0.0 < self.target_keep < 1.0:
            raise ConfigError(f"target_keep must be in (0, 1), got {self.target_keep}")
        if self.prune_interval < 1:
            raise ConfigError("prune_interval must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.input_transform not in INPUT_TRANSFORMS:
            raise ConfigError(f"input_transform must be one of {INPUT_TRANSFORMS}")


_TRAIN_KEYS = {
    "lr", "weight_decay", "betas", "batch", "epochs", "prune_rate",
    "prune_interval", "target_keep", "seed", "loss", "input_transform", "arch",
}
_LOSS_KEYS = {"min_kind", "max_kind", "tau"}
_PATH_KEYS = {"detection_dir", "clean_dir", "manifest"}


def train_config_from_dict(d: dict, allow_paths: bool = False):
    """Parse a config mapping; unknown keys are rejected.

    Returns (TrainConfig, paths) where paths holds any of detection_dir /
    clean_dir / manifest when allow_paths is set.
    """
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    allowed = _TRAIN_KEYS | (_PATH_KEYS if allow_paths else set())
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key in _TRAIN_KEYS & set(d):
        val = d[key]
        if key == "loss":
            if not isinstance(val, dict) or set(val) - _LOSS_KEYS:
                raise ConfigError(f"loss must be an object with keys {sorted(_LOSS_KEYS)}")
            kwargs["loss"] = LossConfig(**val)
        elif key == "arch":
            if not isinstance(val, list) or not val:
                raise ConfigError("arch must be a non-empty list of channel widths")
            kwargs["arch"] = ArchConfig(channels=tuple(int(c) for c in val))
        elif key == "betas":
            if not isinstance(val, list) or len(val) != 2:
                raise ConfigError("betas must be a two-element list")
            kwargs["betas"] = (float(val[0]), float(val[1]))
        elif key in ("batch", "epochs", "prune_interval", "seed"):
            kwargs[key] = int(val)
        elif key == "input_transform":
            kwargs[key] = str(val)
        else:
            kwargs[key] = float(val)
    try:
        cfg = TrainConfig(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    paths = {k: d[k] for k in _PATH_KEYS & set(d)} if allow_paths else {}
    return cfg, paths


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "lr": cfg.lr,
        "weight_decay": cfg.weight_decay,
        "betas": list(cfg.betas),
        "batch": cfg.batch,
        "epochs": cfg.epochs,
        "prune_rate": cfg.prune_rate,
        "prune_interval": cfg.prune_interval,
        "target_keep": cfg.target_keep,
        "seed": cfg.seed,
        "loss": {"min_kind": cfg.loss.min_kind, "max_kind": cfg.loss.max_kind, "tau": cfg.loss.tau},
        "input_transform": cfg.input_transform,
        "arch": list(cfg.arch.channels),
    }


# ---------------------------------------------------------------------------
# Pruning bookkeeping


@dataclass
class DetectionState:
    """Alive/removed status of every detection sample."""

    ids: list[str]
    alive: dict[str, bool]
    removal_round: dict[str, int | None]
    output_at_removal: dict[str, float | None]
    rounds_done: int = 0

    @staticmethod
    def fresh(ids) -> "DetectionState":
        ids = list(ids)
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique")
        return DetectionState(
            ids=ids,
            alive={i: True for i in ids},
            removal_round={i: None for i in ids},
            output_at_removal={i: None for i in ids},
        )

    def alive_ids(self) -> list[str]:
        return [i for i in self.ids if self.alive[i]]

    def alive_count(self) -> int:
        return sum(self.alive.values())

    def copy(self) -> "DetectionState":
        return DetectionState(
            ids=list(self.ids),
            alive=dict(self.alive),
            removal_round=dict(self.removal_round),
            output_at_removal=dict(self.output_at_removal),
            rounds_done=self.rounds_done,
        )


def prune(state: DetectionState, outputs: dict[str, float], keep_fraction: float) -> DetectionState:
    """Keep the top ceil(keep * alive) samples by (output desc, id asc)."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    alive = state.alive_ids()
    if set(outputs) != set(alive):
        raise ValueError("outputs must cover exactly the alive samples")
    if keep_fraction == 1.0:
        return state.copy()
    n_keep = math.ceil(keep_fraction * len(alive))
    ranked = sorted(alive, key=lambda i: (-outputs[i], i))
    new = state.copy()
    new.rounds_done += 1
    for sid in ranked[n_keep:]:
        new.alive[sid] = False
        new.removal_round[sid] = new.rounds_done
        new.output_at_removal[sid] = float(outputs[sid])
    return new


@dataclass
class SampleScore:
    id: str
    removal_round: int | None  # None = survived all pruning
    output: float
    rank_score: float


@dataclass
class ScoreReport:
    samples: list[SampleScore]
    survivors: list[str]
    prune_rounds: int
    config: dict
    wallclock_sec: float = 0.0

    def scores_by_id(self) -> dict[str, float]:
        return {s.id: s.rank_score for s in self.samples}

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "wallclock_sec": self.wallclock_sec,
            "prune_rounds": self.prune_rounds,
            "survivors": self.survivors,
            "samples": [
                {
                    "id": s.id,
                    "removal_round": s.removal_round,
                    "output": s.output,
                    "rank_score": s.rank_score,
                }
                for s in self.samples
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")

    def write_csv(self, path) -> None:
        write_scores_csv(
            path,
            [(s.id, s.removal_round, s.output, s.rank_score) for s in self.samples],
        )


SCORES_HEADER = ["id", "label_unknown", "removal_round", "output", "rank_score"]


def write_scores_csv(path, rows) -> None:
    """Rows of (id, removal_round | None, output, rank_score)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORES_HEADER)
        for sid, rnd, out, rank in rows:
            w.writerow([sid, "-", "" if rnd is None else rnd, f"{out:.10g}", f"{rank:.10g}"])


def read_scores_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SCORES_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for row in reader:
            rows.append(
                {
                    "id": row["id"],
                    "removal_round": int(row["removal_round"]) if row["removal_round"] else None,
                    "output": float(row["output"]),
                    "rank_score": float(row["rank_score"]),
                }
            )
    return rows


def rank_scores(state: DetectionState, final_outputs: dict[str, float], config: dict | None = None) -> ScoreReport:
    """Total order over all samples: earlier removal and lower output rank lower.

    Survivors sort after every pruned sample; rank_score is position/(N-1),
    so scores are distinct and higher means more watermark-suspect.
    """
    survivors = sorted(i for i in state.ids if state.alive[i])
    missing = [i for i in survivors if i not in final_outputs]
    if missing:
        raise ValueError(f"final outputs missing for survivors: {missing[:5]}")

    def sort_key(sid: str):
        rnd = state.removal_round[sid]
        out = state.output_at_removal[sid] if rnd is not None else float(final_outputs[sid])
        return (rnd if rnd is not None else math.inf, out, sid)

    ordered = sorted(state.ids, key=sort_key)
    n = len(ordered)
    position = {sid: k for k, sid in enumerate(ordered)}
    samples = []
    for sid in sorted(state.ids):
        rnd = state.removal_round[sid]
        out = state.output_at_removal[sid] if rnd is not None else float(final_outputs[sid])
        rank = position[sid] / (n - 1) if n > 1 else 0.0
        samples.append(SampleScore(id=sid, removal_round=rnd, output=float(out), rank_score=rank))
    return ScoreReport(
        samples=samples,
        survivors=survivors,
        prune_rounds=state.rounds_done,
        config=config or {},
    )


# ---------------------------------------------------------------------------
# Training loop


def _score_all(params: ModelParams, inputs: np.ndarray, index: list[int]) -> np.ndarray:
    """Forward in fixed-size chunks, merged in index order."""
    outs = np.empty(len(index), dtype=np.float32)
    for lo in range(0, len(index), _SCORE_CHUNK):
        sel = index[lo:lo + _SCORE_CHUNK]
        outs[lo:lo + len(sel)] = nnkernel.forward(params, inputs[sel])
    return outs


class _CleanCycler:
    """Endless clean-sample index stream, reshuffled each full pass."""

    def __init__(self, n: int, seed: int):
        self._n = n
        self._stream = Stream(seed)
        self._queue: list[int] = []

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if not self._queue:
                self._queue = self._stream.permutation(self._n)
            take = min(k - len(out), len(self._queue))
            out.extend(self._queue[:take])
            self._queue = self._queue[take:]
        return out


def run_wmd(detection, clean, cfg: TrainConfig) -> ScoreReport:
    """Train on (detection, clean) datasets and rank every detection sample.

    Datasets are [(id, HxWx3 uint8 image)]. Fully deterministic given cfg;
    never looks at any label. Raises NonFiniteLossError (annotated with
    epoch/step) if the loss diverges.
    """
    if len(detection) == 0 or len(clean) == 0:
        raise ValueError("both datasets must be non-empty")
    shapes = {img.shape for _, img in detection} | {img.shape for _, img in clean}
    if len(shapes) > 1:
        raise ValueError(f"detection and clean images disagree in size: {sorted(shapes)}")

    if _threadpool_limits is not None:
        with _threadpool_limits(limits=1):
            return _run_wmd_inner(detection, clean, cfg)
    return _run_wmd_inner(detection, clean, cfg)


def _run_wmd_inner(detection, clean, cfg: TrainConfig) -> ScoreReport:
    t_start = time.perf_counter()
    det_ids = [sid for sid, _ in detection]
    x_det = np.stack([to_model_input(img, cfg.input_transform) for _, img in detection])
    x_cln = np.stack([to_model_input(img, cfg.input_transform) for _, img in clean])

    state = DetectionState.fresh(det_ids)
    pos_of = {sid: k for k, sid in enumerate(det_ids)}
    n0 = len(det_ids)

    params = nnkernel.model_init(cfg.arch, derive_seed(cfg.seed, _TAG_MODEL, 0))
    opt = OptState.zeros_like(params)
    cleaner = _CleanCycler(len(clean), derive_seed(cfg.seed, _TAG_CLEAN))

    scores_at_last_prune: dict[str, float] | None = None
    pruned_at_final_epoch = False

    for epoch in range(1, cfg.epochs + 1):
        alive = state.alive_ids()
        order = Stream(derive_seed(cfg.seed, _TAG_EPOCH, epoch)).shuffled(alive)
        for step, lo in enumerate(range(0, len(order), cfg.batch)):
            batch_ids = order[lo:lo + cfg.batch]
            det_idx = [pos_of[i] for i in batch_ids]
            cln_idx = cleaner.take(len(batch_ids))
            try:
                loss, grads = nnkernel.backward(
                    params, x_cln[cln_idx], x_det[det_idx], cfg.loss
                )
            except NonFiniteLossError as e:
                raise NonFiniteLossError(f"epoch {epoch} step {step}: {e}") from e
            params, opt = nnkernel.adamw_step(
                params, grads, opt,
                lr=cfg.lr, wd=cfg.weight_decay,
                beta1=cfg.betas[0], beta2=cfg.betas[1],
            )

        if epoch % cfg.prune_interval == 0 and state.alive_count() > cfg.target_keep * n0:
            alive = state.alive_ids()
            outs = _score_all(params, x_det, [pos_of[i] for i in alive])
            score_map = {sid: float(v) for sid, v in zip(alive, outs)}
            state = prune(state, score_map, 1.0 - cfg.prune_rate)
            scores_at_last_prune = score_map
            pruned_at_final_epoch = epoch == cfg.epochs
            if epoch < cfg.epochs:
                # fresh weights for the condensed set; skipped at the very
                # end where no training would follow and ranking needs the
                # trained model's outputs
                params = nnkernel.model_init(
                    cfg.arch, derive_seed(cfg.seed, _TAG_MODEL, state.rounds_done)
                )
                opt = OptState.zeros_like(params)

    survivors = state.alive_ids()
    if pruned_at_final_epoch and scores_at_last_prune is not None:
        final_outputs = {sid: scores_at_last_prune[sid] for sid in survivors}
    else:
        outs = _score_all(params, x_det, [pos_of[i] for i in survivors])
        final_outputs = {sid: float(v) for sid, v in zip(survivors, outs)}

    report = rank_scores(state, final_outputs, config=train_config_to_dict(cfg))
    report.wallclock_sec = time.perf_counter() - t_start
    return report
