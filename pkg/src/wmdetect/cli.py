"""Command-line surface: corpus -> embed -> detect -> eval, plus ablations.

Exit codes: 0 success, 2 usage or validation error, 3 I/O error,
4 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .baselines import BASELINE_METHODS, score_dataset
from .corpus import (
    MANIFEST_NAME,
    CorpusError,
    CorpusSpec,
    Manifest,
    build_detection_set,
    load_dataset,
    synth_corpus,
)
from .losses import LOSS_MAX_KINDS, LOSS_MIN_KINDS, LossConfig
from .metrics import UndefinedMetricError, auc, roc_metrics, write_metrics_json
from .nnkernel import NonFiniteLossError
from .offsetlearn import (
    ConfigError,
    TrainConfig,
    read_scores_csv,
    run_wmd,
    train_config_from_dict,
    write_scores_csv,
)
from .svgplot import svg_heatmap, svg_line_chart
from .watermarks import METHOD_NAMES, WatermarkMethod

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


def _load_config(path) -> tuple[TrainConfig, dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from e
    return train_config_from_dict(raw, allow_paths=True)


def _require(value, flag: str, cfg_value=None):
    """CLI flag wins over the config-file path; one of them must be set."""
    got = value if value is not None else cfg_value
    if got is None:
        raise UsageError(f"missing required {flag}")
    return got


def _parse_methods(spec: str) -> list[tuple[WatermarkMethod, float]]:
    methods = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, weight = part.partition(":")
        if name not in METHOD_NAMES:
            raise UsageError(f"unknown watermark method {name!r} (choose from {METHOD_NAMES})")
        if not weight:
            raise UsageError(f"method {name!r} needs a weight, e.g. {name}:0.25")
        try:
            methods.append((WatermarkMethod(name), float(weight)))
        except ValueError as e:
            raise UsageError(str(e)) from e
    if not methods:
        raise UsageError("--methods must name at least one method")
    total = sum(w for _, w in methods)
    if abs(total - 1.0) > 1e-9:
        raise UsageError(f"method weights must sum to 1, got {total}")
    return methods


def _worker_count(n_jobs: int) -> int:
    cap = os.environ.get("WMD_THREADS", "1")
    try:
        cap_n = max(1, int(cap))
    except ValueError:
        raise UsageError(f"WMD_THREADS must be an integer, got {cap!r}")
    return max(1, min(n_jobs, cap_n))


# ---------------------------------------------------------------------------
# commands


def cmd_synth_corpus(args) -> int:
    if args.size < 16 or args.size % 2 or args.size % 8:
        raise UsageError("size must be even and divisible by 8")
    if args.count < 0:
        raise UsageError("count must be >= 0")
    spec = CorpusSpec(n=args.count, size=args.size, seed=args.seed)
    names = synth_corpus(spec, args.out)
    print(f"wrote {len(names)} images to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    methods = _parse_methods(args.methods)
    if not 0.0 <= args.ratio <= 1.0:
        raise UsageError("ratio must be in [0, 1]")
    images = load_dataset(args.in_dir)
    manifest = build_detection_set(images, methods, args.ratio, args.seed, args.out)
    marked = sum(r.watermarked for r in manifest.records)
    per_method: dict[str, int] = {}
    for r in manifest.records:
        if r.watermarked:
            per_method[r.method] = per_method.get(r.method, 0) + 1
    print(
        f"wrote {len(manifest.records)} images to {args.out} "
        f"({marked} watermarked: {per_method}); manifest at {Path(args.out) / MANIFEST_NAME}"
    )
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg, paths = _load_config(args.config)
    detection_dir = _require(args.detection, "--detection", paths.get("detection_dir"))
    clean_dir = _require(args.clean, "--clean", paths.get("clean_dir"))
    # labels stay out of reach: only *.png files are read, never a manifest
    detection = load_dataset(detection_dir)
    clean = load_dataset(clean_dir)
    report = run_wmd(detection, clean, cfg)
    report.write_json(args.out)
    report.write_csv(args.scores)
    print(
        f"scored {len(report.samples)} samples ({len(report.survivors)} survivors, "
        f"{report.prune_rounds} pruning rounds) in {report.wallclock_sec:.1f}s; "
        f"wrote {args.out} and {args.scores}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    rows = read_scores_csv(args.scores)
    manifest = Manifest.load(args.manifest)
    labels = manifest.labels()
    score_ids = {r["id"] for r in rows}
    missing_in_scores = sorted(set(labels) - score_ids)
    missing_in_manifest = sorted(score_ids - set(labels))
    if missing_in_scores or missing_in_manifest:
        raise UsageError(
            f"id mismatch between scores and manifest "
            f"(missing in scores: {missing_in_scores[:5]}, "
            f"missing in manifest: {missing_in_manifest[:5]})"
        )
    scores = [r["rank_score"] for r in rows]
    y = [labels[r["id"]] for r in rows]
    try:
        metrics = roc_metrics(scores, y)
    except UndefinedMetricError as e:
        raise UsageError(f"undefined ROC: {e}") from e
    write_metrics_json(metrics, args.out)
    print(
        f"auc={metrics['auc']:.4f} tpr_at_fpr10={metrics['tpr_at_fpr10']:.4f} "
        f"fpr_at_tpr90={metrics['fpr_at_tpr90']:.4f} -> {args.out}"
    )
    return EXIT_OK


def cmd_baseline(args) -> int:
    dataset = load_dataset(args.detection)
    rows = score_dataset(dataset, args.method)
    write_scores_csv(args.out, rows)
    print(f"wrote {len(rows)} {args.method} scores to {args.out}")
    return EXIT_OK


def _auc_against_manifest(report, manifest: Manifest) -> float:
    labels = manifest.labels()
    scores = report.scores_by_id()
    ids = sorted(scores)
    return auc([scores[i] for i in ids], [labels[i] for i in ids])


def cmd_ablate_loss(args) -> int:
    cfg, paths = _load_config(args.config)
    detection_dir = _require(args.detection, "--detection", paths.get("detection_dir"))
    clean_dir = _require(args.clean, "--clean", paths.get("clean_dir"))
    manifest = Manifest.load(Path(detection_dir) / MANIFEST_NAME)
    detection = load_dataset(detection_dir)
    clean = load_dataset(clean_dir)

    cells = [
        (mk, xk, cfg.seed + k)
        for mk in LOSS_MIN_KINDS
        for xk in LOSS_MAX_KINDS
        for k in range(args.seeds)
    ]

    def run_cell(cell):
        mk, xk, seed = cell
        try:
            run_cfg = replace(cfg, seed=seed, loss=LossConfig(mk, xk, cfg.loss.tau))
            report = run_wmd(detection, clean, run_cfg)
            return cell, _auc_against_manifest(report, manifest)
        except Exception as e:  # a diverging cell must not sink the grid
            print(f"cell min={mk} max={xk} seed={seed} failed: {e}", file=sys.stderr)
            return cell, float("nan")

    workers = _worker_count(len(cells))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(run_cell, cells))
    else:
        results = dict(map(run_cell, cells))

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("min_kind,max_kind,seed,auc\n")
        for cell in cells:
            mk, xk, seed = cell
            fh.write(f"{mk},{xk},{seed},{results[cell]:.6g}\n")
    print(f"wrote {len(cells)} grid rows to {args.out}")

    if args.svg:
        grid = []
        for xk in LOSS_MAX_KINDS:
            row = []
            for mk in LOSS_MIN_KINDS:
                vals = [results[(mk, xk, cfg.seed + k)] for k in range(args.seeds)]
                finite = [v for v in vals if not math.isnan(v)]
                row.append(sum(finite) / len(finite) if finite else float("nan"))
            grid.append(row)
        svg = svg_heatmap(
            grid,
            row_labels=LOSS_MAX_KINDS,
            col_labels=LOSS_MIN_KINDS,
            title="Detection AUC by loss pair",
            row_title="maximize kind",
            col_title="minimize kind",
        )
        Path(args.svg).write_text(svg, encoding="utf-8")
        print(f"wrote heatmap to {args.svg}")
    return EXIT_OK


def cmd_ablate_prune(args) -> int:
    try:
        rates = [float(r) for r in args.rates.split(",") if r.strip()]
    except ValueError as e:
        raise UsageError(f"bad --rates: {e}") from e
    if not rates or any(not 0.0 < r < 1.0 for r in rates):
        raise UsageError("--rates must be a comma list of values in (0, 1)")
    cfg, paths = _load_config(args.config)
    detection_dir = _require(args.detection, "--detection", paths.get("detection_dir"))
    clean_dir = _require(args.clean, "--clean", paths.get("clean_dir"))
    # evaluation-only ground truth; never fed into run_wmd
    manifest = Manifest.load(Path(detection_dir) / MANIFEST_NAME)
    labels = manifest.labels()
    detection = load_dataset(detection_dir)
    clean = load_dataset(clean_dir)

    jobs = [(rate, cfg.seed + k) for rate in rates for k in range(args.seeds)]

    def run_job(job):
        rate, seed = job
        report = run_wmd(detection, clean, replace(cfg, prune_rate=rate, seed=seed))
        return job, report

    workers = _worker_count(len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(run_job, jobs))
    else:
        results = dict(map(run_job, jobs))

    rows = []
    curves: dict[float, tuple[list[int], list[int]]] = {}
    aucs: dict[float, list[float]] = {}
    walls: dict[float, list[float]] = {}
    for rate, seed in jobs:
        report = results[(rate, seed)]
        cell_auc = _auc_against_manifest(report, manifest)
        aucs.setdefault(rate, []).append(cell_auc)
        walls.setdefault(rate, []).append(report.wallclock_sec)
        by_round: dict[int, int] = {}
        for s in report.samples:
            if s.removal_round is not None and labels[s.id]:
                by_round[s.removal_round] = by_round.get(s.removal_round, 0) + 1
        cum = 0
        cum_by_round = []
        for rnd in range(1, report.prune_rounds + 1):
            cum += by_round.get(rnd, 0)
            cum_by_round.append(cum)
        for rnd, c in enumerate(cum_by_round, start=1):
            rows.append((rate, seed, cell_auc, report.wallclock_sec, rnd, c))
        if not cum_by_round:
            rows.append((rate, seed, cell_auc, report.wallclock_sec, 0, 0))
        if seed == cfg.seed:
            curves[rate] = (list(range(1, len(cum_by_round) + 1)), cum_by_round)

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("rate,seed,auc,wallclock_sec,round,cum_pruned_watermarked\n")
        for rate, seed, a, wall, rnd, c in rows:
            fh.write(f"{rate:g},{seed},{a:.6g},{wall:.3f},{rnd},{c}\n")
    print(f"wrote {len(rows)} rows to {args.out}")

    if args.svg:
        rates_sorted = sorted(rates)
        mean = lambda xs: sum(xs) / len(xs)
        panel_a = svg_line_chart(
            [("auc", rates_sorted, [mean(aucs[r]) for r in rates_sorted])],
            "AUC vs pruning rate", "pruning rate", "AUC",
        )
        panel_b = svg_line_chart(
            [(f"rate {r:g}", curves[r][0], curves[r][1]) for r in rates_sorted if curves[r][0]],
            "Cumulative pruned watermarked", "pruning round", "count",
        )
        panel_c = svg_line_chart(
            [("wallclock", rates_sorted, [mean(walls[r]) for r in rates_sorted])],
            "Training wallclock vs pruning rate", "pruning rate", "seconds",
        )
        width = 3 * 430 + 20
        svg = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="310">'
            f'<g transform="translate(0,0)">{panel_a}</g>'
            f'<g transform="translate(430,0)">{panel_b}</g>'
            f'<g transform="translate(860,0)">{panel_c}</g>'
            f"</svg>"
        )
        Path(args.svg).write_text(svg, encoding="utf-8")
        print(f"wrote figure to {args.svg}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wmdetect",
        description="Detect invisibly watermarked images in a dataset without "
        "knowing the watermarking method.",
    )
    p.add_argument("--version", action="version", version=f"wmdetect {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-corpus", help="generate a deterministic synthetic image corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=1)
    sp.set_defaults(func=cmd_synth_corpus)

    sp = sub.add_parser("embed", help="watermark a fraction of a corpus and write a manifest")
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--methods", default="lsb:0.25,dds:0.25,ss:0.25,ring:0.25")
    sp.add_argument("--ratio", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=1)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("detect", help="train the detector and score every detection image")
    sp.add_argument("--detection")
    sp.add_argument("--clean")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--scores", required=True)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("eval", help="join scores with a manifest and compute ROC metrics")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("baseline", help="naive statistical scores over a detection set")
    sp.add_argument("--method", choices=BASELINE_METHODS, required=True)
    sp.add_argument("--detection", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("ablate-loss", help="run the full minimize x maximize loss grid")
    sp.add_argument("--detection")
    sp.add_argument("--clean")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--svg")
    sp.add_argument("--seeds", type=int, default=1)
    sp.set_defaults(func=cmd_ablate_loss)

    sp = sub.add_parser("ablate-prune", help="sweep pruning rates")
    sp.add_argument("--rates", default="0.01,0.1,0.3,0.5")
    sp.add_argument("--detection")
    sp.add_argument("--clean")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--svg")
    sp.add_argument("--seeds", type=int, default=1)
    sp.set_defaults(func=cmd_ablate_prune)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, CorpusError, UndefinedMetricError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
