"""Command-line interface: generate / train-ei / classify / evaluate / bench.

Successful runs exit 0; failures print a machine-readable JSON error object
to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import backend
from .eigenimage import ei_train, save_ei_model
from .errors import FxiSortError
from .metrics import summarize
from .npd import load_dataset, save_dataset
from .pipeline import JobConfig, bench, read_reports_csv, run_batch
from .simulate import RECIPES, build_dataset


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, default=1, help="worker process count")
    p.add_argument("--seed", type=int, default=0, help="job seed")
    p.add_argument(
        "--backend",
        choices=("auto", "compiled", "numpy"),
        default="auto",
        help="kernel backend",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fxi-sort",
        description="Synthesize single-particle diffraction datasets and "
        "classify them with eigen-image or log-likelihood template matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a synthetic dataset recipe")
    g.add_argument("--recipe", choices=RECIPES, required=True)
    g.add_argument("--out", required=True, help="output NPD directory")
    g.add_argument("--voxels", type=int, default=256, help="real-space samples per axis")
    g.add_argument("--photon-budget", type=float, default=1e6)
    g.add_argument(
        "--limit", type=int, default=None, help="truncate frame counts (testing aid)"
    )
    _add_common(g)

    t = sub.add_parser("train-ei", help="train the eigen-image model")
    t.add_argument("--train", required=True, help="training NPD directory")
    t.add_argument("--out", required=True, help="model output directory")
    t.add_argument("--rank", default="all", help="retained eigen-directions or 'all'")
    _add_common(t)

    c = sub.add_parser("classify", help="classify a dataset against a model")
    c.add_argument("--model", required=True, help="EI model dir, or training NPD dir for ll")
    c.add_argument("--data", required=True, help="dataset NPD directory")
    c.add_argument("--method", choices=("ei", "ll"), required=True)
    c.add_argument("--out", required=True, help="results CSV path")
    c.add_argument("--scale-search", action="store_true")
    c.add_argument("--threshold", type=float, default=0.5)
    _add_common(c)

    e = sub.add_parser("evaluate", help="summarize a results CSV against truth")
    e.add_argument("--results", required=True)
    e.add_argument("--truth", required=True, help="truth dataset NPD directory")
    e.add_argument("--out", required=True, help="summary output directory")
    _add_common(e)

    b = sub.add_parser("bench", help="timing benchmark of a classification job")
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--method", choices=("ei", "ll"), required=True)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--scale-search", action="store_true")
    b.add_argument("--threshold", type=float, default=0.5)
    b.add_argument(
        "--compare-backends",
        action="store_true",
        help="run both kernel backends and report the speed ratio",
    )
    _add_common(b)
    return parser


def _cmd_generate(args) -> None:
    ds = build_dataset(
        args.recipe,
        args.seed,
        photon_budget=args.photon_budget,
        n_grid=args.voxels,
        workers=args.workers,
        limit=args.limit,
    )
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} frames to {args.out}")


def _cmd_train_ei(args) -> None:
    rank = args.rank if args.rank == "all" else int(args.rank)
    model = ei_train(load_dataset(args.train), rank)
    save_ei_model(model, args.out)
    print(f"trained rank-{model.rank} model on {model.n_train} frames -> {args.out}")


def _cmd_classify(args) -> None:
    cfg = JobConfig(
        method=args.method,
        model_path=args.model,
        data_path=args.data,
        worker_count=args.workers,
        search_scale=args.scale_search,
        threshold=args.threshold,
        seed=args.seed,
        backend=args.backend,
        output=args.out,
    )
    reports, tp = run_batch(cfg)
    accepted = sum(r.accepted for r in reports)
    print(
        f"classified {tp.frames} frames in {tp.wall_time_s:.2f}s "
        f"({tp.fps:.1f} fps, {tp.mean_latency_ms:.2f} ms/frame); "
        f"{accepted} accepted -> {args.out}"
    )


def _write_table(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _cmd_evaluate(args) -> None:
    reports = read_reports_csv(args.results)
    truths = load_dataset(args.truth)
    summary = summarize(reports, truths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    _write_table(
        out / "table2.csv",
        ["dataset", "method", "benchmark_mean_c", "complete_mean_c"],
        [[summary.recipe, summary.method, summary.benchmark_mean_c, summary.complete_mean_c]],
    )
    labels = sorted(summary.confusion)
    classified = sorted({c for row in summary.confusion.values() for c in row})
    _write_table(
        out / "table3.csv",
        ["true_label"] + classified + ["total"],
        [
            [lab]
            + [summary.confusion[lab].get(c, 0) for c in classified]
            + [sum(summary.confusion[lab].values())]
            for lab in labels
        ],
    )
    _write_table(
        out / "fig3_curves.csv",
        ["center_nm", "count", "mean_c_error", "mean_fluence_error", "mean_abs_diameter_error_nm"],
        [
            [
                b["center_nm"],
                b["count"],
                b["mean_c_error"],
                b["mean_fluence_error"],
                b["mean_abs_diameter_error_nm"],
            ]
            for b in summary.diameter_bins
        ],
    )
    per_frame = out / "per_frame.csv"
    with per_frame.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            list(reports[0].__dataclass_fields__)
            + ["true_label", "true_fluence", "true_diameter_nm", "aspect_ratio"]
        )
        for r in sorted(reports, key=lambda r: r.frame_id):
            meta = truths.meta[r.frame_id]
            w.writerow(
                [getattr(r, f) for f in r.__dataclass_fields__]
                + [meta.label, meta.true_fluence, meta.true_diameter_nm, meta.aspect_ratio]
            )
    print(f"summary tables written to {out}")


def _cmd_bench(args) -> None:
    def one(backend_name: str):
        cfg = JobConfig(
            method=args.method,
            model_path=args.model,
            data_path=args.data,
            worker_count=args.workers,
            search_scale=args.scale_search,
            threshold=args.threshold,
            seed=args.seed,
            backend=backend_name,
        )
        return bench(cfg, repeats=args.repeats)

    if args.compare_backends:
        results = {
            name: one(name) for name in backend.available_backends()
        }
        for name, tp in results.items():
            print(
                f"{name:>9}: {tp.mean_latency_ms:.3f} ms/frame mean, "
                f"{tp.median_latency_ms:.3f} ms median, {tp.fps:.1f} fps"
            )
        if len(results) == 2:
            ratio = results["numpy"].mean_latency_ms / results["compiled"].mean_latency_ms
            print(f"compiled speedup over numpy: {ratio:.2f}x")
    else:
        tp = one(args.backend)
        print(json.dumps(asdict(tp), indent=2))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    backend.set_backend(args.backend)
    handlers = {
        "generate": _cmd_generate,
        "train-ei": _cmd_train_ei,
        "classify": _cmd_classify,
        "evaluate": _cmd_evaluate,
        "bench": _cmd_bench,
    }
    try:
        handlers[args.command](args)
    except FxiSortError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except OSError as exc:
        json.dump({"error": "io", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
