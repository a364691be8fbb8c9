"""Batch classification engine, timing, and the results CSV schema.

Work is distributed frame-parallel over a process pool; each worker loads
the immutable model once and memory-maps the dataset, so peak memory grows
with the model plus a bounded number of in-flight frames.  Classification
is a pure function of (model, frame), so results are identical for any
worker count; outputs are returned in input order.

Wall-clock throughput is measured over the steady-state processing phase
(pool spin-up and model loading excluded); per-frame latency is the CPU
time of the classification call itself, excluding frame I/O.
"""

from __future__ import annotations

import csv
import math
import multiprocessing as mp
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import backend
from .errors import ContractError, DomainError
from .eigenimage import ei_classify, load_ei_model
from .loglikelihood import LlModel, ll_classify
from .metrics import MatchReport, TemplateMatch, apply_threshold, c_error
from .npd import load_dataset
from .pattern import Dataset, Pattern

METHODS = ("ei", "ll")

CSV_COLUMNS = (
    "frame_id",
    "method",
    "matched_id",
    "matched_label",
    "score",
    "phi_hat",
    "scale_hat",
    "diameter_hat",
    "c_error",
    "accepted",
)


@dataclass(frozen=True)
class JobConfig:
    """One batch-classification job."""

    method: str
    model_path: str
    data_path: str
    worker_count: int = 1
    search_scale: bool = False
    threshold: float = 0.5
    seed: int = 0
    backend: str = "auto"
    output: Optional[str] = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise DomainError(f"method must be one of {METHODS}")
        if self.worker_count < 1:
            raise DomainError("worker_count must be at least 1")
        if self.threshold <= 0:
            raise DomainError("threshold must be positive")


@dataclass
class ThroughputReport:
    """Timing summary of one batch run."""

    frames: int
    wall_time_s: float
    fps: float
    mean_latency_ms: float
    median_latency_ms: float
    worker_count: int
    backend: str
    machine: dict = field(default_factory=dict)
    utilization: Optional[float] = None


class _Engine:
    """Loaded model plus its template set, shared by both methods."""

    def __init__(self, method: str, model_path: str):
        self.method = method
        if method == "ei":
            self._model = load_ei_model(model_path)
            self.templates = self._model.templates
            self._fn: Callable[[Pattern], TemplateMatch] = lambda p: ei_classify(
                self._model, p
            )
        else:
            templates = load_dataset(model_path)
            self._model = LlModel(templates)
            self.templates = templates
            self._fn = lambda p: ll_classify(self._model, p)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.templates.shape

    def classify(self, p: Pattern) -> TemplateMatch:
        return self._fn(p)

    def template_pattern(self, k: int) -> Pattern:
        return self.templates[k]


def frame_seed(job_seed: int, frame_id: int) -> int:
    """Per-frame seed derived from the job seed and the frame id.

    Any randomized per-frame work inside a job must draw from a generator
    seeded this way, so results stay independent of worker count and
    scheduling.  Classification itself is deterministic and does not
    consume it.
    """
    return int(
        np.random.SeedSequence(
            entropy=job_seed, spawn_key=(frame_id,)
        ).generate_state(1)[0]
    )


def _error_report(frame_id: int, method: str) -> MatchReport:
    nan = float("nan")
    return MatchReport(
        frame_id=frame_id,
        method=method,
        matched_id=-1,
        matched_label="error",
        score=nan,
        phi_hat=nan,
        scale_hat=nan,
        diameter_hat=nan,
        c_error=float("inf"),
        accepted=False,
    )


def _classify_one(
    engine: _Engine,
    frames: np.ndarray,
    mask: np.ndarray,
    i: int,
    search_scale: bool,
    threshold: float,
) -> tuple[MatchReport, float]:
    method = engine.method
    try:
        arr = np.asarray(frames[i], dtype=np.float64)
        pat = Pattern(data=arr, mask=mask)
    except Exception:
        return _error_report(i, method), 0.0
    t0 = time.perf_counter()
    try:
        match = engine.classify(pat)
        template = engine.template_pattern(match.matched_id)
        c_val, s_best, phi = c_error(pat, template, search_scale)
        latency = time.perf_counter() - t0
        t_diam = match.template_meta.true_diameter_nm
        diameter = t_diam / s_best if t_diam else float("nan")
        report = MatchReport(
            frame_id=i,
            method=method,
            matched_id=match.matched_id,
            matched_label=match.matched_label,
            score=match.score,
            phi_hat=phi,
            scale_hat=s_best,
            diameter_hat=diameter,
            c_error=c_val,
            accepted=True,
        )
        return apply_threshold(report, threshold), latency
    except Exception:
        return _error_report(i, method), time.perf_counter() - t0


_W_ENGINE: Optional[_Engine] = None
_W_DATA: Optional[Dataset] = None
_W_CFG: Optional[JobConfig] = None


def _worker_init(cfg: JobConfig) -> None:
    global _W_ENGINE, _W_DATA, _W_CFG
    backend.set_backend(cfg.backend)
    _W_CFG = cfg
    _W_ENGINE = _Engine(cfg.method, cfg.model_path)
    _W_DATA = load_dataset(cfg.data_path, mmap=True)


def _worker_chunk(indices: Sequence[int]) -> list[tuple[int, MatchReport, float]]:
    out = []
    for i in indices:
        report, latency = _classify_one(
            _W_ENGINE,
            _W_DATA.frames,
            _W_DATA.mask,
            i,
            _W_CFG.search_scale,
            _W_CFG.threshold,
        )
        out.append((i, report, latency))
    return out


def _machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def run_batch(cfg: JobConfig) -> tuple[list[MatchReport], ThroughputReport]:
    """Classify every frame of the dataset under ``cfg``.

    Returns reports in frame order plus the timing summary.  Frames that
    fail validation yield error records (matched_id -1) without aborting
    the job; a model/dataset shape mismatch aborts up front.
    """
    backend.set_backend(cfg.backend)
    engine = _Engine(cfg.method, cfg.model_path)
    data = load_dataset(cfg.data_path, mmap=True)
    if data.shape != engine.frame_shape:
        raise ContractError(
            f"dataset frames {data.shape} do not match model {engine.frame_shape}"
        )
    n = len(data)
    results: list[Optional[tuple[MatchReport, float]]] = [None] * n

    if cfg.worker_count == 1:
        t_start = time.perf_counter()
        for i in range(n):
            report, latency = _classify_one(
                engine, data.frames, data.mask, i, cfg.search_scale, cfg.threshold
            )
            results[i] = (report, latency)
        wall = time.perf_counter() - t_start
    else:
        ctx = (
            mp.get_context("fork")
            if "fork" in mp.get_all_start_methods()
            else None
        )
        chunk = max(1, math.ceil(n / (cfg.worker_count * 4)))
        chunks = [list(range(i, min(i + chunk, n))) for i in range(0, n, chunk)]
        with ProcessPoolExecutor(
            max_workers=cfg.worker_count,
            mp_context=ctx,
            initializer=_worker_init,
            initargs=(cfg,),
        ) as pool:
            # One tiny task per worker forces initialization before timing.
            list(pool.map(_worker_chunk, [[]] * cfg.worker_count))
            t_start = time.perf_counter()
            for part in pool.map(_worker_chunk, chunks):
                for i, report, latency in part:
                    results[i] = (report, latency)
            wall = time.perf_counter() - t_start

    reports = [r[0] for r in results]  # type: ignore[index]
    latencies = np.array([r[1] for r in results])  # type: ignore[index]
    throughput = ThroughputReport(
        frames=n,
        wall_time_s=wall,
        fps=n / wall if wall > 0 else float("inf"),
        mean_latency_ms=float(latencies.mean() * 1e3),
        median_latency_ms=float(np.median(latencies) * 1e3),
        worker_count=cfg.worker_count,
        backend=backend.backend_name(),
        machine=_machine_descriptor(),
        utilization=float(latencies.sum() / (cfg.worker_count * wall)) if wall > 0 else None,
    )
    if cfg.output:
        write_reports_csv(reports, cfg.output)
    return reports, throughput


def bench(cfg: JobConfig, repeats: int = 3) -> ThroughputReport:
    """Median-of-repeats timing with a discarded warm-up pass.

    Classification outputs must be identical across repeats; a mismatch
    raises, since it would mean the pipeline is not deterministic.
    """
    if repeats < 3:
        raise DomainError("bench needs at least 3 repeats")
    cfg = replace(cfg, output=None)
    reference, _ = run_batch(cfg)
    ref_rows = _csv_rows(reference)
    walls = []
    mean_lat = []
    median_lat = []
    for _ in range(repeats):
        reports, tp = run_batch(cfg)
        if _csv_rows(reports) != ref_rows:
            raise ContractError("non-deterministic outputs across bench repeats")
        walls.append(tp.wall_time_s)
        mean_lat.append(tp.mean_latency_ms)
        median_lat.append(tp.median_latency_ms)
    wall = float(np.median(walls))
    return ThroughputReport(
        frames=len(reference),
        wall_time_s=wall,
        fps=len(reference) / wall if wall > 0 else float("inf"),
        mean_latency_ms=float(np.median(mean_lat)),
        median_latency_ms=float(np.median(median_lat)),
        worker_count=cfg.worker_count,
        backend=backend.backend_name(),
        machine=_machine_descriptor(),
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _csv_rows(reports: Sequence[MatchReport]) -> list[tuple[str, ...]]:
    return [tuple(_fmt(getattr(r, col)) for col in CSV_COLUMNS) for r in reports]


def write_reports_csv(reports: Sequence[MatchReport], path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        writer.writerows(_csv_rows(reports))
    return p


def read_reports_csv(path) -> list[MatchReport]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ContractError(f"unexpected results CSV columns in {path}")
        for row in reader:
            out.append(
                MatchReport(
                    frame_id=int(row["frame_id"]),
                    method=row["method"],
                    matched_id=int(row["matched_id"]),
                    matched_label=row["matched_label"],
                    score=float(row["score"]),
                    phi_hat=float(row["phi_hat"]),
                    scale_hat=float(row["scale_hat"]),
                    diameter_hat=float(row["diameter_hat"]),
                    c_error=float(row["c_error"]),
                    accepted=row["accepted"] == "true",
                )
            )
    return out
