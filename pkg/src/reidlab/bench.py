"""Feature-extraction throughput and the speed/accuracy trade-off report."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import BenchmarkError, ConfigurationError, ConsistencyError, ParseError
from .evaluation import EvalReport

clock = time.perf_counter


@dataclass(frozen=True)
class ThroughputResult:
    method: str
    items_processed: int
    elapsed: float
    images_per_second: float
    warmup_items: int
    repetitions: int
    per_repetition_rates: tuple
    workers: int = 1
    manifest_id: str | None = None

    @property
    def spread(self) -> tuple:
        return min(self.per_repetition_rates), max(self.per_repetition_rates)

    def to_dict(self):
        d = asdict(self)
        d["per_repetition_rates"] = list(self.per_repetition_rates)
        return d

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        obj["per_repetition_rates"] = tuple(obj["per_repetition_rates"])
        return cls(**obj)


def _run_one(extractor, inputs, offset=0):
    for i, item in enumerate(inputs):
        try:
            extractor(item)
        except Exception as exc:
            raise BenchmarkError(f"extractor failed on input {offset + i}: {exc}",
                                 index=offset + i) from exc


def measure_throughput(method: str, extractor: Callable, inputs: Sequence,
                       warmup_count: int = 5, repetitions: int = 3, workers: int = 1,
                       manifest_id: str | None = None) -> ThroughputResult:
    """Time ``extractor`` over every input, ``repetitions`` times.

    Warm-up calls run first and are excluded. With ``workers > 1`` each
    repetition splits the inputs across a thread pool and the method name is
    tagged so the result is reported separately from single-thread timing.
    """
    if repetitions < 3:
        raise ConfigurationError("at least 3 repetitions are required")
    if not inputs:
        raise ConfigurationError("no inputs to benchmark")
    warm = list(inputs[:warmup_count]) if warmup_count > 0 else []
    _run_one(extractor, warm)

    rates, total = [], 0.0
    pool = None
    if workers > 1:
        method = f"{method}[threads={workers}]"
        chunk = -(-len(inputs) // workers)
        parts = [(inputs[i:i + chunk], i) for i in range(0, len(inputs), chunk)]
        pool = ThreadPoolExecutor(max_workers=workers)
    try:
        for _ in range(repetitions):
            start = clock()
            if pool is not None:
                for fut in [pool.submit(_run_one, extractor, p, off) for p, off in parts]:
                    fut.result()
            else:
                _run_one(extractor, inputs)
            elapsed = clock() - start
            total += elapsed
            rates.append(len(inputs) / elapsed)
    finally:
        if pool is not None:
            pool.shutdown()
    items = len(inputs) * repetitions
    return ThroughputResult(method, items, total, items / total, len(warm), repetitions,
                            tuple(rates), workers, manifest_id)


TRADEOFF_COLUMNS = ["method", "rank1_pct", "rank5_pct", "map_pct", "images_per_sec",
                    "feature_dim", "param_count"]


@dataclass(frozen=True)
class TradeoffRow:
    method: str
    rank1_pct: float
    rank5_pct: float
    map_pct: float
    images_per_sec: float
    feature_dim: int
    param_count: int | None = None


@dataclass(frozen=True)
class TradeoffEntry:
    """Inputs for one report row; ``manifest_id`` ties it to a run."""

    method: str
    eval_report: EvalReport
    throughput: ThroughputResult
    feature_dim: int
    param_count: int | None = None
    manifest_id: str | None = None


@dataclass
class TradeoffReport:
    rows: list
    manifest: dict = field(default_factory=dict)

    def write(self, directory):
        """Write ``tradeoff.csv``, ``tradeoff.json`` and ``scatter.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.to_csv(directory / "tradeoff.csv")
        with open(directory / "tradeoff.json", "w", encoding="utf-8") as fh:
            json.dump({"rows": [asdict(r) for r in self.rows], "manifest": self.manifest},
                      fh, indent=1)
            fh.write("\n")
        with open(directory / "scatter.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "images_per_sec", "map_pct"])
            for r in self.rows:
                writer.writerow([r.method, repr(r.images_per_sec), repr(r.map_pct)])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRADEOFF_COLUMNS)
            for r in self.rows:
                writer.writerow([r.method, repr(r.rank1_pct), repr(r.rank5_pct), repr(r.map_pct),
                                 repr(r.images_per_sec), r.feature_dim,
                                 "" if r.param_count is None else r.param_count])

    @classmethod
    def from_csv(cls, path, manifest=None) -> "TradeoffReport":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != TRADEOFF_COLUMNS:
                raise ParseError(f"{path}: unexpected trade-off header", line=1)
            for lineno, rec in enumerate(reader, start=2):
                try:
                    rows.append(TradeoffRow(rec[0], float(rec[1]), float(rec[2]), float(rec[3]),
                                            float(rec[4]), int(rec[5]),
                                            int(rec[6]) if rec[6] else None))
                except (ValueError, IndexError) as exc:
                    raise ParseError(f"{path}: {exc}", line=lineno) from None
        return cls(rows, manifest or {})


def build_tradeoff_report(entries: Sequence[TradeoffEntry], manifest: dict | None = None) -> TradeoffReport:
    """One row per entry, sorted by mAP descending (stable on ties).

    Entries whose ``manifest_id`` (on the entry or its throughput result)
    differs from ``manifest["id"]`` are rejected.
    """
    if not entries:
        raise ConfigurationError("a trade-off report needs at least one row")
    manifest = dict(manifest or {})
    expected = manifest.get("id")
    rows = []
    for e in entries:
        ids = {e.manifest_id, e.throughput.manifest_id} - {None}
        if expected is not None and ids and ids != {expected}:
            raise ConsistencyError(
                f"row {e.method!r} comes from run {sorted(ids)}, report is for {expected!r}")
        rows.append(TradeoffRow(e.method, 100.0 * e.eval_report.rank1, 100.0 * e.eval_report.rank5,
                                100.0 * e.eval_report.map, e.throughput.images_per_second,
                                int(e.feature_dim), e.param_count))
    if expected is None:
        seen = {i for e in entries for i in (e.manifest_id, e.throughput.manifest_id)} - {None}
        if len(seen) > 1:
            raise ConsistencyError(f"entries come from different runs: {sorted(seen)}")
    rows.sort(key=lambda r: -r.map_pct)
    return TradeoffReport(rows, manifest)
