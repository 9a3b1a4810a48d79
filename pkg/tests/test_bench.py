import json

import numpy as np
import pytest

from reidlab import bench
from reidlab.bench import (ThroughputResult, TradeoffEntry, TradeoffReport, build_tradeoff_report,
                           measure_throughput)
from reidlab.errors import BenchmarkError, ConfigurationError, ConsistencyError
from reidlab.evaluation import EvalReport


class FakeClock:
    """Advances a fixed amount per extractor call, so timing is exact."""

    def __init__(self, per_item):
        self.now = 0.0
        self.per_item = per_item

    def __call__(self):
        return self.now

    def work(self, _item):
        self.now += self.per_item


def test_throughput_arithmetic(monkeypatch):
    fake = FakeClock(0.005)
    monkeypatch.setattr(bench, "clock", fake)
    res = measure_throughput("m", fake.work, list(range(100)), warmup_count=5, repetitions=3)
    assert res.items_processed == 300
    assert res.elapsed == pytest.approx(1.5)
    assert res.images_per_second == pytest.approx(200.0)
    assert res.per_repetition_rates == pytest.approx((200.0, 200.0, 200.0))
    assert res.images_per_second == pytest.approx(res.items_processed / res.elapsed, rel=1e-12)


def test_warmup_excluded(monkeypatch):
    fake = FakeClock(0.01)
    calls = []

    def extractor(item):
        calls.append(item)
        # the warm-up calls are much slower and must not affect timing
        fake.now += 10.0 if len(calls) <= 4 else 0.01

    monkeypatch.setattr(bench, "clock", fake)
    res = measure_throughput("m", extractor, list(range(20)), warmup_count=4, repetitions=3)
    assert len(calls) == 4 + 60
    assert res.warmup_items == 4
    assert res.images_per_second == pytest.approx(100.0)


def test_repetitions_and_inputs_validated():
    with pytest.raises(ConfigurationError):
        measure_throughput("m", lambda x: x, [1, 2], repetitions=2)
    with pytest.raises(ConfigurationError):
        measure_throughput("m", lambda x: x, [])


@pytest.mark.parametrize("workers", [1, 3])
def test_failure_reports_index(workers):
    def extractor(item):
        if item == 7:
            raise RuntimeError("boom")

    with pytest.raises(BenchmarkError) as info:
        measure_throughput("m", extractor, list(range(10)), warmup_count=0, workers=workers)
    assert info.value.index == 7


def test_threaded_result_is_tagged():
    res = measure_throughput("mlp", lambda x: x * 2, list(range(50)), workers=2)
    assert res.method == "mlp[threads=2]" and res.workers == 2
    lo, hi = res.spread
    assert 0 < lo <= hi


def test_result_dict_roundtrip():
    res = ThroughputResult("m", 30, 0.5, 60.0, 5, 3, (50.0, 60.0, 70.0), 1, "abc")
    assert ThroughputResult.from_dict(json.loads(json.dumps(res.to_dict()))) == res


def entry(method, map_, rate=100.0, manifest_id=None, tp_id=None):
    report = EvalReport(map_, min(1.0, map_ + 0.1), map_, 10, 0)
    tp = ThroughputResult(method, 30, 0.3, rate, 5, 3, (rate,) * 3, 1, tp_id)
    return TradeoffEntry(method, report, tp, 32, 1000, manifest_id)


def test_report_rows_and_sorting():
    rep = build_tradeoff_report([entry("a", 0.2), entry("b", 0.5), entry("c", 0.2), entry("d", 0.9)],
                                {"id": None})
    assert [r.method for r in rep.rows] == ["d", "b", "a", "c"]
    assert rep.rows[0].map_pct == pytest.approx(90.0)
    assert rep.rows[0].rank1_pct == pytest.approx(90.0)


def test_report_files_roundtrip(tmp_path):
    rep = build_tradeoff_report([entry("x", 0.25, 123.5, "run1"), entry("y", 0.5, 7.0, "run1")],
                                {"id": "run1"})
    rep.write(tmp_path)
    back = TradeoffReport.from_csv(tmp_path / "tradeoff.csv")
    assert back.rows == rep.rows
    doc = json.loads((tmp_path / "tradeoff.json").read_text())
    assert doc["manifest"] == {"id": "run1"} and len(doc["rows"]) == 2
    lines = (tmp_path / "scatter.csv").read_text().splitlines()
    assert lines[0] == "method,images_per_sec,map_pct" and len(lines) == 3


def test_report_rejects_mixed_runs():
    with pytest.raises(ConsistencyError):
        build_tradeoff_report([entry("x", 0.2, manifest_id="run1"),
                               entry("y", 0.3, manifest_id="run2")], {"id": "run1"})
    with pytest.raises(ConsistencyError):
        build_tradeoff_report([entry("x", 0.2, tp_id="run1"), entry("y", 0.3, tp_id="run2")])
    with pytest.raises(ConfigurationError):
        build_tradeoff_report([])


def test_real_timing_is_positive():
    x = np.random.default_rng(0).normal(size=(20, 8))
    res = measure_throughput("sum", np.sum, list(x), warmup_count=2)
    assert res.images_per_second > 0 and res.items_processed == 60
