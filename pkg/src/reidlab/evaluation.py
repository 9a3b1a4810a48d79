"""Query-vs-gallery ranking, CMC rank-k accuracy and mean average precision."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dataset import FeatureDataset, LabeledFeature
from .errors import ProtocolError, ShapeError
from .metric import MahalanobisModel, XqdaModel, squared_distances


@dataclass(frozen=True)
class ProtocolConfig:
    """``metric=None`` ranks by Euclidean distance; otherwise by the model's quadratic form."""

    exclude_same_camera_positives: bool = True
    metric: MahalanobisModel | XqdaModel | None = None

    @property
    def distance_name(self) -> str:
        if self.metric is None:
            return "euclidean"
        return "xqda" if isinstance(self.metric, XqdaModel) else "mahalanobis"

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        return X if self.metric is None else self.metric.transform(X)

    @property
    def kernel(self):
        return None if self.metric is None else self.metric.kernel


@dataclass(frozen=True)
class RankedList:
    query_id: int
    query_camera: int
    indices: np.ndarray
    distances: np.ndarray
    relevant: np.ndarray


def _rank(q_vec, q_id, q_cam, g_vecs, g_ids, g_cams, protocol) -> RankedList:
    keep = np.ones(len(g_ids), dtype=bool)
    if protocol.exclude_same_camera_positives:
        keep &= ~((g_ids == q_id) & (g_cams == q_cam))
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        raise ProtocolError(f"empty gallery for query id={q_id} camera={q_cam}")
    d = squared_distances(q_vec, g_vecs[idx], protocol.kernel)
    order = np.lexsort((idx, d))
    idx = idx[order]
    return RankedList(int(q_id), int(q_cam), idx, d[order], g_ids[idx] == q_id)


def rank_gallery(query: LabeledFeature, gallery: FeatureDataset,
                 protocol: ProtocolConfig = ProtocolConfig()) -> RankedList:
    """Gallery indices sorted by ascending distance, ties by ascending index."""
    q = protocol.transform(query.vector)
    g = protocol.transform(gallery.vectors)
    if q.shape[-1] != g.shape[-1]:
        raise ShapeError("query and gallery dimensionalities differ")
    return _rank(q, query.id, query.camera, g, gallery.ids, gallery.cameras, protocol)


def first_hit(relevant) -> int | None:
    """1-based rank of the first relevant entry, or None."""
    hits = np.flatnonzero(relevant)
    return int(hits[0]) + 1 if len(hits) else None


def cmc_at_k(ranked_lists: Sequence[RankedList], k: int) -> float:
    """Fraction of queries (with at least one positive) matched within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = [first_hit(r.relevant) for r in ranked_lists]
    ranks = [r for r in ranks if r is not None]
    if not ranks:
        return 0.0
    return sum(r <= k for r in ranks) / len(ranks)


def average_precision(relevant) -> float | None:
    """Mean of precision@k over the relevant positions; None when nothing is relevant."""
    relevant = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(relevant)
    if len(hits) == 0:
        return None
    precisions = np.arange(1, len(hits) + 1) / (hits + 1)
    # cumsum accumulates left to right, so results are reproducible bit for bit
    return float(np.cumsum(precisions)[-1] / len(hits))


@dataclass(frozen=True)
class EvalReport:
    rank1: float
    rank5: float
    map: float
    num_queries: int
    num_skipped: int

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(float(obj["rank1"]), float(obj["rank5"]), float(obj["map"]),
                   int(obj["num_queries"]), int(obj["num_skipped"]))

    def to_json(self, path, extra=None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rank1", "rank5", "map", "num_queries", "num_skipped"])
            writer.writerow([repr(self.rank1), repr(self.rank5), repr(self.map),
                             self.num_queries, self.num_skipped])

    def format_row(self, method: str, metric: str = "") -> str:
        cells = [method] + ([metric] if metric else [])
        return " & ".join(cells + [f"{100 * self.rank1:.2f}", f"{100 * self.map:.2f}"])


def rank_all(queries: FeatureDataset, gallery: FeatureDataset,
             protocol: ProtocolConfig = ProtocolConfig()) -> list[RankedList]:
    q = protocol.transform(queries.vectors)
    g = protocol.transform(gallery.vectors)
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != gallery dim {g.shape[1]}")
    return [_rank(q[i], queries.ids[i], queries.cameras[i], g, gallery.ids, gallery.cameras,
                  protocol) for i in range(len(queries))]


def evaluate(queries: FeatureDataset, gallery: FeatureDataset,
             protocol: ProtocolConfig = ProtocolConfig()) -> EvalReport:
    ranked = rank_all(queries, gallery, protocol)
    aps = []
    for r in ranked:
        ap = average_precision(r.relevant)
        if ap is not None:
            aps.append(ap)
    skipped = len(ranked) - len(aps)
    if not aps:
        raise ProtocolError("no query has a valid positive in the gallery")
    return EvalReport(cmc_at_k(ranked, 1), cmc_at_k(ranked, 5), float(sum(aps) / len(aps)),
                      len(ranked), skipped)
