"""Temperature-based knowledge distillation.

Student loss per example::

    H(p_teacher(T), p_student(T)) + lam * H(onehot(label), p_student(1))

with ``H(p, q) = -sum p log q``. The soft term carries no T**2 factor unless
``DistillConfig.t2_scaling`` is set.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import FeatureDataset
from .errors import ConfigurationError, ParseError, ShapeError, UsageError
from .evaluation import EvalReport, ProtocolConfig, evaluate
from .neural import (MlpNetwork, MlpSpec, TrainConfig, TrainLog, check_labels, extract_deep_features,
                     fit_loop, forward, init_network, train_classifier)

DEFAULT_TEMPERATURES = (1, 2, 3, 4, 5, 10, 15, 20, 25, 30)
DEFAULT_LAMBDAS = (0.0001, 0.001, 0.01)


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 3.0
    lam: float = 0.0001
    train: TrainConfig = TrainConfig()
    t2_scaling: bool = False

    def __post_init__(self):
        if not self.temperature >= 1.0:
            raise ConfigurationError(f"temperature must be >= 1, got {self.temperature}")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ConfigurationError(f"lambda must be finite and >= 0, got {self.lam}")


@dataclass(frozen=True)
class SweepSpec:
    temperatures: tuple = DEFAULT_TEMPERATURES
    lambdas: tuple = DEFAULT_LAMBDAS
    seeds: tuple = (0,)

    def __post_init__(self):
        for name in ("temperatures", "lambdas", "seeds"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigurationError(f"sweep grid '{name}' is empty")
            object.__setattr__(self, name, values)


def tempered_softmax(z, T: float = 1.0) -> np.ndarray:
    """``exp(z_i / T) / sum_j exp(z_j / T)`` along the last axis."""
    if T <= 0:
        raise ConfigurationError("temperature must be positive")
    scaled = np.asarray(z, dtype=np.float64) / T
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def _log_tempered_softmax(z, T):
    scaled = np.asarray(z, dtype=np.float64) / T
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    return scaled - np.log(np.exp(scaled).sum(axis=-1, keepdims=True))


def entropy(p) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities must sum to 1, got {p.sum()!r}")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def cross_entropy(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float(-(p[mask] * np.log(q[mask])).sum())


def distillation_terms(teacher_logits, student_logits, labels, cfg: DistillConfig):
    """Batch-mean soft term, batch-mean weighted hard term and the gradient.

    Inputs are ``(B, C)`` logits and ``B`` labels; the gradient is wrt the
    student logits and already divided by ``B``.
    """
    zt = np.asarray(teacher_logits, dtype=np.float64)
    zs = np.asarray(student_logits, dtype=np.float64)
    if zt.shape != zs.shape or zs.ndim != 2:
        raise ShapeError(f"teacher {zt.shape} and student {zs.shape} logits must match")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(zs),) or np.any(labels < 0) or np.any(labels >= zs.shape[1]):
        raise ShapeError("labels must be valid class indices, one per row")
    T = cfg.temperature
    rows = np.arange(len(zs))
    p_t = tempered_softmax(zt, T)
    log_ps_T = _log_tempered_softmax(zs, T)
    log_ps_1 = _log_tempered_softmax(zs, 1.0)

    soft = -(p_t * log_ps_T).sum(axis=1)
    hard = -log_ps_1[rows, labels]
    grad_soft = (np.exp(log_ps_T) - p_t) / T
    if cfg.t2_scaling:
        soft = soft * T * T
        grad_soft = grad_soft * T * T
    grad_hard = np.exp(log_ps_1)
    grad_hard[rows, labels] -= 1.0
    grad = (grad_soft + cfg.lam * grad_hard) / len(zs)
    return float(soft.mean()), float(cfg.lam * hard.mean()), grad


def distillation_loss(teacher_logits, student_logits, hard_label, cfg: DistillConfig):
    """Student loss and its gradient wrt the student logits.

    Accepts a single logit vector with an integer label or a batch; batch
    results are means over rows.
    """
    single = np.ndim(student_logits) == 1
    zt = np.atleast_2d(teacher_logits)
    zs = np.atleast_2d(student_logits)
    soft, hard, grad = distillation_terms(zt, zs, np.atleast_1d(hard_label), cfg)
    return soft + hard, (grad[0] if single else grad)


@dataclass(frozen=True)
class TeacherOutputs:
    logits: np.ndarray

    def __len__(self):
        return len(self.logits)


def cache_teacher_outputs(teacher: MlpNetwork, inputs) -> TeacherOutputs:
    """Raw teacher logits for every training row, in row order."""
    logits, _ = forward(teacher, np.atleast_2d(np.asarray(inputs, dtype=np.float64)))
    logits = np.array(logits)
    logits.setflags(write=False)
    return TeacherOutputs(logits)


def train_student_with_distillation(teacher_outputs: TeacherOutputs, student_spec: MlpSpec,
                                    X, labels, cfg: DistillConfig,
                                    init: MlpNetwork | None = None):
    """Mini-batch momentum SGD on the distillation loss.

    Teacher rows are looked up by the shuffled batch indices, so the cache
    must be aligned with ``X`` in its original order. The returned log traces
    the soft term and the lambda-weighted hard term separately.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = check_labels(labels, student_spec.num_classes)
    t_logits = teacher_outputs.logits
    if t_logits.shape != (len(X), student_spec.num_classes) or len(labels) != len(X):
        raise UsageError(f"teacher cache {t_logits.shape} is not aligned with "
                         f"{len(X)} training rows x {student_spec.num_classes} classes")
    net = init.copy() if init is not None else init_network(student_spec, cfg.train.seed)

    def batch_loss(idx, logits):
        soft, hard, grad = distillation_terms(t_logits[idx], logits, labels[idx], cfg)
        return soft + hard, grad, soft, hard

    log = fit_loop(net, X, labels, cfg.train, batch_loss, TrainLog(), extra_terms=2)
    return net, log


# ---------------------------------------------------------------------------
# Sweep


@dataclass(frozen=True)
class SweepRow:
    T: float | None
    lam: float | None
    seed: int | None
    rank1: float
    rank5: float
    map: float
    arm: str


SWEEP_COLUMNS = ["T", "lambda", "seed", "rank1", "rank5", "map", "arm"]


def _fmt(value):
    return "" if value is None else repr(value)


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)

    def cells(self, arm="distilled"):
        return [r for r in self.rows if r.arm == arm]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                writer.writerow([_fmt(r.T), _fmt(r.lam), _fmt(r.seed), repr(r.rank1),
                                 repr(r.rank5), repr(r.map), r.arm])

    @classmethod
    def from_csv(cls, path) -> "SweepReport":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != SWEEP_COLUMNS:
                raise ParseError(f"{path}: unexpected sweep header", line=1)
            for lineno, rec in enumerate(reader, start=2):
                try:
                    rows.append(SweepRow(
                        float(rec[0]) if rec[0] else None, float(rec[1]) if rec[1] else None,
                        int(rec[2]) if rec[2] else None, float(rec[3]), float(rec[4]),
                        float(rec[5]), rec[6]))
                except (ValueError, IndexError) as exc:
                    raise ParseError(f"{path}: {exc}", line=lineno) from None
        return cls(rows)

    def summary(self) -> dict:
        """Mean and population std of each metric per (arm, T, lambda) group."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r.arm, r.T, r.lam), []).append(r)
        out = []
        for (arm, T, lam), members in groups.items():
            entry = {"arm": arm, "T": T, "lambda": lam, "n": len(members)}
            for metric in ("rank1", "rank5", "map"):
                vals = np.array([getattr(m, metric) for m in members])
                entry[f"{metric}_mean"] = float(vals.mean())
                entry[f"{metric}_std"] = float(vals.std())
            out.append(entry)
        return {"groups": out}

    def write_summary(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=1)
            fh.write("\n")


def _features_eval(net, query: FeatureDataset, gallery: FeatureDataset, protocol) -> EvalReport:
    q = query.with_vectors(extract_deep_features(net, query.vectors))
    g = gallery.with_vectors(extract_deep_features(net, gallery.vectors))
    return evaluate(q, g, protocol)


def run_sweep(teacher: MlpNetwork, student_spec: MlpSpec, X, labels, query: FeatureDataset,
              gallery: FeatureDataset, sweep: SweepSpec = SweepSpec(),
              train: TrainConfig = TrainConfig(), protocol: ProtocolConfig = ProtocolConfig(),
              t2_scaling: bool = False) -> SweepReport:
    """Distil one student per (T, lambda, seed) and evaluate its features.

    Each seed also trains an independent student from the same initialisation;
    the teacher is evaluated once. Cells run sequentially so results are
    reproducible bit for bit.
    """
    cache = cache_teacher_outputs(teacher, X)
    report = SweepReport()
    t_eval = _features_eval(teacher, query, gallery, protocol)
    report.rows.append(SweepRow(None, None, None, t_eval.rank1, t_eval.rank5, t_eval.map, "teacher"))
    for seed in sweep.seeds:
        cfg_train = replace(train, seed=int(seed))
        init = init_network(student_spec, int(seed))
        independent, _ = train_classifier(student_spec, X, labels, cfg_train, init=init)
        ev = _features_eval(independent, query, gallery, protocol)
        report.rows.append(SweepRow(None, None, int(seed), ev.rank1, ev.rank5, ev.map,
                                    "student_independent"))
        for T in sweep.temperatures:
            for lam in sweep.lambdas:
                cfg = DistillConfig(float(T), float(lam), cfg_train, t2_scaling)
                student, _ = train_student_with_distillation(cache, student_spec, X, labels, cfg,
                                                             init=init)
                ev = _features_eval(student, query, gallery, protocol)
                report.rows.append(SweepRow(float(T), float(lam), int(seed), ev.rank1, ev.rank5,
                                            ev.map, "distilled"))
    return report
