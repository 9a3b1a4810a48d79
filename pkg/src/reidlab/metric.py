"""PCA, KISSME and XQDA metric learning plus the distance kernels used for retrieval."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, FittingError, NumericalError, ProtocolError, ShapeError

DEFAULT_RIDGE_SCALE = 1e-6


def fix_signs(vectors: np.ndarray, axis: int = 0) -> np.ndarray:
    """Flip each vector so its first non-negligible coordinate is positive.

    ``axis=0`` treats rows as the vectors, ``axis=1`` columns.
    """
    v = np.array(vectors, dtype=np.float64, copy=True)
    rows = v if axis == 0 else v.T
    for row in rows:
        scale = np.max(np.abs(row)) if row.size else 0.0
        if scale == 0.0:
            continue
        nonzero = np.flatnonzero(np.abs(row) > 1e-10 * scale)
        if row[nonzero[0]] < 0:
            row *= -1.0
    return v


def relative_ridge(*matrices, scale: float = DEFAULT_RIDGE_SCALE) -> float:
    """``scale * mean(trace / D)`` over the given matrices, or ``scale`` if they are all zero."""
    d = matrices[0].shape[0]
    level = float(np.mean([np.trace(m) / d for m in matrices]))
    return scale * level if level > 0 else scale


def _matrix_to_json(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _matrix_from_json(obj):
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.components.shape[1]

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]

    def to_dict(self):
        return {"type": "pca", "mean": _matrix_to_json(self.mean),
                "components": _matrix_to_json(self.components),
                "explained_variance_ratio": _matrix_to_json(self.explained_variance_ratio)}

    @classmethod
    def from_dict(cls, obj):
        return cls(_matrix_from_json(obj["mean"]), _matrix_from_json(obj["components"]),
                   _matrix_from_json(obj["explained_variance_ratio"]))


def fit_pca(X, out_dim: int) -> PcaModel:
    """Top ``out_dim`` principal directions of the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D sample matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise ConfigurationError("PCA needs at least 2 samples")
    if not 1 <= out_dim <= min(d, n - 1):
        raise ConfigurationError(f"out_dim must lie in [1, {min(d, n - 1)}], got {out_dim}")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variances = s ** 2 / (n - 1)
    total = variances.sum()
    ratio = variances[:out_dim] / total if total > 0 else np.zeros(out_dim)
    return PcaModel(mean, fix_signs(vt[:out_dim], axis=0), ratio)


def apply_pca(model: PcaModel, x) -> np.ndarray:
    """Project one vector (or a batch of row vectors) onto the principal components."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.in_dim:
        raise ShapeError(f"PCA expects dimensionality {model.in_dim}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


# ---------------------------------------------------------------------------
# Pair statistics


def _check_pairs_input(features, ids):
    X = np.asarray(features, dtype=np.float64)
    ids = np.asarray(ids)
    if X.ndim != 2 or len(ids) != X.shape[0]:
        raise ShapeError("features must be (N, D) with one id per row")
    return X, ids


def _outer_mean(diffs: np.ndarray) -> np.ndarray:
    cov = diffs.T @ diffs / len(diffs)
    return (cov + cov.T) / 2.0


def _sample_pairs(pairs_i, pairs_j, count, rng):
    if count >= len(pairs_i):
        return pairs_i, pairs_j
    pick = np.sort(rng.choice(len(pairs_i), size=count, replace=False))
    return pairs_i[pick], pairs_j[pick]


def pair_covariances(features, ids, seed: int = 0):
    """Mean outer products of same-identity and sampled different-identity differences.

    Returns ``(sigma_similar, sigma_dissimilar)``. Every unordered same-identity
    pair is used; the dissimilar set is a uniform sample without replacement of
    the same size (or all dissimilar pairs if there are fewer).
    """
    X, ids = _check_pairs_input(features, ids)
    uniq, counts = np.unique(ids, return_counts=True)
    if len(uniq) < 2:
        raise FittingError("pair covariances need at least 2 identities")
    if np.any(counts < 2):
        raise FittingError(f"identities with a single record: {uniq[counts < 2].tolist()}")

    d = X.shape[1]
    sigma_s = np.zeros((d, d))
    n_similar = 0
    for ident in uniq:
        members = X[ids == ident]
        m = len(members)
        total = members.sum(axis=0)
        # sum_{i<j} (xi - xj)(xi - xj)^T = m * sum xi xi^T - (sum xi)(sum xi)^T
        sigma_s += m * (members.T @ members) - np.outer(total, total)
        n_similar += m * (m - 1) // 2
    sigma_s /= n_similar
    sigma_s = (sigma_s + sigma_s.T) / 2.0

    rng = np.random.default_rng(seed)
    ii, jj = np.triu_indices(len(ids), k=1)
    keep = ids[ii] != ids[jj]
    ii, jj = _sample_pairs(ii[keep], jj[keep], n_similar, rng)
    sigma_d = _outer_mean(X[ii] - X[jj])
    return sigma_s, sigma_d


# ---------------------------------------------------------------------------
# KISSME


@dataclass(frozen=True)
class MahalanobisModel:
    M: np.ndarray
    ridge: float = 0.0
    seed: int | None = None

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise ShapeError(f"metric expects dimensionality {self.dim}, got {X.shape[-1]}")
        return X

    @property
    def kernel(self) -> np.ndarray:
        return self.M

    def to_dict(self):
        return {"type": "mahalanobis", "M": _matrix_to_json(self.M),
                "ridge": self.ridge, "seed": self.seed}

    @classmethod
    def from_dict(cls, obj):
        return cls(_matrix_from_json(obj["M"]), obj["ridge"], obj["seed"])


def _spd_inverse(a: np.ndarray, what: str) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    if w[0] <= 0.0 or w[0] <= abs(w[-1]) * len(w) * np.finfo(np.float64).eps:
        raise NumericalError(
            f"{what} is singular or indefinite (smallest eigenvalue {w[0]:.3g}); "
            "increase the ridge")
    inv = (v / w) @ v.T
    return (inv + inv.T) / 2.0


def project_psd(m: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm: clamp negative eigenvalues to zero."""
    sym = (m + m.T) / 2.0
    w, v = np.linalg.eigh(sym)
    out = (v * np.clip(w, 0.0, None)) @ v.T
    return (out + out.T) / 2.0


def fit_kissme(sigma_s, sigma_d, ridge: float | None = None, seed: int | None = None) -> MahalanobisModel:
    """KISSME metric ``M = psd((sigma_s + rI)^-1 - (sigma_d + rI)^-1)``.

    ``ridge=None`` selects ``1e-6 * trace / D`` averaged over both matrices.
    """
    sigma_s = np.asarray(sigma_s, dtype=np.float64)
    sigma_d = np.asarray(sigma_d, dtype=np.float64)
    if sigma_s.shape != sigma_d.shape or sigma_s.ndim != 2 or sigma_s.shape[0] != sigma_s.shape[1]:
        raise ShapeError("covariances must be square matrices of equal shape")
    for name, m in (("sigma_s", sigma_s), ("sigma_d", sigma_d)):
        if not np.allclose(m, m.T, atol=1e-8 * max(1.0, np.abs(m).max())):
            raise FittingError(f"{name} is not symmetric")
    if ridge is None:
        ridge = relative_ridge(sigma_s, sigma_d)
    if ridge < 0:
        raise ConfigurationError("ridge must be >= 0")
    eye = np.eye(sigma_s.shape[0])
    m0 = (_spd_inverse(sigma_s + ridge * eye, "similar-pair covariance")
          - _spd_inverse(sigma_d + ridge * eye, "dissimilar-pair covariance"))
    return MahalanobisModel(project_psd(m0), float(ridge), seed)


# ---------------------------------------------------------------------------
# XQDA


@dataclass(frozen=True)
class XqdaModel:
    W: np.ndarray
    kernel: np.ndarray
    eigenvalues: np.ndarray
    ridge: float = 0.0
    seed: int | None = None
    fallback: bool = False
    admissible_dim: int = field(default=0)

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.in_dim:
            raise ShapeError(f"XQDA expects dimensionality {self.in_dim}, got {X.shape[-1]}")
        return X @ self.W

    def to_dict(self):
        return {"type": "xqda", "W": _matrix_to_json(self.W),
                "kernel": _matrix_to_json(self.kernel),
                "eigenvalues": [float(v) for v in self.eigenvalues],
                "ridge": self.ridge, "seed": self.seed, "fallback": self.fallback,
                "admissible_dim": self.admissible_dim}

    @classmethod
    def from_dict(cls, obj):
        return cls(_matrix_from_json(obj["W"]), _matrix_from_json(obj["kernel"]),
                   np.array(obj["eigenvalues"], dtype=np.float64), obj["ridge"], obj["seed"],
                   obj["fallback"], obj["admissible_dim"])


def cross_view_pairs(ids, cameras, seed: int = 0):
    """Index pairs for XQDA.

    Similar pairs share identity but not camera (all of them); dissimilar pairs
    differ in both and are sampled without replacement to the same count.
    """
    ids = np.asarray(ids)
    cameras = np.asarray(cameras)
    ii, jj = np.triu_indices(len(ids), k=1)
    cross = cameras[ii] != cameras[jj]
    same = ids[ii] == ids[jj]
    sim_i, sim_j = ii[cross & same], jj[cross & same]
    dis_i, dis_j = ii[cross & ~same], jj[cross & ~same]
    if len(sim_i) == 0 or len(dis_i) == 0:
        raise FittingError("no cross-camera similar or dissimilar pairs available")
    dis_i, dis_j = _sample_pairs(dis_i, dis_j, len(sim_i), np.random.default_rng(seed))
    return (sim_i, sim_j), (dis_i, dis_j)


def fit_xqda_from_covariances(sigma_i, sigma_e, max_dim: int, ridge: float | None = None,
                              seed: int | None = None, basis=None) -> XqdaModel:
    """Solve ``sigma_e w = lambda (sigma_i + ridge I) w`` and keep eigenvalues above 1.

    ``basis`` (D x k, orthonormal columns) maps the covariance coordinates back
    to the original feature space when the covariances were built in a reduced
    span.
    """
    if max_dim < 1:
        raise ConfigurationError("max_dim must be >= 1")
    sigma_i = np.asarray(sigma_i, dtype=np.float64)
    sigma_e = np.asarray(sigma_e, dtype=np.float64)
    if ridge is None:
        ridge = relative_ridge(sigma_i)
    reg = sigma_i + ridge * np.eye(len(sigma_i))
    try:
        evals, evecs = scipy.linalg.eigh(sigma_e, reg)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"generalized eigenproblem failed ({exc}); increase the ridge") from exc
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    admissible = int(np.count_nonzero(evals > 1.0))
    fallback = admissible == 0
    r = 1 if fallback else min(admissible, max_dim)
    w = fix_signs(evecs[:, :r], axis=1)
    lam = evals[:r]
    kernel_model = fit_kissme(w.T @ sigma_i @ w, w.T @ sigma_e @ w, ridge=None)
    if basis is not None:
        w = basis @ w
    return XqdaModel(w, kernel_model.M, lam, float(ridge), seed, fallback, admissible)


def fit_xqda(features, ids, cameras, max_dim: int, ridge: float | None = None,
             seed: int = 0) -> XqdaModel:
    """Cross-view quadratic discriminant analysis.

    When the feature dimensionality exceeds the sample count the problem is
    solved in the span of the training vectors, which contains every pair
    difference, and the projection is mapped back afterwards.
    """
    X, ids = _check_pairs_input(features, ids)
    cameras = np.asarray(cameras)
    if len(np.unique(cameras)) < 2:
        raise ProtocolError("XQDA needs records from at least 2 cameras")
    basis = None
    if X.shape[1] > X.shape[0]:
        basis, _ = np.linalg.qr(X.T)
        X = X @ basis
    (si, sj), (di, dj) = cross_view_pairs(ids, cameras, seed)
    sigma_i = _outer_mean(X[si] - X[sj])
    sigma_e = _outer_mean(X[di] - X[dj])
    return fit_xqda_from_covariances(sigma_i, sigma_e, max_dim, ridge, seed, basis)


# ---------------------------------------------------------------------------
# Distances


def _as_kernel(model):
    if isinstance(model, (MahalanobisModel, XqdaModel)):
        return model
    return MahalanobisModel(np.asarray(model, dtype=np.float64))


def mahalanobis_distance(model, x, y) -> float:
    """Quadratic form ``(x - y)^T M (x - y)``; XQDA models project first."""
    model = _as_kernel(model)
    diff = model.transform(np.asarray(x, dtype=np.float64)) - model.transform(np.asarray(y, dtype=np.float64))
    if diff.ndim != 1:
        raise ShapeError("mahalanobis_distance takes single vectors")
    return float(max(diff @ model.kernel @ diff, 0.0))


def euclidean_distance(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.linalg.norm(x - y))


def squared_distances(query, gallery, kernel=None) -> np.ndarray:
    """Squared distance from one query vector to every gallery row.

    ``kernel=None`` is plain squared Euclidean. Both paths use the same
    row-wise reduction so an identity kernel reproduces Euclidean exactly.
    """
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or query.shape != (gallery.shape[1],):
        raise ShapeError(f"query {query.shape} incompatible with gallery {gallery.shape}")
    diff = gallery - query
    left = diff if kernel is None else diff @ kernel
    return np.einsum("ij,ij->i", left, diff)


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    kinds = {"pca": PcaModel, "mahalanobis": MahalanobisModel, "xqda": XqdaModel}
    try:
        return kinds[obj["type"]].from_dict(obj)
    except KeyError as exc:
        raise FittingError(f"{path}: unknown or incomplete model document ({exc})") from None
