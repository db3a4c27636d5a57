"""Bandit problem generators: synthetic families, dataset adapters, orderings.

Streams are immutable once built.  Every context is normalized to unit L2
norm and every loss lies in [0, 1].  The ordering modes deliberately break
the i.i.d. assumption: sorted_by_label replays whole classes back to back,
cluster_blocks replays geometric clusters block by block.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, IngestionError
from .net import InitSnapshot, forward
from .ogd import BallSpec, RegressionStream
from .perturb import sigmoid

ORDERING_MODES = ("iid_shuffle", "sorted_by_label", "cluster_blocks")
SYNTH_KINDS = ("linear", "quadratic", "cosine")

_QUADRATIC_SCALE = 10.0


@dataclass(frozen=True)
class BanditStream:
    """T rounds of K arm contexts with their (observed) losses.

    contexts has shape (T, K, d) and losses shape (T, K); labels holds the
    per-round index of the truly best arm (argmin of the true losses).
    """

    contexts: np.ndarray
    losses: np.ndarray
    labels: np.ndarray
    kind: str
    seed: int
    ordering: str = "as_generated"

    def __post_init__(self):
        if self.contexts.ndim != 3 or self.losses.shape != self.contexts.shape[:2]:
            raise ConfigurationError("stream arrays have inconsistent shapes")

    @property
    def T(self) -> int:
        return self.contexts.shape[0]

    @property
    def K(self) -> int:
        return self.contexts.shape[1]

    @property
    def d(self) -> int:
        return self.contexts.shape[2]

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "ordering": self.ordering,
            "T": self.T,
            "K": self.K,
            "d": self.d,
        }

    def write_manifest(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ConfigurationError("cannot normalize a zero context")
    return X / norms


def _warn_on_duplicates(contexts: np.ndarray):
    """Duplicate contexts break NTK positive-definiteness; warn, don't fail."""
    flat = contexts.reshape(-1, contexts.shape[-1])
    if len(flat) > 1:
        rounded = np.round(flat, 12)
        if len(np.unique(rounded, axis=0)) < len(rounded):
            warnings.warn("duplicate contexts detected; NTK may be singular", stacklevel=3)


def synth_stream(kind: str, d: int, K: int, T: int, noise_sd: float, seed: int) -> BanditStream:
    """Nonlinear reward families over unit-sphere contexts.

    Each arm slot k hides a unit vector a_k; the true loss of playing context
    x in slot k is
        linear     (1 + <a_k, x>) / 2
        quadratic  min(1, 10 <a_k, x>^2)
        cosine     (1 + cos(3 <a_k, x>)) / 2
    and the observed loss adds clipped Gaussian noise.
    """
    if kind not in SYNTH_KINDS:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}")
    if min(d, K, T) < 1 or noise_sd < 0:
        raise ConfigurationError("need d, K, T >= 1 and noise_sd >= 0")
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    hidden = _unit_rows(rng.standard_normal((K, d)))
    contexts = _unit_rows(rng.standard_normal((T, K, d)))
    dots = np.einsum("tkd,kd->tk", contexts, hidden)
    if kind == "linear":
        clean = 0.5 * (1.0 + dots)
    elif kind == "quadratic":
        clean = np.minimum(1.0, _QUADRATIC_SCALE * dots**2)
    else:
        clean = 0.5 * (1.0 + np.cos(3.0 * dots))
    losses = clean
    if noise_sd > 0:
        losses = losses + rng.normal(0.0, noise_sd, size=losses.shape)
    losses = np.clip(losses, 0.0, 1.0)
    _warn_on_duplicates(contexts)
    return BanditStream(
        contexts=contexts,
        losses=losses,
        labels=np.argmin(clean, axis=1),
        kind=kind,
        seed=seed,
    )


def dataset_to_bandit(features: np.ndarray, labels: np.ndarray, K: int) -> BanditStream:
    """Classification-to-bandit adapter with block one-hot arm contexts.

    Row features are unit-normalized, then arm a's context places them in
    block a of a (d*K)-dimensional vector; the true-class arm has loss 0 and
    every other arm loss 1, so the always-correct policy has zero loss.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or len(features) == 0:
        raise IngestionError("need a nonempty (n, d) feature matrix")
    if len(labels) != len(features):
        raise IngestionError("feature/label length mismatch")
    if np.any(labels < 0) or np.any(labels >= K):
        bad = int(labels[(labels < 0) | (labels >= K)][0])
        raise IngestionError(f"label {bad} outside [0, {K})")
    n, d = features.shape
    unit = _unit_rows(features)
    contexts = np.zeros((n, K, d * K))
    for a in range(K):
        contexts[:, a, a * d : (a + 1) * d] = unit
    contexts = _unit_rows(contexts)
    losses = np.ones((n, K))
    losses[np.arange(n), labels.astype(int)] = 0.0
    _warn_on_duplicates(contexts)
    return BanditStream(
        contexts=contexts,
        losses=losses,
        labels=labels.astype(int),
        kind="classification",
        seed=-1,
    )


def separable_classes(n: int, d: int, K: int, seed: int, spread: float = 0.25):
    """Synthetic linearly separable classification data on the unit sphere.

    Class means are random orthonormal-ish directions; points are means plus
    Gaussian spread, renormalized.  Small spread keeps classes separable.
    """
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    if K <= d:
        means, _ = np.linalg.qr(rng.standard_normal((d, K)))
        means = means.T
    else:
        # more classes than dimensions: fall back to random unit directions
        means = _unit_rows(rng.standard_normal((K, d)))
    labels = rng.integers(0, K, size=n)
    X = means[labels] + spread * rng.standard_normal((n, d))
    return _unit_rows(X), labels


def apply_ordering(stream: BanditStream, mode: str, seed: int) -> BanditStream:
    """Reorder rounds: uniform shuffle, grouped by class, or clustered blocks."""
    if mode not in ORDERING_MODES:
        raise ConfigurationError(f"unknown ordering mode {mode!r}")
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    if mode == "iid_shuffle":
        order = rng.permutation(stream.T)
    elif mode == "sorted_by_label":
        order = np.argsort(stream.labels, kind="stable")
    else:
        order = _cluster_order(stream, rng)
    return BanditStream(
        contexts=stream.contexts[order],
        losses=stream.losses[order],
        labels=stream.labels[order],
        kind=stream.kind,
        seed=stream.seed,
        ordering=mode,
    )


def _cluster_order(stream: BanditStream, rng, iterations: int = 20) -> np.ndarray:
    """K-means-style grouping of rounds on flattened contexts, blocks concatenated."""
    flat = stream.contexts.reshape(stream.T, -1)
    k = stream.K
    if stream.T <= k:
        return np.arange(stream.T)
    centers = flat[rng.choice(stream.T, size=k, replace=False)]
    assignment = np.zeros(stream.T, dtype=int)
    for _ in range(iterations):
        dists = ((flat[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assignment = np.argmin(dists, axis=1)
        for c in range(k):
            mask = assignment == c
            if np.any(mask):
                centers[c] = flat[mask].mean(axis=0)
    return np.argsort(assignment, kind="stable")


def load_csv(path, label_column: str):
    """Parse a numeric CSV with a header row into (features, labels, columns).

    Feature columns are z-scored (constant columns dropped) before use; the
    label column must hold integers.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if label_column not in header:
            raise IngestionError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        rows = []
        for row_num, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for col, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {row_num}, column {col!r}: cannot parse {cell!r} as a number"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    data = np.array(rows)
    labels = data[:, label_idx]
    if np.any(labels != np.round(labels)):
        raise IngestionError(f"{path}: label column {label_column!r} has non-integer values")
    features = np.delete(data, label_idx, axis=1)
    feature_cols = [c for i, c in enumerate(header) if i != label_idx]
    std = features.std(axis=0)
    keep = std > 0
    features = (features[:, keep] - features[:, keep].mean(axis=0)) / std[keep]
    kept_cols = [c for c, k in zip(feature_cols, keep) if k]
    if features.shape[1] == 0:
        raise IngestionError(f"{path}: all feature columns are constant")
    return features, labels.astype(int), kept_cols


def _displaced_teacher(snapshot: InitSnapshot, ball: BallSpec, rng):
    """theta0 plus random per-block displacements at the ball radii."""
    teacher = snapshot.theta0.copy()
    dims = teacher.dims
    for l in range(1, dims.L + 1):
        delta = rng.standard_normal(teacher.hidden(l).shape)
        teacher.hidden(l)[...] += delta * (ball.rho / np.linalg.norm(delta))
    dv = rng.standard_normal(dims.m)
    teacher.v[:] += dv * (ball.rho1 / np.linalg.norm(dv))
    return teacher


def teacher_stream(snapshot: InitSnapshot, ball: BallSpec, T: int, seed: int,
                   link_scale: float = 2.0) -> RegressionStream:
    """Realizable regression stream from a teacher planted inside the ball.

    The teacher is theta0 plus per-block displacements at the ball radii; its
    labels are sigmoid(link_scale * f(teacher; x)), which keeps them in (0, 1)
    while remaining a deterministic function of the context.
    """
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    teacher = _displaced_teacher(snapshot, ball, rng)
    dims = teacher.dims
    X = _unit_rows(rng.standard_normal((T, dims.d)))
    y = np.array([float(sigmoid(link_scale * forward(teacher, x))) for x in X])
    return RegressionStream(X, y)


def perturbed_teacher_stream(snapshot: InitSnapshot, perts, pred_cfg, T: int,
                             seed: int, bias: float = 0.5,
                             spread: float = 1.0) -> RegressionStream:
    """Stream whose labels come from a teacher inside the learner's own
    perturbed predictor class (the comparator class of the regret).

    The teacher is theta0 plus random per-block displacements of norm
    `spread`, plus a component along the mean sign vector sized so the
    teacher's average ridge term equals `bias`; labels are the teacher's own
    averaged prediction (raw for the square loss, sigmoid-averaged for KL),
    so the stream is exactly realizable for the learner that shares this
    snapshot and draw set.  Square-mode labels are clipped into [0, 1].
    """
    from .perturb import averaged_prediction

    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]))
    dims = snapshot.theta0.dims
    teacher = _displaced_teacher(snapshot, BallSpec(rho=spread, rho1=spread), rng)
    if pred_cfg.c_p > 0 and bias != 0.0:
        eps_bar = perts.weighted_sum(np.full(perts.S, 1.0 / perts.S))
        beta = bias * dims.m**0.25 / (pred_cfg.c_p * float(np.linalg.norm(eps_bar)))
        teacher.flat += beta * eps_bar / np.linalg.norm(eps_bar)
    X = _unit_rows(rng.standard_normal((T, dims.d)))
    y = np.array(
        [averaged_prediction(teacher, snapshot, x, perts, pred_cfg) for x in X]
    )
    return RegressionStream(X, np.clip(y, 0.0, 1.0))
