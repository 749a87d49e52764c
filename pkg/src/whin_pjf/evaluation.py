"""Splits, ranking metrics, report serialization, and 2-D PCA export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateDataError, MetricError


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (8, 1, 1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"ratios must be three positive numbers, got {self.ratios}")

    @property
    def fractions(self):
        total = sum(self.ratios)
        return tuple(r / total for r in self.ratios)


def split(pairs, spec):
    """Seeded shuffle then contiguous cut into train/valid/test index arrays."""
    pairs = np.asarray(pairs)
    n = len(pairs)
    if n < 10:
        raise ConfigError(f"need at least 10 pairs to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    f_train, f_valid, _ = spec.fractions
    cut1 = int(n * f_train)
    cut2 = cut1 + int(n * f_valid)
    return pairs[order[:cut1]], pairs[order[cut1:cut2]], pairs[order[cut2:]]


def auc(scores, labels):
    """Probability that a random positive outranks a random negative.

    Computed from tie-averaged ranks, which gives ties exactly half credit
    (the Mann-Whitney statistic).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUC undefined: {n_pos} positives, {n_neg} negatives")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks within tied groups
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def acc_f1_ap(scores, labels, threshold=0.5):
    """Accuracy and F1 at a threshold, plus step-wise average precision.

    F1 is 0 when precision + recall is 0. AP walks the score-descending
    ranking (ties kept in input order) and sums precision at each recall step.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise MetricError("metrics undefined on empty input")
    pred = scores >= threshold
    acc = float((pred == (labels == 1)).mean())

    tp = int((pred & (labels == 1)).sum())
    fp = int((pred & (labels == 0)).sum())
    fn = int((~pred & (labels == 1)).sum())
    if tp == 0:
        f1 = 0.0
    else:
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        f1 = 2 * precision * recall / (precision + recall)

    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        ap = 0.0
    else:
        order = np.argsort(-scores, kind="stable")
        hits = 0
        ap = 0.0
        for rank, idx in enumerate(order, start=1):
            if labels[idx] == 1:
                hits += 1
                ap += (1.0 / n_pos) * (hits / rank)
    return acc, f1, ap


@dataclass
class MetricsReport:
    """Metrics scaled by 100, with the counts and config that produced them."""

    auc: float
    acc: float
    f1: float
    ap: float
    counts: dict
    config: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores, labels, config=None):
        labels = np.asarray(labels)
        a = auc(scores, labels)
        acc, f1, ap = acc_f1_ap(scores, labels)
        counts = {
            "pairs": int(len(labels)),
            "positives": int((labels == 1).sum()),
            "negatives": int((labels == 0).sum()),
        }
        return cls(auc=100 * a, acc=100 * acc, f1=100 * f1, ap=100 * ap,
                   counts=counts, config=dict(config or {}))

    def lines(self):
        out = [f"auc={self.auc:.4f}", f"acc={self.acc:.4f}",
               f"f1={self.f1:.4f}", f"ap={self.ap:.4f}"]
        for key, value in self.counts.items():
            out.append(f"count_{key}={value}")
        payload = {"metrics": {"auc": self.auc, "acc": self.acc, "f1": self.f1, "ap": self.ap},
                   "counts": self.counts, "config": self.config}
        out.append("json=" + json.dumps(payload, sort_keys=True))
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.lines()) + "\n")

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("json="):
                    payload = json.loads(line[len("json="):])
                    m = payload["metrics"]
                    return MetricsReport(m["auc"], m["acc"], m["f1"], m["ap"],
                                         payload["counts"], payload.get("config", {}))
        raise ValueError(f"{path}: no json= line found")


def pca_project(vectors):
    """Center the data and project onto the top two principal components.

    Components come from an eigendecomposition of the covariance matrix; each
    component's sign is fixed so its largest-magnitude loading is positive.
    Returns (coords n x 2, components 2 x d, explained eigenvalues).
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise DegenerateDataError(f"PCA needs at least 3 vectors, got shape {x.shape}")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals[0] <= 1e-12:
        raise DegenerateDataError("PCA input has rank 0 after centering")
    comps = eigvecs[:, :2].T
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    coords = centered @ comps.T
    return coords, comps, eigvals


def pca_export(vectors, ids, out_path, svg_path=None, groups=None):
    """Write `id,x,y` rows for the 2-D projection; optionally a scatter SVG.

    groups, when given, maps each row to a category used for SVG coloring.
    """
    coords, _, _ = pca_project(vectors)
    ids = list(ids)
    if len(ids) != len(coords):
        raise ValueError(f"{len(ids)} ids for {len(coords)} vectors")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("id,x,y\n")
        for eid, (x, y) in zip(ids, coords):
            fh.write(f"{eid},{x:.6f},{y:.6f}\n")
    if svg_path is not None:
        _write_scatter_svg(svg_path, coords, groups)
    return coords


_SVG_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _write_scatter_svg(path, coords, groups=None, size=480, margin=24):
    xs, ys = coords[:, 0], coords[:, 1]
    span_x = max(xs.max() - xs.min(), 1e-9)
    span_y = max(ys.max() - ys.min(), 1e-9)
    inner = size - 2 * margin
    if groups is None:
        groups = [0] * len(coords)
    palette = {g: _SVG_COLORS[i % len(_SVG_COLORS)] for i, g in enumerate(sorted(set(groups)))}
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for (x, y), g in zip(coords, groups):
        px = margin + inner * (x - xs.min()) / span_x
        py = size - margin - inner * (y - ys.min()) / span_y
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{palette[g]}" '
                     f'fill-opacity="0.75"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
