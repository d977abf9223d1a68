"""Controlled selection of borderline instances for explanation displays.

Pipeline: perturb test instances, keep candidates near the decision
threshold whose prediction agrees with the ground truth, cluster them, and
draw a class-balanced stratified sample.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.stats import norm

from .data import Scaler, StandardizedDataset, UncertaintySpec
from .explainer import DEFAULT_SAMPLES, explain_many
from .propagate import ci90_halfwidth, derive_seed

DISPLAY_SCALE = 10.0
THRESHOLD = 5.0
WINDOW = (4.0, 6.0)


class BalanceError(ValueError):
    """Not enough candidates of one decision class for a balanced selection."""


@dataclass(frozen=True)
class StimulusCandidate:
    base_instance_id: int
    perturbed_features: np.ndarray
    predicted_score: float
    actual_score: float
    attribution: np.ndarray
    attribution_ci: np.ndarray
    score_ci: float
    suppressed_attribution: np.ndarray | None = None
    suppressed_attribution_ci: np.ndarray | None = None
    suppressed_score_ci: float | None = None
    suppressed_score: float | None = None

    def __post_init__(self):
        for name in ("perturbed_features", "attribution", "attribution_ci"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if not (np.isfinite(self.predicted_score) and np.isfinite(self.actual_score) and np.isfinite(self.score_ci)):
            raise ValueError("scores must be finite")

    def to_dict(self) -> dict:
        d = {
            "base_instance_id": self.base_instance_id,
            "perturbed_features": self.perturbed_features.tolist(),
            "predicted_score": self.predicted_score,
            "actual_score": self.actual_score,
            "attribution": self.attribution.tolist(),
            "attribution_ci": self.attribution_ci.tolist(),
            "score_ci": self.score_ci,
        }
        if self.suppressed_attribution is not None:
            d.update(
                suppressed_attribution=self.suppressed_attribution.tolist(),
                suppressed_attribution_ci=self.suppressed_attribution_ci.tolist(),
                suppressed_score=self.suppressed_score,
                suppressed_score_ci=self.suppressed_score_ci,
            )
        return d


@dataclass(frozen=True)
class StimulusSet:
    practice: list[StimulusCandidate]
    main: list[StimulusCandidate]
    cluster_labels: np.ndarray
    seed: int
    stage_counts: dict = field(default_factory=dict)

    def closeness(self, threshold: float = THRESHOLD) -> tuple[float, float]:
        """Mean and sd of |prediction - threshold| over the main set, on the display scale."""
        c = np.array([abs(s.predicted_score - threshold) for s in self.main]) * DISPLAY_SCALE
        return float(c.mean()), float(c.std(ddof=1)) if len(c) > 1 else 0.0

    def to_json(self, threshold: float = THRESHOLD) -> str:
        mean, sd = self.closeness(threshold)
        return json.dumps({
            "seed": self.seed,
            "threshold": threshold,
            "practice": [s.to_dict() for s in self.practice],
            "main": [s.to_dict() for s in self.main],
            "cluster_labels": self.cluster_labels.tolist(),
            "stage_counts": self.stage_counts,
            "closeness_mean_display": mean,
            "closeness_sd_display": sd,
        }, indent=1)


def perturb_candidates(test_set: StandardizedDataset, spec: UncertaintySpec, model, k_per_instance: int = 50,
                       seed: int = 0, suppress_lambda: float | None = 10.0, n_hypothetical: int = 150,
                       n_samples: int = DEFAULT_SAMPLES, kernel_width: float | None = None) -> list[StimulusCandidate]:
    """``k_per_instance`` noisy copies of every test instance, with predictions and explanations.

    Attributions come from a surrogate fitted at the perturbed instance; their
    uncertainty is the 90% half-width of the attributions (and of the summed
    score) over hypothetical re-measurements, holding that surrogate fixed.
    A suppressed variant is added when ``suppress_lambda`` is given.
    """
    if k_per_instance < 1:
        raise ValueError("k_per_instance must be >= 1")
    X, y = test_set.features, test_set.labels
    dim = X.shape[1]
    base_ids, centers = [], []
    for i, x in enumerate(X):
        z = np.random.default_rng(derive_seed(seed, i)).standard_normal((k_per_instance, dim))
        centers.append(np.where(spec.sigma > 0, x + z * spec.sigma, x))
        base_ids += [i] * k_per_instance
    centers = np.concatenate(centers)
    preds = model(centers)
    nb_seeds = [derive_seed(seed, i, 1) for i in range(len(centers))]
    penalties = [np.zeros(dim)]
    if suppress_lambda is not None:
        penalties.append(suppress_lambda * spec.sigma ** 2)
    fits = explain_many(model, centers, nb_seeds, penalties, n_samples, kernel_width)

    cands = []
    for j, (c, base) in enumerate(zip(centers, base_ids)):
        z = np.random.default_rng(derive_seed(seed, j, 2)).standard_normal((n_hypothetical, dim))
        hyp = np.where(spec.sigma > 0, c + z * spec.sigma, c)
        summaries = []
        for W, B in fits:
            attr = hyp * W[j]
            summaries.append((c * W[j], ci90_halfwidth(attr), float(ci90_halfwidth(attr.sum(axis=1) + B[j])),
                              float(c @ W[j] + B[j])))
        extra = {}
        if len(summaries) > 1:
            a, ci, sci, sval = summaries[1]
            extra = dict(suppressed_attribution=a, suppressed_attribution_ci=ci,
                         suppressed_score_ci=sci, suppressed_score=sval)
        a, ci, sci, _ = summaries[0]
        cands.append(StimulusCandidate(int(base), c, float(preds[j]), float(y[base]), a, ci, sci, **extra))
    return cands


def is_accept(score: float, threshold: float = THRESHOLD) -> bool:
    """Accept strictly above the threshold; a score at the threshold is a reject."""
    return score > threshold


def filter_candidates(cands: Sequence[StimulusCandidate], score_window: tuple[float, float] = WINDOW,
                      threshold: float = THRESHOLD, return_counts: bool = False):
    """Keep candidates predicted inside the open window and on the ground truth's side of the threshold.

    A prediction exactly at the threshold has no side and is dropped. An
    empty result is returned, not raised.
    """
    low, high = score_window
    if not low < threshold < high:
        raise ValueError("threshold must lie strictly inside the score window")
    in_window = [c for c in cands if low < c.predicted_score < high]
    kept = [c for c in in_window
            if c.predicted_score != threshold and is_accept(c.predicted_score, threshold) == is_accept(c.actual_score, threshold)]
    if return_counts:
        return kept, {"candidates": len(cands), "in_window": len(in_window), "side_consistent": len(kept)}
    return kept


def _zscore_block(block: np.ndarray) -> np.ndarray:
    sd = block.std(axis=0)
    return np.where(sd > 0, (block - block.mean(axis=0)) / np.where(sd > 0, sd, 1.0), 0.0)


def candidate_matrix(cands: Sequence[StimulusCandidate]) -> np.ndarray:
    """Concatenate per-block standardized features, attributions, prediction, uncertainties and truth."""
    blocks = [
        np.array([c.perturbed_features for c in cands]),
        np.array([c.attribution for c in cands]),
        np.array([[c.predicted_score] for c in cands]),
        np.array([c.attribution_ci for c in cands]),
        np.array([[c.score_ci] for c in cands]),
        np.array([[c.actual_score] for c in cands]),
    ]
    return np.hstack([_zscore_block(b) for b in blocks])


def ward_labels(matrix: np.ndarray, k_clusters: int) -> np.ndarray:
    """Ward-linkage cluster labels 0..k-1, numbered by first appearance."""
    n = len(matrix)
    if not 1 <= k_clusters <= n:
        raise ValueError(f"cannot form {k_clusters} clusters from {n} candidates")
    if k_clusters == n:
        return np.arange(n)
    raw = fcluster(linkage(matrix, method="ward"), k_clusters, criterion="maxclust")
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=int)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[inverse]


def cluster_candidates(cands: Sequence[StimulusCandidate], k_clusters: int = 10, seed: int = 0) -> np.ndarray:
    # Ward linkage is deterministic; ``seed`` is kept for a uniform pipeline signature.
    return ward_labels(candidate_matrix(cands), k_clusters)


def largest_remainder(total: int, sizes: Sequence[int]) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``sizes``, summing exactly to ``total``."""
    sizes = np.asarray(sizes, dtype=float)
    quota = total * sizes / sizes.sum()
    alloc = np.floor(quota).astype(int)
    order = np.argsort(-(quota - alloc), kind="stable")
    alloc[order[: total - alloc.sum()]] += 1
    return alloc


def stratified_select(cands: Sequence[StimulusCandidate], labels, n_total: int = 34, n_practice: int = 4,
                      threshold: float = THRESHOLD, seed: int = 0) -> StimulusSet:
    """Class-balanced sample, stratified across clusters within each decision class.

    Each class gets half the practice and half the main slots; its draws are
    spread over clusters in proportion to that class's cluster sizes.
    """
    if n_total > len(cands):
        raise ValueError(f"asked for {n_total} stimuli from {len(cands)} candidates")
    if not 0 <= n_practice <= n_total:
        raise ValueError("n_practice must lie in [0, n_total]")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    n_main = n_total - n_practice
    want = {True: n_main // 2 + n_practice // 2}
    want[False] = n_total - want[True]
    accept = np.array([is_accept(c.actual_score, threshold) for c in cands])
    have = {cls: int(np.sum(accept == cls)) for cls in (True, False)}
    if have[True] < want[True] or have[False] < want[False]:
        raise BalanceError(f"need {want[True]} accept / {want[False]} reject candidates, "
                           f"have {have[True]} / {have[False]}")

    picked = {}
    for cls in (True, False):
        idx = np.flatnonzero(accept == cls)
        clusters = np.unique(labels[idx])
        sizes = [np.sum(labels[idx] == k) for k in clusters]
        chosen = []
        for k, m in zip(clusters, largest_remainder(want[cls], sizes)):
            members = idx[labels[idx] == k]
            chosen.extend(rng.choice(members, size=m, replace=False).tolist())
        picked[cls] = rng.permutation(chosen)

    n_prac_acc = n_practice // 2
    practice = list(picked[True][:n_prac_acc]) + list(picked[False][: n_practice - n_prac_acc])
    main = list(picked[True][n_prac_acc:]) + list(picked[False][n_practice - n_prac_acc:])
    practice = [cands[i] for i in rng.permutation(practice)] if practice else []
    main = [cands[i] for i in rng.permutation(main)]
    return StimulusSet(practice, main, labels.copy(), seed)


def stimuli_to_csv(stim: StimulusSet, scaler: Scaler, spec: UncertaintySpec, display_names: Sequence[str],
                   threshold: float = THRESHOLD) -> str:
    """One row per stimulus with UI fields on the 0-100 display scale.

    Readings are in raw units; reading uncertainty is the Gaussian 90%
    half-width of the measurement noise.
    """
    z90 = float(norm.ppf(0.95))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["trial", "phase", "base_instance_id", "decision"]
    for name in display_names:
        head += [f"reading[{name}]", f"reading_uncertainty[{name}]", f"subscore[{name}]",
                 f"subscore_uncertainty[{name}]", f"suppressed_subscore[{name}]",
                 f"suppressed_subscore_uncertainty[{name}]"]
    head += ["score", "score_uncertainty", "suppressed_score", "suppressed_score_uncertainty", "actual_score"]
    w.writerow(head)
    reading_unc = spec.sigma * scaler.sds * z90
    rows = [("practice", s) for s in stim.practice] + [("main", s) for s in stim.main]
    for t, (phase, s) in enumerate(rows):
        readings = scaler.inverse(s.perturbed_features)
        row = [t, phase, s.base_instance_id, "accept" if is_accept(s.actual_score, threshold) else "reject"]
        for d in range(len(display_names)):
            sup = s.suppressed_attribution[d] if s.suppressed_attribution is not None else float("nan")
            sup_ci = s.suppressed_attribution_ci[d] if s.suppressed_attribution_ci is not None else float("nan")
            row += [_fmt(readings[d], 4), _fmt(reading_unc[d], 4), _disp(s.attribution[d]),
                    _disp(s.attribution_ci[d]), _disp(sup), _disp(sup_ci)]
        row += [_disp(s.predicted_score), _disp(s.score_ci),
                _disp(s.suppressed_score if s.suppressed_score is not None else float("nan")),
                _disp(s.suppressed_score_ci if s.suppressed_score_ci is not None else float("nan")),
                _disp(s.actual_score)]
        w.writerow(row)
    return buf.getvalue()


def _disp(v: float) -> str:
    return _fmt(v * DISPLAY_SCALE, 1)


def _fmt(v: float, digits: int) -> str:
    return f"{v:.{digits}f}"
