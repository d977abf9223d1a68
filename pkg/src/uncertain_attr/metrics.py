"""Faithfulness under input noise, improvement curves, explanation distances and sweep measures."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .data import StandardizedDataset, UncertaintySpec
from .explainer import LinearExplanation, explain_many, explain_value
from .predictor import MlpPredictor, integrated_gradients_batch
from .propagate import PropagationError, derive_seed, sample_hypotheticals, spread_sd

TECHNIQUES = ("lime", "reg_lime", "ig_nn", "ig_regnn")
RECORD_COLUMNS = ("instance_id", "technique", "f0", "expected_f", "n")
LOG_FLOOR = 1e-12


class PairingError(ValueError):
    """Regularized and baseline records do not cover the same instances."""


@dataclass(frozen=True)
class FaithfulnessRecord:
    instance_id: int
    f0: float
    expected_f: float
    n_samples: int
    technique: str

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown technique {self.technique!r}")
        if not (np.isfinite(self.f0) and np.isfinite(self.expected_f)) or self.f0 < 0 or self.expected_f < 0:
            raise ValueError("faithfulness values must be finite and nonnegative")


@dataclass(frozen=True)
class FaithfulnessCurve:
    bin_edges: np.ndarray
    bin_centers: np.ndarray
    prob_improved: np.ndarray
    standard_error: np.ndarray
    counts: np.ndarray

    def spearman(self) -> float:
        """Rank correlation between bin F0 and improvement probability (nan if either is constant)."""
        if np.ptp(self.prob_improved) == 0 or np.ptp(self.bin_centers) == 0:
            return float("nan")
        return float(stats.spearmanr(self.bin_centers, self.prob_improved)[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "f0_low", "f0_high", "f0_center", "prob_improved", "standard_error", "count"])
        for i in range(len(self.counts)):
            w.writerow([i, repr(float(self.bin_edges[i])), repr(float(self.bin_edges[i + 1])),
                        repr(float(self.bin_centers[i])), repr(float(self.prob_improved[i])),
                        repr(float(self.standard_error[i])), int(self.counts[i])])
        return buf.getvalue()


def _ref(model, x0) -> float:
    out = float(np.asarray(model(np.asarray(x0, float)[None, :]))[0])
    if not np.isfinite(out):
        raise PropagationError("non-finite model output at the query instance")
    return out


def point_faithfulness(model, expl: LinearExplanation, x0) -> float:
    """Squared gap between predictor and surrogate at the query instance."""
    return (_ref(model, x0) - float(explain_value(expl, x0))) ** 2


def expected_faithfulness(model, expl: LinearExplanation, x0, spec: UncertaintySpec, n: int = 150,
                          seed: int = 0, instance_id: int = 0, technique: str = "lime") -> FaithfulnessRecord:
    """Monte-Carlo mean of (f(x0) - g(x0 + eps))^2.

    The reference is always the predictor at the unperturbed instance.
    """
    if n < 2:
        raise ValueError("need at least 2 samples")
    fx = _ref(model, x0)
    hyp = sample_hypotheticals(x0, spec, n, seed)
    g0 = float(explain_value(expl, x0))
    # g(x0 + eps) written as g(x0) + w.eps so that eps = 0 reproduces F0 bit for bit
    g = g0 + hyp.noise @ expl.weights
    if not np.all(np.isfinite(g)):
        raise PropagationError("non-finite surrogate output on a hypothetical instance")
    f0 = (fx - g0) ** 2
    expected = max(f0 + float(np.mean((fx - g) ** 2 - f0)), 0.0)
    return FaithfulnessRecord(int(instance_id), f0, expected, n, technique)


def prob_improvement_curve(records_regularized: Sequence[FaithfulnessRecord],
                           records_baseline: Sequence[FaithfulnessRecord], n_bins: int = 10) -> FaithfulnessCurve:
    """Probability that the regularized E[F] beats the baseline F0, by baseline-F0 quantile bin."""
    reg = {r.instance_id: r for r in records_regularized}
    base = {r.instance_id: r for r in records_baseline}
    if reg.keys() != base.keys() or len(reg) != len(records_regularized) or len(base) != len(records_baseline):
        raise PairingError("regularized and baseline records must pair one-to-one by instance_id")
    if not reg:
        raise PairingError("no records to compare")
    ids = sorted(base)
    f0 = np.array([base[i].f0 for i in ids])
    better = np.array([reg[i].expected_f < base[i].f0 for i in ids], dtype=float)
    order = np.argsort(f0, kind="stable")
    chunks = [c for c in np.array_split(order, min(n_bins, len(ids))) if len(c)]
    edges = [f0[chunks[0]].min()] + [f0[c].max() for c in chunks]
    centers = np.array([np.median(f0[c]) for c in chunks])
    p = np.array([better[c].mean() for c in chunks])
    counts = np.array([len(c) for c in chunks])
    return FaithfulnessCurve(np.array(edges), centers, p, np.sqrt(p * (1 - p) / counts), counts)


def explanation_distance(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def log_distance(a, b) -> float:
    """Natural log of the explanation distance, censored at ``LOG_FLOOR``."""
    return float(np.log(max(explanation_distance(a, b), LOG_FLOOR)))


# ---------------------------------------------------------------------------
# batch pipelines over a dataset


def records_for(model, expls: Sequence[LinearExplanation], X, spec, technique: str, n: int = 150,
                seed: int = 0) -> list[FaithfulnessRecord]:
    """One record per instance; instance ``i`` uses hypothetical seed ``derive_seed(seed, i)``."""
    return [expected_faithfulness(model, e, x, spec, n, derive_seed(seed, i), i, technique)
            for i, (e, x) in enumerate(zip(expls, X))]


def lime_explanations(model, X, spec: UncertaintySpec, lams: Sequence[float], seed: int = 0,
                      n_samples: int = 1000, kernel_width: float | None = None) -> list[list[LinearExplanation]]:
    """Surrogates for every row of ``X`` and every lambda, sharing one neighborhood per row.

    ``lams[k] == 0`` gives the unpenalized baseline; ``lams[k] > 0`` the
    uncertainty-penalized fit. Row ``i`` samples its neighborhood with
    ``derive_seed(seed, i)``.
    """
    X = np.asarray(X, float)
    seeds = [derive_seed(seed, i) for i in range(len(X))]
    fits = explain_many(model, X, seeds, [lam * spec.sigma ** 2 for lam in lams], n_samples, kernel_width)
    out = []
    for lam, (W, B) in zip(lams, fits):
        kind = "regularized" if lam > 0 else "baseline"
        sig = spec.sigma if lam > 0 else np.zeros(spec.dim)
        out.append([LinearExplanation(w, float(b), x.copy(), float(lam), sig.copy(), kind, s)
                    for w, b, x, s in zip(W, B, X, seeds)])
    return out


def ig_explanations(model: MlpPredictor, X, steps: int = 200) -> list[LinearExplanation]:
    """IG surrogates (origin baseline) for every row of ``X``; see ``ig_linear_explanation``."""
    X = np.asarray(X, float)
    _, gbar, _ = integrated_gradients_batch(model, X, None, steps)
    b0 = float(model(np.zeros((1, X.shape[1])))[0])
    kind = "regularized" if model.regularization_lambda > 0 else "baseline"
    return [LinearExplanation(g.copy(), b0, x.copy(), model.regularization_lambda, np.zeros(X.shape[1]), kind)
            for g, x in zip(gbar, X)]


def select_lambda(model, X_val, spec: UncertaintySpec, candidates: Sequence[float] = (0.1, 1.0, 10.0),
                  n: int = 150, seed: int = 0, n_samples: int = 1000, kernel_width: float | None = None) -> float:
    """Penalty weight with the lowest mean expected faithfulness distance on a validation slice."""
    fits = lime_explanations(model, X_val, spec, list(candidates), seed, n_samples, kernel_width)
    scores = [np.mean([r.expected_f for r in records_for(model, expls, X_val, spec, "reg_lime", n, seed)])
              for expls in fits]
    return float(candidates[int(np.argmin(scores))])


def records_to_csv(records: Iterable[FaithfulnessRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([r.instance_id, r.technique, repr(r.f0), repr(r.expected_f), r.n_samples])
    return buf.getvalue()


def records_to_json(records: Iterable[FaithfulnessRecord]) -> str:
    return json.dumps([asdict(r) for r in records], indent=1)


# ---------------------------------------------------------------------------
# sweep measures


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, float)
    se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def _summarize(lam, correctness, robustness, faith, stability) -> dict:
    stability = np.asarray(stability)
    row = {"lambda": float(lam)}
    for name, vals in (("correctness_over_noise", correctness), ("robustness", robustness),
                       ("expected_f", faith), ("stability_total", stability.sum(axis=1))):
        row[name], row[name + "_se"] = _mean_se(vals)
    row["stability_per_feature"] = stability.mean(axis=0).tolist()
    row["stability_per_feature_se"] = (stability.std(axis=0, ddof=1) / np.sqrt(len(stability))).tolist() \
        if len(stability) > 1 else [0.0] * stability.shape[1]
    return row


def _noise_measures(model, X, y, spec, n, seed):
    hyps = [sample_hypotheticals(x, spec, n, derive_seed(seed, i)) for i, x in enumerate(X)]
    preds = [model(h.samples) for h in hyps]
    fx = model(X)
    correctness = [np.mean((p - yi) ** 2) for p, yi in zip(preds, y)]
    robustness = [np.mean((p - f) ** 2) for p, f in zip(preds, fx)]
    return hyps, fx, correctness, robustness


def explainer_sweep_measures(model, dataset: StandardizedDataset, spec: UncertaintySpec, lambdas: Sequence[float],
                             n: int = 150, seed: int = 0, n_samples: int = 1000,
                             kernel_width: float | None = None) -> list[dict]:
    """Per-lambda measures for the penalized surrogate on a fixed predictor.

    Attributions are held at the surrogate fitted on the clean instance and
    vary only through the noisy inputs.
    """
    if not len(lambdas):
        raise ValueError("lambda sweep is empty")
    X, y = dataset.features, dataset.labels
    fits = lime_explanations(model, X, spec, list(lambdas), seed, n_samples, kernel_width)
    rows = []
    for lam, expls in zip(lambdas, fits):
        hyps, fx, correctness, robustness = _noise_measures(model, X, y, spec, n, seed)
        faith, stab = [], []
        for e, h, f in zip(expls, hyps, fx):
            faith.append(np.mean((f - explain_value(e, h.samples)) ** 2))
            stab.append(spread_sd(h.samples * e.weights, ddof=1))
        rows.append(_summarize(lam, correctness, robustness, faith, stab))
    return rows


def predictor_sweep_measures(models: Mapping[float, MlpPredictor], dataset: StandardizedDataset,
                             spec: UncertaintySpec, n: int = 150, seed: int = 0, ig_steps: int = 50) -> list[dict]:
    """Per-lambda measures for penalized predictors explained by IG.

    Stability re-explains every hypothetical instance; expected faithfulness
    holds the IG surrogate of the clean instance fixed.
    """
    if not models:
        raise ValueError("lambda sweep is empty")
    X, y = dataset.features, dataset.labels
    rows = []
    for lam in sorted(models):
        model = models[lam]
        hyps, fx, correctness, robustness = _noise_measures(model, X, y, spec, n, seed)
        expls = ig_explanations(model, X, ig_steps)
        faith, stab = [], []
        for e, h, f in zip(expls, hyps, fx):
            faith.append(np.mean((f - explain_value(e, h.samples)) ** 2))
            attr, _, _ = integrated_gradients_batch(model, h.samples, None, ig_steps)
            stab.append(spread_sd(attr, ddof=1))
        rows.append(_summarize(lam, correctness, robustness, faith, stab))
    return rows


def sweep_to_csv(rows: Sequence[dict], feature_names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    scalar = ["lambda", "correctness_over_noise", "correctness_over_noise_se", "robustness", "robustness_se",
              "expected_f", "expected_f_se", "stability_total", "stability_total_se"]
    w.writerow(scalar + [f"stability[{f}]" for f in feature_names])
    for r in rows:
        w.writerow([repr(r[k]) for k in scalar] + [repr(v) for v in r["stability_per_feature"]])
    return buf.getvalue()

