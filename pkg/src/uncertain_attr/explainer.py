"""Local linear surrogates: LIME-style weighted ridge and its uncertainty-penalized variant.

Both fits solve one closed-form weighted least-squares problem with an
unpenalized intercept. Kernel weights are normalized to sum to one inside
the objective, so the penalty strength does not depend on neighborhood size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import UncertaintySpec

JITTER = 1e-8
DEFAULT_SAMPLES = 1000

PredictFn = Callable[[np.ndarray], np.ndarray]


class NumericError(ArithmeticError):
    """The normal equations could not be solved."""


@dataclass(frozen=True)
class Neighborhood:
    points: np.ndarray
    kernel_weights: np.ndarray
    center: np.ndarray
    seed: int


@dataclass(frozen=True)
class LinearExplanation:
    weights: np.ndarray
    intercept: float
    center: np.ndarray
    lam: float
    sigma_used: np.ndarray
    kind: str = "baseline"
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("baseline", "regularized"):
            raise ValueError(f"unknown explanation kind {self.kind!r}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("explanation weights must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "center": self.center.tolist(),
            "lambda": self.lam,
            "sigma": self.sigma_used.tolist(),
            "kind": self.kind,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearExplanation":
        return cls(
            np.asarray(d["weights"], float),
            float(d["intercept"]),
            np.asarray(d["center"], float),
            float(d["lambda"]),
            np.asarray(d["sigma"], float),
            d["kind"],
            d.get("seed"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def default_kernel_width(dim: int) -> float:
    return 0.75 * np.sqrt(dim)


def sample_neighborhood(center, n: int = DEFAULT_SAMPLES, seed: int = 0, kernel_width: float | None = None) -> Neighborhood:
    """Isotropic unit-Gaussian samples around ``center`` with exponential kernel weights."""
    center = np.asarray(center, dtype=float)
    dim = center.shape[0]
    if n < dim + 2:
        raise ValueError(f"neighborhood needs at least {dim + 2} samples, got {n}")
    width = default_kernel_width(dim) if kernel_width is None else float(kernel_width)
    if not width > 0:
        raise ValueError("kernel_width must be positive")
    points = center + np.random.default_rng(seed).standard_normal((n, dim))
    return Neighborhood(points, kernel_weight(points, center, width), center.copy(), seed)


def kernel_weight(points, center, kernel_width: float) -> np.ndarray:
    sq = np.sum((np.asarray(points) - center) ** 2, axis=-1)
    return np.exp(-sq / kernel_width ** 2)


def solve_weighted_ridge(X, f, c, penalty):
    """Minimize sum_i c_i (f_i - w.x_i - b)^2 + sum_d penalty_d w_d^2.

    Works on a single problem (``X`` of shape (n, D)) or a stack of them
    (``X`` of shape (B, n, D)); returns ``(w, b)`` with matching leading axes.
    """
    X, f, c = np.asarray(X, float), np.asarray(f, float), np.asarray(c, float)
    single = X.ndim == 2
    if single:
        X, f, c = X[None], f[None], c[None]
    c = c / c.sum(axis=1, keepdims=True)
    A = np.concatenate([X, np.ones(X.shape[:2] + (1,))], axis=2)
    Ac = A * c[:, :, None]
    normal = np.einsum("bni,bnj->bij", Ac, A)
    rhs = np.einsum("bni,bn->bi", Ac, f)
    dim = X.shape[2]
    reg = np.zeros(dim + 1)
    reg[:dim] = penalty
    normal = normal + np.diag(reg + JITTER)
    try:
        beta = np.linalg.solve(normal, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular normal matrix in surrogate fit") from exc
    if not np.all(np.isfinite(beta)):
        raise NumericError("non-finite surrogate coefficients")
    w, b = beta[:, :dim], beta[:, dim]
    return (w[0], float(b[0])) if single else (w, b)


def _fit(model: PredictFn, nbhd: Neighborhood, penalty, lam, sigma, kind) -> LinearExplanation:
    f = np.asarray(model(nbhd.points), dtype=float)
    w, b = solve_weighted_ridge(nbhd.points, f, nbhd.kernel_weights, penalty)
    return LinearExplanation(w, b, nbhd.center.copy(), float(lam), np.asarray(sigma, float).copy(), kind, nbhd.seed)


def fit_lime(model: PredictFn, nbhd: Neighborhood, lam: float = 0.0) -> LinearExplanation:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    dim = nbhd.center.shape[0]
    return _fit(model, nbhd, np.full(dim, float(lam)), lam, np.zeros(dim), "baseline")


def fit_regularized_lime(model: PredictFn, nbhd: Neighborhood, spec: UncertaintySpec, lam: float) -> LinearExplanation:
    """Surrogate whose weights are penalized by ``lam * ||sigma * w||^2``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if spec.dim != nbhd.center.shape[0]:
        raise ValueError("uncertainty spec dimension does not match the neighborhood")
    return _fit(model, nbhd, lam * spec.sigma ** 2, lam, spec.sigma, "regularized")


def explain_many(model: PredictFn, centers, seeds, penalties, n: int = DEFAULT_SAMPLES,
                 kernel_width: float | None = None, chunk: int = 256):
    """Fit surrogates for many centers at once, sharing each neighborhood across penalties.

    ``penalties`` is a list of per-feature penalty vectors; the result is a
    list (one entry per penalty) of ``(weights, intercepts)`` stacks. Each
    center's neighborhood is the one ``sample_neighborhood`` would draw for
    the same seed.
    """
    centers = np.asarray(centers, float)
    dim = centers.shape[1]
    width = default_kernel_width(dim) if kernel_width is None else kernel_width
    out = [([], []) for _ in penalties]
    for start in range(0, len(centers), chunk):
        block = centers[start:start + chunk]
        pts = np.stack([sample_neighborhood(c, n, int(s), width).points
                        for c, s in zip(block, seeds[start:start + chunk])])
        c = kernel_weight(pts, block[:, None, :], width)
        f = np.asarray(model(pts.reshape(-1, dim)), float).reshape(len(block), n)
        for (ws, bs), pen in zip(out, penalties):
            w, b = solve_weighted_ridge(pts, f, c, pen)
            ws.append(w)
            bs.append(b)
    return [(np.concatenate(ws), np.concatenate(bs)) for ws, bs in out]


def _check_dim(expl: LinearExplanation, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != expl.dim:
        raise ValueError(f"expected {expl.dim} features, got {x.shape[-1]}")
    return x


def explain_value(expl: LinearExplanation, x):
    """Surrogate output w.x + b (vectorized over leading axes of ``x``)."""
    x = _check_dim(expl, x)
    return x @ expl.weights + expl.intercept


def attribution_vector(expl: LinearExplanation, x) -> np.ndarray:
    """Per-feature attribution w * x; these plus the intercept sum to the surrogate output."""
    return _check_dim(expl, x) * expl.weights


def ig_linear_explanation(model, x, steps: int = 200, baseline_point=None) -> LinearExplanation:
    """Integrated Gradients recast as a linear surrogate around ``x``.

    Weights are the mean path gradients and the intercept anchors the
    surrogate at the model output on the baseline point, so
    ``attribution_vector(expl, x)`` equals the IG attribution whenever the
    baseline is the origin, and ``explain_value`` is baseline output plus
    summed attributions.
    """
    from .predictor import integrated_gradients

    ig = integrated_gradients(model, x, baseline_point, steps)
    base_out = float(model(ig.baseline_point[None, :])[0])
    kind = "regularized" if model.regularization_lambda > 0 else "baseline"
    return LinearExplanation(
        ig.mean_gradient.copy(),
        base_out - float(ig.mean_gradient @ ig.baseline_point),
        np.asarray(x, float).copy(),
        model.regularization_lambda,
        np.zeros(model.input_dim),
        kind,
    )
