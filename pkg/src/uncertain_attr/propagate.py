"""Monte-Carlo propagation of input noise into feature attributions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import UncertaintySpec
from .explainer import LinearExplanation, attribution_vector, explain_value

DISPLAY_SAMPLES = 1000
METRIC_SAMPLES = 150


class PropagationError(ArithmeticError):
    """An explanation produced a non-finite attribution."""


class DegenerateDensityError(ValueError):
    """All samples are identical; draw a point mark instead of a density."""


def derive_seed(seed: int, *keys: int) -> int:
    """Counter-based child seed, independent of how work is split across workers."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass(frozen=True)
class HypotheticalSet:
    center: np.ndarray
    samples: np.ndarray
    spec: UncertaintySpec
    seed: int

    @property
    def noise(self) -> np.ndarray:
        return self.samples - self.center


@dataclass(frozen=True)
class AttributionDistribution:
    per_feature_samples: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    ci90_halfwidth: np.ndarray
    # one (grid, density) pair per feature, None where the samples do not vary
    density_grid: tuple

    def to_dict(self, emit_samples: bool = False) -> dict:
        d = {
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "ci90_halfwidth": self.ci90_halfwidth.tolist(),
        }
        if emit_samples:
            d["samples"] = self.per_feature_samples.tolist()
        return d

    def to_json(self, emit_samples: bool = False) -> str:
        return json.dumps(self.to_dict(emit_samples), indent=2)


def sample_hypotheticals(center, spec: UncertaintySpec, n: int = METRIC_SAMPLES, seed: int = 0) -> HypotheticalSet:
    """Draw ``n`` noisy copies of ``center``; certain features are left untouched."""
    if n < 1:
        raise ValueError("need at least one hypothetical instance")
    center = np.asarray(center, dtype=float)
    if center.shape != (spec.dim,):
        raise ValueError("center and uncertainty spec dimensions differ")
    z = np.random.default_rng(seed).standard_normal((n, spec.dim))
    samples = np.where(spec.sigma > 0, center + z * spec.sigma, center)
    return HypotheticalSet(center.copy(), samples, spec, seed)


def spread_sd(samples, ddof: int = 0) -> np.ndarray:
    """Column sd that is exactly zero for constant columns (plain std can leave ~1e-16)."""
    samples = np.asarray(samples, dtype=float)
    sd = samples.std(axis=0, ddof=ddof)
    return np.where(np.ptp(samples, axis=0) == 0, 0.0, sd)


def ci90_halfwidth(samples, axis=0) -> np.ndarray:
    lo, hi = np.percentile(samples, [5.0, 95.0], axis=axis)
    return (hi - lo) / 2.0


def kde_density(samples, grid_size: int = 256):
    """Gaussian KDE with the 1.06 * sd * n^(-1/5) bandwidth (population sd).

    The grid spans three bandwidths beyond the sample range.
    """
    x = np.asarray(samples, dtype=float).ravel()
    sd = x.std()
    if x.size < 2 or np.ptp(x) == 0:
        raise DegenerateDensityError("samples have no spread")
    h = 1.06 * sd * x.size ** (-0.2)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    dens = np.zeros(grid_size)
    for start in range(0, x.size, 4096):
        u = (grid[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    return grid, dens / (x.size * h * np.sqrt(2 * np.pi))


def summarize(samples: np.ndarray, grid_size: int = 256) -> AttributionDistribution:
    grids = []
    for col in samples.T:
        try:
            grids.append(kde_density(col, grid_size))
        except DegenerateDensityError:
            grids.append(None)
    return AttributionDistribution(samples, samples.mean(axis=0), spread_sd(samples),
                                   ci90_halfwidth(samples), tuple(grids))


def attribution_distribution(explain: Callable[[np.ndarray], np.ndarray], hyp: HypotheticalSet,
                             grid_size: int = 256) -> AttributionDistribution:
    """Apply ``explain`` (instance -> attribution vector) to every hypothetical instance."""
    rows = []
    for k, x in enumerate(hyp.samples):
        a = np.asarray(explain(x), dtype=float)
        if not np.all(np.isfinite(a)):
            raise PropagationError(f"non-finite attribution for hypothetical sample {k}")
        rows.append(a)
    return summarize(np.array(rows), grid_size)


def fixed_explainer(expl: LinearExplanation) -> Callable[[np.ndarray], np.ndarray]:
    """Hold one surrogate fixed; attributions vary only through the inputs."""
    return lambda x: attribution_vector(expl, x)


def refit_explainer(fit: Callable[[np.ndarray], LinearExplanation]) -> Callable[[np.ndarray], np.ndarray]:
    """Refit the surrogate at every hypothetical instance."""
    return lambda x: attribution_vector(fit(x), x)


def score_samples(expl: LinearExplanation, hyp: HypotheticalSet) -> np.ndarray:
    """Surrogate outputs over the hypothetical instances."""
    return explain_value(expl, hyp.samples)
