import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import linear_model
from uncertain_attr.data import StandardizedDataset, UncertaintySpec
from uncertain_attr.explainer import LinearExplanation, fit_lime, sample_neighborhood
from uncertain_attr.metrics import (
    LOG_FLOOR,
    FaithfulnessRecord,
    PairingError,
    expected_faithfulness,
    explainer_sweep_measures,
    explanation_distance,
    lime_explanations,
    log_distance,
    point_faithfulness,
    predictor_sweep_measures,
    prob_improvement_curve,
    records_to_csv,
    records_to_json,
    select_lambda,
)
from uncertain_attr.predictor import init_mlp


def _expl(w, b=0.0):
    w = np.asarray(w, float)
    return LinearExplanation(w, b, np.zeros_like(w), 0.0, np.zeros_like(w), "baseline")


def _records(f0, ef, technique="lime"):
    return [FaithfulnessRecord(i, a, b, 150, technique) for i, (a, b) in enumerate(zip(f0, ef))]


vec = arrays(np.float64, 5, elements=st.floats(-1e3, 1e3))


class TestPointFaithfulness:
    def test_exact_surrogate(self):
        assert point_faithfulness(linear_model([1.0, 2.0], 0.5), _expl([1.0, 2.0], 0.5), np.array([0.3, 1.0])) == 0

    def test_squared_gap(self):
        assert point_faithfulness(lambda X: np.full(len(np.atleast_2d(X)), 5.0), _expl([0.0], 3.0),
                                  np.array([1.0])) == 4.0

    def test_near_linear(self):
        f = linear_model([2.0, 3.0], 1.0)
        x0 = np.array([0.2, -0.1])
        assert point_faithfulness(f, fit_lime(f, sample_neighborhood(x0, 1000, 0)), x0) < 0.01


class TestExpectedFaithfulness:
    def test_zero_sigma(self):
        f = lambda X: np.sin(np.atleast_2d(X)).sum(axis=1)
        e = _expl([0.5, -0.3], 0.1)
        r = expected_faithfulness(f, e, np.array([0.4, 0.2]), UncertaintySpec.zeros(2), 150, 0)
        assert r.expected_f == r.f0

    def test_identity_oracle(self):
        # E[F] - F0 = sum_d w_d^2 sigma_d^2 for a fixed linear surrogate
        f = lambda X: np.sin(np.atleast_2d(X)).sum(axis=1)
        w = np.array([0.8, -1.5, 0.4])
        sigma = np.array([1.0, 0.5, 0.0])
        e = _expl(w, 0.2)
        r = expected_faithfulness(f, e, np.array([0.1, 0.7, -0.3]), UncertaintySpec(sigma), 100_000, 1)
        assert r.expected_f - r.f0 == pytest.approx(np.sum(w ** 2 * sigma ** 2), rel=0.05)

    def test_reference_is_clean_prediction(self):
        f = linear_model([1.0])
        e = _expl([1.0])
        r = expected_faithfulness(f, e, np.array([2.0]), UncertaintySpec(np.array([1.0])), 50_000, 3)
        # surrogate equals the model; only the surrogate side sees noise
        assert r.f0 == 0.0 and r.expected_f == pytest.approx(1.0, rel=0.03)

    def test_converges(self):
        f = linear_model([1.0, 2.0])
        e = _expl([0.9, 2.2], 0.1)
        spec = UncertaintySpec(np.array([1.0, 1.0]))
        a = expected_faithfulness(f, e, np.array([0.5, 0.5]), spec, 10_000, 4).expected_f
        b = expected_faithfulness(f, e, np.array([0.5, 0.5]), spec, 20_000, 5).expected_f
        assert abs(a - b) / b < 0.02

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            expected_faithfulness(linear_model([1.0]), _expl([1.0]), np.zeros(1), UncertaintySpec.zeros(1), 1)


class TestCurve:
    def test_always_better(self):
        curve = prob_improvement_curve(_records(np.linspace(0.1, 1, 20), np.zeros(20), "reg_lime"),
                                       _records(np.linspace(0.1, 1, 20), np.ones(20)), 4)
        np.testing.assert_array_equal(curve.prob_improved, 1.0)
        np.testing.assert_array_equal(curve.standard_error, 0.0)

    def test_identical_strict(self):
        f0 = np.linspace(0, 1, 30)
        recs = _records(f0, f0)
        curve = prob_improvement_curve(recs, recs, 5)
        np.testing.assert_array_equal(curve.prob_improved, 0.0)

    def test_bins_partition_and_se(self):
        rng = np.random.default_rng(0)
        f0 = rng.exponential(size=103)
        reg = _records(f0, f0 * rng.uniform(0.5, 1.5, 103), "reg_lime")
        curve = prob_improvement_curve(reg, _records(f0, f0), 10)
        assert curve.counts.sum() == 103 and np.all(curve.counts >= 1)
        assert np.all((curve.prob_improved >= 0) & (curve.prob_improved <= 1))
        p = curve.prob_improved
        np.testing.assert_allclose(curve.standard_error, np.sqrt(p * (1 - p) / curve.counts))
        assert np.all(np.diff(curve.bin_centers) >= 0)

    def test_positive_trend_detected(self):
        f0 = np.linspace(0.01, 1, 100)
        reg = _records(f0, np.full(100, 0.5), "reg_lime")
        curve = prob_improvement_curve(reg, _records(f0, f0), 10)
        assert curve.spearman() > 0.8

    def test_unpaired(self):
        with pytest.raises(PairingError):
            prob_improvement_curve(_records([1, 2], [1, 2]), _records([1, 2, 3], [1, 2, 3]), 2)

    def test_csv_columns(self):
        f0 = np.linspace(0, 1, 10)
        text = prob_improvement_curve(_records(f0, f0), _records(f0, f0), 2).to_csv()
        assert text.splitlines()[0] == "bin,f0_low,f0_high,f0_center,prob_improved,standard_error,count"


class TestRecords:
    def test_csv_columns(self):
        text = records_to_csv(_records([0.1], [0.2]))
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["instance_id", "technique", "f0", "expected_f", "n"]
        assert rows[1][:2] == ["0", "lime"]

    def test_json(self):
        d = json.loads(records_to_json(_records([0.1], [0.2])))
        assert d[0]["expected_f"] == 0.2

    def test_invalid_technique(self):
        with pytest.raises(ValueError):
            FaithfulnessRecord(0, 0.1, 0.1, 10, "shap")

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            FaithfulnessRecord(0, -0.1, 0.1, 10, "lime")


class TestDistance:
    def test_pythagorean(self):
        assert explanation_distance(np.array([3.0, 4, 0, 0, 0]), np.zeros(5)) == 5.0

    def test_identical_log_floor(self):
        a = np.ones(5)
        assert explanation_distance(a, a) == 0.0
        assert log_distance(a, a) == np.log(LOG_FLOOR)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            explanation_distance(np.zeros(3), np.zeros(4))

    @settings(max_examples=200)
    @given(vec, vec, vec)
    def test_metric_axioms(self, a, b, c):
        assert explanation_distance(a, b) == explanation_distance(b, a)
        assert explanation_distance(a, a) == 0.0
        assert explanation_distance(a, c) <= explanation_distance(a, b) + explanation_distance(b, c) + 1e-9


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((12, 3))
    model = init_mlp(3, (4,), 1)
    ds = StandardizedDataset(X, model(X) + 0.1 * rng.standard_normal(12), None, ["a", "b", "c"])
    return model, ds


class TestSweeps:
    def test_zero_sigma(self, toy):
        model, ds = toy
        rows = explainer_sweep_measures(model, ds, UncertaintySpec.zeros(3), [0.0, 1.0], 30, 0, 200)
        for r in rows:
            assert r["robustness"] == 0.0 and r["stability_total"] == 0.0
        rows = predictor_sweep_measures({0.0: model}, ds, UncertaintySpec.zeros(3), 30, 0, 20)
        assert rows[0]["robustness"] == 0.0 and rows[0]["stability_total"] == 0.0

    def test_explainer_sweep_leaves_model_measures(self, toy):
        model, ds = toy
        spec = UncertaintySpec(np.array([1.0, 0.0, 0.5]))
        rows = explainer_sweep_measures(model, ds, spec, [0.0, 0.1, 1.0, 10.0], 40, 2, 200)
        assert len({r["correctness_over_noise"] for r in rows}) == 1
        assert len({r["robustness"] for r in rows}) == 1
        stab = [r["stability_total"] for r in rows]
        assert stab[-1] < stab[0]
        for r in rows:
            assert r["stability_per_feature"][1] == 0.0

    def test_empty_sweep(self, toy):
        with pytest.raises(ValueError):
            explainer_sweep_measures(*toy, UncertaintySpec.zeros(3), [], 10)


def test_lime_explanations_share_neighborhood():
    f = linear_model([1.0, -2.0])
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    spec = UncertaintySpec(np.array([1.0, 0.0]))
    base, reg = lime_explanations(f, X, spec, [0.0, 5.0], seed=3, n_samples=200)
    assert [e.seed for e in base] == [e.seed for e in reg]
    assert base[0].kind == "baseline" and reg[0].kind == "regularized"
    assert abs(reg[1].weights[0]) < abs(base[1].weights[0])


def test_select_lambda_returns_candidate():
    f = lambda X: np.tanh(np.atleast_2d(X)).sum(axis=1)
    X = np.random.default_rng(1).standard_normal((6, 2))
    lam = select_lambda(f, X, UncertaintySpec(np.array([1.0, 0.0])), (0.1, 1.0, 10.0), 50, 0, 200)
    assert lam in (0.1, 1.0, 10.0)
