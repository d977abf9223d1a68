import hashlib
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from uncertain_attr.cli import main

NS = "{http://www.w3.org/2000/svg}"


def _hash_tree(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    X = rng.standard_normal((120, 3))
    y = 5.0 + 0.8 * X[:, 0] - 0.5 * X[:, 1] + 0.3 * X[:, 2] + 0.2 * rng.standard_normal(120)
    lines = ["u,v,w,score"] + [",".join(f"{v:.6f}" for v in [*row, t]) for row, t in zip(X, y)]
    (d / "toy.csv").write_text("\n".join(lines) + "\n")
    cfg = {
        "dataset": str(d / "toy.csv"),
        "features": ["u", "v", "w"],
        "label": "score",
        "uncertain_features": ["u"],
        "model": {"hidden_sizes": [4], "epochs": 5, "ig_steps": 8},
        "reg_lambdas": [1.0],
        "explainer": {"n_samples": 60, "lambda_candidates": [1.0, 10.0], "validation_size": 8},
        "mc": {"n_metric": 20, "n_display": 100, "ig_steps_report": 20},
        "simulate": {"n_bins": 3, "sweep_lambdas": [0.0, 1.0]},
        "stimuli": {"k_per_instance": 10, "n_total": 8, "n_practice": 2, "k_clusters": 3},
        "display_names": {"u": "Vinegar Taint"},
    }
    (d / "cfg.json").write_text(json.dumps(cfg))
    out = d / "run"
    assert main(["train", "--config", str(d / "cfg.json"), "--out", str(out)]) == 0
    return d, out


def _run(small, *args):
    d, out = small
    return main([*args, "--config", str(d / "cfg.json"), "--out", str(out)])


class TestTrain:
    def test_outputs(self, small):
        _, out = small
        assert {p.name for p in (out / "models").iterdir()} == {"nn.json", "regnn_lam1.json"}
        assert (out / "train_log.csv").read_text().startswith("model,lambda,epoch")
        assert json.loads((out / "scaler.json").read_text())["feature_names"] == ["u", "v", "w"]

    def test_rerun_identical(self, small, tmp_path):
        d, out = small
        other = tmp_path / "again"
        assert main(["train", "--config", str(d / "cfg.json"), "--out", str(other)]) == 0
        assert _hash_tree(other) == {k: v for k, v in _hash_tree(out).items() if k in _hash_tree(other)}

    def test_missing_dataset(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"dataset": str(tmp_path / "nope.csv")}))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "nope.csv" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert main(["train", "--config", str(cfg)]) == 2

    def test_missing_column(self, small, tmp_path, capsys):
        d, _ = small
        cfg = json.loads((d / "cfg.json").read_text())
        cfg["features"] = ["u", "vv"]
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
        assert "vv" in capsys.readouterr().err


class TestExplain:
    def test_variants_and_shared_axis(self, small):
        _, out = small
        assert _run(small, "explain", "--index", "2") == 0
        report = json.loads((out / "explain" / "instance_2.json").read_text())
        assert set(report["variants"]) == {"baseline", "show", "suppress", "showsuppress"}
        assert report["display_names"][0] == "Vinegar Taint"
        assert "subscore_uncertainty" not in report["variants"]["baseline"]
        ticks = set()
        for v in report["variants"]:
            root = ET.parse(out / "explain" / f"instance_2_{v}.svg").getroot()
            assert len(root.findall(f"{NS}rect[@class='bar']")) == 3
            marks = root.findall(f"{NS}path[@class='violin']") + root.findall(f"{NS}line[@class='ci']")
            assert bool(marks) == (v in ("show", "showsuppress"))
            ticks.add(tuple(t.text for t in root.findall(f"{NS}text")[-4:]))
        assert len(ticks) == 1

    def test_suppressed_uncertainty_smaller(self, small):
        _, out = small
        assert _run(small, "explain", "--index", "0", "--uncertainty-style", "ci") == 0
        v = json.loads((out / "explain" / "instance_0.json").read_text())["variants"]
        assert v["showsuppress"]["subscore_uncertainty"][0] <= v["show"]["subscore_uncertainty"][0]
        assert v["show"]["subscore_uncertainty"][1:] == [0.0, 0.0]

    def test_ig_explainer(self, small):
        assert _run(small, "explain", "--index", "1", "--explainer", "ig") == 0

    def test_unknown_technique(self, small, capsys):
        assert _run(small, "explain", "--techniques", "baseline,magic") == 2
        assert "showsuppress" in capsys.readouterr().err

    def test_index_out_of_range(self, small):
        assert _run(small, "explain", "--index", "999") == 2

    def test_zero_uncertainty_show_matches_baseline(self, small, tmp_path):
        d, out = small
        cfg = json.loads((d / "cfg.json").read_text())
        cfg["level"] = "none"
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        args = ["--config", str(tmp_path / "c.json"), "--out", str(out)]
        assert main(["explain", "--index", "0", "--techniques", "baseline,show", *args]) == 0
        root = ET.parse(out / "explain" / "instance_0_show.svg").getroot()
        for line in root.findall(f"{NS}line[@class='ci']"):
            assert line.get("x1") == line.get("x2")
        assert not root.findall(f"{NS}path[@class='violin']")


class TestSimulate:
    def test_levels_and_sweep(self, small):
        _, out = small
        assert _run(small, "simulate", "--levels", "high,medium,low", "--sweep") == 0
        for level in ("high", "medium", "low"):
            names = {p.name for p in (out / "simulate" / level).iterdir()}
            assert {"records_lime.csv", "records_reg_lime.csv", "records_ig_nn.csv", "records_ig_regnn.csv",
                    "curve_reglime_vs_lime.csv", "curve_igregnn_vs_ignn.csv", "curve_reglime.svg",
                    "sweep_explainer.csv", "sweep_predictor.csv", "summary.json", "distances.csv"} <= names
        ET.parse(out / "simulate" / "high" / "curve_ig.svg")

    def test_deterministic(self, small, tmp_path):
        _, out = small
        assert _run(small, "simulate") == 0
        first = _hash_tree(out / "simulate" / "high")
        assert _run(small, "simulate") == 0
        assert _hash_tree(out / "simulate" / "high") == first

    def test_empty_test_set(self, small, tmp_path):
        d, out = small
        cfg = json.loads((d / "cfg.json").read_text())
        cfg["test_fraction"] = 0.001
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["simulate", "--config", str(tmp_path / "c.json"), "--out", str(out)]) == 2

    def test_unknown_level(self, small):
        assert _run(small, "simulate", "--levels", "extreme") == 2


class TestStimuli:
    def test_outputs(self, small):
        _, out = small
        assert _run(small, "stimuli") == 0
        d = json.loads((out / "stimuli" / "stimuli.json").read_text())
        assert len(d["practice"]) == 2 and len(d["main"]) == 6
        assert (out / "stimuli" / "stimuli.csv").read_text().count("\n") == 9

    def test_tight_window_exit_3(self, small, tmp_path, capsys):
        d, out = small
        cfg = json.loads((d / "cfg.json").read_text())
        cfg["stimuli"]["window"] = [49.999, 50.001]
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["stimuli", "--config", str(tmp_path / "c.json"), "--out", str(out)]) == 3
        assert "in_window" in capsys.readouterr().err


def test_untrained_output_dir(tmp_path, small):
    d, _ = small
    assert main(["simulate", "--config", str(d / "cfg.json"), "--out", str(tmp_path / "empty")]) == 2


def test_seed_override_changes_models(small, tmp_path):
    d, out = small
    assert main(["train", "--config", str(d / "cfg.json"), "--out", str(tmp_path / "s1"), "--seed", "1"]) == 0
    assert (tmp_path / "s1" / "models" / "nn.json").read_bytes() != (out / "models" / "nn.json").read_bytes()
