"""Command-line front end: ``train``, ``explain``, ``simulate`` and ``stimuli``.

Every command reads one JSON config (``--config``), applies flag overrides,
and writes deterministic files under ``--out``. Exit codes: 0 success,
1 internal error, 2 usage or configuration error, 3 empty result.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import metrics as M
from . import propagate as P
from . import stimuli as S
from .explainer import (
    attribution_vector,
    fit_lime,
    fit_regularized_lime,
    ig_linear_explanation,
    sample_neighborhood,
)
from .predictor import MlpPredictor, TrainConfig, train_mlp, train_regularized_mlp
from .svg import TornadoPanel, line_chart_svg, shared_extent, tornado_svg

log = logging.getLogger("uncertain_attr")

VARIANTS = ("baseline", "show", "suppress", "showsuppress")

DEFAULT_CONFIG = {
    "dataset": None,
    "delimiter": ",",
    "features": D.WINE_FEATURES,
    "label": D.WINE_LABEL,
    "test_fraction": 0.2,
    "split_seed": 7,
    "uncertain_features": D.WINE_UNCERTAIN,
    "level": "high",
    "seed": 0,
    "model": {"hidden_sizes": [32, 16], "learning_rate": 0.01, "epochs": 300, "batch_size": 64, "ig_steps": 50},
    "reg_lambdas": [1.0],
    "explainer": {
        "n_samples": 1000,
        "kernel_width": None,
        "lambda": None,
        "lambda_candidates": [0.1, 1.0, 10.0],
        "validation_size": 64,
    },
    "mc": {"n_metric": 150, "n_display": 1000, "ig_steps_report": 200},
    "simulate": {"levels": ["high"], "n_bins": 10, "sweep_lambdas": [0.0, 0.1, 1.0, 10.0]},
    "stimuli": {
        "level": "medium",
        "k_per_instance": 50,
        "window": [40.0, 60.0],
        "threshold": 50.0,
        "n_total": 34,
        "n_practice": 4,
        "k_clusters": 10,
        "suppress_lambda": 10.0,
    },
    "display_names": {"volatile acidity": "Vinegar Taint", "total sulfur dioxide": "SO2"},
}


class UsageError(Exception):
    """Bad configuration or arguments (exit code 2)."""


class EmptyResult(Exception):
    """A pipeline produced nothing to report (exit code 3)."""


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = _merge(cfg, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.delimiter is not None:
        cfg["delimiter"] = args.delimiter
    if cfg["dataset"] is None:
        cfg["dataset"] = str(D.wine_csv_path())
    if not Path(cfg["dataset"]).exists():
        raise UsageError(f"dataset not found: {cfg['dataset']}")
    return cfg


def load_data(cfg):
    try:
        raw = D.ingest(cfg["dataset"], cfg["features"], cfg["label"], delimiter=cfg["delimiter"])
    except (D.SchemaError, D.ParseError) as exc:
        raise UsageError(str(exc)) from None
    tr, te = D.split(raw, cfg["test_fraction"], cfg["split_seed"])
    if len(te) == 0:
        raise UsageError("test split is empty")
    scaler, train = D.fit_standardize(tr)
    return scaler, train, D.transform(scaler, te)


def display_names(cfg) -> list[str]:
    return [cfg["display_names"].get(f, f) for f in cfg["features"]]


def train_config(cfg, lam=0.0) -> TrainConfig:
    m = cfg["model"]
    return TrainConfig(tuple(m["hidden_sizes"]), m["learning_rate"], m["epochs"], m["batch_size"],
                       cfg["seed"], m["ig_steps"], lam)


def _lam_tag(lam: float) -> str:
    return f"{lam:g}".replace(".", "p")


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def load_models(out: Path, cfg):
    mdir = out / "models"
    nn_path = mdir / "nn.json"
    if not nn_path.exists():
        raise UsageError(f"no trained models under {mdir}; run `train` first")
    nn = MlpPredictor.from_dict(json.loads(nn_path.read_text()))
    regs = {}
    for lam in cfg["reg_lambdas"]:
        p = mdir / f"regnn_lam{_lam_tag(lam)}.json"
        if not p.exists():
            raise UsageError(f"missing regularized model {p}; run `train` first")
        regs[float(lam)] = MlpPredictor.from_dict(json.loads(p.read_text()))
    return nn, regs


def suppress_lambda(cfg, model, train, spec) -> float:
    ex = cfg["explainer"]
    if ex["lambda"] is not None:
        return float(ex["lambda"])
    rng = np.random.default_rng(P.derive_seed(cfg["seed"], 101))
    idx = np.sort(rng.choice(len(train), size=min(ex["validation_size"], len(train)), replace=False))
    return M.select_lambda(model, train.features[idx], spec, ex["lambda_candidates"], cfg["mc"]["n_metric"],
                           P.derive_seed(cfg["seed"], 102), ex["n_samples"], ex["kernel_width"])


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg, out: Path) -> int:
    scaler, train, _ = load_data(cfg)
    spec = D.make_uncertainty_spec(cfg["level"], cfg["uncertain_features"], train)
    _write(out / "config.json", json.dumps(cfg, indent=2, sort_keys=True))
    _write(out / "scaler.json", scaler.to_json())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "lambda", "epoch", "objective", "train_mse"])
    nn, hist = train_mlp(train, train_config(cfg))
    _write(out / "models" / "nn.json", nn.to_json("scaler.json"))
    runs = [("nn", 0.0, hist)]
    for lam in cfg["reg_lambdas"]:
        reg, h = train_regularized_mlp(train, spec, train_config(cfg, float(lam)))
        name = f"regnn_lam{_lam_tag(lam)}"
        _write(out / "models" / f"{name}.json", reg.to_json("scaler.json"))
        runs.append((name, float(lam), h))
    for name, lam, h in runs:
        for e, (obj, mse) in enumerate(zip(h.epoch_loss, h.epoch_data_loss)):
            w.writerow([name, repr(lam), e, repr(obj), repr(mse)])
    _write(out / "train_log.csv", buf.getvalue())
    print(f"trained {len(runs)} models into {out / 'models'}")
    return 0


def build_report(cfg, out: Path, index: int, explainer: str = "lime", style: str = "violin") -> tuple[dict, list]:
    """Explanation variants for one test instance, plus tornado panels (display scale)."""
    scaler, train, test = load_data(cfg)
    if not 0 <= index < len(test):
        raise UsageError(f"instance index {index} outside test set of size {len(test)}")
    nn, regs = load_models(out, cfg)
    spec = D.make_uncertainty_spec(cfg["level"], cfg["uncertain_features"], train)
    x = test.features[index]
    ex = cfg["explainer"]
    seed = P.derive_seed(cfg["seed"], 200, index)
    if explainer == "lime":
        lam = suppress_lambda(cfg, nn, train, spec)
        nb = sample_neighborhood(x, ex["n_samples"], seed, ex["kernel_width"])
        base, supp = fit_lime(nn, nb), fit_regularized_lime(nn, nb, spec, lam)
        base_model, supp_model = nn, nn
    elif explainer == "ig":
        lam = float(cfg["reg_lambdas"][0])
        steps = cfg["mc"]["ig_steps_report"]
        base_model, supp_model = nn, regs[lam]
        base, supp = ig_linear_explanation(nn, x, steps), ig_linear_explanation(supp_model, x, steps)
    else:
        raise UsageError(f"unknown explainer {explainer!r}; choose lime or ig")
    hyp = P.sample_hypotheticals(x, spec, cfg["mc"]["n_display"], P.derive_seed(seed, 1))
    sc = S.DISPLAY_SCALE
    report = {"instance_index": index, "explainer": explainer, "suppress_lambda": lam,
              "features": cfg["features"], "display_names": display_names(cfg),
              "readings": scaler.inverse(x).tolist(), "actual_score": float(test.labels[index]) * sc,
              "display_scale": sc, "variants": {}}
    panels = {}
    for variant in VARIANTS:
        suppressed = variant in ("suppress", "showsuppress")
        expl, model = (supp, supp_model) if suppressed else (base, base_model)
        dist = P.attribution_distribution(P.fixed_explainer(expl), hyp)
        scores = P.score_samples(expl, hyp)
        shown = variant in ("show", "showsuppress")
        entry = {
            "explanation": expl.to_dict(),
            "predicted_score": round(float(model(x[None])[0]) * sc, 1),
            "subscores": [round(v * sc, 1) for v in attribution_vector(expl, x)],
            "base_value": round(expl.intercept * sc, 1),
        }
        if shown:
            entry["subscore_uncertainty"] = [round(v * sc, 1) for v in dist.ci90_halfwidth]
            entry["score_uncertainty"] = round(float(P.ci90_halfwidth(scores)) * sc, 1)
            entry["distribution"] = dist.to_dict(cfg.get("emit_samples", False))
        report["variants"][variant] = entry
        dens = None
        if shown and style == "violin":
            dens = [None if g is None else (g[0] * sc, g[1] / sc) for g in dist.density_grid]
        panels[variant] = TornadoPanel(
            f"{variant} ({explainer})", attribution_vector(expl, x) * sc,
            dist.ci90_halfwidth * sc if shown and style == "ci" else None, dens)
    return report, panels


def cmd_explain(cfg, out: Path, args) -> int:
    techniques = [t.strip().lower() for t in args.techniques.split(",") if t.strip()]
    unknown = [t for t in techniques if t not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown technique(s) {unknown}; valid names: {list(VARIANTS)}")
    cfg = dict(cfg, emit_samples=args.emit_samples)
    report, panels = build_report(cfg, out, args.index, args.explainer, args.uncertainty_style)
    report["variants"] = {k: v for k, v in report["variants"].items() if k in techniques}
    edir = out / "explain"
    _write(edir / f"instance_{args.index}.json", json.dumps(report, indent=1))
    extent = shared_extent(list(panels.values()))
    for t in techniques:
        _write(edir / f"instance_{args.index}_{t}.svg", tornado_svg(panels[t], display_names(cfg), extent))
    print(f"wrote {len(techniques)} explanation(s) for test instance {args.index} to {edir}")
    return 0


def _simulate_level(cfg, out_dir: Path, level: str, nn, regs, train, test, sweep: bool):
    spec = D.make_uncertainty_spec(level, cfg["uncertain_features"], train)
    ex, mc, sim = cfg["explainer"], cfg["mc"], cfg["simulate"]
    X = test.features
    n = mc["n_metric"]
    hyp_seed = P.derive_seed(cfg["seed"], 300)
    lam = suppress_lambda(cfg, nn, train, spec)
    lime, reglime = M.lime_explanations(nn, X, spec, [0.0, lam], P.derive_seed(cfg["seed"], 301),
                                        ex["n_samples"], ex["kernel_width"])
    reg_lam = float(cfg["reg_lambdas"][0])
    regnn = regs[reg_lam]
    ig_nn = M.ig_explanations(nn, X, mc["ig_steps_report"])
    ig_reg = M.ig_explanations(regnn, X, mc["ig_steps_report"])
    records = {
        "lime": M.records_for(nn, lime, X, spec, "lime", n, hyp_seed),
        "reg_lime": M.records_for(nn, reglime, X, spec, "reg_lime", n, hyp_seed),
        "ig_nn": M.records_for(nn, ig_nn, X, spec, "ig_nn", n, hyp_seed),
        "ig_regnn": M.records_for(regnn, ig_reg, X, spec, "ig_regnn", n, hyp_seed),
    }
    for tech, recs in records.items():
        _write(out_dir / f"records_{tech}.csv", M.records_to_csv(recs))
    curves = {
        "reglime_vs_lime": M.prob_improvement_curve(records["reg_lime"], records["lime"], sim["n_bins"]),
        "igregnn_vs_ignn": M.prob_improvement_curve(records["ig_regnn"], records["ig_nn"], sim["n_bins"]),
        "ignn_vs_ignn": M.prob_improvement_curve(records["ig_nn"], records["ig_nn"], sim["n_bins"]),
    }
    for name, c in curves.items():
        _write(out_dir / f"curve_{name}.csv", c.to_csv())
    _write(out_dir / "curve_reglime.svg", line_chart_svg(
        f"RegLIME(NN) vs LIME(NN), {level} uncertainty", "baseline F0", "Prob(E[F] < F0)",
        [{"name": "RegLIME(NN)", "x": curves["reglime_vs_lime"].bin_centers,
          "y": curves["reglime_vs_lime"].prob_improved, "se": curves["reglime_vs_lime"].standard_error}]))
    _write(out_dir / "curve_ig.svg", line_chart_svg(
        f"IG(RegNN) and IG(NN), {level} uncertainty", "baseline F0", "Prob(E[F] < F0)",
        [{"name": "IG(RegNN)", "x": c.bin_centers, "y": c.prob_improved, "se": c.standard_error}
         for c in (curves["igregnn_vs_ignn"],)] +
        [{"name": "IG(NN)", "x": curves["ignn_vs_ignn"].bin_centers, "y": curves["ignn_vs_ignn"].prob_improved,
          "se": curves["ignn_vs_ignn"].standard_error}]))

    attrs = {name: np.array([attribution_vector(e, e.center) for e in es])
             for name, es in (("lime", lime), ("reg_lime", reglime), ("ig_nn", ig_nn), ("ig_regnn", ig_reg))}
    pairs = [("lime", "ig_nn"), ("reg_lime", "ig_regnn"), ("reg_lime", "lime"), ("ig_regnn", "ig_nn")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance_id"] + [f"{a}|{b}" for a, b in pairs])
    dist = {p: [] for p in pairs}
    for i in range(len(X)):
        row = [i]
        for a, b in pairs:
            d = M.explanation_distance(attrs[a][i], attrs[b][i])
            dist[(a, b)].append(d)
            row.append(repr(d))
        w.writerow(row)
    _write(out_dir / "distances.csv", buf.getvalue())

    summary = {
        "level": level,
        "reg_lime_lambda": lam,
        "reg_nn_lambda": reg_lam,
        "n_instances": len(X),
        "n_hypothetical": n,
        "spearman": {k: c.spearman() for k, c in curves.items()},
        "f0_range": {k: [min(r.f0 for r in v), max(r.f0 for r in v)] for k, v in records.items()},
        "median_distance": {f"{a}|{b}": float(np.median(v)) for (a, b), v in dist.items()},
        "median_log_distance": {f"{a}|{b}": float(np.median(np.log(np.maximum(v, M.LOG_FLOOR))))
                                for (a, b), v in dist.items()},
    }
    if sweep:
        rows_e = M.explainer_sweep_measures(nn, test, spec, sim["sweep_lambdas"], n,
                                            P.derive_seed(cfg["seed"], 302), ex["n_samples"], ex["kernel_width"])
        _write(out_dir / "sweep_explainer.csv", M.sweep_to_csv(rows_e, cfg["features"]))
        models = {0.0: nn, **regs}
        rows_p = M.predictor_sweep_measures(models, test, spec, n, P.derive_seed(cfg["seed"], 303),
                                            cfg["model"]["ig_steps"])
        _write(out_dir / "sweep_predictor.csv", M.sweep_to_csv(rows_p, cfg["features"]))
    _write(out_dir / "summary.json", json.dumps(summary, indent=1, sort_keys=True))
    return summary


def cmd_simulate(cfg, out: Path, args) -> int:
    _, train, test = load_data(cfg)
    nn, regs = load_models(out, cfg)
    levels = [l.strip() for l in args.levels.split(",")] if args.levels else cfg["simulate"]["levels"]
    for level in levels:
        if level not in D.UNCERTAINTY_LEVELS or level == "none":
            raise UsageError(f"unknown uncertainty level {level!r}")
    for level in levels:
        s = _simulate_level(cfg, out / "simulate" / level, level, nn, regs, train, test, args.sweep)
        print(f"{level}: spearman {s['spearman']}")
    return 0


def cmd_stimuli(cfg, out: Path, args) -> int:
    scaler, train, test = load_data(cfg)
    nn, _ = load_models(out, cfg)
    st = cfg["stimuli"]
    spec = D.make_uncertainty_spec(st["level"], cfg["uncertain_features"], train)
    seed = P.derive_seed(cfg["seed"], 400)
    thr = st["threshold"] / S.DISPLAY_SCALE
    window = tuple(v / S.DISPLAY_SCALE for v in st["window"])
    cands = S.perturb_candidates(test, spec, nn, st["k_per_instance"], seed, st["suppress_lambda"],
                                 cfg["mc"]["n_metric"], cfg["explainer"]["n_samples"],
                                 cfg["explainer"]["kernel_width"])
    kept, counts = S.filter_candidates(cands, window, thr, return_counts=True)
    if not kept:
        raise EmptyResult(f"no candidates left after filtering: {counts}")
    labels = S.cluster_candidates(kept, min(st["k_clusters"], len(kept)), seed)
    try:
        stim = S.stratified_select(kept, labels, st["n_total"], st["n_practice"], thr, seed)
    except S.BalanceError as exc:
        raise EmptyResult(f"{exc}; filter counts {counts}") from None
    except ValueError as exc:
        raise EmptyResult(f"{exc}; filter counts {counts}") from None
    stim = S.StimulusSet(stim.practice, stim.main, stim.cluster_labels, stim.seed, counts)
    sdir = out / "stimuli"
    _write(sdir / "stimuli.json", stim.to_json(thr))
    _write(sdir / "stimuli.csv", S.stimuli_to_csv(stim, scaler, spec, display_names(cfg), thr))
    mean, sd = stim.closeness(thr)
    print(f"selected {len(stim.practice)} practice + {len(stim.main)} main stimuli; "
          f"closeness to threshold {mean:.2f} (SD {sd:.2f}); filter counts {counts}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the base seed")
    common.add_argument("--out", default="runs/default", help="output directory")
    common.add_argument("--delimiter", help="CSV delimiter (the UCI original uses ';')")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="uncertain-attr", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the baseline and penalized predictors")
    ex = sub.add_parser("explain", parents=[common], help="explain one test instance")
    ex.add_argument("--index", type=int, default=0, help="test-set row to explain")
    ex.add_argument("--techniques", default=",".join(VARIANTS))
    ex.add_argument("--explainer", default="lime", choices=["lime", "ig"])
    ex.add_argument("--uncertainty-style", default="violin", choices=["violin", "ci"])
    ex.add_argument("--emit-samples", action="store_true", help="include raw attribution samples in the JSON")
    sim = sub.add_parser("simulate", parents=[common], help="faithfulness simulation over the test set")
    sim.add_argument("--levels", help="comma-separated uncertainty levels, e.g. high,medium,low")
    sim.add_argument("--sweep", action="store_true", help="also emit the lambda-sweep measures")
    sub.add_parser("stimuli", parents=[common], help="select controlled stimuli")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        out = Path(args.out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "explain":
            return cmd_explain(cfg, out, args)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args)
        return cmd_stimuli(cfg, out, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EmptyResult as exc:
        print(f"empty result: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
