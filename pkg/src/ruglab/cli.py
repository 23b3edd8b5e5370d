"""Command line front end.

    ruglab synth --n-tokens 2000 --seed 7 --out corpus
    ruglab fuse --protocol 3 --approach tvl --data corpus --out runs/p3
    ruglab report runs --out runs

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 experiment failure.
Settings resolve as built-in default < --config file < explicit flag; the result is
printed to stderr as JSON before any work starts.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .evaluation import report as metrics_report
from .experiments import (
    FULL_GRIDS,
    QUICK_GRIDS,
    ExperimentConfig,
    ExperimentError,
    LabeledDataset,
    Pipeline,
    build_dataset,
    expand_grid,
    fit_pipeline,
    grid_search,
    rfe,
    run_protocol,
    stratified_split,
)
from .features import FEATURE_NAMES, PreprocessorError, extract_features, write_features
from .labeling import APPROACHES, LabelConfig, is_early_rug, label_history, sweep_horizon, sweep_p
from .learners import (
    FAMILIES,
    FeatureMismatch,
    ModelLoadError,
    UnsupportedWarmStart,
    importance,
    load_pipeline,
    save_model,
)
from .market_data import (
    DEFAULT_DATE_HI,
    DEFAULT_DATE_LO,
    SOURCES,
    ConfigError,
    CorpusFilter,
    ParseError,
    TokenHistory,
    assemble_histories,
    filter_corpus,
    load_corpus,
    parse_date,
    split_by_source,
)
from .synth import SynthConfig, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EXPERIMENT = 0, 1, 2, 3

DEFAULT_P_GRID = tuple(round(0.5 + 0.01 * i, 2) for i in range(51))
DEFAULT_HORIZONS = (5, 10, 15, 20, 30, 45, 60, 90, 120, 180, 240)

REPORT_COLUMNS = (
    "approach", "protocol", "family", "train_source", "test_source", "seed",
    "auc", "precision_0", "recall_0", "f1_0", "precision_1", "recall_1", "f1_1",
    "accuracy", "n",
)

CONFIG_KEYS = {
    "approach", "protocol", "family", "grid", "seed", "test_source", "n_additional",
    "warm_learning_rate", "drop_early_rugs", "label", "data", "filter", "synth",
}
LABEL_KEYS = {"p", "horizon_minutes", "idle_gap_minutes", "observation_minutes"}
DATA_KEYS = {"stonfi_dir", "dedust_dir", "dirs"}
FILTER_KEYS = {"date_lo", "date_hi", "require_pool"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- argument groups


def _common(p: argparse.ArgumentParser, out_default: str = "out"):
    p.add_argument("--config", metavar="PATH", help="JSON settings file")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out", metavar="DIR", default=out_default,
                   help=f"output directory (default {out_default})")


def _data(p: argparse.ArgumentParser):
    p.add_argument("--data", metavar="DIR", action="append",
                   help="corpus directory with trades.csv, pools.csv, tokens.csv "
                        "(repeatable; default corpus)")
    p.add_argument("--date-lo", metavar="DATE", help="earliest trading start (YYYY-MM-DD or unix)")
    p.add_argument("--date-hi", metavar="DATE", help="latest trading start (YYYY-MM-DD or unix)")
    p.add_argument("--no-require-pool", action="store_true",
                   help="keep tokens that have no pool state")


def _label(p: argparse.ArgumentParser, approach: bool = True):
    if approach:
        p.add_argument("--approach", choices=APPROACHES)
    p.add_argument("--p", type=float, help="TVL drop threshold (default 0.99)")
    p.add_argument("--horizon", type=int, metavar="MIN", help="prediction horizon (default 60)")
    p.add_argument("--gap", type=int, metavar="MIN", help="idle gap length (default 60)")
    p.add_argument("--window", type=int, metavar="MIN", help="observation window (default 5)")


def _learn(p: argparse.ArgumentParser):
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--grid", choices=("quick", "full"), help="hyper-parameter grid (default quick)")
    p.add_argument("--drop-early-rugs", action="store_true", default=None,
                   help="drop rugs already visible inside the observation window")


def _figures(p: argparse.ArgumentParser):
    p.add_argument("--no-figures", action="store_true", help="skip PNG output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ruglab", description="Early rug-pull detection on DEX token launches.")
    parser.add_argument("--version", action="version", version=f"ruglab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-source corpus")
    _common(p, out_default="corpus")
    p.add_argument("--n-tokens", type=int, help="number of tokens (default 2000)")
    p.add_argument("--signal", type=float, help="early-window signal strength (default 1.0)")

    p = sub.add_parser("ingest", help="parse and filter a corpus; write a per-token summary")
    _common(p)
    _data(p)

    p = sub.add_parser("label", help="write labels.csv")
    _common(p)
    _data(p)
    _label(p)
    p.add_argument("--drop-early-rugs", action="store_true", default=None)

    p = sub.add_parser("featurize", help="write features.csv")
    _common(p)
    _data(p)
    p.add_argument("--window", type=int, metavar="MIN", help="observation window (default 5)")

    p = sub.add_parser("sweep-p", help="rug fraction against the TVL drop threshold")
    _common(p)
    _data(p)
    p.add_argument("--p-grid", metavar="LIST", help="comma separated thresholds (default 0.50..1.00)")
    p.add_argument("--horizon", type=int, metavar="MIN", help="prediction horizon (default 60)")
    _figures(p)

    p = sub.add_parser("sweep-horizon", help="rug fraction against the prediction horizon")
    _common(p)
    _data(p)
    _label(p)
    p.add_argument("--horizons", metavar="LIST", help="comma separated minutes")
    _figures(p)

    p = sub.add_parser("train", help="grid-search, fit and save a model")
    _common(p)
    _data(p)
    _label(p)
    _learn(p)
    p.add_argument("--source", choices=SOURCES + ("both",), default="stonfi",
                   help="training source (default stonfi)")
    _figures(p)

    p = sub.add_parser("evaluate", help="score a saved model; write metrics.json")
    _common(p)
    _data(p)
    _label(p)
    p.add_argument("--model", metavar="PATH", required=True, help="model.json written by train")
    p.add_argument("--split", choices=("test", "all"), default="test",
                   help="rows to score: the held-out rows recorded by train, or every row")
    p.add_argument("--threshold", type=float, default=0.5)
    _figures(p)

    p = sub.add_parser("fuse", help="run a cross-exchange protocol (1-5)")
    _common(p)
    _data(p)
    _label(p)
    _learn(p)
    p.add_argument("--protocol", type=int, choices=range(1, 6))
    p.add_argument("--test-source", choices=SOURCES, help="protocol 3 test source")
    p.add_argument("--n-additional", type=int, metavar="N",
                   help="warm-start trees (protocols 4/5; default: base n_estimators)")
    _figures(p)

    p = sub.add_parser("rfe", help="recursive feature elimination")
    _common(p)
    _data(p)
    _label(p)
    _learn(p)
    p.add_argument("--source", choices=SOURCES + ("both",), default="stonfi")
    p.add_argument("--n-features", type=int, default=10, help="features to keep (default 10)")
    p.add_argument("--step", type=int, default=1, help="features dropped per round (default 1)")
    _figures(p)

    p = sub.add_parser("report", help="merge metrics.json files into one comparison table")
    p.add_argument("inputs", nargs="+", metavar="PATH",
                   help="metrics.json files, or directories searched recursively")
    p.add_argument("--out", metavar="DIR", default="out")
    _figures(p)
    return parser


# ---------------------------------------------------------------- settings


def _read_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    _check_keys(cfg, CONFIG_KEYS, path, "")
    for section, allowed in (("label", LABEL_KEYS), ("data", DATA_KEYS), ("filter", FILTER_KEYS)):
        if section in cfg:
            if not isinstance(cfg[section], dict):
                raise UsageError(f"{path}: key '{section}' must be an object")
            _check_keys(cfg[section], allowed, path, section + ".")
    return cfg


def _check_keys(d: dict, allowed: set, path: str, prefix: str):
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise UsageError(f"{path}: unknown config key '{prefix}{unknown[0]}' "
                         f"(allowed: {', '.join(sorted(allowed))})")


def _pick(args, flag: str, cfg: dict, key: str, default):
    v = getattr(args, flag, None)
    if v is not None:
        return v
    return cfg.get(key, default)


def resolve(args) -> dict:
    """Effective settings for one invocation."""
    cfg = _read_config(getattr(args, "config", None))
    eff: dict = {"command": args.command}
    if args.command == "report":
        eff.update(inputs=list(args.inputs), out=args.out, figures=not args.no_figures)
        return eff
    eff["seed"] = int(_pick(args, "seed", cfg, "seed", 0))
    eff["out"] = args.out

    if args.command == "synth":
        extra = dict(cfg.get("synth", {}))
        extra["n_tokens"] = _pick(args, "n_tokens", extra, "n_tokens", 2000)
        extra["signal"] = _pick(args, "signal", extra, "signal", 1.0)
        extra["seed"] = eff["seed"]
        known = {f.name for f in fields(SynthConfig)}
        bad = sorted(set(extra) - known)
        if bad:
            raise UsageError(f"unknown config key 'synth.{bad[0]}'")
        eff["synth"] = extra
        return eff

    data = cfg.get("data", {})
    dirs = list(args.data or [])
    if not dirs:
        dirs = list(data.get("dirs", []))
        dirs += [data[k] for k in ("stonfi_dir", "dedust_dir") if k in data]
    eff["data"] = list(dict.fromkeys(dirs or ["corpus"]))
    flt = cfg.get("filter", {})
    lo = args.date_lo if args.date_lo is not None else flt.get("date_lo", DEFAULT_DATE_LO)
    hi = args.date_hi if args.date_hi is not None else flt.get("date_hi", DEFAULT_DATE_HI)
    try:
        lo, hi = parse_date(str(lo)), parse_date(str(hi))
    except ValueError as e:
        raise UsageError(f"bad date: {e}") from None
    eff["filter"] = {"date_lo": lo, "date_hi": hi,
                     "require_pool": (not args.no_require_pool) and flt.get("require_pool", True)}

    lab = cfg.get("label", {})
    eff["label"] = {
        "approach": _pick(args, "approach", cfg, "approach", "tvl"),
        "p": float(_pick(args, "p", lab, "p", 0.99)),
        "horizon_minutes": int(_pick(args, "horizon", lab, "horizon_minutes", 60)),
        "idle_gap_minutes": int(_pick(args, "gap", lab, "idle_gap_minutes", 60)),
        "observation_minutes": int(_pick(args, "window", lab, "observation_minutes", 5)),
    }
    eff["drop_early_rugs"] = bool(_pick(args, "drop_early_rugs", cfg, "drop_early_rugs", False))
    if hasattr(args, "family"):
        eff["family"] = _pick(args, "family", cfg, "family", "reg2boost")
        if eff["family"] not in FAMILIES:
            raise UsageError(f"config key 'family': unknown family {eff['family']!r}")
        grid = _pick(args, "grid", cfg, "grid", "quick")
        if isinstance(grid, str):
            if grid not in ("quick", "full"):
                raise UsageError(f"config key 'grid': expected quick, full or an object, got {grid!r}")
            grid = (QUICK_GRIDS if grid == "quick" else FULL_GRIDS)[eff["family"]]
        elif not isinstance(grid, dict) or not grid:
            raise UsageError("config key 'grid' must be quick, full or a non-empty object")
        eff["grid"] = grid
    if args.command == "fuse":
        eff["protocol"] = int(_pick(args, "protocol", cfg, "protocol", 1))
        if eff["protocol"] not in range(1, 6):
            raise UsageError(f"config key 'protocol': expected 1..5, got {eff['protocol']}")
        eff["test_source"] = _pick(args, "test_source", cfg, "test_source", "stonfi")
        eff["n_additional"] = _pick(args, "n_additional", cfg, "n_additional", None)
        eff["warm_learning_rate"] = cfg.get("warm_learning_rate")
    if args.command == "sweep-p":
        eff["p_grid"] = (_parse_list(args.p_grid, float, "--p-grid") if args.p_grid
                         else list(DEFAULT_P_GRID))
    if args.command == "sweep-horizon":
        eff["horizons"] = (_parse_list(args.horizons, int, "--horizons") if args.horizons
                           else list(DEFAULT_HORIZONS))
        if min(eff["horizons"]) < eff["label"]["observation_minutes"]:
            raise UsageError("--horizons: every horizon must be >= the observation window")
    if args.command == "ingest":
        del eff["label"], eff["drop_early_rugs"]
    if args.command in ("train", "rfe"):
        eff["source"] = args.source
    if args.command == "rfe":
        if not 1 <= args.n_features <= len(FEATURE_NAMES):
            raise UsageError(f"--n-features must lie in [1, {len(FEATURE_NAMES)}]")
        if args.step < 1:
            raise UsageError("--step must be >= 1")
        # RFE refits many times, so it uses the first grid point rather than a search
        eff.update(n_features=args.n_features, step=args.step,
                   params=expand_grid(eff["grid"])[0])
    if args.command == "evaluate":
        eff.update(model=args.model, split=args.split, threshold=args.threshold)
    if hasattr(args, "no_figures"):
        eff["figures"] = not args.no_figures
    return eff


def _label_config(eff: dict) -> LabelConfig:
    return LabelConfig(**eff["label"])


# ---------------------------------------------------------------- data access


def _load(eff: dict) -> list[TokenHistory]:
    trades, pools, metas = [], [], []
    for d in eff["data"]:
        if not Path(d).is_dir():
            raise DataError(f"corpus directory not found: {d}")
        t, p, m = load_corpus(d)
        trades += t
        pools += p
        metas += m
    f = eff["filter"]
    hist = filter_corpus(assemble_histories(trades, pools, metas),
                         CorpusFilter(f["date_lo"], f["date_hi"], f["require_pool"]))
    if not hist:
        raise DataError(f"no tokens left after filtering {', '.join(eff['data'])}")
    return hist


def _datasets(eff: dict, histories) -> tuple[dict, dict]:
    cfg = _label_config(eff)
    out, labels = {}, {}
    for src, hs in split_by_source(histories).items():
        if hs:
            out[src], labels[src] = build_dataset(hs, cfg, eff["drop_early_rugs"])
        else:
            out[src], labels[src] = None, []
    return out, labels


def _pool(ds: dict, source: str) -> LabeledDataset:
    parts = [ds[s] for s in (SOURCES if source == "both" else (source,)) if ds.get(s) is not None]
    if not parts or sum(len(p) for p in parts) == 0:
        raise DataError(f"no {source} tokens in the corpus")
    return parts[0] if len(parts) == 1 else LabeledDataset.concat(parts)


# ---------------------------------------------------------------- writers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _clean(obj):
    """JSON-safe copy: NaN and inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_importances(path: Path, imp: dict):
    rows = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))
    _write_csv(path, ("feature", "importance"), rows)


def _write_cv_table(path: Path, table: list[dict]):
    rows = [(json.dumps(r["params"], sort_keys=True), *r["fold_aucs"], r["mean_auc"])
            for r in table]
    k = len(table[0]["fold_aucs"]) if table else 0
    _write_csv(path, ("params", *(f"fold_{i}" for i in range(k)), "mean_auc"), rows)


def _figure(eff: dict, fn, *a, **kw):
    if eff.get("figures", True):
        from . import plotting
        getattr(plotting, fn)(*a, **kw)


# ---------------------------------------------------------------- commands


def cmd_synth(eff: dict) -> int:
    try:
        cfg = SynthConfig(**eff["synth"])
    except TypeError as e:
        raise UsageError(f"synth settings: {e}") from None
    corpus = generate(cfg)
    out = corpus.write(eff["out"])
    counts = {s: 0 for s in SOURCES}
    for m in {t.token_id: t.source for t in corpus.trades}.values():
        counts[m] += 1
    print(f"wrote {len(corpus.ground_truth)} tokens ({counts['stonfi']} stonfi, "
          f"{counts['dedust']} dedust), {len(corpus.trades)} trades to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_ingest(eff: dict) -> int:
    hist = _load(eff)
    rows = [(h.token_id, h.source, h.trading_start, len(h.trades), len(h.pool_states),
             int(h.meta.creator_id is not None)) for h in hist]
    out = Path(eff["out"]) / "histories.csv"
    _write_csv(out, ("token_id", "source", "trading_start", "n_trades", "n_pool_states",
                     "has_meta"), rows)
    by = split_by_source(hist)
    print(f"{len(hist)} tokens kept ({len(by['stonfi'])} stonfi, {len(by['dedust'])} dedust); "
          f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_label(eff: dict) -> int:
    cfg = _label_config(eff)
    rows = []
    for h in _load(eff):
        lab = label_history(h, cfg)
        if eff["drop_early_rugs"] and is_early_rug(lab, cfg):
            continue
        rows.append((lab.token_id, lab.source, lab.approach, cfg.p, cfg.horizon_minutes,
                     lab.label, lab.md, lab.annotation))
    out = Path(eff["out"]) / "labels.csv"
    _write_csv(out, ("token_id", "source", "approach", "p", "horizon_minutes", "label", "md",
                     "annotation"), rows)
    n1 = sum(r[5] for r in rows)
    print(f"{len(rows)} tokens labeled, {n1} rug; wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_featurize(eff: dict) -> int:
    window = eff["label"]["observation_minutes"]
    vectors = [extract_features(h, window) for h in _load(eff)]
    out = Path(eff["out"]) / "features.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as f:
        write_features(f, vectors)
    print(f"{len(vectors)} feature rows; wrote {out}", file=sys.stderr)
    return EXIT_OK


def _by_source(hist) -> dict[str, list]:
    groups = {s: hs for s, hs in split_by_source(hist).items() if hs}
    groups["all"] = list(hist)
    return groups


def _parse_list(text: str, conv, flag: str):
    try:
        vals = [conv(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected a comma separated list, got {text!r}") from None
    if not vals:
        raise UsageError(f"{flag}: empty list")
    return vals


def cmd_sweep_p(eff: dict, args) -> int:
    grid = eff["p_grid"]
    horizon = eff["label"]["horizon_minutes"]
    series = {name: sweep_p(hs, grid, horizon) for name, hs in _by_source(_load(eff)).items()}
    out = Path(eff["out"])
    _write_csv(out / "sweep_p.csv", ("source", "p", "rug_fraction"),
               [(name, p, fr) for name in sorted(series) for p, fr in series[name]])
    _figure(eff, "plot_sweep_p", series, out / "sweep_p.png", horizon)
    print(f"wrote {out / 'sweep_p.csv'}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep_horizon(eff: dict, args) -> int:
    hz = eff["horizons"]
    cfg = _label_config(eff)
    series = {name: sweep_horizon(hs, hz, cfg) for name, hs in _by_source(_load(eff)).items()}
    out = Path(eff["out"])
    name = f"sweep_horizon_{cfg.approach}"
    _write_csv(out / f"{name}.csv", ("source", "horizon_minutes", "rug_fraction"),
               [(s, h, fr) for s in sorted(series) for h, fr in series[s]])
    _figure(eff, "plot_sweep_horizon", series, out / f"{name}.png", cfg.approach)
    print(f"wrote {out / (name + '.csv')}", file=sys.stderr)
    return EXIT_OK


def _report_figures(eff: dict, out: Path, metrics, imp: dict, title: str):
    _figure(eff, "plot_importances", imp, out / "importances.png", title=title)
    _figure(eff, "plot_confusion", metrics.tn, metrics.fp, metrics.fn, metrics.tp,
            out / "confusion.png", title=title)


def cmd_train(eff: dict, args) -> int:
    ds_by, _ = _datasets(eff, _load(eff))
    ds = _pool(ds_by, args.source)
    if len(np.unique(ds.y)) < 2:
        raise ExperimentError(f"{args.source} data holds a single class; nothing to train")
    strata = ("class", "source") if args.source == "both" else ("class",)
    tr, te = stratified_split(ds, 0.2, strata, eff["seed"])
    train = ds.subset(tr)
    search = grid_search(eff["family"], eff["grid"], train, 3, eff["seed"], strata)
    pipe = fit_pipeline(eff["family"], search.best_params, train.X, train.y, eff["seed"],
                        train.feature_names)
    out = Path(eff["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_model(pipe.model, out / "model.json", pipe.preprocessor)
    in_test = np.zeros(len(ds), dtype=bool)
    in_test[te] = True
    _write_csv(out / "split.csv", ("token_id", "source", "split"),
               [(t, s, "test" if f else "train")
                for t, s, f in zip(ds.token_id, ds.source, in_test)])
    _write_cv_table(out / "cv_table.csv", search.table)
    imp = importance(pipe.model)
    _write_importances(out / "importances.csv", imp)
    _write_json(out / "train.json", {k: v for k, v in eff.items() if k != "out"})
    _figure(eff, "plot_importances", imp, out / "importances.png",
            title=f"{eff['family']} {eff['label']['approach']}")
    print(f"best {json.dumps(search.best_params, sort_keys=True)} cv AUC "
          f"{search.best_score:.4f}; wrote {out / 'model.json'}", file=sys.stderr)
    return EXIT_OK


def _read_split(path: Path) -> set[str]:
    if not path.is_file():
        raise DataError(f"split file not found: {path} (train writes it; use --split all to "
                        "score every row)")
    with open(path, encoding="utf-8", newline="") as f:
        return {r["token_id"] for r in csv.DictReader(f) if r.get("split") == "test"}


def cmd_evaluate(eff: dict, args) -> int:
    model_path = Path(args.model)
    if not model_path.is_file():
        raise DataError(f"model file not found: {model_path}")
    model, pre = load_pipeline(model_path)
    if pre is None:
        raise DataError(f"{model_path}: no preprocessor stored with the model")
    ds_by, _ = _datasets(eff, _load(eff))
    ds = _pool(ds_by, "both")
    if args.split == "test":
        keep = _read_split(model_path.parent / "split.csv")
        ds = ds.subset(np.flatnonzero([t in keep for t in ds.token_id]))
        if len(ds) == 0:
            raise DataError("no held-out tokens from split.csv found in the corpus")
    if tuple(model.feature_names) != tuple(ds.feature_names):
        raise FeatureMismatch("model features differ from the extracted feature set")
    scores = Pipeline(pre, model).predict_proba(ds.X)
    m = metrics_report(scores, ds.y, args.threshold)
    sources = sorted(set(ds.source))
    train_record = model_path.parent / "train.json"
    train_source = ""
    if train_record.is_file():
        train_source = json.loads(train_record.read_text(encoding="utf-8")).get("source", "")
    identity = {"approach": eff["label"]["approach"], "protocol": None, "family": model.family,
                "train_source": train_source, "test_source": "+".join(sources),
                "seed": eff["seed"]}
    out = Path(eff["out"])
    _write_json(out / "metrics.json", {**m.to_dict(), **identity, "label": eff["label"],
                                       "model": str(model_path)})
    _figure(eff, "plot_confusion", m.tn, m.fp, m.fn, m.tp, out / "confusion.png",
            title=f"{model.family} {eff['label']['approach']}")
    auc = "undefined" if m.auc is None else f"{m.auc:.4f}"
    print(f"AUC {auc} on {m.n} rows; wrote {out / 'metrics.json'}", file=sys.stderr)
    return EXIT_OK


def cmd_fuse(eff: dict, args) -> int:
    ds_by, _ = _datasets(eff, _load(eff))
    config = ExperimentConfig(
        approach=eff["label"]["approach"], protocol=eff["protocol"], family=eff["family"],
        grid=eff["grid"], seed=eff["seed"], label=_label_config(eff),
        test_source=eff["test_source"], n_additional=eff["n_additional"],
        warm_learning_rate=eff["warm_learning_rate"],
    )
    rep = run_protocol(config, ds_by.get("stonfi"), ds_by.get("dedust"))
    out = Path(eff["out"])
    body = rep.to_json_dict()
    body["label"] = eff["label"]
    _write_json(out / "metrics.json", body)
    _write_importances(out / "importances.csv", rep.importances)
    _write_cv_table(out / "cv_table.csv", rep.cv_table)
    save_model(rep.pipeline.model, out / "model.json", rep.pipeline.preprocessor)
    _report_figures(eff, out, rep.metrics, rep.importances,
                    f"P{config.protocol} {config.family} {config.approach}")
    auc = "undefined" if rep.metrics.auc is None else f"{rep.metrics.auc:.4f}"
    print(f"protocol {config.protocol} ({rep.identity['train_source']} -> "
          f"{rep.identity['test_source']}) AUC {auc}; wrote {out / 'metrics.json'}",
          file=sys.stderr)
    return EXIT_OK


def cmd_rfe(eff: dict, args) -> int:
    ds_by, _ = _datasets(eff, _load(eff))
    ds = _pool(ds_by, args.source)
    res = rfe(eff["family"], eff["params"], ds, args.n_features, args.step, eff["seed"])
    out = Path(eff["out"])
    dropped_at = {f: i + 1 for i, f in enumerate(res.eliminated)}
    _write_csv(out / "rfe.csv", ("rank", "feature", "status", "eliminated_order"),
               [(i + 1, f, "retained" if f in res.retained else "eliminated", dropped_at.get(f))
                for i, f in enumerate(res.ranking)])
    _write_csv(out / "rfe_trace.csv", ("n_features", "val_auc"), res.trace)
    _figure(eff, "plot_rfe_trace", res.trace, out / "rfe_trace.png")
    print(f"retained {', '.join(res.retained)}; wrote {out / 'rfe.csv'}", file=sys.stderr)
    return EXIT_OK


def _metrics_files(inputs) -> list[Path]:
    files = []
    for s in inputs:
        p = Path(s)
        if p.is_dir():
            files += sorted(p.rglob("metrics.json"))
        elif p.is_file():
            files.append(p)
        else:
            raise DataError(f"report input not found: {p}")
    if not files:
        raise DataError("no metrics.json files among the report inputs")
    return list(dict.fromkeys(files))


def cmd_report(eff: dict) -> int:
    rows = []
    for f in _metrics_files(eff["inputs"]):
        try:
            body = json.loads(f.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"{f}:{e.lineno}: invalid JSON ({e.msg})") from None
        missing = [c for c in REPORT_COLUMNS if c not in body]
        if missing:
            raise DataError(f"{f}: not a metrics file, missing key '{missing[0]}'")
        rows.append({c: body[c] for c in REPORT_COLUMNS})
    rows.sort(key=lambda r: tuple("" if r[c] is None else str(r[c]) for c in REPORT_COLUMNS[:6]))
    out = Path(eff["out"])
    _write_csv(out / "report.csv", REPORT_COLUMNS, [[r[c] for c in REPORT_COLUMNS] for r in rows])
    _figure(eff, "plot_auc_table", rows, out / "report.png")
    print(f"{len(rows)} rows; wrote {out / 'report.csv'}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "synth": lambda eff, a: cmd_synth(eff),
    "ingest": lambda eff, a: cmd_ingest(eff),
    "label": lambda eff, a: cmd_label(eff),
    "featurize": lambda eff, a: cmd_featurize(eff),
    "sweep-p": cmd_sweep_p,
    "sweep-horizon": cmd_sweep_horizon,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "fuse": cmd_fuse,
    "rfe": cmd_rfe,
    "report": lambda eff, a: cmd_report(eff),
}


def run(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        eff = resolve(args)
        if "label" in eff:
            _label_config(eff)  # validate before touching data
        print("effective config: " + json.dumps(eff, sort_keys=True), file=sys.stderr)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](eff, args)
    except (UsageError, ConfigError) as e:
        print(f"ruglab {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ParseError, ModelLoadError, PreprocessorError) as e:
        print(f"ruglab {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ExperimentError, UnsupportedWarmStart, FeatureMismatch) as e:
        print(f"ruglab {args.command}: experiment failed: {e}", file=sys.stderr)
        return EXIT_EXPERIMENT


def main(argv: Optional[list[str]] = None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
