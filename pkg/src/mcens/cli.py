"""``mcens`` command-line entry point.

Subcommands share one config file and one output directory. Artifacts are
named after the model, ``<criterion>_<seed>``:

    <name>.mlpw         trained network
    <name>.train.feat   penultimate features of the ID training split
    <name>.test.feat    features of the ID test split followed by every OOD split
    <name>.test.logt    logits for the same rows as ``.test.feat``
    labels.csv          labels of every ID sample

Exit codes: 0 success, 1 unexpected internal error, 2 invalid config or
arguments, 3 missing input file, 4 malformed input file, 5 sample ids that
do not align, 6 numerical or training failure.
"""
import argparse
import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import FEATURE_METRICS, ConfigError, derive_seed, dump_config, load_config
from .ensemble import average_features, read_pairwise_sci, select_ensemble, write_pairwise_sci
from .errors import (AlignmentError, ArgumentError, ConditioningError, DegenerateSampleError, FitError,
                     FormatError, McensError, RankDeficiencyError, TrainingError)
from .esn import verification_grid
from .features import (FeatureSet, LabelSet, ensure_dir, read_features, read_labels, read_logits,
                       write_features, write_labels, write_logits)
from .scoring import evaluate, fit_class_stats, score_features
from .trainer import (forward_features, forward_logits, gen_synthetic, load_params, loss_barrier, save_params,
                      train_mlp, weight_match_permute)
from .trainer.losses import cross_entropy_loss
from .transport import pick_anchors, sci_between

log = logging.getLogger("mcens")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_MISSING, EXIT_FORMAT, EXIT_ALIGN, EXIT_NUMERIC = range(7)
ENSEMBLE_NAME = "ensemble"
REPORT_SCHEMA = os.path.join(os.path.dirname(__file__), "report.schema.json")


# ----------------------------------------------------------------- helpers

def _out(cfg, *parts):
    return os.path.join(cfg.out_dir, *parts)


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_json(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _require(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    return path


def _fan_out(fn, items, threads):
    """Map ``fn`` over ``items``; results come back in input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _split_of(sample_id):
    """``None`` for ID rows, else the OOD kind encoded in the id."""
    if sample_id.startswith("ood-"):
        return sample_id[4:].rsplit("-", 1)[0]
    return None


def _test_partition(ids):
    """ID row ids and a sorted ``{kind: ids}`` map for OOD rows."""
    id_rows, ood = [], {}
    for sid in ids:
        kind = _split_of(sid)
        if kind is None:
            id_rows.append(sid)
        else:
            ood.setdefault(kind, []).append(sid)
    return id_rows, dict(sorted(ood.items()))


def _load_model(cfg, name):
    train = read_features(_require(_out(cfg, f"{name}.train.feat")))
    test = read_features(_require(_out(cfg, f"{name}.test.feat")))
    logits = read_logits(_require(_out(cfg, f"{name}.test.logt")))
    return train, test, logits


def _labels(cfg):
    return read_labels(_require(_out(cfg, "labels.csv")))


# ------------------------------------------------------------------- train

def cmd_train(cfg, args):
    data = gen_synthetic(cfg.data_spec())
    ensure_dir(cfg.out_dir)
    Xtr, ltr = data.train()
    Xte, lte = data.test()
    write_labels(LabelSet(list(ltr.sample_ids) + list(lte.sample_ids),
                          np.concatenate([ltr.labels, lte.labels]), ltr.K), _out(cfg, "labels.csv"))
    test_X = [Xte]
    test_ids = list(lte.sample_ids)
    for kind in sorted(data.ood_inputs):
        X, ids = data.ood(kind)
        test_X.append(X)
        test_ids.extend(ids)
    test_X = np.vstack(test_X)

    jobs = [(c, s) for c in cfg["train"]["criteria"] for s in cfg["train"]["seeds"]]

    def run(job):
        crit, seed = job
        name = f"{crit}_{seed}"
        try:
            params = train_mlp(data, cfg.train_config(crit, seed))
        except TrainingError as exc:
            return name, str(exc)
        save_params(params, _out(cfg, f"{name}.mlpw"))
        write_features(forward_features(params, Xtr, ltr.sample_ids), _out(cfg, f"{name}.train.feat"))
        write_features(forward_features(params, test_X, test_ids), _out(cfg, f"{name}.test.feat"))
        write_logits(forward_logits(params, test_X, test_ids), _out(cfg, f"{name}.test.logt"))
        return name, None

    failed = 0
    for name, err in _fan_out(run, jobs, args.threads):
        if err is None:
            print(f"trained {name}")
        else:
            failed += 1
            print(f"error: {name}: {err}", file=sys.stderr)
    with open(_out(cfg, "run.cfg"), "w", encoding="utf-8") as f:
        f.write(dump_config(cfg, cfg.out_dir))
    return EXIT_NUMERIC if failed else EXIT_OK


# -------------------------------------------------------------- score/eval

def _model_scores(cfg, train, test, logits, labels, metrics):
    """Scores for every test row under each requested metric."""
    sc = cfg["scoring"]
    out = {}
    for metric in metrics:
        if metric == "MAHALANOBIS":
            tr, te = _active_columns(train, test)
            stats = fit_class_stats(tr, labels.select(tr.sample_ids), sc["shrinkage"])
            out[metric] = score_features(metric, te, stats=stats)
            continue
        out[metric] = score_features(metric, test, logits=logits, train=train,
                                     k=sc["knn_k"], normalize=sc["knn_normalize"])
    return out


def _active_columns(train, test):
    """Drop feature columns that are constant over the training split.

    Dead rectified units give all-zero columns, which make the pooled
    covariance singular whatever the shrinkage.
    """
    var = train.data.var(axis=0)
    keep = var > 1e-12 * max(float(var.max()), 1e-300)
    if keep.all():
        return train, test
    log.info("dropping %d constant feature columns before the Mahalanobis fit", int((~keep).sum()))
    return (FeatureSet(train.data[:, keep], train.sample_ids),
            FeatureSet(test.data[:, keep], test.sample_ids))


def compute_scores(cfg, threads=1):
    """``{entry_name: {metric: ScoreVector}}`` for every model and the ensemble."""
    labels = _labels(cfg)
    names = cfg.model_names()
    metrics = cfg["scoring"]["metrics"]
    loaded = {n: _load_model(cfg, n) for n in names}

    def one(name):
        train, test, logits = loaded[name]
        return _model_scores(cfg, train, test, logits, labels, metrics)

    entries = dict(zip(names, _fan_out(one, names, threads)))
    members = cfg.ensemble_members()
    feat_metrics = [m for m in metrics if m in FEATURE_METRICS]
    if len(members) >= 2 and feat_metrics:
        for m in members:
            if m not in loaded:
                loaded[m] = _load_model(cfg, m)
        train = average_features([loaded[m][0] for m in members])
        test = average_features([loaded[m][1] for m in members])
        entries[ENSEMBLE_NAME] = _model_scores(cfg, train, test, None, labels, feat_metrics)
    return entries, members


def _results(score_map, tpr_target):
    rows = []
    for metric, sv in score_map.items():
        id_ids, ood = _test_partition(sv.sample_ids)
        s_id = sv.select(id_ids)
        splits = dict(ood)
        if len(ood) > 1:
            splits["all"] = [i for ids in ood.values() for i in ids]
        for split, ids in splits.items():
            r = evaluate(s_id, sv.select(ids), tpr_target)
            r["ood_split"] = split
            rows.append(r)
    return rows


def build_eval_report(cfg, threads=1):
    entries, members = compute_scores(cfg, threads)
    tpr = cfg["scoring"]["tpr_target"]
    report = {
        "tool": "mcens",
        "version": __version__,
        "seed": cfg.seed,
        "tpr_target": tpr,
        "config": cfg.to_dict(),
        "models": [{"name": n, "results": _results(entries[n], tpr)} for n in cfg.model_names()],
        "ensembles": [],
    }
    report["config"]["data"]["out_dir"] = None
    report["config"]["selection"]["sci"] = None
    if ENSEMBLE_NAME in entries:
        report["ensembles"].append({"name": ENSEMBLE_NAME, "members": list(members),
                                    "results": _results(entries[ENSEMBLE_NAME], tpr)})
    return report, entries


def cmd_score(cfg, args):
    entries, _ = compute_scores(cfg, args.threads)
    ensure_dir(_out(cfg, "scores"))
    for name, scores in entries.items():
        for metric, sv in scores.items():
            sv.write_csv(_out(cfg, "scores", f"{name}.{metric.lower()}.csv"))
    print(f"wrote scores for {len(entries)} entries")
    return EXIT_OK


def cmd_eval(cfg, args):
    report, _ = build_eval_report(cfg, args.threads)
    _write_json(report, _out(cfg, "eval.json"))
    for entry in report["models"] + report["ensembles"]:
        for r in entry["results"]:
            print(f"{entry['name']:<14} {r['metric']:<12} {r['ood_split']:<8} "
                  f"auroc={r['auroc']:.4f} fpr95={r['fpr95']:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------- sci

def _sci_features(cfg, names):
    """Per-model features over anchors (from the train split) plus ID test rows."""
    feats = {}
    anchors = None
    for name in names:
        train = read_features(_require(_out(cfg, f"{name}.train.feat")))
        test = read_features(_require(_out(cfg, f"{name}.test.feat")))
        if anchors is None:
            rng = np.random.default_rng(derive_seed(cfg.seed, "anchors"))
            anchors = pick_anchors(train.sample_ids, cfg["sinkhorn"]["anchors"], rng)
        id_rows, _ = _test_partition(test.sample_ids)
        a = train.select(anchors)
        t = test.select(id_rows)
        feats[name] = FeatureSet(np.vstack([a.data, t.data]), list(a.sample_ids) + list(t.sample_ids))
    return feats, anchors


def cmd_sci(cfg, args):
    names = cfg.model_names()
    feats, anchors = _sci_features(cfg, names)
    sk = cfg["sinkhorn"]
    pairs = list(itertools.product(names, names))

    def one(pair):
        a, b = pair
        return sci_between(feats[a], feats[b], anchors, cfg.sinkhorn_config(), sk["ridge"], sk["k"],
                           return_details=True)

    results = dict(zip(pairs, _fan_out(one, pairs, args.threads)))
    with open(_out(cfg, "sci_matrix.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id"] + names)
        for a in names:
            w.writerow([a] + [repr(results[(a, b)].sci) for b in names])
    write_pairwise_sci({p: r.sci for p, r in results.items() if p[0] != p[1]}, _out(cfg, "sci_pairs.csv"))
    if sk["heatmaps"]:
        ensure_dir(_out(cfg, "coupling"))
        for (a, b), r in results.items():
            r.plan.write_csv(_out(cfg, "coupling", f"{a}__{b}.csv"), r.ids)
    for a in names:
        print(a, " ".join(f"{results[(a, b)].sci:.3f}" for b in names))
    return EXIT_OK


# ----------------------------------------------------------------- barrier

def cmd_barrier(cfg, args):
    names = cfg.model_names()
    if args.pair:
        pairs = [tuple(args.pair)]
    else:
        pairs = list(itertools.combinations(names, 2))
    if not pairs:
        raise ArgumentError("barrier needs at least two models or an explicit --pair")
    data = gen_synthetic(cfg.data_spec())
    X, labels = data.test()
    params = {}
    for n in sorted({n for p in pairs for n in p}):
        params[n] = load_params(_require(_out(cfg, f"{n}.mlpw")))
    ensure_dir(_out(cfg, "barrier"))
    summary = []
    for a, b in pairs:
        raw = loss_barrier(params[a], params[b], X, labels.labels)
        matched = loss_barrier(params[a], weight_match_permute(params[a], params[b]), X, labels.labels)
        for tag, res in (("raw", raw), ("matched", matched)):
            with open(_out(cfg, "barrier", f"{a}__{b}.{tag}.csv"), "w", encoding="utf-8") as f:
                f.write(res.to_csv())
        summary.append({"a": a, "b": b, "raw": raw.barrier, "matched": matched.barrier,
                        "alpha_star_raw": raw.alpha_star, "alpha_star_matched": matched.alpha_star})
        print(f"{a} vs {b}: barrier raw={raw.barrier:.6g} matched={matched.barrier:.6g}")
    _write_json(summary, _out(cfg, "barriers.json"))
    return EXIT_OK


# ------------------------------------------------------------------ select

def pool_losses(cfg, pool):
    """Cross-entropy of each model's logits on the ID test rows."""
    labels = _labels(cfg)
    out = {}
    for name in pool:
        logits = read_logits(_require(_out(cfg, f"{name}.test.logt")))
        id_rows, _ = _test_partition(logits.sample_ids)
        out[name] = cross_entropy_loss(logits.select(id_rows), labels.select(id_rows))
    return out


def cmd_select(cfg, args):
    sel = cfg["selection"]
    pool = cfg.selection_pool()
    M = sel["M"] if sel["M"] is not None else min(3, len(pool))
    sci_path = sel["sci"] or _out(cfg, "sci_pairs.csv")
    sci = read_pairwise_sci(_require(sci_path))
    losses = pool_losses(cfg, pool)
    spec = select_ensemble(losses, sci, M, sel["lambda"])
    result = {"pool": sorted(pool), "pool_losses": losses, "M": M, "lambda": sel["lambda"],
              "members": list(spec.member_ids), "objective": spec.objective}
    _write_json(result, _out(cfg, "selection.json"))
    print("selected", ",".join(spec.member_ids), f"objective={spec.objective:.6g}")
    return EXIT_OK


# --------------------------------------------------------------------- esn

def cmd_esn(cfg, args):
    rows = verification_grid(draws=args.draws, seed=derive_seed(cfg.seed, "esn"))
    ensure_dir(cfg.out_dir)
    keys = ["mu", "sigma", "eps", "M", "gap", "mc_gap", "mc_se"]
    with open(_out(cfg, "esn_grid.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])
    worst = max(r["gap"] for r in rows)
    print(f"{len(rows)} grid points, largest gap {worst:.6g}")
    return EXIT_OK


# ------------------------------------------------------------------ report

def _read_csv_dicts(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def cmd_report(cfg, args):
    report = _read_json(_out(cfg, "eval.json"))
    sci_path = _out(cfg, "sci_pairs.csv")
    if os.path.isfile(sci_path):
        pairs = read_pairwise_sci(sci_path)
        report["sci"] = [{"a": a, "b": b, "sci": v} for (a, b), v in sorted(pairs.items())]
    for key, fname in (("selection", "selection.json"), ("barriers", "barriers.json")):
        if os.path.isfile(_out(cfg, fname)):
            report[key] = _read_json(_out(cfg, fname))
    if os.path.isfile(_out(cfg, "esn_grid.csv")):
        rows = _read_csv_dicts(_out(cfg, "esn_grid.csv"))
        gaps = [float(r["gap"]) for r in rows]
        report["esn"] = {"points": len(rows), "max_gap": max(gaps),
                         "all_negative": all(g < 0 for g in gaps)}
    _write_json(report, _out(cfg, "report.json"))
    print(f"wrote {_out(cfg, 'report.json')}")
    return EXIT_OK


COMMANDS = {
    "train": (cmd_train, "train one model per criterion and seed; write MLPW, FEAT and LOGT files"),
    "score": (cmd_score, "write per-sample OOD scores for every model, metric and the ensemble"),
    "eval": (cmd_eval, "write eval.json with AUROC and FPR95 per model, metric and OOD split"),
    "sci": (cmd_sci, "pairwise self-coupling index matrix and coupling heat maps"),
    "barrier": (cmd_barrier, "loss along the linear path between models, before and after weight matching"),
    "select": (cmd_select, "choose the ensemble subset minimising loss plus weighted similarity"),
    "esn": (cmd_esn, "rectified skew-normal movement-gap verification grid"),
    "report": (cmd_report, "merge eval, sci, selection, barrier and esn outputs into report.json"),
}


def build_parser():
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="sectioned key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides data.seed)")
    common.add_argument("--out", help="output directory (overrides data.out_dir)")
    common.add_argument("--threads", type=int, help="parallel workers for independent runs")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    parser = argparse.ArgumentParser(prog="mcens", parents=[common],
                                     description="Multi-criteria feature ensembles for OOD detection.")
    parser.add_argument("--version", action="version", version=f"mcens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}
    for name, (_, help_text) in COMMANDS.items():
        subs[name] = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    subs["barrier"].add_argument("--pair", nargs=2, metavar=("A", "B"), default=None,
                                 help="evaluate one model pair instead of all pairs")
    subs["esn"].add_argument("--draws", type=int, default=0,
                             help="Monte-Carlo draws per grid point (0 skips sampling)")
    return parser


def _exit_code(exc):
    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING
    if isinstance(exc, FormatError):
        return EXIT_FORMAT
    if isinstance(exc, AlignmentError):
        return EXIT_ALIGN
    if isinstance(exc, (TrainingError, ConditioningError, RankDeficiencyError, FitError,
                        DegenerateSampleError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ConfigError, ArgumentError)):
        return EXIT_CONFIG
    return EXIT_INTERNAL


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["data.seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        overrides["data.out_dir"] = os.path.abspath(args.out)
    args.threads = max(1, getattr(args, "threads", 1))
    try:
        cfg = load_config(getattr(args, "config", None), overrides)
        return COMMANDS[args.command][0](cfg, args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except (McensError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
