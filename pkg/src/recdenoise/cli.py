"""Command-line interface: prepare, train, evaluate, sweep and report.

Exit codes are 0 on success, 1 for usage or configuration errors and 2 for
failures at run time.  Diagnostics go to stderr; stdout only ever carries the
tables a command was asked to print.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig, dump_config, load_config
from .controller import load_controller
from .dataio import (
    DataFormatError,
    build_split,
    filter_min_interactions,
    load_split,
    make_synthetic_split,
    read_ratings,
    save_split,
    split_stats,
)
from .evaluation import AUCReward, rank_metrics
from .recmodel import load_params
from .trainer import (
    TrainingError,
    action_space_sweep,
    dataset_name,
    metrics_csv,
    save_run,
    train,
    weight_report,
)

log = logging.getLogger("recdenoise")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def aligned(header, rows) -> str:
    """Plain-text table with right-aligned columns."""
    cells = [[str(h) for h in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def _config_for_run(args) -> TrainConfig:
    cfg = load_config(args.config, args.set or ())
    if not cfg.split_dir:
        raise ConfigError("split_dir is not set; pass it in the config file or with --set split_dir=PATH")
    if not Path(cfg.split_dir).is_dir():
        raise ConfigError(f"split archive not found: {cfg.split_dir}")
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

STATS_COLUMNS = ("users", "items", "interactions", "density", "train", "validation", "test")


def stats_tsv(split) -> str:
    s = split_stats(split)
    row = [s["users"], s["items"], s["interactions"], f"{s['density']:.6f}",
           len(split.train), len(split.validation), len(split.test)]
    return "\t".join(STATS_COLUMNS) + "\n" + "\t".join(str(v) for v in row) + "\n"


def cmd_prepare(args) -> int:
    out = Path(args.out)
    if args.synthetic:
        split = make_synthetic_split(n_users=args.users, n_items=args.items, per_user=args.per_user,
                                     fp_rate=args.fp_rate, seed=args.seed)
    else:
        if args.input is None:
            raise UsageError("prepare needs --input or --synthetic")
        path = Path(args.input)
        if not path.is_file():
            raise UsageError(f"input file not found: {path}")
        records = read_ratings(path, fmt=args.format)
        records = filter_min_interactions(records, args.min_count)
        split = build_split(records)
    save_split(split, out)
    _write(out / "stats.tsv", stats_tsv(split))
    sys.stdout.write(stats_tsv(split))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_for_run(args)
    split = load_split(cfg.split_dir)
    art = train(cfg, split)
    out = save_run(art, args.out)
    log.info("best epoch %d, validation AUC %.6f, run saved to %s", art.best_epoch, art.best_reward, out)
    sys.stdout.write((out / "metrics.csv").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    if not (run / "config.txt").is_file():
        raise UsageError(f"not a run directory: {run}")
    cfg = load_config(run / "config.txt", args.set or ())
    split = load_split(cfg.split_dir)
    params = load_params(run / "recommender.npz")
    mask = split.train_mask()
    report = rank_metrics(params, split.test, mask, cfg.ks)
    eval_seed = int(np.random.SeedSequence(cfg.seed).generate_state(1)[0])
    report.auc = AUCReward(split.validation, mask, split.m, split.n, cfg.n_neg_eval, seed=eval_seed)(params)
    text = metrics_csv(report, cfg.scheme, dataset_name(cfg), cfg.seed)
    if (run / "controller.npz").is_file():
        ctrl, _ = load_controller(run / "controller.npz")
        best = dict(line.split(" = ") for line in (run / "best.txt").read_text().splitlines())
        table = weight_report(ctrl, params, split, int(best["best_epoch"]), cfg)
        for r in table:
            log.info("%s mean expected weight %.4f over %d rows", r["group"], r["mean_weight"], r["count"])
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config_for_run(args)
    if cfg.scheme != "autodenoise_h":
        cfg = cfg.replace(scheme="autodenoise_h")
    counts = [int(a) for a in args.actions.split(",") if a]
    if not counts or min(counts) < 1:
        raise UsageError("--actions needs positive integers, e.g. 1,2,3,4,5")
    rows = action_space_sweep(cfg, load_split(cfg.split_dir), counts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.txt", dump_config(cfg))
    text = _csv_text(("n_actions", "ndcg@20"), [(r["n_actions"], f"{100 * r['ndcg@20']:.4g}") for r in rows])
    _write(out / "sweep.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


REPORT_COLUMNS = ("dataset", "scheme", "k", "runs", "precision", "recall", "f1", "ndcg", "ndcg_improv")


def _fmt_improv(x: float | None) -> str:
    return "" if x is None else f"{x:+.2f}%"


def build_report(run_dirs) -> dict[str, tuple]:
    """Aggregate run directories into report tables.

    Returns ``{name: (header, rows)}`` for ``metrics``, ``weights`` and
    ``sweep``; tables without any source data are omitted.  Metrics are
    averaged over runs sharing (dataset, scheme, K).
    """
    metric_rows, weight_rows, sweep_rows = [], [], []
    ks_seen: dict[tuple, set] = {}
    for d in map(Path, run_dirs):
        if not d.is_dir():
            raise UsageError(f"run directory not found: {d}")
        found = False
        if (d / "metrics.csv").is_file():
            rows = _read_csv(d / "metrics.csv")
            ks = frozenset(int(r["k"]) for r in rows)
            ks_seen.setdefault(ks, set()).add(str(d))
            metric_rows.extend(rows)
            found = True
        if (d / "weights.csv").is_file():
            weight_rows.extend(_read_csv(d / "weights.csv"))
        if (d / "sweep.csv").is_file():
            sweep_rows.extend(_read_csv(d / "sweep.csv"))
            found = True
        if not found:
            raise UsageError(f"{d} has neither metrics.csv nor sweep.csv")
    if len(ks_seen) > 1:
        desc = "; ".join(f"K={sorted(k)} in {', '.join(sorted(v))}" for k, v in ks_seen.items())
        raise UsageError(f"runs were evaluated at different cutoffs: {desc}")

    tables = {}
    if metric_rows:
        groups = defaultdict(list)
        for r in metric_rows:
            groups[(r["dataset"], r["scheme"], int(r["k"]))].append(r)
        means = {key: {m: float(np.mean([float(r[m]) for r in rows]))
                       for m in ("precision", "recall", "f1", "ndcg")} | {"runs": len(rows)}
                 for key, rows in groups.items()}
        out = []
        for (ds, scheme, k), v in sorted(means.items()):
            ref = means.get((ds, "default", k))
            improv = None
            if ref is not None and scheme != "default" and ref["ndcg"] > 0:
                improv = 100.0 * (v["ndcg"] - ref["ndcg"]) / ref["ndcg"]
            out.append((ds, scheme, k, v["runs"], f"{v['precision']:.4g}", f"{v['recall']:.4g}",
                        f"{v['f1']:.4g}", f"{v['ndcg']:.4g}", _fmt_improv(improv)))
        tables["metrics"] = (REPORT_COLUMNS, out)
    if weight_rows:
        groups = defaultdict(list)
        for r in weight_rows:
            groups[(r["scheme"], r["group"])].append(r)
        out = []
        for (scheme, group), rows in sorted(groups.items()):
            count = sum(int(r["count"]) for r in rows)
            mean = sum(float(r["mean_weight"]) * int(r["count"]) for r in rows) / count
            out.append((scheme, group, f"{mean:.6f}", count))
        tables["weights"] = (("scheme", "group", "mean_weight", "count"), out)
    if sweep_rows:
        groups = defaultdict(list)
        for r in sweep_rows:
            groups[int(r["n_actions"])].append(float(r["ndcg@20"]))
        out = [(a, f"{np.mean(v):.4g}") for a, v in sorted(groups.items())]
        tables["sweep"] = (("n_actions", "ndcg@20"), out)
    return tables


def cmd_report(args) -> int:
    tables = build_report(args.runs)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in tables.items():
        if out is not None:
            _write(out / f"report_{name}.csv", _csv_text(header, rows))
            _write(out / f"report_{name}.txt", aligned(header, rows))
        sys.stdout.write(aligned(header, rows))
        sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="recdenoise", description="Learned sample weighting for implicit-feedback recommenders.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pp = sub.add_parser("prepare", help="parse ratings and write a chronological split archive")
    pp.add_argument("--input", help="ratings file (csv with header, or :: separated dat)")
    pp.add_argument("--format", choices=("csv", "dat"), default="csv")
    pp.add_argument("--min-count", type=int, default=10, help="k-core threshold for users and items")
    pp.add_argument("--synthetic", action="store_true", help="generate a synthetic split with labelled noise")
    pp.add_argument("--users", type=int, default=500)
    pp.add_argument("--items", type=int, default=300)
    pp.add_argument("--per-user", type=int, default=20, help="clean interactions per synthetic user")
    pp.add_argument("--fp-rate", type=float, default=0.3)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_prepare)

    def run_args(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    pt = sub.add_parser("train", help="train one scheme and write a run directory")
    run_args(pt)
    pt.add_argument("--out", required=True)
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("evaluate", help="recompute test metrics from a run directory")
    pe.add_argument("run")
    pe.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a stored config key")
    pe.set_defaults(func=cmd_evaluate)

    ps = sub.add_parser("sweep", help="NDCG@20 of the hard controller across action-space sizes")
    run_args(ps)
    ps.add_argument("--actions", default="1,2,3,4,5")
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_sweep)

    pr = sub.add_parser("report", help="combine run directories into comparison tables")
    pr.add_argument("runs", nargs="+")
    pr.add_argument("--out", help="directory for report_*.csv and report_*.txt")
    pr.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"recdenoise: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, TrainingError, FloatingPointError, OSError, ValueError) as exc:
        print(f"recdenoise: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
