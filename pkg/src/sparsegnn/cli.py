"""``sparsegnn`` command line: build, train, bench-kernel, mem-report, overhead, pitfall-demo.

Exit codes: 0 success, 1 a check failed, 2 usage or IO error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .graph_store import (BuildOptions, GraphError, GraphFormatError, build_graph, load_graph,
                          parse_edge_text, save_graph)

log = logging.getLogger("sparsegnn")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


def _manifest(args, subcommand: str, **extra) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    return {"subcommand": subcommand, "version": __version__,
            "seed": getattr(args, "seed", None), "config": config, **extra}


def _emit_json(doc: dict, path: str | None):
    text = json.dumps(doc, indent=2, sort_keys=False, default=_json_default)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _emit_csv(columns, rows, path: str | None):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    if path:
        Path(path).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _open_graph(path: str):
    try:
        with open(path, "rb") as fh:
            return load_graph(fh)
    except OSError as exc:
        raise UsageError(f"cannot read graph {path}: {exc.strerror or exc}") from exc
    except GraphFormatError as exc:
        raise UsageError(f"{path}: {exc}") from exc


# -- subcommands ------------------------------------------------------------


def cmd_build(args) -> int:
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc.strerror or exc}") from exc
    delim = args.delimiter.encode()
    if args.delimiter in ("\\t", "tab"):
        delim = b"\t"
    try:
        edges = parse_edge_text(data, delimiter=delim)
    except GraphError as exc:
        raise UsageError(f"{args.input}: {exc}") from exc
    opts = BuildOptions(symmetrize=args.symmetrize, need_edge_ids=args.edge_ids)
    try:
        g = build_graph(edges, args.vcount, opts)
    except GraphError as exc:
        raise CheckFailed(f"build failed: {exc}") from exc
    try:
        with open(args.out, "wb") as fh:
            save_graph(g, fh)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    print(json.dumps({"vcount": g.vcount, "ecount": g.ecount,
                      "storage_elements": g.storage_elements}))
    return EXIT_OK


def _load_dataset(args):
    from .datasets import NodeDataset, random_split, read_features, read_int_lines, sbm_dataset

    if args.graph is None:
        if args.features or args.labels:
            raise UsageError("--features/--labels need --graph")
        return sbm_dataset(n=args.sbm_size, seed=args.seed)
    if not (args.features and args.labels):
        raise UsageError("--graph needs --features and --labels")
    g = _open_graph(args.graph)
    try:
        x = read_features(args.features)
        y = read_int_lines(args.labels)
        masks = [read_int_lines(p).astype(bool) for p in
                 (args.train_mask, args.val_mask, args.test_mask) if p]
    except OSError as exc:
        raise UsageError(f"cannot read dataset file: {exc}") from exc
    if masks and len(masks) != 3:
        raise UsageError("give all of --train-mask/--val-mask/--test-mask or none")
    if not masks:
        masks = list(random_split(g.vcount, args.seed))
    classes = args.classes or (int(y.max()) + 1 if y.size else 1)
    try:
        return NodeDataset(g, x, y, *masks, classes)
    except ValueError as exc:
        raise UsageError(f"dataset mismatch: {exc}") from exc


def cmd_train(args) -> int:
    from .kernels import MissingEdgeIdsError
    from .models import TrainConfig, train

    ds = _load_dataset(args)
    try:
        cfg = TrainConfig(model=args.model, heads=args.heads, hidden=args.hidden,
                          epochs=args.epochs, lr=args.lr, dropout=args.dropout,
                          seed=args.seed, layout=args.layout.replace("-", "_"))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        report = train(ds, cfg)
    except MissingEdgeIdsError as exc:
        raise UsageError(str(exc)) from exc
    series = report.series()
    for i, row in enumerate(series):
        row["train_acc"] = report.train_acc[i] if i < len(report.train_acc) else None
    summary = {
        "final_train_acc": report.train_acc[-1],
        "final_val_acc": report.val_acc[-1] if report.val_acc else None,
        "final_test_acc": report.test_acc[-1] if report.test_acc else None,
        "final_loss": report.losses[-1] if report.losses else None,
    }
    doc = {"manifest": _manifest(args, "train", dataset={"vcount": ds.graph.vcount,
                                                         "ecount": ds.graph.ecount},
                                 summary=summary),
           "series": series,
           "ledger": report.ledger.to_dict()}
    _emit_json(doc, args.json)
    if args.json:
        print(json.dumps(summary))
    return EXIT_OK


def cmd_bench_kernel(args) -> int:
    from .bench import BENCH_COLUMNS, bench_kernel
    from .datasets import erdos_renyi_graph

    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    if args.graph:
        g = _open_graph(args.graph)
    else:
        g = erdos_renyi_graph(args.vcount, args.ecount, seed=args.seed)
    row = bench_kernel(g, args.kernel, args.feat, args.heads, args.iters,
                       seed=args.seed, unit_weights=args.unit_weights)
    _emit_csv(BENCH_COLUMNS, [row], args.csv)
    return EXIT_OK


def cmd_mem_report(args) -> int:
    from .instrumentation import layout_cost

    mode = args.mode.replace("-", "_")
    cls = args.gnn_class
    cost = layout_cost(mode, args.vcount, args.ecount, cls)
    base = layout_cost("graphpy", args.vcount, args.ecount, cls)
    ratio = cost.total / base.total if base.total else float("nan")
    if args.json:
        _emit_json({"manifest": _manifest(args, "mem-report"), "series": [],
                    "ledger": {"layout": cost.to_dict(), "graphpy_total": base.total,
                               "ratio_vs_graphpy": ratio}}, args.json)
        return EXIT_OK
    print(f"layout {mode} class {cls}  |V|={args.vcount} |E|={args.ecount}")
    print(f"{'category':<36}{'elements':>16}")
    for cat, n in cost.static.items():
        print(f"{cat:<36}{n:>16}")
    print(f"{'total':<36}{cost.total:>16}")
    for cat, n in cost.per_iteration.items():
        print(f"{'per-iteration ' + cat:<36}{n:>16}")
    print(f"{'graphpy total':<36}{base.total:>16}")
    print(f"ratio vs graphpy: {ratio:.4f}")
    return EXIT_OK


def cmd_overhead(args) -> int:
    from .bench import overhead_sweep, strictly_decreasing

    try:
        edges = [int(float(s)) for s in args.edges_list.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --edges-list: {exc}") from exc
    if not edges or args.epochs < 0:
        raise UsageError("need at least one edge count and epochs >= 0")
    points = overhead_sweep(args.vcount, edges, args.model, args.epochs, args.feat,
                            args.hidden, args.classes, args.seed,
                            args.layout.replace("-", "_"))
    rows = [p.to_dict() for p in points]
    ratios = [p.overhead_ratio for p in points]
    monotone = strictly_decreasing(ratios)
    if args.csv:
        _emit_csv(list(rows[0]), rows, args.csv)
    doc = {"manifest": _manifest(args, "overhead", strictly_decreasing=monotone),
           "series": rows, "ledger": {}}
    _emit_json(doc, args.json)
    for p in points:
        log.info("|E|=%d overhead_ratio=%.4f", p.ecount, p.overhead_ratio)
    if not monotone:
        print("overhead ratio is not strictly decreasing in |E|", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_pitfall_demo(args) -> int:
    from .pitfalls import run_demo

    kwargs = {}
    if args.which == "eval-p3":
        kwargs = {"vcount": args.vcount, "ecount": args.ecount, "feat": args.feat,
                  "iters": args.iters, "seed": args.seed}
    elif args.which in ("sys-p2", "sys-p3"):
        from .pitfalls import ring_graph
        kwargs = {"seed": args.seed}
        if args.ring:
            kwargs["g"] = ring_graph(args.ring)
    res = run_demo(args.which, **kwargs)
    doc = {"manifest": _manifest(args, "pitfall-demo", ok=res.ok, summary=res.summary),
           "series": [res.metrics], "ledger": {}}
    _emit_json(doc, args.json)
    if args.json:
        print(res.summary)
    return EXIT_OK if res.ok else EXIT_CHECK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsegnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="parse an edge list and save the binary graph")
    b.add_argument("--input", required=True)
    b.add_argument("--delimiter", default=" ")
    b.add_argument("--vcount", type=int)
    b.add_argument("--symmetrize", action="store_true")
    b.add_argument("--edge-ids", action="store_true")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    t = sub.add_parser("train", help="train a GNN; without --graph uses the bundled SBM dataset")
    t.add_argument("--graph")
    t.add_argument("--features")
    t.add_argument("--labels")
    t.add_argument("--train-mask")
    t.add_argument("--val-mask")
    t.add_argument("--test-mask")
    t.add_argument("--classes", type=int)
    t.add_argument("--sbm-size", type=int, default=200)
    t.add_argument("--model", choices=("gcn", "gin", "gat"), default="gcn")
    t.add_argument("--heads", type=int, default=1)
    t.add_argument("--hidden", type=int)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--dropout", type=float, default=0.5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--layout", choices=("graphpy", "dgl-emulation"), default="graphpy")
    t.add_argument("--json")
    t.set_defaults(func=cmd_train)

    from .bench import BENCH_KERNELS
    k = sub.add_parser("bench-kernel", help="time one kernel; CSV row with a checksum")
    k.add_argument("--graph")
    k.add_argument("--vcount", type=int, default=32768)
    k.add_argument("--ecount", type=int, default=1_000_000)
    k.add_argument("--kernel", required=True, choices=BENCH_KERNELS)
    k.add_argument("--feat", type=int, default=16)
    k.add_argument("--heads", type=int, default=1)
    k.add_argument("--iters", type=int, default=20)
    k.add_argument("--unit-weights", action="store_true")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--csv")
    k.set_defaults(func=cmd_bench_kernel)

    m = sub.add_parser("mem-report", help="closed-form storage cost of a layout")
    m.add_argument("--vcount", type=int, required=True)
    m.add_argument("--ecount", type=int, required=True)
    m.add_argument("--mode", choices=("graphpy", "dgl-emulation"), default="dgl-emulation")
    m.add_argument("--class", dest="gnn_class", choices=("A", "B"), default="A")
    m.add_argument("--json")
    m.set_defaults(func=cmd_mem_report)

    o = sub.add_parser("overhead", help="framework overhead across edge counts")
    o.add_argument("--model", choices=("gcn", "gin", "gat"), default="gcn")
    o.add_argument("--vcount", type=int, default=32768)
    o.add_argument("--edges-list", default="1000,10000,100000,1000000")
    o.add_argument("--epochs", type=int, default=200)
    o.add_argument("--feat", type=int, default=2)
    o.add_argument("--hidden", type=int, default=2)
    o.add_argument("--classes", type=int, default=2)
    o.add_argument("--layout", choices=("graphpy", "dgl-emulation"), default="graphpy")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--csv")
    o.add_argument("--json")
    o.set_defaults(func=cmd_overhead)

    d = sub.add_parser("pitfall-demo", help="run one pitfall demonstration")
    d.add_argument("--which", required=True, choices=("sys-p1", "sys-p2", "sys-p3", "eval-p3"))
    d.add_argument("--ring", type=int, default=0,
                   help="sys-p2/sys-p3: use an n-vertex ring instead of the 4-vertex graph")
    d.add_argument("--vcount", type=int, default=32768)
    d.add_argument("--ecount", type=int, default=1_000_000)
    d.add_argument("--feat", type=int, default=16)
    d.add_argument("--iters", type=int, default=20)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--json")
    d.set_defaults(func=cmd_pitfall_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
