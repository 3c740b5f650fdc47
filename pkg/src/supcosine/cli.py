"""Command-line entry point: ``supcosine <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys

import numpy as np

from .cascades import format_cascades, parse_cascades, simulate_cascades
from .graph import load_tu_dataset, save_tu_dataset
from .inference import SolverConfig, augment_graph, format_triples, infer_structure, parse_triples
from .pipeline import RunConfig, build_split, cross_validate, preprocess, run_all, train, write_report

log = logging.getLogger("supcosine")


def _config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "dataset", None):
        overrides["dataset"] = args.dataset
    if getattr(args, "name", None):
        overrides["name"] = args.name
    return cfg.replace(**overrides) if overrides else cfg


def _load(cfg: RunConfig):
    return load_tu_dataset(cfg.dataset, cfg.name)


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def cmd_simulate(args):
    cfg = _config(args)
    ds = _load(cfg)
    g = ds[args.graph]
    q = args.q or cfg.q or 20 * g.n
    cs = simulate_cascades(g, q, args.window if args.window is not None else cfg.T, cfg.seed)
    _write(args.out, format_cascades(cs))


def cmd_infer(args):
    with open(args.cascades) as fh:
        text = fh.read()
    n = args.nodes
    if n is None:
        # node ids precede ';' (root) or ':' (activation time)
        ids = [int(t) for t in re.findall(r"(?:^|[;,])\s*(\d+)\s*(?=[:;])", text, re.M)]
        n = max(ids) + 1 if ids else 1
    cs = parse_cascades(text, n, args.window)
    M, report = infer_structure(cs, SolverConfig(tol=args.tol, max_iters=args.max_iters))
    if report.warning:
        log.warning(report.warning)
    _write(args.out, format_triples(M))


def cmd_augment(args):
    cfg = _config(args)
    ds = _load(cfg)
    xi = cfg.xi if args.xi is None else args.xi
    graphs = []
    for gi, g in enumerate(ds.graphs):
        path = os.path.join(args.matrices, f"{gi}.txt")
        with open(path) as fh:
            M = parse_triples(fh.read(), g.n)
        graphs.append(augment_graph(g, M, xi))
    save_tu_dataset(ds.replace_graphs(graphs), args.out, args.out_name or ds.name)


def cmd_train(args):
    cfg = _config(args)
    ds = _load(cfg)
    pre = preprocess(ds, cfg)
    split = build_split(pre, np.arange(len(ds)), cfg)
    params, traces = train(split, cfg)
    os.makedirs(args.out, exist_ok=True)
    params.save(os.path.join(args.out, "model.npz"))
    lines = ["epoch,gc,sc,total"] + [f"{t.epoch},{t.gc:.9g},{t.sc:.9g},{t.total:.9g}" for t in traces]
    _write(os.path.join(args.out, "loss_trace.csv"), "\n".join(lines) + "\n")


def cmd_cv(args):
    cfg = _config(args)
    ds = _load(cfg)
    report = cross_validate(preprocess(ds, cfg), cfg)
    write_report(report, args.out)
    print(f"accuracy {report.mean:.4f} +- {report.std:.4f}")


def cmd_run_all(args):
    cfg = _config(args)
    report = run_all(_load(cfg), cfg, args.out)
    print(f"accuracy {report.mean:.4f} +- {report.std:.4f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="supcosine")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default=None, out_required=False):
        p.add_argument("--config", help="key = value file with RunConfig fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=out_default, required=out_required)

    p = sub.add_parser("simulate", help="graph -> cascade dump")
    common(p, out_default="-")
    p.add_argument("--dataset")
    p.add_argument("--name")
    p.add_argument("--graph", type=int, default=0, help="graph index in the dataset")
    p.add_argument("--q", type=int)
    p.add_argument("--window", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="cascade dump -> transmission-rate triples")
    common(p, out_default="-")
    p.add_argument("--cascades", required=True)
    p.add_argument("--nodes", type=int)
    p.add_argument("--window", type=float, default=10.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=2000)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("augment", help="dataset + per-graph triples -> TU dataset")
    common(p, out_required=True)
    p.add_argument("--dataset")
    p.add_argument("--name")
    p.add_argument("--matrices", required=True, help="directory of <graph index>.txt triple files")
    p.add_argument("--xi", type=int)
    p.add_argument("--out-name")
    p.set_defaults(func=cmd_augment)

    for name, func, help_ in (("train", cmd_train, "train on the whole dataset"),
                              ("cv", cmd_cv, "stratified cross-validation"),
                              ("run-all", cmd_run_all, "preprocess + cross-validation + report")):
        p = sub.add_parser(name, help=help_)
        common(p, out_default="results")
        p.add_argument("--dataset")
        p.add_argument("--name")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one-line machine-readable failure
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
