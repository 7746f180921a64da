"""Command-line interface.

Subcommands: gen-synth, inject-noise, build-graph, spread, train, sweep,
spread-diag, report, project2d.  Exit codes: 0 on success, 1 when sweep cells
failed, 2 for configuration or parameter errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as config_mod
from .data import (
    NoiseSpec,
    apply_noise,
    load_embeddings,
    save_embeddings,
)
from .errors import ConfigError, LastLayerError
from .knn import SpreadConfig, build_knn_graph, spread_labels, write_graph_csv
from .linear import TrainConfig, predict, save_model, train
from .metrics import SummaryRow
from .report import render
from .sweep import diag_csv, run_sweep, spread_diagnostic
from .synth import generate


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _cmd_gen_synth(args) -> int:
    doc = config_mod.load_toml(args.config)
    cfg = config_mod.synth_config(doc)
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = generate(cfg)
    manifest = {"config": asdict(cfg), "files": {}}
    for name, ds in splits.items():
        path = out / f"{name}.emb1"
        save_embeddings(ds, path)
        manifest["files"][name] = {"path": path.name, "n": ds.n, "d": ds.d, "sha256": _sha256(path)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(splits)} splits to {out}")
    return 0


def _cmd_inject_noise(args) -> int:
    ds = load_embeddings(args.input)
    noisy, mask = apply_noise(ds, NoiseSpec(args.p, args.seed))
    save_embeddings(noisy, args.out)
    print(f"flipped {int(mask.sum())} of {ds.n} labels")
    return 0


def _cmd_build_graph(args) -> int:
    ds = load_embeddings(args.input)
    graph = build_knn_graph(ds.features, args.k, include_self=args.include_self)
    write_graph_csv(graph, args.out)
    print(f"wrote {ds.n} x {args.k} graph to {args.out}")
    return 0


def _cmd_spread(args) -> int:
    ds = load_embeddings(args.input)
    graph = build_knn_graph(ds.features, args.k, include_self=args.include_self)
    tie = "assign_one" if ds.num_classes == 2 else "keep_current"
    cfg = SpreadConfig(k=args.k, rounds=args.rounds, include_self=args.include_self, tie_policy=tie)
    cleaned = spread_labels(graph, ds.labels, ds.num_classes, cfg)
    out_ds = ds.replace(labels=cleaned)
    save_embeddings(out_ds, args.out)
    changed = int((cleaned != ds.labels).sum())
    print(f"spread {args.rounds} round(s) with k={args.k}; {changed} labels changed")
    return 0


def _cmd_train(args) -> int:
    ds = load_embeddings(args.input)
    c = args.c
    if args.inverse_c:
        c = 1.0 / (c * ds.n)
    cfg = TrainConfig(loss=args.loss, alpha=args.alpha, l1_penalty=c)
    model = train(ds.features, ds.labels, cfg, num_classes=ds.num_classes)
    save_model(model, args.out, loss=args.loss)
    acc = float(np.mean(predict(model, ds.features) == ds.labels))
    print(f"trained on {ds.n} rows; fit accuracy {acc:.4f}; model at {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    doc = config_mod.load_toml(args.config)
    spec = config_mod.sweep_spec(doc, seed_override=args.seed, inverse_c=args.inverse_c or None)
    result = run_sweep(spec, jobs=args.jobs, out_dir=args.out_dir, dump_models=args.dump_models)
    for cell in result.cells:
        status = "FAILED: " + cell.error if cell.error else "ok"
        print(f"{cell.method} @ p={cell.noise:g}: {status}")
    if args.out_dir:
        print(f"outputs in {args.out_dir}")
    return 1 if result.failed else 0


def _cmd_spread_diag(args) -> int:
    if args.config:
        doc = config_mod.load_toml(args.config)
        ds = generate(config_mod.synth_config(doc))["train"]
    elif args.input:
        ds = load_embeddings(args.input)
    else:
        raise ConfigError("spread-diag needs --input or --config")
    k_grid = [int(v) for v in args.k_grid.split(",")]
    t_grid = [int(v) for v in args.t_grid.split(",")]
    rows = spread_diagnostic(ds, args.p, k_grid, t_grid, range(args.num_seeds), include_self=args.include_self)
    text = diag_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_report(args) -> int:
    rows = []
    with open(args.results) as fh:
        header = fh.readline().strip().split(",")
        idx = {name: i for i, name in enumerate(header)}
        cells: dict = {}
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            key = (parts[idx["method"]], float(parts[idx["noise"]]))
            cells.setdefault(key, []).append(float(parts[idx["wga"]]))
    for (method, noise), values in sorted(cells.items()):
        arr = np.asarray(values)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append(SummaryRow(method=method, noise_level=noise, mean=float(arr.mean()), std=std, count=arr.size))
    text = render(rows, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_project2d(args) -> int:
    ds = load_embeddings(args.input)
    X = ds.features.astype(np.float64)
    X = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    comps = vt[:2]
    # sign convention: largest-magnitude loading positive
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    proj = X @ comps.T
    lines = ["pc1,pc2,label" + (",domain" if ds.domains is not None else "") + (",clean_label" if ds.clean_labels is not None else "")]
    for i in range(ds.n):
        row = [f"{proj[i,0]:.6g}", f"{proj[i,1]:.6g}", str(int(ds.labels[i]))]
        if ds.domains is not None:
            row.append(str(int(ds.domains[i])))
        if ds.clean_labels is not None:
            row.append(str(int(ds.clean_labels[i])))
        lines.append(",".join(row))
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote 2-D projection of {ds.n} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lastlayer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate synthetic splits as EMB1 files")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("inject-noise", help="flip labels symmetrically in an EMB1 file")
    p.add_argument("--input", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inject_noise)

    p = sub.add_parser("build-graph", help="write the exact kNN graph as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include-self", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=_cmd_build_graph)

    p = sub.add_parser("spread", help="majority-vote label spreading over the kNN graph")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--include-self", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=_cmd_spread)

    p = sub.add_parser("train", help="fit an L1-penalized linear head on an EMB1 file")
    p.add_argument("--input", required=True)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--loss", choices=["cross_entropy", "alpha_loss"], default="cross_entropy")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--inverse-c", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="run a methods x noise x seeds experiment sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--inverse-c", action="store_true")
    p.add_argument("--dump-models", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("spread-diag", help="accuracy of spreading vs (k, rounds)")
    p.add_argument("--input", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--k-grid", default="1,7,21")
    p.add_argument("--t-grid", default="0,1")
    p.add_argument("--num-seeds", type=int, default=10)
    p.add_argument("--include-self", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_spread_diag)

    p = sub.add_parser("report", help="render a per-seed results CSV as a summary table")
    p.add_argument("--results", required=True)
    p.add_argument("--format", choices=["csv", "markdown"], default="markdown")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("project2d", help="PCA projection to 2 components, CSV out")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_project2d)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LastLayerError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
