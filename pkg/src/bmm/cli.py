"""Command-line pipeline: build-server, match, evaluate, prune, bench.

Every command is deterministic given its full flag set; reports pair a
human-readable text rendering with a machine-readable JSON or CSV file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BmmError, ParameterError, ValidationError
from .features import (
    FeatureMatrix,
    Manifest,
    read_features,
    read_manifest,
    write_manifest,
)
from .gap import DEFAULT_EPS, write_cost_matrix_csv
from .hierarchy import ModeTree, load_tree, persist_tree
from .matching import SelectionResult, match_report_payload, render_match_report
from .pipeline import (
    PipelineConfig,
    build_server_tree,
    evaluate_gap,
    run_bench,
    run_match,
)
from .pruning import Budget, prune
from .synth import load_world


def _add_feature_format(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--format", choices=("binary", "csv"), default="binary",
        help="feature file format (default: binary)",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmm", description="training-set search against a hierarchical data server"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-server", help="cluster server features and persist the mode tree")
    p.add_argument("--server-features", required=True)
    p.add_argument("--leaves", type=int, default=128, help="leaf cluster count J (default 128)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--linkage", choices=("centroid", "ward"), default="centroid")
    p.add_argument("--tree", required=True, help="output path for the persisted tree")
    _add_feature_format(p)

    p = sub.add_parser("match", help="match target modes against a persisted tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--server-features", required=True)
    p.add_argument("--target-features", required=True)
    p.add_argument("--target-clusters", type=int, default=20, help="target mode count L")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-cov", type=float, default=DEFAULT_EPS)
    p.add_argument("--out", required=True, help="output manifest path")
    p.add_argument("--report", default=None, help="report base path (default: <out>.report)")
    p.add_argument("--cost-csv", default=None, help="optionally dump the cost matrix as CSV")
    p.add_argument("--warn-fid", type=float, default=None,
                   help="flag matches whose distance exceeds this value")
    _add_feature_format(p)

    p = sub.add_parser("evaluate", help="report the gap of a manifest vs the full server")
    p.add_argument("--manifest", required=True)
    p.add_argument("--server-features", required=True)
    p.add_argument("--target-features", required=True)
    p.add_argument("--eps-cov", type=float, default=DEFAULT_EPS)
    p.add_argument("--out", default=None, help="optional JSON output path")
    _add_feature_format(p)

    p = sub.add_parser("prune", help="subsample a manifest to a budget")
    p.add_argument("--manifest", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--budget-frac", type=float, default=None)
    group.add_argument("--budget-n", type=int, default=None)
    p.add_argument("--strategy", choices=("uniform", "stratified"), default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tree", default=None, help="tree path (required for stratified)")
    p.add_argument("--server-features", default=None,
                   help="server features path (required for stratified)")
    p.add_argument("--out", required=True)
    _add_feature_format(p)

    p = sub.add_parser("bench", help="sweep tree sizes and variants on a planted world")
    p.add_argument("--world", required=True, help="world config JSON")
    p.add_argument("--leaves", default="16,32,64,128",
                   help="comma-separated J sweep (default 16,32,64,128)")
    p.add_argument("--target-clusters", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-cov", type=float, default=DEFAULT_EPS)
    p.add_argument("--linkage", choices=("centroid", "ward"), default="centroid")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _print_tree_summary(tree: ModeTree) -> None:
    print(f"leaves (J): {tree.leaf_count}")
    print(f"nodes (H): {tree.node_count}")
    for depth, sizes in sorted(tree.level_sizes().items()):
        shown = " ".join(str(s) for s in sizes) if len(sizes) <= 16 else (
            f"min={min(sizes)} max={max(sizes)}"
        )
        print(f"depth {depth}: {len(sizes)} node(s), sizes {shown}")


def _cmd_build_server(args) -> int:
    features = read_features(args.server_features, args.format)
    config = PipelineConfig(
        leaves=args.leaves, target_clusters=1, seed=args.seed, linkage=args.linkage
    )
    tree = build_server_tree(features, config)
    persist_tree(tree, args.tree)
    _print_tree_summary(tree)
    print(f"tree written to {args.tree}")
    return 0


def _cmd_match(args) -> int:
    tree = load_tree(args.tree)
    server = read_features(args.server_features, args.format)
    if server.n != tree.node(tree.root_id).size:
        raise ValidationError(
            f"server features have {server.n} rows but the tree covers "
            f"{tree.node(tree.root_id).size}"
        )
    target = read_features(args.target_features, args.format)
    config = PipelineConfig(
        leaves=tree.leaf_count,
        target_clusters=args.target_clusters,
        seed=args.seed,
        eps_cov=args.eps_cov,
    )
    outcome = run_match(tree, target, server.dataset_labels, config)
    selection = outcome.selection

    entries = [
        (server.sample_ids[int(r)], server.dataset_labels[int(r)])
        for r in selection.sample_rows
    ]
    manifest = Manifest(
        entries=entries,
        metadata={
            "tool": f"bmm/{__version__}",
            "command": "match",
            "seed": str(args.seed),
            "leaves": str(tree.leaf_count),
            "target_clusters": str(args.target_clusters),
            "eps_cov": repr(args.eps_cov),
            "total_cost": repr(outcome.assignment.total_cost),
            "selected_nodes": ",".join(str(n) for n in selection.selected_nodes),
        },
    )
    write_manifest(manifest, args.out)

    text = render_match_report(
        selection, outcome.problem, tree, outcome.assignment.total_cost, warn_fid=args.warn_fid
    )
    payload = match_report_payload(
        selection, outcome.problem, tree, outcome.assignment.total_cost
    )
    base = args.report if args.report is not None else f"{args.out}.report"
    Path(f"{base}.txt").write_text(text, encoding="utf-8")
    Path(f"{base}.json").write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    if args.cost_csv:
        write_cost_matrix_csv(
            args.cost_csv, outcome.problem.cost, outcome.problem.target_ids,
            outcome.problem.node_ids,
        )
    sys.stdout.write(text)
    print(f"manifest written to {args.out}")
    return 0


def _manifest_rows(manifest: Manifest, features: FeatureMatrix) -> np.ndarray:
    index = features.row_index()
    rows = []
    for sid, _ in manifest.entries:
        if sid not in index:
            raise ValidationError(f"manifest sample_id {sid!r} not found in server features")
        rows.append(index[sid])
    return np.asarray(sorted(rows), dtype=np.int64)


def _cmd_evaluate(args) -> int:
    manifest = read_manifest(args.manifest)
    server = read_features(args.server_features, args.format)
    target = read_features(args.target_features, args.format)
    rows = _manifest_rows(manifest, server)
    if rows.size < 2:
        raise ValidationError(f"manifest selects {rows.size} rows; need at least 2")
    gap_selected, gap_server = evaluate_gap(server, target, rows, eps=args.eps_cov)
    print(f"fid_selected_vs_target: {gap_selected:.6f}")
    print(f"fid_server_vs_target:   {gap_server:.6f}")
    if args.out:
        payload = {
            "fid_selected_vs_target": gap_selected,
            "fid_server_vs_target": gap_server,
            "selected_rows": int(rows.size),
            "server_rows": server.n,
        }
        Path(args.out).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return 0


def _selection_from_manifest(
    manifest: Manifest, tree: ModeTree, features: FeatureMatrix
) -> SelectionResult:
    """Rebuild match-time strata from a manifest plus its tree and features."""
    raw = manifest.metadata.get("selected_nodes")
    if raw is None:
        raise ValidationError(
            "manifest lacks 'selected_nodes' metadata; it was not produced by 'bmm match'"
        )
    selected = [int(tok) for tok in raw.split(",") if tok]
    rows = _manifest_rows(manifest, features)
    strata: dict[int, np.ndarray] = {}
    taken = np.empty(0, dtype=np.int64)
    for node_id in selected:
        if not 0 <= node_id < tree.node_count:
            raise ValidationError(f"manifest references unknown node {node_id}")
        members = np.intersect1d(tree.node(node_id).member_indices, rows)
        fresh = np.setdiff1d(members, taken)
        strata[node_id] = fresh
        taken = np.union1d(taken, fresh)
    if taken.size != rows.size:
        raise ValidationError(
            f"selected nodes cover {taken.size} of the manifest's {rows.size} rows"
        )
    labels = tuple(features.dataset_labels[int(r)] for r in rows)
    composition: dict[str, int] = {}
    for label in labels:
        composition[label] = composition.get(label, 0) + 1
    return SelectionResult(
        selected_nodes=selected,
        sample_rows=rows,
        per_target={},
        composition=dict(sorted(composition.items())),
        strata=strata,
        row_labels=labels,
    )


def _cmd_prune(args) -> int:
    manifest = read_manifest(args.manifest)
    if args.budget_frac is not None:
        budget = Budget("fraction", args.budget_frac)
    else:
        budget = Budget("absolute", args.budget_n)

    if args.strategy == "stratified":
        if not args.tree or not args.server_features:
            raise ParameterError("stratified pruning needs --tree and --server-features")
        features = read_features(args.server_features, args.format)
        tree = load_tree(args.tree)
        selection = _selection_from_manifest(manifest, tree, features)
        pruned = prune(selection, budget, "stratified", args.seed)
        entries = [
            (features.sample_ids[int(r)], features.dataset_labels[int(r)])
            for r in pruned.sample_rows
        ]
    else:
        labels = tuple(label for _, label in manifest.entries)
        pseudo = SelectionResult(
            selected_nodes=[],
            sample_rows=np.arange(len(manifest.entries), dtype=np.int64),
            per_target={},
            composition={},
            strata={},
            row_labels=labels,
        )
        pruned = prune(pseudo, budget, "uniform", args.seed)
        entries = [manifest.entries[int(i)] for i in pruned.sample_rows]

    metadata = dict(manifest.metadata)
    metadata.update(
        {
            "pruned_by": f"bmm/{__version__}",
            "budget": f"{budget.kind}:{budget.value!r}",
            "strategy": args.strategy,
            "prune_seed": str(args.seed),
        }
    )
    write_manifest(Manifest(entries=entries, metadata=metadata), args.out)
    print(f"kept {len(entries)} of {len(manifest.entries)} entries -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    world = load_world(args.world)
    try:
        sweep = [int(tok) for tok in args.leaves.split(",") if tok]
    except ValueError as exc:
        raise ParameterError(f"--leaves must be comma-separated integers: {exc}") from exc
    if not sweep:
        raise ParameterError("--leaves names no tree sizes")
    rows = run_bench(
        world, sweep, args.target_clusters, seed=args.seed, eps=args.eps_cov,
        linkage=args.linkage,
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "J", "L", "fid", "precision", "runtime"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    for row in rows:
        print(
            f"{row['variant']:9s} J={row['J']:<4d} L={row['L']:<3d} "
            f"fid={row['fid']:.4f} precision={row['precision']:.3f} "
            f"runtime={row['runtime']:.3f}s"
        )
    print(f"bench CSV written to {args.out}")
    return 0


_COMMANDS = {
    "build-server": _cmd_build_server,
    "match": _cmd_match,
    "evaluate": _cmd_evaluate,
    "prune": _cmd_prune,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (BmmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
