from __future__ import annotations

import json

import numpy as np
import pytest

from bmm import generate, load_tree, read_manifest, save_world, write_features
from bmm.cli import main
from bmm.synth import random_subset_world, shared_nearest_world


@pytest.fixture(scope="module")
def world_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    world = random_subset_world(seed=5, per_sub=40, per_target=50, n_target_modes=2,
                                include_whole_super=False)
    server, target, _ = generate(world)
    server_path = root / "server.bmmf"
    target_path = root / "target.bmmf"
    write_features(server, server_path)
    write_features(target, target_path)
    return root, server, target, server_path, target_path


def run_build(tmp_path, server_path, leaves=8, seed=0):
    tree_path = tmp_path / "tree.json"
    code = main([
        "build-server", "--server-features", str(server_path),
        "--leaves", str(leaves), "--seed", str(seed), "--tree", str(tree_path),
    ])
    return code, tree_path


def test_build_server_writes_tree(tmp_path, world_files, capsys):
    _, server, _, server_path, _ = world_files
    code, tree_path = run_build(tmp_path, server_path)
    assert code == 0
    out = capsys.readouterr().out
    assert "leaves (J): 8" in out and "nodes (H): 15" in out
    tree = load_tree(tree_path)
    assert tree.node_count == 15
    assert tree.node(tree.root_id).size == server.n


def test_build_server_rejects_oversized_j(tmp_path, world_files, capsys):
    _, server, _, server_path, _ = world_files
    code = main([
        "build-server", "--server-features", str(server_path),
        "--leaves", str(10_000), "--tree", str(tmp_path / "t.json"),
    ])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_build_server_deterministic_bytes(tmp_path, world_files):
    _, _, _, server_path, _ = world_files
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, first = run_build(tmp_path / "a", server_path)
    _, second = run_build(tmp_path / "b", server_path)
    assert first.read_bytes() == second.read_bytes()


def match_args(tree_path, server_path, target_path, out_path, seed=0):
    return [
        "match", "--tree", str(tree_path), "--server-features", str(server_path),
        "--target-features", str(target_path), "--target-clusters", "2",
        "--seed", str(seed), "--out", str(out_path),
    ]


def test_match_outputs_and_rerun_identical(tmp_path, world_files):
    _, server, _, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    out_a = tmp_path / "sel_a.manifest"
    out_b = tmp_path / "sel_b.manifest"
    assert main(match_args(tree_path, server_path, target_path, out_a)) == 0
    assert main(match_args(tree_path, server_path, target_path, out_b)) == 0
    assert out_a.read_bytes() == out_b.read_bytes()

    manifest = read_manifest(out_a)
    assert manifest.metadata["command"] == "match"
    assert "selected_nodes" in manifest.metadata
    ids = set(server.sample_ids)
    assert all(sid in ids for sid, _ in manifest.entries)

    report = json.loads((tmp_path / "sel_a.manifest.report.json").read_text())
    assert report["selected_samples"] == len(manifest.entries)
    assert (tmp_path / "sel_a.manifest.report.txt").exists()


def test_match_thread_count_does_not_change_outputs(tmp_path, world_files, monkeypatch):
    _, _, _, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    monkeypatch.setenv("BMM_THREADS", "1")
    out_serial = tmp_path / "serial.manifest"
    assert main(match_args(tree_path, server_path, target_path, out_serial)) == 0
    monkeypatch.setenv("BMM_THREADS", "4")
    out_threaded = tmp_path / "threaded.manifest"
    assert main(match_args(tree_path, server_path, target_path, out_threaded)) == 0
    assert out_serial.read_bytes() == out_threaded.read_bytes()


def test_match_cost_csv_dump(tmp_path, world_files):
    _, _, _, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    out = tmp_path / "sel.manifest"
    cost_csv = tmp_path / "cost.csv"
    assert main(match_args(tree_path, server_path, target_path, out)
                + ["--cost-csv", str(cost_csv)]) == 0
    lines = cost_csv.read_text().strip().splitlines()
    assert len(lines) == 3  # header + L rows
    assert lines[0].startswith("target_id,node_0")


def test_evaluate_full_server_equal_numbers(tmp_path, world_files, capsys):
    root, server, _, server_path, target_path = world_files
    manifest_path = tmp_path / "all.manifest"
    lines = [f"{sid},{label}" for sid, label in zip(server.sample_ids, server.dataset_labels)]
    manifest_path.write_text("\n".join(lines) + "\n")
    out_json = tmp_path / "gap.json"
    code = main([
        "evaluate", "--manifest", str(manifest_path),
        "--server-features", str(server_path), "--target-features", str(target_path),
        "--out", str(out_json),
    ])
    assert code == 0
    payload = json.loads(out_json.read_text())
    assert payload["fid_selected_vs_target"] == payload["fid_server_vs_target"]


def test_evaluate_reports_gap_reduction(tmp_path, world_files):
    _, _, _, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    out = tmp_path / "sel.manifest"
    assert main(match_args(tree_path, server_path, target_path, out)) == 0
    out_json = tmp_path / "gap.json"
    assert main([
        "evaluate", "--manifest", str(out), "--server-features", str(server_path),
        "--target-features", str(target_path), "--out", str(out_json),
    ]) == 0
    payload = json.loads(out_json.read_text())
    assert payload["fid_selected_vs_target"] < payload["fid_server_vs_target"]


def test_evaluate_unknown_id_fails(tmp_path, world_files, capsys):
    _, _, _, server_path, target_path = world_files
    manifest_path = tmp_path / "bogus.manifest"
    manifest_path.write_text("not-a-real-id,whatever\n")
    code = main([
        "evaluate", "--manifest", str(manifest_path),
        "--server-features", str(server_path), "--target-features", str(target_path),
    ])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_prune_fraction_one_keeps_entries(tmp_path, world_files):
    _, _, _, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    out = tmp_path / "sel.manifest"
    assert main(match_args(tree_path, server_path, target_path, out)) == 0
    pruned_path = tmp_path / "pruned.manifest"
    assert main([
        "prune", "--manifest", str(out), "--budget-frac", "1.0",
        "--seed", "3", "--out", str(pruned_path),
    ]) == 0
    original = read_manifest(out)
    pruned = read_manifest(pruned_path)
    assert pruned.entries == original.entries
    assert pruned.metadata["budget"] == "fraction:1.0"
    assert pruned.metadata["prune_seed"] == "3"


def test_prune_uniform_count(tmp_path, world_files):
    _, _, _, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    out = tmp_path / "sel.manifest"
    assert main(match_args(tree_path, server_path, target_path, out)) == 0
    n_input = len(read_manifest(out).entries)
    pruned_path = tmp_path / "pruned.manifest"
    assert main([
        "prune", "--manifest", str(out), "--budget-n", "5", "--out", str(pruned_path),
    ]) == 0
    pruned = read_manifest(pruned_path)
    assert len(pruned.entries) == 5
    assert set(s for s, _ in pruned.entries) <= set(s for s, _ in read_manifest(out).entries)
    assert n_input >= 5


def test_prune_stratified_matches_allocation(tmp_path, world_files):
    _, server, _, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    out = tmp_path / "sel.manifest"
    assert main(match_args(tree_path, server_path, target_path, out)) == 0
    pruned_path = tmp_path / "strat.manifest"
    assert main([
        "prune", "--manifest", str(out), "--budget-frac", "0.5", "--strategy", "stratified",
        "--tree", str(tree_path), "--server-features", str(server_path),
        "--out", str(pruned_path),
    ]) == 0
    original = read_manifest(out)
    pruned = read_manifest(pruned_path)
    assert len(pruned.entries) == round(0.5 * len(original.entries))

    tree = load_tree(tree_path)
    index = {sid: i for i, sid in enumerate(server.sample_ids)}
    kept_rows = {index[sid] for sid, _ in pruned.entries}
    total_rows = {index[sid] for sid, _ in original.entries}
    selected = [int(t) for t in original.metadata["selected_nodes"].split(",")]
    taken: set[int] = set()
    for node_id in selected:
        members = set(tree.node(node_id).member_indices.tolist()) & total_rows
        stratum = members - taken
        taken |= stratum
        expected = len(stratum) / len(total_rows) * len(pruned.entries)
        assert abs(len(stratum & kept_rows) - expected) < 1.0


def test_prune_stratified_requires_tree(tmp_path, world_files, capsys):
    _, _, _, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    out = tmp_path / "sel.manifest"
    assert main(match_args(tree_path, server_path, target_path, out)) == 0
    code = main([
        "prune", "--manifest", str(out), "--budget-frac", "0.5",
        "--strategy", "stratified", "--out", str(tmp_path / "x.manifest"),
    ])
    assert code == 2
    assert "stratified" in capsys.readouterr().err


def test_bench_csv(tmp_path, capsys):
    world = shared_nearest_world(seed=0, per_mode=40)
    world_path = tmp_path / "world.json"
    save_world(world, world_path)
    out_csv = tmp_path / "bench.csv"
    code = main([
        "bench", "--world", str(world_path), "--leaves", "4",
        "--target-clusters", "3", "--out", str(out_csv),
    ])
    assert code == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "variant,J,L,fid,precision,runtime"
    assert len(lines) == 4  # header + 3 variants for one J
    assert {line.split(",")[0] for line in lines[1:]} == {"bmm_hier", "bmm_flat", "dm_dup"}


def test_csv_feature_format_end_to_end(tmp_path, world_files):
    _, server, target, _, _ = world_files
    server_csv = tmp_path / "server.csv"
    target_csv = tmp_path / "target.csv"
    write_features(server, server_csv, "csv")
    write_features(target, target_csv, "csv")
    tree_path = tmp_path / "tree.json"
    assert main([
        "build-server", "--server-features", str(server_csv), "--format", "csv",
        "--leaves", "8", "--tree", str(tree_path),
    ]) == 0
    out = tmp_path / "sel.manifest"
    assert main([
        "match", "--tree", str(tree_path), "--server-features", str(server_csv),
        "--target-features", str(target_csv), "--format", "csv",
        "--target-clusters", "2", "--out", str(out),
    ]) == 0
    assert len(read_manifest(out).entries) > 0


def test_match_rejects_mismatched_server(tmp_path, world_files, capsys):
    _, _, target, server_path, target_path = world_files
    code, tree_path = run_build(tmp_path, server_path)
    code = main(match_args(tree_path, target_path, target_path, tmp_path / "x.manifest"))
    assert code == 2
    assert "covers" in capsys.readouterr().err


def test_missing_file_is_parameter_error(tmp_path, capsys):
    code = main([
        "build-server", "--server-features", str(tmp_path / "missing.bmmf"),
        "--tree", str(tmp_path / "t.json"),
    ])
    assert code == 2
