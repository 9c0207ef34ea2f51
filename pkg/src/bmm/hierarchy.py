"""The hierarchical mode tree over balanced leaf clusters.

Leaves are the balanced k-means clusters of the server feature set; internal
nodes come from bottom-up agglomerative merging of the closest pair at each
step, so J leaves always produce 2J-1 nodes. Every node caches the Gaussian
statistics of its member rows and is a candidate for matching, the root
included.

Trees persist as versioned JSON with one record per node holding node_id,
parent_id, child_ids, member_indices, mean, covariance and count. Python's
shortest-round-trip float repr makes persist/load exact at the bit level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import ParameterError, TreeFormatError, ValidationError
from .gap import ModeStats, gaussian_stats

if TYPE_CHECKING:
    from .clustering import FlatClustering
    from .features import FeatureMatrix

TREE_FORMAT = "bmm-mode-tree"
TREE_VERSION = 1

LINKAGES = ("centroid", "ward")


@dataclass(eq=False)
class ModeNode:
    node_id: int
    member_indices: np.ndarray
    children: tuple[int, int] | None
    parent: int | None
    stats: ModeStats
    merge_distance: float | None = None  # linkage value for internal nodes; not persisted

    def __post_init__(self) -> None:
        self.member_indices = np.asarray(self.member_indices, dtype=np.int64)

    @property
    def size(self) -> int:
        return int(self.member_indices.size)

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass(eq=False)
class ModeTree:
    nodes: list[ModeNode]
    leaf_count: int

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def root_id(self) -> int:
        return self.node_count - 1

    def node(self, node_id: int) -> ModeNode:
        return self.nodes[node_id]

    def depths(self) -> list[int]:
        """Depth of each node, root = 0."""
        depth = [0] * self.node_count
        for node in sorted(self.nodes, key=lambda nd: -nd.node_id):
            if node.parent is not None:
                depth[node.node_id] = depth[node.parent] + 1
        return depth

    def level_sizes(self) -> dict[int, list[int]]:
        """Member counts per depth level, for build summaries."""
        out: dict[int, list[int]] = {}
        for node, depth in zip(self.nodes, self.depths()):
            out.setdefault(depth, []).append(node.size)
        return out


def _linkage_value(linkage, mean_a, mean_b, count_a, count_b) -> float:
    gap = mean_a - mean_b
    if linkage == "centroid":
        return float(np.sqrt(gap @ gap))
    # ward: SSE increase caused by the merge
    return float(count_a * count_b / (count_a + count_b) * (gap @ gap))


def build_hierarchy(
    leaves: "FlatClustering", features: "FeatureMatrix", linkage: str = "centroid"
) -> ModeTree:
    """Merge the J leaf clusters bottom-up into a 2J-1 node tree.

    At every step the closest active pair under the chosen linkage is merged;
    equidistant pairs resolve to the lowest (node_id, node_id) pair. Node
    statistics and centroids are always recomputed from member rows.
    """
    if linkage not in LINKAGES:
        raise ParameterError(f"unknown linkage {linkage!r}, expected one of {LINKAGES}")
    j = leaves.k
    total = 2 * j - 1
    x = features.values.astype(np.float64)

    nodes: list[ModeNode] = []
    means = np.zeros((total, x.shape[1]), dtype=np.float64)
    counts = np.zeros(total, dtype=np.int64)
    members: list[np.ndarray] = []
    for c in range(j):
        rows = leaves.cluster_rows(c)
        if rows.size == 0:
            raise ValidationError(f"leaf cluster {c} is empty")
        members.append(rows)
        means[c] = x[rows].mean(axis=0)
        counts[c] = rows.size
        nodes.append(
            ModeNode(
                node_id=c,
                member_indices=rows,
                children=None,
                parent=None,
                stats=gaussian_stats(features, rows),
            )
        )

    dist = np.full((total, total), np.inf, dtype=np.float64)
    active = np.zeros(total, dtype=bool)
    active[:j] = True
    for a in range(j):
        for b in range(a + 1, j):
            dist[a, b] = _linkage_value(linkage, means[a], means[b], counts[a], counts[b])

    for new_id in range(j, total):
        ids = np.flatnonzero(active)
        block = dist[np.ix_(ids, ids)]
        flat = int(block.argmin())  # row-major first minimum = lowest (a, b) pair
        a = int(ids[flat // ids.size])
        b = int(ids[flat % ids.size])
        rows = np.sort(np.concatenate([members[a], members[b]]))
        members.append(rows)
        means[new_id] = x[rows].mean(axis=0)
        counts[new_id] = rows.size
        nodes.append(
            ModeNode(
                node_id=new_id,
                member_indices=rows,
                children=(a, b),
                parent=None,
                stats=gaussian_stats(features, rows),
                merge_distance=float(dist[a, b]),
            )
        )
        nodes[a].parent = new_id
        nodes[b].parent = new_id
        active[a] = False
        active[b] = False
        for other in np.flatnonzero(active):
            value = _linkage_value(
                linkage, means[new_id], means[other], counts[new_id], counts[other]
            )
            dist[min(other, new_id), max(other, new_id)] = value
        active[new_id] = True

    tree = ModeTree(nodes=nodes, leaf_count=j)
    validate_tree(tree)
    return tree


def validate_tree(tree: ModeTree) -> None:
    """Structural checks: single root, parent links, partition property, H = 2J-1."""
    if tree.node_count != 2 * tree.leaf_count - 1:
        raise ValidationError(
            f"node count {tree.node_count} != 2*{tree.leaf_count}-1 for {tree.leaf_count} leaves"
        )
    roots = [node.node_id for node in tree.nodes if node.parent is None]
    if roots != [tree.root_id]:
        raise ValidationError(f"expected single root {tree.root_id}, found {roots}")
    leaves = 0
    for position, node in enumerate(tree.nodes):
        if node.node_id != position:
            raise ValidationError(f"node_id {node.node_id} does not match its position")
        if node.is_leaf:
            leaves += 1
            continue
        a, b = node.children
        for child in (a, b):
            if tree.nodes[child].parent != node.node_id:
                raise ValidationError(f"child {child} does not point back to {node.node_id}")
        left = tree.nodes[a].member_indices
        right = tree.nodes[b].member_indices
        if np.intersect1d(left, right).size:
            raise ValidationError(f"children of node {node.node_id} share member rows")
        merged = np.sort(np.concatenate([left, right]))
        if not np.array_equal(merged, node.member_indices):
            raise ValidationError(f"node {node.node_id} members != union of its children")
    if leaves != tree.leaf_count:
        raise ValidationError(f"found {leaves} leaves, expected {tree.leaf_count}")


def persist_tree(tree: ModeTree, path: str | Path) -> None:
    payload = {
        "format": TREE_FORMAT,
        "version": TREE_VERSION,
        "leaf_count": tree.leaf_count,
        "nodes": [
            {
                "node_id": node.node_id,
                "parent_id": node.parent,
                "child_ids": list(node.children) if node.children else [],
                "member_indices": [int(i) for i in node.member_indices],
                "mean": [float(v) for v in node.stats.mean],
                "covariance": [[float(v) for v in row] for row in node.stats.cov],
                "count": node.stats.count,
            }
            for node in tree.nodes
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_tree(path: str | Path) -> ModeTree:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TreeFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != TREE_FORMAT:
        raise TreeFormatError(f"{path}: missing {TREE_FORMAT!r} format tag")
    version = payload.get("version")
    if version != TREE_VERSION:
        raise TreeFormatError(
            f"{path}: tree version {version} is incompatible with this build (reads {TREE_VERSION})"
        )
    nodes = []
    for rec in payload["nodes"]:
        children = tuple(rec["child_ids"]) if rec["child_ids"] else None
        if children is not None and len(children) != 2:
            raise TreeFormatError(f"{path}: node {rec['node_id']} has {len(children)} children")
        nodes.append(
            ModeNode(
                node_id=int(rec["node_id"]),
                member_indices=np.asarray(rec["member_indices"], dtype=np.int64),
                children=children,
                parent=None if rec["parent_id"] is None else int(rec["parent_id"]),
                stats=ModeStats(
                    mean=np.asarray(rec["mean"], dtype=np.float64),
                    cov=np.asarray(rec["covariance"], dtype=np.float64),
                    count=int(rec["count"]),
                ),
            )
        )
    tree = ModeTree(nodes=nodes, leaf_count=int(payload["leaf_count"]))
    validate_tree(tree)
    return tree


def trees_equal(a: ModeTree, b: ModeTree) -> bool:
    """Structural equality: nodes, links, members, and bit-exact cached stats."""
    if a.leaf_count != b.leaf_count or a.node_count != b.node_count:
        return False
    for na, nb in zip(a.nodes, b.nodes):
        if (na.node_id, na.parent, na.children) != (nb.node_id, nb.parent, nb.children):
            return False
        if not np.array_equal(na.member_indices, nb.member_indices):
            return False
        if na.stats.count != nb.stats.count:
            return False
        if not np.array_equal(na.stats.mean, nb.stats.mean):
            return False
        if not np.array_equal(na.stats.cov, nb.stats.cov):
            return False
    return True
