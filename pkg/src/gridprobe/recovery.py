"""Exact noiseless topology recovery and verifiability checks.

A bus's column of the resistance matrix is constant on each of its level
sets and strictly increases with level depth, so grouping equal column
values reads the level structure straight off the data. Probing every leaf
pins down the whole tree and its line resistances; these routines implement
that constructive argument and the matching pairwise-confusability test for
line-status verification.
"""

from __future__ import annotations

import numpy as np

from .errors import ReconstructionError
from .feeder import Feeder, RecoveredTree, path_resistance_matrix
from .trees import TreeGraph, build_index, level_sets


def _group_by_value(values, rel_tol: float):
    """Cluster sorted scalars whose gaps stay within ``rel_tol`` of the scale.

    With ``rel_tol == 0`` grouping is by exact equality (use with rational
    arithmetic). Returns (groups of indices, representative values).
    """
    order = sorted(range(len(values)), key=lambda i: values[i])
    if rel_tol:
        scale = max(abs(values[i]) for i in order) or 1.0
        tol = rel_tol * scale
    else:
        tol = 0
    groups, reps = [], []
    for i in order:
        if groups and values[i] - values[groups[-1][0]] <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
            reps.append(values[i])
    if rel_tol:
        for g in groups:
            if values[g[-1]] - values[g[0]] > tol:
                raise ReconstructionError(
                    "column values are not cleanly separable at the given tolerance"
                )
    return groups, reps


def level_sets_from_column(col, m: int, rel_tol: float = 1e-9):
    """Partition buses into the level sets of ``m`` from its resistance column.

    ``col`` is the m-th column of the resistance matrix over buses 1..N; the
    substation joins the zero-valued group. Returns the ordered partition
    (sets of node ids, substation included) and the depth of ``m``.
    """
    values = [0] + list(col)          # prepend the substation entry
    groups, _ = _group_by_value(values, rel_tol)
    partition = [frozenset(g) for g in groups]
    depth = len(partition) - 1
    if m not in partition[depth]:
        raise ReconstructionError(
            f"bus {m} does not carry the largest entry of its own column"
        )
    return partition, depth


def recover_tree(leaf_columns, leaves, rel_tol: float = 1e-9) -> RecoveredTree:
    """Rebuild topology and resistances from exact leaf-probing columns.

    ``leaf_columns[:, j]`` must equal the resistance-matrix column of leaf
    ``leaves[j]``. Each column yields that leaf's level sets; every node's
    depth is the smallest level it occupies across columns, ancestors are the
    unique depth-k members of each level set, and each line's resistance is
    the jump between consecutive level values. Any inconsistency (including a
    probed bus that is not a leaf) raises :class:`ReconstructionError`.
    """
    leaves = [int(b) for b in leaves]
    cols = [[leaf_columns[i][j] for i in range(len(leaf_columns))]
            for j in range(len(leaves))]
    if not leaves:
        raise ReconstructionError("at least one probed leaf is required")
    n = len(cols[0]) + 1

    partitions, reps = [], []
    for w, col in zip(leaves, cols):
        values = [0] + list(col)
        groups, rep = _group_by_value(values, rel_tol)
        if len(groups[-1]) != 1 or groups[-1][0] != w:
            raise ReconstructionError(
                f"bus {w} is not a leaf of the tree that generated its column"
            )
        partitions.append(groups)
        reps.append(rep)

    depth = [None] * n
    depth[0] = 0
    for groups in partitions:
        for k, g in enumerate(groups):
            for node in g:
                if depth[node] is None or k < depth[node]:
                    depth[node] = k
    if any(d is None for d in depth):
        raise ReconstructionError("some buses never appear in the probing columns")

    parent = [None] * n
    resistance = [None] * n
    for w, groups, rep in zip(leaves, partitions, reps):
        chain = []
        for k, g in enumerate(groups):
            anchors = [node for node in g if depth[node] == k]
            if len(anchors) != 1:
                raise ReconstructionError(
                    f"level {k} of bus {w} does not contain a unique depth-{k} node"
                )
            chain.append(anchors[0])
        for k in range(1, len(chain)):
            child, par = chain[k], chain[k - 1]
            r = rep[k] - rep[k - 1]
            if r <= 0:
                raise ReconstructionError("level values are not strictly increasing")
            if parent[child] is None:
                parent[child], resistance[child] = par, r
            elif parent[child] != par:
                raise ReconstructionError(
                    f"bus {child} is assigned conflicting feeding lines"
                )

    if any(p is None for p in parent[1:]):
        missing = [i for i in range(1, n) if parent[i] is None]
        raise ReconstructionError(f"columns do not determine the feeding line of buses {missing}")
    parents = np.array([-1] + [int(p) for p in parent[1:]], dtype=np.int64)
    tree = TreeGraph(parents)

    rebuilt = path_resistance_matrix(tree, [0] + resistance[1:])
    scale = max(max(abs(v) for v in col) for col in cols) or 1.0
    for col, w in zip(cols, leaves):
        for i in range(n - 1):
            if abs(rebuilt[i][w - 1] - col[i]) > max(rel_tol, 1e-12) * scale:
                raise ReconstructionError(
                    "no radial grid reproduces the provided probing columns"
                )
    resist = np.array([np.nan] + [float(r) for r in resistance[1:]])
    return RecoveredTree(tree=tree, resistances=resist)


def check_distinct_resistances(f: Feeder, rel_tol: float = 1e-9) -> bool:
    """Whether every pair of candidate lines has clearly different resistance."""
    r = np.sort(f.resistances)
    gaps = np.diff(r)
    return bool((gaps > rel_tol * np.maximum(r[1:], 1e-300)).all())


def _probe_signature(tree: TreeGraph, m: int):
    idx = build_index(tree)
    return idx.ancestors[m], tuple(level_sets(idx, m))


def check_verifiable(f: Feeder, configs, probed) -> np.ndarray:
    """Pairwise confusability of candidate line-status configurations.

    Entry (i, j) is True when probing the given buses cannot tell config i
    from config j: every probed bus keeps the same root path and the same
    level sets under both. The probing placement verifies the grid exactly
    when no off-diagonal entry is True. Requires pairwise-distinct line
    resistances and a candidate set without parallel lines, the regime in
    which zero data-fit residual is equivalent to this signature test.
    """
    if not check_distinct_resistances(f):
        raise ValueError("verifiability analysis requires distinct line resistances")
    pairs = {(min(ln.from_bus, ln.to_bus), max(ln.from_bus, ln.to_bus)) for ln in f.lines}
    if len(pairs) != f.n_lines:
        raise ValueError("verifiability analysis requires a candidate set without parallel lines")
    probed = [int(b) for b in probed]
    if not probed:
        raise ValueError("at least one probing bus is required")
    signatures = []
    for b in configs:
        tree = f.with_status(np.asarray(b)).graph
        signatures.append(tuple(_probe_signature(tree, m) for m in probed))
    k = len(signatures)
    out = np.zeros((k, k), dtype=bool)
    for i in range(k):
        for j in range(i, k):
            out[i, j] = out[j, i] = signatures[i] == signatures[j]
    return out
