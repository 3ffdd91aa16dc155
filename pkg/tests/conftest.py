"""Shared builders for randomized tests."""

import numpy as np
import pytest

from gridprobe import Feeder, Line, TreeGraph


def random_tree(rng, n_nodes: int) -> TreeGraph:
    """Uniform-ish random rooted tree: each node attaches to a random earlier node."""
    parents = [-1] + [int(rng.integers(0, m)) for m in range(1, n_nodes)]
    return TreeGraph(parents)


def random_resistances(rng, count: int, lo=0.2, hi=2.0) -> np.ndarray:
    """Strictly distinct positive values with a guaranteed relative gap."""
    base = np.linspace(lo, hi, count) + rng.uniform(0.0, (hi - lo) / (4 * count), count)
    return rng.permutation(base)


def feeder_from_tree(tree: TreeGraph, r, x=None, p_load=None, q_load=None) -> Feeder:
    r = np.asarray(r, dtype=float)
    x = r * 0.6 if x is None else np.asarray(x, dtype=float)
    lines = [
        Line(f"L{m}", int(tree.parents[m]), m, float(r[m - 1]), float(x[m - 1]), False)
        for m in range(1, tree.node_count)
    ]
    return Feeder(lines, p_load=p_load, q_load=q_load, node_count=tree.node_count)


def random_feeder(rng, n_nodes: int, load_scale=0.05) -> Feeder:
    tree = random_tree(rng, n_nodes)
    r = random_resistances(rng, n_nodes - 1, 0.05, 0.5)
    p = np.zeros(n_nodes)
    p[1:] = rng.uniform(0.2, 1.0, n_nodes - 1) * load_scale
    q = p * 0.3287
    return feeder_from_tree(tree, r, p_load=p, q_load=q)


def random_candidate_feeder(rng, n_nodes: int, n_extra: int) -> Feeder:
    """A spanning tree plus extra candidate lines; simple graph, distinct r."""
    tree = random_tree(rng, n_nodes)
    pairs = set(tree.edge_pairs())
    extras = []
    attempts = 0
    while len(extras) < n_extra and attempts < 200:
        attempts += 1
        u, v = sorted(rng.choice(n_nodes, size=2, replace=False).tolist())
        if (u, v) in pairs:
            continue
        pairs.add((u, v))
        extras.append((u, v))
    n_lines = (n_nodes - 1) + len(extras)
    r = random_resistances(rng, n_lines, 0.05, 0.5)
    lines = [
        Line(f"L{m}", int(tree.parents[m]), m, float(r[m - 1]), float(r[m - 1]) * 0.6, False)
        for m in range(1, n_nodes)
    ]
    for k, (u, v) in enumerate(extras):
        idx = n_nodes - 1 + k
        lines.append(Line(f"X{k}", u, v, float(r[idx]), float(r[idx]) * 0.6, True))
    status = np.zeros(n_lines, dtype=np.int8)
    status[: n_nodes - 1] = 1
    p = np.zeros(n_nodes)
    p[1:] = rng.uniform(0.01, 0.05, n_nodes - 1)
    return Feeder(lines, status=status, p_load=p, q_load=p * 0.3287)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
