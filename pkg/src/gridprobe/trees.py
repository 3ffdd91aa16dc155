"""Rooted trees, ancestor/descendant/level-set queries, and spanning-tree utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructureError


class UnionFind:
    """Disjoint-set forest with union by size and path compression."""

    __slots__ = ("parent", "size")

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, u: int) -> int:
        root = u
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[u] != root:
            self.parent[u], u = root, self.parent[u]
        return root

    def union(self, u: int, v: int) -> bool:
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return False
        if self.size[ru] < self.size[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        self.size[ru] += self.size[rv]
        return True


class TreeGraph:
    """A tree on nodes ``0 .. node_count-1`` rooted at node 0 (the substation).

    Stored as a parent array: ``parents[0] == -1`` and ``parents[m]`` is the
    node feeding ``m``. Instances are immutable after construction and safe to
    share across threads.
    """

    __slots__ = ("parents", "node_count", "children", "preorder")

    def __init__(self, parents):
        parents = np.asarray(parents, dtype=np.int64)
        if parents.ndim != 1 or parents.size == 0:
            raise StructureError("parents must be a non-empty 1-D array")
        if parents[0] != -1:
            raise StructureError("node 0 is the root and must carry parent -1")
        n = int(parents.size)
        if n > 1 and ((parents[1:] < 0) | (parents[1:] >= n)).any():
            raise StructureError("parent index out of range")
        children = [[] for _ in range(n)]
        for m in range(1, n):
            children[parents[m]].append(m)
        # DFS from the root; reaching every node rules out cycles
        order = []
        stack = [0]
        while stack:
            u = stack.pop()
            order.append(u)
            stack.extend(reversed(children[u]))
        if len(order) != n:
            raise StructureError("parent array does not connect all nodes to the root")
        self.parents = parents
        self.parents.setflags(write=False)
        self.node_count = n
        self.children = tuple(tuple(c) for c in children)
        self.preorder = tuple(order)

    @classmethod
    def from_edges(cls, node_count: int, edges) -> "TreeGraph":
        """Build a rooted tree from an undirected edge list.

        Edges are oriented away from node 0; there must be exactly
        ``node_count - 1`` of them and they must span every node.
        """
        edges = list(edges)
        if len(edges) != node_count - 1:
            raise StructureError(
                f"{len(edges)} edges cannot form a spanning tree on {node_count} nodes"
            )
        adj = [[] for _ in range(node_count)]
        for u, v in edges:
            if not (0 <= u < node_count and 0 <= v < node_count) or u == v:
                raise StructureError(f"invalid edge ({u}, {v})")
            adj[u].append(v)
            adj[v].append(u)
        parents = np.full(node_count, -2, dtype=np.int64)
        parents[0] = -1
        queue = [0]
        seen = 1
        while queue:
            nxt = []
            for u in queue:
                for v in adj[u]:
                    if parents[v] == -2:
                        parents[v] = u
                        nxt.append(v)
                        seen += 1
            queue = nxt
        if seen != node_count:
            raise StructureError("edges do not span all nodes")
        return cls(parents)

    def edge_pairs(self) -> set[tuple[int, int]]:
        """Undirected edges as sorted node pairs."""
        return {
            (min(m, int(self.parents[m])), max(m, int(self.parents[m])))
            for m in range(1, self.node_count)
        }

    def __eq__(self, other):
        return isinstance(other, TreeGraph) and np.array_equal(self.parents, other.parents)

    def __hash__(self):
        return hash(self.parents.tobytes())

    def __repr__(self):
        return f"TreeGraph(parents={self.parents.tolist()})"


@dataclass(frozen=True)
class LevelSetIndex:
    """Per-node depth, ordered ancestor chains, descendant sets and leaves.

    ``ancestors[m]`` runs from the root to ``m`` inclusive, so its entry at
    position ``k`` is the unique depth-``k`` ancestor of ``m``. By convention
    every node is its own ancestor and descendant. Depth counts edges from
    the root, so the root has depth 0.
    """

    depth: np.ndarray
    ancestors: tuple[tuple[int, ...], ...]
    descendants: tuple[frozenset[int], ...]
    leaves: frozenset[int]

    @property
    def node_count(self) -> int:
        return len(self.ancestors)


def build_index(g: TreeGraph) -> LevelSetIndex:
    """Precompute depths, ancestor chains, descendant sets and the leaf set."""
    n = g.node_count
    depth = np.zeros(n, dtype=np.int64)
    ancestors: list[tuple[int, ...]] = [()] * n
    ancestors[0] = (0,)
    for m in g.preorder:
        if m == 0:
            continue
        p = int(g.parents[m])
        depth[m] = depth[p] + 1
        ancestors[m] = ancestors[p] + (m,)
    desc: list[set[int]] = [set() for _ in range(n)]
    for m in reversed(g.preorder):
        desc[m].add(m)
        for c in g.children[m]:
            desc[m] |= desc[c]
    depth.setflags(write=False)
    leaves = frozenset(m for m in range(n) if not g.children[m])
    return LevelSetIndex(
        depth=depth,
        ancestors=tuple(ancestors),
        descendants=tuple(frozenset(s) for s in desc),
        leaves=leaves,
    )


def level_set(idx: LevelSetIndex, m: int, k: int) -> frozenset[int]:
    """Nodes grouped under the depth-``k`` ancestor of ``m``, excluding the
    branch that continues towards ``m``; for ``k == depth[m]`` this is the
    descendant set of ``m`` itself."""
    d = int(idx.depth[m])
    if not 0 <= k <= d:
        raise ValueError(f"level index {k} out of range [0, {d}] for node {m}")
    if k == d:
        return idx.descendants[m]
    chain = idx.ancestors[m]
    return idx.descendants[chain[k]] - idx.descendants[chain[k + 1]]


def level_sets(idx: LevelSetIndex, m: int) -> list[frozenset[int]]:
    """All level sets of ``m`` ordered by depth; they partition the node set."""
    return [level_set(idx, m, k) for k in range(int(idx.depth[m]) + 1)]


def minimum_spanning_tree(weights, edge_mask=None) -> TreeGraph:
    """Kruskal MST over a dense symmetric weight matrix, rooted at node 0.

    Ties are broken by sorting candidate edges on
    ``(weight, min endpoint, max endpoint)`` so results are reproducible.
    ``edge_mask`` (boolean matrix) excludes edges where it is falsy.
    """
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    if weights.shape != (n, n):
        raise ValueError("weights must be a square matrix")
    if edge_mask is not None:
        edge_mask = np.asarray(edge_mask)
        if edge_mask.shape != (n, n):
            raise ValueError("edge_mask shape must match weights")
    cand = [
        (weights[i, j], i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if edge_mask is None or (edge_mask[i, j] and edge_mask[j, i])
    ]
    cand.sort()
    uf = UnionFind(n)
    chosen = []
    for w, i, j in cand:
        if uf.union(i, j):
            chosen.append((i, j))
            if len(chosen) == n - 1:
                break
    if len(chosen) != n - 1:
        raise StructureError("masked weighted graph is disconnected; no spanning tree")
    return TreeGraph.from_edges(n, chosen)
