"""Radial feeder model: incidence, sensitivity matrices, Laplacians, power flow.

All quantities are per-unit; the substation (node 0) is held at 1 pu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import FeederError, SolverError, StructureError
from .trees import LevelSetIndex, TreeGraph, build_index


class Line(NamedTuple):
    """A candidate distribution line."""

    id: str
    from_bus: int
    to_bus: int
    r: float
    x: float
    switchable: bool = False


class Feeder:
    """Bus/line inventory with candidate lines, a line-status vector and loads.

    ``status`` flags the energized subset of the candidate lines; it must
    encode a spanning tree of the ``node_count`` buses. Loads are positive
    when consuming. Instances are immutable after construction.
    """

    def __init__(self, lines: Sequence[Line], status=None, p_load=None, q_load=None,
                 node_count: int | None = None):
        lines = tuple(Line(*ln) for ln in lines)
        if not lines:
            raise FeederError("a feeder needs at least one line")
        seen_ids = set()
        max_bus = 0
        for ln in lines:
            if ln.id in seen_ids:
                raise FeederError(f"duplicate line id {ln.id!r}")
            seen_ids.add(ln.id)
            if ln.from_bus == ln.to_bus or min(ln.from_bus, ln.to_bus) < 0:
                raise FeederError(f"line {ln.id!r} has invalid endpoints")
            if ln.r <= 0 or ln.x <= 0:
                raise FeederError(f"line {ln.id!r} must have positive impedance")
            max_bus = max(max_bus, ln.from_bus, ln.to_bus)
        n = max_bus + 1 if node_count is None else node_count
        if status is None:
            status = np.ones(len(lines), dtype=np.int8)
        status = np.asarray(status, dtype=np.int8)
        if status.shape != (len(lines),) or not np.isin(status, (0, 1)).all():
            raise FeederError("status must be a 0/1 vector with one entry per line")
        if int(status.sum()) != n - 1:
            raise FeederError(
                f"{int(status.sum())} energized lines cannot span {n} buses"
            )
        energized = [(ln.from_bus, ln.to_bus) for ln, b in zip(lines, status) if b]
        try:
            graph = TreeGraph.from_edges(n, energized)
        except StructureError as exc:
            raise FeederError(f"energized lines do not form a spanning tree: {exc}") from exc

        def _vec(v, name):
            if v is None:
                return np.zeros(n)
            v = np.asarray(v, dtype=float)
            if v.shape != (n,):
                raise FeederError(f"{name} must have one entry per bus ({n})")
            return v

        self.lines = lines
        self.status = status
        self.status.setflags(write=False)
        self.node_count = n
        self.graph = graph
        self.index: LevelSetIndex = build_index(graph)
        self.p_load = _vec(p_load, "p_load")
        self.q_load = _vec(q_load, "q_load")
        self.p_load.setflags(write=False)
        self.q_load.setflags(write=False)
        # impedance of the line feeding each non-root node, for sweeps/path sums
        by_pair = {}
        for ln, b in zip(lines, status):
            if b:
                by_pair[(min(ln.from_bus, ln.to_bus), max(ln.from_bus, ln.to_bus))] = ln
        self._line_by_child = {}
        for m in range(1, n):
            p = int(graph.parents[m])
            self._line_by_child[m] = by_pair[(min(p, m), max(p, m))]

    @property
    def n_buses(self) -> int:
        return self.node_count

    @property
    def n_loads(self) -> int:
        return self.node_count - 1

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def resistances(self) -> np.ndarray:
        return np.array([ln.r for ln in self.lines])

    @property
    def reactances(self) -> np.ndarray:
        return np.array([ln.x for ln in self.lines])

    def with_status(self, status) -> "Feeder":
        """A copy of this feeder energizing a different line subset."""
        return Feeder(self.lines, status=status, p_load=self.p_load,
                      q_load=self.q_load, node_count=self.node_count)

    def line_feeding(self, child: int) -> Line:
        return self._line_by_child[child]

    def __repr__(self):
        return (f"Feeder(buses={self.node_count}, lines={self.n_lines}, "
                f"energized={int(self.status.sum())})")


@dataclass(frozen=True)
class SensitivityModel:
    """Voltage sensitivities of the energized tree.

    ``R`` and ``X`` map injection changes to voltage-magnitude changes;
    ``theta`` is the reduced resistive Laplacian (the inverse of ``R``).
    ``A_reduced``/``a0`` cover the whole candidate line set.
    """

    R: np.ndarray
    X: np.ndarray
    theta: np.ndarray
    A_reduced: np.ndarray
    a0: np.ndarray


def incidence(f: Feeder) -> tuple[np.ndarray, np.ndarray]:
    """Branch-bus incidence split into the substation column and the rest.

    Rows carry +1 at the from-bus and -1 at the to-bus, so each row of the
    full matrix sums to zero and ``a0 == -A_reduced @ 1`` exactly.
    """
    full = np.zeros((f.n_lines, f.node_count))
    for i, ln in enumerate(f.lines):
        full[i, ln.from_bus] = 1.0
        full[i, ln.to_bus] = -1.0
    return full[:, 1:], full[:, 0]


def reduced_laplacian(f: Feeder, status=None) -> np.ndarray:
    """Weighted Laplacian with the substation row/column removed.

    ``status`` may be fractional (used by the relaxed verification solver);
    the result is positive definite exactly when it encodes a spanning tree.
    """
    b = f.status if status is None else np.asarray(status, dtype=float)
    if b.shape != (f.n_lines,):
        raise ValueError("status length must match the candidate line count")
    A, _ = incidence(f)
    w = b / f.resistances
    return A.T @ (w[:, None] * A)


def resistance_matrix(f: Feeder) -> np.ndarray:
    """Voltage-drop sensitivity matrix, computed as the Laplacian inverse."""
    theta = reduced_laplacian(f)
    try:
        c, low = sla.cho_factor(theta)
    except np.linalg.LinAlgError as exc:
        raise FeederError("reduced Laplacian is singular; status is not a tree") from exc
    return sla.cho_solve((c, low), np.eye(f.n_loads))


def path_resistance_matrix(tree: TreeGraph, r_by_child) -> list[list]:
    """Resistance matrix from shared root-path sums, in exact arithmetic.

    ``r_by_child[m]`` is the resistance of the line feeding node ``m``
    (index 0 unused). Works with floats or ``fractions.Fraction`` and serves
    as the independent oracle for :func:`resistance_matrix`. Entry (m, n)
    accumulates line resistances over the common part of both root paths.
    """
    idx = build_index(tree)
    n = tree.node_count
    cum = [None] * n
    cum[0] = 0
    for m in tree.preorder:
        if m:
            cum[m] = cum[int(tree.parents[m])] + r_by_child[m]
    out = [[0] * (n - 1) for _ in range(n - 1)]
    for m in range(1, n):
        am = idx.ancestors[m]
        for s in range(m, n):
            a_s = idx.ancestors[s]
            k = 0
            for u, v in zip(am, a_s):
                if u != v:
                    break
                k += 1
            lca = am[k - 1]
            out[m - 1][s - 1] = out[s - 1][m - 1] = cum[lca]
    return out


def resistance_matrix_pathsum(f: Feeder) -> np.ndarray:
    """Float wrapper around :func:`path_resistance_matrix` for a feeder."""
    r_by_child = [0.0] * f.node_count
    for m in range(1, f.node_count):
        r_by_child[m] = f.line_feeding(m).r
    return np.array(path_resistance_matrix(f.graph, r_by_child), dtype=float)


def build_sensitivity(f: Feeder) -> SensitivityModel:
    A, a0 = incidence(f)
    theta = reduced_laplacian(f)
    try:
        c, low = sla.cho_factor(theta)
        R = sla.cho_solve((c, low), np.eye(f.n_loads))
        w = f.status / f.reactances
        X = np.linalg.inv(A.T @ (w[:, None] * A))
    except np.linalg.LinAlgError as exc:
        raise FeederError("feeder status does not yield invertible sensitivities") from exc
    return SensitivityModel(R=R, X=X, theta=theta, A_reduced=A, a0=a0)


def full_laplacian(theta) -> np.ndarray:
    """Rebuild the (N+1)-node Laplacian from its reduced form; rows sum to 0."""
    theta = np.asarray(theta, dtype=float)
    col = theta @ np.ones(theta.shape[0])
    top = float(col.sum())
    return np.block([[np.array([[top]]), -col[None, :]], [-col[:, None], theta]])


def lindistflow_voltage(f: Feeder, p, q, sens: SensitivityModel | None = None) -> np.ndarray:
    """Linearized voltage magnitudes ``R p + X q + 1`` for injections at buses 1..N."""
    sens = sens or build_sensitivity(f)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return sens.R @ p + sens.X @ q + 1.0


def ac_voltage(f: Feeder, p, q, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Exact AC voltage magnitudes via a backward/forward sweep on the tree.

    ``p``/``q`` are net complex injections at buses 1..N (consumption
    negative). Starts flat and iterates until the largest complex voltage
    update drops below ``tol``.
    """
    n = f.node_count
    s_inj = np.zeros(n, dtype=complex)
    s_inj[1:] = np.asarray(p, dtype=float) + 1j * np.asarray(q, dtype=float)
    z = np.zeros(n, dtype=complex)
    for m in range(1, n):
        ln = f.line_feeding(m)
        z[m] = ln.r + 1j * ln.x
    order = f.graph.preorder
    v = np.ones(n, dtype=complex)
    for _ in range(max_iter):
        flow = np.zeros(n, dtype=complex)  # branch current from parent into m's subtree
        for m in reversed(order):
            if m == 0:
                continue
            flow[m] += (-s_inj[m] / v[m]).conjugate()
            flow[int(f.graph.parents[m])] += flow[m]
        v_new = np.ones(n, dtype=complex)
        for m in order:
            if m == 0:
                continue
            v_new[m] = v_new[int(f.graph.parents[m])] - z[m] * flow[m]
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        if delta < tol:
            return np.abs(v[1:])
    raise SolverError(f"AC sweep did not converge within {max_iter} iterations")


@dataclass(frozen=True)
class RecoveredTree:
    """A recovered topology with the resistance of the line feeding each node."""

    tree: TreeGraph
    resistances: np.ndarray  # indexed by child node; entry 0 is NaN

    def edges(self) -> list[tuple[int, int, float]]:
        return [
            (int(self.tree.parents[m]), m, float(self.resistances[m]))
            for m in range(1, self.tree.node_count)
        ]

    def edge_pairs(self) -> set[tuple[int, int]]:
        return self.tree.edge_pairs()

    def reduced_laplacian(self) -> np.ndarray:
        n = self.tree.node_count
        theta = np.zeros((n - 1, n - 1))
        for u, m, r in self.edges():
            w = 1.0 / r
            theta[m - 1, m - 1] += w
            if u >= 1:
                theta[u - 1, u - 1] += w
                theta[u - 1, m - 1] -= w
                theta[m - 1, u - 1] -= w
        return theta


def power_factor_tangent(pf: float) -> float:
    """tan(arccos(pf)) used to tie reactive consumption to active load."""
    return math.tan(math.acos(pf))


def two_bus_ac_solution(r: float, x: float, p: float, q: float) -> float:
    """Closed-form |V| of a single line serving one load (consumption positive).

    Solves the quadratic in u = |V|^2:
    ``u^2 + u (2(rp + xq) - 1) + (r^2 + x^2)(p^2 + q^2) = 0``
    and returns the high-voltage root.
    """
    b = 2.0 * (r * p + x * q) - 1.0
    c = (r * r + x * x) * (p * p + q * q)
    disc = b * b - 4.0 * c
    if disc < 0:
        raise SolverError("single-line power flow has no real solution")
    u = (-b + math.sqrt(disc)) / 2.0
    return math.sqrt(u)
