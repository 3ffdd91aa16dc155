"""Line-status verification: exhaustive detection, PGD relaxation, rounding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import SolverError
from .feeder import Feeder, incidence
from .probing import ProbingDataset
from .trees import UnionFind


@dataclass
class VerifyProblem:
    """A status-detection instance: candidate feeder, probing data, knobs.

    ``mu`` weighs the log-det barrier of the relaxation and ``nu`` is the
    base PGD step. The candidate set must contain at least one spanning tree
    (guaranteed by the feeder invariants).
    """

    feeder: Feeder
    data: ProbingDataset
    mu: float = 2e-8
    nu: float = 1e-10

    def __post_init__(self):
        if self.data.n_loads != self.feeder.n_loads:
            raise ValueError("dataset and feeder disagree on the bus count")
        if self.feeder.n_lines < self.feeder.n_loads:
            raise ValueError("candidate line set cannot span the feeder")
        A, _ = incidence(self.feeder)
        ends = np.array([(ln.from_bus, ln.to_bus) for ln in self.feeder.lines],
                        dtype=np.int64)
        self._A = A
        self._ends = ends
        self._r = self.feeder.resistances
        self._target = self.data.target()
        self._identity_w = bool(np.allclose(self.data.W, np.eye(self.data.n_loads)))

    def laplacian(self, b) -> np.ndarray:
        w = np.asarray(b, dtype=float) / self._r
        return self._A.T @ (w[:, None] * self._A)


def status_objective(prob: VerifyProblem, b, barrier: bool = False) -> float:
    """Weighted data-fit of a (possibly fractional) status vector.

    With ``barrier=True`` adds the relaxation's log-det term and returns
    +inf when the implied Laplacian leaves the positive-definite cone.
    """
    theta = prob.laplacian(b)
    resid = theta @ prob.data.v_tilde - prob._target
    wres = resid if prob._identity_w else prob.data.W @ resid
    fit = float((resid * wres).sum())
    if not barrier:
        return fit
    try:
        c, _ = sla.cho_factor(theta, check_finite=False)
    except np.linalg.LinAlgError:
        return math.inf
    diag = np.diag(c)
    if (diag <= 0).any():
        return math.inf
    logdet = 2.0 * float(np.log(diag).sum())
    return 0.5 * fit - prob.mu * logdet


def status_gradient(prob: VerifyProblem, b) -> np.ndarray:
    """Gradient of the relaxed objective in the line-status coordinates.

    Uses the two-nonzero structure of each incidence row, so the per-line
    quadratic forms reduce to four matrix entries.
    """
    f = prob.feeder
    theta = prob.laplacian(b)
    resid = theta @ prob.data.v_tilde - prob._target
    try:
        c, low = sla.cho_factor(theta, check_finite=False)
        theta_inv = sla.cho_solve((c, low), np.eye(f.n_loads), check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError("status iterate left the positive-definite cone") from exc
    wres = resid if prob._identity_w else prob.data.W @ resid
    M = prob.data.v_tilde @ wres.T - prob.mu * theta_inv
    padded = np.zeros((f.node_count, f.node_count))
    padded[1:, 1:] = M
    u, v = prob._ends[:, 0], prob._ends[:, 1]
    return (padded[u, u] + padded[v, v] - padded[u, v] - padded[v, u]) / prob._r


def project_capped_simplex(y, n_ones: int, tol: float = 1e-12) -> np.ndarray:
    """Euclidean projection onto ``{b in [0,1]^L : sum(b) = n_ones}``.

    Bisects on the dual shift: entries are ``clip(y - shift, 0, 1)`` and the
    shift is driven until the sum matches ``n_ones`` within ``tol``.
    """
    y = np.asarray(y, dtype=float)
    L = y.size
    if not 0 <= n_ones <= L:
        raise ValueError("target count outside [0, L]")
    if n_ones == 0:
        return np.zeros(L)
    if n_ones == L:
        return np.ones(L)
    lo = float(y.min()) - 1.0
    hi = float(y.max())
    for _ in range(200):
        mid = (lo + hi) / 2.0
        s = float(np.clip(y - mid, 0.0, 1.0).sum())
        if abs(s - n_ones) <= tol:
            return np.clip(y - mid, 0.0, 1.0)
        if s > n_ones:
            lo = mid
        else:
            hi = mid
    return np.clip(y - (lo + hi) / 2.0, 0.0, 1.0)


@dataclass
class ConfigEntry:
    config_id: int
    status: tuple[int, ...]
    objective: float


@dataclass
class ExhaustiveResult:
    """Global search outcome: best config, full table, and ties if any."""

    status: np.ndarray
    objective: float
    table: list[ConfigEntry] = field(default_factory=list)
    ties: list[int] = field(default_factory=list)


def enumerate_tree_statuses(f: Feeder, guard: int = 10 ** 6) -> list[tuple[int, ...]]:
    """All 0/1 status vectors whose energized lines form a spanning tree.

    Candidates are N-subsets of the line set screened with union-find; the
    search is refused when the binomial budget exceeds ``guard``.
    """
    from itertools import combinations

    L, n = f.n_lines, f.node_count
    if math.comb(L, n - 1) > guard:
        raise SolverError(
            f"enumerating C({L},{n - 1}) candidate configurations exceeds the "
            f"budget of {guard}; use the projected-gradient solver instead"
        )
    ends = [(ln.from_bus, ln.to_bus) for ln in f.lines]
    out = []
    for combo in combinations(range(L), n - 1):
        uf = UnionFind(n)
        ok = True
        for k in combo:
            if not uf.union(*ends[k]):
                ok = False
                break
        if ok:
            b = [0] * L
            for k in combo:
                b[k] = 1
            out.append(tuple(b))
    return out


def exhaustive_verify(prob: VerifyProblem, configs=None, guard: int = 10 ** 6,
                      tie_rel_tol: float = 1e-9) -> ExhaustiveResult:
    """Evaluate the data-fit of every feasible configuration and rank them.

    ``configs`` may restrict the search to an operator-supplied list of
    status vectors; otherwise all spanning-tree configurations are tried.
    Ties (objectives within ``tie_rel_tol`` of the best) are reported rather
    than silently broken; the returned status is the lowest-id minimizer.
    """
    if configs is None:
        configs = enumerate_tree_statuses(prob.feeder, guard=guard)
    configs = [tuple(int(v) for v in b) for b in configs]
    if not configs:
        raise SolverError("no feasible spanning-tree configuration exists")
    table = [ConfigEntry(i, b, status_objective(prob, b)) for i, b in enumerate(configs)]
    best = min(table, key=lambda e: (e.objective, e.config_id))
    tie_tol = tie_rel_tol * max(1.0, abs(best.objective))
    ties = [e.config_id for e in table if e.objective - best.objective <= tie_tol]
    return ExhaustiveResult(
        status=np.array(best.status, dtype=np.int8),
        objective=best.objective,
        table=table,
        ties=ties if len(ties) > 1 else [],
    )


@dataclass
class PgdResult:
    status: np.ndarray
    objective: float
    iterations: int
    converged: bool
    step: float
    rejected_steps: int


def pgd_verify(prob: VerifyProblem, b0=None, max_iter: int = 1000,
               step: float | None = None, grow: bool = True,
               tol: float = 1e-6) -> PgdResult:
    """Projected gradient descent on the relaxed status problem.

    Every iterate stays in the capped simplex. A trial step that increases
    the objective (or breaches the barrier) is rejected and the step halved;
    accepted steps may grow geometrically so the fixed default survives
    instances on very different scales. The objective is therefore
    non-increasing along the accepted trajectory. Convergence is declared
    when the gradient-mapping norm ``|b - P(b - nu g)| / nu`` falls below
    ``tol`` relative to the initial gradient magnitude.
    """
    f = prob.feeder
    n_ones = f.n_loads
    if b0 is None:
        b = np.full(f.n_lines, n_ones / f.n_lines)
    else:
        b = np.asarray(b0, dtype=float).copy()
        if b.shape != (f.n_lines,):
            raise ValueError("b0 length must match the candidate line count")
    cur = status_objective(prob, b, barrier=True)
    if not np.isfinite(cur):
        raise SolverError("starting point is infeasible for the barrier")
    nu = prob.nu if step is None else float(step)
    gtol = None
    rejected = 0
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        g = status_gradient(prob, b)
        if gtol is None:
            gtol = tol * (1.0 + float(np.abs(g).max()))
        trial = project_capped_simplex(b - nu * g, n_ones)
        if float(np.abs(trial - b).max()) <= gtol * nu:
            converged = True
            break
        val = status_objective(prob, trial, barrier=True)
        if val <= cur + 1e-15 * max(1.0, abs(cur)):
            b, cur = trial, val
            if grow:
                nu *= 2.0 if rejected == 0 else 1.5
        else:
            rejected += 1
            nu /= 2.0
            if nu < 1e-300:
                raise SolverError("PGD step size underflowed; persistent rejection")
    return PgdResult(status=b, objective=cur, iterations=it, converged=converged,
                     step=nu, rejected_steps=rejected)


def round_status(b_relaxed, feeder: Feeder, strategy: str = "top_n") -> tuple[np.ndarray, bool]:
    """Snap a fractional status vector to exactly N energized lines.

    ``top_n`` keeps the N largest entries (deterministic on ties) and reports
    whether they happen to form a spanning tree; ``mst`` greedily builds the
    maximum-total-weight spanning tree over the candidate lines, so its
    result is always radial.
    """
    b = np.asarray(b_relaxed, dtype=float)
    L, n = feeder.n_lines, feeder.node_count
    if b.shape != (L,):
        raise ValueError("status length must match the candidate line count")
    out = np.zeros(L, dtype=np.int8)
    if strategy == "top_n":
        order = sorted(range(L), key=lambda k: (-b[k], k))
        chosen = order[: n - 1]
        uf = UnionFind(n)
        is_tree = all(uf.union(feeder.lines[k].from_bus, feeder.lines[k].to_bus)
                      for k in chosen)
        out[chosen] = 1
        return out, is_tree
    if strategy == "mst":
        order = sorted(range(L), key=lambda k: (-b[k], k))
        uf = UnionFind(n)
        count = 0
        for k in order:
            if uf.union(feeder.lines[k].from_bus, feeder.lines[k].to_bus):
                out[k] = 1
                count += 1
                if count == n - 1:
                    break
        if count != n - 1:
            raise SolverError("candidate lines do not contain a spanning tree")
        return out, True
    raise ValueError(f"unknown rounding strategy {strategy!r}")
