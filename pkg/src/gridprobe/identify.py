"""Topology identification: admissible-set machinery, ADMM solver, MLE, rounding.

The estimator fits a reduced Laplacian to probing data by minimizing

    0.5 * ||Theta V - S Delta||_W^2 + lam * trace(Theta Pi) - mu * logdet(Theta)

over symmetric matrices with non-positive off-diagonals and non-negative row
sums (equalities where the prior mask forbids a line). ``Pi = I + 11^T`` makes
the trace term equal the off-diagonal l1 norm of the full Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import lsq_linear

from .errors import SolverError
from .feeder import RecoveredTree, full_laplacian
from .probing import ProbingDataset
from .trees import minimum_spanning_tree


class PriorMask:
    """Symmetric 0/1 matrix over all buses; zero marks a line known to be open.

    Entry (0, n) constrains the substation row sums; entries (m, n) with
    m, n >= 1 constrain off-diagonals of the reduced Laplacian. The diagonal
    is ignored.
    """

    def __init__(self, gamma):
        gamma = np.asarray(gamma)
        n = gamma.shape[0]
        if gamma.shape != (n, n) or not np.isin(gamma, (0, 1)).all():
            raise ValueError("prior mask must be a square 0/1 matrix")
        if not np.array_equal(gamma, gamma.T):
            raise ValueError("prior mask must be symmetric")
        self.gamma = gamma.astype(np.int8)
        self.gamma.setflags(write=False)

    @classmethod
    def unknown(cls, n_buses: int) -> "PriorMask":
        """No prior information: every line is a candidate."""
        return cls(np.ones((n_buses, n_buses), dtype=np.int8))

    @property
    def n_buses(self) -> int:
        return self.gamma.shape[0]

    def allowed_offdiag(self) -> np.ndarray:
        """Boolean N x N matrix over buses 1..N; False forces a zero entry."""
        return self.gamma[1:, 1:] != 0

    def free_rowsum(self) -> np.ndarray:
        """Boolean length-N vector; False pins the row sum of that bus to zero."""
        return self.gamma[0, 1:] != 0


def is_admissible_laplacian(theta, mask: PriorMask | None = None,
                            tol: float = 1e-9) -> tuple[bool, list[str]]:
    """Check membership in the admissible reduced-Laplacian set.

    Returns the verdict together with a human-readable violation report.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    mask = mask or PriorMask.unknown(n + 1)
    scale = max(1.0, float(np.abs(theta).max()))
    violations = []
    if np.abs(theta - theta.T).max() > tol * scale:
        violations.append("matrix is not symmetric")
    allowed = mask.allowed_offdiag()
    off = ~np.eye(n, dtype=bool)
    bad_pos = off & allowed & (theta > tol * scale)
    for i, j in zip(*np.nonzero(bad_pos)):
        violations.append(f"positive off-diagonal at buses ({i + 1}, {j + 1})")
    bad_masked = off & ~allowed & (np.abs(theta) > tol * scale)
    for i, j in zip(*np.nonzero(bad_masked)):
        violations.append(f"masked line ({i + 1}, {j + 1}) has a nonzero entry")
    rowsum = theta.sum(axis=1)
    free = mask.free_rowsum()
    for i in np.nonzero(free & (rowsum < -tol * scale))[0]:
        violations.append(f"negative row sum at bus {i + 1}")
    for i in np.nonzero(~free & (np.abs(rowsum) > tol * scale))[0]:
        violations.append(f"bus {i + 1} is masked off the substation but has nonzero row sum")
    return not violations, violations


class SylvesterOperator:
    """Solves ``W X G + 3 rho X = C`` by diagonalizing both symmetric factors.

    ``W`` is positive definite and ``G`` positive semidefinite, so every
    denominator ``w_i g_j + 3 rho`` is strictly positive and the solution is
    unique. Both eigendecompositions are done once; each solve then costs
    four dense multiplications.
    """

    def __init__(self, Wmat, Gram, rho: float):
        Wmat = np.asarray(Wmat, dtype=float)
        Gram = np.asarray(Gram, dtype=float)
        w_eval, w_evec = np.linalg.eigh(Wmat)
        if w_eval.min() <= 0:
            raise ValueError("weighting matrix must be positive definite")
        g_eval, g_evec = np.linalg.eigh((Gram + Gram.T) / 2.0)
        self._wU = w_evec
        self._gU = g_evec
        self._identity_w = bool(np.allclose(Wmat, np.eye(Wmat.shape[0])))
        self._w_eval = w_eval
        self._g_eval = np.clip(g_eval, 0.0, None)
        self.set_rho(rho)

    def set_rho(self, rho: float) -> None:
        self._denom = self._w_eval[:, None] * self._g_eval[None, :] + 3.0 * rho

    def solve(self, C) -> np.ndarray:
        if self._identity_w:
            core = C @ self._gU
        else:
            core = self._wU.T @ C @ self._gU
        core = core / self._denom
        if self._identity_w:
            return core @ self._gU.T
        return self._wU @ core @ self._gU.T


def sylvester_solve(Wmat, Gram, rho: float, C) -> np.ndarray:
    """One-shot wrapper around :class:`SylvesterOperator`."""
    return SylvesterOperator(Wmat, Gram, rho).solve(np.asarray(C, dtype=float))


def project_offdiag_nonpositive(Y, mask: PriorMask | None = None) -> np.ndarray:
    """Euclidean projection clipping allowed off-diagonals to <= 0 and zeroing
    masked ones; the diagonal passes through untouched."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    mask = mask or PriorMask.unknown(n + 1)
    out = np.where(mask.allowed_offdiag(), np.minimum(Y, 0.0), 0.0)
    np.fill_diagonal(out, np.diag(Y))
    return out


def project_rowsums_nonnegative(Y, mask: PriorMask | None = None) -> np.ndarray:
    """Row-wise Euclidean projection onto row-sum >= 0 (or == 0 where the
    substation connection is masked off): shift each offending row uniformly."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    mask = mask or PriorMask.unknown(n + 1)
    rowsum = Y.sum(axis=1)
    shift = np.where(mask.free_rowsum(), np.minimum(rowsum, 0.0), rowsum)
    return Y - shift[:, None] / n


def prox_logdet(S, weight: float) -> np.ndarray:
    """Minimizer of ``0.5 ||X - S||_F^2 - weight * logdet(X)`` over symmetric X.

    Computed by shifting each eigenvalue s to ``(s + sqrt(s^2 + 4 weight))/2``.
    """
    evals, evecs = np.linalg.eigh(S)
    shifted = 0.5 * (evals + np.sqrt(evals ** 2 + 4.0 * weight))
    return (evecs * shifted) @ evecs.T


def smooth_objective(theta, data: ProbingDataset, lam: float) -> float:
    """Data-fit plus sparsity surrogate (the part handled by the x-update)."""
    theta = np.asarray(theta, dtype=float)
    resid = theta @ data.v_tilde - data.target()
    n = theta.shape[0]
    pi = np.eye(n) + np.ones((n, n))
    return 0.5 * float((resid * (data.W @ resid)).sum()) + lam * float(np.trace(theta @ pi))


def smooth_gradient(theta, data: ProbingDataset, lam: float) -> np.ndarray:
    """Matrix gradient of :func:`smooth_objective` (no symmetry assumed)."""
    theta = np.asarray(theta, dtype=float)
    resid = theta @ data.v_tilde - data.target()
    n = theta.shape[0]
    pi = np.eye(n) + np.ones((n, n))
    return data.W @ resid @ data.v_tilde.T + lam * pi


def full_objective(theta, data: ProbingDataset, lam: float, mu: float) -> float:
    theta = np.asarray(theta, dtype=float)
    sign, logdet = np.linalg.slogdet((theta + theta.T) / 2.0)
    if sign <= 0:
        return np.inf
    return smooth_objective(theta, data, lam) - mu * logdet


class AdmmState:
    """Live state of the four-way consensus ADMM for the relaxed identification.

    One copy absorbs the smooth cost, one the log-det barrier (kept PSD), one
    the off-diagonal sign constraints and one the row-sum constraints; scaled
    multipliers glue them together. ``step`` performs one full sweep.

    ``adaptive_rho`` rebalances the penalty when primal and dual residuals
    drift apart by more than a factor of ten; it changes the trajectory but
    not the fixed point and defaults to the plain iteration.
    """

    def __init__(self, data: ProbingDataset, mask: PriorMask | None = None,
                 lam: float = 5e-3, mu: float = 1.0, rho: float = 1.0,
                 adaptive_rho: bool = False):
        n = data.n_loads
        self.data = data
        self.mask = mask or PriorMask.unknown(n + 1)
        if self.mask.n_buses != n + 1:
            raise ValueError("prior mask size does not match the dataset")
        self.lam = float(lam)
        self.mu = float(mu)
        self.rho = float(rho)
        if min(self.mu, self.rho) <= 0 or self.lam < 0:
            raise ValueError("rho and mu must be positive, lam non-negative")
        self.pi = np.eye(n) + np.ones((n, n))
        gram = data.v_tilde @ data.v_tilde.T
        if not np.isfinite(data.v_tilde).all() or np.abs(data.v_tilde).max() == 0:
            raise ValueError("voltage deviations are empty or not finite")
        self._solver = SylvesterOperator(data.W, gram, self.rho)
        self._bias = data.W @ data.target() @ data.v_tilde.T
        self._allowed_off = self.mask.allowed_offdiag()
        self._free_row = self.mask.free_rowsum()
        self.theta1 = np.eye(n)
        self.theta2 = np.eye(n)
        self.theta3 = np.eye(n)
        self.theta4 = np.eye(n)
        self.m2 = np.zeros((n, n))
        self.m3 = np.zeros((n, n))
        self.m4 = np.zeros((n, n))
        self.adaptive_rho = adaptive_rho
        self.iterations = 0
        self.primal_residual = np.inf
        self.dual_residual = np.inf

    def step(self) -> None:
        rho = self.rho
        rhs = self._bias - self.lam * self.pi - rho * (
            self.m2 + self.m3 + self.m4 - self.theta2 - self.theta3 - self.theta4
        )
        t1 = self._solver.solve(rhs)
        prev = (self.theta2, self.theta3, self.theta4)
        s = t1 + self.m2
        self.theta2 = prox_logdet((s + s.T) / 2.0, self.mu / rho)
        y3 = t1 + self.m3
        t3 = np.where(self._allowed_off, np.minimum(y3, 0.0), 0.0)
        np.fill_diagonal(t3, np.diag(y3))
        self.theta3 = t3
        y4 = t1 + self.m4
        rowsum = y4.sum(axis=1)
        shift = np.where(self._free_row, np.minimum(rowsum, 0.0), rowsum)
        self.theta4 = y4 - shift[:, None] / y4.shape[0]
        self.m2 += t1 - self.theta2
        self.m3 += t1 - self.theta3
        self.m4 += t1 - self.theta4
        self.theta1 = t1
        self.primal_residual = max(
            float(np.linalg.norm(t1 - self.theta2)),
            float(np.linalg.norm(t1 - self.theta3)),
            float(np.linalg.norm(t1 - self.theta4)),
        )
        self.dual_residual = rho * max(
            float(np.linalg.norm(new - old)) for new, old in
            zip((self.theta2, self.theta3, self.theta4), prev)
        )
        self.iterations += 1
        if self.adaptive_rho and self.iterations % 25 == 0:
            self._rebalance()

    def _rebalance(self) -> None:
        # residual balancing; multipliers are scaled duals so they rescale with rho
        if self.primal_residual > 10.0 * self.dual_residual:
            factor = 2.0
        elif self.dual_residual > 10.0 * self.primal_residual:
            factor = 0.5
        else:
            return
        self.rho *= factor
        self._solver.set_rho(self.rho)
        self.m2 /= factor
        self.m3 /= factor
        self.m4 /= factor


@dataclass
class IdentifyResult:
    theta: np.ndarray
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    history: np.ndarray | None = None


def admm_identify(data: ProbingDataset, mask: PriorMask | None = None,
                  lam: float = 5e-3, mu: float = 1.0, rho: float = 1.0,
                  max_iter: int = 50_000, tol_scale: float = 1e-7,
                  adaptive_rho: bool = False,
                  record_history: bool = False) -> IdentifyResult:
    """Solve the relaxed identification problem with consensus ADMM.

    Stops when both the largest consensus gap and the scaled dual residual
    drop below ``tol_scale * N`` (Frobenius norms), or at ``max_iter`` with
    ``converged=False``. Returns the smooth-cost copy, symmetrized.
    """
    state = AdmmState(data, mask, lam=lam, mu=mu, rho=rho, adaptive_rho=adaptive_rho)
    tol = tol_scale * data.n_loads
    history = [] if record_history else None
    for _ in range(max_iter):
        state.step()
        if record_history:
            history.append((state.primal_residual, state.dual_residual))
        if not np.isfinite(state.primal_residual):
            raise SolverError("ADMM diverged: residuals are not finite")
        if state.primal_residual < tol and state.dual_residual < tol:
            break
    theta = (state.theta1 + state.theta1.T) / 2.0
    return IdentifyResult(
        theta=theta,
        converged=state.primal_residual < tol and state.dual_residual < tol,
        iterations=state.iterations,
        primal_residual=state.primal_residual,
        dual_residual=state.dual_residual,
        history=np.array(history) if record_history else None,
    )


def kkt_residual(theta, data: ProbingDataset, mask: PriorMask | None = None,
                 lam: float = 5e-3, mu: float = 1.0) -> float:
    """Karush-Kuhn-Tucker residual of the relaxed identification problem.

    Recovers the best inequality multipliers by bounded least squares in the
    independent (upper-triangular) coordinates and reports the worst of
    stationarity, primal feasibility and complementary slackness, normalized
    by the gradient scale. Independent of the ADMM internals.
    """
    theta = np.asarray(theta, dtype=float)
    theta = (theta + theta.T) / 2.0
    n = theta.shape[0]
    mask = mask or PriorMask.unknown(n + 1)
    allowed = mask.allowed_offdiag()
    free_row = mask.free_rowsum()

    grad = smooth_gradient(theta, data, lam)
    grad = (grad + grad.T) / 2.0
    try:
        c, low = sla.cho_factor(theta)
        grad = grad - mu * sla.cho_solve((c, low), np.eye(n))
    except np.linalg.LinAlgError:
        return np.inf

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    coords = pairs + [(i, i) for i in range(n)]
    coord_pos = {c: k for k, c in enumerate(coords)}
    g_vec = np.array([2.0 * grad[i, j] if i != j else grad[i, i] for i, j in coords])
    scale = 1.0 + float(np.abs(g_vec).max())

    n_eta = len(pairs)
    n_cols = n_eta + n
    A = np.zeros((len(coords), n_cols))
    lb = np.empty(n_cols)
    ub = np.full(n_cols, np.inf)
    for k, (i, j) in enumerate(pairs):
        A[coord_pos[(i, j)], k] = 1.0
        lb[k] = 0.0 if allowed[i, j] else -np.inf
    for r in range(n):
        col = n_eta + r
        for i, j in pairs:
            if i == r or j == r:
                A[coord_pos[(i, j)], col] = -1.0
        A[coord_pos[(r, r)], col] = -1.0
        lb[col] = 0.0 if free_row[r] else -np.inf
    res = lsq_linear(A, -g_vec, bounds=(lb, ub), tol=1e-14)
    stationarity = float(np.abs(A @ res.x + g_vec).max()) / scale

    eta = res.x[:n_eta]
    zeta = res.x[n_eta:]
    comp = 0.0
    for k, (i, j) in enumerate(pairs):
        if allowed[i, j]:
            comp = max(comp, abs(eta[k] * theta[i, j]) / scale)
    rowsum = theta.sum(axis=1)
    for r in range(n):
        if free_row[r]:
            comp = max(comp, abs(zeta[r] * rowsum[r]) / scale)

    theta_scale = max(1.0, float(np.abs(theta).max()))
    off = ~np.eye(n, dtype=bool)
    feas = 0.0
    if (off & allowed).any():
        feas = max(feas, float(theta[off & allowed].max()))
    if (off & ~allowed).any():
        feas = max(feas, float(np.abs(theta[off & ~allowed]).max()))
    row_violation = np.where(free_row, -rowsum, np.abs(rowsum))
    feas = max(feas, float(row_violation.max()), 0.0) / theta_scale
    return max(stationarity, comp, feas)


@dataclass
class MleResult:
    theta: np.ndarray
    covariance: np.ndarray


def mle_identify(data: ProbingDataset, sigma=None) -> MleResult:
    """Unconstrained maximum-likelihood fit, valid only under full probing.

    ``theta = M V^T (V V^T)^{-1}`` with M the bus-scattered perturbations;
    the covariance of its vectorization is ``(V V^T)^{-1} kron Sigma``.
    ``sigma`` defaults to the inverse of the dataset weighting.
    """
    n = data.n_loads
    if sorted(data.buses) != list(range(1, n + 1)):
        raise ValueError("the maximum-likelihood fit requires probing every bus")
    gram = data.v_tilde @ data.v_tilde.T
    try:
        gram_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise SolverError("voltage Gram matrix is singular") from exc
    theta = data.target() @ data.v_tilde.T @ gram_inv
    if sigma is None:
        sigma = np.linalg.inv(data.W)
    return MleResult(theta=theta, covariance=np.kron(gram_inv, np.asarray(sigma, dtype=float)))


def round_to_tree(theta_hat, mask: PriorMask | None = None) -> RecoveredTree:
    """Snap an estimated reduced Laplacian to the nearest-coupling radial grid.

    Runs the deterministic MST on the full-Laplacian off-diagonals (most
    negative entry = strongest coupling = cheapest edge) and reads each kept
    line's resistance off the corresponding entry. Masked lines are excluded.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_sym = (theta_hat + theta_hat.T) / 2.0
    phi = full_laplacian(theta_sym)
    n = phi.shape[0]
    edge_mask = None
    if mask is not None:
        if mask.n_buses != n:
            raise ValueError("prior mask size does not match the estimate")
        edge_mask = mask.gamma != 0
    tree = minimum_spanning_tree(phi, edge_mask=edge_mask)
    resist = np.full(n, np.nan)
    for m in range(1, n):
        w = phi[int(tree.parents[m]), m]
        resist[m] = -1.0 / w if w < 0 else np.inf
    return RecoveredTree(tree=tree, resistances=resist)
