"""Identification machinery: constraint sets, solvers, rounding."""

import itertools

import numpy as np
import pytest

from gridprobe import (Feeder, Line, NoiseConfig, PriorMask, ProbingDataset, admm_identify,
                       is_admissible_laplacian, kkt_residual, make_plan, mle_identify,
                       project_offdiag_nonpositive, project_rowsums_nonnegative,
                       reduced_laplacian, resistance_matrix, round_to_tree, simulate,
                       sylvester_solve)
from gridprobe.identify import AdmmState, full_objective, prox_logdet, smooth_gradient, smooth_objective
from conftest import feeder_from_tree, random_resistances, random_tree


def path3() -> Feeder:
    return Feeder([Line("L1", 0, 1, 1.0, 1.0), Line("L2", 1, 2, 2.0, 2.0)])


def leaf_dataset(f, rng=None, noise=None, repeats=1, design="diagonal") -> ProbingDataset:
    buses = sorted(f.index.leaves)
    plan = make_plan(buses, 1.0, design=design, repeats=repeats)
    return simulate(f, plan, noise or NoiseConfig(), "linear")


def full_dataset(f, noise=None, repeats=1) -> ProbingDataset:
    buses = list(range(1, f.node_count))
    plan = make_plan(buses, 1.0, design="diagonal", repeats=repeats)
    return simulate(f, plan, noise or NoiseConfig(), "linear")


class TestMembership:
    def test_true_laplacian_is_member(self):
        theta = reduced_laplacian(path3())
        ok, violations = is_admissible_laplacian(theta)
        assert ok and not violations

    def test_positive_offdiagonal_located(self):
        theta = np.array([[1.0, 0.2], [0.2, 1.0]])
        ok, violations = is_admissible_laplacian(theta)
        assert not ok
        assert any("positive off-diagonal" in v for v in violations)

    def test_mask_contradiction(self):
        theta = reduced_laplacian(path3())
        gamma = np.ones((3, 3), dtype=int)
        gamma[1, 2] = gamma[2, 1] = 0  # deny the energized line 1-2
        ok, violations = is_admissible_laplacian(theta, PriorMask(gamma))
        assert not ok
        assert any("masked line" in v for v in violations)

    def test_negative_rowsum_detected(self):
        theta = np.array([[1.0, -2.0], [-2.0, 1.0]])
        ok, violations = is_admissible_laplacian(theta)
        assert not ok
        assert any("row sum" in v for v in violations)


class TestSylvesterSolve:
    def test_identity_weight_reduces_to_linear_solve(self, rng):
        gram = np.diag(rng.uniform(0.5, 2.0, 5))
        C = rng.standard_normal((5, 5))
        rho = 0.7
        X = sylvester_solve(np.eye(5), gram, rho, C)
        assert np.allclose(X, C @ np.linalg.inv(gram + 3 * rho * np.eye(5)))

    def test_diagonal_elementwise_formula(self, rng):
        w = rng.uniform(0.5, 2.0, 4)
        g = rng.uniform(0.0, 3.0, 4)
        C = rng.standard_normal((4, 4))
        rho = 1.3
        X = sylvester_solve(np.diag(w), np.diag(g), rho, C)
        expected = C / (w[:, None] * g[None, :] + 3 * rho)
        assert np.allclose(X, expected)

    def test_random_vs_kronecker_solve(self, rng):
        n = 8
        A = rng.standard_normal((n, n))
        W = A @ A.T + n * np.eye(n)
        B = rng.standard_normal((n, n + 2))
        gram = B @ B.T
        C = rng.standard_normal((n, n))
        rho = 0.9
        X = sylvester_solve(W, gram, rho, C)
        residual = W @ X @ gram + 3 * rho * X - C
        assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(C)
        big = np.kron(gram.T, W) + 3 * rho * np.eye(n * n)
        x_vec = np.linalg.solve(big, C.reshape(-1, order="F"))
        assert np.allclose(X, x_vec.reshape((n, n), order="F"), atol=1e-8)


class TestProjections:
    def test_clip_positive_offdiagonals(self):
        Y = np.array([[5.0, 2.0], [2.0, 5.0]])
        assert np.array_equal(project_offdiag_nonpositive(Y), [[5.0, 0.0], [0.0, 5.0]])

    def test_masked_entry_forced_to_zero(self):
        Y = np.array([[1.0, -3.0], [-3.0, 1.0]])
        gamma = np.ones((3, 3), dtype=int)
        gamma[1, 2] = gamma[2, 1] = 0
        out = project_offdiag_nonpositive(Y, PriorMask(gamma))
        assert out[0, 1] == 0.0 and out[1, 0] == 0.0
        assert out[0, 0] == 1.0

    def test_offdiag_projection_against_qp(self, rng):
        import cvxpy as cp

        for _ in range(5):
            Y = rng.standard_normal((3, 3))
            out = project_offdiag_nonpositive(Y)
            X = cp.Variable((3, 3))
            cons = [X[i, j] <= 0 for i in range(3) for j in range(3) if i != j]
            cons += [X[i, i] == Y[i, i] for i in range(3)]
            cp.Problem(cp.Minimize(cp.sum_squares(X - Y)), cons).solve(solver=cp.CLARABEL)
            assert np.allclose(out, X.value, atol=1e-7)

    def test_rowsum_halfspace_example(self):
        out = project_rowsums_nonnegative(np.array([[1.0, -3.0], [0.0, 2.0]]))
        assert np.allclose(out[0], [2.0, -2.0])
        assert np.allclose(out[1], [0.0, 2.0])  # already feasible

    def test_rowsum_subspace_example(self):
        gamma = np.ones((3, 3), dtype=int)
        gamma[0, 1] = gamma[1, 0] = 0  # bus 1 known disconnected from substation
        out = project_rowsums_nonnegative(np.array([[2.0, 2.0], [1.0, -3.0]]),
                                          PriorMask(gamma))
        assert np.allclose(out[0], [0.0, 0.0])
        assert np.allclose(out[1], [2.0, -2.0])

    def test_prox_logdet_stationarity(self, rng):
        S = rng.standard_normal((5, 5))
        S = (S + S.T) / 2
        weight = 0.37
        X = prox_logdet(S, weight)
        evals = np.linalg.eigvalsh(X)
        assert evals.min() > 0
        # stationarity of 0.5||X-S||^2 - w logdet X
        grad = (X - S) - weight * np.linalg.inv(X)
        assert np.abs(grad).max() < 1e-10


class TestAdmmIdentify:
    def test_path_noiseless_leaf_probing_recovers_truth(self):
        f = path3()
        ds = leaf_dataset(f)
        res = admm_identify(ds, lam=1e-8, mu=1e-4, max_iter=100_000, tol_scale=1e-9)
        assert res.converged
        assert np.abs(res.theta - reduced_laplacian(f)).max() < 1e-3

    def test_iterate_invariants(self, rng):
        tree = random_tree(rng, 6)
        f = feeder_from_tree(tree, random_resistances(rng, 5))
        ds = leaf_dataset(f, noise=NoiseConfig(meas_rel_accuracy=0.01, seed=1))
        state = AdmmState(ds, lam=5e-3, mu=0.1, rho=1.0)
        for _ in range(300):
            state.step()
            assert np.linalg.eigvalsh(state.theta2).min() >= -1e-10
            assert np.allclose(state.theta2, state.theta2.T)
            off = ~np.eye(5, dtype=bool)
            assert (state.theta3[off] <= 1e-15).all()
            assert (state.theta4.sum(axis=1) >= -1e-10).all()

    def test_prox_input_symmetrized(self, rng):
        # the log-det copy equals the prox of the symmetrized average input
        tree = random_tree(rng, 5)
        f = feeder_from_tree(tree, random_resistances(rng, 4))
        ds = leaf_dataset(f, noise=NoiseConfig(meas_rel_accuracy=0.02, seed=2))
        state = AdmmState(ds, lam=1e-3, mu=0.2, rho=0.8)
        for _ in range(10):
            m2_before = state.m2.copy()
            t234 = (state.theta2, state.theta3, state.theta4)
            rhs = state._bias - state.lam * state.pi - state.rho * (
                state.m2 + state.m3 + state.m4 - sum(t234)
            )
            t1 = state._solver.solve(rhs)
            raw = t1 + m2_before
            expected = prox_logdet((raw + raw.T) / 2.0, state.mu / state.rho)
            state.step()
            assert np.allclose(state.theta2, expected, atol=1e-12)

    def test_scalar_instance_matches_calculus(self, rng):
        # one bus: the optimum is the positive root of a w v^2 + b v - mu = 0
        v = rng.uniform(0.5, 1.5, (1, 6))
        delta = rng.uniform(0.5, 1.5, (1, 6))
        ds = ProbingDataset(v_tilde=v, delta=delta, buses=(1,), W=np.eye(1))
        mu = 0.3
        res = admm_identify(ds, lam=0.0, mu=mu, max_iter=20_000, tol_scale=1e-10)
        a = float((v * v).sum())
        b = -float((v * delta).sum())
        root = (-b + np.sqrt(b * b + 4 * a * mu)) / (2 * a)
        assert res.theta[0, 0] == pytest.approx(root, rel=1e-6)

    def test_matches_cvxpy_on_noisy_instance(self, rng):
        import cvxpy as cp

        tree = random_tree(rng, 6)
        f = feeder_from_tree(tree, random_resistances(rng, 5))
        ds = leaf_dataset(f, noise=NoiseConfig(meas_rel_accuracy=0.02, seed=9),
                          design="paired")
        lam, mu = 5e-3, 0.05
        res = admm_identify(ds, lam=lam, mu=mu, max_iter=150_000, tol_scale=1e-9)
        n = 5
        target = ds.target()
        Th = cp.Variable((n, n), symmetric=True)
        pi = np.eye(n) + np.ones((n, n))
        objective = (0.5 * cp.sum_squares(Th @ ds.v_tilde - target)
                     + lam * cp.trace(Th @ pi) - mu * cp.log_det(Th))
        cons = [Th[i, j] <= 0 for i in range(n) for j in range(n) if i != j]
        cons += [cp.sum(Th[i, :]) >= 0 for i in range(n)]
        prob = cp.Problem(cp.Minimize(objective), cons)
        prob.solve(solver=cp.SCS, eps=1e-9, max_iters=100_000)
        assert full_objective(res.theta, ds, lam, mu) == pytest.approx(prob.value, abs=1e-6)
        assert np.abs(res.theta - Th.value).max() < 1e-4

    def test_kkt_residual_flags_non_solutions(self, rng):
        tree = random_tree(rng, 6)
        f = feeder_from_tree(tree, random_resistances(rng, 5))
        ds = leaf_dataset(f, noise=NoiseConfig(meas_rel_accuracy=0.01, seed=4))
        lam, mu = 5e-3, 0.1
        res = admm_identify(ds, lam=lam, mu=mu, max_iter=100_000, tol_scale=1e-9)
        at_solution = kkt_residual(res.theta, ds, lam=lam, mu=mu)
        perturbed = kkt_residual(res.theta + 0.05 * np.eye(5), ds, lam=lam, mu=mu)
        assert at_solution < 1e-6
        assert perturbed > 100 * at_solution


class TestGradients:
    def test_smooth_gradient_matches_finite_differences(self, rng):
        tree = random_tree(rng, 6)
        f = feeder_from_tree(tree, random_resistances(rng, 5))
        ds = leaf_dataset(f, noise=NoiseConfig(meas_rel_accuracy=0.05, seed=6))
        lam = 7e-3
        theta0 = reduced_laplacian(f) + 0.1 * np.eye(5)
        grad = smooth_gradient(theta0, ds, lam)
        h = 1e-6
        fd = np.zeros_like(grad)
        for i in range(5):
            for j in range(5):
                e = np.zeros((5, 5))
                e[i, j] = h
                fd[i, j] = (smooth_objective(theta0 + e, ds, lam)
                            - smooth_objective(theta0 - e, ds, lam)) / (2 * h)
        assert np.abs(grad - fd).max() / (1 + np.abs(grad).max()) < 1e-5


class TestMle:
    def test_noiseless_full_probing_exact(self, rng):
        tree = random_tree(rng, 7)
        f = feeder_from_tree(tree, random_resistances(rng, 6))
        ds = full_dataset(f)
        out = mle_identify(ds)
        assert np.allclose(out.theta, reduced_laplacian(f), atol=1e-8)

    def test_partial_probing_unsupported(self, rng):
        tree = random_tree(rng, 7)
        f = feeder_from_tree(tree, random_resistances(rng, 6))
        with pytest.raises(ValueError):
            mle_identify(leaf_dataset(f))

    def test_covariance_trace_shrinks_with_repeats(self, rng):
        tree = random_tree(rng, 6)
        f = feeder_from_tree(tree, random_resistances(rng, 5))
        noise = NoiseConfig(meas_rel_accuracy=0.01, load_sigma_rel=0.05, seed=11)
        traces = []
        for repeats in (1, 2, 4):
            buses = list(range(1, 6))
            plan = make_plan(buses, 1.0, design="paired", repeats=repeats)
            ds = simulate(f, plan, noise, "linear")
            traces.append(np.trace(mle_identify(ds).covariance))
        assert traces[0] > traces[1] > traces[2]

    def test_dense_under_noise(self, rng):
        tree = random_tree(rng, 6)
        f = feeder_from_tree(tree, random_resistances(rng, 5))
        ds = full_dataset(f, noise=NoiseConfig(meas_rel_accuracy=0.01,
                                               load_sigma_rel=0.05, seed=12))
        out = mle_identify(ds)
        assert (np.abs(out.theta) > 1e-12).all()
        assert (np.abs(reduced_laplacian(f)) < 1e-12).any()


class TestRoundToTree:
    def test_exact_laplacian_recovers_exactly(self, rng):
        tree = random_tree(rng, 8)
        r = random_resistances(rng, 7)
        f = feeder_from_tree(tree, r)
        rec = round_to_tree(reduced_laplacian(f))
        assert rec.tree.edge_pairs() == tree.edge_pairs()
        for m in range(1, 8):
            assert rec.resistances[m] == pytest.approx(f.line_feeding(m).r, rel=1e-12)

    def test_stable_under_small_perturbation(self, rng):
        tree = random_tree(rng, 8)
        f = feeder_from_tree(tree, random_resistances(rng, 7))
        noise = rng.standard_normal((7, 7)) * 1e-6
        rec = round_to_tree(reduced_laplacian(f) + (noise + noise.T) / 2)
        assert rec.tree.edge_pairs() == tree.edge_pairs()

    def test_matches_exhaustive_best_fit_tree(self, rng):
        # Prufer enumeration of every labelled tree on 6 nodes
        def tree_from_prufer(seq, n):
            degree = [1] * n
            for s in seq:
                degree[s] += 1
            edges = []
            ptr = 0
            leaf = 0
            used = [False] * n
            for s in seq:
                for cand in range(n):
                    if degree[cand] == 1 and not used[cand]:
                        leaf = cand
                        break
                edges.append((leaf, s))
                used[leaf] = True
                degree[s] -= 1
            rest = [m for m in range(n) if degree[m] == 1 and not used[m]]
            edges.append((rest[0], rest[1]))
            return edges

        n = 6
        for trial in range(3):
            tree = random_tree(rng, n)
            f = feeder_from_tree(tree, random_resistances(rng, n - 1))
            theta = reduced_laplacian(f)
            noise = rng.standard_normal((n - 1, n - 1)) * 0.02
            theta_hat = theta + (noise + noise.T) / 2
            rec = round_to_tree(theta_hat)

            from gridprobe import full_laplacian

            phi = full_laplacian((theta_hat + theta_hat.T) / 2)
            best, best_err = None, np.inf
            for seq in itertools.product(range(n), repeat=n - 2):
                edges = tree_from_prufer(list(seq), n)
                cand = np.zeros((n - 1, n - 1))
                for u, v in edges:
                    w = -phi[u, v]
                    for node, other in ((u, v), (v, u)):
                        if node >= 1:
                            cand[node - 1, node - 1] += w
                    if u >= 1 and v >= 1:
                        cand[u - 1, v - 1] -= w
                        cand[v - 1, u - 1] -= w
                err = np.linalg.norm(cand - theta_hat)
                if err < best_err:
                    best, best_err = {(min(u, v), max(u, v)) for u, v in edges}, err
            assert rec.tree.edge_pairs() == best
