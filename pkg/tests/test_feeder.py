"""Electrical model: incidence, sensitivities, Laplacians, power flow."""

from fractions import Fraction

import numpy as np
import pytest

import gridprobe as gp
from gridprobe import (Feeder, FeederError, Line, ac_voltage, build_index, build_sensitivity,
                       full_laplacian, incidence, level_sets, lindistflow_voltage,
                       reduced_laplacian, resistance_matrix, resistance_matrix_pathsum)
from gridprobe.feeder import path_resistance_matrix, two_bus_ac_solution
from conftest import feeder_from_tree, random_feeder, random_resistances, random_tree


def path3() -> Feeder:
    return Feeder([Line("L1", 0, 1, 1.0, 1.0), Line("L2", 1, 2, 2.0, 2.0)])


def star2() -> Feeder:
    return Feeder([Line("L1", 0, 1, 1.0, 1.0), Line("L2", 0, 2, 1.0, 1.0)])


class TestFeederValidation:
    def test_nonpositive_resistance_rejected(self):
        with pytest.raises(FeederError):
            Feeder([Line("L1", 0, 1, 0.0, 1.0)])

    def test_duplicate_id_rejected(self):
        with pytest.raises(FeederError):
            Feeder([Line("L1", 0, 1, 1.0, 1.0), Line("L1", 1, 2, 1.0, 1.0)])

    def test_status_must_span(self):
        lines = [Line("L1", 0, 1, 1.0, 1.0), Line("L2", 1, 2, 1.0, 1.0),
                 Line("L3", 0, 2, 1.0, 1.0)]
        with pytest.raises(FeederError):
            Feeder(lines, status=[1, 0, 0])
        ok = Feeder(lines, status=[1, 0, 1])
        assert ok.graph.edge_pairs() == {(0, 1), (0, 2)}


class TestIncidence:
    def test_path(self):
        A, a0 = incidence(path3())
        assert np.array_equal(A, [[-1.0, 0.0], [1.0, -1.0]])
        assert np.array_equal(a0, [1.0, 0.0])

    def test_star(self):
        A, a0 = incidence(star2())
        assert np.array_equal(np.abs(A), np.eye(2))
        assert np.allclose(a0, -A @ np.ones(2))

    def test_rows_sum_to_zero(self, rng):
        f = random_feeder(rng, 10)
        A, a0 = incidence(f)
        assert np.allclose(a0 + A.sum(axis=1), 0.0)


class TestResistanceMatrix:
    def test_path_worked_example(self):
        R = resistance_matrix(path3())
        assert np.allclose(R, [[1.0, 1.0], [1.0, 3.0]])
        theta = reduced_laplacian(path3())
        assert np.allclose(theta, [[1.5, -0.5], [-0.5, 0.5]])
        assert np.allclose(R @ theta, np.eye(2), atol=1e-12)

    def test_star_disjoint_paths(self):
        assert np.allclose(resistance_matrix(star2()), np.eye(2))

    def test_pathsum_equals_inverse(self, rng):
        for _ in range(10):
            f = random_feeder(rng, 11)
            assert np.allclose(resistance_matrix(f), resistance_matrix_pathsum(f),
                               atol=1e-10)

    def test_exact_arithmetic_pathsum(self):
        tree = gp.TreeGraph([-1, 0, 1, 1])
        r = [0, Fraction(1, 3), Fraction(2, 7), Fraction(5, 11)]
        R = path_resistance_matrix(tree, r)
        assert R[0][0] == Fraction(1, 3)
        assert R[1][1] == Fraction(1, 3) + Fraction(2, 7)
        assert R[1][2] == Fraction(1, 3)

    def test_entry_interpretation_unit_withdrawal(self, rng):
        # column n of R is the voltage drop profile for a unit withdrawal at n
        f = random_feeder(rng, 8)
        sens = build_sensitivity(f)
        n = 4
        p = np.zeros(7)
        p[n - 1] = -1.0
        v = lindistflow_voltage(f, p, np.zeros(7), sens)
        assert np.allclose(1.0 - v, sens.R[:, n - 1])


class TestResistanceLevelSetLaws:
    def test_diagonal_dominance_and_leaf_strictness(self, rng):
        for _ in range(10):
            tree = random_tree(rng, int(rng.integers(4, 13)))
            f = feeder_from_tree(tree, random_resistances(rng, tree.node_count - 1))
            R = resistance_matrix(f)
            idx = f.index
            n = f.n_loads
            for m in range(1, n + 1):
                row = R[m - 1]
                assert row[m - 1] >= row.max() - 1e-12
                if m in idx.leaves:
                    others = np.delete(row, m - 1)
                    assert (row[m - 1] > others + 1e-12).all()

    def test_equal_entries_iff_same_level_set(self, rng):
        for _ in range(10):
            tree = random_tree(rng, int(rng.integers(4, 13)))
            f = feeder_from_tree(tree, random_resistances(rng, tree.node_count - 1))
            R = resistance_matrix(f)
            idx = f.index
            for m in range(1, f.node_count):
                sets = level_sets(idx, m)
                value = {}
                for k, members in enumerate(sets):
                    for node in members:
                        value[node] = k
                for a in range(1, f.node_count):
                    for b in range(1, f.node_count):
                        same = abs(R[m - 1, a - 1] - R[m - 1, b - 1]) < 1e-12
                        assert same == (value[a] == value[b])

    def test_consecutive_level_gap_is_line_resistance(self, rng):
        for _ in range(10):
            tree = random_tree(rng, int(rng.integers(4, 13)))
            r = random_resistances(rng, tree.node_count - 1)
            f = feeder_from_tree(tree, r)
            R = resistance_matrix(f)
            idx = f.index
            for m in range(1, f.node_count):
                sets = level_sets(idx, m)
                for k in range(len(sets) - 1):
                    n = next(iter(sets[k]))
                    s = next(iter(sets[k + 1]))
                    child = idx.ancestors[m][k + 1]
                    expected = f.line_feeding(child).r
                    rn = 0.0 if n == 0 else R[m - 1, n - 1]
                    rs = R[m - 1, s - 1]
                    assert rs - rn == pytest.approx(expected, abs=1e-10)
                    assert rs > rn


class TestReducedLaplacian:
    def test_positive_definite_iff_tree(self, rng):
        lines = [Line("L1", 0, 1, 1.0, 1.0), Line("L2", 1, 2, 2.0, 2.0),
                 Line("L3", 0, 2, 3.0, 3.0)]
        f = Feeder(lines, status=[1, 1, 0])
        # dropping a tree edge makes it singular
        theta = reduced_laplacian(f, np.array([1.0, 0.0, 0.0]))
        assert abs(np.linalg.eigvalsh(theta)[0]) < 1e-10
        # a cycle with a disconnected bus keeps the edge count but not rank
        lines4 = [Line("L1", 0, 1, 1.0, 1.0), Line("L2", 1, 2, 2.0, 2.0),
                  Line("L3", 0, 2, 3.0, 3.0), Line("L4", 2, 3, 1.5, 1.5)]
        f4 = Feeder(lines4, status=[1, 1, 0, 1])
        theta_cycle = reduced_laplacian(f4, np.array([1.0, 1.0, 1.0, 0.0]))
        assert abs(np.linalg.eigvalsh(theta_cycle)[0]) < 1e-10
        theta_tree = reduced_laplacian(f4)
        assert np.linalg.eigvalsh(theta_tree)[0] > 0

    def test_fractional_status_allowed(self):
        f = path3()
        theta = reduced_laplacian(f, np.array([0.5, 0.25]))
        assert np.allclose(theta, [[0.5 + 0.125, -0.125], [-0.125, 0.125]])


class TestFullLaplacian:
    def test_block_example(self):
        theta = np.array([[1.5, -0.5], [-0.5, 0.5]])
        lifted = full_laplacian(theta)
        assert np.allclose(lifted, [[1.0, -1.0, 0.0], [-1.0, 1.5, -0.5], [0.0, -0.5, 0.5]])

    def test_rows_sum_to_zero(self, rng):
        theta = np.eye(2)
        assert np.allclose(full_laplacian(theta).sum(axis=1), 0.0)
        A = rng.standard_normal((5, 5))
        theta = A @ A.T + np.eye(5)
        lifted = full_laplacian(theta)
        assert np.allclose(lifted @ np.ones(6), 0.0, atol=1e-12)
        assert np.allclose(lifted[1:, 1:], theta)

    def test_offdiag_l1_matches_trace_form(self, rng):
        # for admissible Laplacians the sparsity surrogate is linear
        for _ in range(10):
            n = int(rng.integers(3, 9))
            tree = random_tree(rng, n + 1)
            extra_pairs = {(int(a), int(b)) for a, b in tree.edge_pairs()}
            weights = np.zeros((n + 1, n + 1))
            for u, v in extra_pairs:
                weights[u, v] = weights[v, u] = rng.uniform(0.5, 2.0)
            # a few extra couplings keep it a general admissible member
            for _ in range(3):
                u, v = sorted(rng.choice(n + 1, 2, replace=False).tolist())
                if (u, v) not in extra_pairs:
                    weights[u, v] = weights[v, u] = rng.uniform(0.1, 1.0)
            lap = np.diag(weights.sum(axis=1)) - weights
            theta = lap[1:, 1:]
            phi = full_laplacian(theta)
            l1_off = np.abs(phi).sum() - np.abs(np.diag(phi)).sum()
            pi = np.eye(n) + np.ones((n, n))
            assert l1_off == pytest.approx(np.trace(theta @ pi), rel=1e-12)


class TestVoltageModels:
    def test_flat_profile_zero_injection(self):
        f = path3()
        assert np.allclose(lindistflow_voltage(f, np.zeros(2), np.zeros(2)), 1.0)
        assert np.allclose(ac_voltage(f, np.zeros(2), np.zeros(2)), 1.0)

    def test_path_injection_example(self):
        v = lindistflow_voltage(path3(), np.array([0.0, 1.0]), np.zeros(2))
        assert np.allclose(v, [2.0, 4.0])

    def test_ac_close_to_linear_for_small_loads(self, rng):
        f = random_feeder(rng, 10, load_scale=0.0)
        p = rng.uniform(-1e-3, 1e-3, 9)
        q = rng.uniform(-1e-3, 1e-3, 9)
        v_lin = lindistflow_voltage(f, p, q)
        v_ac = ac_voltage(f, p, q)
        assert np.abs(v_ac - v_lin).max() <= 1e-5

    def test_two_bus_closed_form(self):
        f = Feeder([Line("L1", 0, 1, 0.04, 0.03)])
        for p_load, q_load in [(0.3, 0.1), (0.8, 0.25), (1.5, 0.4)]:
            v = ac_voltage(f, np.array([-p_load]), np.array([-q_load]), tol=1e-12)
            expected = two_bus_ac_solution(0.04, 0.03, p_load, q_load)
            assert v[0] == pytest.approx(expected, abs=1e-10)

    def test_ac_diverges_beyond_loadability(self):
        f = Feeder([Line("L1", 0, 1, 0.5, 0.5)])
        with pytest.raises(gp.SolverError):
            ac_voltage(f, np.array([-5.0]), np.array([-5.0]))
