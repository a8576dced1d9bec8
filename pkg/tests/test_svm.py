import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from terrainseg import svm
from terrainseg.svm import (
    KernelCache,
    SvmConvergenceError,
    SvmError,
    binary_decision,
    grid_search,
    ovo_classify,
    ovo_train,
    rbf_gram,
    rbf_kernel,
    smo_train,
)


def random_problem(seed, n=30, d=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    return X, y


def full_alpha(machine, n):
    a = np.zeros(n)
    a[machine.support_indices] = np.abs(machine.coef)
    return a


def clusters(rng, k, n=15, spread=0.3, gap=4.0):
    centers = np.array([[gap * math.cos(2 * math.pi * c / k), gap * math.sin(2 * math.pi * c / k)] for c in range(k)])
    lab = np.repeat(np.arange(k), n)
    return centers[lab] + rng.normal(0, spread, (lab.size, 2)), lab


class TestKernel:
    def test_self_is_one(self, rng):
        x = rng.normal(size=5)
        assert rbf_kernel(x, x, 3.0) == 1.0

    def test_symmetric(self, rng):
        a, b = rng.normal(size=(2, 4))
        assert rbf_kernel(a, b, 0.7) == rbf_kernel(b, a, 0.7)

    def test_value(self):
        assert rbf_kernel([0.0, 0.0], [1.0, 0.0], 1.0) == pytest.approx(math.exp(-1), abs=1e-15)
        assert rbf_kernel([0.0, 0.0], [1.0, 0.0], 1.0) == pytest.approx(0.36788, abs=1e-5)

    def test_errors(self):
        with pytest.raises(SvmError):
            rbf_kernel([0.0], [0.0, 1.0], 1.0)
        with pytest.raises(SvmError):
            rbf_kernel([0.0], [1.0], 0.0)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 25), st.floats(0.01, 20.0))
    def test_gram_psd(self, seed, n, gamma):
        X = np.random.default_rng(seed).normal(size=(n, 3))
        K = rbf_gram(X, X, gamma)
        assert np.array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8

    def test_cache_lru(self, rng):
        X = rng.normal(size=(10, 3))
        cache = KernelCache(X, 0.5, budget_bytes=8 * 10 * 3)
        assert cache.full is None and cache.capacity == 3
        for i in (0, 1, 2, 0, 3):
            np.testing.assert_allclose(cache.row(i), rbf_gram(X[i : i + 1], X, 0.5)[0])
        assert list(cache.rows) == [2, 0, 3]


class TestSmo:
    def test_two_points(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])
        m = smo_train(X, [1, -1], gamma=1.0, C=100.0, tol=1e-6)
        assert m.n_support == 2
        assert binary_decision(m, X[0]) >= 1 - 1e-6
        assert binary_decision(m, X[1]) <= -1 + 1e-6
        assert binary_decision(m, X.mean(axis=0)) == pytest.approx(0.0, abs=1e-9)

    def test_separable_blobs(self, rng):
        X = np.vstack([rng.normal(-2, 0.4, (10, 2)), rng.normal(2, 0.4, (10, 2))])
        y = np.repeat([1.0, -1.0], 10)
        m = smo_train(X, y, 0.5, 10.0)
        assert np.all(np.sign(binary_decision(m, X)) == y)
        assert np.all(np.abs(m.coef) <= 10.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_kkt(self, seed):
        X, y = random_problem(seed)
        C, tol = 2.0, 1e-3
        m = smo_train(X, y, 0.8, C, tol)
        a = full_alpha(m, len(y))
        yf = y * binary_decision(m, X)
        eps = 1e-9
        assert np.all(yf[a == 0] >= 1 - tol - eps)
        assert np.all(yf[a >= C] <= 1 + tol + eps)
        free = (a > 0) & (a < C)
        assert np.all(np.abs(yf[free] - 1) <= tol + eps)
        assert np.all((a >= 0) & (a <= C))
        # signed form: the coefficients sum to zero
        assert abs(m.coef.sum()) <= 1e-12 * max(1.0, np.abs(m.coef).sum())
        assert np.all(m.coef != 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_dual_objective_matches_projected_gradient(self, seed):
        X, y = random_problem(100 + seed)
        gamma, C = 0.8, 2.0
        m = smo_train(X, y, gamma, C, tol=1e-3)
        _, ref = oracles.svm_dual_projected_gradient(X, y, gamma, C)
        K = np.array([[math.exp(-gamma * float((a - b) @ (a - b))) for b in X] for a in X])
        Q = y[:, None] * y[None, :] * K
        ours = oracles.dual_objective(full_alpha(m, len(y)), Q)
        assert ours == pytest.approx(m.objective, abs=1e-9)
        assert abs(ours - ref) <= 1e-4

    def test_objective_monotone(self):
        X, y = random_problem(7, n=40)
        m = smo_train(X, y, 1.0, 1.0, record_objective=True)
        assert m.objective_trace
        assert np.all(np.diff(m.objective_trace) <= 1e-12)

    def test_margin_support_vector(self, rng):
        X, y = random_problem(3)
        C = 5.0
        m = smo_train(X, y, 0.8, C, tol=1e-6)
        free = np.abs(m.coef) < C
        f = binary_decision(m, m.support_vectors[free])
        yy = np.sign(m.coef[free])
        np.testing.assert_allclose(yy * f, 1.0, atol=1e-6)

    def test_lipschitz(self, rng):
        X, y = random_problem(5)
        gamma = 0.8
        m = smo_train(X, y, gamma, 2.0)
        L = np.abs(m.coef).sum() * math.sqrt(2 * gamma / math.e)
        for _ in range(50):
            x = rng.normal(size=2)
            d = rng.normal(size=2) * 1e-2
            assert abs(binary_decision(m, x + d) - binary_decision(m, x)) <= L * np.linalg.norm(d) + 1e-12

    def test_degenerate(self):
        with pytest.raises(SvmError, match="degenerate binary problem"):
            smo_train(np.zeros((3, 2)), [1, 1, 1], 1.0, 1.0)

    def test_non_convergence_reports_violation(self):
        X, y = random_problem(1, n=40)
        with pytest.raises(SvmConvergenceError, match="max violation"):
            smo_train(X, y, 1.0, 10.0, tol=1e-8, max_iter=3)

    def test_duplication_invariance_separable(self, rng):
        X = np.vstack([rng.normal(-1.5, 0.4, (8, 2)), rng.normal(1.5, 0.4, (8, 2))])
        y = np.repeat([1.0, -1.0], 8)
        a = smo_train(X, y, 0.5, 1e4, tol=1e-7)
        b = smo_train(np.vstack([X, X]), np.concatenate([y, y]), 0.5, 1e4, tol=1e-7)
        Q = rng.normal(0, 2, (30, 2))
        np.testing.assert_allclose(binary_decision(a, Q), binary_decision(b, Q), atol=1e-3)

    def test_duplication_with_halved_bound(self, rng):
        # with bounded multipliers the duplicated problem matches the original at C/2
        X, y = random_problem(9)
        a = smo_train(X, y, 0.8, 2.0, tol=1e-7)
        b = smo_train(np.vstack([X, X]), np.concatenate([y, y]), 0.8, 1.0, tol=1e-7)
        Q = rng.normal(size=(30, 2))
        np.testing.assert_allclose(binary_decision(a, Q), binary_decision(b, Q), atol=1e-3)


class TestOvo:
    @given(st.integers(2, 10))
    @settings(max_examples=9)
    def test_machine_count(self, k):
        X, lab = clusters(np.random.default_rng(k), k, n=4)
        m = ovo_train(X, lab, 0.5, 1.0)
        assert len(m.machines) == k * (k - 1) // 2
        assert m.pairs == [(a, b) for a in range(k) for b in range(a + 1, k)]

    def test_two_classes_single_machine(self, rng):
        X, y = random_problem(11)
        lab = np.where(y > 0, 0, 1)
        m = ovo_train(X, lab, 0.8, 2.0)
        ref = smo_train(X, y, 0.8, 2.0)
        f = binary_decision(ref, X)
        np.testing.assert_allclose(binary_decision(m.machines[(0, 1)], X), f)
        assert np.array_equal(ovo_classify(m, X)[0], np.where(f > 0, 0, 1))

    def test_well_separated_pairs(self, rng):
        X, lab = clusters(rng, 3)
        m = ovo_train(X, lab, 0.5, 4.0)
        for (a, b), mach in m.machines.items():
            idx = (lab == a) | (lab == b)
            pred = np.where(binary_decision(mach, X[idx]) > 0, a, b)
            assert np.array_equal(pred, lab[idx])

    def test_deep_inside_class(self, rng):
        X, lab = clusters(rng, 5)
        m = ovo_train(X, lab, 0.5, 4.0)
        center = X[lab == 2].mean(axis=0)
        for pair, mach in m.machines.items():
            if 2 in pair:
                assert abs(binary_decision(mach, center)) > 1
        cls, votes, _ = ovo_classify(m, center)
        assert cls == 2 and votes[2] == 4

    def test_vote_recount(self, rng):
        X, lab = clusters(rng, 5, spread=1.5)
        m = ovo_train(X, lab, 0.5, 2.0)
        Q = rng.normal(0, 4, (100, 2))
        cls, votes, _ = ovo_classify(m, Q)
        for q, c, v in zip(Q, cls, votes):
            want = oracles.ovo_vote(m, q)
            assert v.tolist() == want
            assert want[c] == max(want)

    def test_tie_break_by_margin(self):
        mk = lambda b: svm.BinarySvm(np.zeros((1, 1)), np.array([1e-30]), b, 1.0, 1.0)  # noqa: E731
        # 3 classes, every class wins once; class 2 wins its machine by the largest margin
        machines = {(0, 1): mk(0.5), (0, 2): mk(-3.0), (1, 2): mk(1.0)}
        m = svm.OvoModel(3, machines, 1.0, 1.0)
        cls, votes, soft = ovo_classify(m, np.zeros(1))
        assert votes.tolist() == [1, 1, 1] and cls == 2

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=10)
    def test_soft_scores(self, seed):
        rng = np.random.default_rng(seed)
        X, lab = clusters(rng, 4, n=6, spread=1.5)
        m = ovo_train(X, lab, 0.5, 2.0)
        cls, votes, soft = ovo_classify(m, rng.normal(0, 4, (30, 2)))
        assert np.all(soft >= 0)
        np.testing.assert_allclose(soft.sum(axis=1), 1.0, atol=1e-12)
        for v, s, c in zip(votes, soft, cls):
            if np.sum(v == v.max()) == 1:
                assert np.argmax(s) == np.argmax(v) == c

    def test_empty_class(self, rng):
        with pytest.raises(SvmError, match="class 1 has no training features"):
            ovo_train(rng.normal(size=(6, 2)), [0, 0, 2, 2, 0, 2], 1.0, 1.0, class_count=3)

    def test_persistence_exact(self, tmp_path, rng):
        X, lab = clusters(rng, 3, n=6, spread=1.0)
        m = ovo_train(X, lab, 0.37, 1.9)
        m.meta["variant"] = "USURF36"
        svm.save(m, tmp_path / "m.json")
        back = svm.load(tmp_path / "m.json")
        Q = rng.normal(size=(20, 2))
        for pair in m.pairs:
            np.testing.assert_array_equal(binary_decision(back.machines[pair], Q), binary_decision(m.machines[pair], Q))
        assert back.meta == m.meta
        doc = svm.to_dict(m)
        assert len(doc["vectors"]) <= len(X)


class TestGrid:
    def test_accuracy_formula(self):
        assert svm.accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 75.0
        truth = np.repeat(np.arange(5), 20)
        assert svm.accuracy(np.zeros(100, dtype=int), truth) == 20.0

    def test_separable_reaches_100(self, rng):
        X, lab = clusters(rng, 3, n=10)
        rep = grid_search(X, lab, [2.0**-2, 2.0**0], [2.0**0, 2.0**2], seed=0)
        assert rep.best[2] == 100.0
        assert np.all((rep.accuracy >= 0) & (rep.accuracy <= 100))

    def test_skip_and_csv(self, rng):
        X, lab = clusters(rng, 3, n=10, spread=2.0)
        g, c = [2.0**-1, 2.0**1], [2.0**-1, 2.0**0, 2.0**3]
        rep = grid_search(X, lab, g, c, seed=1, skip=[(2.0, 1.0)])
        assert np.isnan(rep.accuracy[1, 1])
        text = svm.format_grid_csv(rep)
        lines = text.splitlines()
        assert lines[0] == "gamma\\C,2^-1,2^0,2^3"
        assert lines[2].split(",")[2] == "*"
        back = svm.parse_grid_csv(text)
        assert back.gammas == g and back.Cs == c
        np.testing.assert_allclose(back.accuracy, np.round(rep.accuracy, 2))
        r, col = np.unravel_index(np.nanargmax(rep.accuracy), rep.accuracy.shape)
        assert rep.best == (g[r], c[col], rep.accuracy[r, col])

    def test_deterministic_and_folds(self, rng):
        X, lab = clusters(rng, 3, n=8, spread=2.0)
        a = grid_search(X, lab, [0.5], [1.0, 4.0], seed=3, folds=3)
        b = grid_search(X, lab, [0.5], [1.0, 4.0], seed=3, folds=3)
        assert np.array_equal(a.accuracy, b.accuracy) and a.protocol == "3-fold"

    def test_empty_grid(self, rng):
        with pytest.raises(SvmError):
            grid_search(np.zeros((4, 2)), [0, 1, 0, 1], [], [1.0])
