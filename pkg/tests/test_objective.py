"""Losses, penalty, and gradient checks against naive-sum / SVD / finite
difference oracles."""

import math

import numpy as np
import pytest

from geoerm import manifold as mf
from geoerm import objective as ob
from geoerm.errors import ConfigurationError, DimensionError, KindMismatchError


def finite_diff(f, x, h=1e-6):
    g = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def make_task(rng, n=15, p=6, kind="regression"):
    X = rng.standard_normal((n, p))
    if kind == "regression":
        y = rng.standard_normal(n)
    else:
        y = (rng.random(n) < 0.5).astype(float)
    return ob.TaskData(X=X, y=y, kind=kind)


def simple_top_pair(rng, p=6, r=2, min_rel_gap=1e-2):
    """Ambient (A, B) whose projector gap has a simple, well-separated top
    eigenvalue, so the spectral penalty is differentiable there and finite
    differences are well posed."""
    while True:
        Am = rng.standard_normal((p, r))
        Bm = rng.standard_normal((p, r))
        s = np.linalg.svd(Am @ Am.T - Bm @ Bm.T, compute_uv=False)
        if s[0] > 0 and (s[0] - s[1]) / s[0] >= min_rel_gap:
            return Am, Bm


class TestTaskData:
    def test_row_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            ob.TaskData(X=np.ones((3, 2)), y=np.ones(4))

    def test_classification_labels_checked(self):
        with pytest.raises(KindMismatchError):
            ob.TaskData(X=np.ones((2, 2)), y=np.array([0.0, 2.0]),
                        kind="classification")

    def test_shapes(self):
        t = make_task(np.random.default_rng(0))
        assert t.n == 15 and t.p == 6


class TestHyperparams:
    def test_bounds(self):
        with pytest.raises(ConfigurationError):
            ob.Hyperparams(lam=-1.0, gamma=0.0)
        with pytest.raises(ConfigurationError):
            ob.Hyperparams(lam=0.0, gamma=0.0, iterations=0)
        with pytest.raises(ConfigurationError):
            ob.Hyperparams(lam=0.0, gamma=0.0, alpha=0.0)

    def test_theta_optimizer_defaults_to_optimizer(self):
        hp = ob.Hyperparams(lam=1.0, gamma=1.0, optimizer="sgd")
        assert hp.theta_opt == "sgd"


class TestBetaOf:
    def test_zero_theta(self):
        A = mf.StiefelPoint(np.eye(4)[:, :2])
        assert np.array_equal(ob.beta_of(A, np.zeros(2)), np.zeros(4))

    def test_canonical_embedding(self):
        A = mf.StiefelPoint(np.eye(5)[:, :3])
        theta = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(ob.beta_of(A, theta),
                              np.array([1.0, -2.0, 0.5, 0.0, 0.0]))

    def test_isometry(self):
        rng = np.random.default_rng(1)
        A = mf.random_stiefel(9, 4, rng)
        theta = rng.standard_normal(4)
        assert abs(np.linalg.norm(ob.beta_of(A, theta))
                   - np.linalg.norm(theta)) <= 1e-10


class TestLinearLoss:
    def test_zero_residual(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((8, 3))
        beta = rng.standard_normal(3)
        task = ob.TaskData(X=X, y=X @ beta)
        assert ob.linear_loss(task, beta) == 0.0

    def test_analytic_value(self):
        task = ob.TaskData(X=np.eye(2), y=np.array([1.0, 0.0]))
        assert ob.linear_loss(task, np.zeros(2)) == pytest.approx(0.25)

    def test_naive_sum_oracle(self):
        rng = np.random.default_rng(3)
        task = make_task(rng)
        beta = rng.standard_normal(6)
        naive = sum(
            (task.y[i] - task.X[i] @ beta) ** 2 for i in range(task.n)
        ) / (2 * task.n)
        assert abs(ob.linear_loss(task, beta) - naive) <= 1e-12

    def test_kind_checked(self):
        task = make_task(np.random.default_rng(4), kind="classification")
        with pytest.raises(KindMismatchError):
            ob.linear_loss(task, np.zeros(6))


class TestLogisticLoss:
    def test_zero_beta_gives_log2(self):
        task = make_task(np.random.default_rng(5), kind="classification")
        assert ob.logistic_loss(task, np.zeros(6)) == pytest.approx(
            math.log(2.0), abs=1e-12)

    def test_saturated_logits_no_overflow(self):
        X = np.full((4, 1), 40.0)
        task = ob.TaskData(X=X, y=np.ones(4), kind="classification")
        val = ob.logistic_loss(task, np.ones(1))
        assert 0.0 <= val <= 1e-15

    def test_huge_logits_stay_finite(self):
        X = np.array([[1e4], [-1e4]])
        task = ob.TaskData(X=X, y=np.array([1.0, 0.0]), kind="classification")
        assert np.isfinite(ob.logistic_loss(task, np.ones(1)))

    def test_naive_sum_oracle(self):
        rng = np.random.default_rng(6)
        task = make_task(rng, kind="classification")
        beta = 0.3 * rng.standard_normal(6)
        naive = sum(
            -task.y[i] * (task.X[i] @ beta)
            + math.log(1.0 + math.exp(task.X[i] @ beta))
            for i in range(task.n)
        ) / task.n
        assert abs(ob.logistic_loss(task, beta) - naive) <= 1e-12

    def test_non_negative(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            task = make_task(rng, kind="classification")
            beta = rng.standard_normal(6)
            assert ob.logistic_loss(task, beta) >= 0.0
            reg = make_task(rng)
            assert ob.linear_loss(reg, beta) >= 0.0


class TestPenalty:
    def test_zero_at_same_point(self):
        rng = np.random.default_rng(8)
        A = mf.random_stiefel(6, 2, rng)
        for mu in (0.0, 1e-3, 0.1):
            assert ob.penalty(A, A, mu) == pytest.approx(0.0, abs=1e-12)

    def test_analytic_orthogonal_lines(self):
        A = mf.StiefelPoint(np.array([[1.0], [0.0]]))
        B = mf.StiefelPoint(np.array([[0.0], [1.0]]))
        assert ob.penalty(A, B, 0.0) == pytest.approx(1.0, abs=1e-12)

    def test_full_svd_oracle(self):
        # instances whose distinct extreme eigenvalues are separated enough
        # for strict power iteration to converge inside its step budget
        rng = np.random.default_rng(9)
        checked = 0
        while checked < 25:
            p = int(rng.integers(2, 25))
            r = int(rng.integers(1, min(p, 6) + 1))
            A = mf.random_stiefel(p, r, rng)
            B = mf.random_stiefel(p, r, rng)
            D = A.matrix @ A.matrix.T - B.matrix @ B.matrix.T
            s = np.linalg.svd(D, compute_uv=False)
            distinct_gap = (s[0] - s[2]) / s[0] if len(s) > 2 else 1.0
            if s[0] <= 0 or distinct_gap < 3e-3:
                continue
            assert abs(ob.penalty(A, B, 0.0) - float(s[0])) <= 1e-8
            checked += 1

    def test_symmetry(self):
        rng = np.random.default_rng(10)
        A = mf.random_stiefel(8, 3, rng)
        B = mf.random_stiefel(8, 3, rng)
        for mu in (0.0, 1e-3):
            assert ob.penalty(A, B, mu) == pytest.approx(
                ob.penalty(B, A, mu), abs=1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(11)
        A = mf.random_stiefel(8, 3, rng)
        B = mf.random_stiefel(8, 3, rng)
        Q = mf.random_stiefel(3, 3, rng).matrix
        AQ = mf.StiefelPoint(A.matrix @ Q)
        assert abs(ob.penalty(AQ, B, 1e-3) - ob.penalty(A, B, 1e-3)) <= 1e-10

    def test_frobenius_route(self):
        rng = np.random.default_rng(12)
        A = mf.random_stiefel(7, 2, rng)
        B = mf.random_stiefel(7, 2, rng)
        D = A.matrix @ A.matrix.T - B.matrix @ B.matrix.T
        assert ob.penalty(A, B, 0.0, norm="frobenius") == pytest.approx(
            np.linalg.norm(D), abs=1e-10)


class TestGradients:
    def test_grad_theta_zero_residual(self):
        rng = np.random.default_rng(13)
        A = mf.random_stiefel(6, 2, rng)
        theta = rng.standard_normal(2)
        X = rng.standard_normal((20, 6))
        task = ob.TaskData(X=X, y=X @ (A.matrix @ theta))
        assert np.linalg.norm(ob.grad_theta(task, A, theta)) <= 1e-12

    def test_grad_theta_classification_at_zero(self):
        rng = np.random.default_rng(14)
        task = make_task(rng, kind="classification")
        A = mf.random_stiefel(6, 2, rng)
        expected = A.matrix.T @ task.X.T @ (0.5 - task.y) / task.n
        got = ob.grad_theta(task, A, np.zeros(2))
        assert np.linalg.norm(got - expected) <= 1e-12

    @pytest.mark.parametrize("kind", ["regression", "classification"])
    def test_grad_theta_fd(self, kind):
        rng = np.random.default_rng(15)
        for _ in range(5):
            task = make_task(rng, kind=kind)
            A = mf.random_stiefel(6, 2, rng)
            theta = rng.standard_normal(2)
            fd = finite_diff(lambda t: ob.loss_value(task, A.matrix @ t),
                             theta)
            assert rel_err(ob.grad_theta(task, A, theta), fd) <= 1e-5

    @pytest.mark.parametrize("kind", ["regression", "classification"])
    def test_grad_A_loss_part_fd(self, kind):
        rng = np.random.default_rng(16)
        hp = ob.Hyperparams(lam=0.0, gamma=0.0)
        for _ in range(5):
            task = make_task(rng, kind=kind)
            A = mf.random_stiefel(6, 2, rng)
            theta = rng.standard_normal(2)
            g = ob.grad_A_euclid(task, A, theta, A, hp)
            fd = finite_diff(lambda M: ob.loss_value(task, M @ theta),
                             A.matrix.copy())
            assert rel_err(g, fd) <= 1e-5

    def test_grad_A_zero_when_zero_residual_and_lam0(self):
        rng = np.random.default_rng(17)
        A = mf.random_stiefel(6, 2, rng)
        theta = rng.standard_normal(2)
        X = rng.standard_normal((20, 6))
        task = ob.TaskData(X=X, y=X @ (A.matrix @ theta))
        hp = ob.Hyperparams(lam=0.0, gamma=0.0)
        assert np.linalg.norm(ob.grad_A_euclid(task, A, theta, A, hp)) <= 1e-12

    def test_grad_A_penalty_zero_convention_at_center(self):
        rng = np.random.default_rng(18)
        A = mf.random_stiefel(6, 2, rng)
        theta = np.zeros(2)
        X = rng.standard_normal((20, 6))
        task = ob.TaskData(X=X, y=np.zeros(20))
        hp = ob.Hyperparams(lam=3.0, gamma=0.0)
        # beta = 0 so the loss part vanishes; A == Abar so the penalty part
        # is zero by convention
        g = ob.grad_A_euclid(task, A, theta, A, hp)
        assert np.linalg.norm(g) <= 1e-12

    def test_penalty_grad_fd_smoothed(self):
        rng = np.random.default_rng(19)
        mu = 1e-3
        for _ in range(8):
            Am, Bm = simple_top_pair(rng)
            term = ob.penalty_term(Am, Bm, mu)
            fd = finite_diff(lambda M: ob.penalty(M, Bm, mu), Am)
            assert rel_err(term.grad_A, fd) <= 1e-4

    def test_penalty_grad_Abar_fd_smoothed(self):
        rng = np.random.default_rng(20)
        mu = 1e-3
        for _ in range(8):
            Am, Bm = simple_top_pair(rng)
            term = ob.penalty_term(Am, Bm, mu)
            fd = finite_diff(lambda M: ob.penalty(Am, M, mu), Bm)
            assert rel_err(term.grad_Abar, fd) <= 1e-4

    def test_grad_A_full_fd(self):
        rng = np.random.default_rng(21)
        hp = ob.Hyperparams(lam=2.0, gamma=0.0, mu=1e-3)
        task = make_task(rng, n=20)
        A0 = rng.standard_normal((6, 2))  # ambient point, simple top eigpair
        B = mf.random_stiefel(6, 2, rng)
        theta = rng.standard_normal(2)
        g = ob.grad_A_euclid(task, A0, theta, B, hp)

        def obj(M):
            return (ob.loss_value(task, M @ theta)
                    + hp.lam / math.sqrt(task.n) * ob.penalty(M, B, hp.mu))

        assert rel_err(g, finite_diff(obj, A0)) <= 1e-4

    def test_grad_Abar_fd_multi_task(self):
        # ambient-extension gradient: checked at generic (non-orthonormal)
        # points where every task's gap spectrum has a simple top eigenvalue
        rng = np.random.default_rng(22)
        hp = ob.Hyperparams(lam=1.5, gamma=0.0, mu=1e-3)
        tasks = [make_task(rng, n=12) for _ in range(3)]
        pairs = [simple_top_pair(rng) for _ in range(3)]
        A = [p[0] for p in pairs]
        Abar = pairs[0][1]
        state = ob.ModelState(A=A, theta=[rng.standard_normal(2)] * 3,
                              Abar=Abar)
        g = ob.grad_Abar_euclid(state, tasks, hp)

        def obj(M):
            return sum(
                hp.lam / math.sqrt(t.n) * ob.penalty(a, M, hp.mu)
                for t, a in zip(tasks, A)
            )

        fd = finite_diff(obj, Abar.copy())
        assert rel_err(g, fd) <= 1e-4

    def test_grad_Abar_zero_when_all_aligned(self):
        rng = np.random.default_rng(23)
        A = mf.random_stiefel(6, 2, rng)
        tasks = [make_task(rng, n=10) for _ in range(2)]
        state = ob.ModelState(A=[A, A], theta=[np.zeros(2)] * 2, Abar=A)
        hp = ob.Hyperparams(lam=2.0, gamma=0.0)
        g = ob.grad_Abar_euclid(state, tasks, hp)
        assert np.linalg.norm(g) <= 1e-12

    def test_single_task_shared_eigpair_structure(self):
        # with T = 1 the center gradient is built from the same eigenvector
        # outer product as the task gradient's penalty part:
        # grad_A = c v (v^T A), grad_Abar = -c v (v^T B)
        rng = np.random.default_rng(24)
        A = mf.random_stiefel(6, 2, rng)
        B = mf.random_stiefel(6, 2, rng)
        term = ob.penalty_term(A.matrix, B.matrix, 1e-3)
        uA = np.linalg.svd(term.grad_A)[0][:, 0]
        uB = np.linalg.svd(term.grad_Abar)[0][:, 0]
        assert abs(abs(uA @ uB) - 1.0) <= 1e-8  # same eigenvector direction
        cA = np.linalg.norm(term.grad_A) / np.linalg.norm(uA @ A.matrix)
        cB = np.linalg.norm(term.grad_Abar) / np.linalg.norm(uB @ B.matrix)
        assert cA == pytest.approx(cB, rel=1e-8)  # same scalar weight


class TestStep1Objective:
    def _small_state(self, rng, T=3, n=5, p=4, r=2):
        tasks = [make_task(rng, n=n, p=p) for _ in range(T)]
        A = [mf.random_stiefel(p, r, rng) for _ in range(T)]
        theta = [rng.standard_normal(r) for _ in range(T)]
        Abar = mf.random_stiefel(p, r, rng)
        return tasks, ob.ModelState(A=A, theta=theta, Abar=Abar)

    def test_zero_when_perfect_and_lam0(self):
        rng = np.random.default_rng(25)
        p, r = 4, 2
        A = mf.random_stiefel(p, r, rng)
        theta = rng.standard_normal(r)
        X = rng.standard_normal((9, p))
        tasks = [ob.TaskData(X=X, y=X @ (A.matrix @ theta))]
        state = ob.ModelState(A=[A], theta=[theta], Abar=A)
        hp = ob.Hyperparams(lam=0.0, gamma=0.0)
        assert ob.step1_objective(state, tasks, hp) == pytest.approx(0.0,
                                                                     abs=1e-20)

    def test_single_task_aligned_equals_loss(self):
        rng = np.random.default_rng(26)
        tasks, state = self._small_state(rng, T=1)
        state = ob.ModelState(A=state.A, theta=state.theta, Abar=state.A[0])
        hp = ob.Hyperparams(lam=4.0, gamma=0.0, mu=0.0)
        expected = ob.loss_value(tasks[0], ob.beta_of(state.A[0],
                                                      state.theta[0]))
        assert ob.step1_objective(state, tasks, hp) == pytest.approx(
            expected, abs=1e-12)

    def test_term_by_term_oracle(self):
        rng = np.random.default_rng(27)
        tasks, state = self._small_state(rng)
        hp = ob.Hyperparams(lam=1.3, gamma=0.0, mu=1e-3)
        total = sum(
            ob.loss_value(t, ob.beta_of(a, th))
            + hp.lam / math.sqrt(t.n) * ob.penalty(a, state.Abar, hp.mu)
            for t, a, th in zip(tasks, state.A, state.theta)
        )
        assert ob.step1_objective(state, tasks, hp) == pytest.approx(
            total, abs=1e-12)
