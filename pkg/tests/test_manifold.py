"""Stiefel geometry: frozen examples, oracle comparisons, and invariant sweeps."""

import numpy as np
import pytest

from geoerm import manifold as mf
from geoerm.errors import (
    DegenerateMatrixError,
    DimensionError,
    NotPositiveDefiniteError,
)

RNG = lambda seed: np.random.default_rng(seed)  # noqa: E731


def random_point_and_tangent(rng, p, r, scale=1.0):
    A = mf.random_stiefel(p, r, rng)
    H = mf.project_tangent(A, scale * rng.standard_normal((p, r)))
    return A, H


class TestStiefelPoint:
    def test_accepts_orthonormal(self):
        A = mf.StiefelPoint(np.eye(4)[:, :2])
        assert A.p == 4 and A.r == 2

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            mf.StiefelPoint(np.ones((3, 2)))

    def test_rejects_r_greater_than_p(self):
        with pytest.raises(DimensionError):
            mf.StiefelPoint(np.eye(2, 3))

    def test_tangent_vector_rejects_normal_direction(self):
        A = mf.StiefelPoint(np.eye(3)[:, :1])
        with pytest.raises(ValueError):
            mf.TangentVector(base=A, matrix=A.matrix.copy())


class TestSym:
    def test_direct_formula(self):
        out = mf.sym(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert np.allclose(out, [[1.0, 2.5], [2.5, 4.0]])

    def test_identity_fixed_point(self):
        assert np.array_equal(mf.sym(np.eye(3)), np.eye(3))

    def test_skew_annihilation(self):
        out = mf.sym(np.array([[0.0, -1.0], [1.0, 0.0]]))
        assert np.array_equal(out, np.zeros((2, 2)))

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            mf.sym(np.ones((2, 3)))


class TestProjectTangent:
    def test_analytic_2d(self):
        A = mf.StiefelPoint(np.array([[1.0], [0.0]]))
        H = mf.project_tangent(A, np.array([[3.0], [4.0]]))
        assert np.allclose(H.matrix, [[0.0], [4.0]])

    def test_normal_space_annihilation(self):
        rng = RNG(10)
        A = mf.random_stiefel(7, 3, rng)
        S = mf.sym(rng.standard_normal((3, 3)))
        out = mf.project_tangent(A, A.matrix @ S)
        assert np.linalg.norm(out.matrix) <= 1e-10

    def test_idempotent_and_skew(self):
        rng = RNG(11)
        A = mf.random_stiefel(10, 3, rng)
        G = rng.standard_normal((10, 3))
        P1 = mf.project_tangent(A, G).matrix
        P2 = mf.project_tangent(A, P1).matrix
        assert np.linalg.norm(P2 - P1) <= 1e-10
        assert np.linalg.norm(mf.sym(A.matrix.T @ P1)) <= 1e-10

    def test_self_adjoint(self):
        rng = RNG(12)
        A = mf.random_stiefel(8, 2, rng)
        G = rng.standard_normal((8, 2))
        K = rng.standard_normal((8, 2))
        lhs = float(np.sum(mf.project_tangent(A, G).matrix * K))
        rhs = float(np.sum(G * mf.project_tangent(A, K).matrix))
        assert abs(lhs - rhs) <= 1e-10

    def test_orthogonal_decomposition(self):
        rng = RNG(13)
        A = mf.random_stiefel(9, 4, rng)
        G = rng.standard_normal((9, 4))
        recon = mf.project_tangent(A, G).matrix + A.matrix @ mf.sym(A.matrix.T @ G)
        assert np.linalg.norm(recon - G) <= 1e-12

    def test_shape_mismatch_rejected(self):
        A = mf.StiefelPoint(np.eye(3)[:, :2])
        with pytest.raises(DimensionError):
            mf.project_tangent(A, np.ones((4, 2)))


class TestPolarRetract:
    def test_analytic_2d(self):
        A = mf.StiefelPoint(np.array([[1.0], [0.0]]))
        out = mf.polar_retract(A, np.array([[0.0], [1.0]]))
        assert np.allclose(out.matrix, [[1.0 / np.sqrt(2)], [1.0 / np.sqrt(2)]])

    def test_zero_step_is_identity(self):
        rng = RNG(20)
        A = mf.random_stiefel(6, 3, rng)
        out = mf.polar_retract(A, np.zeros((6, 3)))
        assert np.linalg.norm(out.matrix - A.matrix) <= 1e-12

    def test_matches_svd_route(self):
        rng = RNG(21)
        A, H = random_point_and_tangent(rng, 8, 3)
        gram = mf.polar_retract(A, H)
        svd = mf.polar_retract_svd(A, H)
        assert np.linalg.norm(gram.matrix - svd.matrix) <= 1e-10

    def test_local_rigidity(self):
        # (R(tH) - A)/t -> H linearly in t: the differential at 0 is identity
        rng = RNG(22)
        A, H = random_point_and_tangent(rng, 7, 3)
        errs = []
        for t in (1e-2, 1e-3, 1e-4):
            R = mf.polar_retract(A, t * H.matrix)
            errs.append(np.linalg.norm((R.matrix - A.matrix) / t - H.matrix))
        C = max(e / t for e, t in zip(errs, (1e-2, 1e-3, 1e-4)))
        assert np.isfinite(C)
        assert errs[1] / errs[0] <= 0.3
        assert errs[2] / errs[1] <= 0.3


class TestPolarRetractSvd:
    def test_already_orthonormal(self):
        rng = RNG(30)
        A = mf.random_stiefel(5, 2, rng)
        out = mf.polar_retract_svd(A, np.zeros((5, 2)))
        assert np.linalg.norm(out.matrix - A.matrix) <= 1e-12

    def test_matches_gram_analytic(self):
        A = mf.StiefelPoint(np.array([[1.0], [0.0]]))
        out = mf.polar_retract_svd(A, np.array([[0.0], [1.0]]))
        assert np.allclose(out.matrix, [[1.0 / np.sqrt(2)], [1.0 / np.sqrt(2)]])

    def test_nearest_among_random_candidates(self):
        # no random orthonormal candidate comes closer in Frobenius norm
        rng = RNG(31)
        A, H = random_point_and_tangent(rng, 4, 2)
        M = A.matrix + H.matrix
        out = mf.polar_retract_svd(A, H).matrix
        d_out = np.linalg.norm(M - out)
        G = rng.standard_normal((100_000, 4, 2))
        Q, _ = np.linalg.qr(G)
        d_rand = np.linalg.norm(M[None, :, :] - Q, axis=(1, 2))
        assert d_out <= d_rand.min() + 1e-12

    def test_degenerate_rejected(self):
        A = mf.StiefelPoint(np.eye(3)[:, :2])
        # A + H with a zeroed-out column is rank deficient
        H = -A.matrix
        with pytest.raises(DegenerateMatrixError):
            mf.polar_retract_svd(A, H)


class TestNearestOrthonormal:
    def test_fixed_point(self):
        rng = RNG(40)
        A = mf.random_stiefel(6, 3, rng)
        out = mf.nearest_orthonormal(A.matrix)
        assert np.linalg.norm(out.matrix - A.matrix) <= 1e-12

    def test_scaling_invariance(self):
        rng = RNG(41)
        A = mf.random_stiefel(6, 2, rng)
        out = mf.nearest_orthonormal(2.0 * A.matrix)
        assert np.linalg.norm(out.matrix - A.matrix) <= 1e-12

    def test_random_search_oracle(self):
        rng = RNG(42)
        M = rng.standard_normal((6, 2))
        out = mf.nearest_orthonormal(M).matrix
        d_out = np.linalg.norm(M - out)
        G = rng.standard_normal((10_000, 6, 2))
        Q, _ = np.linalg.qr(G)
        d_rand = np.linalg.norm(M[None, :, :] - Q, axis=(1, 2))
        assert d_out <= d_rand.min() + 1e-12

    def test_rank_deficient_rejected(self):
        M = np.ones((4, 2))
        with pytest.raises(DegenerateMatrixError):
            mf.nearest_orthonormal(M)


class TestInvSqrtSpd:
    def test_identity(self):
        assert np.allclose(mf.inv_sqrt_spd(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        out = mf.inv_sqrt_spd(np.diag([4.0, 9.0]))
        assert np.allclose(out, np.diag([0.5, 1.0 / 3.0]))

    def test_residual_oracle(self):
        rng = RNG(50)
        B = rng.standard_normal((5, 5))
        M = B @ B.T + 0.5 * np.eye(5)
        out = mf.inv_sqrt_spd(M)
        assert np.linalg.norm(out @ M @ out - np.eye(5)) <= 1e-9

    def test_not_spd_rejected(self):
        with pytest.raises(NotPositiveDefiniteError):
            mf.inv_sqrt_spd(np.diag([1.0, -1.0]))


class TestRandomStiefel:
    def test_square_case_is_orthogonal(self):
        A = mf.random_stiefel(5, 5, RNG(60))
        assert abs(abs(np.linalg.det(A.matrix)) - 1.0) <= 1e-10

    def test_deterministic(self):
        a = mf.random_stiefel(7, 3, RNG(61)).matrix
        b = mf.random_stiefel(7, 3, RNG(61)).matrix
        assert np.array_equal(a, b)

    def test_invariant_sweep(self):
        rng = RNG(62)
        for _ in range(100):
            A = mf.random_stiefel(50, 5, rng)
            defect = np.linalg.norm(A.matrix.T @ A.matrix - np.eye(5))
            assert defect <= 1e-8

    def test_r_greater_than_p_rejected(self):
        with pytest.raises(DimensionError):
            mf.random_stiefel(2, 3, RNG(63))


def tangent_basis_rank(p, r, rng):
    """Independent oracle: rank of the flattened spanning set
    {A Omega_ij} union {A_perp E_kl}."""
    A = mf.random_stiefel(p, r, rng).matrix
    U = np.linalg.svd(A, full_matrices=True)[0]
    Aperp = U[:, r:]
    rows = []
    for i in range(r):
        for j in range(i + 1, r):
            Om = np.zeros((r, r))
            Om[i, j], Om[j, i] = 1.0, -1.0
            rows.append((A @ Om).ravel())
    for k in range(p - r):
        for l in range(r):
            E = np.zeros((p - r, r))
            E[k, l] = 1.0
            rows.append((Aperp @ E).ravel())
    return int(np.linalg.matrix_rank(np.stack(rows), tol=1e-10))


class TestManifoldDim:
    def test_paper_value(self):
        assert mf.manifold_dim(3, 2) == 3

    def test_sphere_case(self):
        for p in (2, 5, 11):
            assert mf.manifold_dim(p, 1) == p - 1

    def test_tangent_basis_rank_oracle(self):
        rng = RNG(70)
        for p, r in ((3, 2), (5, 3), (8, 4)):
            assert mf.manifold_dim(p, r) == tangent_basis_rank(p, r, rng)

    def test_invalid_dims_rejected(self):
        with pytest.raises(DimensionError):
            mf.manifold_dim(2, 3)


class TestIsTangent:
    def test_projection_contract(self):
        rng = RNG(80)
        A = mf.random_stiefel(6, 2, rng)
        H = mf.project_tangent(A, rng.standard_normal((6, 2)))
        assert mf.is_tangent(A, H.matrix, tol=1e-8)

    def test_normal_direction(self):
        rng = RNG(81)
        for r in (1, 2, 4):
            A = mf.random_stiefel(6, r, rng)
            assert not mf.is_tangent(A, A.matrix @ np.eye(r), tol=1e-8)

    def test_constructive_skew_family(self):
        rng = RNG(82)
        A = mf.random_stiefel(7, 3, rng)
        W = rng.standard_normal((3, 3))
        Om = W - W.T
        assert mf.is_tangent(A, A.matrix @ Om, tol=1e-10)


class TestInvariantSweeps:
    def test_retraction_orthonormality_large_steps(self):
        rng = RNG(90)
        for _ in range(50):
            p = int(rng.integers(2, 40))
            r = int(rng.integers(1, min(p, 8) + 1))
            A, H = random_point_and_tangent(rng, p, r)
            Hm = H.matrix
            norm = np.linalg.norm(Hm)
            if norm > 0:
                Hm = Hm * (10.0 / norm)  # stress ||H||_F up to 10
            R = mf.polar_retract(A, Hm)
            defect = np.linalg.norm(R.matrix.T @ R.matrix - np.eye(r))
            assert defect <= 1e-8

    def test_oracle_equivalence_sweep(self):
        rng = RNG(91)
        for _ in range(200):
            p = int(rng.integers(2, 51))
            r = int(rng.integers(1, min(p, 10) + 1))
            A, H = random_point_and_tangent(rng, p, r)
            a = mf.polar_retract(A, H).matrix
            b = mf.polar_retract_svd(A, H).matrix
            assert np.linalg.norm(a - b) <= 1e-9
