import numpy as np
import pytest

from salfuse import jsc
from oracles import fista_group_lasso, jsc_objective_loops, random_dicts


def _instance(rng, M=3, n=12, d=20, scale=1.0):
    D = random_dicts(rng, M, n, d)
    A = np.zeros((d, M))
    rows = rng.choice(d, 3, replace=False)
    A[rows] = rng.standard_normal((3, M))
    x = [scale * (D[s] @ A[:, s] + 0.05 * rng.standard_normal(n)) for s in range(M)]
    return x, D


class TestOptimality:
    def test_kkt_certified(self, rng):
        for _ in range(20):
            x, D = _instance(rng, M=int(rng.integers(1, 5)))
            code = jsc.encode(x, D)
            assert code.converged
            assert jsc.kkt_residual(x, D, code.A) <= 1e-6

    def test_matches_fista(self, rng):
        p = jsc.JscParams(tol=1e-12)
        for _ in range(5):
            x, D = _instance(rng, n=10, d=8)
            A = jsc.encode(x, D, p).A
            ref = fista_group_lasso(x, D, p.lambda1, p.lambda2)
            assert jsc.objective(x, D, A, p) <= jsc.objective(x, D, ref, p) + 1e-8

    def test_row_sparsity_shared(self, rng):
        x, D = _instance(rng)
        A = jsc.encode(x, D).A
        zero = np.linalg.norm(A, axis=1) == 0
        assert np.all(A[zero] == 0) and zero.any()

    def test_large_lambda_gives_zero(self, rng):
        x, D = _instance(rng)
        p = jsc.JscParams(lambda1=1e3)
        code = jsc.encode(x, D, p)
        assert np.all(code.A == 0) and code.active_rows.size == 0

    def test_zero_signal(self, rng):
        D = random_dicts(rng, 2, 6, 5)
        code = jsc.encode([np.zeros(6), np.zeros(6)], D)
        assert np.all(code.A == 0) and code.converged

    def test_orthonormal_closed_form(self, rng):
        # with orthonormal atoms each row is a group soft threshold
        Q = np.linalg.qr(rng.standard_normal((8, 8)))[0]
        x = [rng.standard_normal(8), rng.standard_normal(8)]
        p = jsc.JscParams(lambda1=0.5, lambda2=0.1)
        C = np.stack([Q.T @ xs for xs in x], axis=1)
        nrm = np.linalg.norm(C, axis=1, keepdims=True)
        want = C * np.maximum(0, 1 - p.lambda1 / nrm) / (1 + p.lambda2)
        np.testing.assert_allclose(jsc.encode(x, [Q, Q], p).A, want, atol=1e-10)


class TestSolverBehaviour:
    def test_objective_non_increasing_with_budget(self, rng):
        x, D = _instance(rng, d=30)
        vals = []
        for budget in (1, 2, 4, 8, 16, 64):
            p = jsc.JscParams(max_iter=budget, polish=False)
            vals.append(jsc.objective(x, D, jsc.encode(x, D, p).A, p))
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_budget_exhaustion_reported(self, rng):
        x, D = _instance(rng, d=40, scale=5.0)
        code = jsc.encode(x, D, jsc.JscParams(max_iter=1, polish=False, tol=1e-12))
        assert not code.converged and code.n_iter <= 1

    def test_warm_start_agrees(self, rng):
        p = jsc.JscParams(tol=1e-11)
        x, D = _instance(rng)
        cold = jsc.encode(x, D, p).A
        warm = jsc.encode(x, D, p, A0=rng.standard_normal(cold.shape)).A
        np.testing.assert_allclose(warm, cold, atol=1e-6)

    def test_deterministic(self, rng):
        x, D = _instance(rng)
        np.testing.assert_array_equal(jsc.encode(x, D).A, jsc.encode(x, D).A)

    def test_non_finite_rejected(self, rng):
        x, D = _instance(rng)
        x[0][0] = np.nan
        with pytest.raises(FloatingPointError):
            jsc.encode(x, D)

    def test_shape_checks(self, rng):
        x, D = _instance(rng)
        with pytest.raises(ValueError):
            jsc.encode(x[:2], D)
        with pytest.raises(ValueError):
            jsc.encode(x, D, A0=np.zeros((3, 3)))
        with pytest.raises(ValueError):
            jsc.JscParams(lambda2=0.0)

    def test_batch_matches_single(self, rng):
        D = random_dicts(rng, 2, 9, 10)
        X = rng.random((4, 2, 9))
        X[1] = 0
        B = jsc.encode_batch(X, D)
        np.testing.assert_array_equal(B[1], 0)
        np.testing.assert_array_equal(B[2], jsc.encode(list(X[2]), D).A)


class TestHelpers:
    def test_objective_against_loops(self, rng):
        x, D = _instance(rng, n=5, d=4)
        A = rng.standard_normal((4, 3))
        p = jsc.JscParams()
        assert jsc.objective(x, D, A, p) == pytest.approx(
            jsc_objective_loops(x, D, A, p.lambda1, p.lambda2), rel=1e-12)

    def test_smooth_gradient_finite_difference(self, rng):
        x, D = _instance(rng, n=5, d=4)
        A = rng.standard_normal((4, 3))
        p = jsc.JscParams(lambda1=0.0)
        G = jsc.smooth_gradient(x, D, A, p)
        E = np.zeros_like(A)
        E[2, 1] = 1e-6
        fd = (jsc.objective(x, D, A + E, p) - jsc.objective(x, D, A - E, p)) / 2e-6
        assert G[2, 1] == pytest.approx(fd, rel=1e-6)

    def test_active_set(self):
        A = np.zeros((5, 2))
        A[3, 1] = 1e-300
        A[1] = 2.0
        np.testing.assert_array_equal(jsc.active_set(A), [1, 3])
