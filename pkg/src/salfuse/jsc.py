"""Joint sparse coding across modalities (row-group lasso with a ridge term).

Given ``M`` observations ``x^s`` and dictionaries ``D^s`` sharing ``d`` atoms,
find the code matrix ``A`` (``d x M``, column ``s`` codes modality ``s``)
minimising::

    1/2 sum_s ||x^s - D^s a^s||^2 + lam1 sum_j ||A[j, :]||_2 + lam2/2 ||A||_F^2

The row penalty makes every atom either active in all modalities or in none.
The solver keeps a working set of rows: outside it the full gradient
``D^T (D A - x)`` is checked against the optimality conditions and the worst
violators are admitted.  Inside it, cyclic block coordinate descent (each row
subproblem has an exact solution) runs until the zero pattern settles, then
damped Newton steps on the active rows finish the job; with coherent
dictionaries and a small ridge weight BCD alone converges very slowly.  The
stopping rule is the global optimality residual, not an iterate change.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

ZERO_ROW = 1e-12


@dataclass(frozen=True)
class JscParams:
    lambda1: float = 0.015
    lambda2: float = 0.002
    max_iter: int = 300
    tol: float = 1e-7
    # Newton refinement on the active rows after every sweep
    polish: bool = True
    # rows admitted per round of the working-set loop (at least)
    working_set: int = 10

    def __post_init__(self):
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be non-negative")
        if self.lambda2 <= 0:
            raise ValueError("lambda2 must be positive")


@dataclass(frozen=True)
class JointCode:
    A: np.ndarray
    active_rows: np.ndarray
    converged: bool = True
    n_iter: int = 0

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.A.shape[1]


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _solve_row(c, q, lam1, lam2, out):
    """Minimise ``sum_s (q_s + lam2)/2 a_s^2 - c_s a_s + lam1 ||a||`` into ``out``."""
    m = c.shape[0]
    cn = 0.0
    for s in range(m):
        cn += c[s] * c[s]
    cn = np.sqrt(cn)
    if cn <= lam1 or cn == 0.0:
        for s in range(m):
            out[s] = 0.0
        return
    if lam1 == 0.0:
        for s in range(m):
            out[s] = c[s] / (q[s] + lam2)
        return
    qmax = q[0]
    qmin = q[0]
    for s in range(1, m):
        qmax = max(qmax, q[s])
        qmin = min(qmin, q[s])
    if qmax - qmin <= 1e-15 * qmax:
        scale = (1.0 - lam1 / cn) / (qmax + lam2)
        for s in range(m):
            out[s] = c[s] * scale
        return
    # row norm t solves sum_s c_s^2 / ((q_s + lam2) t + lam1)^2 = 1; the left
    # side is convex and decreasing, so Newton from below converges monotonically
    t = (cn - lam1) / (qmax + lam2)
    for _ in range(200):
        psi = 0.0
        dpsi = 0.0
        for s in range(m):
            h = q[s] + lam2
            den = h * t + lam1
            psi += c[s] * c[s] / (den * den)
            dpsi -= 2.0 * c[s] * c[s] * h / (den * den * den)
        step = (psi - 1.0) / dpsi
        t -= step
        if abs(step) <= 1e-16 * t:
            break
    for s in range(m):
        out[s] = c[s] * t / ((q[s] + lam2) * t + lam1)


@numba.njit(cache=True)
def _kkt(g, A, lam1, lam2):
    d, M = A.shape
    worst = 0.0
    for j in range(d):
        nrm = 0.0
        for s in range(M):
            nrm += A[j, s] * A[j, s]
        nrm = np.sqrt(nrm)
        if nrm > 0.0:
            for s in range(M):
                worst = max(worst, abs(g[j, s] + lam2 * A[j, s] + lam1 * A[j, s] / nrm))
        else:
            gn = 0.0
            for s in range(M):
                gn += g[j, s] * g[j, s]
            worst = max(worst, np.sqrt(gn) - lam1)
    return worst


@numba.njit(cache=True)
def _restricted_value(S, Z, G, b, lam1, lam2):
    """Objective (up to the constant ``|x|^2 / 2``) with only rows ``S`` non-zero."""
    k, M = Z.shape
    f = 0.0
    for i in range(k):
        nrm = 0.0
        for s in range(M):
            z = Z[i, s]
            if z == 0.0:
                continue
            nrm += z * z
            acc = 0.0
            for l in range(k):
                acc += G[S[l], s, S[i]] * Z[l, s]
            f += 0.5 * z * acc - b[S[i], s] * z + 0.5 * lam2 * z * z
        f += lam1 * np.sqrt(nrm)
    return f


@numba.njit(cache=True)
def _newton(G, b, g, A, lam1, lam2, tol, max_steps):
    """Damped Newton on the non-zero rows of ``A``; keeps ``g`` in sync.

    Rows whose direction flips along a trial step are set to zero, which is
    what an exact row update would do at the kink.
    """
    d, M = A.shape
    for _ in range(max_steps):
        k = 0
        for j in range(d):
            for s in range(M):
                if A[j, s] != 0.0:
                    k += 1
                    break
        if k == 0:
            return
        S = np.empty(k, np.int64)
        k = 0
        for j in range(d):
            for s in range(M):
                if A[j, s] != 0.0:
                    S[k] = j
                    k += 1
                    break
        K = k * M
        H = np.zeros((K, K))
        grad = np.empty(K)
        Z = np.empty((k, M))
        for i in range(k):
            j = S[i]
            nrm = 0.0
            for s in range(M):
                Z[i, s] = A[j, s]
                nrm += A[j, s] * A[j, s]
            nrm = np.sqrt(nrm)
            for s in range(M):
                grad[i * M + s] = g[j, s] + lam2 * A[j, s] + lam1 * A[j, s] / nrm
                for s2 in range(M):
                    h = -lam1 * A[j, s] * A[j, s2] / (nrm * nrm * nrm)
                    if s == s2:
                        h += lam1 / nrm + lam2
                    H[i * M + s, i * M + s2] += h
                for l in range(k):
                    H[i * M + s, l * M + s] += G[S[l], s, j]
        worst = 0.0
        for r in range(K):
            worst = max(worst, abs(grad[r]))
        if worst <= tol:
            return
        L = np.linalg.cholesky(H)
        # solve L L^T p = -grad
        p = -grad.copy()
        for r in range(K):
            acc = p[r]
            for c in range(r):
                acc -= L[r, c] * p[c]
            p[r] = acc / L[r, r]
        for r in range(K - 1, -1, -1):
            acc = p[r]
            for c in range(r + 1, K):
                acc -= L[c, r] * p[c]
            p[r] = acc / L[r, r]
        dec = 0.0
        for r in range(K):
            dec -= grad[r] * p[r]
        if not np.isfinite(dec) or dec <= 0.0:
            return
        t = 1.0
        if dec > 1e-2 * tol * tol:
            f0 = _restricted_value(S, Z, G, b, lam1, lam2)
            cand = np.empty((k, M))
            while True:
                for i in range(k):
                    dot = 0.0
                    for s in range(M):
                        cand[i, s] = Z[i, s] + t * p[i * M + s]
                        dot += cand[i, s] * Z[i, s]
                    if dot <= 0.0:
                        for s in range(M):
                            cand[i, s] = 0.0
                if _restricted_value(S, cand, G, b, lam1, lam2) <= f0 - 1e-4 * t * dec:
                    break
                t *= 0.5
                if t < 1e-3:
                    # stalled at a kink; the next sweep settles the row exactly
                    return
        else:
            cand = np.empty((k, M))
            for i in range(k):
                for s in range(M):
                    cand[i, s] = Z[i, s] + p[i * M + s]
        for i in range(k):
            j = S[i]
            for s in range(M):
                delta = cand[i, s] - A[j, s]
                if delta != 0.0:
                    for q in range(d):
                        g[q, s] += G[j, s, q] * delta
                    A[j, s] = cand[i, s]
        if dec <= 1e-2 * tol * tol:
            return


@numba.njit(cache=True)
def _sub_solve(G, b, q, A, lam1, lam2, tol, max_sweeps, newton):
    """Solve on a fixed set of rows given their Gram tensor ``G[j, s, l]``.

    ``b[j, s] = d_j^s . x^s`` and ``q[j, s] = G[j, s, j]``.  Returns
    ``(sweeps, kkt)``.
    """
    k, M = A.shape
    g = -b.copy()
    for j in range(k):
        for s in range(M):
            a = A[j, s]
            if a != 0.0:
                for l in range(k):
                    g[l, s] += G[j, s, l] * a
    c = np.empty(M)
    qj = np.empty(M)
    new = np.empty(M)
    sweeps = 0
    while True:
        kkt = _kkt(g, A, lam1, lam2)
        if kkt <= tol or sweeps >= max_sweeps:
            break
        sweeps += 1
        flips = 0
        for j in range(k):
            was = False
            for s in range(M):
                c[s] = q[j, s] * A[j, s] - g[j, s]
                qj[s] = q[j, s]
                was = was or A[j, s] != 0.0
            _solve_row(c, qj, lam1, lam2, new)
            nrm = 0.0
            for s in range(M):
                nrm += new[s] * new[s]
            if np.sqrt(nrm) < ZERO_ROW:
                nrm = 0.0
                for s in range(M):
                    new[s] = 0.0
            if was != (nrm > 0.0):
                flips += 1
            for s in range(M):
                delta = new[s] - A[j, s]
                if delta != 0.0:
                    for l in range(k):
                        g[l, s] += G[j, s, l] * delta
                    A[j, s] = new[s]
        # Newton only pays off once the sweep no longer changes the support
        if newton and flips == 0:
            _newton(G, b, g, A, lam1, lam2, tol, 20)
    return sweeps, kkt


@numba.njit(cache=True)
def _solve(D, X, A, lam1, lam2, max_sweeps, tol, newton, grow):
    """Working-set solver; ``A`` is updated in place.

    The rows in the working set are solved exactly; then the full gradient
    ``D^T (D A - x)`` is formed once, and the worst KKT violators outside
    the set are admitted.  Returns ``(sweeps, kkt)`` with the global KKT
    residual.
    """
    M, n, d = D.shape
    inw = np.zeros(d, np.bool_)
    for j in range(d):
        for s in range(M):
            if A[j, s] != 0.0:
                inw[j] = True
    R = np.empty((M, n))
    gfull = np.empty((d, M))
    viol = np.empty(d)
    sweeps = 0
    kkt = np.inf
    while True:
        # residual and full gradient of the fit term
        for s in range(M):
            for i in range(n):
                R[s, i] = X[s, i]
            for j in range(d):
                a = A[j, s]
                if a != 0.0:
                    for i in range(n):
                        R[s, i] -= D[s, i, j] * a
            for j in range(d):
                gfull[j, s] = 0.0
            for i in range(n):
                r = R[s, i]
                if r != 0.0:
                    for j in range(d):
                        gfull[j, s] -= D[s, i, j] * r
        kkt = _kkt(gfull, A, lam1, lam2)
        if kkt <= tol or sweeps >= max_sweeps:
            break
        # admit violators outside the working set, worst first
        n_out = 0
        for j in range(d):
            viol[j] = -1.0
            if not inw[j]:
                gn = 0.0
                for s in range(M):
                    gn += gfull[j, s] * gfull[j, s]
                v = np.sqrt(gn) - lam1
                if v > tol:
                    viol[j] = v
                    n_out += 1
        k_in = 0
        for j in range(d):
            if inw[j]:
                k_in += 1
        n_add = min(n_out, max(grow, k_in))
        # while rows are still being admitted the inner solve need not be exact
        sub_tol = tol
        if n_add > 0:
            sub_tol = max(tol, 0.1 * viol.max())
        if n_add > 0:
            order = np.argsort(-viol)
            for t in range(n_add):
                inw[order[t]] = True
        S = np.flatnonzero(inw)
        k = S.size
        Dw = np.empty((M, n, k))
        for s in range(M):
            for i in range(n):
                for t in range(k):
                    Dw[s, i, t] = D[s, i, S[t]]
        G = np.empty((k, M, k))
        b = np.empty((k, M))
        q = np.empty((k, M))
        Aw = np.empty((k, M))
        for s in range(M):
            Gs = np.dot(Dw[s].T, Dw[s])
            bs = np.dot(Dw[s].T, X[s])
            for t in range(k):
                b[t, s] = bs[t]
                q[t, s] = Gs[t, t]
                Aw[t, s] = A[S[t], s]
                for u in range(k):
                    G[t, s, u] = Gs[t, u]
        used, _ = _sub_solve(G, b, q, Aw, lam1, lam2, sub_tol, max_sweeps - sweeps, newton)
        sweeps += max(used, 1)
        for t in range(k):
            j = S[t]
            nz = False
            for s in range(M):
                A[j, s] = Aw[t, s]
                if Aw[t, s] != 0.0:
                    nz = True
            # rows that settled at zero leave the set; they may come back
            inw[j] = nz
    return sweeps, kkt


# ---------------------------------------------------------------------------
# public surface


def stack_dicts(D) -> np.ndarray:
    """Stack per-modality dictionaries into ``(M, n_max, d)``; short ones are zero-padded.

    Padding with zero rows (and zero signal entries) leaves the problem unchanged.
    """
    D = [np.asarray(Ds, dtype=np.float64) for Ds in D]
    d = D[0].shape[1]
    if any(Ds.ndim != 2 or Ds.shape[1] != d for Ds in D):
        raise ValueError("all dictionaries need the same number of atoms")
    n = max(Ds.shape[0] for Ds in D)
    out = np.zeros((len(D), n, d))
    for s, Ds in enumerate(D):
        out[s, :Ds.shape[0]] = Ds
    return out


def stack_signals(x, n_max: int) -> np.ndarray:
    x = [np.asarray(xs, dtype=np.float64).ravel() for xs in x]
    out = np.zeros((len(x), n_max))
    for s, xs in enumerate(x):
        out[s, :xs.size] = xs
    return out


def _check(x, D):
    if len(x) != len(D):
        raise ValueError(f"{len(x)} signals for {len(D)} dictionaries")
    for s, (xs, Ds) in enumerate(zip(x, D)):
        if np.size(xs) != np.shape(Ds)[0]:
            raise ValueError(f"modality {s}: signal length {np.size(xs)} != dictionary rows {np.shape(Ds)[0]}")


def active_set(A: np.ndarray) -> np.ndarray:
    """Indices of rows of ``A`` with non-zero l2 norm, ascending."""
    # test entries rather than the norm, which underflows for tiny rows
    return np.flatnonzero(np.any(np.asarray(A) != 0, axis=1))


def encode(x, D, params: JscParams = JscParams(), A0=None) -> JointCode:
    """Joint sparse code of one multimodal sample.

    Parameters
    ----------
    x : sequence of M 1-D arrays
        Per-modality signals ``x^s``.
    D : sequence of M (n^s, d) arrays
        Dictionaries.  The solver is exact for any atom norms; the closed-form
        group soft-threshold is used when a row's atoms share one norm.
    params : JscParams
    A0 : (d, M) array, optional
        Warm start.

    Returns
    -------
    JointCode
        ``converged`` is False when the sweep budget ``max_iter`` ran out
        before the optimality residual dropped below ``tol``; ``A`` is then
        the last (lowest-objective) iterate.
    """
    _check(x, D)
    Dst = stack_dicts(D)
    X = stack_signals(x, Dst.shape[1])
    d, M = Dst.shape[2], Dst.shape[0]
    A = np.zeros((d, M)) if A0 is None else np.array(A0, dtype=np.float64, copy=True)
    if A.shape != (d, M):
        raise ValueError(f"warm start has shape {A.shape}, expected {(d, M)}")
    lam1, lam2, tol = float(params.lambda1), float(params.lambda2), float(params.tol)

    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Dst)) and np.all(np.isfinite(A))):
        raise FloatingPointError("non-finite input to the sparse coder")
    sweeps, kkt = _solve(Dst, X, A, lam1, lam2, int(params.max_iter), tol,
                         bool(params.polish), int(params.working_set))
    return JointCode(A, active_set(A), bool(kkt <= tol), int(sweeps))


def encode_batch(X: np.ndarray, D, params: JscParams = JscParams()) -> np.ndarray:
    """Codes for many samples, one :func:`encode` call each.

    ``X`` has shape ``(N, M, n)`` (all modalities the same length); returns
    ``(N, d, M)``.
    """
    Dst = stack_dicts(D)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1] != Dst.shape[0] or X.shape[2] != Dst.shape[1]:
        raise ValueError(f"signals of shape {X.shape} do not match dictionaries {Dst.shape}")
    out = np.zeros((X.shape[0], Dst.shape[2], Dst.shape[0]))
    for i in range(X.shape[0]):
        if X[i].any():
            out[i] = encode(list(X[i]), D, params).A
    return out


def objective(x, D, A, params: JscParams = JscParams()) -> float:
    """Value of the joint sparse coding objective at ``A``."""
    _check(x, D)
    A = np.asarray(A, dtype=np.float64)
    fit = sum(0.5 * float(np.sum((np.ravel(xs) - np.asarray(Ds) @ A[:, s]) ** 2))
              for s, (xs, Ds) in enumerate(zip(x, D)))
    return (fit + params.lambda1 * float(np.linalg.norm(A, axis=1).sum())
            + 0.5 * params.lambda2 * float(np.sum(A * A)))


def smooth_gradient(x, D, A, params: JscParams = JscParams()) -> np.ndarray:
    """Gradient of the differentiable part (fit + ridge) with respect to ``A``."""
    A = np.asarray(A, dtype=np.float64)
    G = np.empty_like(A)
    for s, (xs, Ds) in enumerate(zip(x, D)):
        Ds = np.asarray(Ds)
        G[:, s] = -Ds.T @ (np.ravel(xs) - Ds @ A[:, s])
    return G + params.lambda2 * A


def kkt_residual(x, D, A, params: JscParams = JscParams()) -> float:
    """Largest violation of the optimality conditions at ``A``.

    Active rows need ``grad_j + lam1 a_j / ||a_j|| = 0``; inactive rows need
    ``||grad_j|| <= lam1``.
    """
    G = smooth_gradient(x, D, A, params)
    norms = np.linalg.norm(A, axis=1)
    worst = 0.0
    for j in range(A.shape[0]):
        if norms[j] > 0:
            r = G[j] + params.lambda1 * A[j] / norms[j]
            worst = max(worst, float(np.abs(r).max()))
        else:
            worst = max(worst, float(np.linalg.norm(G[j])) - params.lambda1)
    return worst
