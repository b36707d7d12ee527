"""Task-driven multimodal dictionary learning.

Dictionaries ``D^s`` and per-modality linear predictors ``(W^s, b)`` are
trained jointly by stochastic projected gradient descent.  The supervised
loss of one sample is::

    sum_s 1/2 ||y - W^s a^s - b||^2

where ``A = [a^1 ... a^M]`` is the joint sparse code of the sample.  The
gradient through the code is obtained implicitly: on the active rows the
code solves a smooth system whose Jacobian is
``D_hat^T D_hat + lam1 * Delta + lam2 * I``.

Index layout
------------
The flattened code uses modality-major blocks, position ``s*d + j`` holds
``A[j, s]``.  The reduced system over the active rows is ordered atom-major,
``(j_1, s=0..M-1), (j_2, s=0..M-1), ...``, matching the column order of
``D_hat``; :func:`scatter_beta` maps its solution back into the full layout.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from . import jsc
from .persist import ModelFormatError, Reader, f64le

log = logging.getLogger(__name__)

MAGIC = b"SFDL"
VERSION = 1


class TrainingAborted(FloatingPointError):
    """Raised when an update produces non-finite parameters."""


@dataclass
class FusionModel:
    dicts: list
    weights: list
    bias: np.ndarray

    @property
    def M(self) -> int:
        return len(self.dicts)

    @property
    def d(self) -> int:
        return self.dicts[0].shape[1]

    @property
    def n_s(self) -> list:
        return [Ds.shape[0] for Ds in self.dicts]

    @property
    def out_dim(self) -> int:
        return self.bias.size

    def stacked_dictionary(self) -> np.ndarray:
        """All modalities stacked vertically, ``(sum n^s, d)``."""
        return np.vstack(self.dicts)

    def stacked_weights(self) -> np.ndarray:
        """Decision matrices side by side, ``(out_dim, M*d)``."""
        return np.hstack(self.weights)

    def copy(self) -> "FusionModel":
        return FusionModel([Ds.copy() for Ds in self.dicts],
                           [Ws.copy() for Ws in self.weights], self.bias.copy())

    def predict(self, A: np.ndarray) -> np.ndarray:
        """Mean over modalities of ``W^s a^s + b`` (unclamped)."""
        return sum(Ws @ A[:, s] for s, Ws in enumerate(self.weights)) / self.M + self.bias


@dataclass
class TrainConfig:
    lambda1: float = 0.015
    lambda2: float = 0.002
    nu: float = 1e-4
    rho: float = 0.01
    t0: float | None = None  # defaults to T / 10
    T: int = 100_000
    d: int = 150
    rng_seed: int = 0
    jsc_max_iter: int = 300
    jsc_tol: float = 1e-7
    warm_start: bool = True

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.lambda2 <= 0:
            raise ValueError("lambda2 must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if self.t0 is not None and self.t0 < 1:
            raise ValueError("t0 must be >= 1")

    @property
    def t0_value(self) -> float:
        return float(self.t0) if self.t0 is not None else max(1.0, self.T / 10.0)

    def jsc_params(self) -> jsc.JscParams:
        return jsc.JscParams(self.lambda1, self.lambda2, self.jsc_max_iter, self.jsc_tol)


def learning_rate(t: int, rho: float, t0: float) -> float:
    """``min(rho, rho * t0 / t)``: constant for ``t <= t0``, then ``1/t`` decay."""
    return min(rho, rho * t0 / t)


# ---------------------------------------------------------------------------
# loss and implicit-gradient pieces


def supervised_loss(y, model: FusionModel, A) -> float:
    A = np.asarray(A.A if isinstance(A, jsc.JointCode) else A)
    y = np.asarray(y, dtype=np.float64)
    return sum(0.5 * float(np.sum((y - Ws @ A[:, s] - model.bias) ** 2))
               for s, Ws in enumerate(model.weights))


def build_dhat(dicts, Lambda) -> np.ndarray:
    """Block matrix whose column block ``j`` is ``blkdiag(d_j^1, ..., d_j^M)``."""
    Lambda = np.asarray(Lambda, dtype=np.int64)
    if Lambda.size == 0:
        raise ValueError("empty active set")
    n_s = [Ds.shape[0] for Ds in dicts]
    offs = np.concatenate([[0], np.cumsum(n_s)])
    M = len(dicts)
    out = np.zeros((offs[-1], M * Lambda.size))
    for col, j in enumerate(Lambda):
        for s, Ds in enumerate(dicts):
            out[offs[s]:offs[s + 1], col * M + s] = Ds[:, j]
    return out


def delta_block(row) -> np.ndarray:
    """Hessian of ``||a||`` at a non-zero row: ``(I - u u^T) / ||a||``."""
    row = np.asarray(row, dtype=np.float64)
    nrm = np.linalg.norm(row)
    if nrm == 0:
        raise ValueError("Delta is undefined for a zero row")
    return np.eye(row.size) / nrm - np.outer(row, row) / nrm ** 3


def build_delta(A, Lambda) -> np.ndarray:
    """Block diagonal of :func:`delta_block` over the rows ``Lambda``, in that order."""
    A = np.asarray(A.A if isinstance(A, jsc.JointCode) else A)
    rows = A[np.asarray(Lambda, dtype=np.int64)]
    k, M = rows.shape
    nrm = np.linalg.norm(rows, axis=1)
    if np.any(nrm == 0):
        raise ValueError("Delta is undefined for a zero row")
    blocks = (np.eye(M)[None] / nrm[:, None, None]
              - rows[:, :, None] * rows[:, None, :] / nrm[:, None, None] ** 3)
    out = np.zeros((k, M, k, M))
    idx = np.arange(k)
    out[idx, :, idx, :] = blocks
    return out.reshape(k * M, k * M)


def _dhat_gram(dicts, Lambda) -> np.ndarray:
    """``D_hat^T D_hat`` assembled from per-modality Gram blocks."""
    M, k = len(dicts), len(Lambda)
    G = np.zeros((k, M, k, M))
    for s, Ds in enumerate(dicts):
        sub = Ds[:, Lambda]
        G[:, s, :, s] = sub.T @ sub
    return G.reshape(k * M, k * M)


def build_beta(D_hat, Delta, g, lambda1: float, lambda2: float, gram=None) -> np.ndarray:
    """Solve ``(D_hat^T D_hat + lam1 Delta + lam2 I) beta = g`` by Cholesky.

    ``gram`` may carry a precomputed ``D_hat^T D_hat``; ``D_hat`` is then ignored.
    """
    if gram is None:
        D_hat = np.asarray(D_hat, dtype=np.float64)
        gram = D_hat.T @ D_hat
    system = gram + lambda1 * np.asarray(Delta) + lambda2 * np.eye(gram.shape[0])
    beta = linalg.cho_solve(linalg.cho_factor(system), np.asarray(g, dtype=np.float64))
    if not np.all(np.isfinite(beta)):
        raise TrainingAborted("non-finite solution of the implicit-gradient system")
    return beta


def scatter_beta(beta_active, Lambda, d: int, M: int) -> np.ndarray:
    """Place the reduced solution into a ``(d, M)`` array, zeros off the active rows."""
    B = np.zeros((d, M))
    B[np.asarray(Lambda, dtype=np.int64)] = np.asarray(beta_active).reshape(-1, M)
    return B


def code_gradient(y, model: FusionModel, A) -> np.ndarray:
    """Gradient of the supervised loss with respect to the code, ``(d, M)``."""
    G = np.empty_like(A)
    for s, Ws in enumerate(model.weights):
        G[:, s] = -Ws.T @ (y - Ws @ A[:, s] - model.bias)
    return G


@dataclass
class Gradients:
    """Analytic gradients of the supervised loss at one sample."""
    dicts: list
    weights: list
    bias: np.ndarray
    loss: float
    active_rows: np.ndarray


def gradients(x, y, model: FusionModel, code: jsc.JointCode, lambda1: float,
              lambda2: float) -> Gradients:
    """Implicit gradients of the supervised loss given the sample's code."""
    A = code.A
    y = np.asarray(y, dtype=np.float64)
    Lambda = code.active_rows
    resid = [y - Ws @ A[:, s] - model.bias for s, Ws in enumerate(model.weights)]
    loss = sum(0.5 * float(r @ r) for r in resid)
    gW = [-np.outer(r, A[:, s]) for s, r in enumerate(resid)]
    gb = -sum(resid)
    if Lambda.size == 0:
        gD = [np.zeros_like(Ds) for Ds in model.dicts]
        return Gradients(gD, gW, gb, loss, Lambda)
    M = model.M
    G = np.stack([-Ws[:, Lambda].T @ r for Ws, r in zip(model.weights, resid)], axis=1)
    beta = build_beta(None, build_delta(A, Lambda), G.ravel(), lambda1, lambda2,
                      gram=_dhat_gram(model.dicts, Lambda))
    Bact = beta.reshape(-1, M)
    gD = []
    for s, Ds in enumerate(model.dicts):
        xs = np.ravel(x[s])
        b = Bact[:, s]
        a = A[Lambda, s]
        g = np.zeros_like(Ds)
        g[:, Lambda] = np.outer(xs - Ds @ A[:, s], b) - np.outer(Ds[:, Lambda] @ b, a)
        gD.append(g)
    return Gradients(gD, gW, gb, loss, Lambda)


def project_columns(Ds: np.ndarray) -> None:
    """In place: rescale columns with norm above one back onto the unit sphere."""
    nrm = np.linalg.norm(Ds, axis=0)
    big = nrm > 1.0
    if big.any():
        Ds[:, big] /= nrm[big]


def _apply(model: FusionModel, grads: Gradients, rate: float, nu: float) -> None:
    for s in range(model.M):
        model.weights[s] -= rate * (grads.weights[s] + nu * model.weights[s])
        if grads.active_rows.size:
            model.dicts[s] -= rate * grads.dicts[s]
            project_columns(model.dicts[s])
    if grads.active_rows.size:
        model.bias -= rate * grads.bias
    for arr in (*model.dicts, *model.weights, model.bias):
        if not np.all(np.isfinite(arr)):
            raise TrainingAborted("non-finite parameters after update")


@dataclass
class StepInfo:
    t: int
    rate: float
    loss: float
    active: int
    converged: bool
    A: np.ndarray = field(repr=False)
    # the model after the update (the live object during training)
    model: "FusionModel | None" = field(default=None, repr=False)


def train_step(model: FusionModel, x, y, t: int, cfg: TrainConfig, A0=None,
               inplace: bool = False):
    """One stochastic projected-gradient update.

    Returns ``(model, info)``; the input model is left untouched unless
    ``inplace`` is set.  With an empty active set only the ridge shrink on
    the weights is applied.
    """
    if t < 1:
        raise ValueError("t counts from 1")
    if not inplace:
        model = model.copy()
    code = jsc.encode(x, model.dicts, cfg.jsc_params(), A0=A0)
    rate = learning_rate(t, cfg.rho, cfg.t0_value)
    # overflow is caught by the finiteness check in _apply
    with np.errstate(over="ignore", invalid="ignore"):
        grads = gradients(x, y, model, code, cfg.lambda1, cfg.lambda2)
        _apply(model, grads, rate, cfg.nu)
    return model, StepInfo(t, rate, grads.loss, int(code.active_rows.size),
                           code.converged, code.A, model)


# ---------------------------------------------------------------------------
# training loop


def _as_samples(X, M=None):
    """Accept ``(N, M, n)`` arrays or a list of per-sample modality lists."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [list(xi) for xi in X]
    return [[np.ravel(np.asarray(xs, dtype=np.float64)) for xs in xi] for xi in X]


def init_model(samples, Y, d: int, rng: np.random.Generator) -> FusionModel:
    """Dictionaries from normalised random non-zero patches, ``W = 0``, ``b = mean(y)``."""
    Y = np.asarray(Y, dtype=np.float64)
    M = len(samples[0])
    dicts = []
    for s in range(M):
        n = samples[0][s].size
        nz = [i for i, xi in enumerate(samples) if np.linalg.norm(xi[s]) > 0]
        if nz:
            pick = rng.choice(nz, size=d, replace=len(nz) < d)
            Ds = np.stack([samples[i][s] for i in pick], axis=1).astype(np.float64)
            # duplicates (tiny pools) get a small jitter so atoms stay distinct
            Ds = Ds + 1e-3 * rng.standard_normal(Ds.shape) * (len(nz) < d)
        else:
            Ds = rng.standard_normal((n, d))
        Ds /= np.linalg.norm(Ds, axis=0)
        dicts.append(Ds)
    p = Y.shape[1]
    return FusionModel(dicts, [np.zeros((p, d)) for _ in range(M)], Y.mean(axis=0))


def train(X, Y, cfg: TrainConfig = TrainConfig(), model: FusionModel | None = None,
          callback=None) -> FusionModel:
    """Run ``cfg.T`` stochastic updates over samples drawn uniformly with replacement.

    Parameters
    ----------
    X : (N, M, n) array or list of N lists of M signals
    Y : (N, p) array
        Targets.
    cfg : TrainConfig
    model : FusionModel, optional
        Starting point; initialised by :func:`init_model` when omitted.
    callback : callable, optional
        Called as ``callback(info)`` with the :class:`StepInfo` of every step.
    """
    samples = _as_samples(X)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if len(samples) == 0:
        raise ValueError("no training samples")
    if Y.shape[0] != len(samples):
        raise ValueError("X and Y lengths differ")
    rng = np.random.default_rng(cfg.rng_seed)
    if model is None:
        model = init_model(samples, Y, cfg.d, rng)
    else:
        model = model.copy()
    # last code of every sample, reused as a warm start when it is drawn again
    cache = {}
    for t in range(1, cfg.T + 1):
        i = int(rng.integers(len(samples)))
        A0 = cache.get(i) if cfg.warm_start else None
        model, info = train_step(model, samples[i], Y[i], t, cfg, A0=A0, inplace=True)
        if cfg.warm_start:
            cache[i] = info.A
        if callback is not None:
            callback(info)
        if t % 1000 == 0:
            log.debug("step %d loss %.5f active %d", t, info.loss, info.active)
    return model


# ---------------------------------------------------------------------------
# finite-difference check


@dataclass
class GradCheck:
    dict_error: float
    weight_error: float
    inconclusive: bool
    coords: int
    reason: str = ""

    @property
    def max_error(self) -> float:
        return max(self.dict_error, self.weight_error)


def _rel_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradient_check(model: FusionModel, x, y, cfg: TrainConfig = TrainConfig(),
                   n_coords: int = 50, step: float = 1e-5, rng_seed: int = 0,
                   tol: float = 1e-13) -> GradCheck:
    """Compare implicit gradients against central finite differences.

    ``n_coords`` random entries of each dictionary and each weight matrix are
    perturbed by ``+-step`` and the supervised loss is re-evaluated at a
    freshly computed, tightly converged code.  The relative error is
    ``max|analytic - numeric| / max(|numeric|_inf, |analytic|_inf)`` over the
    probed entries.  The check is reported as inconclusive when a
    perturbation changes the active set even after shrinking the step.
    """
    params = jsc.JscParams(cfg.lambda1, cfg.lambda2, max_iter=100_000, tol=tol)
    y = np.asarray(y, dtype=np.float64)
    code = jsc.encode(x, model.dicts, params)
    norms = np.linalg.norm(code.A[code.active_rows], axis=1)
    shaky = bool(norms.size and norms.min() < 1e-4)
    grads = gradients(x, y, model, code, cfg.lambda1, cfg.lambda2)
    rng = np.random.default_rng(rng_seed)
    base = set(code.active_rows.tolist())

    def loss_at(m):
        c = jsc.encode(x, m.dicts, params, A0=code.A)
        return supervised_loss(y, m, c), set(c.active_rows.tolist())

    def probe(kind, s, idx):
        h = step
        for _ in range(3):
            vals = []
            for sign in (1.0, -1.0):
                m = model.copy()
                getattr(m, kind)[s][idx] += sign * h
                val, act = loss_at(m)
                if act != base:
                    break
                vals.append(val)
            if len(vals) == 2:
                return (vals[0] - vals[1]) / (2 * h)
            h /= 10
        return None

    errs, inconclusive, count = {}, False, 0
    for kind, gsrc in (("dicts", grads.dicts), ("weights", grads.weights)):
        ana, num = [], []
        for s in range(model.M):
            arr = getattr(model, kind)[s]
            cols = np.arange(arr.shape[1])
            if kind == "dicts" and code.active_rows.size:
                # inactive atoms have zero gradient; probe where it is informative
                cols = code.active_rows
            for _ in range(n_coords):
                idx = (int(rng.integers(arr.shape[0])), int(rng.choice(cols)))
                fd = probe(kind, s, idx)
                if fd is None:
                    inconclusive = True
                    continue
                ana.append(gsrc[s][idx])
                num.append(fd)
                count += 1
        errs[kind] = _rel_error(ana, num)
    reason = "active set changed under perturbation" if inconclusive else ""
    if shaky:
        inconclusive, reason = True, "active row with norm below 1e-4"
    return GradCheck(errs["dicts"], errs["weights"], inconclusive, count, reason)


# ---------------------------------------------------------------------------
# persistence


def model_to_bytes(model: FusionModel) -> bytes:
    """``SFDL`` magic, version, M, d, output size, n^s list, then the float64 blocks."""
    head = [MAGIC, struct.pack("<IIII", VERSION, model.M, model.d, model.out_dim),
            struct.pack(f"<{model.M}I", *model.n_s)]
    body = [f64le(Ds) for Ds in model.dicts] + [f64le(Ws) for Ws in model.weights]
    return b"".join(head + body + [f64le(model.bias)])


def model_from_bytes(data: bytes, name: str = "model") -> FusionModel:
    r = Reader(data, name)
    r.expect_magic(MAGIC)
    version, M, d, p = r.unpack("IIII")
    if version != VERSION:
        raise ModelFormatError(f"{name}: unsupported model version {version}")
    if M == 0 or d == 0:
        raise ModelFormatError(f"{name}: empty model header")
    n_s = r.unpack(f"{M}I")
    dicts = [r.array("f8", n * d).reshape(n, d) for n in n_s]
    weights = [r.array("f8", p * d).reshape(p, d) for _ in range(M)]
    bias = r.array("f8", p)
    r.expect_end()
    return FusionModel([a.astype(np.float64) for a in dicts],
                       [a.astype(np.float64) for a in weights], bias.astype(np.float64))


def save_model(path, model: FusionModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> FusionModel:
    path = Path(path)
    return model_from_bytes(path.read_bytes(), str(path))
