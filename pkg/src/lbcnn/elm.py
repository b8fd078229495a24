"""Closed-form ridge fit of the linear output layer.

The output weights minimise ``||outW^T H - Y||^2 + ||outW||^2 / C`` and are
obtained from the normal equations, either in feature space (primal,
``n_features < n_samples``) or in sample space (dual).  All solver arithmetic
is float64; features may arrive as float32 and are widened block by block.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import blas, lapack

from .errors import InputError, NumericalError, ShapeError

GRAM_BLOCK = 512


@dataclass(frozen=True)
class SolverConfig:
    """Ridge constant and factorization fallback.

    On a failed Cholesky factorization the diagonal is shifted by
    ``jitter * trace / n`` with jitter growing tenfold from ``jitter`` up to
    ``max_jitter``.
    """

    C: float = 1.0
    jitter: float = 1e-10
    max_jitter: float = 1e-4
    workers: int = 1

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"regularization constant C must be positive, got {self.C}")
        if not 0 < self.jitter <= self.max_jitter:
            raise ValueError("need 0 < jitter <= max_jitter")


def _blocks(n, size):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def gram(A: np.ndarray, workers: int = 1, block: int = GRAM_BLOCK) -> np.ndarray:
    """``A @ A.T`` in float64, upper triangle only, Fortran ordered.

    Row blocks are paired in a fixed order and every block is written by one
    task, so the result does not depend on ``workers``.
    """
    A = np.asarray(A)
    n = A.shape[0]
    G = np.zeros((n, n), order="F")
    spans = _blocks(n, block)
    wide = [np.asfortranarray(A[i0:i1], dtype=np.float64) for i0, i1 in spans]

    def work(ij):
        bi, bj = ij
        (i0, i1), (j0, j1) = spans[bi], spans[bj]
        if bi == bj:
            G[i0:i1, i0:i1] = blas.dsyrk(1.0, wide[bi], lower=0)
        else:
            G[i0:i1, j0:j1] = blas.dgemm(1.0, wide[bi], wide[bj], trans_b=1)

    pairs = [(i, j) for i in range(len(spans)) for j in range(i, len(spans))]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, pairs))
    else:
        for ij in pairs:
            work(ij)
    return G


def _mirror_upper(G, block=GRAM_BLOCK):
    """Copy the strict upper triangle into the strict lower one."""
    n = G.shape[0]
    for j0, j1 in _blocks(n, block):
        G[j1:, j0:j1] = G[j0:j1, j1:].T
        sub = G[j0:j1, j0:j1]
        low = np.tril_indices(j1 - j0, -1)
        sub[low] = sub.T[low]


def _restore_upper(G, diag, block=GRAM_BLOCK):
    n = G.shape[0]
    for j0, j1 in _blocks(n, block):
        G[j0:j1, j1:] = G[j1:, j0:j1].T
        sub = G[j0:j1, j0:j1]
        up = np.triu_indices(j1 - j0, 1)
        sub[up] = sub.T[up]
    G[np.diag_indices(n)] = diag


def spd_solve(G: np.ndarray, rhs: np.ndarray, cfg: SolverConfig, restore: bool = False) -> np.ndarray:
    """Solve ``G x = rhs`` for symmetric positive definite G (upper triangle read).

    A Fortran-ordered float64 G is factorized in place: its upper triangle
    ends up holding the Cholesky factor unless ``restore`` is set, in which
    case G is rebuilt from the untouched lower triangle afterwards.  Raises
    NumericalError once the jitter ceiling is passed.
    """
    n = G.shape[0]
    if not (G.flags.f_contiguous and G.dtype == np.float64):
        G = np.asfortranarray(G, dtype=np.float64)
    _mirror_upper(G)
    diag = G.diagonal().copy()
    scale = diag.sum() / n
    shift = 0.0
    level = cfg.jitter
    while True:
        if shift:
            G[np.diag_indices(n)] = diag + shift
        factor, info = lapack.dpotrf(G, lower=0, clean=0, overwrite_a=1)
        if info == 0:
            break
        if info < 0:
            raise NumericalError(f"dpotrf: illegal argument {-info}")
        if level > cfg.max_jitter * (1 + 1e-12) or not np.isfinite(scale):
            raise NumericalError(
                f"Cholesky factorization failed (leading minor {info}) even with "
                f"diagonal jitter {shift:.3g}"
            )
        _restore_upper(factor, diag)
        G = factor
        shift = level * max(scale, np.finfo(float).tiny)
        level *= 10
    x, info = lapack.dpotrs(factor, np.asarray(rhs, dtype=np.float64), lower=0)
    if restore:
        _restore_upper(factor, diag)
    if info != 0:
        raise NumericalError(f"dpotrs failed with info={info}")
    return x


def _check_inputs(H, Y):
    H = np.asarray(H)
    Y = np.asarray(Y, dtype=np.float64)
    if H.ndim != 2 or Y.ndim != 2:
        raise ShapeError("H and Y must be 2-D (features x samples, classes x samples)")
    if H.shape[1] != Y.shape[1]:
        raise ShapeError(f"H has {H.shape[1]} samples, Y has {Y.shape[1]}")
    if H.shape[0] < 1 or H.shape[1] < 1:
        raise ShapeError("H must have at least one feature and one sample")
    if not (np.isfinite(H).all() and np.isfinite(Y).all()):
        raise InputError("H and Y must be finite")
    return H, Y


def solve_primal(H, Y, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Feature-space solve: ``(I/C + H H^T) outW = H Y^T``."""
    H, Y = _check_inputs(H, Y)
    G = gram(H, workers=cfg.workers)
    G[np.diag_indices(G.shape[0])] += 1.0 / cfg.C
    rhs = np.asarray(H, dtype=np.float64) @ Y.T
    return spd_solve(G, rhs, cfg)


def solve_dual(H, Y, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Sample-space solve: ``outW = H Z`` with ``(I/C + H^T H) Z = Y^T``."""
    H, Y = _check_inputs(H, Y)
    G = gram(np.asarray(H).T, workers=cfg.workers)
    G[np.diag_indices(G.shape[0])] += 1.0 / cfg.C
    Z = spd_solve(G, Y.T.copy(), cfg)
    return np.asarray(H, dtype=np.float64) @ Z


def solve_output_weights(H, Y, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Ridge output weights (n_features x n_classes).

    Picks the primal system when there are fewer features than samples and
    the dual one otherwise; both give the same minimiser.
    """
    H = np.asarray(H)
    if H.ndim == 2 and H.shape[0] < H.shape[1]:
        return solve_primal(H, Y, cfg)
    return solve_dual(H, Y, cfg)


def uses_primal(n_features: int, n_samples: int) -> bool:
    return n_features < n_samples


class GramAccumulator:
    """Streams sample blocks into ``H H^T`` and ``H Y^T`` for a primal solve.

    Blocks must arrive in a fixed order for the sums to be reproducible.
    """

    def __init__(self, n_features: int, n_classes: int):
        self.n_features = n_features
        self.n_classes = n_classes
        self.G = np.zeros((n_features, n_features), order="F")
        self.HY = np.zeros((n_features, n_classes))
        self.n_samples = 0

    def add(self, rows: np.ndarray, labels: np.ndarray) -> None:
        """Accumulate a block given as (b, n_features) rows and b class labels."""
        rows = np.asarray(rows)
        labels = np.asarray(labels)
        if rows.ndim != 2 or rows.shape[1] != self.n_features:
            raise ShapeError(f"expected rows of length {self.n_features}, got {rows.shape}")
        if labels.shape != (rows.shape[0],):
            raise ShapeError("one label per row required")
        if not np.isfinite(rows).all():
            raise InputError("non-finite features")
        block = np.asfortranarray(rows.T, dtype=np.float64)
        blas.dsyrk(1.0, block, beta=1.0, c=self.G, lower=0, overwrite_c=1)
        for k in range(self.n_classes):
            sel = labels == k
            if sel.any():
                self.HY[:, k] += block[:, sel].sum(axis=1)
        self.n_samples += rows.shape[0]

    def solve(self, cfg: SolverConfig = SolverConfig(), consume: bool = True) -> np.ndarray:
        """Primal ridge solution from the accumulated sums.

        With ``consume=True`` the Gram buffer is released after factorization;
        otherwise it is restored in place so further solves (other C values)
        can follow without a second n_features^2 buffer.
        """
        if self.G is None:
            raise InputError("accumulator already consumed")
        if self.n_samples == 0:
            raise InputError("no samples accumulated")
        diag = np.diag_indices(self.n_features)
        raw = self.G.diagonal().copy()
        self.G[diag] += 1.0 / cfg.C
        try:
            out = spd_solve(self.G, self.HY, cfg, restore=not consume)
        finally:
            if not consume:
                self.G[diag] = raw
        if consume:
            self.G = None
        return out


def residual_norm(H, Y, outW, C: float) -> float:
    """Normal-equation residual ``max|H H^T W + W/C - H Y^T| / max(1, max|H Y^T|)``."""
    H = np.asarray(H, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    outW = np.asarray(outW, dtype=np.float64)
    hy = H @ Y.T
    r = H @ (H.T @ outW) + outW / C - hy
    return float(np.abs(r).max() / max(1.0, np.abs(hy).max(initial=0.0)))


def scores(outW, H) -> np.ndarray:
    """Class scores ``outW^T H`` (n_classes x n_samples)."""
    outW = np.asarray(outW)
    H = np.asarray(H)
    if H.shape[0] != outW.shape[0]:
        raise ShapeError(f"{H.shape[0]} features but weights expect {outW.shape[0]}")
    return outW.T @ H


def predict(outW, H) -> np.ndarray:
    """Argmax class per sample; ties go to the lowest class index."""
    return np.argmax(scores(outW, H), axis=0)


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise InputError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise InputError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(predicted == truth) / predicted.size)
