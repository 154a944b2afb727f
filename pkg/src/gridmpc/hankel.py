"""Hankel matrices, persistence of excitation and trajectory-space residuals.

These are the primitives behind the data-driven controllers: a recorded
input/output sequence induces a block Hankel matrix whose columns are sliding
windows of the signal.  If the input is persistently exciting, the stacked
input/output Hankel matrix spans every admissible window of the underlying
linear system, which `trajectory_residual` measures directly.  The same
machinery doubles as the test oracle for the linear and lifted-input
(Hammerstein) trajectory lemmas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Sequence",
    "HankelMatrix",
    "LtiOracle",
    "build_hankel",
    "numerical_rank",
    "is_persistently_exciting",
    "trajectory_residual",
]


@dataclass(frozen=True)
class Sequence:
    """An ordered, finite sequence of equally sized real vectors.

    ``samples`` has shape ``(N, dim)``; scalar signals are stored with
    ``dim == 1``.
    """

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ValueError(f"samples must be 1- or 2-dimensional, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"sequence needs at least one sample of dimension >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("sequence samples must be finite")
        object.__setattr__(self, "samples", arr)

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def window(self, start: int, count: int) -> np.ndarray:
        """Stacked column vector ``[x(start); ...; x(start+count-1)]``."""
        if start < 0 or start + count > self.length:
            raise ValueError(f"window [{start}, {start + count}) outside sequence of length {self.length}")
        return self.samples[start : start + count].reshape(-1)


@dataclass(frozen=True)
class HankelMatrix:
    """Block Hankel matrix of a sequence: column j stacks samples j..j+L-1."""

    order: int
    source_dim: int
    data: np.ndarray

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def build_hankel(seq: Sequence, order: int) -> HankelMatrix:
    """Build the order-``L`` Hankel matrix of ``seq``.

    The result has ``dim*L`` rows and ``N-L+1`` columns; column ``j`` is the
    stacked snippet ``x(j), ..., x(j+L-1)``.

    Raises:
        ValueError: if ``order`` is not in ``[1, seq.length]``.
    """
    N = seq.length
    if not 1 <= order <= N:
        raise ValueError(f"Hankel order L={order} must satisfy 1 <= L <= N={N}")
    cols = N - order + 1
    data = np.empty((seq.dim * order, cols))
    for j in range(cols):
        data[:, j] = seq.samples[j : j + order].reshape(-1)
    return HankelMatrix(order=order, source_dim=seq.dim, data=data)


def numerical_rank(matrix, tolerance: float | None = None) -> int:
    """Number of singular values strictly above ``tolerance``.

    The default tolerance is ``sigma_max * max(rows, cols) * eps``, the usual
    robust rank threshold.
    """
    data = matrix.data if isinstance(matrix, HankelMatrix) else np.asarray(matrix, dtype=float)
    if data.size == 0:
        raise ValueError("rank of an empty matrix is undefined")
    if tolerance is not None and tolerance < 0:
        raise ValueError(f"tolerance must be nonnegative, got {tolerance}")
    sigma = np.linalg.svd(data, compute_uv=False)
    if tolerance is None:
        tolerance = sigma[0] * max(data.shape) * np.finfo(float).eps
    return int(np.count_nonzero(sigma > tolerance))


def is_persistently_exciting(seq: Sequence, order: int) -> bool:
    """True iff the order-``L`` Hankel matrix of ``seq`` has full row rank ``dim*L``."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if seq.length < order:
        return False
    H = build_hankel(seq, order)
    return numerical_rank(H) == seq.dim * order


def trajectory_residual(H_u: HankelMatrix, H_y: HankelMatrix, U: np.ndarray, Y: np.ndarray) -> float:
    """Distance of the stacked window ``[U; Y]`` from the recorded trajectory space.

    Returns ``min_alpha || [H_u; H_y] alpha - [U; Y] ||_2``, computed by a
    minimum-norm least-squares solve.  Zero (up to numerics) means the window
    is a trajectory of the system that produced the data.
    """
    if H_u.order != H_y.order or H_u.cols != H_y.cols:
        raise ValueError(
            f"Hankel blocks must share order and column count, got "
            f"({H_u.order}, {H_u.cols}) vs ({H_y.order}, {H_y.cols})"
        )
    U = np.asarray(U, dtype=float).reshape(-1)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if U.shape[0] != H_u.rows:
        raise ValueError(f"U has {U.shape[0]} entries, expected {H_u.rows}")
    if Y.shape[0] != H_y.rows:
        raise ValueError(f"Y has {Y.shape[0]} entries, expected {H_y.rows}")
    stacked = np.vstack([H_u.data, H_y.data])
    rhs = np.concatenate([U, Y])
    alpha, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
    return float(np.linalg.norm(stacked @ alpha - rhs))


@dataclass(frozen=True)
class LtiOracle:
    """Explicit state-space model used as ground truth in tests only.

    Controllers never see this; it exists so the trajectory-space claims can
    be checked against direct simulation.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}")
        if x0.shape[0] != n:
            raise ValueError(f"x0 must have {n} entries, got {x0.shape[0]}")
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D), ("x0", x0)):
            object.__setattr__(self, name, val)

    @property
    def order(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def simulate(self, inputs: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        """Outputs ``y(0..T-1)`` of the model driven by ``inputs`` from ``x0``."""
        u = np.asarray(inputs, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if u.shape[1] != self.n_inputs:
            raise ValueError(f"inputs must have {self.n_inputs} columns, got {u.shape[1]}")
        x = self.x0.copy() if x0 is None else np.asarray(x0, dtype=float).reshape(-1).copy()
        ys = np.empty((u.shape[0], self.n_outputs))
        for k in range(u.shape[0]):
            ys[k] = self.C @ x + self.D @ u[k]
            x = self.A @ x + self.B @ u[k]
        return ys

    def identify_initial_state(self, U: np.ndarray, Y: np.ndarray, steps: int | None = None) -> np.ndarray:
        """Least-squares estimate of the state that produced the first ``steps`` I/O samples."""
        u = np.asarray(U, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        y = np.asarray(Y, dtype=float)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        n = self.order
        if steps is None:
            steps = n
        if steps < 1 or steps > u.shape[0] or steps > y.shape[0]:
            raise ValueError(f"steps={steps} outside available window of length {u.shape[0]}")
        # y(k) = C A^k x0 + sum_{j<k} C A^(k-1-j) B u(j) + D u(k)
        p, d = self.n_outputs, self.n_inputs
        obs = np.empty((steps * p, n))
        forced = np.empty(steps * p)
        Ak = np.eye(n)
        for k in range(steps):
            obs[k * p : (k + 1) * p] = self.C @ Ak
            contrib = self.D @ u[k]
            Aj = np.eye(n)
            for j in range(k - 1, -1, -1):
                contrib = contrib + self.C @ Aj @ self.B @ u[j]
                Aj = Aj @ self.A
            forced[k * p : (k + 1) * p] = contrib
            Ak = self.A @ Ak
        rhs = y[:steps].reshape(-1) - forced
        x0, *_ = np.linalg.lstsq(obs, rhs, rcond=None)
        return x0
