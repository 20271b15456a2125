"""Closed-form kernels for 2x2 and 4x4 real matrices.

Dimensions never exceed four, so every routine is written out for its fixed
size instead of calling a general dense solver.  Matrices are plain numpy
arrays of shape ``(2, 2)`` or ``(4, 4)``.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "SingularMatrixError",
    "DET_FLOOR",
    "kron2",
    "det",
    "inverse",
    "solve",
    "trace",
    "is_positive_definite",
    "is_singular",
    "regularize_if_singular",
    "sym_eig2",
    "sym_power2",
    "symmetric_defect",
]

# Relative conditioning floor: a matrix counts as singular when
# |det| <= DET_FLOOR * ||M||_inf ** dim.
DET_FLOOR = 1e-12


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, determinant: float, msg: str = "matrix is singular at the conditioning floor"):
        self.determinant = abs(float(determinant))
        super().__init__(f"{msg} (|det| = {self.determinant:.3e})")


def _check(m, dims=(2, 4)) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in dims:
        raise ValueError(f"expected a square matrix of size {dims}, got shape {m.shape}")
    return m


def kron2(a, b) -> np.ndarray:
    """Kronecker product of two 2x2 matrices, block layout ``[[a11 B, a12 B], [a21 B, a22 B]]``."""
    a = _check(a, (2,))
    b = _check(b, (2,))
    out = np.empty((4, 4))
    for i in range(2):
        for j in range(2):
            out[2 * i:2 * i + 2, 2 * j:2 * j + 2] = a[i, j] * b
    return out


def _det2(m) -> float:
    return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]


def _lu4(m):
    """Doolittle elimination with partial pivoting on a 4x4 copy."""
    u = m.copy()
    perm = [0, 1, 2, 3]
    sign = 1.0
    lower = np.eye(4)
    for col in range(4):
        piv = max(range(col, 4), key=lambda r: abs(u[r, col]))
        if piv != col:
            u[[col, piv]] = u[[piv, col]]
            lower[[col, piv], :col] = lower[[piv, col], :col]
            perm[col], perm[piv] = perm[piv], perm[col]
            sign = -sign
        if u[col, col] == 0.0:
            continue
        for r in range(col + 1, 4):
            f = u[r, col] / u[col, col]
            lower[r, col] = f
            u[r, col:] -= f * u[col, col:]
    return lower, u, perm, sign


def det(m) -> float:
    m = _check(m)
    if m.shape[0] == 2:
        return float(_det2(m))
    _, u, _, sign = _lu4(m)
    return float(sign * u[0, 0] * u[1, 1] * u[2, 2] * u[3, 3])


def _norm_inf(m) -> float:
    return float(np.max(np.sum(np.abs(m), axis=1)))


def is_singular(m, floor: float = DET_FLOOR) -> bool:
    m = _check(m)
    scale = _norm_inf(m)
    if scale == 0.0:
        return True
    return abs(det(m)) <= floor * scale ** m.shape[0]


def inverse(m, floor: float = DET_FLOOR) -> np.ndarray:
    m = _check(m)
    dm = det(m)
    scale = _norm_inf(m)
    if scale == 0.0 or abs(dm) <= floor * scale ** m.shape[0]:
        raise SingularMatrixError(dm)
    if m.shape[0] == 2:
        return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / dm
    return np.column_stack([_solve4(m, e) for e in np.eye(4)])


def _solve4(m, v) -> np.ndarray:
    lower, u, perm, _ = _lu4(m)
    pv = np.asarray(v, dtype=float)[perm]
    y = np.zeros(4)
    for i in range(4):
        y[i] = pv[i] - lower[i, :i] @ y[:i]
    x = np.zeros(4)
    for i in range(3, -1, -1):
        x[i] = (y[i] - u[i, i + 1:] @ x[i + 1:]) / u[i, i]
    return x


def solve(m, v, floor: float = DET_FLOOR) -> np.ndarray:
    """Solve ``m x = v`` for 2x2 or 4x4 ``m``."""
    m = _check(m)
    v = np.asarray(v, dtype=float)
    if v.shape != (m.shape[0],):
        raise ValueError(f"right-hand side shape {v.shape} does not match matrix {m.shape}")
    dm = det(m)
    scale = _norm_inf(m)
    if scale == 0.0 or abs(dm) <= floor * scale ** m.shape[0]:
        raise SingularMatrixError(dm)
    if m.shape[0] == 2:
        return np.array([m[1, 1] * v[0] - m[0, 1] * v[1], m[0, 0] * v[1] - m[1, 0] * v[0]]) / dm
    return _solve4(m, v)


def trace(m) -> float:
    m = _check(m)
    return float(sum(m[i, i] for i in range(m.shape[0])))


def symmetric_defect(m) -> float:
    """``||M - M^T||_inf / ||M||_inf`` (0 for the zero matrix)."""
    m = _check(m)
    scale = _norm_inf(m)
    return 0.0 if scale == 0.0 else _norm_inf(m - m.T) / scale


def is_positive_definite(m, floor: float = DET_FLOOR) -> bool:
    """Leading principal minors for 2x2, a Cholesky attempt for 4x4.

    Pivots are compared against ``floor * ||M||_inf`` so that numerically
    singular matrices are not reported as definite.
    """
    m = _check(m)
    scale = _norm_inf(m)
    if scale == 0.0 or symmetric_defect(m) > 1e-12:
        return False
    tol = floor * scale
    if m.shape[0] == 2:
        return m[0, 0] > tol and _det2(m) > tol * scale
    chol = np.zeros((4, 4))
    for j in range(4):
        s = m[j, j] - chol[j, :j] @ chol[j, :j]
        if s <= tol:
            return False
        chol[j, j] = math.sqrt(s)
        for i in range(j + 1, 4):
            chol[i, j] = (m[i, j] - chol[i, :j] @ chol[j, :j]) / chol[j, j]
    return True


def regularize_if_singular(s, floor: float = DET_FLOOR) -> tuple[np.ndarray, bool]:
    """Return ``(S, False)`` if ``S`` is invertible, else ``(S + I2, True)``."""
    s = _check(s, (2,))
    if is_singular(s, floor):
        return s + np.eye(2), True
    return s.copy(), False


def sym_eig2(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a symmetric 2x2."""
    m = _check(m, (2,))
    p, q, r = m[0, 0], m[0, 1], m[1, 1]
    half_gap = 0.5 * (p - r)
    rad = math.hypot(half_gap, q)
    mid = 0.5 * (p + r)
    lam = np.array([mid - rad, mid + rad])
    if q == 0.0:
        vecs = np.eye(2) if p <= r else np.array([[0.0, 1.0], [1.0, 0.0]])
        return lam, vecs
    # rotation angle diagonalising the matrix
    phi = 0.5 * math.atan2(2.0 * q, p - r)
    cs, sn = math.cos(phi), math.sin(phi)
    big = np.array([cs, sn])
    small = np.array([-sn, cs])
    return lam, np.column_stack([small, big])


def sym_power2(m, power: float) -> np.ndarray:
    """``M**power`` for a symmetric positive definite 2x2 via its eigendecomposition."""
    lam, vecs = sym_eig2(m)
    if lam[0] <= 0.0:
        raise SingularMatrixError(lam[0] * lam[1], "matrix power requires a positive definite matrix")
    return (vecs * lam**power) @ vecs.T
