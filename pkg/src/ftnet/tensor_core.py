"""Dense N-way tensors and the multilinear primitives built on them.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Their canonical
linearization is first-index-fastest (Fortran order), so the mode-1 unfolding
and :func:`vec` agree with the column-major layout used by the serializers.

Mode arguments are 1-based throughout this module, matching the usual
``X x_n U`` notation: ``mode=1`` is the first axis.

Unfoldings follow the Kolda-Bader convention. The column holding the
multi-index ``(i_1, .., i_{n-1}, i_{n+1}, .., i_N)`` (0-based here) is::

    sum_{k != n} i_k * prod_{m < k, m != n} I_m

With that convention the multilinear product identity reads::

    Y = X x_1 A1 x_2 A2 ... x_N AN
    <=>  Y_(n) = An @ X_(n) @ (AN kron ... kron A(n+1) kron A(n-1) ... kron A1).T
"""

from __future__ import annotations

import math
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ModeError, ShapeError

# Upper bound on the element count of any Kronecker product we will build.
MAX_ELEMENTS = 1 << 30


def as_tensor(x, copy: bool = False) -> np.ndarray:
    """Return ``x`` as a float64 array with at least one mode."""
    t = np.array(x, dtype=np.float64, copy=copy) if copy else np.asarray(x, dtype=np.float64)
    if t.ndim == 0:
        raise ShapeError("a tensor needs at least one mode")
    if any(d < 1 for d in t.shape):
        raise ShapeError(f"every extent must be >= 1, got {t.shape}")
    return t


def _check_mode(order: int, mode: int) -> int:
    if not isinstance(mode, (int, np.integer)) or isinstance(mode, bool):
        raise ModeError(f"mode must be an integer, got {mode!r}")
    if not 1 <= mode <= order:
        raise ModeError(f"mode {mode} out of range for an order-{order} tensor")
    return int(mode) - 1


def vec(t: np.ndarray) -> np.ndarray:
    """Canonical (first-index-fastest) vectorization."""
    return np.reshape(t, -1, order="F")


def unvec(v: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=np.float64)
    if v.size != int(np.prod(shape)):
        raise ShapeError(f"cannot reshape {v.size} values into {tuple(shape)}")
    return np.reshape(v, tuple(shape), order="F")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization: the mode fibers become the columns."""
    t = as_tensor(t)
    axis = _check_mode(t.ndim, mode)
    return np.reshape(np.moveaxis(t, axis, 0), (t.shape[axis], -1), order="F")


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Refold a mode-``mode`` unfolding into a tensor of ``shape``."""
    m = np.asarray(m, dtype=np.float64)
    shape = tuple(int(d) for d in shape)
    axis = _check_mode(len(shape), mode)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got an array of order {m.ndim}")
    rest = shape[:axis] + shape[axis + 1:]
    if m.shape != (shape[axis], int(np.prod(rest, dtype=np.int64))):
        raise ShapeError(
            f"a {m.shape[0]}x{m.shape[1]} matrix is not a mode-{mode} unfolding of {shape}"
        )
    moved = np.reshape(m, (shape[axis],) + rest, order="F")
    return np.moveaxis(moved, 0, axis)


def mode_dot(t: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    """Unchecked n-mode product on a 0-based ``axis``.

    Views ``t`` as ``(A, I_n, B)`` and lets ``matmul`` broadcast ``u`` over
    the leading block; same numbers as ``fold(u @ unfold(t, n), n, ...)``
    without materializing the unfolding.
    """
    shape = t.shape
    lead = math.prod(shape[:axis])
    trail = math.prod(shape[axis + 1:])
    out = np.matmul(u, t.reshape(lead, shape[axis], trail))
    return out.reshape(shape[:axis] + (u.shape[0],) + shape[axis + 1:])


def mode_product(t: np.ndarray, u: np.ndarray, mode: int) -> np.ndarray:
    """The n-mode product ``t x_mode u``.

    Replaces extent ``I_mode`` by ``u.shape[0]``; every output entry is the
    contraction of a mode fiber of ``t`` with a row of ``u``.
    """
    t = as_tensor(t)
    u = np.asarray(u, dtype=np.float64)
    axis = _check_mode(t.ndim, mode)
    if u.ndim != 2 or u.shape[1] != t.shape[axis]:
        raise ShapeError(
            f"matrix of shape {u.shape} does not conform to mode {mode} of a {t.shape} tensor"
        )
    return mode_dot(t, u, axis)


def multi_mode_product(t: np.ndarray, factors: Iterable[tuple[np.ndarray, int]]) -> np.ndarray:
    """Apply several ``(matrix, mode)`` pairs, in ascending mode order.

    Modes not mentioned are left untouched, which is how the trailing batch
    mode of a layer input passes through.
    """
    t = as_tensor(t)
    pairs = sorted(((np.asarray(u, dtype=np.float64), int(n)) for u, n in factors),
                   key=lambda p: p[1])
    modes = [n for _, n in pairs]
    if len(set(modes)) != len(modes):
        raise ShapeError(f"duplicate modes in {modes}")
    for u, n in pairs:
        t = mode_product(t, u, n)
    return t


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: an ``IK x JL`` matrix of blocks ``a[i, j] * b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("kronecker expects two matrices")
    (i, j), (k, l) = a.shape, b.shape
    if i * k * j * l > MAX_ELEMENTS:
        raise CapacityError(f"kronecker product of {a.shape} and {b.shape} is too large")
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(i * k, j * l)


def kron_chain(mats: Sequence[np.ndarray]) -> np.ndarray:
    """``mats[0] kron mats[1] kron ...``; the empty chain is the 1x1 identity."""
    if not mats:
        return np.ones((1, 1))
    return reduce(kronecker, mats)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise product of two same-shaped arrays (no broadcasting)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard operands differ in shape: {a.shape} vs {b.shape}")
    return a * b


def matricized_product(t: np.ndarray, mats: Sequence[np.ndarray], mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of ``t x_1 mats[0] ... x_N mats[N-1]``, via Kronecker.

    Evaluates ``A_n @ X_(n) @ (A_N kron .. kron A_1, skipping A_n).T`` with an
    explicit Kronecker matrix. Exponentially costly; it exists as an
    independent path for checking :func:`multi_mode_product`.
    """
    t = as_tensor(t)
    if len(mats) != t.ndim:
        raise ShapeError(f"need {t.ndim} matrices, got {len(mats)}")
    axis = _check_mode(t.ndim, mode)
    others = [np.asarray(mats[i], dtype=np.float64) for i in reversed(range(t.ndim)) if i != axis]
    return np.asarray(mats[axis], dtype=np.float64) @ unfold(t, mode) @ kron_chain(others).T
