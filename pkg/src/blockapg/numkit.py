"""Block partitions, column-sliceable matrices and spectral norms."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "BlockPartition",
    "ColMatrix",
    "EstimationError",
    "InvalidPartitionError",
    "block_gram_norm",
    "full_gram_norm",
    "make_partition",
    "read_matrix",
    "read_vector",
    "spectral_norm",
    "write_matrix",
    "write_vector",
]


class InvalidPartitionError(ValueError):
    pass


class EstimationError(RuntimeError):
    """Power iteration did not reach the requested tolerance."""

    def __init__(self, message, estimate, vector):
        super().__init__(message)
        self.estimate = estimate
        self.vector = vector


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous split of ``range(n)`` into ``s`` blocks.

    Block ``i`` covers ``boundaries[i]:boundaries[i + 1]``.
    """

    n: int
    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(c) for c in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2 or b[0] != 0 or b[-1] != self.n:
            raise InvalidPartitionError(
                f"boundaries must run from 0 to n={self.n}, got {b}")
        if any(lo >= hi for lo, hi in zip(b[:-1], b[1:])):
            raise InvalidPartitionError(f"boundaries not strictly increasing: {b}")

    @property
    def s(self) -> int:
        return len(self.boundaries) - 1

    def slice(self, i: int) -> slice:
        if not 0 <= i < self.s:
            raise IndexError(f"block {i} out of range for {self.s} blocks")
        return slice(self.boundaries[i], self.boundaries[i + 1])

    def size(self, i: int) -> int:
        return self.boundaries[i + 1] - self.boundaries[i]

    def sizes(self) -> list[int]:
        return [self.size(i) for i in range(self.s)]

    def slices(self) -> list[slice]:
        return [self.slice(i) for i in range(self.s)]

    def block_of(self, j: int) -> int:
        """Index of the block containing coordinate ``j``."""
        return int(np.searchsorted(self.boundaries, j, side="right") - 1)


def make_partition(n: int, s: int) -> BlockPartition:
    """Split ``n`` coordinates into ``s`` contiguous blocks of near-equal size.

    When ``s`` does not divide ``n`` the first ``n % s`` blocks get one extra
    coordinate.
    """
    n, s = int(n), int(s)
    if s < 1 or s > n:
        raise InvalidPartitionError(f"need 1 <= s <= n, got n={n}, s={s}")
    q, rem = divmod(n, s)
    sizes = [q + 1] * rem + [q] * (s - rem)
    return BlockPartition(n, tuple(np.concatenate([[0], np.cumsum(sizes)]).tolist()))


class ColMatrix:
    """Read-only m-by-n matrix with cheap access to contiguous column blocks.

    Backed by a dense C-contiguous array or a CSC matrix. Column blocks are
    sliced once and cached so repeated ``A_i @ v`` / ``A_i.T @ r`` calls do
    not re-slice.
    """

    def __init__(self, data):
        if sp.issparse(data):
            mat = sp.csc_matrix(data, dtype=float)
            mat.sum_duplicates()
            vals = mat.data
        else:
            mat = np.array(data, dtype=float, copy=True)
            if mat.ndim != 2:
                raise ValueError(f"expected a 2-D matrix, got shape {mat.shape}")
            vals = mat
            mat.setflags(write=False)
        if mat.shape[0] < 1 or mat.shape[1] < 1:
            raise ValueError(f"matrix dimensions must be positive, got {mat.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("matrix has non-finite entries")
        self._mat = mat
        self._blocks: dict[tuple[int, int], object] = {}

    @property
    def shape(self) -> tuple[int, int]:
        return self._mat.shape

    @property
    def m(self) -> int:
        return self._mat.shape[0]

    @property
    def n(self) -> int:
        return self._mat.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._mat)

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self._mat.nnz)
        return int(np.count_nonzero(self._mat))

    @property
    def raw(self):
        return self._mat

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self._mat.toarray()
        return np.array(self._mat)

    def cols(self, sl: slice):
        key = (sl.start, sl.stop)
        blk = self._blocks.get(key)
        if blk is None:
            blk = self._mat[:, sl]
            if self.is_sparse:
                blk = sp.csc_matrix(blk)
            else:
                blk = np.ascontiguousarray(blk)
            self._blocks[key] = blk
        return blk

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(self._mat @ v).ravel()

    def rmatvec(self, r: np.ndarray) -> np.ndarray:
        return np.asarray(self._mat.T @ r).ravel()

    def block_matvec(self, sl: slice, v: np.ndarray) -> np.ndarray:
        return np.asarray(self.cols(sl) @ v).ravel()

    def block_rmatvec(self, sl: slice, r: np.ndarray) -> np.ndarray:
        return np.asarray(self.cols(sl).T @ r).ravel()

    def column_norms_sq(self) -> np.ndarray:
        if self.is_sparse:
            return np.asarray(self._mat.multiply(self._mat).sum(axis=0)).ravel()
        return np.einsum("ij,ij->j", self._mat, self._mat)


def spectral_norm(matvec, dim: int, tol: float = 1e-8, max_iter: int = 10000):
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Parameters
    ----------
    matvec : callable or ndarray
        Either a dense symmetric PSD matrix or a function ``v -> G @ v``.
    dim : int
        Operator dimension.
    tol : float
        Relative tolerance on successive Rayleigh quotients.
    max_iter : int
        Iteration cap; exceeding it raises :class:`EstimationError`.

    Returns
    -------
    float
        Estimate of ``lambda_max``; ``0.0`` for the zero operator.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not callable(matvec):
        G = np.asarray(matvec, dtype=float)
        matvec = G.__matmul__
    v = np.full(dim, 1.0 / np.sqrt(dim))
    w = np.asarray(matvec(v), dtype=float).ravel()
    if not np.any(w):
        # all-ones start lies in the null space; retry once from a generic vector
        v = np.cos(np.arange(1, dim + 1) * 1.2345)
        v /= np.linalg.norm(v)
        w = np.asarray(matvec(v), dtype=float).ravel()
        if not np.any(w):
            return 0.0
    lam = float(v @ w)
    for _ in range(max_iter):
        v = w / np.linalg.norm(w)
        w = np.asarray(matvec(v), dtype=float).ravel()
        lam_new = float(v @ w)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise EstimationError(
        f"power iteration did not converge in {max_iter} iterations", lam, v)


def block_gram_norm(A: ColMatrix, P: BlockPartition, i: int,
                    tol: float = 1e-8, max_iter: int = 10000) -> float:
    """``||A_i^T A_i||_2`` for column block ``i`` via matrix-free power iteration."""
    sl = P.slice(i)
    Ai = A.cols(sl)
    if A.is_sparse:
        if Ai.nnz == 0:
            return 0.0
    elif not np.any(Ai):
        return 0.0
    size = sl.stop - sl.start

    def gram(v):
        return np.asarray(Ai.T @ np.asarray(Ai @ v).ravel()).ravel()

    return spectral_norm(gram, size, tol=tol, max_iter=max_iter)


def full_gram_norm(A: ColMatrix, tol: float = 1e-8, max_iter: int = 10000) -> float:
    if A.nnz == 0:
        return 0.0
    return spectral_norm(lambda v: A.rmatvec(A.matvec(v)), A.n, tol=tol, max_iter=max_iter)


def write_matrix(path, A) -> None:
    """Write a matrix in MatrixMarket format (coordinate if sparse, array if dense)."""
    mat = A.raw if isinstance(A, ColMatrix) else A
    scipy.io.mmwrite(str(path), mat, field="real", precision=17)


def read_matrix(path) -> ColMatrix:
    return ColMatrix(scipy.io.mmread(str(path)))


def write_vector(path, v) -> None:
    Path(path).write_text("".join(f"{float(x)!r}\n" for x in np.ravel(v)))


def read_vector(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().split("\n") if ln.strip()]
    return np.array([float(ln) for ln in lines], dtype=float)
