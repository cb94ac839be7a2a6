"""Regularized least-squares instances.

The objective is ``F(x) = ||Ax - b||^2 / (2 c) + R(x)`` where the divisor
``c`` is selected by ``loss_scale``: the column count ``n`` (default), the
row count ``m``, or ``1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import numkit
from .numkit import BlockPartition, ColMatrix, make_partition
from .regularizers import (
    ConfigurationError,
    RegularizerSpec,
    block_value,
    local_groups,
    prox_block,
)

__all__ = [
    "LOSS_SCALES",
    "ProblemInstance",
    "ResidualCache",
    "StandardizationError",
    "StepPolicy",
    "UndefinedStepError",
    "build_problem",
    "gen_sparse_ls",
    "grad_block",
    "load_instance",
    "objective",
    "reference_optimum",
    "save_instance",
    "standardize",
    "stationarity_residual",
    "step_size",
]

LOSS_SCALES = ("cols", "rows", "unit")

# full recomputation of cached residuals happens every this many passes
REFRESH_PASSES = 50


class StandardizationError(ValueError):
    pass


class UndefinedStepError(ValueError):
    pass


class StepPolicy(str, Enum):
    PAPER_BLOCK = "paper-block"
    LIPSCHITZ_BLOCK = "lipschitz-block"
    FULL_LIPSCHITZ = "full-lipschitz"


@dataclass(frozen=True)
class ProblemInstance:
    A: ColMatrix
    b: np.ndarray
    reg: RegularizerSpec
    partition: BlockPartition
    block_gram: tuple[float, ...]
    gram_norm: float
    loss_scale: str = "cols"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return self.A.m

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def s(self) -> int:
        return self.partition.s

    @property
    def divisor(self) -> float:
        return float({"cols": self.A.n, "rows": self.A.m, "unit": 1}[self.loss_scale])

    @property
    def full_lip(self) -> float:
        """Lipschitz constant of the full gradient, ``||A^T A||_2 / c``."""
        return self.gram_norm / self.divisor

    def with_partition(self, P: BlockPartition) -> "ProblemInstance":
        return build_problem(self.A, self.b, self.reg, P, self.loss_scale, meta=self.meta)

    def with_regularizer(self, reg: RegularizerSpec) -> "ProblemInstance":
        reg.check_blocks(self.partition)
        return ProblemInstance(self.A, self.b, reg, self.partition, self.block_gram,
                               self.gram_norm, self.loss_scale, self.meta)


def build_problem(A, b, reg: RegularizerSpec, partition: BlockPartition | int = 1,
                  loss_scale: str = "cols", meta: dict | None = None) -> ProblemInstance:
    """Assemble an instance and cache the block and full Gram norms.

    ``partition`` may be a :class:`BlockPartition` or a block count.
    """
    if not isinstance(A, ColMatrix):
        A = ColMatrix(A)
    b = np.array(b, dtype=float).ravel()
    if b.size != A.m:
        raise ConfigurationError(f"b has length {b.size}, A has {A.m} rows")
    if not np.all(np.isfinite(b)):
        raise ConfigurationError("b has non-finite entries")
    if loss_scale not in LOSS_SCALES:
        raise ConfigurationError(f"loss_scale must be one of {LOSS_SCALES}, got {loss_scale!r}")
    if isinstance(partition, (int, np.integer)):
        partition = make_partition(A.n, int(partition))
    if partition.n != A.n:
        raise ConfigurationError(f"partition covers {partition.n} coordinates, A has {A.n} columns")
    reg.check_blocks(partition)
    gram_norm = numkit.full_gram_norm(A)
    if gram_norm == 0.0:
        raise ConfigurationError("A is identically zero")
    b.setflags(write=False)
    grams = tuple(numkit.block_gram_norm(A, partition, i) for i in range(partition.s))
    return ProblemInstance(A, b, reg, partition, grams, gram_norm, loss_scale, dict(meta or {}))


def gen_sparse_ls(m: int, n: int, density: float, seed: int, *, noise: float = 0.01,
                  support: int | None = None, signal: float = 1.0, sparse: bool | None = None):
    """Random sparse least-squares data with a planted sparse solution.

    Each entry of ``A`` is nonzero with probability ``density`` and standard
    normal when nonzero. ``b = A x0 + noise * e`` where ``x0`` has ``support``
    (default ``n // 10``) nonzeros drawn as ``signal * N(0, 1)``.

    Returns
    -------
    A : ColMatrix
    b : ndarray
    x0 : ndarray
        The planted solution.
    """
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < density
    vals = rng.standard_normal((m, n))
    dense = np.where(mask, vals, 0.0)
    if sparse is None:
        sparse = density < 0.5
    A = ColMatrix(sp.csc_matrix(dense) if sparse else dense)
    k = n // 10 if support is None else int(support)
    x0 = np.zeros(n)
    idx = rng.choice(n, size=k, replace=False)
    x0[np.sort(idx)] = signal * rng.standard_normal(k)
    b = A.matvec(x0) + noise * rng.standard_normal(m)
    return A, b, x0


def standardize(A, b):
    """Center ``b`` and every column of ``A``; scale columns to unit population variance.

    Centering a sparse matrix makes it dense, so the result is always dense.
    """
    M = A.toarray() if isinstance(A, ColMatrix) else (A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    m = M.shape[0]
    if m < 2:
        raise StandardizationError("need at least two rows to standardize")
    M = M - M.mean(axis=0)
    sd = np.sqrt(np.mean(M * M, axis=0))
    bad = np.flatnonzero(sd <= 1e-14 * (1 + np.abs(M).max(initial=0.0)))
    if bad.size:
        raise StandardizationError(f"column {int(bad[0])} has zero variance")
    bc = b - b.mean()
    if not np.any(np.abs(bc) > 1e-14 * (1 + np.abs(b).max())):
        raise StandardizationError("b is constant")
    return ColMatrix(M / sd), bc


def _as_vector(x):
    return np.asarray(getattr(x, "values", x), dtype=float)


def smooth_value(P: ProblemInstance, r) -> float:
    return float(r @ r) / (2.0 * P.divisor)


def objective(P: ProblemInstance, x) -> float:
    """``||Ax - b||^2 / (2c) + R(x)`` evaluated from scratch."""
    x = _as_vector(x)
    if x.size != P.n:
        raise ConfigurationError(f"x has length {x.size}, expected {P.n}")
    r = P.A.matvec(x) - P.b
    return smooth_value(P, r) + block_value(P.reg, x)


def full_gradient(P: ProblemInstance, x) -> np.ndarray:
    r = P.A.matvec(_as_vector(x)) - P.b
    return P.A.rmatvec(r) / P.divisor


def grad_block(P: ProblemInstance, r, i: int) -> np.ndarray:
    """Block gradient ``A_i^T r / c`` for a residual ``r = Ax - b``."""
    return P.A.block_rmatvec(P.partition.slice(i), r) / P.divisor


def step_size(P: ProblemInstance, i: int, policy) -> float:
    """Step for block ``i``.

    ``paper-block`` is ``1 / ||A_i^T A_i||``; ``lipschitz-block`` is the
    inverse Lipschitz constant ``c / ||A_i^T A_i||`` of the block gradient;
    ``full-lipschitz`` is ``c / ||A^T A||`` and ignores ``i``.
    """
    policy = StepPolicy(policy)
    if policy is StepPolicy.FULL_LIPSCHITZ:
        return 1.0 / P.full_lip
    g = P.block_gram[i]
    if g == 0.0:
        raise UndefinedStepError(f"block {i} has only zero columns; step size undefined")
    if policy is StepPolicy.PAPER_BLOCK:
        return 1.0 / g
    return P.divisor / g


def block_steps(P: ProblemInstance, policy) -> np.ndarray:
    return np.array([step_size(P, i, policy) for i in range(P.s)])


def prox_grad_step(P: ProblemInstance, i: int, x_i, g_i, alpha: float) -> np.ndarray:
    return prox_block(P.reg, P.partition, i, x_i - alpha * g_i, alpha)


def stationarity_residual(P: ProblemInstance, x, alpha) -> float:
    """``||x - prox_{alpha R}(x - alpha grad f(x))||``, blockwise.

    ``alpha`` is a scalar or one step per block.
    """
    x = _as_vector(x)
    alphas = np.broadcast_to(np.asarray(alpha, dtype=float), (P.s,))
    if np.any(alphas <= 0):
        raise ValueError("steps must be positive")
    r = P.A.matvec(x) - P.b
    total = 0.0
    for i, sl in enumerate(P.partition.slices()):
        d = x[sl] - prox_grad_step(P, i, x[sl], grad_block(P, r, i), alphas[i])
        total += float(d @ d)
    return float(np.sqrt(total))


class ResidualCache:
    """Tracks ``r = Ax - b`` and the per-block penalty values of ``x``."""

    def __init__(self, P: ProblemInstance, x):
        self.P = P
        self.x = np.array(_as_vector(x), dtype=float)
        self.last_refresh = 0
        self._groups = [local_groups(P.reg, P.partition, i) for i in range(P.s)]
        self.refresh()

    def refresh(self, pass_index: int | None = None) -> float:
        """Recompute from scratch; returns the drift ``||r_cached - r_exact||``."""
        old = getattr(self, "r", None)
        self.r = self.P.A.matvec(self.x) - self.P.b
        self.reg_blocks = np.array([self._block_reg(i, self.x[sl])
                                    for i, sl in enumerate(self.P.partition.slices())])
        if pass_index is not None:
            self.last_refresh = pass_index
        return 0.0 if old is None else float(np.linalg.norm(old - self.r))

    def _block_reg(self, i, xi):
        return block_value(self.P.reg, xi, self._groups[i])

    def set_block(self, i: int, xi) -> None:
        sl = self.P.partition.slice(i)
        delta = xi - self.x[sl]
        if np.any(delta):
            self.r += self.P.A.block_matvec(sl, delta)
            self.x[sl] = xi
            self.reg_blocks[i] = self._block_reg(i, xi)

    def shifted(self, i: int, xi) -> np.ndarray:
        """Residual after replacing block ``i`` by ``xi`` (cache untouched)."""
        sl = self.P.partition.slice(i)
        delta = xi - self.x[sl]
        if not np.any(delta):
            return self.r
        return self.r + self.P.A.block_matvec(sl, delta)

    def objective(self) -> float:
        return smooth_value(self.P, self.r) + float(np.sum(self.reg_blocks))


def reference_optimum(P: ProblemInstance, budget: int = 10000, tol: float = 1e-12, seed: int = 0):
    """Best objective found by long BCoAPGnc+ (gs-r) and BPL (cyclic) runs.

    Both runs use ``lipschitz-block`` steps and stop early once the
    stationarity residual drops below ``tol``.

    Returns
    -------
    x : ndarray
    F : float
    info : dict
        Per-run final objective and stationarity residual.
    """
    from .solvers import SolverConfig, run_bcoapgnc_plus, run_bpl

    runs = {
        "bcoapgnc+/gs-r": (run_bcoapgnc_plus, SolverConfig(
            algorithm="bcoapgnc+", rule="gs-r", step=StepPolicy.LIPSCHITZ_BLOCK,
            beta=0.9, t=0.9, max_passes=budget, tol=tol, seed=seed)),
        "bpl/cyclic": (run_bpl, SolverConfig(
            algorithm="bpl", rule="cyclic", step=StepPolicy.LIPSCHITZ_BLOCK,
            max_passes=budget, tol=tol, seed=seed)),
    }
    best_x, best_F, info = None, np.inf, {}
    alphas = block_steps(P, StepPolicy.LIPSCHITZ_BLOCK)
    for name, (fn, cfg) in runs.items():
        tr = fn(P, cfg)
        F = objective(P, tr.x)
        info[name] = {"objective": F, "residual": stationarity_residual(P, tr.x, alphas),
                      "passes": tr.records[-1].pass_ if tr.records else 0}
        if F < best_F:
            best_x, best_F = tr.x, F
    return best_x, best_F, info


def save_instance(P: ProblemInstance, directory, name: str = "instance") -> Path:
    """Write ``<name>.mtx``, ``<name>.b.txt`` and ``<name>.json`` metadata."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    numkit.write_matrix(d / f"{name}.mtx", P.A)
    numkit.write_vector(d / f"{name}.b.txt", P.b)
    meta = {
        "m": P.m, "n": P.n,
        "blocks": list(P.partition.boundaries),
        "regularizer": P.reg.to_dict(),
        "loss_scale": P.loss_scale,
        "generator": P.meta,
    }
    path = d / f"{name}.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_instance(meta_path) -> ProblemInstance:
    meta_path = Path(meta_path)
    meta = json.loads(meta_path.read_text())
    stem = meta_path.with_suffix("")
    A = numkit.read_matrix(f"{stem}.mtx")
    b = numkit.read_vector(f"{stem}.b.txt")
    reg = RegularizerSpec.from_dict(meta["regularizer"], n=A.n)
    P = BlockPartition(A.n, tuple(meta["blocks"]))
    return build_problem(A, b, reg, P, meta.get("loss_scale", "cols"), meta=meta.get("generator"))
