"""APG, APGnc+, BPL and BCoAPGnc+ for regularized least squares.

Full-vector methods record one trace row per iteration (one pass each);
block methods record one row per block update with ``pass = k // s``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .blockrules import RULES, RuleState
from .problems import (
    REFRESH_PASSES,
    ProblemInstance,
    ResidualCache,
    StepPolicy,
    block_steps,
    objective,
    smooth_value,
    stationarity_residual,
)
from .regularizers import ConfigurationError, UnsupportedRuleError, block_value, prox_block, prox_full

__all__ = [
    "ALGORITHMS",
    "AssumptionReport",
    "DivergenceError",
    "SolverConfig",
    "Trace",
    "TraceRecord",
    "check_assumptions",
    "read_trace",
    "run_apg",
    "run_apgnc_plus",
    "run_bcoapgnc_plus",
    "run_bpl",
    "solve",
    "update_beta",
    "write_trace",
]

ALGORITHMS = ("apg", "apgnc+", "bpl", "bcoapgnc+")
TRACE_HEADER = ("k", "pass", "block", "objective", "beta_block", "residual", "elapsed_s")

# abort once F exceeds this multiple of F(x0)
DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``beta`` and ``t`` drive the adaptive momentum of APGnc+/BCoAPGnc+.
    ``momentum`` picks the BPL extrapolation weights: ``fista`` (the APG
    t-sequence) or ``constant`` (``omega``). ``extrapolation`` chooses what
    the previous iterate of a block is: ``last-update`` uses the block's value
    before its most recent update, ``literal`` uses the full iterate from two
    block updates ago (extrapolation vanishes unless the same block is picked
    twice in a row). ``probe_feedback`` lets BCoAPGnc+ adopt the probe point
    when it is better, as APGnc+ does; it is off by default.
    """

    algorithm: str = "bcoapgnc+"
    beta: float = 0.9
    t: float = 0.9
    step: StepPolicy = StepPolicy.PAPER_BLOCK
    rule: str = "cyclic"
    max_passes: int = 100
    tol: float = 0.0
    seed: int = 0
    momentum: str = "fista"
    omega: float = 0.0
    extrapolation: str = "last-update"
    probe_feedback: bool = False
    gsr_step: str = "block"
    timing: bool = False
    x0: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "step", StepPolicy(self.step))
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 < self.t < 1.0:
            raise ConfigurationError(f"t must lie in (0, 1), got {self.t}")
        if self.rule not in RULES:
            raise ConfigurationError(f"unknown block rule {self.rule!r}; expected one of {RULES}")
        if self.max_passes < 0:
            raise ConfigurationError("max_passes must be nonnegative")
        if self.momentum not in ("fista", "constant"):
            raise ConfigurationError(f"momentum must be 'fista' or 'constant', got {self.momentum!r}")
        if self.omega < 0:
            raise ConfigurationError("omega must be nonnegative")
        if self.extrapolation not in ("last-update", "literal"):
            raise ConfigurationError(f"unknown extrapolation {self.extrapolation!r}")
        if self.gsr_step not in ("block", "global"):
            raise ConfigurationError(f"gsr_step must be 'block' or 'global', got {self.gsr_step!r}")

    @property
    def name(self) -> str:
        if self.algorithm in ("bpl", "bcoapgnc+"):
            return f"{self.algorithm}({self.rule})"
        return self.algorithm

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class TraceRecord:
    k: int
    pass_: int
    block: int | None
    objective: float
    beta: float | None
    residual: float | None
    elapsed: float | None = None

    def row(self) -> list[str]:
        return [str(self.k), str(self.pass_), _fmt(self.block), _fmt(self.objective),
                _fmt(self.beta), _fmt(self.residual), _fmt(self.elapsed)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class Trace:
    """Per-update log of a solver run plus the final iterate."""

    name: str
    s: int
    records: list[TraceRecord] = field(default_factory=list)
    x: np.ndarray | None = None
    branches: list[str] = field(default_factory=list)
    probe_objectives: list[float] = field(default_factory=list)
    iterates: list[tuple[np.ndarray, np.ndarray | None]] | None = None
    betas: list[np.ndarray] | None = None
    refresh_drift: list[float] = field(default_factory=list)
    diverged: bool = False

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def at_pass_ends(self) -> list[TraceRecord]:
        """Initial record plus the last record of every completed pass."""
        out = [self.records[0]] if self.records else []
        out += [r for r in self.records[1:] if r.k % self.s == 0]
        return out

    def is_monotone(self, tol: float = 1e-12) -> bool:
        F = self.objectives
        return bool(np.all(np.diff(F) <= tol * np.maximum(1.0, np.abs(F[:-1])))) if F.size > 1 else True


def write_trace(path, trace: Trace | list[TraceRecord]) -> None:
    records = trace.records if isinstance(trace, Trace) else trace
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in records:
            w.writerow(r.row())


def read_trace(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise ValueError(f"{path}: not a trace file (bad header)")

    def opt(v, typ):
        return None if v == "" else typ(v)

    return [TraceRecord(int(k), int(p), opt(b, int), float(F), opt(be, float),
                        opt(res, float), opt(el, float))
            for k, p, b, F, be, res, el in rows[1:]]


def _x0(P: ProblemInstance, cfg: SolverConfig) -> np.ndarray:
    if cfg.x0 is None:
        return np.zeros(P.n)
    x0 = np.array(cfg.x0, dtype=float).ravel()
    if x0.size != P.n:
        raise ConfigurationError(f"x0 has length {x0.size}, expected {P.n}")
    return x0


def full_step(P: ProblemInstance, policy) -> float:
    """Step of the full-vector methods: the single-block view of ``policy``."""
    policy = StepPolicy(policy)
    if policy is StepPolicy.PAPER_BLOCK:
        return 1.0 / P.gram_norm
    return 1.0 / P.full_lip


class _Guard:
    def __init__(self, F0):
        self.limit = DIVERGENCE_FACTOR * max(abs(F0), 1e-300) if F0 > 0 else DIVERGENCE_FACTOR

    def check(self, F, x, trace, k):
        if not math.isfinite(F) or F > self.limit or not np.all(np.isfinite(x)):
            trace.diverged = True
            raise DivergenceError(f"{trace.name} diverged at update {k} (F={F})", trace)


class _Clock:
    def __init__(self, enabled):
        self.enabled = enabled
        self.t0 = time.perf_counter()

    def __call__(self):
        return time.perf_counter() - self.t0 if self.enabled else None


def _start(P, cfg, name, s, keep_iterates):
    x0 = _x0(P, cfg)
    trace = Trace(name=name, s=s, iterates=[] if keep_iterates else None,
                  betas=[] if keep_iterates else None)
    F0 = objective(P, x0)
    return x0, trace, F0


# smallest positive normal double; keeps beta * t from underflowing to zero
_TINY = np.finfo(float).tiny


def update_beta(beta: float, t: float, decrease: bool) -> float:
    """Adaptive momentum rule: ``t * beta`` after a decrease, else ``min(beta / t, 1)``.

    A zero ``beta`` stays zero; a positive one never underflows to zero.
    """
    if decrease:
        return max(beta * t, _TINY) if beta > 0 else 0.0
    return min(beta / t, 1.0)


def run_apg(P: ProblemInstance, cfg: SolverConfig = SolverConfig("apg", step="full-lipschitz"),
            keep_iterates: bool = False) -> Trace:
    """Accelerated proximal gradient (FISTA) on the full vector."""
    eta = full_step(P, cfg.step)
    x, trace, F = _start(P, cfg, "apg", 1, keep_iterates)
    clock = _Clock(cfg.timing)
    guard = _Guard(F)
    trace.records.append(TraceRecord(0, 0, None, F, None, stationarity_residual(P, x, eta), clock()))
    x_prev = x.copy()
    t_prev, t_cur = 0.0, 1.0
    for k in range(1, cfg.max_passes + 1):
        w = (t_prev - 1.0) / t_cur
        y = x + w * (x - x_prev)
        grad = P.A.rmatvec(P.A.matvec(y) - P.b) / P.divisor
        x_prev, x = x, prox_full(P.reg, y - eta * grad, eta)
        t_prev, t_cur = t_cur, (1.0 + math.sqrt(1.0 + 4.0 * t_cur * t_cur)) / 2.0
        F = objective(P, x)
        guard.check(F, x, trace, k)
        res = stationarity_residual(P, x, eta)
        trace.records.append(TraceRecord(k, k, None, F, w, res, clock()))
        if keep_iterates:
            trace.iterates.append((x.copy(), None))
        if res <= cfg.tol:
            break
    trace.x = x
    return trace


def run_apgnc_plus(P: ProblemInstance, cfg: SolverConfig = SolverConfig("apgnc+", step="full-lipschitz"),
                   keep_iterates: bool = False) -> Trace:
    """APGnc with adaptive momentum on the full vector."""
    eta = full_step(P, cfg.step)
    x, trace, F = _start(P, cfg, "apgnc+", 1, keep_iterates)
    clock = _Clock(cfg.timing)
    guard = _Guard(F)
    beta, t = cfg.beta, cfg.t
    trace.records.append(TraceRecord(0, 0, None, F, beta, stationarity_residual(P, x, eta), clock()))
    y = x.copy()
    for k in range(1, cfg.max_passes + 1):
        grad = P.A.rmatvec(P.A.matvec(y) - P.b) / P.divisor
        x_new = prox_full(P.reg, y - eta * grad, eta)
        v = x_new + beta * (x_new - x)
        F = objective(P, x_new)
        Fv = objective(P, v)
        guard.check(F, x_new, trace, k)
        decrease = F <= Fv
        y = x_new if decrease else v
        beta = update_beta(beta, t, decrease)
        trace.branches.append("decrease" if decrease else "increase")
        trace.probe_objectives.append(Fv)
        x = x_new
        res = stationarity_residual(P, x, eta)
        trace.records.append(TraceRecord(k, k, None, F, beta, res, clock()))
        if keep_iterates:
            trace.iterates.append((x.copy(), v.copy()))
        if res <= cfg.tol:
            break
    trace.x = x
    return trace


def run_bpl(P: ProblemInstance, cfg: SolverConfig = SolverConfig("bpl"), rule: str | None = None,
            keep_iterates: bool = False) -> Trace:
    """Block prox-linear method with extrapolation weights ``omega_k``."""
    return _run_block(P, cfg.with_(algorithm="bpl", rule=rule or cfg.rule), adaptive=False,
                      keep_iterates=keep_iterates)


def run_bcoapgnc_plus(P: ProblemInstance, cfg: SolverConfig = SolverConfig(), rule: str | None = None,
                      keep_iterates: bool = False) -> Trace:
    """Block-coordinate APGnc with per-block adaptive momentum."""
    return _run_block(P, cfg.with_(algorithm="bcoapgnc+", rule=rule or cfg.rule), adaptive=True,
                      keep_iterates=keep_iterates)


def _run_block(P: ProblemInstance, cfg: SolverConfig, adaptive: bool, keep_iterates: bool) -> Trace:
    s = P.s
    slices = P.partition.slices()
    alphas = block_steps(P, cfg.step)
    rule_alphas = alphas if cfg.gsr_step == "block" else np.full(s, 1.0 / P.full_lip)
    picker = RuleState(cfg.rule, s, seed=cfg.seed, convex=P.reg.convex)

    x0, trace, F = _start(P, cfg, cfg.name, s, keep_iterates)
    clock = _Clock(cfg.timing)
    guard = _Guard(F)
    cache = ResidualCache(P, x0)
    probe = ResidualCache(P, x0) if adaptive else None
    prev = x0.copy()
    last_block = None
    betas = np.full(s, float(cfg.beta))
    t_prev, t_cur = 0.0, 1.0

    trace.records.append(TraceRecord(0, 0, None, F, None, stationarity_residual(P, x0, alphas), clock()))
    total = cfg.max_passes * s
    for k in range(1, total + 1):
        i = picker.next_block(P, cache.x, cache.r, rule_alphas)
        sl = slices[i]
        if adaptive:
            w = betas[i]
        elif cfg.momentum == "fista":
            w = max((t_prev - 1.0) / t_cur, 0.0)
            t_prev, t_cur = t_cur, (1.0 + math.sqrt(1.0 + 4.0 * t_cur * t_cur)) / 2.0
        else:
            w = cfg.omega

        if cfg.extrapolation == "literal" and last_block is not None and last_block != i:
            prev[slices[last_block]] = cache.x[slices[last_block]]
        xi = cache.x[sl].copy()
        xhat = xi + w * (xi - prev[sl])
        r_hat = cache.shifted(i, xhat)
        grad = P.A.block_rmatvec(sl, r_hat) / P.divisor
        a = alphas[i]
        new = prox_block(P.reg, P.partition, i, xhat - a * grad, a)
        prev[sl] = xi
        last_block = i
        cache.set_block(i, new)
        F = cache.objective()
        guard.check(F, new, trace, k)

        beta_rec = w
        v_full = None
        if adaptive:
            vi = new + betas[i] * (new - xi)
            probe.set_block(i, vi)
            Fv = probe.objective()
            decrease = F <= Fv
            betas[i] = update_beta(betas[i], cfg.t, decrease)
            trace.branches.append("decrease" if decrease else "increase")
            if not decrease and cfg.probe_feedback:
                cache.set_block(i, vi)
                F = Fv
            trace.probe_objectives.append(Fv)
            beta_rec = betas[i]
            if keep_iterates:
                v_full = probe.x.copy()
        if keep_iterates:
            trace.iterates.append((cache.x.copy(), v_full))
            trace.betas.append(betas.copy())

        res = None
        if k % s == 0:
            p = k // s
            if p % REFRESH_PASSES == 0:
                trace.refresh_drift.append(cache.refresh(p))
                if probe is not None:
                    probe.refresh(p)
                F = cache.objective()
            res = stationarity_residual(P, cache.x, alphas)
        trace.records.append(TraceRecord(k, k // s, i, F, beta_rec, res, clock()))
        if res is not None and res <= cfg.tol:
            break
    trace.x = cache.x.copy()
    return trace


def solve(P: ProblemInstance, cfg: SolverConfig, keep_iterates: bool = False) -> Trace:
    """Dispatch on ``cfg.algorithm``."""
    if cfg.algorithm == "apg":
        return run_apg(P, cfg, keep_iterates)
    if cfg.algorithm == "apgnc+":
        return run_apgnc_plus(P, cfg, keep_iterates)
    if cfg.algorithm == "bpl":
        return run_bpl(P, cfg, keep_iterates=keep_iterates)
    return run_bcoapgnc_plus(P, cfg, keep_iterates=keep_iterates)


@dataclass
class AssumptionReport:
    """``coverage_T`` is the pass-aligned window in which every block is
    updated; ``max_gap`` bounds the number of updates between two visits of
    the same block over arbitrary windows."""

    partition_valid: bool
    steps_positive: bool
    coverage: str
    coverage_T: int | None
    max_gap: int | None
    gs_s_supported: bool
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


def check_assumptions(P: ProblemInstance, cfg: SolverConfig) -> AssumptionReport:
    """Static audit of a (problem, solver) pair; never raises."""
    issues = []
    sizes = P.partition.sizes()
    partition_valid = sum(sizes) == P.n and min(sizes) >= 1
    if not partition_valid:
        issues.append("block partition does not cover the coordinates")
    try:
        if cfg.algorithm in ("apg", "apgnc+"):
            steps = np.array([full_step(P, cfg.step)])
        else:
            steps = block_steps(P, cfg.step)
        steps_positive = bool(np.all(steps > 0) and np.all(np.isfinite(steps)))
    except ValueError as exc:
        steps_positive = False
        issues.append(str(exc))
    if not steps_positive and not issues:
        issues.append("non-positive step size")

    if cfg.algorithm in ("apg", "apgnc+"):
        coverage, T, gap = "hard", 1, 1
    elif cfg.rule == "cyclic" or P.s == 1:
        coverage, T, gap = "hard", P.s, P.s
    elif cfg.rule == "shuffled":
        # every pass-aligned window of s updates visits each block; an
        # unaligned window can straddle two permutations and miss one
        coverage, T, gap = "hard", P.s, 2 * P.s - 1
    else:
        coverage, T, gap = "probabilistic", None, None

    gs_s_supported = P.reg.convex
    if cfg.rule == "gs-s" and not gs_s_supported and cfg.algorithm in ("bpl", "bcoapgnc+"):
        issues.append(f"gs-s rule is unsupported for nonconvex regularizer {P.reg.kind}")
    return AssumptionReport(partition_valid, steps_positive, coverage, T, gap, gs_s_supported, issues)
