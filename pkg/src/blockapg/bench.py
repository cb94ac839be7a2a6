"""Experiment presets, run configuration files, benchmark runs and trace comparison."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import platform
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, numkit
from .numkit import make_partition
from .problems import (
    ProblemInstance,
    build_problem,
    gen_sparse_ls,
    objective,
    reference_optimum,
    standardize,
)
from .regularizers import ConfigurationError, RegularizerSpec
from .solvers import DivergenceError, SolverConfig, Trace, read_trace, solve, write_trace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "CHECKPOINTS",
    "PRESETS",
    "THRESHOLDS",
    "CompareReport",
    "ProblemSection",
    "RunConfig",
    "RunResult",
    "compare",
    "load_config",
    "preset",
    "run",
]

PRESETS = ("lasso", "group-lasso", "capped-l1", "scad")
THRESHOLDS = (1e-2, 1e-4, 1e-6)
CHECKPOINTS = (5, 10, 20, 50)


@dataclass
class ProblemSection:
    m: int = 1000
    n: int = 5000
    blocks: int = 5
    density: float = 0.1
    seed: int = 0
    standardize: bool = False
    loss_scale: str = "unit"
    noise: float = 0.01
    support: int | None = None
    signal: float = 1.0
    response: str = "planted"
    matrix: str | None = None
    rhs: str | None = None


@dataclass
class RunConfig:
    problem: ProblemSection
    regularizer: dict
    solvers: list[tuple[str, SolverConfig]]
    budget: int = 100
    out: str | None = None
    reference_budget: int = 10000
    reference_tol: float = 1e-12
    name: str = "custom"

    def __post_init__(self):
        names = [n for n, _ in self.solvers]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ConfigurationError(f"duplicate solver names: {sorted(dup)}")
        if self.budget < 0:
            raise ConfigurationError("budget must be nonnegative")
        for key in ("matrix", "rhs"):
            path = getattr(self.problem, key)
            if path is not None and not Path(path).exists():
                raise ConfigurationError(f"problem.{key} file not found: {path}")
        if (self.problem.matrix is None) != (self.problem.rhs is None):
            raise ConfigurationError("problem.matrix and problem.rhs must be given together")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "budget": self.budget,
            "problem": asdict(self.problem),
            "regularizer": self.regularizer,
            "reference": {"budget": self.reference_budget, "tol": self.reference_tol},
            "solvers": [{"name": n, **_solver_dict(c)} for n, c in self.solvers],
        }


def _solver_dict(cfg: SolverConfig) -> dict:
    d = asdict(cfg)
    d.pop("x0")
    d["step"] = cfg.step.value
    return d


def _preset_solvers(beta: float, t: float) -> list[tuple[str, SolverConfig]]:
    common = dict(beta=beta, t=t, step="paper-block")
    return [
        ("apg", SolverConfig("apg", **common)),
        ("apgnc+", SolverConfig("apgnc+", **common)),
        ("bpl(shuffled)", SolverConfig("bpl", rule="shuffled", momentum="fista", **common)),
        ("bcoapgnc+(shuffled)", SolverConfig("bcoapgnc+", rule="shuffled", **common)),
        ("bcoapgnc+(gs-r)", SolverConfig("bcoapgnc+", rule="gs-r", **common)),
    ]


def preset(name: str, scale: float = 1.0, seed: int = 0, budget: int = 100) -> RunConfig:
    """Experiment configurations of the four sparse regression benchmarks.

    ``scale`` shrinks ``m`` and ``n`` (rounded up); the block count is kept.
    """
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if not scale > 0:
        raise ConfigurationError("scale must be positive")
    m, n = math.ceil(scale * 1000), math.ceil(scale * 5000)
    if name == "lasso":
        prob = ProblemSection(m=m, n=n, blocks=5, seed=seed)
        reg = {"type": "l1", "lambda": 1.0}
        beta, t = 0.9, 0.9
    elif name == "group-lasso":
        prob = ProblemSection(m=m, n=n, blocks=5, seed=seed)
        reg = {"type": "group-l2", "lambda": 1.0, "groups": 5}
        beta, t = 0.8, 0.2
    elif name == "capped-l1":
        lam = 1e-4
        prob = ProblemSection(m=m, n=n, blocks=10, seed=seed)
        reg = {"type": "capped-l1", "lambda": lam, "theta": 0.1 * lam}
        beta, t = 0.8, 0.2
    else:
        prob = ProblemSection(m=m, n=n, blocks=10, seed=seed, density=1.0,
                              standardize=True, response="gaussian")
        reg = {"type": "scad", "lambda": 1e-4, "gamma": 3.0}
        beta, t = 0.8, 0.2
    solvers = [(nm, c.with_(seed=seed)) for nm, c in _preset_solvers(beta, t)]
    return RunConfig(prob, reg, solvers, budget=budget, name=name)


_TOP_LEVEL_KEYS = {"preset", "scale", "seed", "budget", "out", "name",
                   "problem", "regularizer", "solver", "reference"}


def load_config(path) -> RunConfig:
    """Read a TOML run configuration (see README for the layout)."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    raw = copy.deepcopy(raw)
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {sorted(unknown)}")
    base = path.parent
    if "preset" in raw:
        cfg = preset(raw["preset"], float(raw.get("scale", 1.0)),
                     seed=int(raw.get("seed", 0)), budget=int(raw.get("budget", 100)))
    else:
        cfg = None
    prob_raw = raw.get("problem", {})
    for key in ("matrix", "rhs"):
        if key in prob_raw:
            prob_raw[key] = str((base / prob_raw[key]).resolve())
    known = set(ProblemSection.__dataclass_fields__)
    unknown = set(prob_raw) - known
    if unknown:
        raise ConfigurationError(f"unknown problem keys: {sorted(unknown)}")
    prob = ProblemSection(**{**(asdict(cfg.problem) if cfg else {}), **prob_raw})

    reg = raw.get("regularizer", cfg.regularizer if cfg else None)
    if reg is None:
        raise ConfigurationError("missing [regularizer] section")
    if "solver" in raw:
        solvers = []
        for entry in raw["solver"]:
            entry = dict(entry)
            nm = entry.pop("name", None)
            try:
                sc = SolverConfig(**entry)
            except TypeError as exc:
                raise ConfigurationError(f"bad solver entry: {exc}") from None
            solvers.append((nm or sc.name, sc))
    elif cfg is not None:
        solvers = cfg.solvers
    else:
        raise ConfigurationError("no [[solver]] entries")
    ref = raw.get("reference", {})
    return RunConfig(prob, dict(reg), solvers,
                     budget=int(raw.get("budget", cfg.budget if cfg else 100)),
                     out=raw.get("out"),
                     reference_budget=int(ref.get("budget", 10000)),
                     reference_tol=float(ref.get("tol", 1e-12)),
                     name=raw.get("name", cfg.name if cfg else path.stem))


def build_instance(prob: ProblemSection, reg: dict) -> ProblemInstance:
    """Generate (or load) the data of a problem section and assemble the instance."""
    if prob.matrix is not None:
        A = numkit.read_matrix(prob.matrix)
        b = numkit.read_vector(prob.rhs)
    elif prob.response == "planted":
        A, b, _ = gen_sparse_ls(prob.m, prob.n, prob.density, prob.seed, noise=prob.noise,
                                support=prob.support, signal=prob.signal)
    elif prob.response == "gaussian":
        A, _, _ = gen_sparse_ls(prob.m, prob.n, prob.density, prob.seed, noise=0.0, support=0)
        b = np.random.default_rng([prob.seed, 1]).standard_normal(prob.m)
    else:
        raise ConfigurationError(f"unknown response model {prob.response!r}")
    if prob.standardize:
        A, b = standardize(A, b)
    spec = RegularizerSpec.from_dict(reg, n=A.n)
    meta = {k: v for k, v in asdict(prob).items() if v is not None}
    return build_problem(A, b, spec, make_partition(A.n, prob.blocks), prob.loss_scale, meta=meta)


def fingerprint(P: ProblemInstance) -> str:
    h = hashlib.sha256()
    A = P.A.raw
    if P.A.is_sparse:
        for arr in (A.indptr, A.indices, A.data):
            h.update(np.ascontiguousarray(arr).tobytes())
    else:
        h.update(np.ascontiguousarray(A).tobytes())
    h.update(np.ascontiguousarray(P.b).tobytes())
    h.update(json.dumps([P.reg.to_dict(), list(P.partition.boundaries), P.loss_scale]).encode())
    return h.hexdigest()[:16]


def _file_stem(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9+.-]+", "_", name).strip("_")


def pass_values(records) -> dict[int, float]:
    """Objective at the end of each pass (first record carrying that pass index)."""
    out: dict[int, float] = {}
    for r in records:
        out.setdefault(r.pass_, r.objective)
    return out


def value_at_pass(records, p: int) -> float:
    vals = pass_values(records)
    if p in vals:
        return vals[p]
    # run stopped early (tolerance reached): the final value persists
    done = [q for q in vals if q <= p]
    return vals[max(done)] if done else math.nan


def max_visit_gap(records, s: int) -> int | None:
    """Largest number of updates between consecutive visits of a block (including start/end)."""
    blocks = [r.block for r in records if r.block is not None]
    if not blocks:
        return None
    last = {i: 0 for i in range(s)}
    gap = 0
    for k, i in enumerate(blocks, start=1):
        gap = max(gap, k - last[i])
        last[i] = k
    end = len(blocks) + 1
    return max([gap] + [end - last[i] for i in range(s)])


@dataclass
class SolverSummary:
    name: str
    final_gap: float
    passes_to: dict[float, int | None]
    max_gap: int | None
    monotone: bool
    diverged: bool
    passes: int

    def row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else (repr(float(v)) if isinstance(v, float) else str(v))
        return ([self.name, fmt(self.final_gap)]
                + [fmt(self.passes_to[t]) for t in THRESHOLDS]
                + [fmt(self.max_gap), str(int(self.monotone)), str(int(self.diverged)), str(self.passes)])


SUMMARY_HEADER = (["solver", "final_gap"] + [f"passes_to_{t:g}" for t in THRESHOLDS]
                  + ["max_visit_gap", "monotone", "diverged", "passes"])


@dataclass
class RunResult:
    traces: dict[str, Trace]
    summary: list[SolverSummary]
    fstar: float
    reference: dict
    problem: ProblemInstance
    metadata: dict = field(default_factory=dict)


def summarize(name: str, trace: Trace, fstar: float, s: int) -> SolverSummary:
    gaps = [(r.pass_, r.objective - fstar) for r in trace.records]
    passes_to = {}
    for thr in THRESHOLDS:
        hit = next((p for p, g in gaps if g <= thr), None)
        passes_to[thr] = hit
    return SolverSummary(
        name=name,
        final_gap=gaps[-1][1] if gaps else math.nan,
        passes_to=passes_to,
        max_gap=max_visit_gap(trace.records, s) if trace.s > 1 else None,
        monotone=trace.is_monotone(),
        diverged=trace.diverged,
        passes=trace.records[-1].pass_ if trace.records else 0,
    )


def run(config: RunConfig, out=None, write: bool = True, timing: bool = False) -> RunResult:
    """Build the instance, compute the reference optimum, run every solver, write outputs."""
    P = build_instance(config.problem, config.regularizer)
    _, fref, ref_info = reference_optimum(P, budget=config.reference_budget,
                                          tol=config.reference_tol, seed=config.problem.seed)
    traces: dict[str, Trace] = {}
    errors: dict[str, str] = {}
    for name, cfg in config.solvers:
        cfg = cfg.with_(max_passes=config.budget, timing=timing or cfg.timing)
        try:
            traces[name] = solve(P, cfg)
        except DivergenceError as exc:
            traces[name] = exc.trace
            errors[name] = str(exc)
    # a solver may end below the reference on nonconvex problems; keep F - F* >= 0
    fmin = min([fref] + [float(tr.objectives.min()) for tr in traces.values() if tr.records])
    fstar = min(fref, fmin)
    summary = [summarize(nm, traces[nm], fstar, P.s) for nm, _ in config.solvers]
    meta = {
        "config": config.to_dict(),
        "fstar": fstar,
        "fstar_reference": fref,
        "fstar_refined_by_solver": fstar < fref,
        "reference": ref_info,
        "problem_fingerprint": fingerprint(P),
        "initial_objective": objective(P, np.zeros(P.n)),
        "errors": errors,
        "traces": {nm: _file_stem(nm) + ".csv" for nm, _ in config.solvers},
        "versions": {"blockapg": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
    }
    res = RunResult(traces, summary, fstar, ref_info, P, meta)
    out = out or config.out
    if write and out is not None:
        write_run(res, out)
    return res


def write_run(res: RunResult, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for nm, tr in res.traces.items():
        write_trace(out / res.metadata["traces"][nm], tr)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in res.summary:
            w.writerow(row.row())
    (out / "metadata.json").write_text(json.dumps(res.metadata, indent=2, sort_keys=True, default=_json_default) + "\n")
    return out


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


class ComparisonError(ValueError):
    pass


@dataclass
class CompareReport:
    names: list[str]
    checkpoints: list[int]
    gaps: dict[str, list[float]]
    winners: list[str | None]
    fstar: float

    def winner_at(self, p: int) -> str | None:
        return self.winners[self.checkpoints.index(p)]

    def format(self) -> str:
        width = max(12, *(len(n) for n in self.names))
        lines = [f"F* = {self.fstar!r}",
                 "pass".ljust(8) + "".join(n.rjust(width + 2) for n in self.names) + "  winner"]
        for j, p in enumerate(self.checkpoints):
            cells = "".join(f"{self.gaps[n][j]:.6e}".rjust(width + 2) for n in self.names)
            lines.append(f"{p:<8}" + cells + "  " + (self.winners[j] or "tie"))
        return "\n".join(lines)


def _trace_metadata(path: Path):
    meta_path = path.parent / "metadata.json"
    if not meta_path.exists():
        return None
    return json.loads(meta_path.read_text())


def compare(paths, fstar: float | None = None, checkpoints=None, names=None) -> CompareReport:
    """Tabulate ``F - F*`` at checkpoint passes and pick the winner at each one.

    ``F*`` comes from ``fstar``, else from the ``metadata.json`` beside the
    traces, else the smallest objective in any trace. Traces whose metadata
    names different problems are rejected.
    """
    paths = [Path(p) for p in paths]
    if len(paths) < 2:
        raise ComparisonError("need at least two traces")
    metas = [_trace_metadata(p) for p in paths]
    prints = {m["problem_fingerprint"] for m in metas if m is not None}
    if len(prints) > 1:
        raise ComparisonError(f"traces come from different problems: {sorted(prints)}")
    records = [read_trace(p) for p in paths]
    if any(not r for r in records):
        raise ComparisonError("empty trace file")
    if names is None:
        names = [p.stem for p in paths]
        if len(set(names)) < len(names):
            names = [str(p) for p in paths]
    if fstar is None:
        known = [m["fstar"] for m in metas if m is not None]
        fstar = min(known) if known else min(min(r.objective for r in rec) for rec in records)
    budget = max(rec[-1].pass_ for rec in records)
    if checkpoints is None:
        checkpoints = sorted({p for p in CHECKPOINTS if p < budget} | {budget})
    gaps = {n: [value_at_pass(rec, p) - fstar for p in checkpoints] for n, rec in zip(names, records)}
    winners = []
    for j in range(len(checkpoints)):
        vals = [gaps[n][j] for n in names]
        best = min(vals)
        leaders = [n for n, v in zip(names, vals) if v == best]
        winners.append(leaders[0] if len(leaders) == 1 else None)
    return CompareReport(list(names), list(checkpoints), gaps, winners, fstar)
