"""Penalties R(x) for sparse least squares and their proximity operators.

Four penalties are supported: the l1 norm, the group l2 norm over a
contiguous group partition, capped-l1 ``lam * min(|x|, theta)`` and SCAD.
The two nonconvex proximity maps are set-valued; the functions here return
one deterministic selection (see :func:`prox_capped_l1` and
:func:`prox_scad`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import BlockPartition, make_partition

__all__ = [
    "KINDS",
    "ConfigurationError",
    "RegularizerSpec",
    "UnsupportedRuleError",
    "block_value",
    "gs_s_score",
    "prox_block",
    "prox_capped_l1",
    "prox_group_l2",
    "prox_l1",
    "prox_scad",
    "reg_value",
    "scad_value",
]

KINDS = ("l1", "group-l2", "capped-l1", "scad")


class ConfigurationError(ValueError):
    pass


class UnsupportedRuleError(ValueError):
    pass


@dataclass(frozen=True)
class RegularizerSpec:
    """Tagged penalty description.

    ``groups`` is only used by ``group-l2``; ``theta`` only by ``capped-l1``
    and ``gamma`` only by ``scad``.
    """

    kind: str
    lam: float
    theta: float | None = None
    gamma: float | None = None
    groups: BlockPartition | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown regularizer {self.kind!r}; expected one of {KINDS}")
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if self.kind == "capped-l1" and not (self.theta is not None and self.theta > 0):
            raise ConfigurationError(f"capped-l1 needs theta > 0, got {self.theta}")
        if self.kind == "scad" and not (self.gamma is not None and self.gamma > 2):
            raise ConfigurationError(f"scad needs gamma > 2, got {self.gamma}")
        if self.kind == "group-l2" and self.groups is None:
            raise ConfigurationError("group-l2 needs a group partition")

    @classmethod
    def l1(cls, lam):
        return cls("l1", float(lam))

    @classmethod
    def group_l2(cls, lam, groups):
        return cls("group-l2", float(lam), groups=groups)

    @classmethod
    def capped_l1(cls, lam, theta):
        return cls("capped-l1", float(lam), theta=float(theta))

    @classmethod
    def scad(cls, lam, gamma):
        return cls("scad", float(lam), gamma=float(gamma))

    @property
    def convex(self) -> bool:
        return self.kind in ("l1", "group-l2")

    def check_dimension(self, n: int) -> None:
        if self.groups is not None and self.groups.n != n:
            raise ConfigurationError(
                f"group partition covers {self.groups.n} coordinates, vector has {n}")

    def check_blocks(self, P: BlockPartition) -> None:
        """Every group must sit inside a single block of ``P``."""
        self.check_dimension(P.n)
        if self.groups is None:
            return
        edges = set(self.groups.boundaries)
        missing = [c for c in P.boundaries if c not in edges]
        if missing:
            raise ConfigurationError(
                f"block boundaries {missing} cut through a group of the group-l2 penalty")

    def to_dict(self) -> dict:
        d = {"type": self.kind, "lambda": self.lam}
        if self.theta is not None:
            d["theta"] = self.theta
        if self.gamma is not None:
            d["gamma"] = self.gamma
        if self.groups is not None:
            d["groups"] = list(self.groups.boundaries)
        return d

    @classmethod
    def from_dict(cls, d: dict, n: int | None = None) -> "RegularizerSpec":
        """Inverse of :meth:`to_dict`.

        For ``group-l2``, ``groups`` may be a boundary list or an integer
        group count (equal contiguous groups, needs ``n``). Parameters that do
        not apply to the chosen kind are ignored.
        """
        kind = d.get("type")
        groups = d.get("groups")
        theta = d.get("theta") if kind == "capped-l1" else None
        gamma = d.get("gamma") if kind == "scad" else None
        if kind != "group-l2":
            groups = None
        else:
            if groups is None or isinstance(groups, int):
                if n is None:
                    raise ConfigurationError("group count given without a dimension")
                groups = make_partition(n, groups or 1)
            else:
                groups = BlockPartition(int(groups[-1]), tuple(groups))
        try:
            return cls(kind, float(d["lambda"]),
                       theta=None if theta is None else float(theta),
                       gamma=None if gamma is None else float(gamma),
                       groups=groups)
        except KeyError as exc:
            raise ConfigurationError(f"regularizer missing field {exc}") from None


def scad_value(u, lam, gamma):
    """Elementwise SCAD penalty ``r_{lam,gamma}(u)``."""
    a = np.abs(np.asarray(u, dtype=float))
    mid = (2 * gamma * lam * a - (a * a + lam * lam)) / (2 * (gamma - 1))
    top = lam * lam * (gamma + 1) / 2
    return np.where(a <= lam, lam * a, np.where(a <= gamma * lam, mid, top))


def _group_norms(x, groups: BlockPartition):
    sq = np.add.reduceat(x * x, np.asarray(groups.boundaries[:-1]))
    return np.sqrt(sq)


def block_value(spec: RegularizerSpec, x, groups: BlockPartition | None = None) -> float:
    """Penalty of a sub-vector. ``groups`` are relative to ``x`` for group-l2."""
    x = np.asarray(x, dtype=float)
    if spec.kind == "l1":
        return spec.lam * float(np.sum(np.abs(x)))
    if spec.kind == "group-l2":
        g = spec.groups if groups is None else groups
        return spec.lam * float(np.sum(_group_norms(x, g)))
    if spec.kind == "capped-l1":
        return spec.lam * float(np.sum(np.minimum(np.abs(x), spec.theta)))
    return float(np.sum(scad_value(x, spec.lam, spec.gamma)))


def reg_value(spec: RegularizerSpec, x) -> float:
    x = np.asarray(x, dtype=float)
    spec.check_dimension(x.size)
    return block_value(spec, x)


def prox_l1(u, tau):
    """Soft-thresholding ``sign(u) * max(|u| - tau, 0)``."""
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)


def prox_group_l2(u, tau):
    """Shrink a single group: ``max(1 - tau / ||u||, 0) * u`` (zero at ``u = 0``)."""
    u = np.asarray(u, dtype=float)
    nrm = np.linalg.norm(u)
    if nrm <= tau:
        return np.zeros_like(u)
    return (1.0 - tau / nrm) * u


def _prox_groups(u, tau, groups: BlockPartition):
    out = np.zeros_like(u)
    for sl in groups.slices():
        out[sl] = prox_group_l2(u[sl], tau)
    return out


def prox_capped_l1(v, lam, theta):
    """Prox of ``lam * min(|x|, theta)`` at unit step, elementwise.

    The minimizer is one of ``sign(v) * max(theta, |v|)`` and
    ``sign(v) * min(theta, (|v| - lam)_+)``; the first is kept on ties.
    """
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    sgn = np.sign(v)
    v1 = sgn * np.maximum(theta, a)
    v2 = sgn * np.minimum(theta, np.maximum(a - lam, 0.0))

    def h(x):
        return 0.5 * (x - v) ** 2 + lam * np.minimum(np.abs(x), theta)

    out = np.where(h(v1) <= h(v2), v1, v2)
    return out if out.ndim else float(out)


def prox_scad(u, lam, gamma, step=1.0):
    """Prox of ``step * r_{lam,gamma}``, elementwise.

    Candidates are the minimizers of ``0.5 (x - u)^2 + step * r(x)`` on each of
    the three pieces of SCAD; the one with the lowest objective wins, earlier
    pieces first on ties. At ``step = 1`` the middle candidate reduces to
    ``(|u|(gamma - 1) - gamma lam) / (gamma - 2)`` clipped to ``[lam, gamma lam]``.
    """
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    sgn = np.sign(u)
    c1 = np.minimum(lam, np.maximum(a - step * lam, 0.0))
    curv = gamma - 1.0 - step
    if curv > 0:
        mid = (a * (gamma - 1.0) - step * gamma * lam) / curv
        c2 = np.minimum(gamma * lam, np.maximum(lam, mid))
    else:
        # middle piece is concave in x: its minimum sits on an endpoint
        lo, hi = lam, gamma * lam
        c2 = np.where(_h_scad(lo, a, lam, gamma, step) <= _h_scad(hi, a, lam, gamma, step), lo, hi)
        c2 = np.broadcast_to(c2, a.shape)
    c3 = np.maximum(gamma * lam, a)
    cands = np.stack([c1, c2, c3])
    vals = _h_scad(cands, a, lam, gamma, step)
    pick = np.argmin(vals, axis=0)
    out = sgn * np.take_along_axis(cands, pick[None, ...], axis=0)[0]
    return out if out.ndim else float(out)


def _h_scad(x, a, lam, gamma, step):
    return 0.5 * (x - a) ** 2 + step * scad_value(x, lam, gamma)


def prox_block(spec: RegularizerSpec, P: BlockPartition, i: int, u, alpha: float):
    """``argmin_y 0.5 ||y - u||^2 + alpha * R_i(y)`` for block ``i`` of ``P``."""
    if not alpha > 0:
        raise ValueError(f"step must be positive, got {alpha}")
    u = np.asarray(u, dtype=float)
    if spec.kind == "l1":
        return prox_l1(u, alpha * spec.lam)
    if spec.kind == "group-l2":
        return _prox_groups(u, alpha * spec.lam, _local_groups(spec, P, i))
    if spec.kind == "capped-l1":
        return np.asarray(prox_capped_l1(u, alpha * spec.lam, spec.theta), dtype=float)
    return np.asarray(prox_scad(u, spec.lam, spec.gamma, step=alpha), dtype=float)


def prox_full(spec: RegularizerSpec, u, alpha: float):
    """Prox over the whole vector (single-block view)."""
    u = np.asarray(u, dtype=float)
    return prox_block(spec, make_partition(u.size, 1), 0, u, alpha)


def _local_groups(spec: RegularizerSpec, P: BlockPartition, i: int) -> BlockPartition:
    sl = P.slice(i)
    b = [c - sl.start for c in spec.groups.boundaries if sl.start <= c <= sl.stop]
    if b[0] != 0 or b[-1] != sl.stop - sl.start:
        raise ConfigurationError(f"block {i} cuts through a group of the group-l2 penalty")
    return BlockPartition(sl.stop - sl.start, tuple(b))


def local_groups(spec: RegularizerSpec, P: BlockPartition, i: int) -> BlockPartition | None:
    return _local_groups(spec, P, i) if spec.kind == "group-l2" else None


def gs_s_score(spec: RegularizerSpec, P: BlockPartition, i: int, grad_i, x_i) -> float:
    """Distance from ``-grad_i`` to the subdifferential of the block penalty.

    Only defined for the convex penalties.
    """
    if not spec.convex:
        raise UnsupportedRuleError(f"gs-s needs a convex regularizer, got {spec.kind}")
    g = np.asarray(grad_i, dtype=float)
    x = np.asarray(x_i, dtype=float)
    lam = spec.lam
    if spec.kind == "l1":
        d = np.where(x != 0, np.abs(g + lam * np.sign(x)), np.maximum(np.abs(g) - lam, 0.0))
        return float(np.linalg.norm(d))
    total = 0.0
    for sl in _local_groups(spec, P, i).slices():
        xg, gg = x[sl], g[sl]
        nx = np.linalg.norm(xg)
        if nx > 0:
            total += float(np.sum((gg + lam * xg / nx) ** 2))
        else:
            total += max(np.linalg.norm(gg) - lam, 0.0) ** 2
    return float(np.sqrt(total))
