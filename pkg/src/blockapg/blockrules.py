"""Block selection rules for the block coordinate solvers."""

from __future__ import annotations

import numpy as np

from .problems import ProblemInstance, grad_block, prox_grad_step
from .regularizers import UnsupportedRuleError, gs_s_score

__all__ = ["RULES", "RuleState", "gs_r_scores", "gs_s_scores"]

RULES = ("cyclic", "shuffled", "uniform", "gs-r", "gs-s")


def gs_r_scores(P: ProblemInstance, x, r, alphas) -> np.ndarray:
    """Length of the prox-gradient step each block would take from ``x``."""
    out = np.empty(P.s)
    for i, sl in enumerate(P.partition.slices()):
        d = x[sl] - prox_grad_step(P, i, x[sl], grad_block(P, r, i), alphas[i])
        out[i] = np.sqrt(d @ d)
    return out


def gs_s_scores(P: ProblemInstance, x, r) -> np.ndarray:
    return np.array([gs_s_score(P.reg, P.partition, i, grad_block(P, r, i), x[sl])
                     for i, sl in enumerate(P.partition.slices())])


class RuleState:
    """Stateful block picker.

    Parameters
    ----------
    rule : str
        One of ``cyclic``, ``shuffled``, ``uniform``, ``gs-r``, ``gs-s``.
    s : int
        Number of blocks.
    seed : int
        Seed for ``shuffled`` and ``uniform``.
    convex : bool
        Whether the regularizer is convex; ``gs-s`` refuses nonconvex ones.
    """

    def __init__(self, rule: str, s: int, seed: int = 0, convex: bool = True):
        if rule not in RULES:
            raise ValueError(f"unknown block rule {rule!r}; expected one of {RULES}")
        if rule == "gs-s" and not convex:
            raise UnsupportedRuleError("gs-s needs a convex regularizer")
        self.rule = rule
        self.s = int(s)
        self.rng = np.random.default_rng(seed)
        self.cursor = 0
        self.perm = np.arange(self.s)
        self.last_scores: np.ndarray | None = None

    def next_block(self, P: ProblemInstance | None = None, x=None, r=None, alphas=None) -> int:
        """Pick the next block. Greedy rules need ``P``, ``x``, ``r = Ax - b`` and ``alphas``."""
        if self.s == 1:
            return 0
        if self.rule == "cyclic":
            i = self.cursor
            self.cursor = (self.cursor + 1) % self.s
            return i
        if self.rule == "shuffled":
            if self.cursor == 0:
                self.perm = self.rng.permutation(self.s)
            i = int(self.perm[self.cursor])
            self.cursor = (self.cursor + 1) % self.s
            return i
        if self.rule == "uniform":
            return int(self.rng.integers(self.s))
        if self.rule == "gs-r":
            scores = gs_r_scores(P, x, r, alphas)
        else:
            scores = gs_s_scores(P, x, r)
        self.last_scores = scores
        # np.argmax returns the first maximizer: ties go to the smallest index
        return int(np.argmax(scores))
