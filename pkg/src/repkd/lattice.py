"""Log-space dynamic programming over the transducer alignment grid.

The grid has one cell per (frame t, emitted-token-count u) with t in 1..T
and u in 0..N.  Each cell carries a normalized log-distribution over the
vocabulary plus blank.  Emitting a label consumes no frame (moves right,
staying at t); a blank consumes the current frame (moves down to t+1).
A complete alignment starts at (1, 0), ends with a blank at (T, N), and
therefore contains exactly T blanks and N labels:

        u=0    u=1    u=2      (N = 2)
  t=1    @--y1-->.--y2-->.
         |       |       |
       blank   blank   blank
         |       |       |
  t=2    .--y1-->.--y2-->.
         .       .       |
         .       .     blank (exit)
                         $

All recursions run in float64 regardless of the model dtype; unreachable
cells hold -inf and never propagate NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import ContractViolation, DegenerateModel, InvalidInput

# Sentinel for the blank symbol in enumerated alignment paths.
BLANK = -1

# Largest T+N the exhaustive path enumerator will accept.
MAX_ENUM_STEPS = 14


@dataclass
class JointLogProbGrid:
    """Per-cell log-distributions over vocabulary plus blank.

    values has shape (T, N+1, V+1); values[t-1, u, v] is the log-probability
    of symbol v at frame t with u tokens already emitted.
    """

    values: np.ndarray
    blank_index: int

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.values.shape[1] - 1

    def validate(self, tol: float = 1e-6) -> None:
        """Check that every cell is a normalized log-distribution."""
        m = self.values.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(self.values - m).sum(axis=-1)) + m[..., 0]
        if not np.all(np.abs(lse) <= tol):
            raise ContractViolation(
                f"grid cells are not normalized (max |logsumexp| = {np.abs(lse).max():.3e})"
            )
        if not np.all(self.values <= tol):
            raise ContractViolation("grid contains log-probabilities > 0")


@dataclass
class AlphaBetaGrids:
    """Forward/backward log-probability grids, each of shape (T, N+1)."""

    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class AlignmentPosterior:
    """Row-stochastic (N, T) matrix: row i gives P(token i consumed frame t)."""

    q: np.ndarray
    frozen: bool = False


@dataclass
class AlignmentPath:
    """One monotone lattice path: T blanks and N labels, ending in a blank."""

    steps: tuple[int, ...] = field(default_factory=tuple)

    def labels(self) -> tuple[int, ...]:
        return tuple(s for s in self.steps if s != BLANK)


def _check_grid(grid: JointLogProbGrid, labels: Sequence[int]) -> None:
    if grid.values.ndim != 3:
        raise ContractViolation(f"grid must be rank 3, got rank {grid.values.ndim}")
    if grid.num_frames == 0:
        raise InvalidInput("grid has zero frames")
    if len(labels) != grid.num_tokens:
        raise ContractViolation(
            f"label count {len(labels)} does not match grid token axis {grid.num_tokens}"
        )
    vocab = grid.values.shape[2]
    for tok in labels:
        if not (0 <= tok < vocab) or tok == grid.blank_index:
            raise InvalidInput(f"label id {tok} invalid for vocab size {vocab}")


def forward_alphas(grid: JointLogProbGrid, labels: Sequence[int]) -> np.ndarray:
    """alpha[t, u] = log P(consume frames 1..t-ish and emit labels[:u]).

    alpha[0, 0] = 0; a label moves right within the same frame, a blank
    moves down one frame.
    """
    _check_grid(grid, labels)
    v = grid.values.astype(np.float64, copy=False)
    T, n1 = v.shape[0], v.shape[1]
    blank = grid.blank_index
    alpha = np.full((T, n1), -np.inf)
    alpha[0, 0] = 0.0
    with np.errstate(invalid="ignore"):
        for u in range(1, n1):
            alpha[0, u] = alpha[0, u - 1] + v[0, u - 1, labels[u - 1]]
        for t in range(1, T):
            alpha[t, 0] = alpha[t - 1, 0] + v[t - 1, 0, blank]
            for u in range(1, n1):
                alpha[t, u] = np.logaddexp(
                    alpha[t - 1, u] + v[t - 1, u, blank],
                    alpha[t, u - 1] + v[t, u - 1, labels[u - 1]],
                )
    return alpha


def backward_betas(grid: JointLogProbGrid, labels: Sequence[int]) -> np.ndarray:
    """beta[t, u] = log P(complete the alignment starting from cell (t, u))."""
    _check_grid(grid, labels)
    v = grid.values.astype(np.float64, copy=False)
    T, n1 = v.shape[0], v.shape[1]
    N = n1 - 1
    blank = grid.blank_index
    beta = np.full((T, n1), -np.inf)
    beta[T - 1, N] = v[T - 1, N, blank]
    with np.errstate(invalid="ignore"):
        for u in range(N - 1, -1, -1):
            beta[T - 1, u] = v[T - 1, u, labels[u]] + beta[T - 1, u + 1]
        for t in range(T - 2, -1, -1):
            beta[t, N] = v[t, N, blank] + beta[t + 1, N]
            for u in range(N - 1, -1, -1):
                beta[t, u] = np.logaddexp(
                    v[t, u, blank] + beta[t + 1, u],
                    v[t, u, labels[u]] + beta[t, u + 1],
                )
    return beta


def alpha_beta(grid: JointLogProbGrid, labels: Sequence[int]) -> AlphaBetaGrids:
    return AlphaBetaGrids(
        alpha=forward_alphas(grid, labels), beta=backward_betas(grid, labels)
    )


def total_log_prob(grid: JointLogProbGrid, alpha: np.ndarray) -> float:
    T, N = grid.num_frames, grid.num_tokens
    return float(alpha[T - 1, N] + grid.values[T - 1, N, grid.blank_index])


def transducer_nll(grid: JointLogProbGrid, labels: Sequence[int]) -> float:
    """Negative log-likelihood of `labels` under the grid."""
    alpha = forward_alphas(grid, labels)
    total = total_log_prob(grid, alpha)
    if math.isinf(total):
        raise DegenerateModel("every complete alignment has zero probability")
    return -total


def alignment_posterior(
    alpha: np.ndarray,
    beta: np.ndarray,
    grid: JointLogProbGrid,
    labels: Sequence[int],
) -> AlignmentPosterior:
    """Posterior over which frame each token consumed.

    q[i, t] = exp(alpha[t, i] + logp(labels[i] | t, i) + beta[t, i+1] - total),
    with rows renormalized to kill float drift.
    """
    _check_grid(grid, labels)
    if alpha.shape != beta.shape or alpha.shape != (grid.num_frames, grid.num_tokens + 1):
        raise ContractViolation("alpha/beta shapes do not match the grid")
    v = grid.values.astype(np.float64, copy=False)
    T, N = grid.num_frames, grid.num_tokens
    total = total_log_prob(grid, alpha)
    if math.isinf(total):
        raise DegenerateModel("every complete alignment has zero probability")
    q = np.zeros((N, T))
    for i in range(N):
        with np.errstate(invalid="ignore"):
            logq = alpha[:, i] + v[:, i, labels[i]] + beta[:, i + 1] - total
        q[i] = np.exp(np.where(np.isnan(logq), -np.inf, logq))
        s = q[i].sum()
        if s <= 0.0:
            raise DegenerateModel(f"token {i} is unreachable on every alignment")
        q[i] /= s
    return AlignmentPosterior(q=q, frozen=False)


def transducer_grad(grid: JointLogProbGrid, labels: Sequence[int]) -> np.ndarray:
    """d NLL / d log-prob for every grid entry.

    Entries the loss does not touch (non-emitted labels, unreachable
    cells) get exactly 0.  This is the gradient with respect to the raw
    log-probability values, before any softmax backprop.
    """
    alpha = forward_alphas(grid, labels)
    beta = backward_betas(grid, labels)
    v = grid.values.astype(np.float64, copy=False)
    T, n1 = v.shape[0], v.shape[1]
    N = n1 - 1
    blank = grid.blank_index
    total = total_log_prob(grid, alpha)
    if math.isinf(total):
        raise DegenerateModel("every complete alignment has zero probability")

    grad = np.zeros_like(v)

    def occ(logp: float) -> float:
        # Path-occupancy of one transition; exp(-inf) cleanly gives 0.
        return math.exp(logp - total) if logp > -np.inf else 0.0

    for t in range(T):
        for u in range(n1):
            a = alpha[t, u]
            if a == -np.inf:
                continue
            if t + 1 < T:
                grad[t, u, blank] = -occ(a + v[t, u, blank] + beta[t + 1, u])
            elif u == N:
                grad[t, u, blank] = -occ(a + v[t, u, blank])
            if u < N:
                grad[t, u, labels[u]] = -occ(a + v[t, u, labels[u]] + beta[t, u + 1])
    return grad


def enumerate_paths(T: int, N: int, labels: Sequence[int]) -> list[AlignmentPath]:
    """Exhaustively enumerate every monotone alignment path (test oracle).

    A path is T blanks and N labels in emission order, and the final step
    is always the exit blank, so the free choice is which of the first
    T+N-1 slots hold the labels.
    """
    if len(labels) != N:
        raise ContractViolation(f"expected {N} labels, got {len(labels)}")
    if T < 1:
        raise InvalidInput("need at least one frame")
    if T + N > MAX_ENUM_STEPS:
        raise InvalidInput(
            f"refusing to enumerate T+N = {T + N} > {MAX_ENUM_STEPS} steps"
        )
    paths = []
    for label_slots in combinations(range(T + N - 1), N):
        steps = [BLANK] * (T + N)
        for i, slot in enumerate(label_slots):
            steps[slot] = labels[i]
        paths.append(AlignmentPath(steps=tuple(steps)))
    return paths
