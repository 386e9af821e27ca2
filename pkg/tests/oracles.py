"""Independent brute-force reference implementations used only by tests.

Nothing here shares code with the production recursions: path scoring is a
straight simulation of the lattice walk, the posterior is accumulated
path-by-path, and gradients come from central finite differences.
"""

from __future__ import annotations

import math

import numpy as np

from repkd.lattice import BLANK, AlignmentPath, JointLogProbGrid, enumerate_paths


def path_log_prob(grid: JointLogProbGrid, path: AlignmentPath) -> float:
    """Walk the path through the grid, multiplying step probabilities."""
    t, u = 0, 0
    logp = 0.0
    for step in path.steps:
        if step == BLANK:
            logp += float(grid.values[t, u, grid.blank_index])
            t += 1
        else:
            logp += float(grid.values[t, u, step])
            u += 1
    assert t == grid.num_frames and u == grid.num_tokens
    return logp


def brute_force_nll(grid: JointLogProbGrid, labels) -> float:
    paths = enumerate_paths(grid.num_frames, grid.num_tokens, labels)
    logps = [path_log_prob(grid, p) for p in paths]
    m = max(logps)
    if math.isinf(m):
        return math.inf
    return -(m + math.log(sum(math.exp(lp - m) for lp in logps)))


def brute_force_posterior(grid: JointLogProbGrid, labels) -> np.ndarray:
    """q[i, t] = P(label i emitted while at frame t), summed over paths."""
    T, N = grid.num_frames, grid.num_tokens
    q = np.zeros((N, T))
    for path in enumerate_paths(T, N, labels):
        p = math.exp(path_log_prob(grid, path))
        t, u = 0, 0
        for step in path.steps:
            if step == BLANK:
                t += 1
            else:
                q[u, t] += p
                u += 1
    return q / q.sum(axis=1, keepdims=True)


def finite_diff_grid_grad(fn, values: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar fn over every array entry."""
    grad = np.zeros_like(values, dtype=np.float64)
    flat = values.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(values)
        flat[i] = orig - h
        fm = fn(values)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def random_grid(rng: np.random.Generator, T: int, N: int, vocab: int) -> JointLogProbGrid:
    """A seeded grid of normalized log-distributions; blank is the last id."""
    logits = rng.normal(size=(T, N + 1, vocab + 1))
    m = logits.max(axis=-1, keepdims=True)
    logp = logits - (np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)) + m)
    return JointLogProbGrid(values=logp, blank_index=vocab)


def max_rel_err(got: np.ndarray, want: np.ndarray) -> float:
    """max |got-want| scaled by the largest reference magnitude."""
    scale = max(float(np.abs(want).max()), 1e-12)
    return float(np.abs(got - want).max()) / scale
