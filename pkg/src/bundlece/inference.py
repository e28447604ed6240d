"""Test-time answering: greedy decoding, candidate ranking, joint assignment.

Joint inference treats a bundle as a maximum-weight one-to-one assignment of
questions to answers over the log-score matrix. Bundles are tiny, so the
solver is an exact subset-sum dynamic program with a deterministic
lexicographic tie-break; an exhaustive enumerator serves as its oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .data import EOS
from .errors import SizeLimitError
from .scorer import CompatMode, ScorerParams, compat, decoder_logits, encode

PAD_SENTINEL = -1e9
_DP_LIMIT = 16  # beyond this, fall back to scipy's solver
_BRUTE_LIMIT = 6


def greedy_decode(
    params: ScorerParams, context: Sequence[int], question: Sequence[int]
) -> list[int]:
    """Per-step argmax decoding from BOS; EOS is stripped from the output.

    Ties break to the lowest token index. Decoding stops at EOS or after
    ``l_max`` steps.
    """
    enc = encode(params, context, question)
    out: list[int] = []
    prev = 0  # BOS
    for t in range(params.l_max):
        logits = decoder_logits(params, enc, prev, t)
        tok = int(np.argmax(logits))
        if tok == EOS:
            break
        out.append(tok)
        prev = tok
    return out


def rank_candidates(
    params: ScorerParams,
    mode: CompatMode,
    context: Sequence[int],
    question: Sequence[int],
    candidates: Sequence[Sequence[int]],
) -> tuple[int, list[float]]:
    """Best candidate index by log-score, ties to the lowest index."""
    if not candidates:
        raise ValueError("candidates must be nonempty")
    scores = [compat(params, mode, context, question, c) for c in candidates]
    return int(np.argmax(scores)), scores


@dataclass(frozen=True)
class Assignment:
    """An injective question-to-answer pairing and its total log-score."""

    pairs: tuple[tuple[int, int], ...]
    total_score: float


def _as_matrix(matrix) -> np.ndarray:
    scores = getattr(matrix, "scores", matrix)
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
        raise ValueError("assignment needs a 2-D matrix with both dims >= 1")
    return s


def _finish(scores: np.ndarray, pairs: list[tuple[int, int]]) -> Assignment:
    pairs = sorted(pairs)
    total = float(sum(scores[i, j] for i, j in pairs))
    return Assignment(pairs=tuple(pairs), total_score=total)


def joint_assign(matrix) -> Assignment:
    """Maximum-total-score one-to-one assignment of questions to answers.

    Accepts a ``LogScoreMatrix`` or a plain 2-D array. Rectangular inputs are
    padded to square with a large negative sentinel and the padded pairs are
    dropped from the result. Ties resolve to the lexicographically smallest
    pair list.
    """
    scores = _as_matrix(matrix)
    nq, na = scores.shape

    if nq == 1:
        j = int(np.argmax(scores[0]))
        return _finish(scores, [(0, j)])

    n = max(nq, na)
    if n > _DP_LIMIT:
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(scores, maximize=True)
        return _finish(scores, list(zip(rows.tolist(), cols.tolist())))

    padded = np.full((n, n), PAD_SENTINEL)
    padded[:nq, :na] = scores

    # best[mask] at stage i: best achievable total for questions i..n-1 given
    # the set of already-used answers.
    full = 1 << n
    masks = np.arange(full)
    free = ~masks[:, None] & (1 << np.arange(n))[None, :] != 0  # (2^n, n)
    succ = masks[:, None] | (1 << np.arange(n))[None, :]  # mask after picking j

    best = [None] * (n + 1)
    best[n] = np.zeros(full)
    for i in range(n - 1, -1, -1):
        cand = np.where(free, padded[i][None, :] + best[i + 1][succ], -np.inf)
        best[i] = cand.max(axis=1)

    pairs: list[tuple[int, int]] = []
    mask = 0
    for i in range(n):
        target = best[i][mask]
        row = padded[i]
        chosen = -1
        for j in range(n):
            if mask & (1 << j):
                continue
            if row[j] + best[i + 1][mask | (1 << j)] == target:
                chosen = j
                break
        mask |= 1 << chosen
        if i < nq and chosen < na:
            pairs.append((i, chosen))
    return _finish(scores, pairs)


def assign_bruteforce(matrix) -> Assignment:
    """Exhaustive assignment oracle; same tie-break rule as ``joint_assign``."""
    scores = _as_matrix(matrix)
    nq, na = scores.shape
    if min(nq, na) > _BRUTE_LIMIT:
        raise SizeLimitError(
            f"brute force limited to min dimension {_BRUTE_LIMIT}, got {min(nq, na)}"
        )
    best_pairs: list[tuple[int, int]] | None = None
    best_total = -np.inf
    if nq <= na:
        for perm in permutations(range(na), nq):
            pairs = sorted(zip(range(nq), perm))
            total = sum(scores[i, j] for i, j in pairs)
            if total > best_total or (total == best_total and pairs < best_pairs):
                best_total, best_pairs = total, pairs
    else:
        for perm in permutations(range(nq), na):
            pairs = sorted(zip(perm, range(na)))
            total = sum(scores[i, j] for i, j in pairs)
            if total > best_total or (total == best_total and pairs < best_pairs):
                best_total, best_pairs = total, pairs
    return _finish(scores, best_pairs)
