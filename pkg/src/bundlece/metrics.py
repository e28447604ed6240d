"""Answer metrics (EM, token F1, bundle consistency) and posterior
diagnostics (top-10 entropy, top-2 ratio)."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .data import normalize_answer


def exact_match(pred: str, gold: str) -> int:
    """1 iff the normalized token lists agree."""
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    """Harmonic mean of precision/recall over normalized token multisets.

    Both sides empty scores 1; exactly one empty scores 0.
    """
    p = normalize_answer(pred)
    g = normalize_answer(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    common = Counter(p) & Counter(g)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


def consistency(bundle_results: Sequence[int]) -> int:
    """1 iff every question of the bundle was answered exactly right."""
    if len(bundle_results) == 0:
        raise ValueError("consistency of an empty bundle")
    return int(all(r == 1 for r in bundle_results))


def entropy_top10(candidate_probs: Sequence[tuple[object, float]]) -> float:
    """Shannon entropy (natural log) of the raw top-10 candidate probabilities.

    The probabilities are the locally normalized sequence probabilities of the
    ten best candidates and are deliberately *not* renormalized; ``0 log 0``
    counts as 0.
    """
    total = 0.0
    for _, p in candidate_probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
        if p > 0.0:
            total -= p * math.log(p)
    return total


def top2_ratio(p1: float, p2: float) -> float:
    """log(p1 / p2) for the two highest candidate probabilities."""
    if p2 <= 0.0:
        raise ValueError("p2 must be positive")
    if p1 < p2:
        raise ValueError("p1 must be >= p2")
    return math.log(p1 / p2)


@dataclass
class MetricsReport:
    em: float
    f1: float
    consistency: float
    n_instances: int
    n_bundles: int
    entropy10_mean: float | None = None
    top2_ratio_mean: float | None = None

    def to_dict(self) -> dict:
        return {
            "em": self.em,
            "f1": self.f1,
            "consistency": self.consistency,
            "entropy10_mean": self.entropy10_mean,
            "top2_ratio_mean": self.top2_ratio_mean,
            "n": {"instances": self.n_instances, "bundles": self.n_bundles},
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")


@dataclass
class Diagnostics:
    """Per-instance posterior spread statistics."""

    entropy10: list[float] = field(default_factory=list)
    top2: list[float] = field(default_factory=list)

    @property
    def entropy10_mean(self) -> float:
        return sum(self.entropy10) / len(self.entropy10) if self.entropy10 else 0.0

    @property
    def top2_mean(self) -> float:
        return sum(self.top2) / len(self.top2) if self.top2 else 0.0
