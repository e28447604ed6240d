"""Training objectives over instance bundles.

Every loss is returned as a log-likelihood to be MAXIMIZED; the trainer
ascends. The contrastive variants are all computed from a matrix of
log-compatibilities ``f(q_i, a_j)`` via stable log-sum-exp:

* ``ce-ac`` normalizes the gold pair over the bundle's answers,
* ``ce-qc`` over the bundle's questions,
* ``ce-tw`` is a weighted sum of the two,
* ``ce-ml`` normalizes each gold pair over every question-answer combination,
* ``ce-fp`` normalizes over the gold pair plus the strictly negative
  combinations only,
* ``ce-jt`` scores the *set* of two gold pairs against all unordered pairs of
  combinations.

``mle`` is the token-level conditional likelihood of the gold answer and
``ul`` additionally pushes down the probability of the bundle's negative
answers. The interpolated objective is
``alpha1 * sum_gold mle + alpha2 * variant``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .data import EOS, InstanceBundle, QAInstance, answer_key
from .errors import UnsupportedBundleError, UnsupportedModeError
from .scorer import (
    CompatMode,
    Grads,
    Model,
    SequenceCache,
    encode,
    mode_logit_grads,
    sequence_backward,
    sequence_forward,
    zeros_like_params,
)

UL_CLAMP = 1e-12  # floor for (1 - p) before taking the log


class LossVariant(str, Enum):
    MLE = "mle"
    UL = "ul"
    CE_AC = "ce-ac"
    CE_QC = "ce-qc"
    CE_TW = "ce-tw"
    CE_ML = "ce-ml"
    CE_JT = "ce-jt"
    CE_FP = "ce-fp"


PAIRWISE_VARIANTS = (
    LossVariant.CE_AC,
    LossVariant.CE_QC,
    LossVariant.CE_TW,
    LossVariant.CE_ML,
    LossVariant.CE_FP,
)


def log_sum_exp(values: Sequence[float] | np.ndarray) -> float:
    """log(sum(exp(values))) computed with a max shift; exact for singletons."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = arr.max()
    if np.isneginf(m):
        return float("-inf")
    return float(m + np.log(np.exp(arr - m).sum()))


@dataclass(frozen=True)
class LogScoreMatrix:
    """Log-compatibilities of one bundle: rows are questions, columns answers."""

    scores: np.ndarray
    gold: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2:
            raise ValueError("scores must be a 2-D matrix")
        if not np.isfinite(s).all():
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        nq, na = s.shape
        qs = [g[0] for g in self.gold]
        ans = [g[1] for g in self.gold]
        if len(set(qs)) != len(qs) or len(set(ans)) != len(ans):
            raise ValueError("gold pairing must be injective")
        for qi, ai in self.gold:
            if not (0 <= qi < nq and 0 <= ai < na):
                raise ValueError("gold index out of range")


@dataclass
class LossSpec:
    """Objective selection: ``alpha1 * MLE + alpha2 * variant``.

    With ``variant="mle"`` the second term is dropped, so the objective is the
    plain likelihood scaled by ``alpha1``.
    """

    variant: LossVariant = LossVariant.MLE
    alpha1: float = 1.0
    alpha2: float = 1.0
    lambda1: float = 0.5
    lambda2: float = 0.5
    mode: CompatMode = CompatMode.LN
    ul_per_token: bool = True

    def __post_init__(self) -> None:
        self.variant = LossVariant(self.variant)
        self.mode = CompatMode(self.mode)
        if min(self.alpha1, self.alpha2, self.lambda1, self.lambda2) < 0:
            raise ValueError("interpolation weights must be nonnegative")
        if self.alpha1 + self.alpha2 <= 0:
            raise ValueError("alpha1 + alpha2 must be positive")
        if self.variant == LossVariant.CE_TW and self.lambda1 + self.lambda2 <= 0:
            raise ValueError("lambda1 + lambda2 must be positive for ce-tw")
        if self.variant in (LossVariant.MLE, LossVariant.UL) and self.mode != CompatMode.LN:
            raise UnsupportedModeError(f"{self.variant.value} requires the ln mode")


# ---------------------------------------------------------------------------
# Matrix-level contrastive losses. The *_grad twins additionally return the
# partial derivatives with respect to every matrix entry, which the
# interpolated objective chains through the scorer.


def _ce_pairwise(
    matrix: LogScoreMatrix,
    variant: LossVariant,
    gold_pair: tuple[int, int],
    lambda1: float,
    lambda2: float,
    with_grad: bool,
) -> tuple[float, np.ndarray | None]:
    if gold_pair not in matrix.gold:
        raise ValueError(f"{gold_pair} is not a gold pair of this matrix")
    f = matrix.scores
    gq, ga = gold_pair
    df = np.zeros_like(f) if with_grad else None

    if variant == LossVariant.CE_AC:
        row = f[gq, :]
        lse = log_sum_exp(row)
        value = float(f[gq, ga] - lse)
        if with_grad:
            df[gq, :] -= np.exp(row - lse)
            df[gq, ga] += 1.0
    elif variant == LossVariant.CE_QC:
        col = f[:, ga]
        lse = log_sum_exp(col)
        value = float(f[gq, ga] - lse)
        if with_grad:
            df[:, ga] -= np.exp(col - lse)
            df[gq, ga] += 1.0
    elif variant == LossVariant.CE_TW:
        v1, d1 = _ce_pairwise(matrix, LossVariant.CE_AC, gold_pair, 0, 0, with_grad)
        v2, d2 = _ce_pairwise(matrix, LossVariant.CE_QC, gold_pair, 0, 0, with_grad)
        value = lambda1 * v1 + lambda2 * v2
        if with_grad:
            df = lambda1 * d1 + lambda2 * d2
    elif variant == LossVariant.CE_ML:
        lse = log_sum_exp(f.ravel())
        value = float(f[gq, ga] - lse)
        if with_grad:
            df -= np.exp(f - lse)
            df[gq, ga] += 1.0
    elif variant == LossVariant.CE_FP:
        mask = np.ones_like(f, dtype=bool)
        for qi, ai in matrix.gold:
            mask[qi, ai] = False
        mask[gq, ga] = True  # gold pair itself stays in the denominator
        lse = log_sum_exp(f[mask])
        value = float(f[gq, ga] - lse)
        if with_grad:
            df[mask] -= np.exp(f[mask] - lse)
            df[gq, ga] += 1.0
    else:
        raise ValueError(f"{variant.value} is not a pairwise contrastive variant")
    return value, df


def ce_pairwise_grad(
    matrix: LogScoreMatrix,
    variant: LossVariant,
    gold_pair: tuple[int, int],
    lambda1: float = 0.5,
    lambda2: float = 0.5,
) -> tuple[float, np.ndarray]:
    return _ce_pairwise(matrix, variant, gold_pair, lambda1, lambda2, True)


def ce_pairwise(
    matrix: LogScoreMatrix,
    variant: LossVariant,
    gold_pair: tuple[int, int],
    lambda1: float = 0.5,
    lambda2: float = 0.5,
) -> float:
    """Contrastive log-likelihood of one gold pair under ``variant``."""
    return _ce_pairwise(matrix, variant, gold_pair, lambda1, lambda2, False)[0]


def _ce_bundle(
    matrix: LogScoreMatrix,
    variant: LossVariant,
    lambda1: float,
    lambda2: float,
    with_grad: bool,
) -> tuple[float, np.ndarray | None]:
    total = 0.0
    df = np.zeros_like(matrix.scores) if with_grad else None
    for pair in matrix.gold:
        v, d = _ce_pairwise(matrix, variant, pair, lambda1, lambda2, with_grad)
        total += v
        if with_grad:
            df += d
    return total, df


def ce_bundle_grad(
    matrix: LogScoreMatrix,
    variant: LossVariant,
    lambda1: float = 0.5,
    lambda2: float = 0.5,
) -> tuple[float, np.ndarray]:
    """Sum of the pairwise loss over every gold pair, with matrix partials."""
    return _ce_bundle(matrix, variant, lambda1, lambda2, True)


def ce_bundle(
    matrix: LogScoreMatrix,
    variant: LossVariant,
    lambda1: float = 0.5,
    lambda2: float = 0.5,
) -> float:
    return _ce_bundle(matrix, variant, lambda1, lambda2, False)[0]


_TRIU_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _triu_pairs(m: int) -> tuple[np.ndarray, np.ndarray]:
    if m not in _TRIU_CACHE:
        _TRIU_CACHE[m] = np.triu_indices(m, k=1)
    return _TRIU_CACHE[m]


def _ce_joint(
    matrix: LogScoreMatrix, with_grad: bool
) -> tuple[float, np.ndarray | None]:
    if len(matrix.gold) != 2:
        raise UnsupportedBundleError(
            f"joint loss needs exactly 2 gold pairs, got {len(matrix.gold)}"
        )
    f = matrix.scores
    flat = f.ravel()
    m = flat.size
    if m < 2:
        raise UnsupportedBundleError("joint loss needs at least 2 combinations")
    (g1q, g1a), (g2q, g2a) = matrix.gold
    ii, jj = _triu_pairs(m)
    pair_sums = flat[ii] + flat[jj]
    lse = log_sum_exp(pair_sums)
    value = float(f[g1q, g1a] + f[g2q, g2a] - lse)
    if not with_grad:
        return value, None

    w = np.exp(pair_sums - lse)
    dflat = np.zeros(m)
    np.add.at(dflat, ii, -w)
    np.add.at(dflat, jj, -w)
    df = dflat.reshape(f.shape)
    df[g1q, g1a] += 1.0
    df[g2q, g2a] += 1.0
    return value, df


def ce_joint_grad(matrix: LogScoreMatrix) -> tuple[float, np.ndarray]:
    """Power-set objective over all unordered pairs of combinations.

    Requires exactly two gold pairs; for a 2x2 bundle the denominator is the
    six-term sum over products of two distinct compatibilities.
    """
    return _ce_joint(matrix, True)


def ce_joint(matrix: LogScoreMatrix) -> float:
    return _ce_joint(matrix, False)[0]


# ---------------------------------------------------------------------------
# Token-level losses (scorer-backed).


def build_score_matrix(
    model: Model, bundle: InstanceBundle, mode: CompatMode = CompatMode.LN
) -> LogScoreMatrix:
    """Evaluate ``f(q_i, a_j)`` for every question-answer cell of a bundle."""
    ctx = model.vocab.encode(bundle.context)
    scores = np.empty((len(bundle.questions), len(bundle.answers)))
    for i, q in enumerate(bundle.questions):
        qi = model.vocab.encode(q)
        for j, a in enumerate(bundle.answers):
            cache = sequence_forward(model.params, ctx, qi, model.vocab.encode(a))
            scores[i, j] = _cache_value(cache, mode)
    return LogScoreMatrix(scores=scores, gold=bundle.gold)


def _cache_value(cache: SequenceCache, mode: CompatMode) -> float:
    rows = np.arange(len(cache.steps))
    if mode == CompatMode.LN:
        return float(cache.logprobs[rows, cache.steps].sum())
    if mode == CompatMode.UN:
        return float(cache.logits[rows, cache.steps].sum())
    return float(cache.logits[-1, EOS])


def mle_loss(
    model: Model, instance: QAInstance, mode: CompatMode = CompatMode.LN
) -> float:
    """Token-level conditional log-likelihood of the gold answer."""
    if CompatMode(mode) != CompatMode.LN:
        raise UnsupportedModeError("mle is only defined for locally normalized scores")
    ctx = model.vocab.encode(instance.context)
    q = model.vocab.encode(instance.question)
    a = model.vocab.encode(instance.answer)
    cache = sequence_forward(model.params, ctx, q, a)
    return _cache_value(cache, CompatMode.LN)


def mle_loss_grad(
    model: Model, instance: QAInstance, mode: CompatMode = CompatMode.LN
) -> tuple[float, Grads]:
    if CompatMode(mode) != CompatMode.LN:
        raise UnsupportedModeError("mle is only defined for locally normalized scores")
    ctx = model.vocab.encode(instance.context)
    q = model.vocab.encode(instance.question)
    a = model.vocab.encode(instance.answer)
    cache = sequence_forward(model.params, ctx, q, a)
    value = _cache_value(cache, CompatMode.LN)
    grads = zeros_like_params(model.params)
    sequence_backward(
        model.params, cache, mode_logit_grads(cache, CompatMode.LN), grads
    )
    return value, grads


def _ul_negative_terms(
    params, cache: SequenceCache, per_token: bool
) -> tuple[float, np.ndarray, int]:
    """Value, logit-gradient, and clamp count of one negative answer's
    unlikelihood term."""
    T, V = cache.logits.shape
    rows = np.arange(T)
    if per_token:
        p = cache.probs[rows, cache.steps]
        one_minus = 1.0 - p
        clamped = one_minus < UL_CLAMP
        value = float(np.log(np.maximum(one_minus, UL_CLAMP)).sum())
        # d log(1-p_t) / d logits_t = coef_t * (onehot(step_t) - softmax_t)
        coef = np.where(clamped, 0.0, -p / np.maximum(one_minus, UL_CLAMP))
        g = -coef[:, None] * cache.probs
        g[rows, cache.steps] += coef
        return value, g, int(clamped.sum())
    f = float(cache.logprobs[rows, cache.steps].sum())
    w = np.exp(f)
    one_minus = 1.0 - w
    if one_minus < UL_CLAMP:
        return float(np.log(UL_CLAMP)), np.zeros((T, V)), 1
    value = float(np.log1p(-w))
    g = (-w / one_minus) * mode_logit_grads(cache, CompatMode.LN)
    return value, g, 0


def ul_loss(
    model: Model,
    instance: QAInstance,
    bundle: InstanceBundle,
    mode: CompatMode = CompatMode.LN,
    per_token: bool = True,
) -> float:
    """Gold likelihood plus unlikelihood of the bundle's negative answers.

    With ``per_token`` the unlikelihood term sums ``log(1 - p)`` over every
    decoding step of every negative; otherwise it uses the whole-sequence
    probability. Probabilities within ``1e-12`` of 1 are clamped rather than
    raising.
    """
    return _ul_loss_impl(model, instance, bundle, mode, per_token, None)[0]


def ul_loss_grad(
    model: Model,
    instance: QAInstance,
    bundle: InstanceBundle,
    mode: CompatMode = CompatMode.LN,
    per_token: bool = True,
) -> tuple[float, Grads, int]:
    grads = zeros_like_params(model.params)
    value, clamped = _ul_loss_impl(model, instance, bundle, mode, per_token, grads)
    return value, grads, clamped


def _ul_loss_impl(
    model: Model,
    instance: QAInstance,
    bundle: InstanceBundle,
    mode: CompatMode,
    per_token: bool,
    grads: Grads | None,
) -> tuple[float, int]:
    if CompatMode(mode) != CompatMode.LN:
        raise UnsupportedModeError("ul is only defined for locally normalized scores")
    gold_key = answer_key(instance.answer)
    keys = [answer_key(a) for a in bundle.answers]
    if gold_key not in keys:
        raise ValueError("the instance's gold answer is not in the bundle")
    ctx = model.vocab.encode(instance.context)
    q = model.vocab.encode(instance.question)

    cache = sequence_forward(model.params, ctx, q, model.vocab.encode(instance.answer))
    value = _cache_value(cache, CompatMode.LN)
    if grads is not None:
        sequence_backward(
            model.params, cache, mode_logit_grads(cache, CompatMode.LN), grads
        )

    clamped = 0
    for key, answer in zip(keys, bundle.answers):
        if key == gold_key:
            continue
        neg_cache = sequence_forward(model.params, ctx, q, model.vocab.encode(answer))
        term, g, c = _ul_negative_terms(model.params, neg_cache, per_token)
        value += term
        clamped += c
        if grads is not None:
            sequence_backward(model.params, neg_cache, g, grads)
    return value, clamped


# ---------------------------------------------------------------------------
# Interpolated per-bundle objective used by the trainer.


@dataclass
class ObjectiveResult:
    value: float
    mle_value: float
    variant_value: float
    grads: Grads | None = None
    clamped: int = 0
    matrix: LogScoreMatrix | None = field(default=None, repr=False)


def bundle_objective(
    model: Model,
    bundle: InstanceBundle,
    spec: LossSpec,
    want_grads: bool = True,
) -> ObjectiveResult:
    """``alpha1 * sum_gold mle + alpha2 * variant`` with parameter gradients.

    Gradients of the contrastive variants are assembled by chaining the
    matrix-level partials through the scorer; forward activations are shared
    between the value and gradient passes and between terms touching the same
    question-answer cell.
    """
    params, vocab = model.params, model.vocab
    ctx = vocab.encode(bundle.context)
    q_idx = [vocab.encode(q) for q in bundle.questions]
    a_idx = [vocab.encode(a) for a in bundle.answers]
    encs = [encode(params, ctx, q) for q in q_idx]

    caches: dict[tuple[int, int], SequenceCache] = {}

    def cell(i: int, j: int) -> SequenceCache:
        if (i, j) not in caches:
            caches[(i, j)] = sequence_forward(
                params, ctx, q_idx[i], a_idx[j], enc=encs[i]
            )
        return caches[(i, j)]

    # Scalar coefficients on plain f-terms, keyed by (mode, cell).
    coeffs: dict[tuple[CompatMode, int, int], float] = {}

    def bump(mode: CompatMode, i: int, j: int, c: float) -> None:
        key = (mode, i, j)
        coeffs[key] = coeffs.get(key, 0.0) + c

    mle_total = 0.0
    for gq, ga in bundle.gold:
        mle_total += _cache_value(cell(gq, ga), CompatMode.LN)
        if spec.alpha1 != 0.0:
            bump(CompatMode.LN, gq, ga, spec.alpha1)

    variant_value = 0.0
    clamped = 0
    matrix: LogScoreMatrix | None = None
    custom_backwards: list[tuple[SequenceCache, np.ndarray, float]] = []

    if spec.alpha2 != 0.0 and spec.variant != LossVariant.MLE:
        if spec.variant == LossVariant.UL:
            for gq, ga in bundle.gold:
                variant_value += _cache_value(cell(gq, ga), CompatMode.LN)
                bump(CompatMode.LN, gq, ga, spec.alpha2)
                gold_key = answer_key(bundle.answers[ga])
                for j, a in enumerate(bundle.answers):
                    if answer_key(a) == gold_key:
                        continue
                    neg_cache = cell(gq, j)
                    term, g, c = _ul_negative_terms(params, neg_cache, spec.ul_per_token)
                    variant_value += term
                    clamped += c
                    custom_backwards.append((neg_cache, g, spec.alpha2))
        else:
            nq, na = len(bundle.questions), len(bundle.answers)
            scores = np.empty((nq, na))
            for i in range(nq):
                for j in range(na):
                    scores[i, j] = _cache_value(cell(i, j), spec.mode)
            matrix = LogScoreMatrix(scores=scores, gold=bundle.gold)
            if spec.variant == LossVariant.CE_JT:
                variant_value, df = _ce_joint(matrix, want_grads)
            else:
                variant_value, df = _ce_bundle(
                    matrix, spec.variant, spec.lambda1, spec.lambda2, want_grads
                )
            if want_grads:
                for i in range(nq):
                    for j in range(na):
                        if df[i, j] != 0.0:
                            bump(spec.mode, i, j, spec.alpha2 * float(df[i, j]))

    value = spec.alpha1 * mle_total + spec.alpha2 * variant_value

    grads: Grads | None = None
    if want_grads:
        grads = zeros_like_params(params)
        for (mode, i, j), c in coeffs.items():
            ch = cell(i, j)
            sequence_backward(params, ch, mode_logit_grads(ch, mode), grads, scale=c)
        for ch, g, scale in custom_backwards:
            sequence_backward(params, ch, g, grads, scale=scale)

    return ObjectiveResult(
        value=value,
        mle_value=mle_total,
        variant_value=variant_value,
        grads=grads,
        clamped=clamped,
        matrix=matrix,
    )
