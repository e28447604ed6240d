"""Property suites: exact numerical checks runnable from the CLI and tests.

Each suite returns ``(ok, detail)``. The suites pin the package's core
numerical claims: analytic gradients match finite differences, the multi-label
objective strictly lower-bounds the joint objective, the answer-conditional
loss decomposes into likelihood plus a regularizer, contrastive values are
shift invariant, and the assignment solver matches exhaustive enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import InstanceBundle, Vocab
from .inference import assign_bruteforce, joint_assign
from .losses import (
    CompatMode,
    LogScoreMatrix,
    LossSpec,
    LossVariant,
    build_score_matrix,
    bundle_objective,
    ce_bundle,
    ce_joint,
    ce_pairwise,
    log_sum_exp,
)
from .scorer import (
    Model,
    ScorerParams,
    flatten_arrays,
    sequence_forward,
    unflatten_params,
)

FD_STEP = 1e-4
FD_REL_TOL = 1e-4
FD_ABS_FLOOR = 1e-7

GRADIENT_GRID: tuple[tuple[str, LossSpec], ...] = tuple(
    [
        ("mle/ln", LossSpec(variant=LossVariant.MLE, mode=CompatMode.LN)),
        (
            "ul-per-token/ln",
            LossSpec(variant=LossVariant.UL, mode=CompatMode.LN, ul_per_token=True),
        ),
        (
            "ul-sequence/ln",
            LossSpec(variant=LossVariant.UL, mode=CompatMode.LN, ul_per_token=False),
        ),
    ]
    + [
        (f"{variant.value}/{mode.value}", LossSpec(variant=variant, mode=mode))
        for variant in (
            LossVariant.CE_AC,
            LossVariant.CE_QC,
            LossVariant.CE_TW,
            LossVariant.CE_ML,
            LossVariant.CE_JT,
            LossVariant.CE_FP,
        )
        for mode in (CompatMode.LN, CompatMode.UN, CompatMode.GS)
    ]
)


def _tiny_setup(rng: np.random.Generator) -> tuple[Model, InstanceBundle]:
    """Small random model and a 2x2 bundle for gradient checking."""
    words = ["red", "blue", "cat", "dog", "sun", "green"]
    vocab = Vocab.from_tokens(words)
    dims = (2, 2, 3, 3)
    d, d_p, h, l_max = dims
    V = len(vocab)

    def u(*shape):
        return rng.uniform(-0.5, 0.5, size=shape)

    params = ScorerParams(
        emb=u(V, d),
        pos=u(l_max, d_p),
        w1=u(h, 2 * d + d_p),
        b1=u(h),
        w2=u(V, h),
        b2=u(V),
    )
    context = tuple(rng.choice(words, size=2).tolist())
    questions = (("red", "cat"), ("blue", "cat"))
    ans_len = int(rng.integers(1, 3))
    a1 = tuple(rng.choice(["sun", "dog"], size=ans_len, replace=False).tolist())
    a2 = ("green",)
    bundle = InstanceBundle(
        bundle_id="fd",
        context=context,
        questions=questions,
        answers=(a1, a2),
        gold=((0, 0), (1, 1)),
        source="synthetic",
    )
    return Model(params=params, vocab=vocab), bundle


def check_gradient(
    model: Model, bundle: InstanceBundle, spec: LossSpec
) -> tuple[bool, float]:
    """Compare the analytic gradient with central finite differences.

    Returns the pass flag and the worst error ratio over coordinates.
    """
    result = bundle_objective(model, bundle, spec)
    analytic = flatten_arrays(result.grads)
    theta = flatten_arrays(model.params.arrays())
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        plus = theta.copy()
        plus[i] += FD_STEP
        minus = theta.copy()
        minus[i] -= FD_STEP
        vp = bundle_objective(
            Model(unflatten_params(model.params, plus), model.vocab),
            bundle,
            spec,
            want_grads=False,
        ).value
        vm = bundle_objective(
            Model(unflatten_params(model.params, minus), model.vocab),
            bundle,
            spec,
            want_grads=False,
        ).value
        numeric[i] = (vp - vm) / (2 * FD_STEP)
    err = np.abs(analytic - numeric)
    tol = np.maximum(FD_REL_TOL * np.abs(numeric), FD_ABS_FLOOR)
    worst = float((err / tol).max())
    return bool((err <= tol).all()), worst


def suite_gradients(trials: int = 50, seed: int = 20240501) -> tuple[bool, str]:
    """Every loss variant x compat mode agrees with finite differences."""
    rng = np.random.default_rng(seed)
    worst_name, worst = "", 0.0
    for name, spec in GRADIENT_GRID:
        for _ in range(trials):
            model, bundle = _tiny_setup(rng)
            ok, ratio = check_gradient(model, bundle, spec)
            if ratio > worst:
                worst_name, worst = name, ratio
            if not ok:
                return False, f"{name}: error {ratio:.3g}x tolerance"
    return True, f"worst {worst_name}: {worst:.3g}x tolerance over {trials} trials/combo"


def suite_lemma(trials: int = 1000, seed: int = 7) -> tuple[bool, str]:
    """Multi-label total is strictly below the joint value on 2x2 bundles."""
    rng = np.random.default_rng(seed)
    min_gap = np.inf
    for _ in range(trials):
        scores = rng.normal(size=(2, 2))
        matrix = LogScoreMatrix(scores=scores, gold=((0, 0), (1, 1)))
        ml = ce_bundle(matrix, LossVariant.CE_ML)
        jt = ce_joint(matrix)
        gap = jt - ml
        min_gap = min(min_gap, gap)
        if not ml < jt:
            return False, f"violated: ml={ml} jt={jt}"
    return True, f"strict over {trials} trials, min gap {min_gap:.3g}"


def suite_decomposition(trials: int = 100, seed: int = 11) -> tuple[bool, str]:
    """CE-AC equals MLE plus the answer-sum regularizer under LN scores."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        model, bundle = _tiny_setup(rng)
        matrix = build_score_matrix(model, bundle, CompatMode.LN)
        for gq, ga in bundle.gold:
            ce_ac = ce_pairwise(matrix, LossVariant.CE_AC, (gq, ga))
            ctx = model.vocab.encode(bundle.context)
            q = model.vocab.encode(bundle.questions[gq])
            f_answers = [
                _ln_value(model, ctx, q, model.vocab.encode(a)) for a in bundle.answers
            ]
            mle = _ln_value(model, ctx, q, model.vocab.encode(bundle.answers[ga]))
            regularizer = -log_sum_exp(f_answers)
            diff = abs(ce_ac - (mle + regularizer))
            worst = max(worst, diff)
            if diff >= 1e-9:
                return False, f"identity off by {diff:.3g}"
    return True, f"max deviation {worst:.3g} over {trials} bundles"


def _ln_value(model: Model, ctx, q, a) -> float:
    cache = sequence_forward(model.params, ctx, q, a)
    rows = np.arange(len(cache.steps))
    return float(cache.logprobs[rows, cache.steps].sum())


SHIFT_CONSTANTS = (-50.0, 3.7, 1000.0)


def suite_shift(trials: int = 100, seed: int = 13) -> tuple[bool, str]:
    """Adding a constant to every log-score leaves contrastive values and the
    assignment pair set unchanged."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        nq = int(rng.integers(2, 4))
        na = int(rng.integers(2, 4))
        scores = rng.normal(size=(nq, na)) * 3
        gold = ((0, 0), (1, 1))
        matrix = LogScoreMatrix(scores=scores, gold=gold)
        base = _all_ce_values(matrix)
        base_pairs = joint_assign(matrix).pairs
        for c in SHIFT_CONSTANTS:
            shifted = LogScoreMatrix(scores=scores + c, gold=gold)
            for name, v in _all_ce_values(shifted).items():
                diff = abs(v - base[name])
                worst = max(worst, diff)
                if diff >= 1e-9:
                    return False, f"{name} moved by {diff:.3g} under shift {c}"
            if joint_assign(shifted).pairs != base_pairs:
                return False, f"assignment changed under shift {c}"
    return True, f"max value drift {worst:.3g} over {trials} bundles x 3 shifts"


def _all_ce_values(matrix: LogScoreMatrix) -> dict[str, float]:
    values = {}
    for variant in (
        LossVariant.CE_AC,
        LossVariant.CE_QC,
        LossVariant.CE_TW,
        LossVariant.CE_ML,
        LossVariant.CE_FP,
    ):
        values[variant.value] = ce_bundle(matrix, variant)
    if len(matrix.gold) == 2:
        values["ce-jt"] = ce_joint(matrix)
    return values


def suite_assignment(trials: int = 500, seed: int = 17) -> tuple[bool, str]:
    """Assignment solver total equals the brute-force oracle exactly."""
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        n = int(rng.integers(2, 5))
        scores = rng.normal(size=(n, n))
        a = joint_assign(scores)
        b = assign_bruteforce(scores)
        if a.total_score != b.total_score or a.pairs != b.pairs:
            return False, f"trial {trial}: solver {a} vs oracle {b}"
    return True, f"exact totals over {trials} matrices, n in 2..4"


@dataclass(frozen=True)
class SuiteEntry:
    name: str
    run: Callable[[], tuple[bool, str]]


SUITES: tuple[SuiteEntry, ...] = (
    SuiteEntry("gradients", suite_gradients),
    SuiteEntry("lemma", suite_lemma),
    SuiteEntry("decomposition", suite_decomposition),
    SuiteEntry("shift", suite_shift),
    SuiteEntry("assignment", suite_assignment),
)


def run_suites(names: list[str]) -> bool:
    """Run the named suites (or all), printing one pass/fail line each."""
    selected = [s for s in SUITES if not names or s.name in names]
    all_ok = True
    for suite in selected:
        ok, detail = suite.run()
        print(f"{suite.name}: {'PASS' if ok else 'FAIL'} ({detail})")
        all_ok = all_ok and ok
    return all_ok
