"""Adam training loop over bundles and the evaluation driver.

Training is single-threaded and fully deterministic: bundles are visited in
sorted-id order, one update per bundle, and all randomness comes from the
init seed. The optimizer *ascends* the interpolated log-likelihood.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bundling import SamplingConfig, top_candidates_with_probs
from .data import Dataset, InstanceBundle, QAInstance, join_tokens
from .errors import ConfigurationError, TrainingAbortedError, UnsupportedBundleError
from .inference import greedy_decode, joint_assign
from .losses import (
    CompatMode,
    LossSpec,
    LossVariant,
    build_score_matrix,
    bundle_objective,
    mle_loss_grad,
)
from .metrics import (
    Diagnostics,
    MetricsReport,
    consistency,
    entropy_top10,
    exact_match,
    token_f1,
    top2_ratio,
)
from .scorer import (
    Grads,
    Model,
    ScorerParams,
    add_scaled,
    init_params,
    zeros_like_params,
)

DEFAULT_DIMS = (32, 8, 64, 8)  # (d, d_p, h, l_max)


@dataclass
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    learning_rate: float = 1e-2
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dims: tuple[int, int, int, int] = DEFAULT_DIMS

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.epochs <= 0:
            raise ConfigurationError("learning_rate and epochs must be positive")


@dataclass
class AdamState:
    m: Grads
    v: Grads
    step: int = 0

    @classmethod
    def fresh(cls, params: ScorerParams) -> "AdamState":
        return cls(m=zeros_like_params(params), v=zeros_like_params(params))


def adam_step(
    params: ScorerParams, grads: Grads, state: AdamState, cfg: TrainConfig
) -> tuple[ScorerParams, AdamState]:
    """One bias-corrected Adam step in the ascent direction."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingAbortedError(f"non-finite gradient in {name}")
    t = state.step + 1
    new_arrays = {}
    new_m = {}
    new_v = {}
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.arrays().items():
        g = grads[name]
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        new_arrays[name] = p + cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        new_m[name] = m
        new_v[name] = v
    return ScorerParams(**new_arrays), AdamState(m=new_m, v=new_v, step=t)


def _instance_objective(model: Model, instance: QAInstance, spec: LossSpec):
    """MLE-only objective for flat instance training (data augmentation path)."""
    value, grads = mle_loss_grad(model, instance)
    if spec.alpha1 != 1.0:
        grads = add_scaled(zeros_like_params(model.params), grads, spec.alpha1)
    return spec.alpha1 * value, grads


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    dev: Dataset | None = None,
    init_model: Model | None = None,
) -> tuple[Model, list[dict]]:
    """Train over the dataset's bundles (or flat instances for pure MLE).

    Returns the trained model and a per-epoch history of the mean maximized
    objective, skip/clamp counts, and dev metrics when a dev set is given.
    Bundles incompatible with the loss are skipped with a warning count; an
    epoch where everything is skipped aborts.
    """
    if init_model is not None:
        model = Model(params=init_model.params, vocab=init_model.vocab)
    else:
        model = Model(
            params=init_params(cfg.seed, cfg.dims, len(dataset.vocab)),
            vocab=dataset.vocab,
        )

    bundles = sorted(dataset.bundles, key=lambda b: b.bundle_id)
    instances = sorted(dataset.instances, key=lambda i: i.id)
    if not bundles and not instances:
        raise ConfigurationError("dataset is empty")
    flat = not bundles
    if flat and cfg.loss.variant != LossVariant.MLE:
        raise ConfigurationError(
            f"loss {cfg.loss.variant.value} needs bundles; only instances given"
        )

    state = AdamState.fresh(model.params)
    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        used = 0
        skipped = 0
        clamped = 0
        if flat:
            for inst in instances:
                value, grads = _instance_objective(model, inst, cfg.loss)
                new_params, state = adam_step(model.params, grads, state, cfg)
                model = Model(params=new_params, vocab=model.vocab)
                total += value
                used += 1
        else:
            for bundle in bundles:
                try:
                    result = bundle_objective(model, bundle, cfg.loss)
                except UnsupportedBundleError:
                    skipped += 1
                    continue
                new_params, state = adam_step(model.params, result.grads, state, cfg)
                model = Model(params=new_params, vocab=model.vocab)
                total += result.value
                clamped += result.clamped
                used += 1
            if used == 0:
                raise TrainingAbortedError(
                    "every bundle was incompatible with the selected loss"
                )
        entry = {
            "epoch": epoch,
            "train_loss": total / used,
            "skipped": skipped,
            "clamped": clamped,
        }
        if dev is not None:
            report = evaluate(model, dev)
            entry["dev"] = report.to_dict()
        history.append(entry)
    return model, history


# ---------------------------------------------------------------------------
# Evaluation


def _predict_bundle(
    model: Model,
    bundle: InstanceBundle,
    mode: str,
    compat_mode: CompatMode,
) -> tuple[list[tuple[str, ...]], np.ndarray]:
    """Predicted answer tokens per question plus the bundle score matrix."""
    matrix = build_score_matrix(model, bundle, compat_mode)
    preds: list[tuple[str, ...]] = []
    if mode == "joint":
        assignment = joint_assign(matrix)
        assigned = dict(assignment.pairs)
    else:
        assigned = {}
    ctx = model.vocab.encode(bundle.context)
    for qi, question in enumerate(bundle.questions):
        if qi in assigned:
            preds.append(bundle.answers[assigned[qi]])
        else:
            idx = greedy_decode(model.params, ctx, model.vocab.encode(question))
            preds.append(tuple(model.vocab.decode(idx)))
    return preds, matrix.scores


def evaluate(
    model: Model,
    dataset: Dataset,
    mode: str = "independent",
    compat_mode: CompatMode = CompatMode.LN,
    predictions_path: str | None = None,
    diagnostics_cfg: SamplingConfig | None = None,
) -> MetricsReport:
    """Score the model on a dataset; joint mode assigns answers per bundle.

    Bundle questions are the evaluation units when bundles are present,
    otherwise flat instances are decoded independently. ``diagnostics_cfg``
    additionally samples candidate answers per question to fill the
    entropy/top-2 diagnostics.
    """
    if mode not in ("independent", "joint"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    if mode == "joint" and not dataset.bundles:
        raise ConfigurationError("joint mode requires bundles")

    records: list[dict] = []
    ems: list[int] = []
    f1s: list[float] = []
    cons: list[int] = []
    diag = Diagnostics()

    def diagnose(instance: QAInstance) -> None:
        cands = top_candidates_with_probs(model, instance, diagnostics_cfg)
        diag.entropy10.append(entropy_top10(cands))
        if len(cands) >= 2:
            diag.top2.append(top2_ratio(cands[0][1], cands[1][1]))

    if dataset.bundles:
        for bundle in sorted(dataset.bundles, key=lambda b: b.bundle_id):
            preds, scores = _predict_bundle(model, bundle, mode, compat_mode)
            bundle_em: list[int] = []
            for n, (qi, ai) in enumerate(bundle.gold):
                pred = join_tokens(preds[qi])
                gold = join_tokens(bundle.answers[ai])
                em = exact_match(pred, gold)
                bundle_em.append(em)
                ems.append(em)
                f1s.append(token_f1(pred, gold))
                records.append(
                    {
                        "id": f"{bundle.bundle_id}-q{n}",
                        "prediction": pred,
                        "mode": mode,
                        "scores": scores.tolist(),
                    }
                )
                if diagnostics_cfg is not None:
                    diagnose(
                        QAInstance(
                            id=f"{bundle.bundle_id}-q{n}",
                            context=bundle.context,
                            question=bundle.questions[qi],
                            answer=bundle.answers[ai],
                        )
                    )
            cons.append(consistency(bundle_em))
        n_units = len(ems)
        n_bundles = len(cons)
    else:
        for inst in sorted(dataset.instances, key=lambda i: i.id):
            ctx = model.vocab.encode(inst.context)
            idx = greedy_decode(model.params, ctx, model.vocab.encode(inst.question))
            pred = join_tokens(model.vocab.decode(idx))
            gold = join_tokens(inst.answer)
            ems.append(exact_match(pred, gold))
            f1s.append(token_f1(pred, gold))
            records.append(
                {"id": inst.id, "prediction": pred, "mode": mode, "scores": []}
            )
            if diagnostics_cfg is not None:
                diagnose(inst)
        n_units = len(ems)
        n_bundles = 0

    report = MetricsReport(
        em=sum(ems) / n_units if n_units else 0.0,
        f1=sum(f1s) / n_units if n_units else 0.0,
        consistency=sum(cons) / n_bundles if n_bundles else 0.0,
        n_instances=n_units,
        n_bundles=n_bundles,
        entropy10_mean=diag.entropy10_mean if diagnostics_cfg is not None else None,
        top2_ratio_mean=diag.top2_mean if diagnostics_cfg is not None else None,
    )
    if predictions_path is not None:
        with open(predictions_path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    return report
