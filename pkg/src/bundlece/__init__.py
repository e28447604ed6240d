"""Contrastive estimation over question-answer instance bundles.

A bundle groups closely related questions and answers over one context with
an injective gold pairing. The package provides the family of bundle-level
training objectives (answer/question conditional, two-way, multi-label,
joint, full partition, unlikelihood), heuristics for creating bundles
(question mining, contrastive question generation, diverse negative
sampling), assignment-based joint inference, QA metrics, and a small
deterministic training harness that demonstrates everything end to end on a
synthetic comparison task.
"""

from .bundling import (
    MiningConfig,
    SamplingConfig,
    augment_bundles,
    extract_choices,
    gen_contrast_questions,
    jaccard,
    load_rules,
    mine_all,
    mine_bundles,
    topk_bundle,
)
from .data import (
    Dataset,
    InstanceBundle,
    QAInstance,
    Vocab,
    normalize_answer,
    read_bundles,
    read_instances,
    tokenize,
    validate_bundle,
    write_bundles,
    write_instances,
)
from .errors import (
    ConfigurationError,
    SizeLimitError,
    TrainingAbortedError,
    UnsupportedBundleError,
    UnsupportedModeError,
)
from .inference import Assignment, assign_bruteforce, greedy_decode, joint_assign, rank_candidates
from .losses import (
    LogScoreMatrix,
    LossSpec,
    LossVariant,
    build_score_matrix,
    bundle_objective,
    ce_bundle,
    ce_joint,
    ce_pairwise,
    log_sum_exp,
    mle_loss,
    ul_loss,
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
    CompatMode,
    Model,
    ScorerParams,
    compat,
    compat_grad,
    decoder_logits,
    encode,
    init_params,
    load_model,
    save_model,
)
from .synth import GeneratorConfig, generate_synthetic
from .training import AdamState, TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
