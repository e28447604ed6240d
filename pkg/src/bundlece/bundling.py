"""Heuristics that create instance bundles.

Three strategies, mirroring how closely-related negatives can be obtained in
practice:

* question mining — cluster near-duplicate questions over one context by
  Jaccard overlap of their token sets,
* contrastive question generation — rewrite a multiple-choice style question
  (antonym swap, verb negation, compared-phrase swap) so the other choice
  becomes the answer,
* diverse top-k sampling — draw alternative answers from a trained model
  with nucleus sampling for the first steps and greedy completion.

The antonym and irregular-verb tables live in ``resources/rules.json`` and can
be overridden.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from importlib import resources as importlib_resources
from typing import Iterable, Sequence

import numpy as np

from .data import (
    BOS,
    EOS,
    PAD,
    InstanceBundle,
    QAInstance,
    answer_key,
    join_tokens,
    validate_bundle,
)
from .errors import ConfigurationError
from .scorer import CompatMode, Model, compat, decoder_logits, encode

Tokens = tuple[str, ...]

HEURISTIC_TAGS = ("superlative_swap", "verb_negation", "np_swap")

_CHOICE_BOUNDARY = {"or", ",", "?"}
_LEADING_AUX = {"is", "are", "was", "were", "do", "does", "did"}


@dataclass(frozen=True)
class MiningConfig:
    jaccard_threshold: float = 0.8
    max_cluster_size: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.jaccard_threshold <= 1.0:
            raise ConfigurationError("jaccard_threshold must be in (0, 1]")
        if self.max_cluster_size < 2:
            raise ConfigurationError("max_cluster_size must be >= 2")


@dataclass(frozen=True)
class SamplingConfig:
    k: int = 2
    nucleus_p: float = 0.9
    nucleus_steps: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ConfigurationError("nucleus_p must be in (0, 1]")
        if self.nucleus_steps < 1:
            raise ConfigurationError("nucleus_steps must be >= 1")


def load_rules(path: str | None = None) -> dict:
    """Antonym and irregular-verb tables, from the bundled resource by default."""
    if path is None:
        ref = importlib_resources.files("bundlece.resources").joinpath("rules.json")
        return json.loads(ref.read_text(encoding="utf-8"))
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Question mining


def jaccard(q_a: Sequence[str], q_b: Sequence[str]) -> float:
    """Jaccard index of the two token *sets*; 1.0 when both are empty."""
    sa, sb = set(q_a), set(q_b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def mine_bundles(
    instances: Sequence[QAInstance], cfg: MiningConfig | None = None
) -> list[InstanceBundle]:
    """Cluster near-duplicate questions sharing one context into bundles.

    Greedy single-link clustering over pairs whose question Jaccard meets the
    threshold, in sorted-id order. Clusters with a repeated normalized answer
    are discarded entirely; singletons are never emitted; oversized clusters
    keep their first ``max_cluster_size`` members.
    """
    cfg = cfg or MiningConfig()
    insts = sorted(instances, key=lambda x: x.id)
    contexts = {inst.context for inst in insts}
    if len(contexts) > 1:
        raise ValueError("mine_bundles expects instances sharing one context")

    parent = list(range(len(insts)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(insts)):
        for j in range(i + 1, len(insts)):
            if jaccard(insts[i].question, insts[j].question) >= cfg.jaccard_threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, list[int]] = {}
    for i in range(len(insts)):
        clusters.setdefault(find(i), []).append(i)

    bundles = []
    for root in sorted(clusters):
        members = [insts[i] for i in clusters[root][: cfg.max_cluster_size]]
        if len(members) < 2:
            continue
        keys = [answer_key(m.answer) for m in members]
        if len(set(keys)) != len(keys):
            continue  # two members share an answer: not a valid bundle
        bundle = InstanceBundle(
            bundle_id="mined::" + "+".join(m.id for m in members),
            context=members[0].context,
            questions=tuple(m.question for m in members),
            answers=tuple(m.answer for m in members),
            gold=tuple((i, i) for i in range(len(members))),
            source="mined",
        )
        if not validate_bundle(bundle):
            bundles.append(bundle)
    return bundles


def mine_all(
    instances: Iterable[QAInstance], cfg: MiningConfig | None = None
) -> list[InstanceBundle]:
    """Group instances by context and mine each group."""
    groups: dict[Tokens, list[QAInstance]] = {}
    for inst in instances:
        groups.setdefault(inst.context, []).append(inst)
    bundles = []
    for ctx in sorted(groups, key=join_tokens):
        bundles.extend(mine_bundles(groups[ctx], cfg))
    return bundles


# ---------------------------------------------------------------------------
# Contrastive question generation


def _choice_spans(question: Sequence[str]) -> tuple[tuple[int, int], tuple[int, int]] | None:
    """Token spans [start, end) of the two answer choices, or None."""
    q = list(question)
    if "or" not in q:
        return None
    or_pos = q.index("or")

    # "... , <A> or <B> ?"
    if q and q[-1] == "?":
        commas = [i for i, t in enumerate(q[:or_pos]) if t == ","]
        if commas:
            start_a = commas[-1] + 1
            span_a = (start_a, or_pos)
            span_b = (or_pos + 1, len(q) - 1)
            if _spans_ok(q, span_a, span_b):
                return span_a, span_b

    # "is|are|... the <A> or the <B> ..."
    if (
        len(q) > or_pos + 2
        and q[0] in _LEADING_AUX
        and len(q) > 1
        and q[1] == "the"
        and q[or_pos + 1] == "the"
    ):
        span_a = (2, or_pos)
        end_b = or_pos + 2
        stop = _CHOICE_BOUNDARY | {"the"}
        while end_b < len(q) and q[end_b] not in stop:
            end_b += 1
        span_b = (or_pos + 2, end_b)
        if _spans_ok(q, span_a, span_b, forbid_the=True):
            return span_a, span_b

    # single-token fallback: "<A> or <B>"
    if 0 < or_pos < len(q) - 1:
        span_a = (or_pos - 1, or_pos)
        span_b = (or_pos + 1, or_pos + 2)
        if _spans_ok(q, span_a, span_b):
            return span_a, span_b
    return None


def _spans_ok(q, span_a, span_b, forbid_the: bool = False) -> bool:
    (sa, ea), (sb, eb) = span_a, span_b
    a, b = q[sa:ea], q[sb:eb]
    if not a or not b or a == b:
        return False
    stop = _CHOICE_BOUNDARY | ({"the"} if forbid_the else set())
    return not any(t in stop for t in a + b)


def extract_choices(question: Sequence[str]) -> tuple[Tokens, Tokens] | None:
    """The two answer choices named in a multiple-choice style question."""
    spans = _choice_spans(question)
    if spans is None:
        return None
    (sa, ea), (sb, eb) = spans
    return tuple(question[sa:ea]), tuple(question[sb:eb])


def gen_contrast_questions(
    instance: QAInstance, rules: dict | None = None
) -> list[tuple[Tokens, Tokens, str]]:
    """Generate minimally different questions whose answer is the other choice.

    Applies, where possible: antonym swap of a single comparative outside the
    choices, negation of the first past-tense verb ("played" -> "did not
    play"), and swapping the phrases compared around "than". Returns an empty
    list when the question has no extractable choices or the instance's answer
    is not one of them.
    """
    rules = rules or load_rules()
    antonyms: dict[str, str] = rules["antonyms"]
    irregular: dict[str, str] = rules["irregular_past"]

    q = list(instance.question)
    spans = _choice_spans(q)
    if spans is None:
        return []
    (sa, ea), (sb, eb) = spans
    choice_a, choice_b = tuple(q[sa:ea]), tuple(q[sb:eb])
    key = answer_key(instance.answer)
    if key == answer_key(choice_a):
        other = choice_b
    elif key == answer_key(choice_b):
        other = choice_a
    else:
        return []

    in_choice = set(range(sa, ea)) | set(range(sb, eb))
    outputs: list[tuple[Tokens, Tokens, str]] = []

    # 1. swap a comparative for its contrasting counterpart
    hits = [i for i, t in enumerate(q) if t in antonyms and i not in in_choice]
    if len(hits) == 1:
        new_q = list(q)
        new_q[hits[0]] = antonyms[q[hits[0]]]
        outputs.append((tuple(new_q), other, "superlative_swap"))

    # 2. negate the first past-tense verb
    verb_pos = None
    base = None
    for i, t in enumerate(q):
        if i in in_choice:
            continue
        if t in irregular:
            verb_pos, base = i, irregular[t]
            break
        if t.endswith("ed") and len(t) > 3 and t not in antonyms:
            verb_pos, base = i, t[:-2]
            break
    if verb_pos is not None:
        new_q = q[:verb_pos] + ["did", "not", base] + q[verb_pos + 1 :]
        outputs.append((tuple(new_q), other, "verb_negation"))

    # 3. swap the phrases compared around "than"
    if "than" in q and q[0] in _LEADING_AUX:
        than_pos = q.index("than")
        end = len(q) - 1 if q[-1] == "?" else len(q)
        np2 = q[than_pos + 1 : end]
        length = len(np2)
        np1 = q[1 : 1 + length]
        if np2 and 1 + length <= than_pos and np1 != np2:
            new_q = (
                q[:1] + np2 + q[1 + length : than_pos + 1] + np1 + q[end:]
            )
            outputs.append((tuple(new_q), other, "np_swap"))

    seen: set[Tokens] = {tuple(q)}
    unique = []
    for new_q, ans, tag in outputs:
        if new_q not in seen:
            seen.add(new_q)
            unique.append((new_q, ans, tag))
    return unique


def augment_bundles(
    instances: Iterable[QAInstance], rules: dict | None = None
) -> list[InstanceBundle]:
    """One bundle per generated contrast question, paired with its source."""
    rules = rules or load_rules()
    bundles = []
    for inst in instances:
        for n, (new_q, new_a, tag) in enumerate(gen_contrast_questions(inst, rules)):
            bundle = InstanceBundle(
                bundle_id=f"{inst.id}::aug{n}-{tag}",
                context=inst.context,
                questions=(inst.question, new_q),
                answers=(inst.answer, new_a),
                gold=((0, 0), (1, 1)),
                source="generated",
            )
            if not validate_bundle(bundle):
                bundles.append(bundle)
    return bundles


# ---------------------------------------------------------------------------
# Diverse top-k answer sampling


def _instance_rng(seed: int, instance_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(instance_id.encode("utf-8"))])


def _sample_candidate(
    model: Model, enc, rng: np.random.Generator, cfg: SamplingConfig
) -> list[int]:
    """One candidate answer: nucleus steps first, then greedy until EOS."""
    params = model.params
    drawn: set[int] = set()
    out: list[int] = []
    prev = BOS
    for t in range(params.l_max - 1):
        logits = decoder_logits(params, enc, prev, t)
        if t < cfg.nucleus_steps:
            logp = logits - (logits.max() + np.log(np.exp(logits - logits.max()).sum()))
            probs = np.exp(logp)
            probs[[BOS, PAD]] = 0.0
            order = np.argsort(-probs, kind="stable")
            cum = np.cumsum(probs[order])
            cut = int(np.searchsorted(cum, cfg.nucleus_p * probs.sum() - 1e-12)) + 1
            nucleus = [tok for tok in order[:cut].tolist() if tok not in drawn]
            if not nucleus:
                break
            weights = probs[nucleus]
            weights = weights / weights.sum()
            tok = int(rng.choice(nucleus, p=weights))
            drawn.add(tok)
        else:
            masked = logits.copy()
            masked[[BOS, PAD]] = -np.inf
            tok = int(np.argmax(masked))
        if tok == EOS:
            break
        out.append(tok)
        prev = tok
    return out


def sample_answer_candidates(
    model: Model, instance: QAInstance, cfg: SamplingConfig, n_target: int
) -> list[tuple[Tokens, float]]:
    """Up to ``4 * n_target`` sampled answers, deduplicated by normalized form
    and sorted by locally normalized log-score (descending)."""
    ctx = model.vocab.encode(instance.context)
    q = model.vocab.encode(instance.question)
    enc = encode(model.params, ctx, q)
    rng = _instance_rng(cfg.seed, instance.id)

    best: dict[tuple[str, ...], tuple[float, Tokens]] = {}
    for _ in range(4 * n_target):
        idx = _sample_candidate(model, enc, rng, cfg)
        if not idx:
            continue
        tokens = tuple(model.vocab.decode(idx))
        key = answer_key(tokens)
        if not key:
            continue
        score = compat(model.params, CompatMode.LN, ctx, q, idx)
        if key not in best or score > best[key][0]:
            best[key] = (score, tokens)
    ranked = sorted(best.values(), key=lambda sv: (-sv[0], sv[1]))
    return [(tokens, score) for score, tokens in ranked]


def topk_bundle(
    model: Model, instance: QAInstance, cfg: SamplingConfig
) -> InstanceBundle | None:
    """Bundle of the instance's question with k sampled negative answers.

    Candidates matching the normalized gold answer are pruned; returns None
    when no distinct negative could be obtained.
    """
    gold_key = answer_key(instance.answer)
    candidates = sample_answer_candidates(model, instance, cfg, cfg.k)
    negatives = [tokens for tokens, _ in candidates if answer_key(tokens) != gold_key]
    negatives = negatives[: cfg.k]
    if not negatives:
        return None
    return InstanceBundle(
        bundle_id=f"{instance.id}::topk",
        context=instance.context,
        questions=(instance.question,),
        answers=(instance.answer,) + tuple(negatives),
        gold=((0, 0),),
        source="topk",
    )


def top_candidates_with_probs(
    model: Model, instance: QAInstance, cfg: SamplingConfig, n: int = 10
) -> list[tuple[Tokens, float]]:
    """The n highest-scoring distinct sampled answers with raw probabilities
    ``exp(f_LN)``, for the posterior diagnostics."""
    ranked = sample_answer_candidates(model, instance, cfg, n)
    return [(tokens, float(np.exp(score))) for tokens, score in ranked[:n]]
