"""Synthetic comparison-QA generator.

Each bundle states how many of some attribute two entities have and asks the
paired questions "which person has more/less <attr> ?". Quantities come from
a per-seed world table (entity x attribute -> value) so the task stays
learnable for a bag-of-words encoder: the pairing of entity and quantity
inside a single context is not recoverable from a token multiset, but the
world table is fixed, so entity/attribute co-occurrence statistics determine
the answer. Distractor sentences about other entity-attribute pairs add
noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, InstanceBundle, QAInstance, Vocab, tokenize
from .errors import ConfigurationError

ENTITY_NAMES = (
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi",
    "ivan", "judy", "kevin", "laura", "mallory", "nancy", "oscar", "peggy",
    "quinn", "rachel", "steve", "trudy",
)
ATTRIBUTE_NAMES = (
    "stones", "coins", "apples", "books", "cards", "shells", "marbles",
    "stickers", "buttons", "pencils", "ribbons", "feathers",
)
TEMPLATE_TOKENS = ("which", "person", "has", "more", "less", ".", "?")


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_train_bundles: int = 2000
    n_dev_bundles: int = 500
    entity_pool_size: int = 12
    attribute_pool_size: int = 8
    value_lo: int = 1
    value_hi: int = 20
    max_distractors: int = 2

    def __post_init__(self) -> None:
        if self.entity_pool_size < 2 or self.attribute_pool_size < 2:
            raise ConfigurationError("entity and attribute pools must be >= 2")
        if self.value_hi - self.value_lo + 1 < 2:
            raise ConfigurationError("value range must contain >= 2 values")
        if self.value_hi - self.value_lo + 1 < self.entity_pool_size:
            raise ConfigurationError(
                "value range must cover the entity pool for distinct quantities"
            )
        if self.max_distractors < 0:
            raise ConfigurationError("max_distractors must be >= 0")


def _entities(cfg: GeneratorConfig) -> list[str]:
    names = list(ENTITY_NAMES)
    while len(names) < cfg.entity_pool_size:
        names.append(f"person{len(names)}")
    return names[: cfg.entity_pool_size]


def _attributes(cfg: GeneratorConfig) -> list[str]:
    names = list(ATTRIBUTE_NAMES)
    while len(names) < cfg.attribute_pool_size:
        names.append(f"thing{len(names)}")
    return names[: cfg.attribute_pool_size]


def _world(
    rng: np.random.Generator, entities: list[str], attributes: list[str], cfg
) -> dict[str, dict[str, int]]:
    """Fixed quantity table: per attribute, distinct values across entities.

    Entities share one global ordering across attributes (values differ, the
    ranking does not), so the comparison itself is reliably learnable and the
    paired more/less questions carry the task's real difficulty.
    """
    values = np.arange(cfg.value_lo, cfg.value_hi + 1)
    order = rng.permutation(len(entities))
    world: dict[str, dict[str, int]] = {e: {} for e in entities}
    for attr in attributes:
        chosen = np.sort(rng.choice(values, size=len(entities), replace=False))
        for rank, v in zip(order, chosen):
            world[entities[rank]][attr] = int(v)
    return world


def _make_bundle(
    bundle_id: str,
    rng: np.random.Generator,
    entities: list[str],
    attributes: list[str],
    world: dict[str, dict[str, int]],
    cfg: GeneratorConfig,
) -> InstanceBundle:
    e1, e2 = (entities[i] for i in rng.choice(len(entities), size=2, replace=False))
    attr = attributes[int(rng.integers(len(attributes)))]
    v1, v2 = world[e1][attr], world[e2][attr]

    sentences = [f"{e1} has {v1} {attr} .", f"{e2} has {v2} {attr} ."]
    n_extra = int(rng.integers(0, cfg.max_distractors + 1))
    for _ in range(n_extra):
        while True:
            de = entities[int(rng.integers(len(entities)))]
            da = attributes[int(rng.integers(len(attributes)))]
            if (de, da) not in {(e1, attr), (e2, attr)}:
                break
        sentences.append(f"{de} has {world[de][da]} {da} .")
    context = " ".join(sentences)

    winner, loser = (e1, e2) if v1 > v2 else (e2, e1)
    # answer order must not encode the gold pairing, or assignment tie-breaks
    # would silently favor the right answer
    if rng.integers(2) == 0:
        answers, gold = [winner, loser], [(0, 0), (1, 1)]
    else:
        answers, gold = [loser, winner], [(0, 1), (1, 0)]
    return InstanceBundle.from_text(
        bundle_id=bundle_id,
        context=context,
        questions=[
            f"which person has more {attr} ?",
            f"which person has less {attr} ?",
        ],
        answers=answers,
        gold=gold,
        source="synthetic",
    )


def _bundle_instances(bundle: InstanceBundle) -> list[QAInstance]:
    out = []
    for n, (qi, ai) in enumerate(bundle.gold):
        out.append(
            QAInstance(
                id=f"{bundle.bundle_id}-q{n}",
                context=bundle.context,
                question=bundle.questions[qi],
                answer=bundle.answers[ai],
            )
        )
    return out


def build_vocab(cfg: GeneratorConfig) -> Vocab:
    """Closed template vocabulary; independent of the sampled bundles."""
    tokens: list[str] = []
    for text in (
        list(TEMPLATE_TOKENS)
        + _entities(cfg)
        + _attributes(cfg)
        + [str(v) for v in range(cfg.value_lo, cfg.value_hi + 1)]
    ):
        tokens.extend(tokenize(text))
    return Vocab.from_tokens(tokens)


def generate_synthetic(cfg: GeneratorConfig) -> tuple[Dataset, Dataset]:
    """Deterministic (train, dev) datasets sharing one world and vocabulary."""
    rng = np.random.default_rng(cfg.seed)
    entities = _entities(cfg)
    attributes = _attributes(cfg)
    world = _world(rng, entities, attributes, cfg)
    vocab = build_vocab(cfg)

    def make_split(prefix: str, count: int) -> Dataset:
        bundles = []
        instances = []
        width = max(5, len(str(max(count - 1, 1))))
        for i in range(count):
            b = _make_bundle(
                f"{prefix}-{i:0{width}d}", rng, entities, attributes, world, cfg
            )
            bundles.append(b)
            instances.extend(_bundle_instances(b))
        return Dataset(instances=tuple(instances), bundles=tuple(bundles), vocab=vocab)

    train = make_split("train", cfg.n_train_bundles)
    dev = make_split("dev", cfg.n_dev_bundles)
    return train, dev
