"""Data model shared by the whole package.

Everything downstream works on token lists produced by :func:`tokenize`.
Values are immutable after construction (tuples everywhere), so they can be
shared freely between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

# Reserved vocabulary slots. These indices are fixed by contract.
BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN = "<bos>", "<eos>", "<pad>", "<unk>"
RESERVED_TOKENS = (BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN)
BOS, EOS, PAD, UNK = 0, 1, 2, 3

ARTICLES = frozenset({"a", "an", "the"})

# Characters split off into standalone tokens. The apostrophe is deliberately
# kept inside words so possessives like "rock a's" stay a single token.
_SPLIT_CHARS = frozenset(".,?!\";:")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, peeling punctuation into own tokens.

    Deterministic and idempotent on its own space-joined output; empty input
    yields an empty list.
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        buf = ""
        for ch in chunk:
            if ch in _SPLIT_CHARS:
                if buf:
                    tokens.append(buf)
                    buf = ""
                tokens.append(ch)
            else:
                buf += ch
        if buf:
            tokens.append(buf)
    return tokens


def normalize_tokens(tokens: Iterable[str]) -> list[str]:
    """Drop articles and standalone punctuation tokens."""
    return [
        t
        for t in tokens
        if t not in ARTICLES and not all(c in _SPLIT_CHARS for c in t)
    ]


def normalize_answer(text: str) -> list[str]:
    """Tokenize, then strip articles and punctuation-only tokens."""
    return normalize_tokens(tokenize(text))


def answer_key(tokens: Iterable[str]) -> tuple[str, ...]:
    """Canonical comparison key for an answer, used for uniqueness checks."""
    return tuple(normalize_tokens(tokens))


def join_tokens(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class Vocab:
    """Ordered token inventory with reserved slots at indices 0..3."""

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        if tuple(self.tokens[:4]) != RESERVED_TOKENS:
            raise ValueError("vocab must start with the reserved tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocab tokens must be unique")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocab":
        extra = sorted(set(tokens) - set(RESERVED_TOKENS))
        return cls(RESERVED_TOKENS + tuple(extra))

    def __len__(self) -> int:
        return len(self.tokens)

    def index_of(self, token: str) -> int:
        """Index of ``token``, or the UNK index for out-of-vocab tokens."""
        return self._index.get(token, UNK)

    def token_at(self, index: int) -> str:
        return self.tokens[index]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index_of(t) for t in tokens]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in indices]


@dataclass(frozen=True)
class QAInstance:
    """One (context, question, answer) triple, all token lists."""

    id: str
    context: tuple[str, ...]
    question: tuple[str, ...]
    answer: tuple[str, ...]

    @classmethod
    def from_text(cls, id: str, context: str, question: str, answer: str) -> "QAInstance":
        inst = cls(
            id=id,
            context=tuple(tokenize(context)),
            question=tuple(tokenize(question)),
            answer=tuple(tokenize(answer)),
        )
        if not inst.id:
            raise ValueError("instance id must be nonempty")
        if not inst.question or not inst.answer:
            raise ValueError(f"instance {id!r}: question and answer must be nonempty")
        return inst


@dataclass(frozen=True)
class InstanceBundle:
    """Related questions and answers over one context with a gold pairing.

    ``gold`` maps question indices to answer indices; the pairing must be
    injective in both directions.
    """

    bundle_id: str
    context: tuple[str, ...]
    questions: tuple[tuple[str, ...], ...]
    answers: tuple[tuple[str, ...], ...]
    gold: tuple[tuple[int, int], ...]
    source: str = "synthetic"

    @classmethod
    def from_text(
        cls,
        bundle_id: str,
        context: str,
        questions: Sequence[str],
        answers: Sequence[str],
        gold: Sequence[Sequence[int]],
        source: str = "synthetic",
    ) -> "InstanceBundle":
        return cls(
            bundle_id=bundle_id,
            context=tuple(tokenize(context)),
            questions=tuple(tuple(tokenize(q)) for q in questions),
            answers=tuple(tuple(tokenize(a)) for a in answers),
            gold=tuple((int(i), int(j)) for i, j in gold),
            source=source,
        )

    def gold_pairs(self) -> tuple[tuple[int, int], ...]:
        return self.gold


def validate_bundle(bundle: InstanceBundle) -> list[str]:
    """Return the violated bundle invariants by name (empty list means ok)."""
    violations: list[str] = []
    nq, na = len(bundle.questions), len(bundle.answers)

    if len(bundle.gold) < 1:
        violations.append("empty gold pairing")
    q_seen: set[int] = set()
    a_seen: set[int] = set()
    for qi, ai in bundle.gold:
        if not (0 <= qi < nq and 0 <= ai < na):
            violations.append("gold index out of range")
            continue
        if qi in q_seen:
            violations.append("question index reused")
        if ai in a_seen:
            violations.append("answer index reused")
        q_seen.add(qi)
        a_seen.add(ai)

    if nq < 2 and na < 2:
        violations.append("no contrastive element")
    if len(set(bundle.questions)) != nq:
        violations.append("duplicate question")
    if len({answer_key(a) for a in bundle.answers}) != na:
        violations.append("duplicate answer after normalization")
    return violations


@dataclass(frozen=True)
class Dataset:
    """Instances plus bundles plus the vocabulary that covers them."""

    instances: tuple[QAInstance, ...]
    bundles: tuple[InstanceBundle, ...]
    vocab: Vocab

    @classmethod
    def build(
        cls,
        instances: Iterable[QAInstance],
        bundles: Iterable[InstanceBundle],
        vocab: Vocab | None = None,
    ) -> "Dataset":
        instances = tuple(instances)
        bundles = tuple(bundles)
        if vocab is None:
            vocab = Vocab.from_tokens(_all_tokens(instances, bundles))
        return cls(instances=instances, bundles=bundles, vocab=vocab)


def _all_tokens(
    instances: Sequence[QAInstance], bundles: Sequence[InstanceBundle]
) -> list[str]:
    tokens: list[str] = []
    for inst in instances:
        tokens.extend(inst.context)
        tokens.extend(inst.question)
        tokens.extend(inst.answer)
    for b in bundles:
        tokens.extend(b.context)
        for q in b.questions:
            tokens.extend(q)
        for a in b.answers:
            tokens.extend(a)
    return tokens


# ---------------------------------------------------------------------------
# JSON Lines I/O


def write_instances(path: str, instances: Iterable[QAInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(
                json.dumps(
                    {
                        "id": inst.id,
                        "context": join_tokens(inst.context),
                        "question": join_tokens(inst.question),
                        "answer": join_tokens(inst.answer),
                    }
                )
                + "\n"
            )


def read_instances(path: str) -> list[QAInstance]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(
                QAInstance.from_text(
                    obj["id"], obj["context"], obj["question"], obj["answer"]
                )
            )
    return out


def write_bundles(path: str, bundles: Iterable[InstanceBundle]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in bundles:
            fh.write(
                json.dumps(
                    {
                        "bundle_id": b.bundle_id,
                        "context": join_tokens(b.context),
                        "questions": [join_tokens(q) for q in b.questions],
                        "answers": [join_tokens(a) for a in b.answers],
                        "gold": [list(p) for p in b.gold],
                        "source": b.source,
                    }
                )
                + "\n"
            )


def read_bundles(path: str) -> list[InstanceBundle]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(
                InstanceBundle.from_text(
                    obj["bundle_id"],
                    obj["context"],
                    obj["questions"],
                    obj["answers"],
                    obj["gold"],
                    obj.get("source", "synthetic"),
                )
            )
    return out
