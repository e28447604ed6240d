"""Toy encoder-decoder scoring model and its compatibility functions.

The model embeds the concatenated context+question as a mean of token
embeddings and decodes the answer with a one-hidden-layer MLP conditioned on
the previous token and a learned position embedding (an order-1 approximation
of an autoregressive decoder).

Three log-compatibility functions turn decoder outputs into a scalar
``f(q, a)`` with ``psi = exp(f)``:

* ``LN`` — sum over steps of log-softmax probabilities (always <= 0),
* ``UN`` — sum over steps of the raw chosen-token logits,
* ``GS`` — the raw logit of the end-of-sequence symbol at the final step.

All arithmetic stays in the log domain; ``exp(f)`` is never materialized.
Gradients are computed by hand in reverse mode and checked against central
finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .data import BOS, EOS, Vocab
from .errors import ConfigurationError

PARAM_NAMES = ("emb", "pos", "w1", "b1", "w2", "b2")

Grads = dict[str, np.ndarray]


class CompatMode(str, Enum):
    LN = "ln"
    UN = "un"
    GS = "gs"


@dataclass
class ScorerParams:
    """All trainable parameters. Arrays are float64 and treated as immutable
    while scoring; the trainer swaps in fresh arrays on update."""

    emb: np.ndarray  # (V, d) token embeddings
    pos: np.ndarray  # (L_max, d_p) decoder position embeddings
    w1: np.ndarray  # (h, 2d + d_p)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (V, h)
    b2: np.ndarray  # (V,)

    @property
    def vocab_size(self) -> int:
        return self.emb.shape[0]

    @property
    def d(self) -> int:
        return self.emb.shape[1]

    @property
    def d_p(self) -> int:
        return self.pos.shape[1]

    @property
    def h(self) -> int:
        return self.w1.shape[0]

    @property
    def l_max(self) -> int:
        return self.pos.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays().values())


def init_params(
    seed: int, dims: tuple[int, int, int, int], vocab_size: int
) -> ScorerParams:
    """Fresh parameters with entries i.i.d. uniform in [-0.1, 0.1].

    ``dims`` is ``(d, d_p, h, l_max)``. The same seed always produces
    bit-identical parameters.
    """
    d, d_p, h, l_max = dims
    if min(d, d_p, h) <= 0 or l_max < 2 or vocab_size <= 0:
        raise ConfigurationError(
            f"dimensions must be positive with l_max >= 2, got dims={dims}, "
            f"vocab_size={vocab_size}"
        )
    rng = np.random.default_rng(seed)

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=shape)

    return ScorerParams(
        emb=u(vocab_size, d),
        pos=u(l_max, d_p),
        w1=u(h, 2 * d + d_p),
        b1=u(h),
        w2=u(vocab_size, h),
        b2=u(vocab_size),
    )


def zeros_like_params(params: ScorerParams) -> Grads:
    return {name: np.zeros_like(arr) for name, arr in params.arrays().items()}


def add_scaled(acc: Grads, grads: Grads, scale: float = 1.0) -> Grads:
    """In-place ``acc += scale * grads``."""
    for name, g in grads.items():
        acc[name] += scale * g
    return acc


def flatten_arrays(arrs: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([arrs[name].ravel() for name in PARAM_NAMES])


def unflatten_params(template: ScorerParams, flat: np.ndarray) -> ScorerParams:
    out = {}
    offset = 0
    for name, arr in template.arrays().items():
        size = arr.size
        out[name] = flat[offset : offset + size].reshape(arr.shape).copy()
        offset += size
    return ScorerParams(**out)


def encode(
    params: ScorerParams, context: Sequence[int], question: Sequence[int]
) -> np.ndarray:
    """Mean embedding of the concatenated context+question token indices.

    An empty sequence encodes to the zero vector.
    """
    idx = list(context) + list(question)
    if not idx:
        return np.zeros(params.d)
    return params.emb[idx].mean(axis=0)


def decoder_logits(
    params: ScorerParams, encoding: np.ndarray, prev_token: int, t: int
) -> np.ndarray:
    """Vocabulary logits for decoding step ``t`` given the previous token."""
    if not 0 <= t < params.l_max:
        raise ValueError(f"step index {t} out of range [0, {params.l_max})")
    x = np.concatenate([encoding, params.emb[prev_token], params.pos[t]])
    u = np.tanh(params.w1 @ x + params.b1)
    return params.w2 @ u + params.b2


# ---------------------------------------------------------------------------
# Step-level forward/backward shared by compat and the per-token losses.


@dataclass
class SequenceCache:
    """Forward activations for one (context+question, answer) pair."""

    enc_tokens: list[int]  # concatenated context+question indices
    steps: list[int]  # answer tokens followed by EOS
    prevs: list[int]  # BOS followed by answer tokens
    x: np.ndarray  # (T, 2d + d_p) decoder inputs
    u: np.ndarray  # (T, h) hidden activations
    logits: np.ndarray  # (T, V)
    _logprobs: np.ndarray | None = None

    @property
    def logprobs(self) -> np.ndarray:
        if self._logprobs is None:
            m = self.logits.max(axis=1, keepdims=True)
            lse = m + np.log(np.exp(self.logits - m).sum(axis=1, keepdims=True))
            self._logprobs = self.logits - lse
        return self._logprobs

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logprobs)


def sequence_forward(
    params: ScorerParams,
    context: Sequence[int],
    question: Sequence[int],
    answer: Sequence[int],
    enc: np.ndarray | None = None,
) -> SequenceCache:
    """Run the decoder over ``answer`` + EOS starting from BOS.

    ``enc`` may carry a precomputed encoding of the same context+question to
    share work across the answers of one bundle.
    """
    steps = list(answer) + [EOS]
    if len(steps) > params.l_max:
        raise ValueError(
            f"answer of {len(answer)} tokens plus EOS exceeds l_max={params.l_max}"
        )
    enc_tokens = list(context) + list(question)
    if enc is None:
        enc = encode(params, context, question)
    prevs = [BOS] + list(answer)
    T = len(steps)
    d, d_p = params.d, params.d_p
    x = np.empty((T, 2 * d + d_p))
    x[:, :d] = enc
    x[:, d : 2 * d] = params.emb[prevs]
    x[:, 2 * d :] = params.pos[:T]
    u = np.tanh(x @ params.w1.T + params.b1)
    logits = u @ params.w2.T + params.b2
    return SequenceCache(
        enc_tokens=enc_tokens, steps=steps, prevs=prevs, x=x, u=u, logits=logits
    )


def sequence_backward(
    params: ScorerParams,
    cache: SequenceCache,
    logit_grads: np.ndarray,
    acc: Grads,
    scale: float = 1.0,
) -> None:
    """Accumulate ``scale * d(objective)/d(params)`` into ``acc``.

    ``logit_grads`` is the (T, V) gradient of the objective with respect to
    the per-step logits.
    """
    g = logit_grads if scale == 1.0 else scale * logit_grads
    d = params.d
    acc["b2"] += g.sum(axis=0)
    acc["w2"] += g.T @ cache.u
    du = g @ params.w2
    dz = du * (1.0 - cache.u * cache.u)
    acc["b1"] += dz.sum(axis=0)
    acc["w1"] += dz.T @ cache.x
    dx = dz @ params.w1
    np.add.at(acc["emb"], cache.prevs, dx[:, d : 2 * d])
    acc["pos"][: len(cache.steps)] += dx[:, 2 * d :]
    if cache.enc_tokens:
        denc = dx[:, :d].sum(axis=0) / len(cache.enc_tokens)
        np.add.at(acc["emb"], cache.enc_tokens, denc)


def _mode_value(cache: SequenceCache, mode: CompatMode) -> float:
    rows = np.arange(len(cache.steps))
    if mode == CompatMode.LN:
        return float(cache.logprobs[rows, cache.steps].sum())
    if mode == CompatMode.UN:
        return float(cache.logits[rows, cache.steps].sum())
    return float(cache.logits[-1, EOS])


def mode_logit_grads(cache: SequenceCache, mode: CompatMode) -> np.ndarray:
    """d f / d logits for the given compatibility mode, shape (T, V)."""
    T, V = cache.logits.shape
    g = np.zeros((T, V))
    rows = np.arange(T)
    if mode == CompatMode.LN:
        g -= cache.probs
        g[rows, cache.steps] += 1.0
    elif mode == CompatMode.UN:
        g[rows, cache.steps] = 1.0
    else:
        g[-1, EOS] = 1.0
    return g


def compat(
    params: ScorerParams,
    mode: CompatMode,
    context: Sequence[int],
    question: Sequence[int],
    answer: Sequence[int],
) -> float:
    """Log-compatibility ``f(q, a)``; the EOS step is appended internally."""
    return _mode_value(sequence_forward(params, context, question, answer), mode)


def compat_grad(
    params: ScorerParams,
    mode: CompatMode,
    context: Sequence[int],
    question: Sequence[int],
    answer: Sequence[int],
) -> tuple[float, Grads]:
    """``f(q, a)`` together with its gradient w.r.t. every parameter."""
    cache = sequence_forward(params, context, question, answer)
    value = _mode_value(cache, mode)
    grads = zeros_like_params(params)
    sequence_backward(params, cache, mode_logit_grads(cache, mode), grads)
    return value, grads


# ---------------------------------------------------------------------------
# Model = parameters + vocabulary, with exact JSON round-tripping.


@dataclass
class Model:
    params: ScorerParams
    vocab: Vocab

    def encode_tokens(self, tokens: Sequence[str]) -> list[int]:
        return self.vocab.encode(tokens)


def save_model(path: str, model: Model) -> None:
    p = model.params
    payload = {
        "dims": {"d": p.d, "d_p": p.d_p, "h": p.h, "l_max": p.l_max},
        "vocab": list(model.vocab.tokens),
        "params": {name: arr.ravel().tolist() for name, arr in p.arrays().items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path: str) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    dims = payload["dims"]
    vocab = Vocab(tuple(payload["vocab"]))
    V, d, d_p, h, l_max = len(vocab), dims["d"], dims["d_p"], dims["h"], dims["l_max"]
    shapes = {
        "emb": (V, d),
        "pos": (l_max, d_p),
        "w1": (h, 2 * d + d_p),
        "b1": (h,),
        "w2": (V, h),
        "b2": (V,),
    }
    arrays = {
        name: np.array(payload["params"][name], dtype=float).reshape(shape)
        for name, shape in shapes.items()
    }
    return Model(params=ScorerParams(**arrays), vocab=vocab)
