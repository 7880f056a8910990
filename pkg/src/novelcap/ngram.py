"""Reference scorer: an add-k smoothed n-gram language model with tag mixing.

This is the trainable stand-in for a neural captioner, fast enough that the
whole three-step pipeline runs in seconds.  Next-token probabilities blend
the n-gram distribution with a per-tag unigram prior estimated from captions
whose images carry that detection tag (plus floor mass on the tag's own
mention words), which is how detected objects steer decoding toward their
words.

Models are immutable once trained and serialize to JSON losslessly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import CaptionRecord
from .decoding import Vocabulary

FORMAT_NAME = "novelcap-ngram"
FORMAT_VERSION = 1

# Default fraction of a tag's co-occurrence mass granted to each of its
# mention words; raising it grounds detected object names more strongly.
DEFAULT_MENTION_FLOOR_RATE = 0.05


@dataclass
class NGramScorer:
    """Smoothed n-gram model mixed with a tag-conditioned unigram prior."""

    order: int
    smoothing_k: float
    tag_mixture_weight: float
    vocabulary: Vocabulary
    mention_floor_rate: float = DEFAULT_MENTION_FLOOR_RATE
    counts: dict[tuple[int, ...], dict[int, int]] = field(default_factory=dict)
    context_totals: dict[tuple[int, ...], int] = field(default_factory=dict)
    tag_counts: dict[str, dict[int, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.smoothing_k <= 0:
            raise ValueError("smoothing_k must be positive")
        if not 0.0 <= self.tag_mixture_weight <= 1.0:
            raise ValueError("tag_mixture_weight must be in [0, 1]")
        self._tag_probs_cache: dict[str, np.ndarray] = {}

    @property
    def vocab(self) -> Vocabulary:
        return self.vocabulary

    @classmethod
    def train(
        cls,
        captions: Sequence[CaptionRecord],
        order: int = 3,
        smoothing_k: float = 0.1,
        tag_mixture_weight: float = 0.3,
        image_tags: Mapping[int, Sequence[str]] | None = None,
        mention_words: Mapping[str, Sequence[str]] | None = None,
        mention_floor_rate: float = DEFAULT_MENTION_FLOOR_RATE,
    ) -> "NGramScorer":
        """Fit counts on BOS-padded captions; vocabulary closes over the corpus.

        ``image_tags`` associates caption image ids with detection tags; the
        captions of tagged images feed that tag's unigram prior.
        ``mention_words`` maps tag names to caption word forms that receive
        floor mass (only in-vocabulary forms contribute).
        """
        if not captions:
            raise ValueError("training corpus is empty")
        vocab = Vocabulary.from_corpus(c.tokens for c in captions)
        model = cls(order=order, smoothing_k=smoothing_k,
                    tag_mixture_weight=tag_mixture_weight, vocabulary=vocab,
                    mention_floor_rate=mention_floor_rate)
        pad = (vocab.bos_index,) * (order - 1)
        for caption in captions:
            seq = pad + vocab.encode(caption.tokens) + (vocab.eos_index,)
            for i in range(order - 1, len(seq)):
                ctx = seq[i - order + 1:i]
                tok = seq[i]
                bucket = model.counts.setdefault(ctx, {})
                bucket[tok] = bucket.get(tok, 0) + 1
                model.context_totals[ctx] = model.context_totals.get(ctx, 0) + 1

        image_tags = image_tags or {}
        tag_counts: dict[str, dict[int, float]] = {}
        for caption in captions:
            for tag in image_tags.get(caption.image_id, ()):
                bucket = tag_counts.setdefault(tag, {})
                for tok in vocab.encode(caption.tokens):
                    bucket[tok] = bucket.get(tok, 0.0) + 1.0
        for tag, forms in (mention_words or {}).items():
            in_vocab = [w for form in forms for w in form.split() if w in vocab]
            if not in_vocab:
                continue
            bucket = tag_counts.setdefault(tag, {})
            floor = max(1.0, mention_floor_rate * sum(bucket.values()))
            for word in in_vocab:
                tok = vocab.encode_token(word)
                bucket[tok] = bucket.get(tok, 0.0) + floor
        model.tag_counts = tag_counts
        return model

    def _base_probs(self, prefix: Sequence[int]) -> np.ndarray:
        size = len(self.vocabulary)
        if self.order > 1:
            padded = (self.vocabulary.bos_index,) * (self.order - 1) + tuple(prefix)
            ctx = padded[-(self.order - 1):]
        else:
            ctx = ()
        probs = np.full(size, self.smoothing_k, dtype=np.float64)
        probs[self.vocabulary.bos_index] = 0.0
        for tok, count in self.counts.get(ctx, {}).items():
            probs[tok] += count
        return probs / probs.sum()

    def _tag_probs(self, tag: str) -> np.ndarray | None:
        cached = self._tag_probs_cache.get(tag)
        if cached is not None:
            return cached
        bucket = self.tag_counts.get(tag)
        if not bucket:
            return None
        size = len(self.vocabulary)
        probs = np.full(size, self.smoothing_k, dtype=np.float64)
        probs[self.vocabulary.bos_index] = 0.0
        for tok, count in sorted(bucket.items()):
            probs[tok] += count
        probs /= probs.sum()
        self._tag_probs_cache[tag] = probs
        return probs

    def next_logprobs(self, prefix: Sequence[int],
                      context_tags: Sequence[str] = ()) -> np.ndarray:
        """Log-distribution over the next token given prefix and image tags."""
        probs = self._base_probs(prefix)
        lam = self.tag_mixture_weight
        if lam > 0.0 and context_tags:
            tag_vectors = [v for v in (self._tag_probs(t) for t in context_tags)
                           if v is not None]
            if tag_vectors:
                mixture = np.mean(tag_vectors, axis=0)
                probs = (1.0 - lam) * probs + lam * mixture
        with np.errstate(divide="ignore"):
            return np.log(probs)

    def unigram_prob(self, token: str) -> float:
        """Smoothed unconditional unigram probability of a token."""
        totals: dict[int, int] = {}
        for bucket in self.counts.values():
            for tok, count in bucket.items():
                totals[tok] = totals.get(tok, 0) + count
        size = len(self.vocabulary)
        idx = self.vocabulary.encode_token(token)
        if idx == self.vocabulary.unk_index and token != self.vocabulary.tokens[idx]:
            return 0.0  # out-of-vocabulary words have no probability of their own
        denom = sum(totals.values()) + self.smoothing_k * (size - 1)
        return (totals.get(idx, 0) + self.smoothing_k) / denom

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        tokens = self.vocabulary.tokens

        def ctx_key(ctx: tuple[int, ...]) -> str:
            return " ".join(tokens[i] for i in ctx)

        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "order": self.order,
            "smoothing_k": self.smoothing_k,
            "tag_mixture_weight": self.tag_mixture_weight,
            "mention_floor_rate": self.mention_floor_rate,
            "vocab": tokens,
            "counts": {
                ctx_key(ctx): {tokens[t]: c for t, c in sorted(bucket.items())}
                for ctx, bucket in sorted(self.counts.items())
            },
            "tag_counts": {
                tag: {tokens[t]: c for t, c in sorted(bucket.items())}
                for tag, bucket in sorted(self.tag_counts.items())
            },
        }

    @classmethod
    def from_json(cls, payload: dict) -> "NGramScorer":
        if payload.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} payload")
        if payload.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {payload.get('version')}")
        vocab = Vocabulary(payload["vocab"])
        model = cls(
            order=payload["order"],
            smoothing_k=payload["smoothing_k"],
            tag_mixture_weight=payload["tag_mixture_weight"],
            vocabulary=vocab,
            mention_floor_rate=payload.get("mention_floor_rate",
                                           DEFAULT_MENTION_FLOOR_RATE),
        )
        for ctx_key, bucket in payload["counts"].items():
            ctx = tuple(vocab.index[t] for t in ctx_key.split()) if ctx_key else ()
            decoded = {vocab.index[t]: c for t, c in bucket.items()}
            model.counts[ctx] = decoded
            model.context_totals[ctx] = sum(decoded.values())
        for tag, bucket in payload["tag_counts"].items():
            model.tag_counts[tag] = {vocab.index[t]: c for t, c in bucket.items()}
        return model

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "NGramScorer":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))
