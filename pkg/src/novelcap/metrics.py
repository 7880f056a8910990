"""Caption metrics: CIDEr-D, per-class novel-object F1, and their F-beta blend.

CIDEr-D follows the consensus implementation: clipped TF-IDF n-gram cosines
for n = 1..4, document frequency counted once per image over its reference
set, and a Gaussian length penalty (sigma 6).  Per-image scores live in
[0, 10]; corpus scores are reported x10 on the familiar 0-100 scale.

F1 for a novel class compares predicted vs reference mentions over the
out-of-domain image set.  The combined score weights CIDEr against macro F1
with beta > 1 favoring CIDEr.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .dataset import caption_mentions
from .errors import IntegrityError
from .lexicon import ObjectClass

logger = logging.getLogger(__name__)

TokenSeq = Sequence[str]


def ngram_counts(tokens: TokenSeq, n_max: int = 4) -> Counter:
    counts: Counter = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i:i + n])] += 1
    return counts


@dataclass
class CiderIndex:
    """Document frequencies over an evaluation reference corpus."""

    doc_freq: dict[tuple, int]
    num_images: int
    n_max: int = 4
    sigma: float = 6.0

    @classmethod
    def build(cls, references: Iterable[Sequence[TokenSeq]],
              n_max: int = 4, sigma: float = 6.0) -> "CiderIndex":
        """Count each n-gram once per image, over that image's reference set."""
        doc_freq: dict[tuple, int] = defaultdict(int)
        num_images = 0
        for refs in references:
            num_images += 1
            seen = set()
            for ref in refs:
                seen.update(ngram_counts(ref, n_max))
            for gram in seen:
                doc_freq[gram] += 1
        return cls(doc_freq=dict(doc_freq), num_images=num_images,
                   n_max=n_max, sigma=sigma)

    @property
    def log_num_images(self) -> float:
        return math.log(max(self.num_images, 1))

    def idf(self, gram: tuple) -> float:
        return self.log_num_images - math.log(max(1.0, self.doc_freq.get(gram, 0)))


def _tfidf_vector(counts: Counter, index: CiderIndex):
    vec = [dict() for _ in range(index.n_max)]
    norm = [0.0] * index.n_max
    bigram_len = 0
    for gram, freq in counts.items():
        n = len(gram) - 1
        weight = freq * index.idf(gram)
        vec[n][gram] = weight
        norm[n] += weight * weight
        if n == 1:
            bigram_len += freq
    return vec, [math.sqrt(x) for x in norm], bigram_len


def cider_d(candidate: TokenSeq, references: Sequence[TokenSeq],
            index: CiderIndex) -> float:
    """Per-image CIDEr-D in [0, 10]; 10.0 means exact consensus."""
    if not references:
        raise ValueError("references must be non-empty")
    if not candidate:
        logger.warning("scoring empty candidate caption as 0")
        return 0.0
    vec_c, norm_c, len_c = _tfidf_vector(ngram_counts(candidate, index.n_max), index)
    total = [0.0] * index.n_max
    for ref in references:
        vec_r, norm_r, len_r = _tfidf_vector(ngram_counts(ref, index.n_max), index)
        delta = float(len_c - len_r)
        penalty = math.exp(-(delta ** 2) / (2.0 * index.sigma ** 2))
        for n in range(index.n_max):
            sim = 0.0
            for gram, w in vec_c[n].items():
                ref_w = vec_r[n].get(gram, 0.0)
                sim += min(w, ref_w) * ref_w  # clipped candidate weight
            if norm_c[n] != 0.0 and norm_r[n] != 0.0:
                sim /= norm_c[n] * norm_r[n]
            total[n] += sim * penalty
    per_n = [t / len(references) for t in total]
    return 10.0 * sum(per_n) / index.n_max


def corpus_cider(predictions: Mapping[int, TokenSeq],
                 references: Mapping[int, Sequence[TokenSeq]],
                 image_ids: Iterable[int],
                 index: CiderIndex) -> float:
    """Mean per-image CIDEr-D x10, i.e. on the 0-100 reporting scale."""
    ids = sorted(image_ids)
    if not ids:
        raise ValueError("empty image set")
    scores = [cider_d(predictions[i], references[i], index) for i in ids]
    return 10.0 * sum(scores) / len(scores)


def novel_f1(predictions: Mapping[int, TokenSeq],
             references: Mapping[int, Sequence[TokenSeq]],
             object_class: ObjectClass,
             image_ids: Iterable[int]) -> float:
    """Mention F1 (percent) of one novel class over the given image set."""
    tp = fp = fn = 0
    for image_id in image_ids:
        if image_id not in predictions:
            raise IntegrityError(f"missing prediction for image {image_id}")
        predicted = caption_mentions(tuple(predictions[image_id]), object_class)
        referenced = any(caption_mentions(tuple(r), object_class)
                         for r in references[image_id])
        if predicted and referenced:
            tp += 1
        elif predicted:
            fp += 1
        elif referenced:
            fn += 1
    denom = 2 * tp + fp + fn
    return 100.0 * 2 * tp / denom if denom else 0.0


def macro_average(per_class: Mapping[str, float],
                  expected_classes: Sequence[str]) -> float:
    """Unweighted mean over the novel classes; every class must be present."""
    missing = [c for c in expected_classes if c not in per_class]
    if missing:
        raise ValueError(f"missing per-class values for {missing}")
    if not expected_classes:
        raise ValueError("no classes to average")
    return sum(per_class[c] for c in expected_classes) / len(expected_classes)


def cof_beta(cider: float, f1: float, beta: float) -> float:
    """F-beta of CIDEr and F1 with beta weighting CIDEr (fluency)."""
    if cider < 0 or f1 < 0:
        raise ValueError("scores must be non-negative")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if cider == 0.0 and f1 == 0.0:
        return 0.0
    b2 = beta * beta
    denom = b2 * f1 + cider
    if denom == 0.0:
        return 0.0
    return (1.0 + b2) * f1 * cider / denom


@dataclass
class DomainReport:
    cider: float
    num_images: int


@dataclass
class EvalReport:
    """Metric bundle for one evaluation split."""

    in_domain: DomainReport | None = None
    out_of_domain: DomainReport | None = None
    per_class_f1: dict[str, float] = field(default_factory=dict)
    macro_f1: float | None = None
    cof: dict[str, float] = field(default_factory=dict)
    extras: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        payload: dict = {}
        if self.in_domain is not None:
            payload["in_domain"] = {"cider": self.in_domain.cider,
                                    "num_images": self.in_domain.num_images}
        if self.out_of_domain is not None:
            payload["out_of_domain"] = {"cider": self.out_of_domain.cider,
                                        "num_images": self.out_of_domain.num_images}
        payload["per_class_f1"] = dict(sorted(self.per_class_f1.items()))
        payload["macro_f1"] = self.macro_f1
        payload["cof"] = dict(sorted(self.cof.items()))
        if self.extras:
            payload["extras"] = dict(sorted(self.extras.items()))
        return payload

    def to_table(self) -> str:
        """Aligned text table in the usual column order."""
        headers = ["split", "C", "F1"] + [f"COF{k}" for k in sorted(self.cof)]
        rows = []
        if self.out_of_domain is not None:
            row = ["out-of-domain", f"{self.out_of_domain.cider:.1f}",
                   "-" if self.macro_f1 is None else f"{self.macro_f1:.1f}"]
            row += [f"{self.cof[k]:.1f}" for k in sorted(self.cof)]
            rows.append(row)
        if self.in_domain is not None:
            rows.append(["in-domain", f"{self.in_domain.cider:.1f}", "-"]
                        + ["-"] * len(self.cof))
        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
                  for i, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        return "\n".join(lines)


def format_beta(beta: float) -> str:
    return f"{beta:g}"


def evaluate(
    predictions: Mapping[int, TokenSeq],
    references: Mapping[int, Sequence[TokenSeq]],
    out_of_domain: Mapping[int, bool],
    novel_classes: Sequence[ObjectClass],
    betas: Sequence[float] = (1.0, 1.5),
    cider_macro: bool = True,
    extras: Mapping[str, float] | None = None,
) -> EvalReport:
    """Assemble the full report for one split.

    ``out_of_domain`` defines the image set and its domain flags.  The IDF
    index is built once over the references of every image in the split.
    Out-of-domain CIDEr is macro-averaged over the novel classes by default
    (per the usual held-out convention); ``cider_macro=False`` reports the
    plain corpus mean instead.
    """
    image_ids = sorted(out_of_domain)
    for image_id in image_ids:
        if image_id not in predictions:
            raise IntegrityError(f"missing prediction for image {image_id}")
        if image_id not in references or not references[image_id]:
            raise IntegrityError(f"missing references for image {image_id}")
    index = CiderIndex.build(references[i] for i in image_ids)

    in_ids = [i for i in image_ids if not out_of_domain[i]]
    out_ids = [i for i in image_ids if out_of_domain[i]]
    report = EvalReport(extras=dict(extras or {}))

    if in_ids:
        report.in_domain = DomainReport(
            cider=corpus_cider(predictions, references, in_ids, index),
            num_images=len(in_ids))
    if not out_ids:
        logger.warning("no out-of-domain images; skipping F1/COF")
        return report

    per_image = {i: cider_d(predictions[i], references[i], index) for i in out_ids}
    if cider_macro:
        per_class_cider = {}
        for cls in novel_classes:
            subset = [i for i in out_ids
                      if any(caption_mentions(tuple(r), cls) for r in references[i])]
            if subset:
                per_class_cider[cls.name] = 10.0 * sum(per_image[i] for i in subset) / len(subset)
            else:
                logger.warning("no out-of-domain image mentions %r; skipped in macro CIDEr",
                               cls.name)
        names = sorted(per_class_cider)
        out_cider = (sum(per_class_cider[n] for n in names) / len(names)) if names else 0.0
    else:
        out_cider = 10.0 * sum(per_image[i] for i in out_ids) / len(out_ids)
    report.out_of_domain = DomainReport(cider=out_cider, num_images=len(out_ids))

    for cls in novel_classes:
        report.per_class_f1[cls.name] = novel_f1(predictions, references, cls, out_ids)
    report.macro_f1 = macro_average(report.per_class_f1, [c.name for c in novel_classes])
    for beta in betas:
        report.cof[format_beta(beta)] = cof_beta(out_cider, report.macro_f1, beta)
    return report


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
