"""Independent CIDEr-D oracle, transcribed from the consensus implementation.

Kept deliberately close to the original scorer's structure (cook/counts2vec/
sim with clipping and the Gaussian length penalty over bigram counts) so it
can serve as the second route for verifying the package's metric.
"""
from collections import defaultdict
import math


def precook(words, n=4):
    counts = defaultdict(int)
    for k in range(1, n + 1):
        for i in range(len(words) - k + 1):
            counts[tuple(words[i:i + k])] += 1
    return counts


def compute_doc_freq(crefs):
    document_frequency = defaultdict(float)
    for refs in crefs:
        for ngram in set(ngram for ref in refs for ngram in ref):
            document_frequency[ngram] += 1
    return document_frequency


def counts2vec(cnts, document_frequency, ref_len, n=4):
    vec = [defaultdict(float) for _ in range(n)]
    length = 0
    norm = [0.0 for _ in range(n)]
    for ngram, term_freq in cnts.items():
        df = math.log(max(1.0, document_frequency[ngram]))
        k = len(ngram) - 1
        vec[k][ngram] = float(term_freq) * (ref_len - df)
        norm[k] += pow(vec[k][ngram], 2)
        if k == 1:
            length += term_freq
    norm = [math.sqrt(x) for x in norm]
    return vec, norm, length


def sim(vec_hyp, vec_ref, norm_hyp, norm_ref, length_hyp, length_ref,
        n=4, sigma=6.0):
    delta = float(length_hyp - length_ref)
    val = [0.0 for _ in range(n)]
    for k in range(n):
        for ngram, count in vec_hyp[k].items():
            val[k] += min(vec_hyp[k][ngram], vec_ref[k][ngram]) * vec_ref[k][ngram]
        if norm_hyp[k] != 0 and norm_ref[k] != 0:
            val[k] /= norm_hyp[k] * norm_ref[k]
        val[k] *= math.e ** (-(delta ** 2) / (2 * sigma ** 2))
    return val


def cider_d_scores(candidates, references, n=4, sigma=6.0):
    """Per-image CIDEr-D for parallel lists of candidates and reference sets."""
    crefs = [[precook(ref, n) for ref in refs] for refs in references]
    ctest = [precook(cand, n) for cand in candidates]
    document_frequency = compute_doc_freq(crefs)
    ref_len = math.log(float(len(crefs)))
    scores = []
    for test, refs in zip(ctest, crefs):
        vec, norm, length = counts2vec(test, document_frequency, ref_len, n)
        score = [0.0 for _ in range(n)]
        for ref in refs:
            vec_ref, norm_ref, length_ref = counts2vec(ref, document_frequency,
                                                       ref_len, n)
            for k, v in enumerate(sim(vec, vec_ref, norm, norm_ref, length,
                                      length_ref, n, sigma)):
                score[k] += v
        score_avg = sum(score) / n
        score_avg /= len(refs)
        score_avg *= 10.0
        scores.append(score_avg)
    return scores
