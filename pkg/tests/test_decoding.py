import itertools

import numpy as np
import pytest

from novelcap.decoding import (DecodeConfig, Vocabulary, beam_search, build_fsm,
                               checked_next_logprobs, constrained_beam_search)
from novelcap.errors import ScorerContractError


def make_vocab(*words):
    return Vocabulary(["<bos>", "<eos>", "<unk>"] + list(words))


class TabularScorer:
    """Position-independent bigram scorer: a fixed table p(next | previous)."""

    def __init__(self, vocab: Vocabulary, table: np.ndarray):
        self._vocab = vocab
        with np.errstate(divide="ignore"):
            self._log_table = np.log(table)

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    def next_logprobs(self, prefix, context_tags=()):
        prev = prefix[-1] if prefix else self._vocab.bos_index
        return self._log_table[prev]


def random_table(vocab: Vocabulary, rng: np.random.Generator) -> np.ndarray:
    """Rows are distributions over every token except BOS."""
    size = len(vocab)
    table = rng.random((size, size)) + 1e-3
    table[:, vocab.bos_index] = 0.0
    table /= table.sum(axis=1, keepdims=True)
    return table


def real_tokens(vocab: Vocabulary) -> list[int]:
    return [i for i in range(len(vocab)) if i not in (vocab.bos_index, vocab.eos_index)]


def sequence_logprob(scorer, seq, tags=()) -> float:
    lp = 0.0
    for t, tok in enumerate(seq):
        lp += float(scorer.next_logprobs(seq[:t], tags)[tok])
    lp += float(scorer.next_logprobs(seq, tags)[scorer.vocab.eos_index])
    return lp


def exhaustive_best(scorer, max_len, predicate=None):
    """Enumerate every EOS-terminated sequence of length 1..max_len."""
    best = None
    for length in range(1, max_len + 1):
        for seq in itertools.product(real_tokens(scorer.vocab), repeat=length):
            if predicate is not None and not predicate(seq):
                continue
            lp = sequence_logprob(scorer, seq)
            key = (-lp, seq)
            if best is None or key < best:
                best = key
    return best  # (-logprob, tokens) or None


def contains_run(seq, run):
    return any(tuple(seq[i:i + len(run)]) == tuple(run)
               for i in range(len(seq) - len(run) + 1))


# -- vocabulary ---------------------------------------------------------------


def test_vocabulary_roundtrip():
    vocab = make_vocab("b", "a")
    assert vocab.encode(("a", "b", "mystery")) == (
        vocab.index["a"], vocab.index["b"], vocab.unk_index)
    assert vocab.decode(vocab.encode(("a", "b"))) == ("a", "b")


def test_vocabulary_from_corpus_is_sorted_and_stable():
    v1 = Vocabulary.from_corpus([("b", "a"), ("c",)])
    v2 = Vocabulary.from_corpus([("c", "b"), ("a",)])
    assert v1.tokens == v2.tokens
    assert v1.tokens[:3] == ["<bos>", "<eos>", "<unk>"]


def test_vocabulary_requires_specials():
    with pytest.raises(ValueError):
        Vocabulary(["a", "b"])


# -- constraint FSM -----------------------------------------------------------


def test_fsm_zero_constraints_accepting():
    vocab = make_vocab("a")
    fsm = build_fsm([], vocab)
    assert fsm.min_satisfied == 0
    assert fsm.is_accepting(fsm.initial_state)
    assert fsm.step(fsm.initial_state, vocab.index["a"]) == fsm.initial_state
    assert fsm.num_states == 1


def test_fsm_single_word_constraint():
    vocab = make_vocab("zebra", "field")
    fsm = build_fsm(["zebra"], vocab)
    assert fsm.min_satisfied == 1
    s = fsm.step(fsm.initial_state, vocab.index["field"])
    assert fsm.satisfied_count(s) == 0
    s = fsm.step(s, vocab.index["zebra"])
    assert fsm.satisfied_count(s) == 1
    assert fsm.is_accepting(s)
    assert fsm.num_states == 2


def test_fsm_multi_token_progress_and_reset():
    vocab = make_vocab("tennis", "racket", "ball")
    fsm = build_fsm(["tennis racket"], vocab)
    t, r, b = (vocab.index[w] for w in ("tennis", "racket", "ball"))
    # Hand-traced transitions.
    assert fsm.satisfied_count(fsm.replay([t])) == 0          # partial progress
    assert fsm.satisfied_count(fsm.replay([t, r])) == 1       # completed
    assert fsm.satisfied_count(fsm.replay([t, b, r])) == 0    # diverged, reset
    assert fsm.satisfied_count(fsm.replay([t, t, r])) == 1    # re-entered at "tennis"
    assert fsm.satisfied_count(fsm.replay([b, t, r])) == 1
    mid = fsm.replay([t])
    assert mid != fsm.initial_state


def test_fsm_matches_substring_semantics_with_self_overlap():
    vocab = make_vocab("a", "b")
    fsm = build_fsm(["a a b"], vocab)
    a, b = vocab.index["a"], vocab.index["b"]
    assert fsm.satisfied_count(fsm.replay([a, a, a, b])) == 1
    assert fsm.satisfied_count(fsm.replay([a, b, a, b])) == 0


def test_fsm_alternative_forms():
    vocab = make_vocab("zebra", "zebras")
    fsm = build_fsm([["zebra", "zebras"]], vocab)
    assert fsm.satisfied_count(fsm.replay([vocab.index["zebras"]])) == 1
    assert fsm.satisfied_count(fsm.replay([vocab.index["zebra"]])) == 1


def test_fsm_min_satisfied_default_caps_at_two():
    vocab = make_vocab("a", "b", "c")
    fsm = build_fsm(["a", "b", "c"], vocab)
    assert fsm.min_satisfied == 2


def test_fsm_oov_constraint_flagged():
    vocab = make_vocab("zebra")
    fsm = build_fsm(["zebra", "martian"], vocab)
    assert fsm.oov_constraints == (1,)
    # The OOV constraint matches the UNK token.
    assert fsm.satisfied_count(fsm.replay([vocab.unk_index])) == 1


# -- beam search --------------------------------------------------------------


def fixed_scorer():
    vocab = make_vocab("a")  # tokens: bos, eos, unk, a
    size = len(vocab)
    table = np.zeros((size, size))
    bos, eos, unk, a = (vocab.index[t] for t in ("<bos>", "<eos>", "<unk>", "a"))
    table[bos, [eos, unk, a]] = [0.3, 0.1, 0.6]
    table[a, [eos, unk, a]] = [0.5, 0.1, 0.4]
    table[unk, [eos, unk, a]] = [0.6, 0.2, 0.2]
    table[eos, [eos, unk, a]] = [1.0, 0.0, 0.0]
    return TabularScorer(vocab, np.where(table == 0, 1e-300, table))


def test_beam_search_matches_exhaustive_on_fixed_table():
    scorer = fixed_scorer()
    cfg = DecodeConfig(beam_size=2, max_len=3)
    results = beam_search(scorer, (), cfg)
    neg_lp, best = exhaustive_best(scorer, max_len=3)
    assert scorer.vocab.encode(results[0].tokens) == best
    assert results[0].logprob == pytest.approx(-neg_lp)


@pytest.mark.parametrize("seed", [42, 43, 44, 45, 46])
def test_beam_size_one_is_greedy(seed):
    rng = np.random.default_rng(seed)
    vocab = make_vocab("a", "b", "c")
    scorer = TabularScorer(vocab, random_table(vocab, rng))
    cfg = DecodeConfig(beam_size=1, max_len=5)
    result = beam_search(scorer, (), cfg)[0]

    # Independent classic greedy decode: argmax each step, stop on EOS.
    seq: list[int] = []
    for step in range(cfg.max_len):
        lp = scorer.next_logprobs(seq, ())
        order = np.argsort(-lp, kind="stable")
        nxt = next(int(t) for t in order
                   if t != vocab.bos_index and (step > 0 or t != vocab.eos_index))
        if nxt == vocab.eos_index:
            break
        seq.append(nxt)
    assert vocab.encode(result.tokens) == tuple(seq)
    assert result.logprob == pytest.approx(sequence_logprob(scorer, tuple(seq)))


def test_beam_search_deterministic():
    rng = np.random.default_rng(7)
    vocab = make_vocab("a", "b", "c")
    scorer = TabularScorer(vocab, random_table(vocab, rng))
    cfg = DecodeConfig(beam_size=3, max_len=6)
    r1 = beam_search(scorer, (), cfg)
    r2 = beam_search(scorer, (), cfg)
    assert r1 == r2


def test_cbs_empty_constraints_identical_to_plain(subtests=None):
    rng = np.random.default_rng(123)
    vocab = make_vocab("a", "b", "c")
    for trial in range(25):
        scorer = TabularScorer(vocab, random_table(vocab, rng))
        cfg = DecodeConfig(beam_size=4, max_len=5)
        plain = beam_search(scorer, (), cfg)
        fsm = build_fsm([], vocab)
        constrained = constrained_beam_search(scorer, (), fsm, cfg)
        assert [(r.tokens, r.logprob) for r in plain] == [
            (r.tokens, r.logprob) for r in constrained], f"trial {trial}"


def test_cbs_enforces_feasible_constraint():
    rng = np.random.default_rng(5)
    vocab = make_vocab("zebra", "field", "grass")
    scorer = TabularScorer(vocab, random_table(vocab, rng))
    fsm = build_fsm(["zebra"], vocab)
    results = constrained_beam_search(scorer, (), fsm, DecodeConfig(beam_size=4, max_len=5))
    assert "zebra" in results[0].tokens
    assert results[0].satisfied == 1


def test_cbs_matches_constrained_exhaustive_enumeration():
    rng = np.random.default_rng(99)
    vocab = make_vocab("a", "b", "c")
    cfg = DecodeConfig(beam_size=300, max_len=4)
    for trial in range(20):
        scorer = TabularScorer(vocab, random_table(vocab, rng))
        run = (vocab.index["b"],)
        fsm = build_fsm(["b"], vocab)
        got = constrained_beam_search(scorer, (), fsm, cfg)[0]
        neg_lp, best = exhaustive_best(scorer, 4, predicate=lambda s: contains_run(s, run))
        assert vocab.encode(got.tokens) == best, f"trial {trial}"
        assert got.logprob == pytest.approx(-neg_lp)


def test_plain_beam_logprob_at_least_cbs_logprob():
    rng = np.random.default_rng(17)
    vocab = make_vocab("a", "b")
    cfg = DecodeConfig(beam_size=300, max_len=4)
    for _ in range(10):
        scorer = TabularScorer(vocab, random_table(vocab, rng))
        plain = beam_search(scorer, (), cfg)[0]
        fsm = build_fsm(["b"], vocab)
        constrained = constrained_beam_search(scorer, (), fsm, cfg)[0]
        assert plain.logprob >= constrained.logprob - 1e-12


def test_cbs_fallback_when_constraint_infeasible():
    vocab = make_vocab("a", "b")
    size = len(vocab)
    # "b" has vanishing probability and the cap is too short to afford it.
    table = np.full((size, size), 1e-300)
    a, b, eos = vocab.index["a"], vocab.index["b"], vocab.eos_index
    table[:, a] = 0.6
    table[:, eos] = 0.4 - 2e-300
    table[:, vocab.bos_index] = 0.0
    table /= table.sum(axis=1, keepdims=True)
    scorer = TabularScorer(vocab, table)
    fsm = build_fsm(["b"], vocab)
    results = constrained_beam_search(scorer, (), fsm, DecodeConfig(beam_size=2, max_len=3))
    # The satisfied hypotheses exist (b is expandable) but score far below.
    top = results[0]
    assert top.satisfied == 1  # best result still satisfies: selection prefers it
    plain = beam_search(scorer, (), DecodeConfig(beam_size=2, max_len=3))[0]
    assert plain.logprob > top.logprob


def test_cbs_replay_consistency():
    rng = np.random.default_rng(31)
    vocab = make_vocab("a", "b", "c")
    scorer = TabularScorer(vocab, random_table(vocab, rng))
    fsm = build_fsm(["a", "b c"], vocab)
    results = constrained_beam_search(scorer, (), fsm,
                                      DecodeConfig(beam_size=4, max_len=5))
    for r in results:
        state = fsm.replay(vocab.encode(r.tokens))
        assert fsm.satisfied_count(state) == r.satisfied


def test_scorer_contract_violation_detected():
    vocab = make_vocab("a")

    class BrokenScorer:
        @property
        def vocab(self):
            return vocab

        def next_logprobs(self, prefix, context_tags=()):
            return np.zeros(len(vocab))  # sums to 4, not a distribution

    with pytest.raises(ScorerContractError):
        beam_search(BrokenScorer(), (), DecodeConfig(beam_size=2, max_len=3))


def test_checked_next_logprobs_accepts_valid():
    scorer = fixed_scorer()
    lp = checked_next_logprobs(scorer, (), ())
    assert lp.shape == (len(scorer.vocab),)


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(beam_size=0)
    with pytest.raises(ValueError):
        DecodeConfig(max_len=1)


def test_result_count_bounded_by_states_times_beam():
    rng = np.random.default_rng(77)
    vocab = make_vocab("a", "b", "c")
    scorer = TabularScorer(vocab, random_table(vocab, rng))
    for beam in (1, 2, 4):
        cfg = DecodeConfig(beam_size=beam, max_len=5)
        fsm = build_fsm(["a", "b"], vocab)
        results = constrained_beam_search(scorer, (), fsm, cfg)
        # Survivors come from per-state beams, each holding at most beam_size.
        assert 0 < len(results) <= beam
        assert len(results) <= fsm.num_states * beam
        plain = beam_search(scorer, (), cfg)
        assert 0 < len(plain) <= beam


def test_fsm_state_count_bound_for_single_token_constraints():
    vocab = make_vocab("a", "b", "c")
    fsm = build_fsm(["a", "b", "c"], vocab)
    for tokens in itertools.product(range(len(vocab)), repeat=3):
        fsm.replay(tokens)
    assert fsm.num_states <= 2 ** 3  # satisfied subsets only; no partial progress


def test_beam_hypothesis_record():
    from novelcap.decoding import BeamHypothesis
    hyp = BeamHypothesis(tokens=(3, 4), logprob=-1.5, fsm_state=0, finished=False)
    assert hyp.tokens == (3, 4) and not hyp.finished
