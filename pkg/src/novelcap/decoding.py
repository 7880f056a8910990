"""Beam search and finite-state constrained beam search over a pluggable scorer.

The scorer is anything that maps (caption prefix, image context tags) to a
log-distribution over the next token; the decoder never looks inside it.
Constrained search keeps one beam per state of a small automaton whose states
record which constraints have been satisfied plus partial progress through
multi-token constraints.  Partial-match bookkeeping uses KMP failure links,
so a hypothesis satisfies a constraint exactly when the constraint occurs as
a contiguous token run in it.

Everything here is deterministic: ties between equal-logprob hypotheses break
on token indices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import ScorerContractError

logger = logging.getLogger(__name__)

BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"


class Vocabulary:
    """Dense, stably-indexed token list with BOS/EOS/UNK specials."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        for special in (BOS, EOS, UNK):
            if special not in self.index:
                raise ValueError(f"vocabulary missing {special}")
        self.bos_index = self.index[BOS]
        self.eos_index = self.index[EOS]
        self.unk_index = self.index[UNK]

    @classmethod
    def from_corpus(cls, token_sequences: Iterable[Sequence[str]]) -> "Vocabulary":
        seen = set()
        for seq in token_sequences:
            seen.update(seq)
        seen -= {BOS, EOS, UNK}
        return cls([BOS, EOS, UNK] + sorted(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode_token(self, token: str) -> int:
        return self.index.get(token, self.unk_index)

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.encode_token(t) for t in tokens)

    def decode(self, indices: Sequence[int]) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in indices)


class Scorer(Protocol):
    """Next-token conditional probability provider.

    ``prefix`` holds the generated token indices so far (no BOS); the scorer
    is responsible for its own begin-of-sequence handling.  ``context_tags``
    carry the image conditioning as detected class names.  The returned
    vector must be a log-distribution over the full vocabulary
    (logsumexp == 0 within 1e-6).
    """

    @property
    def vocab(self) -> Vocabulary: ...

    def next_logprobs(self, prefix: Sequence[int],
                      context_tags: Sequence[str]) -> np.ndarray: ...


def checked_next_logprobs(scorer: Scorer, prefix: Sequence[int],
                          context_tags: Sequence[str]) -> np.ndarray:
    """Fetch next-token log-probabilities, enforcing the distribution contract."""
    lp = np.asarray(scorer.next_logprobs(prefix, context_tags), dtype=np.float64)
    if lp.shape != (len(scorer.vocab),):
        raise ScorerContractError(
            f"scorer returned shape {lp.shape}, expected ({len(scorer.vocab)},)")
    peak = float(np.max(lp))
    if not np.isfinite(peak):
        raise ScorerContractError("scorer returned no finite log-probability")
    lse = peak + float(np.log(np.sum(np.exp(lp - peak))))
    if abs(lse) > 1e-6:
        raise ScorerContractError(f"scorer output not normalized (logsumexp={lse:.3e})")
    return lp


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    max_len: int = 20
    min_satisfied: int | None = None  # None -> min(#constraints, 2)
    max_constraints: int = 3

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    logprob: float
    fsm_state: int
    finished: bool = False


@dataclass(frozen=True)
class ScoredCaption:
    tokens: tuple[str, ...]
    logprob: float
    satisfied: int = 0


def _kmp_failure(seq: tuple[int, ...]) -> tuple[int, ...]:
    fail = [0] * (len(seq) + 1)
    k = 0
    for i in range(1, len(seq)):
        while k and seq[i] != seq[k]:
            k = fail[k]
        if seq[i] == seq[k]:
            k += 1
        fail[i + 1] = k
    return tuple(fail)


class ConstraintFSM:
    """Automaton tracking which constraints a token stream has satisfied.

    A constraint is a set of alternative token sequences (e.g. singular and
    plural forms); matching any alternative as a contiguous run satisfies it.
    States are discovered lazily and transitions memoized.
    """

    def __init__(self, alternatives: list[list[tuple[int, ...]]], min_satisfied: int,
                 oov_constraints: tuple[int, ...] = ()):
        if min_satisfied < 0 or min_satisfied > len(alternatives):
            raise ValueError("min_satisfied out of range")
        self._alts = alternatives
        self._fails = [[_kmp_failure(seq) for seq in alts] for alts in alternatives]
        self.num_constraints = len(alternatives)
        self.min_satisfied = min_satisfied
        self.oov_constraints = oov_constraints
        # Tokens that can advance some pattern; all other tokens reset all progress.
        self.constraint_tokens = frozenset(
            tok for alts in alternatives for seq in alts for tok in seq)
        self._state_ids: dict[tuple, int] = {}
        self._state_keys: list[tuple] = []
        self._transitions: dict[tuple[int, int], int] = {}
        initial = (0, tuple(tuple(0 for _ in alts) for alts in alternatives))
        self.initial_state = self._intern(initial)

    def _intern(self, key: tuple) -> int:
        state_id = self._state_ids.get(key)
        if state_id is None:
            state_id = len(self._state_keys)
            self._state_ids[key] = state_id
            self._state_keys.append(key)
        return state_id

    @property
    def num_states(self) -> int:
        """States discovered so far."""
        return len(self._state_keys)

    def satisfied_count(self, state_id: int) -> int:
        mask = self._state_keys[state_id][0]
        return bin(mask).count("1")

    def is_accepting(self, state_id: int) -> bool:
        return self.satisfied_count(state_id) >= self.min_satisfied

    def step(self, state_id: int, token: int) -> int:
        memo_key = (state_id, token)
        cached = self._transitions.get(memo_key)
        if cached is not None:
            return cached
        mask, progress = self._state_keys[state_id]
        if token not in self.constraint_tokens:
            next_key = (mask, tuple(tuple(0 for _ in alts) for alts in self._alts))
        else:
            new_progress = []
            new_mask = mask
            for i, alts in enumerate(self._alts):
                if mask >> i & 1:
                    new_progress.append(tuple(0 for _ in alts))
                    continue
                row = []
                completed = False
                for a, seq in enumerate(alts):
                    p = progress[i][a]
                    fail = self._fails[i][a]
                    while True:
                        if p < len(seq) and token == seq[p]:
                            p += 1
                            break
                        if p == 0:
                            break
                        p = fail[p]
                    if p == len(seq):
                        completed = True
                        p = 0
                    row.append(p)
                if completed:
                    new_mask |= 1 << i
                    row = [0] * len(alts)
                new_progress.append(tuple(row))
            next_key = (new_mask, tuple(new_progress))
        next_id = self._intern(next_key)
        self._transitions[memo_key] = next_id
        return next_id

    def replay(self, tokens: Sequence[int]) -> int:
        """State reached by consuming ``tokens`` from the initial state."""
        state = self.initial_state
        for tok in tokens:
            state = self.step(state, tok)
        return state


ConstraintSpec = Sequence[str] | str


def build_fsm(
    constraint_labels: Sequence[ConstraintSpec],
    vocab: Vocabulary,
    min_satisfied: int | None = None,
) -> ConstraintFSM:
    """Build the constraint automaton from word-sequence labels.

    Each label is either one form ("tennis racket") or a list of alternative
    forms (["zebra", "zebras"]); forms are whitespace-split into token
    sequences.  Out-of-vocabulary words map to UNK and flag the constraint.
    """
    alternatives: list[list[tuple[int, ...]]] = []
    oov: list[int] = []
    for i, label in enumerate(constraint_labels):
        forms = [label] if isinstance(label, str) else list(label)
        if not forms:
            raise ValueError(f"constraint {i} has no forms")
        clean: list[tuple[int, ...]] = []
        mapped: list[tuple[int, ...]] = []
        for form in forms:
            words = form.split()
            if not words:
                raise ValueError(f"constraint {i} has an empty form")
            (mapped if any(w not in vocab for w in words) else clean).append(
                vocab.encode(words))
        if clean:
            # Out-of-vocabulary alternatives are dropped when an in-vocabulary
            # form can carry the constraint.
            alternatives.append(sorted(set(clean)))
        else:
            oov.append(i)
            logger.warning("constraint %r is out of vocabulary; mapped to %s",
                           forms, UNK)
            alternatives.append(sorted(set(mapped)))
    if min_satisfied is None:
        min_satisfied = min(len(alternatives), 2)
    return ConstraintFSM(alternatives, min_satisfied, tuple(oov))


def _search(scorer: Scorer, context_tags: Sequence[str], fsm: ConstraintFSM,
            cfg: DecodeConfig) -> list[tuple[float, tuple[int, ...], int]]:
    """Run the state-beam search; returns the surviving finished hypotheses.

    One beam per FSM state.  A hypothesis finishes by emitting EOS; finished
    hypotheses keep competing for beam slots at their final score (so
    beam_size=1 reduces to greedy decoding).  At the length cap the only
    move left is EOS.
    """
    vocab = scorer.vocab
    bos, eos = vocab.bos_index, vocab.eos_index
    skip = {bos, eos}
    constraint_tokens = sorted(fsm.constraint_tokens - skip)

    Hyp = tuple[float, tuple[int, ...], bool]  # (logprob, tokens, finished)
    beams: dict[int, list[Hyp]] = {fsm.initial_state: [(0.0, (), False)]}

    for step in range(cfg.max_len + 1):
        next_beams: dict[int, list[Hyp]] = {}
        progressed = False
        for state_id in sorted(beams):
            for logprob, tokens, finished in beams[state_id]:
                if finished:
                    next_beams.setdefault(state_id, []).append(
                        (logprob, tokens, True))
                    continue
                progressed = True
                lp = checked_next_logprobs(scorer, tokens, context_tags)
                if step >= 1:
                    next_beams.setdefault(state_id, []).append(
                        (logprob + float(lp[eos]), tokens, True))
                if step >= cfg.max_len:
                    continue
                # Only the per-hypothesis top beam_size generic tokens can
                # survive the per-state cut; constraint tokens may switch
                # states, so they are always expanded.
                order = np.argsort(-lp, kind="stable")
                expand: list[int] = []
                for tok in order:
                    tok = int(tok)
                    if tok in skip or tok in fsm.constraint_tokens:
                        continue
                    expand.append(tok)
                    if len(expand) >= cfg.beam_size:
                        break
                expand.extend(constraint_tokens)
                for tok in expand:
                    next_state = fsm.step(state_id, tok)
                    next_beams.setdefault(next_state, []).append(
                        (logprob + float(lp[tok]), tokens + (tok,), False))
        if not progressed:
            break
        for state_id, hyps in next_beams.items():
            hyps.sort(key=lambda h: (-h[0], h[1], h[2]))
            del hyps[cfg.beam_size:]
        beams = next_beams

    return [(logprob, tokens, fsm.satisfied_count(state_id))
            for state_id in sorted(beams)
            for logprob, tokens, finished in beams[state_id]
            if finished]


def beam_search(scorer: Scorer, context_tags: Sequence[str] = (),
                cfg: DecodeConfig = DecodeConfig()) -> list[ScoredCaption]:
    """Plain length-capped beam search from BOS; best caption first."""
    fsm = build_fsm([], scorer.vocab, min_satisfied=0)
    finished = _search(scorer, context_tags, fsm, cfg)
    finished.sort(key=lambda h: (-h[0], h[1]))
    vocab = scorer.vocab
    return [ScoredCaption(tokens=vocab.decode(toks), logprob=lp, satisfied=0)
            for lp, toks, _ in finished[:cfg.beam_size]]


def constrained_beam_search(scorer: Scorer, context_tags: Sequence[str],
                            fsm: ConstraintFSM,
                            cfg: DecodeConfig = DecodeConfig()) -> list[ScoredCaption]:
    """Beam search over the constraint automaton, one beam per state.

    The best caption among those with the maximal satisfied-constraint count
    (at least ``fsm.min_satisfied``) comes first; when nothing reaches the
    threshold within the length cap the unconstrained best is returned and
    its ``satisfied`` field exposes the shortfall.
    """
    finished = _search(scorer, context_tags, fsm, cfg)
    meeting = [h for h in finished if h[2] >= fsm.min_satisfied]
    rest = [h for h in finished if h[2] < fsm.min_satisfied]
    meeting.sort(key=lambda h: (-h[2], -h[0], h[1]))
    rest.sort(key=lambda h: (-h[0], h[1]))
    if not meeting and rest:
        logger.warning("no hypothesis satisfied %d constraint(s); falling back",
                       fsm.min_satisfied)
    vocab = scorer.vocab
    return [ScoredCaption(tokens=vocab.decode(toks), logprob=lp, satisfied=sat)
            for lp, toks, sat in (meeting + rest)[:cfg.beam_size]]
