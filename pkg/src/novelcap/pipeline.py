"""Three-step training orchestration with offline pseudo-labeling.

Step 1 trains the scorer on fully paired captions only.  Step 2 retrains on
fully paired plus reviewed synthetic captions, putting the novel words into
the vocabulary.  Step 3 repeats for a fixed number of rounds: decode
pseudo-label captions for the partially paired images (plain beam search
and/or constrained beam search over their detection labels), retrain on the
whole corpus, and evaluate on validation.  Pseudo-labels are regenerated
from scratch each round, never accumulated.

Iterations / learning rates / batch size are carried as checkpoint metadata:
the n-gram scorer trains in closed form, and external trainer adapters can
honor the schedules instead.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .dataset import CaptionOrigin, CaptionRecord, DatasetSplit, training_captions
from .decoding import DecodeConfig, ScoredCaption, beam_search, build_fsm, constrained_beam_search
from .errors import NovelcapError
from .lexicon import ObjectClass, ObjectLexicon
from .metrics import EvalReport, evaluate
from .ngram import NGramScorer
from .synth import SyntheticPairRecord, Verdict

logger = logging.getLogger(__name__)

MODE_BS_AND_CBS = "bs_and_cbs"
MODE_CBS_ONLY = "cbs_only"


@dataclass(frozen=True)
class TrainingSchedule:
    """Iteration/LR metadata for one training stage."""

    name: str
    iterations_per_round: int
    initial_lr: float
    lr_scale_per_round: float = 1.0
    batch_size: int = 100

    def __post_init__(self):
        if self.iterations_per_round <= 0:
            raise ValueError("iterations_per_round must be positive")
        if not 0.0 < self.lr_scale_per_round <= 1.0:
            raise ValueError("lr_scale_per_round must be in (0, 1]")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "iterations_per_round": self.iterations_per_round,
            "initial_lr": self.initial_lr,
            "lr_scale_per_round": self.lr_scale_per_round,
            "batch_size": self.batch_size,
        }


STEP1_SCHEDULE = TrainingSchedule("step1", 40000, 0.01)
STEP2_SCHEDULE = TrainingSchedule("step2", 15000, 0.005)
SCH1 = TrainingSchedule("Sch1", 15000, 0.0025, 0.5)
SCH2 = TrainingSchedule("Sch2", 6000, 0.0025, 0.8)

SCHEDULES = {s.name: s for s in (SCH1, SCH2)}


@dataclass(frozen=True)
class ScorerConfig:
    order: int = 3
    smoothing_k: float = 0.1
    tag_mixture_weight: float = 0.3
    mention_floor_rate: float = 0.05


@dataclass
class Checkpoint:
    """Immutable scorer snapshot plus the schedule metadata that produced it."""

    scorer: NGramScorer
    step: str
    schedule: TrainingSchedule
    learning_rate: float
    corpus_size: int
    round_index: int | None = None

    def manifest(self) -> dict:
        return {
            "step": self.step,
            "round_index": self.round_index,
            "learning_rate": self.learning_rate,
            "schedule": self.schedule.to_json(),
            "corpus_size": self.corpus_size,
        }

    def save(self, path: str | Path) -> None:
        payload = self.manifest()
        payload["model"] = self.scorer.to_json()
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        return cls(
            scorer=NGramScorer.from_json(payload["model"]),
            step=payload["step"],
            schedule=TrainingSchedule(**payload["schedule"]),
            learning_rate=payload["learning_rate"],
            corpus_size=payload["corpus_size"],
            round_index=payload["round_index"],
        )


def _mention_word_map(lexicon: ObjectLexicon) -> dict[str, tuple[str, ...]]:
    return {cls.name: cls.mention_words for cls in lexicon.classes()}


def _train(captions: Sequence[CaptionRecord], scorer_config: ScorerConfig,
           image_tags: Mapping[int, Sequence[str]] | None,
           lexicon: ObjectLexicon | None) -> NGramScorer:
    return NGramScorer.train(
        captions,
        order=scorer_config.order,
        smoothing_k=scorer_config.smoothing_k,
        tag_mixture_weight=scorer_config.tag_mixture_weight,
        image_tags=image_tags,
        mention_words=_mention_word_map(lexicon) if lexicon is not None else None,
        mention_floor_rate=scorer_config.mention_floor_rate,
    )


def train_baseline(
    fully_paired_captions: Sequence[CaptionRecord],
    schedule: TrainingSchedule = STEP1_SCHEDULE,
    scorer_config: ScorerConfig = ScorerConfig(),
    image_tags: Mapping[int, Sequence[str]] | None = None,
    lexicon: ObjectLexicon | None = None,
) -> Checkpoint:
    """Step 1: fit the scorer on fully paired captions alone."""
    if not fully_paired_captions:
        raise NovelcapError("cannot train a baseline on an empty corpus")
    scorer = _train(fully_paired_captions, scorer_config, image_tags, lexicon)
    return Checkpoint(scorer=scorer, step="step1", schedule=schedule,
                      learning_rate=schedule.initial_lr,
                      corpus_size=len(fully_paired_captions))


def usable_synthetic(records: Sequence[SyntheticPairRecord]) -> list[SyntheticPairRecord]:
    """Synthetic records that survive review (anything not rejected)."""
    return [r for r in records if r.verdict is not Verdict.REJECTED]


def warmup_with_synth(
    checkpoint: Checkpoint,
    synthetic_records: Sequence[SyntheticPairRecord],
    fully_paired_captions: Sequence[CaptionRecord],
    schedule: TrainingSchedule = STEP2_SCHEDULE,
    scorer_config: ScorerConfig = ScorerConfig(),
    image_tags: Mapping[int, Sequence[str]] | None = None,
    lexicon: ObjectLexicon | None = None,
) -> Checkpoint:
    """Step 2: retrain on fully paired plus surviving synthetic captions.

    With nothing usable the step is an identity (warning logged).  Synthetic
    images implicitly carry their novel class as a detection tag, feeding the
    tag unigram prior.
    """
    usable = usable_synthetic(synthetic_records)
    if not usable:
        logger.warning("no usable synthetic captions; warm-up is a no-op")
        return checkpoint
    tags = {k: tuple(v) for k, v in (image_tags or {}).items()}
    for rec in usable:
        tags[rec.caption.image_id] = tuple(
            sorted(set(tags.get(rec.caption.image_id, ())) | {rec.novel_class_name}))
    corpus = list(fully_paired_captions) + [r.caption for r in usable]
    scorer = _train(corpus, scorer_config, tags, lexicon)
    return Checkpoint(scorer=scorer, step="step2", schedule=schedule,
                      learning_rate=schedule.initial_lr, corpus_size=len(corpus))


def _caption_id_for(image_id: int, origin: CaptionOrigin) -> int:
    digest = hashlib.sha256(f"{origin.value}:{image_id}".encode()).hexdigest()
    return int(digest[:12], 16)


def _best_or_none(results: Sequence[ScoredCaption]) -> ScoredCaption | None:
    return results[0] if results else None


def constraint_forms(cls: ObjectClass | None, name: str,
                     expand_plurals: bool) -> list[str]:
    if cls is not None and expand_plurals:
        return list(cls.mention_words)
    return [cls.name if cls is not None else name]


def generate_pseudo_labels(
    checkpoint: Checkpoint,
    image_ids: Sequence[int],
    detection_labels: Mapping[int, Sequence[tuple[str, float]]],
    lexicon: ObjectLexicon,
    mode: str = MODE_BS_AND_CBS,
    decode_config: DecodeConfig = DecodeConfig(),
    expand_plural_constraints: bool = True,
) -> list[CaptionRecord]:
    """Decode pseudo-label captions for partially paired images.

    ``bs_and_cbs`` yields two captions per image (plain beam search plus CBS
    over the top detection labels); ``cbs_only`` yields one.  Images without
    detection labels cannot run CBS and are skipped for it with a warning.
    """
    if mode not in (MODE_BS_AND_CBS, MODE_CBS_ONLY):
        raise ValueError(f"unknown pseudo-label mode {mode!r}")
    scorer = checkpoint.scorer
    records: list[CaptionRecord] = []
    for image_id in sorted(image_ids):
        labels = list(detection_labels.get(image_id, ()))
        tags = [name for name, _ in labels]
        if mode == MODE_BS_AND_CBS:
            best = _best_or_none(beam_search(scorer, tags, decode_config))
            if best is not None:
                records.append(CaptionRecord(
                    caption_id=_caption_id_for(image_id, CaptionOrigin.PSEUDO_BS),
                    image_id=image_id, tokens=best.tokens,
                    origin=CaptionOrigin.PSEUDO_BS))
        if not labels:
            logger.warning("image %d has no detection labels; skipping CBS pseudo-label",
                           image_id)
            continue
        specs = [constraint_forms(lexicon.get(name), name, expand_plural_constraints)
                 for name, _ in labels[:decode_config.max_constraints]]
        fsm = build_fsm(specs, scorer.vocab, decode_config.min_satisfied)
        best = _best_or_none(constrained_beam_search(scorer, tags, fsm, decode_config))
        if best is not None:
            if best.satisfied < fsm.min_satisfied:
                logger.warning("image %d: CBS satisfied %d/%d constraints",
                               image_id, best.satisfied, fsm.min_satisfied)
            records.append(CaptionRecord(
                caption_id=_caption_id_for(image_id, CaptionOrigin.PSEUDO_CBS),
                image_id=image_id, tokens=best.tokens,
                origin=CaptionOrigin.PSEUDO_CBS))
    return records


def decode_predictions(
    checkpoint: Checkpoint,
    image_ids: Sequence[int],
    detection_labels: Mapping[int, Sequence[tuple[str, float]]],
    decode_config: DecodeConfig = DecodeConfig(),
) -> dict[int, tuple[str, ...]]:
    """Plain beam-search captions (no CBS at inference) for an image set."""
    predictions: dict[int, tuple[str, ...]] = {}
    for image_id in sorted(image_ids):
        tags = [name for name, _ in detection_labels.get(image_id, ())]
        best = _best_or_none(beam_search(checkpoint.scorer, tags, decode_config))
        predictions[image_id] = best.tokens if best is not None else ()
    return predictions


@dataclass
class PipelineConfig:
    rounds: int = 4
    pseudo_label_mode: str = MODE_BS_AND_CBS
    schedule: TrainingSchedule = SCH1
    seed: int = 0
    decode: DecodeConfig = DecodeConfig()
    scorer: ScorerConfig = ScorerConfig()
    expand_plural_constraints: bool = True
    cider_macro: bool = True
    betas: tuple[float, ...] = (1.0, 1.5)

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass
class RoundState:
    round_index: int
    learning_rate: float
    corpus_size: int
    num_pseudo_labels: int
    checkpoint: Checkpoint
    report: EvalReport | None


@dataclass
class PipelineResult:
    baseline: Checkpoint
    baseline_report: EvalReport | None
    warmup: Checkpoint
    warmup_report: EvalReport | None
    rounds: list[RoundState]

    @property
    def final_checkpoint(self) -> Checkpoint:
        return self.rounds[-1].checkpoint if self.rounds else self.warmup


def run_pipeline(
    config: PipelineConfig,
    split: DatasetSplit,
    captions: Sequence[CaptionRecord],
    synthetic_records: Sequence[SyntheticPairRecord],
    detection_labels: Mapping[int, Sequence[tuple[str, float]]],
    novel_classes: Sequence[ObjectClass],
    lexicon: ObjectLexicon,
    val_references: Mapping[int, Sequence[Sequence[str]]] | None = None,
    artifacts_dir: str | Path | None = None,
    progress: Callable[[str], None] | None = None,
) -> PipelineResult:
    """Run Step 1 -> Step 2 -> N rounds of Step 3, evaluating each stage on val.

    Per-round artifacts (checkpoint, pseudo-label JSONL, eval report) land in
    ``artifacts_dir`` when given.  The run is deterministic end to end.
    """
    def note(msg: str) -> None:
        logger.info(msg)
        if progress is not None:
            progress(msg)

    artifacts = Path(artifacts_dir) if artifacts_dir is not None else None
    if artifacts is not None:
        artifacts.mkdir(parents=True, exist_ok=True)

    def report_for(checkpoint: Checkpoint) -> EvalReport | None:
        if not val_references or not split.val:
            return None
        preds = decode_predictions(checkpoint, sorted(split.val), detection_labels,
                                   config.decode)
        flags = {i: split.out_of_domain_flags.get(i, False) for i in split.val}
        return evaluate(preds, val_references, flags, novel_classes,
                        betas=config.betas, cider_macro=config.cider_macro)

    def save_stage(checkpoint: Checkpoint, report: EvalReport | None, stem: str) -> None:
        if artifacts is None:
            return
        checkpoint.save(artifacts / f"{stem}_checkpoint.json")
        if report is not None:
            with open(artifacts / f"{stem}_eval.json", "w", encoding="utf-8") as f:
                json.dump(report.to_json(), f, indent=2, sort_keys=True)
                f.write("\n")

    detection_tags = {i: tuple(name for name, _ in labels)
                      for i, labels in detection_labels.items()}

    fully = training_captions(split, captions)
    note(f"step 1: training baseline on {len(fully)} fully paired captions")
    baseline = train_baseline(fully, STEP1_SCHEDULE, config.scorer,
                              image_tags=detection_tags, lexicon=lexicon)
    baseline_report = report_for(baseline)
    save_stage(baseline, baseline_report, "step1")

    note(f"step 2: warm-up with {len(usable_synthetic(synthetic_records))} synthetic captions")
    warmup = warmup_with_synth(baseline, synthetic_records, fully,
                               STEP2_SCHEDULE, config.scorer,
                               image_tags=detection_tags, lexicon=lexicon)
    warmup_report = report_for(warmup)
    save_stage(warmup, warmup_report, "step2")

    partial_ids = sorted(split.partially_paired)
    synth_usable = usable_synthetic(synthetic_records)
    synth_tags = {r.caption.image_id: (r.novel_class_name,) for r in synth_usable}

    current = warmup
    rounds: list[RoundState] = []
    for round_index in range(config.rounds):
        lr = config.schedule.initial_lr * config.schedule.lr_scale_per_round ** round_index
        if not partial_ids:
            note(f"round {round_index}: no partially paired images; keeping current model")
            rounds.append(RoundState(round_index, lr, current.corpus_size, 0,
                                     current, report_for(current)))
            continue
        note(f"round {round_index}: generating pseudo-labels (mode={config.pseudo_label_mode})")
        pseudo = generate_pseudo_labels(
            current, partial_ids, detection_labels, lexicon,
            mode=config.pseudo_label_mode, decode_config=config.decode,
            expand_plural_constraints=config.expand_plural_constraints)
        corpus = fully + [r.caption for r in synth_usable] + pseudo
        image_tags = dict(detection_tags)
        image_tags.update(synth_tags)
        scorer = _train(corpus, config.scorer, image_tags, lexicon)
        current = Checkpoint(scorer=scorer, step="step3", schedule=config.schedule,
                             learning_rate=lr, corpus_size=len(corpus),
                             round_index=round_index)
        report = report_for(current)
        rounds.append(RoundState(round_index, lr, len(corpus), len(pseudo),
                                 current, report))
        if artifacts is not None:
            current.save(artifacts / f"round{round_index}_checkpoint.json")
            with open(artifacts / f"round{round_index}_pseudo_labels.jsonl", "w",
                      encoding="utf-8") as f:
                for rec in pseudo:
                    f.write(json.dumps({
                        "caption_id": rec.caption_id,
                        "image_id": rec.image_id,
                        "tokens": list(rec.tokens),
                        "origin": rec.origin.value,
                    }, sort_keys=True) + "\n")
            if report is not None:
                with open(artifacts / f"round{round_index}_eval.json", "w",
                          encoding="utf-8") as f:
                    json.dump(report.to_json(), f, indent=2, sort_keys=True)
                    f.write("\n")
    return PipelineResult(
        baseline=baseline, baseline_report=baseline_report,
        warmup=warmup, warmup_report=warmup_report, rounds=rounds)
