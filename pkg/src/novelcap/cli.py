"""Command-line entry point: the pipeline as subcommands.

Configuration resolves in priority order: explicit flag > NOVELCAP_* env var >
config file > built-in default.  All defaults follow the published
hyperparameters (2400 synthetic images per novel class across 3 candidates,
1000 px^2 minimum box area, 200% area and 30% aspect-ratio tolerances,
aspect ratios in [0.05, 5], rewrite radii 2/1, 4 pseudo-label rounds,
batch size 100).

Exit codes: 0 success, 1 runtime error, 2 usage error.  Outputs are written
atomically (temp file + rename) so failures leave no partial files behind.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import candidates as cand_mod
from . import dataset, metrics, pipeline, rewrite, synth
from .decoding import DecodeConfig, build_fsm, beam_search, constrained_beam_search
from .errors import NovelcapError
from .lexicon import ObjectLexicon, RewriteLexicons, default_novel_lexicon
from .pipeline import Checkpoint, PipelineConfig, SCHEDULES, ScorerConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "NOVELCAP_"


@dataclass(frozen=True)
class HyperParams:
    """Pipeline defaults; every value matches the published configuration."""

    max_images_per_class: int = 2400          # K
    candidates_per_class: int = 3             # m
    min_box_area: float = 1000.0              # px^2
    max_area_diff_pct: float = 200.0
    min_aspect: float = 0.05
    max_aspect: float = 5.0
    max_aspect_diff_pct: float = 30.0
    adjective_radius: int = 2
    noun_radius: int = 1
    rounds: int = 4                           # N
    batch_size: int = 100


DEFAULTS = HyperParams()


def resolve(key: str, flag_value, config: dict, default, cast=None):
    """flag > env > config file > default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(ENV_PREFIX + key.upper())
    if env is not None:
        return cast(env) if cast else env
    if key in config:
        return config[key]
    return default


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _load_lexicon(path: str | None) -> ObjectLexicon:
    return ObjectLexicon.from_json(path) if path else default_novel_lexicon()


def _load_rewrite_lexicons(directory: str | None) -> RewriteLexicons:
    if not directory:
        return RewriteLexicons.load_default()
    base = Path(directory)
    irregular = base / "irregular_plurals.txt"
    return RewriteLexicons.from_files(
        base / "colors.txt", base / "adjectives.txt", base / "nouns.txt",
        irregular if irregular.exists() else None)


def _novel_classes(names: str | None, lexicon: ObjectLexicon):
    if not names:
        return [c for c in lexicon.classes() if c.id > 0] or lexicon.classes()
    classes = []
    for name in names.split(","):
        cls = lexicon.get(name.strip())
        if cls is None:
            raise NovelcapError(f"unknown novel class {name.strip()!r}")
        classes.append(cls)
    return classes


@contextlib.contextmanager
def atomic_output(path: str | Path):
    """Yield a temp path; move it into place only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _write_jsonl(rows, path: str | Path) -> None:
    with atomic_output(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_split(args) -> int:
    cfg = _load_config(args.config)
    lexicon = _load_lexicon(args.lexicon)
    novel = _novel_classes(args.novel, lexicon)
    images, captions = dataset.load_coco(args.annotations, args.captions, lexicon)
    split = dataset.build_heldout_split(images, captions, novel)
    references = {}
    for role, ann_path, cap_path in (("val", args.val_annotations, args.val_captions),
                                     ("test", args.test_annotations, args.test_captions)):
        if not ann_path:
            continue
        eval_images, eval_caps = dataset.load_coco(ann_path, cap_path, lexicon)
        ids = {img.image_id for img in eval_images}
        getattr(split, role).update(ids)
        references.update(dataset.captions_by_image(eval_caps))
    if split.val or split.test:
        dataset.partition_in_out_domain(split, references, novel)
    out = resolve("out", args.out, cfg, "split_manifest.jsonl")
    with atomic_output(out) as tmp:
        dataset.write_split_manifest(split, tmp)
    print(f"fully paired: {len(split.fully_paired)}  "
          f"partially paired: {len(split.partially_paired)}  "
          f"val: {len(split.val)}  test: {len(split.test)}", file=sys.stderr)
    return 0


def cmd_candidates(args) -> int:
    lexicon = _load_lexicon(args.lexicon)
    novel = _novel_classes(args.novel, lexicon)
    novel_names = {c.name for c in novel}
    if args.static:
        mapping = cand_mod.read_candidate_mapping(args.static, lexicon,
                                                  register_missing=True)
        payload = {k: [c.name for c in v] for k, v in mapping.items()}
        with atomic_output(args.out) as tmp:
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
                f.write("\n")
        return 0
    # Loading registers every category (and its bbox availability) in the lexicon.
    dataset.load_coco(args.annotations, args.captions, lexicon)
    in_domain = [c for c in lexicon.classes() if c.name not in novel_names and c.id > 0]
    grouped: dict[str, list[list[str]]] = {}
    for row in _read_jsonl(args.generated):
        grouped.setdefault(row["novel_class"], []).append(row["tokens"])
    rankings = []
    for cls in novel:
        caps = grouped.get(cls.name, [])
        rankings.append(cand_mod.rank_candidates(cls, caps, in_domain, m=args.m,
                                                 bbox_filter=not args.no_bbox_filter))
    with atomic_output(args.out) as tmp:
        cand_mod.write_candidate_mapping(rankings, tmp)
    return 0


def _constraints_from_args(args) -> synth.PairConstraints:
    return synth.PairConstraints(
        min_area=args.min_area,
        max_area_diff_pct=args.max_area_diff_pct,
        min_aspect=args.min_aspect,
        max_aspect=args.max_aspect,
        max_aspect_diff_pct=args.max_aspect_diff_pct,
    )


def _map_fn(jobs: int):
    if jobs <= 1:
        return map
    from concurrent.futures import ThreadPoolExecutor

    def run(fn, items):
        items = list(items)
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return run


def cmd_synth(args) -> int:
    lexicon = _load_lexicon(args.lexicon)
    novel = _novel_classes(args.novel, lexicon)
    images, captions = dataset.load_coco(args.annotations, args.captions, lexicon,
                                         images_root=args.images_root)
    split = dataset.build_heldout_split(images, captions, novel)
    mapping = cand_mod.read_candidate_mapping(args.candidates, lexicon)
    constraints = _constraints_from_args(args)
    rewrite_lex = _load_rewrite_lexicons(args.rewrite_lexicon_dir)
    rewrite_cfg = rewrite.RewriteConfig(adjective_radius=args.adjective_radius,
                                        noun_radius=args.noun_radius)
    images_by_id = {img.image_id: img for img in images}
    caps_by_image = dataset.captions_by_image(captions)

    out_dir = Path(args.out)
    all_records = []
    written: list[Path] = []
    try:
        for cls in novel:
            cand_classes = mapping.get(cls.name, [])
            if not cand_classes:
                logger.warning("no candidate classes for %r; skipping", cls.name)
                continue
            pairs = []
            for cand in cand_classes:
                pairs.extend(synth.enumerate_replacement_pairs(
                    images, split, cls, cand, constraints))
            plan = synth.plan_generation(pairs, args.max_images, len(cand_classes),
                                         seed=args.seed)
            if args.dry_run:
                print(json.dumps(plan.to_json(), indent=2, sort_keys=True))
                continue

            def rewrite_fn(tokens, cand_cls, novel_cls):
                return rewrite.rewrite_caption(tokens, cand_cls, novel_cls,
                                               rewrite_lex, rewrite_cfg)

            records = synth.generate_batch(
                plan, images_by_id, caps_by_image, cls,
                {c.name: c for c in cand_classes}, rewrite_fn, out_dir,
                map_fn=_map_fn(args.jobs))
            written.extend(Path(r.image_path) for r in records)
            all_records.extend(records)
        if not args.dry_run:
            with atomic_output(out_dir / "manifest.jsonl") as tmp:
                synth.write_manifest(all_records, tmp)
            print(f"wrote {len(all_records)} synthetic pairs to {out_dir}",
                  file=sys.stderr)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return 0


def cmd_rewrite(args) -> int:
    lexicon = _load_lexicon(args.lexicon)
    rewrite_lex = _load_rewrite_lexicons(args.rewrite_lexicon_dir)
    cfg = rewrite.RewriteConfig(adjective_radius=args.adjective_radius,
                                noun_radius=args.noun_radius)
    candidate = lexicon.ensure(args.candidate)
    novel = lexicon.ensure(args.novel_class)
    if args.caption:
        tokens = dataset.tokenize(args.caption)
        print(" ".join(rewrite.rewrite_caption(tokens, candidate, novel,
                                               rewrite_lex, cfg)))
        return 0
    rows_out = []
    for row in _read_jsonl(args.infile):
        tokens = row.get("tokens") or dataset.tokenize(row["caption"])
        rows_out.append({
            "tokens": rewrite.rewrite_caption(tokens, candidate, novel,
                                              rewrite_lex, cfg),
        })
    _write_jsonl(rows_out, args.out)
    return 0


def cmd_decode(args) -> int:
    checkpoint = Checkpoint.load(args.model)
    lexicon = _load_lexicon(args.lexicon)
    labels = dataset.load_detection_labels(args.labels, lexicon)
    cfg = DecodeConfig(beam_size=args.beam_size, max_len=args.max_len,
                       max_constraints=args.max_constraints)
    rows = []
    for image_id in sorted(labels):
        tags = [name for name, _ in labels[image_id]]
        if args.method == "bs":
            results = beam_search(checkpoint.scorer, tags, cfg)
            satisfied = 0
        else:
            specs = [pipeline.constraint_forms(lexicon.get(n), n, True)
                     for n, _ in labels[image_id][:cfg.max_constraints]]
            fsm = build_fsm(specs, checkpoint.scorer.vocab)
            results = constrained_beam_search(checkpoint.scorer, tags, fsm, cfg)
            satisfied = results[0].satisfied if results else 0
        if not results:
            logger.warning("no caption decoded for image %d", image_id)
            continue
        rows.append({
            "image_id": image_id,
            "tokens": list(results[0].tokens),
            "logprob": results[0].logprob,
            "method": args.method,
            "satisfied": satisfied,
        })
    _write_jsonl(rows, args.out)
    return 0


def cmd_pseudolabel(args) -> int:
    cfg = _load_config(args.config)

    def need(key: str, flag=None, cast=None):
        value = resolve(key, flag, cfg, None, cast)
        if value is None:
            raise NovelcapError(f"missing required config key {key!r}")
        return value

    lexicon = _load_lexicon(resolve("lexicon", args.lexicon, cfg, None))
    novel = _novel_classes(resolve("novel", args.novel, cfg, None), lexicon)
    images, captions = dataset.load_coco(need("annotations"), need("captions"), lexicon)
    split = dataset.build_heldout_split(images, captions, novel)
    references = {}
    val_ann = resolve("val_annotations", args.val_annotations, cfg, None)
    if val_ann:
        val_images, val_caps = dataset.load_coco(
            val_ann, need("val_captions", args.val_captions), lexicon)
        split.val.update(img.image_id for img in val_images)
        references = {
            image_id: [c.tokens for c in caps]
            for image_id, caps in dataset.captions_by_image(val_caps).items()
        }
        dataset.partition_in_out_domain(
            split, dataset.captions_by_image(val_caps), novel)
    detection = dataset.load_detection_labels(need("detection_labels"), lexicon)
    synth_records = synth.read_manifest(need("synth_manifest"))
    verdict_log = resolve("verdict_log", args.verdict_log, cfg, None)
    if verdict_log and Path(verdict_log).exists():
        from .review import apply_verdicts
        synth_records = apply_verdicts(synth_records, verdict_log)

    schedule_name = resolve("schedule", args.schedule, cfg, "Sch1")
    if schedule_name not in SCHEDULES:
        raise NovelcapError(f"unknown schedule {schedule_name!r}")
    pipe_cfg = PipelineConfig(
        rounds=resolve("rounds", args.rounds, cfg, DEFAULTS.rounds, int),
        pseudo_label_mode=resolve("mode", args.mode, cfg, pipeline.MODE_BS_AND_CBS),
        schedule=SCHEDULES[schedule_name],
        seed=resolve("seed", args.seed, cfg, 0, int),
        decode=DecodeConfig(
            beam_size=resolve("beam_size", args.beam_size, cfg, 5, int),
            max_len=resolve("max_len", args.max_len, cfg, 20, int),
            max_constraints=resolve("max_constraints", args.max_constraints, cfg, 3, int),
        ),
        scorer=ScorerConfig(
            order=resolve("order", args.order, cfg, 3, int),
            smoothing_k=resolve("smoothing_k", args.smoothing_k, cfg, 0.1, float),
            tag_mixture_weight=resolve("tag_mixture_weight", args.tag_mixture_weight,
                                       cfg, 0.3, float),
        ),
    )
    out_dir = Path(resolve("out_dir", args.out, cfg, "pipeline_artifacts"))
    result = pipeline.run_pipeline(
        pipe_cfg, split, captions, synth_records, detection, novel, lexicon,
        val_references=references or None, artifacts_dir=out_dir,
        progress=lambda msg: print(msg, file=sys.stderr))
    result.final_checkpoint.save(out_dir / "final_checkpoint.json")
    summary = {
        "rounds": [
            {"round_index": r.round_index, "learning_rate": r.learning_rate,
             "corpus_size": r.corpus_size, "num_pseudo_labels": r.num_pseudo_labels}
            for r in result.rounds
        ],
    }
    with atomic_output(out_dir / "summary.json") as tmp:
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def cmd_eval(args) -> int:
    lexicon = _load_lexicon(args.lexicon)
    novel = _novel_classes(args.novel, lexicon)
    predictions = {row["image_id"]: tuple(row["tokens"])
                   for row in _read_jsonl(args.pred)}
    references = {row["image_id"]: [tuple(r) for r in row["refs"]]
                  for row in _read_jsonl(args.refs)}
    if args.split:
        manifest = dataset.read_split_manifest(args.split)
        flags = {i: manifest.out_of_domain_flags.get(i, False)
                 for i in sorted(references) if i in (manifest.val | manifest.test)}
        if not flags:
            flags = {i: manifest.out_of_domain_flags.get(i, False)
                     for i in sorted(references)}
    else:
        flags = {
            image_id: any(dataset.caption_mentions(tuple(r), cls)
                          for r in refs for cls in novel)
            for image_id, refs in sorted(references.items())
        }
    betas = tuple(float(b) for b in args.betas.split(","))
    extras = _load_config(args.extras) if args.extras else None
    report = metrics.evaluate(predictions, references, flags, novel,
                              betas=betas, cider_macro=not args.cider_corpus,
                              extras=extras)
    if args.out:
        with atomic_output(args.out) as tmp:
            metrics.write_report(report, tmp)
    print(report.to_table())
    return 0


def cmd_review_serve(args) -> int:
    import uvicorn

    from .review import create_app
    app = create_app(args.manifest, args.verdict_log, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# -- parser ------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--lexicon", help="object lexicon JSON (defaults to shipped 8 classes)")
    p.add_argument("--novel", help="comma-separated novel class names")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="novelcap",
        description="Novel-object captioning pipeline: synthetic pairs, "
                    "pseudo-label training, metrics, and review.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="build the held-out training split")
    _add_common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--val-annotations")
    p.add_argument("--val-captions")
    p.add_argument("--test-annotations")
    p.add_argument("--test-captions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("candidates", help="rank candidate classes for replacement")
    _add_common(p)
    p.add_argument("--annotations")
    p.add_argument("--captions")
    p.add_argument("--generated", help="JSONL {novel_class, tokens} from a baseline model")
    p.add_argument("--static", help="echo an existing candidate mapping instead of counting")
    p.add_argument("--m", type=int, default=DEFAULTS.candidates_per_class)
    p.add_argument("--no-bbox-filter", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("synth", help="generate synthetic image-caption pairs")
    _add_common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--images-root")
    p.add_argument("--candidates", required=True, help="candidate mapping JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-images", type=int, default=DEFAULTS.max_images_per_class)
    p.add_argument("--min-area", type=float, default=DEFAULTS.min_box_area)
    p.add_argument("--max-area-diff-pct", type=float, default=DEFAULTS.max_area_diff_pct)
    p.add_argument("--min-aspect", type=float, default=DEFAULTS.min_aspect)
    p.add_argument("--max-aspect", type=float, default=DEFAULTS.max_aspect)
    p.add_argument("--max-aspect-diff-pct", type=float,
                   default=DEFAULTS.max_aspect_diff_pct)
    p.add_argument("--adjective-radius", type=int, default=DEFAULTS.adjective_radius)
    p.add_argument("--noun-radius", type=int, default=DEFAULTS.noun_radius)
    p.add_argument("--rewrite-lexicon-dir",
                   help="directory with colors.txt / adjectives.txt / nouns.txt "
                        "(and optional irregular_plurals.txt)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--dry-run", action="store_true",
                   help="print the generation plan without touching rasters")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rewrite", help="rewrite captions for a novel object")
    _add_common(p)
    p.add_argument("--caption", help="single caption text")
    p.add_argument("--candidate", required=True)
    p.add_argument("--novel-class", required=True)
    p.add_argument("--infile", help="JSONL batch input")
    p.add_argument("--out", help="JSONL batch output")
    p.add_argument("--adjective-radius", type=int, default=DEFAULTS.adjective_radius)
    p.add_argument("--noun-radius", type=int, default=DEFAULTS.noun_radius)
    p.add_argument("--rewrite-lexicon-dir",
                   help="directory with colors.txt / adjectives.txt / nouns.txt "
                        "(and optional irregular_plurals.txt)")
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("decode", help="decode captions with a saved checkpoint")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--labels", required=True, help="detection labels JSONL")
    p.add_argument("--method", choices=["bs", "cbs"], default="bs")
    p.add_argument("--beam-size", type=int, default=5)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--max-constraints", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("pseudolabel", help="run the three-step training pipeline")
    _add_common(p)
    p.add_argument("--annotations")
    p.add_argument("--captions")
    p.add_argument("--val-annotations")
    p.add_argument("--val-captions")
    p.add_argument("--detection-labels")
    p.add_argument("--synth-manifest")
    p.add_argument("--verdict-log")
    p.add_argument("--rounds", type=int)
    p.add_argument("--mode", choices=[pipeline.MODE_BS_AND_CBS, pipeline.MODE_CBS_ONLY])
    p.add_argument("--schedule", choices=sorted(SCHEDULES))
    p.add_argument("--seed", type=int)
    p.add_argument("--beam-size", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--max-constraints", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--smoothing-k", type=float)
    p.add_argument("--tag-mixture-weight", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("eval", help="compute CIDEr-D / F1 / combined scores")
    _add_common(p)
    p.add_argument("--pred", required=True, help="JSONL {image_id, tokens}")
    p.add_argument("--refs", required=True, help="JSONL {image_id, refs: [tokens, ...]}")
    p.add_argument("--split", help="split manifest for out-of-domain flags")
    p.add_argument("--betas", default="1,1.5")
    p.add_argument("--cider-corpus", action="store_true",
                   help="report corpus-mean out-of-domain CIDEr instead of class macro")
    p.add_argument("--extras", help="JSON with externally computed metrics to echo")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("review-serve", help="serve the synthetic-pair review API/UI")
    p.add_argument("--manifest", required=True)
    p.add_argument("--verdict-log", required=True)
    p.add_argument("--frontend", help="static UI bundle directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_review_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr)
    try:
        return args.func(args)
    except NovelcapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        logger.exception("unexpected failure")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
