"""Synthetic image-caption pair generation by bounding-box replacement.

Crops of held-out objects (from partially paired images) are pasted over
compatible candidate-object boxes in fully paired images.  Compatibility is
purely geometric: both boxes large enough, similar areas, sane and similar
aspect ratios.  Boxes that fully contain another annotation are skipped on
both sides so nothing extra sneaks into, or silently vanishes from, the
synthetic scene.

Planning is deterministic given a seed, balances how often each source image
is reused, and caps output per novel class and per novel-candidate class
pair.  Compositing is plain crop / bilinear-resize / paste with no blending.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from PIL import Image

from .dataset import (BBox, CaptionOrigin, CaptionRecord, DatasetSplit, ImageRecord,
                      ObjectInstance, caption_mentions)
from .errors import NovelcapError, RewriteError
from .lexicon import ObjectClass

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairConstraints:
    """Geometric limits for a replacement pair (areas in px^2, diffs in percent)."""

    min_area: float = 1000.0
    max_area_diff_pct: float = 200.0
    min_aspect: float = 0.05
    max_aspect: float = 5.0
    max_aspect_diff_pct: float = 30.0

    def __post_init__(self):
        if min(self.min_area, self.max_area_diff_pct, self.min_aspect,
               self.max_aspect, self.max_aspect_diff_pct) <= 0:
            raise ValueError("all constraint values must be positive")
        if self.min_aspect >= self.max_aspect:
            raise ValueError("min_aspect must be < max_aspect")


def check_geometry(novel_box: BBox, cand_box: BBox, c: PairConstraints) -> bool:
    """True when the two boxes may be swapped under the size/shape constraints.

    All bounds are inclusive: areas of 1000 and 3000 pass a 200% area-diff
    limit exactly.
    """
    a_novel, a_cand = novel_box.area, cand_box.area
    if a_novel < c.min_area or a_cand < c.min_area:
        return False
    if max(a_novel, a_cand) > (1.0 + c.max_area_diff_pct / 100.0) * min(a_novel, a_cand):
        return False
    r_novel, r_cand = novel_box.aspect_ratio, cand_box.aspect_ratio
    if not (c.min_aspect <= r_novel <= c.max_aspect):
        return False
    if not (c.min_aspect <= r_cand <= c.max_aspect):
        return False
    if max(r_novel, r_cand) > (1.0 + c.max_aspect_diff_pct / 100.0) * min(r_novel, r_cand):
        return False
    return True


def exclude_containing(instance: ObjectInstance,
                       all_instances_in_image: Sequence[ObjectInstance]) -> bool:
    """True when the instance box strictly contains another annotation's box.

    Equality of boxes is not containment (duplicate annotations stay usable).
    """
    a = instance.bbox
    for other in all_instances_in_image:
        if other.instance_id == instance.instance_id:
            continue
        b = other.bbox
        inside = (a.x <= b.x and a.y <= b.y and a.x2 >= b.x2 and a.y2 >= b.y2)
        strict = (a.x < b.x or a.y < b.y or a.x2 > b.x2 or a.y2 > b.y2)
        if inside and strict:
            return True
    return False


@dataclass(frozen=True)
class ReplacementPair:
    """One compatible (novel instance, candidate instance) pairing."""

    novel_image_id: int
    novel_instance_id: int
    novel_box: BBox
    cand_image_id: int
    cand_instance_id: int
    cand_box: BBox
    novel_class_name: str
    candidate_class_name: str


def enumerate_replacement_pairs(
    images: Iterable[ImageRecord],
    split: DatasetSplit,
    novel_class: ObjectClass,
    candidate_class: ObjectClass,
    constraints: PairConstraints = PairConstraints(),
) -> list[ReplacementPair]:
    """All geometry-compatible pairs of (novel instance in a partially paired
    image) x (candidate instance in a fully paired image)."""
    novel_instances = []
    cand_instances = []
    for img in images:
        if img.image_id in split.partially_paired:
            for inst in img.instances_of(novel_class):
                if not exclude_containing(inst, img.objects):
                    novel_instances.append((img.image_id, inst))
        elif img.image_id in split.fully_paired:
            for inst in img.instances_of(candidate_class):
                if not exclude_containing(inst, img.objects):
                    cand_instances.append((img.image_id, inst))
    pairs = []
    for novel_image_id, novel_inst in novel_instances:
        for cand_image_id, cand_inst in cand_instances:
            if check_geometry(novel_inst.bbox, cand_inst.bbox, constraints):
                pairs.append(ReplacementPair(
                    novel_image_id=novel_image_id,
                    novel_instance_id=novel_inst.instance_id,
                    novel_box=novel_inst.bbox,
                    cand_image_id=cand_image_id,
                    cand_instance_id=cand_inst.instance_id,
                    cand_box=cand_inst.bbox,
                    novel_class_name=novel_class.name,
                    candidate_class_name=candidate_class.name,
                ))
    pairs.sort(key=lambda p: (p.candidate_class_name, p.cand_image_id,
                              p.cand_instance_id, p.novel_image_id, p.novel_instance_id))
    return pairs


@dataclass(frozen=True)
class Assignment:
    """One planned synthetic image: every replacement applies to the same target."""

    target_image_id: int
    novel_class_name: str
    candidate_class_name: str
    replacements: tuple[ReplacementPair, ...]


@dataclass
class GenerationPlan:
    novel_class_name: str
    max_images: int
    num_candidate_classes: int
    per_pair_quota: int
    seed: int
    assignments: list[Assignment] = field(default_factory=list)
    usage_counts: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "novel_class": self.novel_class_name,
            "max_images": self.max_images,
            "num_candidate_classes": self.num_candidate_classes,
            "per_pair_quota": self.per_pair_quota,
            "seed": self.seed,
            "assignments": [
                {
                    "target_image_id": a.target_image_id,
                    "candidate_class": a.candidate_class_name,
                    "replacements": [
                        {
                            "novel_image_id": r.novel_image_id,
                            "novel_instance_id": r.novel_instance_id,
                            "cand_instance_id": r.cand_instance_id,
                        }
                        for r in a.replacements
                    ],
                }
                for a in self.assignments
            ],
            "usage_counts": {str(k): v for k, v in sorted(self.usage_counts.items())},
        }


def plan_generation(
    pairs: Sequence[ReplacementPair],
    max_images: int,
    num_candidates: int,
    seed: int = 0,
) -> GenerationPlan:
    """Plan synthetic images for one novel class from its compatible pairs.

    Each target image yields at most one synthetic image per candidate class,
    with every compatible candidate instance in it replaced.  Source (novel)
    instances are drawn lowest-usage-first so novel crops spread across many
    backgrounds; ties fall to a seeded shuffle.
    """
    if max_images < num_candidates or num_candidates < 1:
        raise ValueError("need max_images >= num_candidates >= 1")
    quota = math.ceil(max_images / num_candidates)
    novel_class_name = pairs[0].novel_class_name if pairs else ""
    plan = GenerationPlan(
        novel_class_name=novel_class_name,
        max_images=max_images,
        num_candidate_classes=num_candidates,
        per_pair_quota=quota,
        seed=seed,
    )

    rng = random.Random(seed)
    # Seeded priority for tie-breaking among equally-used novel instances.
    novel_keys = sorted({(p.novel_image_id, p.novel_instance_id) for p in pairs})
    rng.shuffle(novel_keys)
    priority = {key: i for i, key in enumerate(novel_keys)}
    usage: dict[int, int] = {}

    by_candidate_class: dict[str, list[ReplacementPair]] = {}
    for p in pairs:
        by_candidate_class.setdefault(p.candidate_class_name, []).append(p)

    total = 0
    for cand_class in sorted(by_candidate_class):
        group = by_candidate_class[cand_class]
        by_target: dict[int, dict[int, list[ReplacementPair]]] = {}
        for p in group:
            by_target.setdefault(p.cand_image_id, {}).setdefault(
                p.cand_instance_id, []).append(p)
        targets = sorted(by_target)
        rng.shuffle(targets)
        emitted = 0
        for target in targets:
            if emitted >= quota or total >= max_images:
                break
            replacements = []
            for cand_instance_id in sorted(by_target[target]):
                options = by_target[target][cand_instance_id]
                chosen = min(options, key=lambda p: (
                    usage.get(p.novel_image_id, 0),
                    priority[(p.novel_image_id, p.novel_instance_id)],
                ))
                usage[chosen.novel_image_id] = usage.get(chosen.novel_image_id, 0) + 1
                replacements.append(chosen)
            plan.assignments.append(Assignment(
                target_image_id=target,
                novel_class_name=plan.novel_class_name,
                candidate_class_name=cand_class,
                replacements=tuple(replacements),
            ))
            emitted += 1
            total += 1
        if emitted < quota:
            logger.info("pair %s->%s: only %d of %d planned images have eligible targets",
                        plan.novel_class_name, cand_class, emitted, quota)
    plan.usage_counts = usage
    return plan


class Verdict(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass
class SyntheticPairRecord:
    """One generated image-caption pair plus full provenance and review verdict."""

    synth_id: str
    image_id: int
    image_path: str
    caption: CaptionRecord
    source_caption_id: int
    target_image_id: int
    target_image_path: str
    novel_class_name: str
    candidate_class_name: str
    replacements: tuple[dict, ...]
    verdict: Verdict = Verdict.PENDING

    def to_json(self) -> dict:
        return {
            "synth_id": self.synth_id,
            "image_id": self.image_id,
            "image_path": self.image_path,
            "caption_tokens": list(self.caption.tokens),
            "source_caption_id": self.source_caption_id,
            "target_image_id": self.target_image_id,
            "target_image_path": self.target_image_path,
            "novel_class": self.novel_class_name,
            "candidate_class": self.candidate_class_name,
            "replacements": list(self.replacements),
            "verdict": self.verdict.value,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SyntheticPairRecord":
        return cls(
            synth_id=payload["synth_id"],
            image_id=payload["image_id"],
            image_path=payload["image_path"],
            caption=CaptionRecord(
                caption_id=payload["image_id"],
                image_id=payload["image_id"],
                tokens=tuple(payload["caption_tokens"]),
                origin=CaptionOrigin.SYNTHETIC,
            ),
            source_caption_id=payload["source_caption_id"],
            target_image_id=payload["target_image_id"],
            target_image_path=payload["target_image_path"],
            novel_class_name=payload["novel_class"],
            candidate_class_name=payload["candidate_class"],
            replacements=tuple(payload["replacements"]),
            verdict=Verdict(payload["verdict"]),
        )


def synth_id_for(assignment: Assignment) -> str:
    """Stable 16-hex id derived from the target image and ordered replacements."""
    payload = [assignment.target_image_id, assignment.candidate_class_name]
    for r in assignment.replacements:
        payload.append([r.novel_image_id, r.novel_instance_id,
                        r.cand_image_id, r.cand_instance_id])
    digest = hashlib.sha256(json.dumps(payload).encode("utf-8")).hexdigest()
    return digest[:16]


def _open_raster(path: Path) -> Image.Image:
    try:
        return Image.open(path).convert("RGB")
    except FileNotFoundError:
        raise NovelcapError(f"raster not found: {path}")
    except OSError as e:
        raise NovelcapError(f"unreadable raster {path}: {e}") from e


def _int_box(box: BBox) -> tuple[int, int, int, int]:
    x, y = int(round(box.x)), int(round(box.y))
    w = max(1, int(round(box.w)))
    h = max(1, int(round(box.h)))
    return x, y, w, h


def composite(
    target_path: Path,
    replacements: Sequence[ReplacementPair],
    source_paths: Mapping[int, Path],
) -> Image.Image:
    """Paste each novel crop (bilinear-resized) over its candidate box.

    Pixels outside the candidate boxes are untouched; zero replacements
    return the target unchanged.
    """
    img = _open_raster(target_path)
    for rep in replacements:
        src = _open_raster(source_paths[rep.novel_image_id])
        nx, ny, nw, nh = _int_box(rep.novel_box)
        crop = src.crop((nx, ny, nx + nw, ny + nh))
        cx, cy, cw, ch = _int_box(rep.cand_box)
        crop = crop.resize((cw, ch), Image.BILINEAR)
        img.paste(crop, (cx, cy))
    return img


def generate_batch(
    plan: GenerationPlan,
    images_by_id: Mapping[int, ImageRecord],
    captions_by_image_id: Mapping[int, Sequence[CaptionRecord]],
    novel_class: ObjectClass,
    candidate_classes: Mapping[str, ObjectClass],
    rewrite_fn: Callable[[Sequence[str], ObjectClass, ObjectClass], Sequence[str]],
    out_dir: Path,
    write_images: bool = True,
    map_fn: Callable = map,
) -> list[SyntheticPairRecord]:
    """Render the plan: composite rasters, rewrite captions, emit records.

    Assignments whose target captions never mention the candidate class (so
    the rewrite cannot anchor) are dropped and logged.  Output is in plan
    order and fully deterministic.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    if write_images:
        image_dir.mkdir(parents=True, exist_ok=True)

    prepared = []
    for assignment in plan.assignments:
        target = images_by_id[assignment.target_image_id]
        cand_class = candidate_classes[assignment.candidate_class_name]
        source_caption = None
        rewritten = None
        for cap in sorted(captions_by_image_id.get(target.image_id, ()),
                          key=lambda c: c.caption_id):
            if not caption_mentions(cap, cand_class):
                continue
            try:
                rewritten = rewrite_fn(cap.tokens, cand_class, novel_class)
            except RewriteError as e:
                logger.warning("rewrite failed for caption %d: %s", cap.caption_id, e)
                continue
            source_caption = cap
            break
        if source_caption is None:
            logger.info("dropping assignment for image %d: no caption anchors %r",
                        target.image_id, cand_class.name)
            continue
        prepared.append((assignment, target, source_caption, tuple(rewritten)))

    def render(item) -> SyntheticPairRecord:
        assignment, target, source_caption, tokens = item
        synth_id = synth_id_for(assignment)
        image_path = image_dir / f"{synth_id}.png"
        if write_images:
            source_paths = {
                r.novel_image_id: images_by_id[r.novel_image_id].file_path
                for r in assignment.replacements
            }
            raster = composite(target.file_path, assignment.replacements, source_paths)
            try:
                raster.save(image_path, format="PNG")
            except OSError as e:
                raise NovelcapError(f"cannot write raster {image_path}: {e}") from e
        synthetic_image_id = int(synth_id[:12], 16)
        return SyntheticPairRecord(
            synth_id=synth_id,
            image_id=synthetic_image_id,
            image_path=str(image_path),
            caption=CaptionRecord(
                caption_id=synthetic_image_id,
                image_id=synthetic_image_id,
                tokens=tokens,
                origin=CaptionOrigin.SYNTHETIC,
            ),
            source_caption_id=source_caption.caption_id,
            target_image_id=target.image_id,
            target_image_path=str(target.file_path),
            novel_class_name=assignment.novel_class_name,
            candidate_class_name=assignment.candidate_class_name,
            replacements=tuple(
                {
                    "novel_image_id": r.novel_image_id,
                    "novel_instance_id": r.novel_instance_id,
                    "novel_image_path": str(images_by_id[r.novel_image_id].file_path),
                    "novel_box": [r.novel_box.x, r.novel_box.y, r.novel_box.w, r.novel_box.h],
                    "cand_instance_id": r.cand_instance_id,
                    "cand_box": [r.cand_box.x, r.cand_box.y, r.cand_box.w, r.cand_box.h],
                }
                for r in assignment.replacements
            ),
        )

    return list(map_fn(render, prepared))


def write_manifest(records: Iterable[SyntheticPairRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[SyntheticPairRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(SyntheticPairRecord.from_json(json.loads(line)))
    return records
