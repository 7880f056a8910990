"""COCO-style ingestion, the held-out split, and mention detection.

Loads images / bounding boxes / captions from COCO JSON, builds the training
split in which images whose captions mention a held-out class keep only their
object labels (partially paired) while everything else keeps its captions
(fully paired), and flags evaluation images as out-of-domain when any
reference caption mentions a held-out class.

All records are immutable after loading and safe to share across threads.
"""
from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CocoParseError, IntegrityError
from .lexicon import ObjectClass, ObjectLexicon

logger = logging.getLogger(__name__)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


class CaptionOrigin(str, Enum):
    HUMAN = "human"
    SYNTHETIC = "synthetic"
    PSEUDO_BS = "pseudo_bs"
    PSEUDO_CBS = "pseudo_cbs"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, top-left corner plus size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def aspect_ratio(self) -> float:
        return self.w / self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def clipped(self, width: float, height: float) -> "BBox | None":
        """Box intersected with image bounds; None if nothing is left."""
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x + self.w, 0.0), width)
        y2 = min(max(self.y + self.h, 0.0), height)
        if x2 - x1 <= 0 or y2 - y1 <= 0:
            return None
        return BBox(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class ObjectInstance:
    instance_id: int
    object_class: ObjectClass
    bbox: BBox


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_path: Path
    width: int
    height: int
    objects: tuple[ObjectInstance, ...] = ()

    def instances_of(self, object_class: ObjectClass) -> list[ObjectInstance]:
        return [o for o in self.objects if o.object_class.name == object_class.name]


@dataclass(frozen=True)
class CaptionRecord:
    caption_id: int
    image_id: int
    tokens: tuple[str, ...]
    origin: CaptionOrigin = CaptionOrigin.HUMAN

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"caption {self.caption_id} has no tokens")

    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class DatasetSplit:
    """Image-id partition: training (fully vs partially paired) plus eval sets."""

    fully_paired: set[int] = field(default_factory=set)
    partially_paired: set[int] = field(default_factory=set)
    val: set[int] = field(default_factory=set)
    test: set[int] = field(default_factory=set)
    out_of_domain_flags: dict[int, bool] = field(default_factory=dict)


def caption_mentions(caption: CaptionRecord | Sequence[str], object_class: ObjectClass) -> bool:
    """True when any mention word of the class occurs as a contiguous token run."""
    tokens = caption.tokens if isinstance(caption, CaptionRecord) else tuple(caption)
    tokens = tuple(t.lower() for t in tokens)
    return len(find_mention_spans(tokens, object_class)) > 0


def find_mention_spans(tokens: Sequence[str], object_class: ObjectClass) -> list[tuple[int, int, str]]:
    """Non-overlapping ``(start, end_exclusive, matched_form)`` spans, leftmost-longest."""
    forms = object_class.mention_forms()
    spans = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = None
        for form in forms:  # longest form first
            j = i + len(form)
            if j <= n and tuple(tokens[i:j]) == form:
                matched = (i, j, " ".join(form))
                break
        if matched:
            spans.append(matched)
            i = matched[1]
        else:
            i += 1
    return spans


def _load_json(path: str | Path) -> dict:
    try:
        with open(path, "rb") as f:
            raw = f.read()
        return json.loads(raw)
    except FileNotFoundError:
        raise CocoParseError("file not found", path=path)
    except json.JSONDecodeError as e:
        raise CocoParseError(f"malformed JSON: {e.msg}", path=path, offset=e.pos) from e


def load_coco(
    annotation_file: str | Path,
    caption_file: str | Path,
    lexicon: ObjectLexicon | None = None,
    images_root: str | Path | None = None,
) -> tuple[list[ImageRecord], list[CaptionRecord]]:
    """Load COCO instance annotations plus the separate captions file.

    Boxes are clipped to image bounds (fully out-of-bounds boxes are dropped
    with a warning), captions are tokenized, and every annotation must
    resolve to a known image id.
    """
    lexicon = lexicon if lexicon is not None else ObjectLexicon()
    ann = _load_json(annotation_file)
    cap = _load_json(caption_file)

    category_names: dict[int, str] = {}
    for c in ann.get("categories", []):
        category_names[c["id"]] = c["name"].strip().lower()

    sizes: dict[int, tuple[int, int]] = {}
    images_meta: dict[int, dict] = {}
    for img in ann.get("images", []):
        if img["id"] in images_meta:
            raise IntegrityError(f"duplicate image_id {img['id']}")
        images_meta[img["id"]] = img
        if img["width"] <= 0 or img["height"] <= 0:
            raise IntegrityError(f"image {img['id']} has non-positive size")
        sizes[img["id"]] = (img["width"], img["height"])

    # Count annotations per category so loaded classes know whether boxes exist.
    ann_counts: dict[int, int] = {}
    for a in ann.get("annotations", []):
        ann_counts[a["category_id"]] = ann_counts.get(a["category_id"], 0) + 1
    for cat_id, name in category_names.items():
        lexicon.ensure(name, class_id=cat_id,
                       has_bbox_annotations=ann_counts.get(cat_id, 0) > 0)

    objects: dict[int, list[ObjectInstance]] = {i: [] for i in images_meta}
    for a in ann.get("annotations", []):
        image_id = a["image_id"]
        if image_id not in images_meta:
            raise IntegrityError(
                f"annotation {a.get('id')} references unknown image_id {image_id}")
        name = category_names.get(a["category_id"])
        if name is None:
            raise IntegrityError(
                f"annotation {a.get('id')} references unknown category_id {a['category_id']}")
        x, y, w, h = a["bbox"]
        width, height = sizes[image_id]
        try:
            box = BBox(x, y, w, h).clipped(width, height)
        except ValueError:
            box = None
        if box is None:
            logger.warning("dropping degenerate box for annotation %s on image %s",
                           a.get("id"), image_id)
            continue
        objects[image_id].append(
            ObjectInstance(instance_id=a["id"], object_class=lexicon.get(name), bbox=box))

    images = []
    root = Path(images_root) if images_root is not None else None
    for image_id in sorted(images_meta):
        meta = images_meta[image_id]
        file_path = Path(meta.get("file_name", f"{image_id}.png"))
        if root is not None:
            file_path = root / file_path
        images.append(ImageRecord(
            image_id=image_id,
            file_path=file_path,
            width=meta["width"],
            height=meta["height"],
            objects=tuple(sorted(objects[image_id], key=lambda o: o.instance_id)),
        ))

    captions = []
    for a in cap.get("annotations", []):
        if a["image_id"] not in images_meta:
            raise IntegrityError(
                f"caption {a.get('id')} references unknown image_id {a['image_id']}")
        tokens = tuple(tokenize(a["caption"]))
        if not tokens:
            logger.warning("skipping empty caption %s", a.get("id"))
            continue
        captions.append(CaptionRecord(
            caption_id=a["id"], image_id=a["image_id"], tokens=tokens,
            origin=CaptionOrigin.HUMAN))
    captions.sort(key=lambda c: c.caption_id)
    return images, captions


def captions_by_image(captions: Iterable[CaptionRecord]) -> dict[int, list[CaptionRecord]]:
    grouped: dict[int, list[CaptionRecord]] = {}
    for c in captions:
        grouped.setdefault(c.image_id, []).append(c)
    return grouped


def build_heldout_split(
    images: Sequence[ImageRecord],
    captions: Sequence[CaptionRecord],
    novel_classes: Sequence[ObjectClass],
) -> DatasetSplit:
    """Partition training images: any caption mentioning a held-out class moves
    the image (captions withheld, labels kept) to the partially paired side."""
    if not novel_classes:
        raise ValueError("novel_classes must be non-empty")
    grouped = captions_by_image(captions)
    split = DatasetSplit()
    for img in images:
        caps = grouped.get(img.image_id)
        if not caps:
            raise IntegrityError(f"training image {img.image_id} has no captions")
        withheld = any(
            caption_mentions(c, cls) for c in caps for cls in novel_classes)
        if withheld:
            split.partially_paired.add(img.image_id)
        else:
            split.fully_paired.add(img.image_id)
    return split


def training_captions(split: DatasetSplit, captions: Iterable[CaptionRecord]) -> list[CaptionRecord]:
    """Captions usable for fully-paired training (partially paired ones are withheld)."""
    return [c for c in captions if c.image_id in split.fully_paired]


def partition_in_out_domain(
    split: DatasetSplit,
    references: Mapping[int, Sequence[CaptionRecord]] | Sequence[CaptionRecord],
    novel_classes: Sequence[ObjectClass],
) -> dict[int, bool]:
    """Flag val/test images out-of-domain when >=1 reference mentions a held-out class.

    Also stores the flags on ``split``.
    """
    if not isinstance(references, Mapping):
        references = captions_by_image(references)
    flags: dict[int, bool] = {}
    for image_id in sorted(split.val | split.test):
        refs = references.get(image_id)
        if not refs:
            raise IntegrityError(f"evaluation image {image_id} has no references")
        flags[image_id] = any(
            caption_mentions(r, cls) for r in refs for cls in novel_classes)
    split.out_of_domain_flags = flags
    return flags


def load_detection_labels(
    path: str | Path, lexicon: ObjectLexicon,
) -> dict[int, list[tuple[str, float]]]:
    """Load line-delimited ``{image_id, labels: [{name, score}]}`` records.

    Labels come back sorted by descending score with names normalized to
    canonical class names; a record naming an unknown class is skipped with
    a warning.
    """
    result: dict[int, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CocoParseError(f"malformed JSON on line {lineno}: {e.msg}",
                                     path=path, offset=e.pos) from e
            labels = []
            unknown = None
            for entry in rec.get("labels", []):
                cls = lexicon.get(entry["name"])
                if cls is None:
                    unknown = entry["name"]
                    break
                labels.append((cls.name, float(entry["score"])))
            if unknown is not None:
                logger.warning("skipping detection record for image %s: unknown class %r",
                               rec.get("image_id"), unknown)
                continue
            labels.sort(key=lambda t: (-t[1], t[0]))
            result[rec["image_id"]] = labels
    return result


def write_split_manifest(split: DatasetSplit, path: str | Path) -> None:
    """Write one ``{image_id, split, out_of_domain}`` JSON object per line."""
    rows = []
    for image_id in sorted(split.fully_paired):
        rows.append((image_id, "fully"))
    for image_id in sorted(split.partially_paired):
        rows.append((image_id, "partial"))
    for image_id in sorted(split.val):
        rows.append((image_id, "val"))
    for image_id in sorted(split.test):
        rows.append((image_id, "test"))
    rows.sort()
    with open(path, "w", encoding="utf-8") as f:
        for image_id, name in rows:
            f.write(json.dumps({
                "image_id": image_id,
                "split": name,
                "out_of_domain": bool(split.out_of_domain_flags.get(image_id, False)),
            }, sort_keys=True) + "\n")


def read_split_manifest(path: str | Path) -> DatasetSplit:
    split = DatasetSplit()
    buckets = {"fully": split.fully_paired, "partial": split.partially_paired,
               "val": split.val, "test": split.test}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            buckets[rec["split"]].add(rec["image_id"])
            if rec["split"] in ("val", "test"):
                split.out_of_domain_flags[rec["image_id"]] = bool(rec["out_of_domain"])
    return split
